// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "condepth/error.hpp"

namespace condepth {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'D', 'C', 'K', 'P', 'T', '1', '\n'};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "condepth-checkpoint";
  header["dtype"] = "float64";
  header["metadata"] = nlohmann::json::parse(ckpt.metadata_json);
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  header["tensors"] = entries;
  const std::string text = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint '" + tmp + "'");
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.tensors)
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw InputError("short write to checkpoint '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw InputError("cannot move checkpoint into '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw InputError("'" + path + "' is not a checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 30)) throw InputError("corrupt checkpoint header in '" + path + "'");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw InputError("truncated checkpoint header in '" + path + "'");
  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint '" + path + "': " + e.what());
  }
  ckpt.metadata_json = header.value("metadata", nlohmann::json::object()).dump();
  for (const auto& e : header.at("tensors")) {
    Tensor t(e.at("shape").get<Shape>());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw InputError("truncated checkpoint payload in '" + path + "'");
    ckpt.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

Checkpoint snapshot(const ParamStore& store, const std::function<bool(std::string_view)>& keep) {
  Checkpoint ckpt;
  for (ParamId id = 0; id < store.size(); ++id)
    if (keep(store.name(id))) ckpt.tensors.emplace(store.name(id), store.value(id));
  return ckpt;
}

std::size_t restore(ParamStore& store, const Checkpoint& ckpt) {
  std::size_t n = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    auto id = store.find(name);
    if (!id) continue;
    if (!store.value(*id).same_shape(t))
      throw ConfigError("checkpoint tensor " + name + " has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(store.value(*id).shape()));
    store.mutable_value(*id) = t;
    ++n;
  }
  return n;
}

}  // namespace condepth
