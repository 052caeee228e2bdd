// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "condepth/optim.hpp"

namespace condepth {

/// Named tensors plus a free-form JSON metadata string.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::string metadata_json = "{}";
};

/// File layout: the 8 bytes "CDCKPT1\n", a little-endian uint64 header
/// length, a JSON header listing {name, shape, offset} per tensor plus the
/// metadata, then the raw little-endian float64 payload.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of the entries of `store` selected by `keep`.
Checkpoint snapshot(const ParamStore& store, const std::function<bool(std::string_view)>& keep);

/// Copies every checkpoint tensor whose name exists in `store`. Returns the
/// number of tensors restored; shape mismatches are a ConfigError.
std::size_t restore(ParamStore& store, const Checkpoint& ckpt);

}  // namespace condepth
