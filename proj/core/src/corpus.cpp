// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "condepth/error.hpp"

namespace condepth {

namespace {

std::vector<std::string> split_documents(const std::string& text) {
  std::vector<std::string> docs;
  std::string current;
  std::istringstream in(text);
  std::string line;
  auto flush = [&] {
    if (!current.empty()) docs.push_back(std::move(current));
    current.clear();
  };
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      flush();
      continue;
    }
    current += line;
    current += '\n';
  }
  flush();
  return docs;
}

}  // namespace

Corpus Corpus::load(const CorpusSpec& spec) {
  std::ifstream in(spec.path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus '" + spec.path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), spec.val_fraction, spec.split_seed);
}

Corpus Corpus::from_text(const std::string& text, double val_fraction, std::uint64_t split_seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  std::vector<std::string> docs = split_documents(text);
  if (docs.size() < 2) throw InputError("corpus needs at least two documents separated by a blank line");
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  std::size_t total = 0;
  for (const auto& d : docs) total += d.size();
  const auto val_target = static_cast<std::size_t>(val_fraction * static_cast<double>(total));
  Corpus c;
  c.n_docs_ = docs.size();
  std::size_t val_bytes = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t id = order[i];
    // At least one document lands on each side.
    const bool to_val = i + 1 < order.size() && (c.n_val_docs_ == 0 || val_bytes < val_target);
    auto& dst = to_val ? c.val_ : c.train_;
    auto& doc_ids = to_val ? c.val_doc_ : c.train_doc_;
    for (unsigned char ch : docs[id]) {
      dst.push_back(static_cast<int>(ch));
      doc_ids.push_back(static_cast<std::uint32_t>(id));
    }
    if (to_val) {
      val_bytes += docs[id].size();
      ++c.n_val_docs_;
    }
  }
  return c;
}

BatchStream::BatchStream(const std::vector<int>& stream, std::size_t seq_len, std::size_t batch, std::uint64_t seed)
    : stream_(&stream), seq_len_(seq_len), batch_(batch), rng_(seed) {
  if (seq_len == 0 || batch == 0) throw ConfigError("BatchStream: seq_len and batch must be positive");
  if (stream.size() < seq_len)
    throw InputError("token stream of " + std::to_string(stream.size()) + " bytes is shorter than one window of " +
                     std::to_string(seq_len));
  for (std::size_t s = 0; s + seq_len <= stream.size(); s += seq_len) starts_.push_back(s);
  reshuffle();
}

void BatchStream::reshuffle() {
  for (std::size_t i = starts_.size(); i > 1; --i) std::swap(starts_[i - 1], starts_[rng_.index(i)]);
  cursor_ = 0;
}

std::vector<int> BatchStream::next() {
  std::vector<int> out;
  out.reserve(batch_ * seq_len_);
  for (std::size_t b = 0; b < batch_; ++b) {
    if (cursor_ == starts_.size()) reshuffle();
    const std::size_t s = starts_[cursor_++];
    out.insert(out.end(), stream_->begin() + static_cast<std::ptrdiff_t>(s),
               stream_->begin() + static_cast<std::ptrdiff_t>(s + seq_len_));
  }
  return out;
}

std::vector<std::vector<int>> fixed_batches(const std::vector<int>& stream, std::size_t seq_len, std::size_t batch,
                                            std::size_t count) {
  const std::size_t windows = stream.size() / seq_len;
  if (windows < batch) throw InputError("validation stream holds fewer windows than one batch");
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < count && (i + 1) * batch <= windows; ++i) {
    auto first = stream.begin() + static_cast<std::ptrdiff_t>(i * batch * seq_len);
    out.emplace_back(first, first + static_cast<std::ptrdiff_t>(batch * seq_len));
  }
  return out;
}

}  // namespace condepth
