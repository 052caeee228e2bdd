// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "condepth/rng.hpp"

namespace condepth {

struct CorpusSpec {
  std::string path;
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;  ///< document split; independent of the run seed
};

/// Byte-level corpus split into train and validation by document. Documents
/// are separated by blank lines; whole documents are assigned to one side.
class Corpus {
 public:
  static Corpus load(const CorpusSpec& spec);
  static Corpus from_text(const std::string& text, double val_fraction, std::uint64_t split_seed);

  const std::vector<int>& train() const { return train_; }
  const std::vector<int>& val() const { return val_; }
  std::size_t document_count() const { return n_docs_; }
  std::size_t val_document_count() const { return n_val_docs_; }
  /// Document index per train/val token, for split checks.
  const std::vector<std::uint32_t>& train_doc() const { return train_doc_; }
  const std::vector<std::uint32_t>& val_doc() const { return val_doc_; }

 private:
  std::vector<int> train_, val_;
  std::vector<std::uint32_t> train_doc_, val_doc_;
  std::size_t n_docs_ = 0, n_val_docs_ = 0;
};

/// Yields [batch, seq_len] token windows. Windows are non-overlapping slices
/// of the stream visited in a seeded order that is reshuffled each epoch.
class BatchStream {
 public:
  BatchStream(const std::vector<int>& stream, std::size_t seq_len, std::size_t batch, std::uint64_t seed);

  /// Flat [batch * seq_len] tokens.
  std::vector<int> next();
  std::size_t window_count() const { return starts_.size(); }
  std::size_t batch() const { return batch_; }

 private:
  void reshuffle();

  const std::vector<int>* stream_;
  std::size_t seq_len_, batch_;
  std::vector<std::size_t> starts_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

/// The first `count` batches of consecutive windows, unshuffled.
std::vector<std::vector<int>> fixed_batches(const std::vector<int>& stream, std::size_t seq_len, std::size_t batch,
                                            std::size_t count);

}  // namespace condepth
