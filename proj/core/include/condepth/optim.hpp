// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "condepth/tensor.hpp"

namespace condepth {

using ParamId = std::size_t;
struct OptimConfig;

/// Named parameter tensors with a trainable/frozen partition.
///
/// Parameters are registered first; `set_partition` then fixes which of them
/// are trainable. The partition cannot change afterwards, and only trainable
/// entries carry AdamW moments.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor value);

  /// Fix the partition. Throws UsageError when called twice.
  void set_partition(const std::function<bool(std::string_view)>& is_trainable);
  bool partitioned() const { return partitioned_; }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  const Tensor& value(ParamId id) const { return entries_.at(id).value; }
  /// Mutable access for initialization and checkpoint loading.
  Tensor& mutable_value(ParamId id) { return entries_.at(id).value; }
  bool trainable(ParamId id) const { return entries_.at(id).trainable; }

  std::optional<ParamId> find(std::string_view name) const;
  ParamId at(std::string_view name) const;

  std::vector<std::string> trainable_names() const;
  std::size_t trainable_scalar_count() const;
  std::size_t scalar_count() const;

  /// FNV-1a over names and raw bytes of every frozen entry.
  std::uint64_t frozen_hash() const;
  /// FNV-1a over one entry.
  std::uint64_t hash(ParamId id) const;

 private:
  friend void adamw_step(ParamStore&, const std::vector<Tensor>&, std::size_t, const OptimConfig&);

  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = false;
    Tensor m;
    Tensor v;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, ParamId> index_;
  bool partitioned_ = false;
};

/// Gradients indexed by ParamId; an empty tensor means "no gradient".
using Gradients = std::vector<Tensor>;

struct OptimConfig {
  double lr = 2e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  std::size_t warmup_steps = 1000;
  std::size_t total_steps = 20000;
  double final_lr_fraction = 0.01;

  void validate() const;
};

/// Linear warmup from 0 to lr over warmup_steps, then cosine decay to
/// lr * final_lr_fraction at total_steps.
double lr_at(std::size_t step, const OptimConfig& config);

/// Scales every gradient by clip_norm / g when the global L2 norm g exceeds
/// clip_norm. Returns the pre-clip norm.
double clip_global_norm(Gradients& grads, double clip_norm);

/// One AdamW update at `step` (1-based) with decoupled weight decay. Frozen
/// entries are never touched; a non-empty gradient for one is an
/// InternalError.
void adamw_step(ParamStore& store, const Gradients& grads, std::size_t step, const OptimConfig& config);

}  // namespace condepth
