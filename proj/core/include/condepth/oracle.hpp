// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "condepth/backbone.hpp"

namespace condepth {

/// Trajectory followed before the fork layer.
enum class PrefixPolicy {
  on_policy,    ///< the student's gated activations from the training forward
  forced_full,  ///< every earlier controlled layer executes full
};

std::string_view to_string(PrefixPolicy policy);
PrefixPolicy parse_prefix_policy(std::string_view name);

struct OracleConfig {
  std::size_t window = 8;       ///< W
  double decay = 0.5;           ///< gamma
  std::size_t warmup = 100;     ///< steps without labels
  std::size_t interval = 5;     ///< refresh period after warmup
  std::size_t rank_pairs = 256; ///< sampled pairs per controlled layer per refresh
  double huber_delta = 1.0;
  PrefixPolicy prefix = PrefixPolicy::on_policy;

  void validate() const;
};

/// sum_{delta < W, t + delta < ce.size()} gamma^delta * ce[t + delta]
double windowed_ce(std::span<const double> ce, std::size_t t, std::size_t window, double decay);

/// True for step > warmup with (step - warmup) divisible by interval.
bool labels_due(std::size_t step, const OracleConfig& config);

/// Work done by one label computation, in controlled-layer FFN units summed
/// over tokens (full = 1, cheap = r/d_ff).
struct OracleWork {
  std::size_t suffix_passes = 0;  ///< forward passes run from a fork or the embedding
  double ffn_units = 0.0;
};

struct UtilityLabels {
  bool active = false;
  /// [C, B*T]: windowed CE of the cheap fork minus that of the full fork.
  Tensor u_star;
  Tensor wce_full;
  Tensor wce_cheap;
  /// [B*T]: 1 where a label exists (every position except the last of each sequence).
  Tensor valid;
  OracleWork work;
};

/// Counterfactual labels for every controlled layer.
///
/// `training` is the gated forward of the same tokens; with the on-policy
/// prefix its post-attention activations seed the forks. With the forced-full
/// prefix one all-full pass provides the full-fork windowed CE for every layer
/// and the post-attention activations for the cheap forks. Nothing here
/// records gradients.
UtilityLabels compute_labels(const Backbone& model, std::span<const int> tokens, const ForwardResult& training,
                             const OracleConfig& config);

/// Reference construction: 2C independent passes from the embedding, each
/// rebuilding its own prefix (gated through `controller` for the on-policy
/// prefix). Bit-identical to compute_labels; used by tests.
UtilityLabels compute_labels_naive(const Backbone& model, std::span<const int> tokens, const Controller* controller,
                                   const GateConfig& gate, const OracleConfig& config);

/// Mean Huber(u, u*) over controlled layers and labeled positions. `scores`
/// holds one [B*T] score vector per controlled layer.
Var huber_util_loss(std::span<const Var> scores, const UtilityLabels& labels, double delta);

/// Sampled pairwise rank loss: mean of softplus(-sign(u*_i - u*_j) (u_i - u_j))
/// over pairs drawn uniformly within one sequence and one layer. Pairs with
/// equal labels are skipped; zero valid pairs gives 0.
Var pairwise_rank_loss(std::span<const Var> scores, const UtilityLabels& labels, std::size_t seq_len,
                       std::size_t n_pairs, Rng& rng);

}  // namespace condepth
