// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "condepth/tape.hpp"

namespace condepth {

struct GateConfig {
  double budget = 0.5;       ///< rho: fraction of tokens per layer executing full.
  double temperature = 2.0;  ///< tau in p = sigmoid(u / tau).
  double min_alive = 0.05;   ///< p_min for the alive loss.

  void validate() const;
};

/// k = ceil(rho * T), robust to representation error in rho * T.
std::size_t topk_count(std::size_t seq_len, double budget);

/// Exact top-k over one sequence of scores. Ties are broken by the lower
/// index; the result has exactly `k` ones.
std::vector<double> topk_mask(std::span<const double> scores, std::size_t k);

/// Top-k applied independently to each length-seq_len block of `scores`.
std::vector<double> topk_mask_batched(std::span<const double> scores, std::size_t seq_len, std::size_t k);

double soft_gate(double u, double temperature);
Var soft_gate(Var u, double temperature);

/// m_st with forward value m_hard and the adjoint of p.
Var straight_through_mask(const Tensor& m_hard, Var p);

struct GateDecision {
  Var p;
  Var m_st;
  Tensor m_hard;
  std::size_t k = 0;
};

/// Soft probabilities, per-sequence hard top-k, and the straight-through mask
/// for scores u of shape [B * seq_len].
GateDecision decide(Var u, std::size_t seq_len, const GateConfig& config);

/// (1/C) sum_l (pbar_l - rho)^2 over scalar per-layer mean probabilities.
Var budget_loss(std::span<const Var> mean_probs, double budget);
/// (1/C) sum_l relu(p_min - pbar_l).
Var alive_loss(std::span<const Var> mean_probs, double min_alive);

}  // namespace condepth
