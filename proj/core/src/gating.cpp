// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "condepth/error.hpp"

namespace condepth {

void GateConfig::validate() const {
  if (!(budget > 0.0 && budget <= 1.0)) throw ConfigError("gate budget must lie in (0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("gate temperature must be positive");
  if (!(min_alive >= 0.0 && min_alive < 1.0)) throw ConfigError("min_alive must lie in [0, 1)");
}

std::size_t topk_count(std::size_t seq_len, double budget) {
  if (seq_len == 0) throw ConfigError("topk_count: empty sequence");
  const double x = budget * static_cast<double>(seq_len);
  const double r = std::round(x);
  const double k = std::abs(x - r) < 1e-9 ? r : std::ceil(x);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, seq_len);
}

std::vector<double> topk_mask(std::span<const double> scores, std::size_t k) {
  if (k > scores.size()) throw ConfigError("topk_mask: k exceeds sequence length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> mask(scores.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1.0;
  return mask;
}

std::vector<double> topk_mask_batched(std::span<const double> scores, std::size_t seq_len, std::size_t k) {
  if (seq_len == 0 || scores.size() % seq_len != 0) throw ConfigError("topk_mask_batched: ragged batch");
  std::vector<double> mask;
  mask.reserve(scores.size());
  for (std::size_t off = 0; off < scores.size(); off += seq_len) {
    auto m = topk_mask(scores.subspan(off, seq_len), k);
    mask.insert(mask.end(), m.begin(), m.end());
  }
  return mask;
}

double soft_gate(double u, double temperature) {
  const double x = u / temperature;
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var soft_gate(Var u, double temperature) { return sigmoid(scale(u, 1.0 / temperature)); }

Var straight_through_mask(const Tensor& m_hard, Var p) { return straight_through(m_hard, p); }

GateDecision decide(Var u, std::size_t seq_len, const GateConfig& config) {
  GateDecision d;
  d.k = topk_count(seq_len, config.budget);
  d.p = soft_gate(u, config.temperature);
  d.m_hard = Tensor(u.shape(), topk_mask_batched(u.value().span(), seq_len, d.k));
  d.m_st = straight_through_mask(d.m_hard, d.p);
  return d;
}

Var budget_loss(std::span<const Var> mean_probs, double budget) {
  if (mean_probs.empty()) throw ConfigError("budget_loss: no controlled layers");
  Var total = square(add_scalar(mean_probs[0], -budget));
  for (std::size_t i = 1; i < mean_probs.size(); ++i) total = add(total, square(add_scalar(mean_probs[i], -budget)));
  return scale(total, 1.0 / static_cast<double>(mean_probs.size()));
}

Var alive_loss(std::span<const Var> mean_probs, double min_alive) {
  if (mean_probs.empty()) throw ConfigError("alive_loss: no controlled layers");
  auto term = [&](Var p) { return relu(add_scalar(scale(p, -1.0), min_alive)); };
  Var total = term(mean_probs[0]);
  for (std::size_t i = 1; i < mean_probs.size(); ++i) total = add(total, term(mean_probs[i]));
  return scale(total, 1.0 / static_cast<double>(mean_probs.size()));
}

}  // namespace condepth
