// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "condepth/backbone.hpp"
#include "condepth/controllers.hpp"
#include "condepth/oracle.hpp"

namespace condepth {

struct CollapseDiag {
  double l2 = 0.0;   ///< mean row-wise |q_full - q_cheap|
  double cos = 0.0;  ///< mean row-wise cosine, denominator floored at 1e-8
};

/// q_full, q_cheap: [N, d_s].
CollapseDiag collapse_diag(const Tensor& q_full, const Tensor& q_cheap);

/// Population variance; needs at least two scores.
double score_variance(std::span<const double> scores);

struct EvalPoint {
  std::size_t step = 0;
  double eval_lm = 0.0;
};

struct LmSummary {
  double best = 0.0;
  double endpoint = 0.0;
  /// (window end step, mean of eval points with step <= end); NaN-free only
  /// when at least one point falls inside the window, absent otherwise.
  std::vector<std::pair<std::size_t, std::optional<double>>> window_means;
  /// (threshold, first step with eval_lm <= threshold).
  std::vector<std::pair<double, std::optional<std::size_t>>> hits;
};

/// Curve must be non-empty and ordered by step.
LmSummary lm_summary(std::span<const EvalPoint> curve, std::span<const double> thresholds,
                     std::span<const std::size_t> window_ends);

/// min + q (max - min) of the curve's eval values for each q.
std::vector<double> thresholds_from_pilot(std::span<const EvalPoint> curve, std::span<const double> quantiles);

double grad_norm_mean(std::span<const double> norms);

/// Trailing mean over up to `window` points (shorter at the start).
std::vector<double> rolling_mean(std::span<const double> values, std::size_t window);

// ---------------------------------------------------------------------------
// Compute proxy. One unit is one full-FFN execution for one token at one
// controlled layer; only matrix-multiply MACs are counted.

struct CostModel {
  double cheap = 0.0;        ///< r / d_ff
  double controller = 0.0;   ///< scoring cost per token per controlled layer
  double target_head = 0.0;  ///< JEPA target projections per token per layer (G3 only)
  std::size_t n_controlled = 0;

  static CostModel make(const ModelConfig& config, GateKind kind);
  /// Same as make() with an explicit MLP gate width (G1 kinds only).
  static CostModel make_mlp(const ModelConfig& config, std::size_t hidden);
};

/// rho full + (1 - rho) cheap + controller; the target head is not used at
/// inference.
double infer_vs_full(const CostModel& cost, double budget);

/// Oracle FFN units per labeled token for one refresh.
double oracle_units_per_token(const CostModel& cost, PrefixPolicy prefix);

struct RecipeCost {
  bool jepa_targets = true;  ///< target projections computed during training
  bool oracle = true;        ///< utility labels constructed
  PrefixPolicy prefix = PrefixPolicy::on_policy;
  std::size_t interval = 5;  ///< refresh period
};

/// Steady-state training compute_vs_full: both branches, controller, target
/// head when used, and the oracle amortized over its refresh period.
double training_vs_full(const CostModel& cost, const RecipeCost& recipe);

// ---------------------------------------------------------------------------
// Seed aggregation.

struct RunSummary {
  std::string experiment;
  std::string config_key;  ///< canonical config without the seed
  std::uint64_t seed = 0;
  std::map<std::string, double> values;
};

struct FieldStats {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation (n - 1); 0 for one run
  std::size_t n = 0;
};

/// Mean and sample std for every field present in all runs. Runs must share
/// experiment and config_key.
std::map<std::string, FieldStats> aggregate_seeds(std::span<const RunSummary> runs);

struct PairedDelta {
  std::vector<std::pair<std::uint64_t, double>> deltas;  ///< (seed, b - a)
  std::size_t negative = 0;
  std::size_t positive = 0;
};

/// Per-seed b[field] - a[field] over seeds present in both groups.
PairedDelta paired_deltas(std::span<const RunSummary> a, std::span<const RunSummary> b, const std::string& field);

}  // namespace condepth
