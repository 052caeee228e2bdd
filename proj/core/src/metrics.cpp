// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "condepth/error.hpp"

namespace condepth {

CollapseDiag collapse_diag(const Tensor& q_full, const Tensor& q_cheap) {
  if (!q_full.same_shape(q_cheap) || q_full.rank() != 2 || q_full.rows() == 0)
    throw ConfigError("collapse_diag: expected two equal non-empty matrices");
  const std::size_t n = q_full.rows(), d = q_full.cols();
  double l2 = 0.0, cs = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double diff = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double a = q_full.at(r, j), b = q_cheap.at(r, j);
      diff += (a - b) * (a - b);
      dot += a * b;
      na += a * a;
      nb += b * b;
    }
    l2 += std::sqrt(diff);
    cs += dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-8);
  }
  return {l2 / static_cast<double>(n), cs / static_cast<double>(n)};
}

double score_variance(std::span<const double> scores) {
  if (scores.size() < 2) throw UsageError("score_variance needs at least two scores");
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  return var / static_cast<double>(scores.size());
}

LmSummary lm_summary(std::span<const EvalPoint> curve, std::span<const double> thresholds,
                     std::span<const std::size_t> window_ends) {
  if (curve.empty()) throw UsageError("lm_summary: empty eval curve");
  LmSummary s;
  s.best = curve[0].eval_lm;
  for (const EvalPoint& p : curve) s.best = std::min(s.best, p.eval_lm);
  s.endpoint = curve.back().eval_lm;
  for (std::size_t end : window_ends) {
    double total = 0.0;
    std::size_t n = 0;
    for (const EvalPoint& p : curve) {
      if (p.step > end) continue;
      total += p.eval_lm;
      ++n;
    }
    s.window_means.emplace_back(end, n ? std::optional<double>(total / static_cast<double>(n)) : std::nullopt);
  }
  for (double th : thresholds) {
    std::optional<std::size_t> hit;
    for (const EvalPoint& p : curve) {
      if (p.eval_lm <= th) {
        hit = p.step;
        break;
      }
    }
    s.hits.emplace_back(th, hit);
  }
  return s;
}

std::vector<double> thresholds_from_pilot(std::span<const EvalPoint> curve, std::span<const double> quantiles) {
  if (curve.empty()) throw UsageError("thresholds_from_pilot: empty eval curve");
  double lo = curve[0].eval_lm, hi = curve[0].eval_lm;
  for (const EvalPoint& p : curve) {
    lo = std::min(lo, p.eval_lm);
    hi = std::max(hi, p.eval_lm);
  }
  std::vector<double> out;
  for (double q : quantiles) out.push_back(lo + q * (hi - lo));
  return out;
}

double grad_norm_mean(std::span<const double> norms) {
  if (norms.empty()) throw UsageError("grad_norm_mean: no steps");
  double total = 0.0;
  for (double n : norms) total += n;
  return total / static_cast<double>(norms.size());
}

std::vector<double> rolling_mean(std::span<const double> values, std::size_t window) {
  if (window == 0) throw ConfigError("rolling_mean: window must be positive");
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

// ---------------------------------------------------------------------------

CostModel CostModel::make(const ModelConfig& config, GateKind kind) {
  switch (kind) {
    case GateKind::g1: return make_mlp(config, config.d_model / 4);
    case GateKind::g1_costmatch: return make_mlp(config, costmatch_hidden(config));
    case GateKind::g3: {
      const double unit = static_cast<double>(full_ffn_macs(config));
      CostModel c;
      c.cheap = config.cheap_cost();
      c.controller = static_cast<double>(jepa_gate_macs(config)) / unit;
      c.target_head = static_cast<double>(jepa_target_macs(config)) / unit;
      c.n_controlled = config.n_controlled;
      return c;
    }
  }
  throw InternalError("CostModel::make: unhandled gate kind");
}

CostModel CostModel::make_mlp(const ModelConfig& config, std::size_t hidden) {
  CostModel c;
  c.cheap = config.cheap_cost();
  c.controller = static_cast<double>(mlp_gate_macs(config, hidden)) / static_cast<double>(full_ffn_macs(config));
  c.n_controlled = config.n_controlled;
  return c;
}

double infer_vs_full(const CostModel& cost, double budget) {
  return budget + (1.0 - budget) * cost.cheap + cost.controller;
}

double oracle_units_per_token(const CostModel& cost, PrefixPolicy prefix) {
  const std::size_t C = cost.n_controlled;
  double units = prefix == PrefixPolicy::forced_full ? static_cast<double>(C) : 0.0;
  for (std::size_t l = 0; l < C; ++l) {
    const double suffix = static_cast<double>(C - 1 - l);
    units += cost.cheap + suffix;
    if (prefix == PrefixPolicy::on_policy) units += 1.0 + suffix;
  }
  return units;
}

double training_vs_full(const CostModel& cost, const RecipeCost& recipe) {
  double per_layer = 1.0 + cost.cheap + cost.controller;
  if (recipe.jepa_targets) per_layer += cost.target_head;
  if (recipe.oracle) {
    if (recipe.interval == 0) throw ConfigError("training_vs_full: refresh interval must be positive");
    per_layer += oracle_units_per_token(cost, recipe.prefix) /
                 (static_cast<double>(cost.n_controlled) * static_cast<double>(recipe.interval));
  }
  return per_layer;
}

// ---------------------------------------------------------------------------

std::map<std::string, FieldStats> aggregate_seeds(std::span<const RunSummary> runs) {
  if (runs.empty()) throw UsageError("aggregate_seeds: no runs");
  for (const RunSummary& r : runs) {
    if (r.experiment != runs[0].experiment || r.config_key != runs[0].config_key)
      throw UsageError("aggregate_seeds: runs '" + runs[0].experiment + "' and '" + r.experiment +
                       "' differ in more than the seed");
  }
  std::map<std::string, FieldStats> out;
  for (const auto& [field, first] : runs[0].values) {
    (void)first;
    std::vector<double> xs;
    for (const RunSummary& r : runs) {
      auto it = r.values.find(field);
      if (it == r.values.end()) break;
      xs.push_back(it->second);
    }
    if (xs.size() != runs.size()) continue;
    FieldStats st;
    st.n = xs.size();
    for (double x : xs) st.mean += x;
    st.mean /= static_cast<double>(st.n);
    if (st.n > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - st.mean) * (x - st.mean);
      st.std = std::sqrt(ss / static_cast<double>(st.n - 1));
    }
    out.emplace(field, st);
  }
  return out;
}

PairedDelta paired_deltas(std::span<const RunSummary> a, std::span<const RunSummary> b, const std::string& field) {
  PairedDelta out;
  for (const RunSummary& ra : a) {
    for (const RunSummary& rb : b) {
      if (rb.seed != ra.seed) continue;
      auto ia = ra.values.find(field);
      auto ib = rb.values.find(field);
      if (ia == ra.values.end() || ib == rb.values.end()) continue;
      const double d = ib->second - ia->second;
      out.deltas.emplace_back(ra.seed, d);
      if (d < 0) ++out.negative;
      if (d > 0) ++out.positive;
    }
  }
  return out;
}

}  // namespace condepth
