// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/oracle.hpp"

#include <cmath>
#include <string>

#include "condepth/error.hpp"

namespace condepth {

std::string_view to_string(PrefixPolicy policy) {
  return policy == PrefixPolicy::on_policy ? "on_policy" : "forced_full";
}

PrefixPolicy parse_prefix_policy(std::string_view name) {
  if (name == "on_policy") return PrefixPolicy::on_policy;
  if (name == "forced_full") return PrefixPolicy::forced_full;
  throw ConfigError("unknown oracle prefix '" + std::string(name) + "' (expected on_policy or forced_full)");
}

void OracleConfig::validate() const {
  if (window == 0) throw ConfigError("oracle window must be at least 1");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("oracle decay must lie in (0, 1]");
  if (interval == 0) throw ConfigError("oracle refresh interval must be at least 1");
  if (!(huber_delta > 0.0)) throw ConfigError("huber delta must be positive");
}

double windowed_ce(std::span<const double> ce, std::size_t t, std::size_t window, double decay) {
  if (t >= ce.size()) throw ConfigError("windowed_ce: position out of range");
  double total = 0.0;
  double w = 1.0;
  for (std::size_t d = 0; d < window && t + d < ce.size(); ++d) {
    total += w * ce[t + d];
    w *= decay;
  }
  return total;
}

bool labels_due(std::size_t step, const OracleConfig& config) {
  if (step <= config.warmup) return false;
  return (step - config.warmup) % config.interval == 0;
}

namespace {

/// Windowed CE for every labeled position of a packed batch; the last
/// position of each sequence has no target and stays 0.
Tensor windowed_positions(Var logits, std::span<const int> tokens, std::size_t seq_len,
                          const OracleConfig& cfg) {
  const std::vector<int> targets = next_token_targets(tokens, seq_len);
  const Tensor ce = cross_entropy(logits, targets).value();
  Tensor out(Shape{tokens.size()});
  for (std::size_t off = 0; off < tokens.size(); off += seq_len) {
    std::span<const double> seq(ce.data() + off, seq_len - 1);
    for (std::size_t t = 0; t + 1 < seq_len; ++t) out[off + t] = windowed_ce(seq, t, cfg.window, cfg.decay);
  }
  return out;
}

ForcingPlan fork_plan(std::size_t n_controlled, std::size_t fork, LayerMode branch, LayerMode prefix) {
  ForcingPlan plan = ForcingPlan::uniform(n_controlled, LayerMode::force_full);
  for (std::size_t i = 0; i < fork; ++i) plan.modes[i] = prefix;
  plan.modes[fork] = branch;
  return plan;
}

UtilityLabels empty_labels(const ModelConfig& cfg, std::size_t n) {
  UtilityLabels labels;
  labels.active = true;
  labels.u_star = Tensor(Shape{cfg.n_controlled, n});
  labels.wce_full = Tensor(Shape{cfg.n_controlled, n});
  labels.wce_cheap = Tensor(Shape{cfg.n_controlled, n});
  labels.valid = Tensor(Shape{n});
  for (std::size_t i = 0; i < n; ++i) labels.valid[i] = (i + 1) % cfg.seq_len != 0 ? 1.0 : 0.0;
  return labels;
}

void store_row(Tensor& dst, std::size_t row, const Tensor& src) {
  std::copy_n(src.data(), src.size(), dst.data() + row * src.size());
}

void finish(UtilityLabels& labels) {
  for (std::size_t i = 0; i < labels.u_star.size(); ++i) labels.u_star[i] = labels.wce_cheap[i] - labels.wce_full[i];
}

/// FFN units of one fork pass: the branch at `fork` plus full for every later
/// controlled layer.
double fork_units(const ModelConfig& cfg, std::size_t fork, bool full, std::size_t n_tokens) {
  const double branch = full ? 1.0 : cfg.cheap_cost();
  const double suffix = static_cast<double>(cfg.n_controlled - 1 - fork);
  return (branch + suffix) * static_cast<double>(n_tokens);
}

}  // namespace

UtilityLabels compute_labels(const Backbone& model, std::span<const int> tokens, const ForwardResult& training,
                             const OracleConfig& config) {
  const ModelConfig& cfg = model.config();
  const std::size_t C = cfg.n_controlled, n = tokens.size(), first = cfg.first_controlled();
  UtilityLabels labels = empty_labels(cfg, n);
  const GateConfig unused_gate;
  const ForcingPlan all_full = ForcingPlan::uniform(C, LayerMode::force_full);

  auto fork = [&](Tape& tape, const Tensor& a, std::size_t ci, bool full) {
    const std::size_t l = first + ci;
    Var av = tape.constant(a);
    Var h = add(av, full ? model.full_ffn(tape, l, av) : model.cheap_ffn(tape, l, av));
    ForwardResult r = run_layers(tape, model, h, l + 1, all_full, nullptr, unused_gate);
    labels.work.suffix_passes += 1;
    labels.work.ffn_units += fork_units(cfg, ci, full, n);
    return windowed_positions(r.logits, tokens, cfg.seq_len, config);
  };

  if (config.prefix == PrefixPolicy::forced_full) {
    Tape tape(false);
    ForwardResult shared = model_forward(tape, model, tokens, all_full, nullptr, unused_gate);
    labels.work.suffix_passes += 1;
    labels.work.ffn_units += static_cast<double>(C * n);
    const Tensor wce_full = windowed_positions(shared.logits, tokens, cfg.seq_len, config);
    for (std::size_t ci = 0; ci < C; ++ci) {
      store_row(labels.wce_full, ci, wce_full);
      Tape fork_tape(false);
      store_row(labels.wce_cheap, ci, fork(fork_tape, shared.traces[ci].a.value(), ci, false));
    }
  } else {
    if (training.traces.size() != C) throw UsageError("compute_labels: training forward lacks controlled-layer traces");
    for (std::size_t ci = 0; ci < C; ++ci) {
      const Tensor& a = training.traces[ci].a.value();
      Tape full_tape(false);
      store_row(labels.wce_full, ci, fork(full_tape, a, ci, true));
      Tape cheap_tape(false);
      store_row(labels.wce_cheap, ci, fork(cheap_tape, a, ci, false));
    }
  }
  finish(labels);
  return labels;
}

UtilityLabels compute_labels_naive(const Backbone& model, std::span<const int> tokens, const Controller* controller,
                                   const GateConfig& gate, const OracleConfig& config) {
  const ModelConfig& cfg = model.config();
  const std::size_t C = cfg.n_controlled, n = tokens.size();
  UtilityLabels labels = empty_labels(cfg, n);
  const LayerMode prefix = config.prefix == PrefixPolicy::on_policy ? LayerMode::gate : LayerMode::force_full;
  if (prefix == LayerMode::gate && controller == nullptr)
    throw UsageError("compute_labels_naive: on-policy prefix needs a controller");
  for (std::size_t ci = 0; ci < C; ++ci) {
    for (bool full : {true, false}) {
      Tape tape(false);
      const ForcingPlan plan = fork_plan(C, ci, full ? LayerMode::force_full : LayerMode::force_cheap, prefix);
      ForwardResult r = model_forward(tape, model, tokens, plan, controller, gate);
      labels.work.suffix_passes += 1;
      labels.work.ffn_units += static_cast<double>(n) * (static_cast<double>(ci) + (full ? 1.0 : cfg.cheap_cost()) +
                                                         static_cast<double>(C - 1 - ci));
      store_row(full ? labels.wce_full : labels.wce_cheap, ci,
                windowed_positions(r.logits, tokens, cfg.seq_len, config));
    }
  }
  finish(labels);
  return labels;
}

Var huber_util_loss(std::span<const Var> scores, const UtilityLabels& labels, double delta) {
  if (scores.empty()) throw UsageError("huber_util_loss: no scores");
  Tape& tape = scores[0].tape();
  if (!labels.active) return tape.constant(Tensor::scalar(0.0));
  const std::size_t n = labels.valid.size();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i)
    if (labels.valid[i] != 0.0) idx.push_back(i);
  if (idx.empty()) return tape.constant(Tensor::scalar(0.0));
  Var total;
  for (std::size_t ci = 0; ci < scores.size(); ++ci) {
    if (scores[ci].value().size() != n) throw ConfigError("huber_util_loss: score length does not match labels");
    Tensor target(Shape{n});
    std::copy_n(labels.u_star.data() + ci * n, n, target.data());
    Var term = sum(gather(huber(scores[ci], tape.constant(std::move(target)), delta), idx));
    total = ci == 0 ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(idx.size() * scores.size()));
}

Var pairwise_rank_loss(std::span<const Var> scores, const UtilityLabels& labels, std::size_t seq_len,
                       std::size_t n_pairs, Rng& rng) {
  if (scores.empty()) throw UsageError("pairwise_rank_loss: no scores");
  Tape& tape = scores[0].tape();
  if (!labels.active || seq_len < 3) return tape.constant(Tensor::scalar(0.0));
  const std::size_t n = labels.valid.size();
  if (n % seq_len != 0) throw ConfigError("pairwise_rank_loss: ragged batch");
  const std::size_t n_seq = n / seq_len, labeled = seq_len - 1;
  Var total;
  std::size_t count = 0;
  for (std::size_t ci = 0; ci < scores.size(); ++ci) {
    const double* us = labels.u_star.data() + ci * n;
    std::vector<std::size_t> first, second;
    std::vector<double> sign;
    for (std::size_t p = 0; p < n_pairs; ++p) {
      const std::size_t base = rng.index(n_seq) * seq_len;
      const std::size_t i = base + rng.index(labeled);
      const std::size_t j = base + rng.index(labeled);
      if (us[i] == us[j]) continue;
      first.push_back(i);
      second.push_back(j);
      sign.push_back(us[i] > us[j] ? -1.0 : 1.0);
    }
    if (first.empty()) continue;
    Var diff = sub(gather(scores[ci], first), gather(scores[ci], second));
    Var term = sum(softplus(mul(diff, tape.constant(Tensor::vector(std::move(sign))))));
    total = count == 0 ? term : add(total, term);
    count += first.size();
  }
  if (count == 0) return tape.constant(Tensor::scalar(0.0));
  return scale(total, 1.0 / static_cast<double>(count));
}

}  // namespace condepth
