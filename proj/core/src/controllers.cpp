// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "condepth/error.hpp"
#include "init.hpp"

namespace condepth {

namespace {

bool has_prefix(std::string_view name, std::string_view prefix) { return name.substr(0, prefix.size()) == prefix; }

std::string layer_name(std::string_view base, std::size_t layer, std::string_view leaf = {}) {
  std::string s(base);
  s += '.';
  s += std::to_string(layer);
  if (!leaf.empty()) {
    s += '.';
    s += leaf;
  }
  return s;
}

Var dense(Tape& tape, const ParamStore& store, ParamId w, ParamId b, Var x) {
  return add_bias(matmul(x, tape.param(store, w)), tape.param(store, b));
}

}  // namespace

std::string_view to_string(GateKind kind) {
  switch (kind) {
    case GateKind::g1: return "g1";
    case GateKind::g1_costmatch: return "g1_costmatch";
    case GateKind::g3: return "g3";
  }
  return "?";
}

GateKind parse_gate_kind(std::string_view name) {
  if (name == "g1") return GateKind::g1;
  if (name == "g1_costmatch" || name == "g1-costmatch") return GateKind::g1_costmatch;
  if (name == "g3") return GateKind::g3;
  throw ConfigError("unknown gate kind '" + std::string(name) + "' (expected g1, g1_costmatch or g3)");
}

// ---------------------------------------------------------------------------

MlpGate::MlpGate(const ModelConfig& config, ParamStore& store, Rng& rng, std::size_t hidden, GateKind kind)
    : config_(config), store_(&store), hidden_(hidden), kind_(kind) {
  if (hidden == 0) throw ConfigError("MLP gate hidden width must be positive");
  if (kind == GateKind::g3) throw ConfigError("MlpGate cannot have kind g3");
  const std::size_t d = config.d_model;
  for (std::size_t l = config.first_controlled(); l < config.n_layers; ++l) {
    Params p;
    p.w1 = store.add(layer_name("g1", l, "w1"), detail::fan_in_weight(d, hidden, rng));
    p.b1 = store.add(layer_name("g1", l, "b1"), Tensor(Shape{hidden}));
    p.w2 = store.add(layer_name("g1", l, "w2"), detail::fan_in_weight(hidden, 1, rng));
    p.b2 = store.add(layer_name("g1", l, "b2"), Tensor(Shape{1}));
    layers_.push_back(p);
  }
}

ControllerOutput MlpGate::score(Tape& tape, std::size_t layer, Var h) const {
  if (!config_.is_controlled(layer)) throw UsageError("MlpGate::score: layer " + std::to_string(layer) + " is not controlled");
  const Params& p = layers_[layer - config_.first_controlled()];
  Var hidden = silu(dense(tape, *store_, p.w1, p.b1, h));
  Var u = dense(tape, *store_, p.w2, p.b2, hidden);
  return ControllerOutput{reshape(u, Shape{u.shape()[0]}), std::nullopt, std::nullopt};
}

std::size_t MlpGate::score_macs() const { return mlp_gate_macs(config_, hidden_); }

bool MlpGate::owns(std::string_view name) const { return has_prefix(name, "g1."); }

// ---------------------------------------------------------------------------

JepaGate::JepaGate(const ModelConfig& config, ParamStore& store, Rng& rng) : config_(config), store_(&store) {
  const std::size_t d = config.d_model, dc = config.d_context, ds = config.d_summary, da = config.d_action;
  const std::size_t dp = config.predictor_width(), dh = config.decision_width();
  for (std::size_t l = config.first_controlled(); l < config.n_layers; ++l) {
    Params p;
    p.wc = store.add(layer_name("w_c", l, "weight"), detail::fan_in_weight(d, dc, rng));
    p.bc = store.add(layer_name("w_c", l, "bias"), Tensor(Shape{dc}));
    p.e_full = store.add(layer_name("e_full", l), detail::gaussian(Shape{da}, 0.02, rng));
    p.e_cheap = store.add(layer_name("e_cheap", l), detail::gaussian(Shape{da}, 0.02, rng));
    p.p_w1 = store.add(layer_name("predictor", l, "w1"), detail::fan_in_weight(dc + da, dp, rng));
    p.p_b1 = store.add(layer_name("predictor", l, "b1"), Tensor(Shape{dp}));
    p.p_w2 = store.add(layer_name("predictor", l, "w2"), detail::fan_in_weight(dp, ds, rng));
    p.p_b2 = store.add(layer_name("predictor", l, "b2"), Tensor(Shape{ds}));
    p.d_w1 = store.add(layer_name("decision", l, "w1"), detail::fan_in_weight(3 * ds, dh, rng));
    p.d_b1 = store.add(layer_name("decision", l, "b1"), Tensor(Shape{dh}));
    p.d_w2 = store.add(layer_name("decision", l, "w2"), detail::fan_in_weight(dh, 1, rng));
    p.d_b2 = store.add(layer_name("decision", l, "b2"), Tensor(Shape{1}));
    layers_.push_back(p);
  }
  target_head_ = store.add("target_head", orthogonal_rows(ds, d, rng));
}

Var JepaGate::predict(Tape& tape, const Params& p, Var context, ParamId action) const {
  const std::size_t n = context.shape()[0];
  Var e = repeat_rows(tape.param(*store_, action), n);
  Var x = concat_cols({context, e});
  Var hidden = silu(dense(tape, *store_, p.p_w1, p.p_b1, x));
  return dense(tape, *store_, p.p_w2, p.p_b2, hidden);
}

ControllerOutput JepaGate::score(Tape& tape, std::size_t layer, Var h) const {
  if (!config_.is_controlled(layer)) throw UsageError("JepaGate::score: layer " + std::to_string(layer) + " is not controlled");
  const Params& p = layers_[layer - config_.first_controlled()];
  Var c = dense(tape, *store_, p.wc, p.bc, stop_gradient(h));
  Var qf = predict(tape, p, c, p.e_full);
  Var qc = predict(tape, p, c, p.e_cheap);
  Var features = concat_cols({qf, qc, sub(qf, qc)});
  Var hidden = silu(dense(tape, *store_, p.d_w1, p.d_b1, features));
  Var u = dense(tape, *store_, p.d_w2, p.d_b2, hidden);
  return ControllerOutput{reshape(u, Shape{u.shape()[0]}), qf, qc};
}

std::pair<Var, Var> JepaGate::targets(Tape& tape, Var h_full, Var h_cheap) const {
  Var t = tape.param(*store_, target_head_);
  Var zf = stop_gradient(matmul_bt(stop_gradient(h_full), t));
  Var zc = stop_gradient(matmul_bt(stop_gradient(h_cheap), t));
  return {zf, zc};
}

std::size_t JepaGate::score_macs() const { return jepa_gate_macs(config_); }

std::size_t JepaGate::target_macs() const { return jepa_target_macs(config_); }

bool JepaGate::owns(std::string_view name) const {
  return has_prefix(name, "w_c.") || has_prefix(name, "e_full.") || has_prefix(name, "e_cheap.") ||
         has_prefix(name, "predictor.") || has_prefix(name, "decision.");
}

// ---------------------------------------------------------------------------

std::unique_ptr<Controller> make_controller(GateKind kind, const ModelConfig& config, ParamStore& store, Rng& rng) {
  switch (kind) {
    case GateKind::g1: return std::make_unique<MlpGate>(config, store, rng, config.d_model / 4, GateKind::g1);
    case GateKind::g1_costmatch: {
      const std::size_t h = costmatch_hidden(config);
      if (mlp_gate_param_count(config, h) < jepa_gate_param_count(config))
        throw InternalError("costmatch gate is smaller than the JEPA gate");
      return std::make_unique<MlpGate>(config, store, rng, h, GateKind::g1_costmatch);
    }
    case GateKind::g3: return std::make_unique<JepaGate>(config, store, rng);
  }
  throw InternalError("make_controller: unhandled gate kind");
}

std::size_t mlp_gate_param_count(const ModelConfig& config, std::size_t hidden) {
  return config.n_controlled * (config.d_model * hidden + hidden + hidden + 1);
}

std::size_t jepa_gate_param_count(const ModelConfig& config) {
  const std::size_t d = config.d_model, dc = config.d_context, ds = config.d_summary, da = config.d_action;
  const std::size_t dp = config.predictor_width(), dh = config.decision_width();
  const std::size_t per_layer = d * dc + dc + 2 * da + (dc + da) * dp + dp + dp * ds + ds + 3 * ds * dh + dh + dh + 1;
  return config.n_controlled * per_layer;
}

std::size_t mlp_gate_macs(const ModelConfig& config, std::size_t hidden) {
  return config.d_model * hidden + hidden;
}

std::size_t jepa_gate_macs(const ModelConfig& config) {
  const std::size_t d = config.d_model, dc = config.d_context, ds = config.d_summary, da = config.d_action;
  const std::size_t dp = config.predictor_width(), dh = config.decision_width();
  return d * dc + 2 * ((dc + da) * dp + dp * ds) + 3 * ds * dh + dh;
}

std::size_t jepa_target_macs(const ModelConfig& config) { return 2 * config.d_model * config.d_summary; }

std::size_t full_ffn_macs(const ModelConfig& config) { return 2 * config.d_model * config.d_ff; }

std::size_t costmatch_hidden(const ModelConfig& config) {
  const std::size_t target = jepa_gate_param_count(config);
  std::size_t h = config.d_model / 4 + 1;
  while (mlp_gate_param_count(config, h) < target) ++h;
  return h;
}

Tensor orthogonal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || rows > cols) throw ConfigError("orthogonal_rows: need 0 < rows <= cols");
  Tensor q = detail::gaussian(Shape{rows, cols}, 1.0, rng);
  for (std::size_t i = 0; i < rows; ++i) {
    auto ri = q.row(i);
    // Two passes of modified Gram-Schmidt keep the rows orthogonal to rounding.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        auto rj = q.row(j);
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += ri[c] * rj[c];
        for (std::size_t c = 0; c < cols; ++c) ri[c] -= dot * rj[c];
      }
    }
    double norm = 0.0;
    for (double v : ri) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw InternalError("orthogonal_rows: degenerate draw");
    for (double& v : ri) v /= norm;
  }
  return q;
}

Var jepa_loss(Var q_full, Var q_cheap, Var z_full, Var z_cheap) {
  Var both = add(cosine_similarity(q_full, z_full), cosine_similarity(q_cheap, z_cheap));
  return mean(add_scalar(scale(both, -1.0), 2.0));
}

std::vector<std::size_t> derangement(std::size_t n, Rng& rng) {
  if (n < 2) throw ConfigError("derangement needs at least 2 elements, got " + std::to_string(n));
  const std::size_t offset = 1 + rng.index(n - 1);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = (i + offset) % n;
  return perm;
}

Tensor permute_rows(const Tensor& in, std::span<const std::size_t> perm) {
  if (perm.size() != in.rows()) throw ConfigError("permute_rows: permutation length does not match rows");
  Tensor out(in.shape());
  const std::size_t w = in.size() / std::max<std::size_t>(in.rows(), 1);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= in.rows()) throw ConfigError("permute_rows: index out of range");
    std::copy_n(in.data() + perm[i] * w, w, out.data() + i * w);
  }
  return out;
}

}  // namespace condepth
