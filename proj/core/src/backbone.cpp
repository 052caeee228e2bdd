// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "condepth/controllers.hpp"
#include "condepth/error.hpp"
#include "init.hpp"

namespace condepth {

void ModelConfig::validate() const {
  if (n_layers == 0 || n_controlled == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || cheap_rank == 0 ||
      vocab_size == 0 || seq_len == 0 || d_context == 0 || d_summary == 0 || d_action == 0)
    throw ConfigError("model dimensions must be positive");
  if (n_controlled > n_layers) throw ConfigError("n_controlled exceeds n_layers");
  if (cheap_rank >= d_ff) throw ConfigError("cheap_rank must be smaller than d_ff");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (d_summary > d_model) throw ConfigError("d_summary must not exceed d_model");
}

ModelConfig ModelConfig::reference_scale() {
  ModelConfig c;
  c.n_layers = 12;
  c.n_controlled = 4;
  c.d_model = 640;
  c.n_heads = 10;
  c.d_ff = 2560;
  c.cheap_rank = 80;
  c.vocab_size = 151665;
  c.seq_len = 256;
  c.d_context = 128;
  c.d_summary = 64;
  c.d_action = 16;
  return c;
}

namespace {

std::string lname(std::size_t i, std::string_view rest) { return "layers." + std::to_string(i) + "." + std::string(rest); }

}  // namespace

Backbone::Backbone(const ModelConfig& config, ParamStore& store, Rng& rng) : config_(config), store_(&store) {
  config.validate();
  const std::size_t d = config.d_model, f = config.d_ff, r = config.cheap_rank, V = config.vocab_size;
  const double resid_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  auto add_norm = [&](const std::string& prefix) {
    Norm n;
    n.gamma = store.add(prefix + ".gamma", Tensor(Shape{d}, 1.0));
    n.beta = store.add(prefix + ".beta", Tensor(Shape{d}));
    return n;
  };
  auto linear_pair = [&](const std::string& base, const std::string& w, const std::string& b, std::size_t in,
                         std::size_t out, double gain, bool zero) {
    Linear l;
    l.w = store.add(base + "." + w, zero ? Tensor(Shape{in, out}) : detail::fan_in_weight(in, out, rng, gain));
    l.b = store.add(base + "." + b, Tensor(Shape{out}));
    return l;
  };

  tok_emb_ = store.add("tok_emb", detail::gaussian(Shape{V, d}, 0.1, rng));
  pos_emb_ = store.add("pos_emb", detail::gaussian(Shape{config.seq_len, d}, 0.1, rng));
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    Layer layer;
    layer.ln1 = add_norm(lname(i, "ln1"));
    layer.ln2 = add_norm(lname(i, "ln2"));
    layer.qkv = linear_pair(lname(i, "attn"), "w_qkv", "b_qkv", d, 3 * d, 1.0, false);
    layer.out = linear_pair(lname(i, "attn"), "w_o", "b_o", d, d, resid_gain, false);
    layer.up = linear_pair(lname(i, "ffn"), "w_up", "b_up", d, f, 1.0, false);
    layer.down = linear_pair(lname(i, "ffn"), "w_down", "b_down", f, d, resid_gain, false);
    if (config.is_controlled(i)) {
      const std::string ci = std::to_string(i);
      layer.ln2_cheap = add_norm("ln2_cheap." + ci);
      layer.cheap_up = linear_pair("cheap_ffn." + ci, "w_up", "b_up", d, r, 1.0, false);
      layer.cheap_down = linear_pair("cheap_ffn." + ci, "w_down", "b_down", r, d, 0.0, true);
    }
    layers_.push_back(layer);
  }
  ln_f_ = add_norm("ln_f");
  head_ = linear_pair("lm_head", "w", "b", d, V, 1.0, false);
}

bool Backbone::is_cheap_path_param(std::string_view name) {
  return name.substr(0, 10) == "cheap_ffn." || name.substr(0, 10) == "ln2_cheap.";
}

Var Backbone::linear(Tape& tape, const Linear& l, Var x) const {
  return add_bias(matmul(x, tape.param(*store_, l.w)), tape.param(*store_, l.b));
}

Var Backbone::norm(Tape& tape, const Norm& n, Var x) const {
  return layer_norm(x, tape.param(*store_, n.gamma), tape.param(*store_, n.beta));
}

Var Backbone::embed(Tape& tape, std::span<const int> tokens) const {
  const std::size_t T = config_.seq_len;
  if (tokens.empty() || tokens.size() % T != 0)
    throw InputError("token count " + std::to_string(tokens.size()) + " is not a positive multiple of seq_len " +
                     std::to_string(T));
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % T);
  return add(gather_rows(tape.param(*store_, tok_emb_), tokens), gather_rows(tape.param(*store_, pos_emb_), positions));
}

Var Backbone::attention_sublayer(Tape& tape, std::size_t layer, Var h) const {
  const Layer& l = layers_.at(layer);
  Var qkv = linear(tape, l.qkv, norm(tape, l.ln1, h));
  Var attn = causal_attention(qkv, config_.seq_len, config_.n_heads);
  return add(h, linear(tape, l.out, attn));
}

Var Backbone::full_ffn(Tape& tape, std::size_t layer, Var x) const {
  const Layer& l = layers_.at(layer);
  return linear(tape, l.down, silu(linear(tape, l.up, norm(tape, l.ln2, x))));
}

Var Backbone::cheap_ffn(Tape& tape, std::size_t layer, Var x) const {
  const Layer& l = layers_.at(layer);
  if (!l.ln2_cheap) throw UsageError("layer " + std::to_string(layer) + " has no cheap path");
  return linear(tape, *l.cheap_down, silu(linear(tape, *l.cheap_up, norm(tape, *l.ln2_cheap, x))));
}

Var Backbone::standard_block(Tape& tape, std::size_t layer, Var h) const {
  Var a = attention_sublayer(tape, layer, h);
  return add(a, full_ffn(tape, layer, a));
}

Var Backbone::logits(Tape& tape, Var h) const { return linear(tape, head_, norm(tape, ln_f_, h)); }

// ---------------------------------------------------------------------------

std::vector<int> next_token_targets(std::span<const int> tokens, std::size_t seq_len) {
  if (seq_len == 0 || tokens.size() % seq_len != 0) throw InputError("next_token_targets: ragged token batch");
  std::vector<int> out(tokens.size(), -1);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if ((i + 1) % seq_len != 0) out[i] = tokens[i + 1];
  return out;
}

ForwardResult run_layers(Tape& tape, const Backbone& model, Var h, std::size_t first_layer, const ForcingPlan& plan,
                         const Controller* controller, const GateConfig& gate) {
  const ModelConfig& cfg = model.config();
  if (plan.modes.size() != cfg.n_controlled)
    throw ConfigError("forcing plan has " + std::to_string(plan.modes.size()) + " modes for " +
                      std::to_string(cfg.n_controlled) + " controlled layers");
  ForwardResult result;
  for (std::size_t l = first_layer; l < cfg.n_layers; ++l) {
    if (!cfg.is_controlled(l)) {
      h = model.standard_block(tape, l, h);
      continue;
    }
    LayerTrace tr;
    tr.mode = plan.modes[l - cfg.first_controlled()];
    tr.input = h;
    tr.a = model.attention_sublayer(tape, l, h);
    if (tr.mode != LayerMode::force_cheap) tr.h_full = add(tr.a, model.full_ffn(tape, l, tr.a));
    if (tr.mode != LayerMode::force_full) tr.h_cheap = add(tr.a, model.cheap_ffn(tape, l, tr.a));
    switch (tr.mode) {
      case LayerMode::force_full: tr.h_out = tr.h_full; break;
      case LayerMode::force_cheap: tr.h_out = tr.h_cheap; break;
      case LayerMode::gate: {
        if (controller == nullptr) throw UsageError("gate-mode layer without a controller");
        ControllerOutput co = controller->score(tape, l, tr.a);
        GateDecision dec = decide(co.u, cfg.seq_len, gate);
        tr.u = co.u;
        tr.q_full = co.q_full;
        tr.q_cheap = co.q_cheap;
        tr.p = dec.p;
        tr.m_st = dec.m_st;
        tr.m_hard = std::move(dec.m_hard);
        tr.k = dec.k;
        tr.h_out = mix_rows(tr.m_st, tr.h_full, tr.h_cheap);
        break;
      }
    }
    h = tr.h_out;
    result.traces.push_back(std::move(tr));
  }
  result.logits = model.logits(tape, h);
  return result;
}

ForwardResult model_forward(Tape& tape, const Backbone& model, std::span<const int> tokens, const ForcingPlan& plan,
                            const Controller* controller, const GateConfig& gate) {
  return run_layers(tape, model, model.embed(tape, tokens), 0, plan, controller, gate);
}

namespace {

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.cols();
  Tensor out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.data() + rows[i] * d, d, out.data() + i * d);
  return out;
}

void put_rows(Tensor& dst, const Tensor& src, std::span<const std::size_t> rows) {
  const std::size_t d = dst.cols();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(src.data() + i * d, d, dst.data() + rows[i] * d);
}

}  // namespace

InferenceResult inference_forward(const Backbone& model, std::span<const int> tokens, const Controller& controller,
                                  const GateConfig& gate) {
  const ModelConfig& cfg = model.config();
  Tape tape(false);
  Var h = model.embed(tape, tokens);
  InferenceResult result;
  const std::size_t k = topk_count(cfg.seq_len, gate.budget);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    if (!cfg.is_controlled(l)) {
      h = model.standard_block(tape, l, h);
      continue;
    }
    Var a = model.attention_sublayer(tape, l, h);
    ControllerOutput co = controller.score(tape, l, a);
    Tensor mask(co.u.shape(), topk_mask_batched(co.u.value().span(), cfg.seq_len, k));
    std::vector<std::size_t> full_rows, cheap_rows;
    for (std::size_t i = 0; i < mask.size(); ++i) (mask[i] == 1.0 ? full_rows : cheap_rows).push_back(i);
    Tensor out(a.shape());
    if (!full_rows.empty()) {
      Var sub_a = tape.constant(take_rows(a.value(), full_rows));
      put_rows(out, add(sub_a, model.full_ffn(tape, l, sub_a)).value(), full_rows);
    }
    if (!cheap_rows.empty()) {
      Var sub_a = tape.constant(take_rows(a.value(), cheap_rows));
      put_rows(out, add(sub_a, model.cheap_ffn(tape, l, sub_a)).value(), cheap_rows);
    }
    result.full_rows.push_back(full_rows.size());
    result.masks.push_back(std::move(mask));
    h = tape.constant(std::move(out));
  }
  result.logits = model.logits(tape, h).value();
  return result;
}

void copy_backbone_weights(const ParamStore& source, ParamStore& target) {
  for (ParamId id = 0; id < source.size(); ++id) {
    const std::string& name = source.name(id);
    if (Backbone::is_cheap_path_param(name)) continue;
    auto dst = target.find(name);
    if (!dst) continue;
    if (!source.value(id).same_shape(target.value(*dst)))
      throw ConfigError("copy_backbone_weights: shape mismatch for " + name);
    target.mutable_value(*dst) = source.value(id);
  }
}

}  // namespace condepth
