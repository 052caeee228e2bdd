// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "condepth/gating.hpp"
#include "condepth/optim.hpp"
#include "condepth/rng.hpp"
#include "condepth/tape.hpp"

namespace condepth {

class Controller;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_controlled = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t cheap_rank = 8;
  std::size_t vocab_size = 256;
  std::size_t seq_len = 64;
  std::size_t d_context = 16;  ///< d_c
  std::size_t d_summary = 8;   ///< d_s
  std::size_t d_action = 4;    ///< d_a
  std::size_t predictor_hidden = 0;  ///< 0 selects d_summary.
  std::size_t decision_hidden = 0;   ///< 0 selects d_summary.

  void validate() const;
  std::size_t first_controlled() const { return n_layers - n_controlled; }
  bool is_controlled(std::size_t layer) const { return layer >= first_controlled() && layer < n_layers; }
  std::size_t predictor_width() const { return predictor_hidden ? predictor_hidden : d_summary; }
  std::size_t decision_width() const { return decision_hidden ? decision_hidden : d_summary; }
  double cheap_cost() const { return static_cast<double>(cheap_rank) / static_cast<double>(d_ff); }

  /// Reference scale: L=12, C=4, d=640, 10 heads, d_ff=2560, r=80, d_c=128,
  /// d_s=64, d_a=16, T=256 and a 151,665-token vocabulary.
  static ModelConfig reference_scale();
};

enum class LayerMode { gate, force_full, force_cheap };

/// Execution mode per controlled layer (index 0 is the first controlled layer).
struct ForcingPlan {
  std::vector<LayerMode> modes;

  static ForcingPlan uniform(std::size_t n_controlled, LayerMode mode) {
    return ForcingPlan{std::vector<LayerMode>(n_controlled, mode)};
  }
};

/// Activations retained for one controlled layer during a forward pass.
struct LayerTrace {
  LayerMode mode = LayerMode::gate;
  Var input;    ///< h_in
  Var a;        ///< post-attention residual
  Var h_full;   ///< a + FFN_full(LN2(a)); set unless mode is force_cheap
  Var h_cheap;  ///< a + FFN_cheap(LN2_cheap(a)); set unless mode is force_full
  Var h_out;
  // Gate mode only.
  Var u;
  Var p;
  Var m_st;
  Tensor m_hard;
  std::size_t k = 0;
  std::optional<Var> q_full;
  std::optional<Var> q_cheap;
};

struct ForwardResult {
  Var logits;
  std::vector<LayerTrace> traces;  ///< one per controlled layer that was executed
};

/// Decoder-only pre-norm transformer whose last C layers replace the FFN
/// sub-layer with a full/cheap pair.
///
/// The backbone registers its parameters in a ParamStore it does not own; the
/// store must outlive it. Parameter names:
///   tok_emb, pos_emb, ln_f.{gamma,beta}, lm_head.{w,b},
///   layers.<i>.{ln1,ln2}.{gamma,beta}, layers.<i>.attn.{w_qkv,b_qkv,w_o,b_o},
///   layers.<i>.ffn.{w_up,b_up,w_down,b_down},
///   cheap_ffn.<i>.{w_up,b_up,w_down,b_down}, ln2_cheap.<i>.{gamma,beta}
/// with <i> the model layer index.
class Backbone {
 public:
  Backbone(const ModelConfig& config, ParamStore& store, Rng& rng);

  const ModelConfig& config() const { return config_; }
  const ParamStore& store() const { return *store_; }

  /// [B * T] tokens -> [B * T, d] token plus position embeddings.
  Var embed(Tape& tape, std::span<const int> tokens) const;
  /// a = h + Attn(LN1(h)).
  Var attention_sublayer(Tape& tape, std::size_t layer, Var h) const;
  /// FFN_full(LN2(x)) without the residual.
  Var full_ffn(Tape& tape, std::size_t layer, Var x) const;
  /// FFN_cheap(LN2_cheap(x)) without the residual.
  Var cheap_ffn(Tape& tape, std::size_t layer, Var x) const;
  /// Uncontrolled block: a + FFN(LN2(a)).
  Var standard_block(Tape& tape, std::size_t layer, Var h) const;
  /// LM head over the final residual stream.
  Var logits(Tape& tape, Var h) const;

  /// True for names owned by the cheap path (trainable in controller-only runs).
  static bool is_cheap_path_param(std::string_view name);

 private:
  struct Linear {
    ParamId w, b;
  };
  struct Norm {
    ParamId gamma, beta;
  };
  struct Layer {
    Norm ln1, ln2;
    Linear qkv, out, up, down;
    std::optional<Norm> ln2_cheap;
    std::optional<Linear> cheap_up, cheap_down;
  };

  Var linear(Tape& tape, const Linear& l, Var x) const;
  Var norm(Tape& tape, const Norm& n, Var x) const;

  ModelConfig config_;
  ParamStore* store_;
  ParamId tok_emb_, pos_emb_;
  Norm ln_f_;
  Linear head_;
  std::vector<Layer> layers_;
};

/// Next-token targets for packed sequences: targets[b*T + t] = tokens[b*T + t + 1]
/// and -1 at the last position of each sequence.
std::vector<int> next_token_targets(std::span<const int> tokens, std::size_t seq_len);

/// Runs layers [first_layer, L) from residual stream `h`, then the LM head.
/// Gate-mode controlled layers query `controller`; forced layers never do.
ForwardResult run_layers(Tape& tape, const Backbone& model, Var h, std::size_t first_layer, const ForcingPlan& plan,
                         const Controller* controller, const GateConfig& gate);

/// Full training-mode forward: both branches are computed for every token in
/// gate-mode layers and mixed through the straight-through mask.
ForwardResult model_forward(Tape& tape, const Backbone& model, std::span<const int> tokens, const ForcingPlan& plan,
                            const Controller* controller, const GateConfig& gate);

struct InferenceResult {
  Tensor logits;
  std::vector<std::size_t> full_rows;  ///< rows executing full, per controlled layer
  std::vector<Tensor> masks;           ///< hard masks, per controlled layer
};

/// Hard-routed forward without gradients: each controlled layer evaluates only
/// the selected branch for each token.
InferenceResult inference_forward(const Backbone& model, std::span<const int> tokens, const Controller& controller,
                                  const GateConfig& gate);

/// Copies every backbone tensor present in `source` into `target`, skipping
/// cheap-path entries. Shapes must match.
void copy_backbone_weights(const ParamStore& source, ParamStore& target);

}  // namespace condepth
