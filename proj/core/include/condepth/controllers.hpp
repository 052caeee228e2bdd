// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "condepth/backbone.hpp"

namespace condepth {

enum class GateKind { g1, g1_costmatch, g3 };

std::string_view to_string(GateKind kind);
GateKind parse_gate_kind(std::string_view name);

struct ControllerOutput {
  Var u;  ///< [N] utility scores
  std::optional<Var> q_full;
  std::optional<Var> q_cheap;
};

/// Scores tokens at a controlled layer. Implementations register their own
/// parameters, one set per controlled layer.
class Controller {
 public:
  virtual ~Controller() = default;

  virtual GateKind kind() const = 0;
  /// Scores the post-attention activations `h` ([N, d]) of model layer `layer`.
  virtual ControllerOutput score(Tape& tape, std::size_t layer, Var h) const = 0;
  /// Matmul multiply-accumulates per token per controlled layer when scoring.
  virtual std::size_t score_macs() const = 0;
  /// Whether a parameter name belongs to this controller's trainable set.
  virtual bool owns(std::string_view name) const = 0;
};

/// Two-layer MLP gate u = W2 SiLU(W1 h + b1) + b2 (G1 and G1-costmatch).
/// Parameters: g1.<i>.{w1,b1,w2,b2}.
class MlpGate final : public Controller {
 public:
  MlpGate(const ModelConfig& config, ParamStore& store, Rng& rng, std::size_t hidden,
          GateKind kind = GateKind::g1);

  GateKind kind() const override { return kind_; }
  ControllerOutput score(Tape& tape, std::size_t layer, Var h) const override;
  std::size_t score_macs() const override;
  bool owns(std::string_view name) const override;
  std::size_t hidden() const { return hidden_; }

 private:
  struct Params {
    ParamId w1, b1, w2, b2;
  };
  ModelConfig config_;
  const ParamStore* store_;
  std::size_t hidden_;
  GateKind kind_;
  std::vector<Params> layers_;
};

/// JEPA-guided gate (G3).
///
///   c   = W_c sg(h) + b_c
///   q_a = P([c ; e_a])              a in {full, cheap}
///   u   = D([q_full ; q_cheap ; q_full - q_cheap])
///
/// P and D are Linear-SiLU-Linear. A fixed, orthogonally initialized target
/// head projects branch outputs to the summary space for the alignment loss.
/// Parameters: w_c.<i>.{weight,bias}, e_full.<i>, e_cheap.<i>,
/// predictor.<i>.{w1,b1,w2,b2}, decision.<i>.{w1,b1,w2,b2}, target_head.
class JepaGate final : public Controller {
 public:
  JepaGate(const ModelConfig& config, ParamStore& store, Rng& rng);

  GateKind kind() const override { return GateKind::g3; }
  ControllerOutput score(Tape& tape, std::size_t layer, Var h) const override;
  std::size_t score_macs() const override;
  bool owns(std::string_view name) const override;

  ParamId target_head() const { return target_head_; }
  /// z_a = sg(T h_a) for both branch outputs; no adjoint reaches h.
  std::pair<Var, Var> targets(Tape& tape, Var h_full, Var h_cheap) const;
  /// MACs per token per controlled layer to project both targets.
  std::size_t target_macs() const;

 private:
  struct Params {
    ParamId wc, bc, e_full, e_cheap;
    ParamId p_w1, p_b1, p_w2, p_b2;
    ParamId d_w1, d_b1, d_w2, d_b2;
  };
  Var predict(Tape& tape, const Params& p, Var context, ParamId action) const;

  ModelConfig config_;
  const ParamStore* store_;
  std::vector<Params> layers_;
  ParamId target_head_;
};

std::unique_ptr<Controller> make_controller(GateKind kind, const ModelConfig& config, ParamStore& store, Rng& rng);

/// Trainable scalars of an MLP gate with the given hidden width, all layers.
std::size_t mlp_gate_param_count(const ModelConfig& config, std::size_t hidden);
/// Trainable scalars of the JEPA gate, all layers (target head excluded).
std::size_t jepa_gate_param_count(const ModelConfig& config);
/// Scoring MACs per token per controlled layer, computed from dimensions alone.
std::size_t mlp_gate_macs(const ModelConfig& config, std::size_t hidden);
std::size_t jepa_gate_macs(const ModelConfig& config);
/// MACs per token per controlled layer to project both JEPA targets.
std::size_t jepa_target_macs(const ModelConfig& config);
/// MACs per token of one full FFN execution (up and down projections).
std::size_t full_ffn_macs(const ModelConfig& config);

/// Smallest MLP hidden width above d/4 whose trainable count is at least the
/// JEPA gate's.
std::size_t costmatch_hidden(const ModelConfig& config);

/// Matrix with orthonormal rows: Gram-Schmidt on a seeded Gaussian with the
/// sign of each R diagonal entry fixed positive. Requires rows <= cols.
Tensor orthogonal_rows(std::size_t rows, std::size_t cols, Rng& rng);

/// Mean over rows of (1 - cos(q_full, z_full)) + (1 - cos(q_cheap, z_cheap)).
Var jepa_loss(Var q_full, Var q_cheap, Var z_full, Var z_cheap);

/// Fixed-point-free permutation of [0, n): cyclic shift by a seeded offset in
/// [1, n-1]. n < 2 is a ConfigError.
std::vector<std::size_t> derangement(std::size_t n, Rng& rng);

/// out.row(i) = in.row(perm[i]).
Tensor permute_rows(const Tensor& in, std::span<const std::size_t> perm);

}  // namespace condepth
