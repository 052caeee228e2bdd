// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include <vector>

#include "condepth/backbone.hpp"
#include "condepth/controllers.hpp"
#include "condepth/error.hpp"
#include "condepth/gradcheck.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace condepth;
using condepth::testing::TinyModel;

namespace {

// Dense reference written directly from the block equations, controlled
// layers included, without going through run_layers.
Tensor dense_reference(const TinyModel& m, bool skip_controlled_ffn) {
  Tape t(false);
  Var h = m.model->embed(t, m.tokens);
  for (std::size_t l = 0; l < m.cfg.n_layers; ++l) {
    Var a = m.model->attention_sublayer(t, l, h);
    h = (skip_controlled_ffn && m.cfg.is_controlled(l)) ? a : add(a, m.model->full_ffn(t, l, a));
  }
  return m.model->logits(t, h).value();
}

}  // namespace

TEST_CASE("model config invariants") {
  ModelConfig c = condepth::testing::tiny_model();
  CHECK_NOTHROW(c.validate());
  ModelConfig bad = c;
  bad.cheap_rank = bad.d_ff;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.n_controlled = bad.n_layers + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const ModelConfig p = ModelConfig::reference_scale();
  CHECK(p.cheap_cost() == 0.03125);
  CHECK(ModelConfig{}.cheap_cost() == 0.03125);
  CHECK(ModelConfig{}.d_model / 4 == 16);
}

TEST_CASE("forced-full forward equals the dense reference") {
  TinyModel m(GateKind::g1, 3);
  Tape t(false);
  const auto r = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(2, LayerMode::force_full), nullptr, m.gate);
  CHECK(r.logits.value().bit_equal(dense_reference(m, false)));
}

TEST_CASE("zero-initialized cheap path is a residual identity") {
  TinyModel m(GateKind::g3, 5, 0.0);
  Tape t(false);
  const auto r = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(2, LayerMode::force_cheap), nullptr, m.gate);
  for (const LayerTrace& tr : r.traces) {
    CHECK(max_abs_diff(tr.h_out.value(), tr.a.value()) == 0.0);
    CHECK(max_abs_diff(m.model->cheap_ffn(t, 1, tr.a).value(), Tensor(tr.a.shape())) == 0.0);
  }
  CHECK(r.logits.value().bit_equal(dense_reference(m, true)));
}

TEST_CASE("branch mixing") {
  TinyModel m(GateKind::g3, 6);
  Tape t(false);
  const auto r = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(2, LayerMode::gate), m.ctrl.get(), m.gate);
  for (const LayerTrace& tr : r.traces) {
    REQUIRE(tr.h_full.valid());
    REQUIRE(tr.h_cheap.valid());
    const std::size_t d = m.cfg.d_model;
    for (std::size_t i = 0; i < tr.m_hard.size(); ++i) {
      const auto& src = tr.m_hard[i] == 1.0 ? tr.h_full.value() : tr.h_cheap.value();
      for (std::size_t c = 0; c < d; ++c) CHECK(tr.h_out.value().at(i, c) == src.at(i, c));
    }
    // A hypothetical soft mask of one half gives the branch mean.
    Var half = t.constant(Tensor(Shape{tr.m_hard.size()}, 0.5));
    Tensor mixed = mix_rows(half, tr.h_full, tr.h_cheap).value();
    for (std::size_t i = 0; i < mixed.size(); ++i)
      CHECK(mixed[i] == doctest::Approx(0.5 * (tr.h_full.value()[i] + tr.h_cheap.value()[i])));
  }
}

TEST_CASE("full ffn is nonlinear and vanishes with zero weights") {
  TinyModel m(GateKind::g1, 7);
  Rng g(1);
  Tensor x({4, m.cfg.d_model});
  for (double& v : x.storage()) v = g.normal();
  Tape t(false);
  Tensor fx = m.model->full_ffn(t, 0, t.constant(x)).value();
  Tensor x2 = x;
  for (double& v : x2.storage()) v *= 2.0;
  Tensor f2 = m.model->full_ffn(t, 0, t.constant(x2)).value();
  double gap = 0.0;
  for (std::size_t i = 0; i < fx.size(); ++i) gap = std::max(gap, std::abs(f2[i] - 2.0 * fx[i]));
  CHECK(gap > 1e-3);

  for (const char* name : {"layers.0.ffn.w_down", "layers.0.ffn.b_down"})
    m.store.mutable_value(m.store.at(name)).fill(0.0);
  Tensor z = m.model->full_ffn(t, 0, t.constant(x)).value();
  CHECK(max_abs_diff(z, Tensor(z.shape())) == 0.0);
}

TEST_CASE("zero attention output weights leave the residual unchanged") {
  TinyModel m(GateKind::g1, 8);
  m.store.mutable_value(m.store.at("layers.1.attn.w_o")).fill(0.0);
  m.store.mutable_value(m.store.at("layers.1.attn.b_o")).fill(0.0);
  Tape t(false);
  Var h = m.model->embed(t, m.tokens);
  Var a = m.model->attention_sublayer(t, 1, h);
  CHECK(a.shape() == h.shape());
  CHECK(a.value().bit_equal(h.value()));
}

TEST_CASE("logits are causal") {
  TinyModel m(GateKind::g3, 9, 0.3, 1);
  Tape t(false);
  const ForcingPlan plan = ForcingPlan::uniform(2, LayerMode::force_full);
  Tensor base = model_forward(t, *m.model, m.tokens, plan, nullptr, m.gate).logits.value();
  std::vector<int> changed = m.tokens;
  for (std::size_t i = 5; i < changed.size(); ++i) changed[i] = (changed[i] + 1) % 32;
  Tensor moved = model_forward(t, *m.model, changed, plan, nullptr, m.gate).logits.value();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < m.cfg.vocab_size; ++c) CHECK(base.at(r, c) == moved.at(r, c));
}

TEST_CASE("inference forward reproduces training logits exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GateKind kind = seed % 2 ? GateKind::g1 : GateKind::g3;
    TinyModel m(kind, 100 + seed, 0.3, 3);
    Tape t(false);
    const auto train = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(2, LayerMode::gate), m.ctrl.get(), m.gate);
    const InferenceResult inf = inference_forward(*m.model, m.tokens, *m.ctrl, m.gate);
    const InferenceResult again = inference_forward(*m.model, m.tokens, *m.ctrl, m.gate);
    CHECK(train.logits.value().bit_equal(inf.logits));
    CHECK(inf.logits.bit_equal(again.logits));
    const std::size_t k = topk_count(m.cfg.seq_len, m.gate.budget);
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(inf.full_rows[l] == 3 * k);
      CHECK(inf.masks[l].bit_equal(train.traces[l].m_hard));
    }
  }
}

TEST_CASE("reference sequence length gives 128 full executions per sequence") {
  ModelConfig c = condepth::testing::tiny_model();
  c.seq_len = 256;
  TinyModel m(GateKind::g1, 2, 0.3, 1, c);
  Tape t(false);
  const auto r = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(2, LayerMode::gate), m.ctrl.get(), m.gate);
  for (const LayerTrace& tr : r.traces) {
    double s = 0.0;
    for (double v : tr.m_hard.span()) s += v;
    CHECK(s == 128.0);
    CHECK(tr.k == 128);
  }
}

TEST_CASE("token range and batch shape are input errors") {
  TinyModel m(GateKind::g1, 1);
  Tape t(false);
  std::vector<int> bad = m.tokens;
  bad[3] = 32;
  CHECK_THROWS_AS(m.model->embed(t, bad), InputError);
  bad.pop_back();
  CHECK_THROWS_AS(m.model->embed(t, bad), InputError);
}

TEST_CASE("next token targets") {
  const std::vector<int> tokens{1, 2, 3, 4, 5, 6};
  CHECK(next_token_targets(tokens, 3) == std::vector<int>{2, 3, -1, 5, 6, -1});
}

TEST_CASE("cheap ffn gradients match finite differences") {
  TinyModel m(GateKind::g1, 12);
  const ForcingPlan plan = ForcingPlan::uniform(2, LayerMode::force_cheap);
  auto lm = [&](Tape& t) {
    const auto r = model_forward(t, *m.model, m.tokens, plan, nullptr, m.gate);
    return mean(cross_entropy(r.logits, next_token_targets(m.tokens, m.cfg.seq_len)));
  };
  GradCheckOptions opt;
  opt.max_coords_per_input = 8;
  std::vector<ParamId> ids;
  for (ParamId id : m.trainable())
    if (Backbone::is_cheap_path_param(m.store.name(id))) ids.push_back(id);
  REQUIRE(ids.size() == 12);  // LN gamma/beta plus up/down weight and bias, two layers
  CHECK(finite_difference_check_params(lm, m.store, ids, opt).max_rel_error < 1e-4);
}

TEST_CASE("full ffn gradients match finite differences") {
  TinyModel m(GateKind::g1, 13);
  Rng g(2);
  Tensor x({5, m.cfg.d_model});
  for (double& v : x.storage()) v = g.normal();
  const Backbone& model = *m.model;
  ScalarFn f = [&](Tape& t, std::span<const Var> in) { return sum(square(model.full_ffn(t, 2, in[0]))); };
  CHECK(finite_difference_check(f, {x}).max_rel_error < 1e-4);
}
