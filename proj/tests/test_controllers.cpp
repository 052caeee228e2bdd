// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>
#include <vector>

#include "condepth/controllers.hpp"
#include "condepth/error.hpp"
#include "condepth/gradcheck.hpp"
#include "condepth/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace condepth;
using condepth::testing::TinyModel;

namespace {

// Cheap path per controlled layer: LayerNorm affine plus two biased linears.
std::size_t cheap_count(const ModelConfig& c) {
  return c.n_controlled * (2 * c.d_model + (c.d_model * c.cheap_rank + c.cheap_rank) +
                           (c.cheap_rank * c.d_model + c.d_model));
}

std::size_t trainable_after_build(GateKind kind, const ModelConfig& cfg) {
  ParamStore store;
  Rng rng(1);
  Backbone model(cfg, store, rng);
  auto ctrl = make_controller(kind, cfg, store, rng);
  store.set_partition(controller_only_partition(*ctrl));
  return store.trainable_scalar_count();
}

double determinant(Tensor a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a.at(r, c)) > std::abs(a.at(piv, c))) piv = r;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a.at(c, k), a.at(piv, k));
      det = -det;
    }
    det *= a.at(c, c);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a.at(r, c) / a.at(c, c);
      for (std::size_t k = c; k < n; ++k) a.at(r, k) -= f * a.at(c, k);
    }
  }
  return det;
}

}  // namespace

TEST_CASE("trainable counts at the reference scale") {
  const ModelConfig p = ModelConfig::reference_scale();
  // Hand count, G1: four layers of 640 -> 160 -> 1 with biases.
  const std::size_t g1_gate = 4 * (640 * 160 + 160 + 160 + 1);
  // G3 per layer: context 640 -> 128, two 16-wide action embeddings,
  // predictor 144 -> 64 -> 64, decision 192 -> 64 -> 1.
  const std::size_t g3_gate = 4 * ((640 * 128 + 128) + 32 + (144 * 64 + 64) + (64 * 64 + 64) + (192 * 64 + 64) + 65);
  CHECK(cheap_count(p) + g1_gate == 828484);
  CHECK(cheap_count(p) + g3_gate == 849348);
  CHECK(mlp_gate_param_count(p, 160) == g1_gate);
  CHECK(jepa_gate_param_count(p) == g3_gate);
  const std::size_t h = costmatch_hidden(p);
  CHECK(mlp_gate_param_count(p, h) >= g3_gate);
  CHECK(mlp_gate_param_count(p, h - 1) < g3_gate);
}

TEST_CASE("built stores match the counts at desk scale") {
  const ModelConfig c;
  CHECK(trainable_after_build(GateKind::g1, c) == cheap_count(c) + mlp_gate_param_count(c, c.d_model / 4));
  CHECK(trainable_after_build(GateKind::g3, c) == cheap_count(c) + jepa_gate_param_count(c));
  const std::size_t cm = trainable_after_build(GateKind::g1_costmatch, c);
  CHECK(cm == cheap_count(c) + mlp_gate_param_count(c, costmatch_hidden(c)));
  CHECK(cm >= trainable_after_build(GateKind::g3, c));
}

TEST_CASE("mlp gate shapes and constant scores") {
  TinyModel m(GateKind::g1, 2);
  const auto* g = dynamic_cast<const MlpGate*>(m.ctrl.get());
  REQUIRE(g != nullptr);
  CHECK(g->hidden() == 4);
  CHECK(m.store.value(m.store.at("g1.2.w1")).shape() == Shape{16, 4});
  for (const char* n : {"g1.2.w1", "g1.2.b1", "g1.2.w2"}) m.store.mutable_value(m.store.at(n)).fill(0.0);
  m.store.mutable_value(m.store.at("g1.2.b2")).fill(0.75);
  Tape t(false);
  Tensor h({5, 16}, 1.0);
  const ControllerOutput out = m.ctrl->score(t, 2, t.constant(h));
  CHECK(out.u.shape() == Shape{5});
  for (double v : out.u.value().span()) CHECK(v == 0.75);
  CHECK_FALSE(out.q_full.has_value());
}

TEST_CASE("jepa gate scoring") {
  TinyModel m(GateKind::g3, 3);
  Rng rng(4);
  Tensor h({6, 16});
  for (double& v : h.storage()) v = rng.normal();

  SUBCASE("shapes and determinism") {
    Tape t(false);
    const auto a = m.ctrl->score(t, 1, t.constant(h));
    const auto b = m.ctrl->score(t, 1, t.constant(h));
    CHECK(a.u.shape() == Shape{6});
    CHECK(a.q_full->shape() == Shape{6, 4});
    CHECK(a.u.value().bit_equal(b.u.value()));
  }
  SUBCASE("equal action embeddings collapse the summaries") {
    m.store.mutable_value(m.store.at("e_cheap.1")) = m.store.value(m.store.at("e_full.1"));
    Tape t(false);
    const auto a = m.ctrl->score(t, 1, t.constant(h));
    CHECK(a.q_full->value().bit_equal(a.q_cheap->value()));
  }
  SUBCASE("no adjoint reaches the hidden state") {
    Tape t;
    Var x = t.leaf(h);
    const auto a = m.ctrl->score(t, 1, x);
    t.backward(add(sum(a.u), sum(*a.q_full)));
    const Tensor g_x = t.grad(x);
    for (double g : g_x.storage()) CHECK(g == 0.0);
  }
  SUBCASE("controller gradients match finite differences") {
    const std::vector<ParamId> ids = m.controller_ids();
    const Controller& c = *m.ctrl;
    auto f = [&](Tape& t) {
      const auto a = c.score(t, 2, t.constant(h));
      return add(sum(square(a.u)), sum(mul(*a.q_full, *a.q_cheap)));
    };
    GradCheckOptions opt;
    opt.max_coords_per_input = 6;
    CHECK(finite_difference_check_params(f, m.store, ids, opt).max_rel_error < 1e-4);
  }
}

TEST_CASE("g1 gradients match finite differences") {
  TinyModel m(GateKind::g1, 5);
  Rng rng(6);
  Tensor h({6, 16});
  for (double& v : h.storage()) v = rng.normal();
  const Controller& c = *m.ctrl;
  auto f = [&](Tape& t) { return sum(square(c.score(t, 1, t.constant(h)).u)); };
  CHECK(finite_difference_check_params(f, m.store, m.controller_ids(), {}).max_rel_error < 1e-4);
}

TEST_CASE("jepa targets") {
  TinyModel m(GateKind::g3, 7);
  const auto* g = dynamic_cast<const JepaGate*>(m.ctrl.get());
  Rng rng(8);
  Tensor hf({5, 16}), hc({5, 16});
  for (double& v : hf.storage()) v = rng.normal();
  for (double& v : hc.storage()) v = rng.normal();
  Tape t;
  Var a = t.leaf(hf), b = t.leaf(hc);
  auto [zf, zc] = g->targets(t, a, b);
  CHECK(zf.shape() == Shape{5, 4});
  auto [zf2, zc2] = g->targets(t, a, a);
  CHECK(zf2.value().bit_equal(zc2.value()));
  for (std::size_t r = 0; r < 5; ++r) {
    double nz = 0.0, nh = 0.0;
    for (std::size_t c = 0; c < 4; ++c) nz += zf.value().at(r, c) * zf.value().at(r, c);
    for (std::size_t c = 0; c < 16; ++c) nh += hf.at(r, c) * hf.at(r, c);
    CHECK(nz <= nh);
  }
  t.backward(add(sum(zf), sum(zc)));
  const Tensor g_a = t.grad(a);
  for (double x : g_a.storage()) CHECK(x == 0.0);
  CHECK_FALSE(m.store.trainable(g->target_head()));
}

TEST_CASE("jepa loss") {
  Tape t(false);
  Tensor z = Tensor::matrix(2, 3, {1, 2, 3, -1, 0, 2});
  Tensor perp = Tensor::matrix(2, 3, {-2, 1, 0, 0, 1, 0});
  Tensor neg = z;
  for (double& v : neg.storage()) v = -v;
  Var zv = t.constant(z);
  CHECK(jepa_loss(zv, zv, zv, zv).value().item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(jepa_loss(t.constant(perp), t.constant(perp), zv, zv).value().item() == doctest::Approx(2.0));
  CHECK(jepa_loss(t.constant(neg), t.constant(neg), zv, zv).value().item() == doctest::Approx(4.0));

  Rng rng(9);
  std::vector<Tensor> in;
  for (int i = 0; i < 4; ++i) {
    Tensor x({5, 4});
    for (double& v : x.storage()) v = rng.normal();
    in.push_back(x);
  }
  ScalarFn f = [](Tape&, std::span<const Var> x) { return jepa_loss(x[0], x[1], x[2], x[3]); };
  CHECK(finite_difference_check(f, in).max_rel_error < 1e-4);
}

TEST_CASE("orthogonal rows") {
  Rng a(10), b(10);
  const Tensor q = orthogonal_rows(8, 64, a);
  CHECK(q.bit_equal(orthogonal_rows(8, 64, b)));
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 64; ++c) dot += q.at(i, c) * q.at(j, c);
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-6);
    }
  Rng c(11);
  CHECK(std::abs(std::abs(determinant(orthogonal_rows(12, 12, c))) - 1.0) < 1e-4);
  Rng d(12);
  CHECK_THROWS_AS(orthogonal_rows(5, 4, d), ConfigError);
}

TEST_CASE("derangement") {
  Rng rng(13);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + rng.index(50);
    const auto p = derangement(n, rng);
    std::set<std::size_t> seen(p.begin(), p.end());
    CHECK(seen.size() == n);
    CHECK(*seen.rbegin() == n - 1);
    for (std::size_t i = 0; i < n; ++i) CHECK(p[i] != i);
  }
  // Three elements: the only offsets are 1 and 2.
  Rng r3(0);
  const auto p3 = derangement(3, r3);
  CHECK((p3 == std::vector<std::size_t>{1, 2, 0} || p3 == std::vector<std::size_t>{2, 0, 1}));
  Rng s1(77), s2(77);
  CHECK(derangement(40, s1) == derangement(40, s2));
  CHECK_THROWS_AS(derangement(1, rng), ConfigError);

  const Tensor in = Tensor::matrix(3, 2, {0, 1, 2, 3, 4, 5});
  const std::vector<std::size_t> perm{1, 2, 0};
  CHECK(permute_rows(in, perm).bit_equal(Tensor::matrix(3, 2, {2, 3, 4, 5, 0, 1})));
}

TEST_CASE("gate kind names") {
  CHECK(parse_gate_kind("g1") == GateKind::g1);
  CHECK(parse_gate_kind("g1-costmatch") == GateKind::g1_costmatch);
  CHECK(parse_gate_kind("g3") == GateKind::g3);
  CHECK_THROWS_AS(parse_gate_kind("g2"), ConfigError);
}
