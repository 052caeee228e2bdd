// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "condepth/gradcheck.hpp"
#include "condepth/oracle.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace condepth;
using condepth::testing::TinyModel;

namespace {

// Per-position next-token CE from raw logits, computed by hand.
std::vector<double> position_ce(const Tensor& logits, const std::vector<int>& tokens, std::size_t T) {
  std::vector<double> ce(tokens.size(), 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i % T == T - 1) continue;
    double mx = -1e300;
    for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, logits.at(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits.at(i, c) - mx);
    ce[i] = std::log(z) + mx - logits.at(i, static_cast<std::size_t>(tokens[i + 1]));
  }
  return ce;
}

// Windowed sum restricted to one sequence and to positions with a target.
std::vector<double> windowed(const std::vector<double>& ce, std::size_t T, std::size_t W, double gamma) {
  std::vector<double> out(ce.size(), 0.0);
  for (std::size_t i = 0; i < ce.size(); ++i) {
    const std::size_t t = i % T, base = i - t;
    double w = 1.0;
    for (std::size_t d = 0; d < W && t + d < T - 1; ++d, w *= gamma) out[i] += w * ce[base + t + d];
  }
  return out;
}

// Forks controlled layer `fork` with everything after it forced full.
Tensor fork_logits(const TinyModel& m, std::size_t fork, LayerMode at_fork, LayerMode before) {
  ForcingPlan plan = ForcingPlan::uniform(m.cfg.n_controlled, LayerMode::force_full);
  for (std::size_t i = 0; i < fork; ++i) plan.modes[i] = before;
  plan.modes[fork] = at_fork;
  Tape t(false);
  return model_forward(t, *m.model, m.tokens, plan, m.ctrl.get(), m.gate).logits.value();
}

}  // namespace

TEST_CASE("windowed cross-entropy") {
  const std::vector<double> ce{1, 2, 4};
  CHECK(windowed_ce(ce, 0, 2, 0.5) == 2.0);
  CHECK(windowed_ce(ce, 1, 1, 0.5) == 2.0);
  CHECK(windowed_ce(ce, 2, 8, 0.5) == 4.0);
  CHECK(windowed_ce(ce, 0, 8, 0.5) == 1.0 + 1.0 + 1.0);
}

TEST_CASE("refresh schedule") {
  OracleConfig c;
  CHECK_FALSE(labels_due(50, c));
  CHECK_FALSE(labels_due(100, c));
  CHECK(labels_due(105, c));
  CHECK_FALSE(labels_due(103, c));
  CHECK(labels_due(110, c));
  std::size_t due = 0;
  for (std::size_t s = 1; s <= 2000; ++s) due += labels_due(s, c);
  CHECK(due == 380);
}

TEST_CASE("labels match a hand-built fork construction") {
  for (PrefixPolicy prefix : {PrefixPolicy::on_policy, PrefixPolicy::forced_full}) {
    CAPTURE(to_string(prefix));
    TinyModel m(GateKind::g3, 21, 0.4, 3);
    OracleConfig oc;
    oc.prefix = prefix;
    oc.window = 3;
    Tape t(false);
    const auto train = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(2, LayerMode::gate), m.ctrl.get(), m.gate);
    const UtilityLabels labels = compute_labels(*m.model, m.tokens, train, oc);
    REQUIRE(labels.active);
    const LayerMode before = prefix == PrefixPolicy::on_policy ? LayerMode::gate : LayerMode::force_full;
    const std::size_t T = m.cfg.seq_len, n = m.tokens.size();
    for (std::size_t l = 0; l < 2; ++l) {
      const auto full = windowed(position_ce(fork_logits(m, l, LayerMode::force_full, before), m.tokens, T), T, 3, 0.5);
      const auto cheap = windowed(position_ce(fork_logits(m, l, LayerMode::force_cheap, before), m.tokens, T), T, 3, 0.5);
      for (std::size_t i = 0; i < n; ++i) {
        if (i % T == T - 1) {
          CHECK(labels.valid[i] == 0.0);
          continue;
        }
        CHECK(labels.valid[i] == 1.0);
        CHECK(labels.wce_full.at(l, i) == doctest::Approx(full[i]).epsilon(1e-12));
        CHECK(labels.wce_cheap.at(l, i) == doctest::Approx(cheap[i]).epsilon(1e-12));
        CHECK(labels.u_star.at(l, i) == labels.wce_cheap.at(l, i) - labels.wce_full.at(l, i));
        // Swapping the branch roles negates the label exactly.
        CHECK(-(labels.wce_full.at(l, i) - labels.wce_cheap.at(l, i)) == labels.u_star.at(l, i));
      }
    }
  }
}

TEST_CASE("shared construction is bit-identical to the naive one") {
  for (std::uint64_t seed = 0; seed < 4; ++seed)
    for (PrefixPolicy prefix : {PrefixPolicy::on_policy, PrefixPolicy::forced_full}) {
      TinyModel m(seed % 2 ? GateKind::g1 : GateKind::g3, 30 + seed);
      OracleConfig oc;
      oc.prefix = prefix;
      Tape t(false);
      const auto train = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(2, LayerMode::gate), m.ctrl.get(), m.gate);
      const UtilityLabels a = compute_labels(*m.model, m.tokens, train, oc);
      const UtilityLabels b = compute_labels_naive(*m.model, m.tokens, m.ctrl.get(), m.gate, oc);
      const UtilityLabels c = compute_labels(*m.model, m.tokens, train, oc);
      CHECK(a.u_star.bit_equal(b.u_star));
      CHECK(a.u_star.bit_equal(c.u_star));
      CHECK(b.work.suffix_passes == 4);
      CHECK(a.work.suffix_passes == (prefix == PrefixPolicy::forced_full ? 3 : 4));
    }
}

TEST_CASE("identical branches give zero labels") {
  TinyModel m(GateKind::g1, 40, 0.0);
  for (std::size_t l = 1; l < 3; ++l)
    for (const char* part : {".ffn.w_down", ".ffn.b_down"})
      m.store.mutable_value(m.store.at("layers." + std::to_string(l) + part)).fill(0.0);
  Tape t(false);
  const auto train = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(2, LayerMode::gate), m.ctrl.get(), m.gate);
  const UtilityLabels labels = compute_labels(*m.model, m.tokens, train, OracleConfig{});
  for (double v : labels.u_star.span()) CHECK(v == 0.0);
}

TEST_CASE("huber utility loss") {
  Tape t(false);
  UtilityLabels labels;
  labels.active = true;
  labels.u_star = Tensor::matrix(1, 4, {1.0, 1.0, -1.0, 7.0});
  labels.valid = Tensor::vector({1, 1, 1, 0});
  auto loss = [&](std::vector<double> u) {
    std::vector<Var> s{t.constant(Tensor::vector(std::move(u)))};
    return huber_util_loss(s, labels, 1.0).value().item();
  };
  CHECK(loss({1.0, 1.0, -1.0, 0.0}) == 0.0);
  CHECK(loss({1.5, 0.5, -1.5, 0.0}) == doctest::Approx(0.125));
  CHECK(loss({3.0, -1.0, 1.0, 0.0}) == doctest::Approx(1.5));
  labels.active = false;
  CHECK(loss({3.0, -1.0, 1.0, 0.0}) == 0.0);
}

TEST_CASE("pairwise rank loss") {
  // One sequence of three positions: only the pair (0, 1) carries labels.
  Tape t(false);
  UtilityLabels labels;
  labels.active = true;
  labels.u_star = Tensor::matrix(1, 3, {2.0, 1.0, 0.0});
  labels.valid = Tensor::vector({1, 1, 0});
  Rng rng(1);
  auto loss = [&](std::vector<double> u) {
    std::vector<Var> s{t.constant(Tensor::vector(std::move(u)))};
    return pairwise_rank_loss(s, labels, 3, 64, rng).value().item();
  };
  CHECK(loss({0.0, 0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss({60.0, 30.0, 0.0}) < 1e-12);
  CHECK(loss({0.0, 30.0, 0.0}) == doctest::Approx(30.0).epsilon(1e-12));
  labels.u_star = Tensor::matrix(1, 3, {1.0, 1.0, 0.0});
  CHECK(loss({0.0, 3.0, 1.0}) == 0.0);
  labels.active = false;
  CHECK(loss({0.0, 3.0, 1.0}) == 0.0);
}

TEST_CASE("rank loss gradient matches finite differences") {
  UtilityLabels labels;
  labels.active = true;
  Rng g(3);
  labels.u_star = Tensor({2, 16});
  for (double& v : labels.u_star.storage()) v = g.normal();
  labels.valid = Tensor(Shape{16}, 1.0);
  for (std::size_t i = 7; i < 16; i += 8) labels.valid[i] = 0.0;
  Tensor u1({16}), u2({16});
  for (double& v : u1.storage()) v = g.normal();
  for (double& v : u2.storage()) v = g.normal();
  ScalarFn f = [&](Tape&, std::span<const Var> x) {
    Rng pairs(5);
    std::vector<Var> s{x[0], x[1]};
    return add(pairwise_rank_loss(s, labels, 8, 64, pairs), huber_util_loss(s, labels, 1.0));
  };
  CHECK(finite_difference_check(f, {u1, u2}).max_rel_error < 1e-4);
}

TEST_CASE("oracle config validation") {
  OracleConfig c;
  CHECK_NOTHROW(c.validate());
  c.window = 0;
  CHECK_THROWS(c.validate());
  c = OracleConfig{};
  c.decay = 0.0;
  CHECK_THROWS(c.validate());
  c = OracleConfig{};
  c.interval = 0;
  CHECK_THROWS(c.validate());
  CHECK(parse_prefix_policy("forced_full") == PrefixPolicy::forced_full);
  CHECK(to_string(PrefixPolicy::on_policy) == "on_policy");
}
