// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "condepth/error.hpp"
#include "condepth/gradcheck.hpp"
#include "condepth/optim.hpp"
#include "condepth/rng.hpp"
#include "condepth/tape.hpp"
#include "doctest.h"

using namespace condepth;

namespace {

Tensor randn(Shape shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = s * rng.normal();
  return t;
}

// Reference sums written out longhand, independent of the kernels.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out(Shape{a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  ScalarFn f;
};

// Weighted sum with fixed random weights so every output element matters.
Var probe(Var out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(out.shape());
  for (double& v : w.storage()) v = rng.normal();
  return sum(mul(out, out.tape().constant(std::move(w))));
}

std::vector<OpCase> op_cases(std::size_t n, std::size_t m, std::size_t k) {
  auto mat = [](std::size_t r, std::size_t c, double s = 1.0) {
    return [=](Rng& g) { return std::vector<Tensor>{randn({r, c}, g, s)}; };
  };
  auto two = [](Shape a, Shape b) {
    return [=](Rng& g) { return std::vector<Tensor>{randn(a, g), randn(b, g)}; };
  };
  std::vector<OpCase> cases;
  cases.push_back({"matmul", two({n, k}, {k, m}), [](Tape&, std::span<const Var> x) { return probe(matmul(x[0], x[1]), 1); }});
  cases.push_back({"matmul_bt", two({n, k}, {m, k}), [](Tape&, std::span<const Var> x) { return probe(matmul_bt(x[0], x[1]), 2); }});
  cases.push_back({"add", two({n, m}, {n, m}), [](Tape&, std::span<const Var> x) { return probe(add(x[0], x[1]), 3); }});
  cases.push_back({"sub", two({n, m}, {n, m}), [](Tape&, std::span<const Var> x) { return probe(sub(x[0], x[1]), 4); }});
  cases.push_back({"mul", two({n, m}, {n, m}), [](Tape&, std::span<const Var> x) { return probe(mul(x[0], x[1]), 5); }});
  cases.push_back({"add_bias", two({n, m}, {m}), [](Tape&, std::span<const Var> x) { return probe(add_bias(x[0], x[1]), 6); }});
  cases.push_back({"mul_rows", two({n, m}, {n}), [](Tape&, std::span<const Var> x) { return probe(mul_rows(x[0], x[1]), 7); }});
  cases.push_back({"mix_rows",
                   [=](Rng& g) {
                     Tensor w({n});
                     for (double& v : w.storage()) v = g.uniform();
                     return std::vector<Tensor>{w, randn({n, m}, g), randn({n, m}, g)};
                   },
                   [](Tape&, std::span<const Var> x) { return probe(mix_rows(x[0], x[1], x[2]), 8); }});
  cases.push_back({"scale", mat(n, m), [](Tape&, std::span<const Var> x) { return probe(scale(add_scalar(x[0], 0.3), -1.7), 9); }});
  cases.push_back({"square", mat(n, m), [](Tape&, std::span<const Var> x) { return probe(square(x[0]), 10); }});
  cases.push_back({"silu", mat(n, m, 2.0), [](Tape&, std::span<const Var> x) { return probe(silu(x[0]), 11); }});
  cases.push_back({"sigmoid", mat(n, m, 2.0), [](Tape&, std::span<const Var> x) { return probe(sigmoid(x[0]), 12); }});
  cases.push_back({"relu", mat(n, m), [](Tape&, std::span<const Var> x) { return probe(relu(x[0]), 13); }});
  cases.push_back({"softplus", mat(n, m, 3.0), [](Tape&, std::span<const Var> x) { return probe(softplus(x[0]), 14); }});
  cases.push_back({"softmax", mat(n, m, 2.0), [](Tape&, std::span<const Var> x) { return probe(softmax(x[0]), 15); }});
  cases.push_back({"layer_norm",
                   [=](Rng& g) { return std::vector<Tensor>{randn({n, m + 1}, g), randn({m + 1}, g), randn({m + 1}, g)}; },
                   [](Tape&, std::span<const Var> x) { return probe(layer_norm(x[0], x[1], x[2]), 16); }});
  cases.push_back({"cosine_similarity", two({n, m}, {n, m}),
                   [](Tape&, std::span<const Var> x) { return probe(cosine_similarity(x[0], x[1]), 17); }});
  cases.push_back({"cross_entropy", mat(n, m + 1, 2.0), [=](Tape&, std::span<const Var> x) {
                     std::vector<int> targets(n);
                     for (std::size_t i = 0; i < n; ++i) targets[i] = i % 3 == 2 ? -1 : static_cast<int>((i * 7) % (m + 1));
                     return probe(cross_entropy(x[0], targets), 18);
                   }});
  cases.push_back({"huber", two({n, m}, {n, m}), [](Tape&, std::span<const Var> x) { return probe(huber(x[0], x[1], 0.7), 19); }});
  cases.push_back({"concat_cols", two({n, m}, {n, k}), [](Tape&, std::span<const Var> x) {
                     return probe(concat_cols({x[0], x[1], x[0]}), 20);
                   }});
  cases.push_back({"repeat_rows", mat(1, m), [=](Tape&, std::span<const Var> x) {
                     return probe(repeat_rows(reshape(x[0], {m}), n), 21);
                   }});
  cases.push_back({"gather", mat(n, m), [=](Tape&, std::span<const Var> x) {
                     std::vector<std::size_t> idx;
                     for (std::size_t i = 0; i < n * m; i += 2) idx.push_back((i * 5) % (n * m));
                     return probe(gather(x[0], idx), 22);
                   }});
  cases.push_back({"gather_rows", mat(n, m), [=](Tape&, std::span<const Var> x) {
                     std::vector<int> ids;
                     for (std::size_t i = 0; i < n + 2; ++i) ids.push_back(static_cast<int>((i * 3) % n));
                     return probe(gather_rows(x[0], ids), 23);
                   }});
  cases.push_back({"mean", mat(n, m), [](Tape&, std::span<const Var> x) { return mean(square(x[0])); }});
  return cases;
}

}  // namespace

TEST_CASE("primitive values") {
  Tape t(false);
  CHECK(silu(t.constant(Tensor::scalar(0.0))).value().item() == 0.0);
  CHECK(softplus(t.constant(Tensor::scalar(0.0))).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Rng rng(3);
  Tensor x = randn({4, 6}, rng);
  Var c = cosine_similarity(t.constant(x), t.constant(x));
  for (double v : c.value().span()) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
  // Zero vectors hit the denominator floor instead of dividing by zero.
  Var z = cosine_similarity(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3})));
  CHECK(z.value()[0] == 0.0);
  CHECK(z.value().all_finite());
  Tensor a = randn({5, 7}, rng), b = randn({7, 3}, rng);
  CHECK(max_abs_diff(matmul(t.constant(a), t.constant(b)).value(), naive_matmul(a, b)) < 1e-12);
}

TEST_CASE("shape mismatch is a configuration error") {
  Tape t;
  Var a = t.leaf(Tensor({2, 3})), b = t.leaf(Tensor({2, 4}));
  CHECK_THROWS_AS(add(a, b), ConfigError);
  CHECK_THROWS_AS(matmul(a, a), ConfigError);
  CHECK_THROWS_AS(concat_cols({a, t.leaf(Tensor({3, 3}))}), ConfigError);
}

TEST_CASE("backward contracts") {
  Rng rng(11);
  Tensor x0 = randn({3, 4}, rng);
  {
    Tape t;
    Var x = t.leaf(x0);
    Var loss = sum(stop_gradient(x));
    CHECK(loss.value().item() == doctest::Approx(sum(t.constant(x0)).value().item()));
    t.backward(loss);
    const Tensor g_x = t.grad(x);
    for (double g : g_x.storage()) CHECK(g == 0.0);
  }
  {
    Tape t;
    Var x = t.leaf(x0);
    t.backward(scale(sum(square(x)), 0.5));
    CHECK(t.grad(x).bit_equal(x0));
  }
  {
    Tape t;
    Var x = t.leaf(x0);
    CHECK_THROWS_AS(t.backward(x), UsageError);
    Var s = sum(x);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), UsageError);
  }
  {
    // Forward value of the straight-through op is the hard tensor exactly.
    Tape t;
    Var soft = t.leaf(randn({6}, rng));
    Tensor hard = Tensor::vector({1, 0, 0, 1, 1, 0});
    Var st = straight_through(hard, soft);
    CHECK(st.value().bit_equal(hard));
    t.backward(probe(st, 5));
    Tape t2;
    Var soft2 = t2.leaf(soft.value());
    t2.backward(probe(soft2, 5));
    CHECK(t.grad(soft).bit_equal(t2.grad(soft2)));
  }
}

TEST_CASE("every primitive matches finite differences on 100+ random shapes") {
  std::size_t checked = 0;
  double worst = 0.0;
  std::string worst_name;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng shapes(1000 + seed);
    const std::size_t n = 1 + shapes.index(5), m = 1 + shapes.index(6), k = 1 + shapes.index(4);
    for (const OpCase& c : op_cases(n, m, k)) {
      Rng g(seed * 97 + checked);
      const auto inputs = c.inputs(g);
      GradCheckOptions opt;
      opt.seed = seed;
      const GradCheckReport r = finite_difference_check(c.f, inputs, opt);
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_name = c.name + " seed " + std::to_string(seed);
      }
      ++checked;
    }
  }
  INFO("worst: " << worst_name << " " << worst);
  CHECK(checked >= 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("causal attention matches finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng g(seed);
    const std::size_t T = 3 + seed, heads = 1 + seed % 2, d = 4 * heads;
    std::vector<Tensor> in{randn({2 * T, 3 * d}, g, 0.7)};
    ScalarFn f = [=](Tape&, std::span<const Var> x) { return probe(causal_attention(x[0], T, heads), 31); };
    GradCheckOptions opt;
    opt.seed = seed;
    opt.max_coords_per_input = 48;
    CHECK(finite_difference_check(f, in, opt).max_rel_error < 1e-4);
  }
}

TEST_CASE("causal attention ignores later positions") {
  Rng g(4);
  const std::size_t T = 6, d = 8;
  Tensor qkv = randn({T, 3 * d}, g);
  Tape t(false);
  Tensor base = causal_attention(t.constant(qkv), T, 2).value();
  for (std::size_t c = 0; c < 3 * d; ++c) qkv.at(4, c) += 1.0;
  Tensor moved = causal_attention(t.constant(qkv), T, 2).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < d; ++c) CHECK(base.at(r, c) == moved.at(r, c));
}

TEST_CASE("gradcheck on a quadratic form is exact up to rounding") {
  Rng g(9);
  Tensor A = randn({5, 5}, g);
  ScalarFn f = [&](Tape& t, std::span<const Var> x) {
    Var v = reshape(x[0], {1, 5});
    return sum(mul(matmul(v, t.constant(A)), v));
  };
  CHECK(finite_difference_check(f, {randn({5}, g)}).max_rel_error < 1e-8);
}

TEST_CASE("cosine loss near aligned vectors") {
  Rng g(12);
  Tensor a = randn({3, 8}, g);
  Tensor b = a;
  for (double& v : b.storage()) v += 1e-2 * g.normal();
  ScalarFn f = [](Tape&, std::span<const Var> x) { return sum(add_scalar(scale(cosine_similarity(x[0], x[1]), -1.0), 1.0)); };
  GradCheckOptions opt;
  opt.max_coords_per_input = 24;
  CHECK(finite_difference_check(f, {a, b}, opt).max_rel_error < 1e-4);
}

TEST_CASE("clip_global_norm") {
  Gradients g{Tensor::vector({0.3, 0.4}), Tensor()};
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(0.5));
  CHECK(g[0][0] == 0.3);
  CHECK(g[0][1] == 0.4);

  Gradients h{Tensor::vector({1.2, 0.0}), Tensor::vector({1.6})};
  CHECK(clip_global_norm(h, 1.0) == doctest::Approx(2.0));
  CHECK(h[0][0] == doctest::Approx(0.6));
  CHECK(h[1][0] == doctest::Approx(0.8));

  Gradients z{Tensor::vector({0.0, 0.0})};
  CHECK(clip_global_norm(z, 1.0) == 0.0);
  CHECK(z[0][0] == 0.0);
}

TEST_CASE("lr schedule") {
  OptimConfig c;
  c.lr = 2e-4;
  c.warmup_steps = 1000;
  c.total_steps = 20000;
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(500, c) == doctest::Approx(1e-4));
  CHECK(lr_at(1000, c) == doctest::Approx(2e-4).epsilon(1e-15));
  CHECK(lr_at(20000, c) == doctest::Approx(2e-6).epsilon(1e-12));
  // Continuity at the warmup boundary.
  CHECK(std::abs(lr_at(1001, c) - lr_at(1000, c)) < 1e-10);
  const double mid = 2e-6 + (2e-4 - 2e-6) * 0.5;
  CHECK(lr_at(10500, c) == doctest::Approx(mid).epsilon(1e-12));
  for (std::size_t s = 1000; s < 20000; s += 100) CHECK(lr_at(s + 100, c) <= lr_at(s, c));
}

TEST_CASE("adamw") {
  OptimConfig c;
  c.lr = 1e-2;
  c.weight_decay = 0.1;
  c.warmup_steps = 0;
  c.total_steps = 1000;
  c.final_lr_fraction = 1.0;  // constant rate
  ParamStore store;
  const ParamId w = store.add("w", Tensor::vector({1.0, -2.0}));
  const ParamId f = store.add("frozen", Tensor::vector({3.0}));
  store.set_partition([](std::string_view n) { return n == "w"; });

  SUBCASE("zero gradient applies decoupled decay only") {
    adamw_step(store, Gradients{Tensor::vector({0.0, 0.0}), Tensor()}, 1, c);
    CHECK(store.value(w)[0] == doctest::Approx(1.0 * (1 - 1e-2 * 0.1)).epsilon(1e-15));
    CHECK(store.value(w)[1] == doctest::Approx(-2.0 * (1 - 1e-2 * 0.1)).epsilon(1e-15));
    CHECK(store.value(f)[0] == 3.0);
  }
  SUBCASE("frozen gradient is a partition violation") {
    const auto before = store.frozen_hash();
    CHECK_THROWS_AS(adamw_step(store, Gradients{Tensor::vector({0.0, 0.0}), Tensor::vector({1.0})}, 1, c),
                    InternalError);
    CHECK(store.frozen_hash() == before);
  }
  SUBCASE("constant gradient moves by lr per step") {
    c.weight_decay = 0.0;
    const auto before = store.frozen_hash();
    for (std::size_t s = 1; s <= 50; ++s) {
      const double prev = store.value(w)[0];
      adamw_step(store, Gradients{Tensor::vector({0.5, -3.0}), Tensor()}, s, c);
      // Bias correction makes m_hat / sqrt(v_hat) = sign(g) from step one.
      CHECK(prev - store.value(w)[0] == doctest::Approx(1e-2).epsilon(1e-6));
      CHECK(store.frozen_hash() == before);
    }
  }
  CHECK_THROWS_AS(store.set_partition([](std::string_view) { return true; }), UsageError);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = Rng(5).fork(1), d = Rng(5).fork(1), e = Rng(5).fork(2);
  CHECK(c.next_u64() == d.next_u64());
  CHECK(c.next_u64() != e.next_u64());
  Rng u(8);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) mean += u.normal();
  CHECK(std::abs(mean / 20000) < 0.05);
}
