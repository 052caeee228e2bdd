// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "condepth/gating.hpp"
#include "condepth/rng.hpp"
#include "condepth/tape.hpp"

namespace {

using namespace condepth;

Tensor random(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

// [N, K] x [K, M] as in the FFN up projection at desk scale.
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto m = static_cast<std::size_t>(state.range(2));
  Rng rng(1);
  const Tensor a = random({n, k}, rng), b = random({k, m}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value().data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * k * m, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Matmul)->Args({512, 64, 256})->Args({512, 256, 64})->Args({512, 64, 64});

void BM_MatmulBackward(benchmark::State& state) {
  Rng rng(2);
  const Tensor a = random({512, 64}, rng), b = random({64, 256}, rng);
  for (auto _ : state) {
    Tape tape;
    Var va = tape.leaf(a), vb = tape.leaf(b);
    tape.backward(sum(matmul(va, vb)));
    benchmark::DoNotOptimize(tape.grad(va).data());
  }
}
BENCHMARK(BM_MatmulBackward);

void BM_TopkBatched(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> u(8 * T);
  for (double& v : u) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(topk_mask_batched(u, T, topk_count(T, 0.5)));
}
BENCHMARK(BM_TopkBatched)->Arg(64)->Arg(256);

}  // namespace
