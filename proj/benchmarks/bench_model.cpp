// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <string>

#include "condepth/config.hpp"
#include "condepth/oracle.hpp"
#include "condepth/trainer.hpp"

namespace {

using namespace condepth;

std::vector<int> random_tokens(const ModelConfig& cfg, std::size_t batch, Rng& rng) {
  std::vector<int> tokens(batch * cfg.seq_len);
  for (int& x : tokens) x = static_cast<int>(rng.index(cfg.vocab_size));
  return tokens;
}

struct DeskModel {
  ModelConfig cfg;
  GateConfig gate;
  ParamStore store;
  std::unique_ptr<Backbone> model;
  std::unique_ptr<Controller> ctrl;
  std::vector<int> tokens;

  explicit DeskModel(GateKind kind) {
    Rng rng(7);
    model = std::make_unique<Backbone>(cfg, store, rng);
    ctrl = make_controller(kind, cfg, store, rng);
    store.set_partition(controller_only_partition(*ctrl));
    tokens = random_tokens(cfg, 8, rng);
  }
};

// Training-mode forward and backward over one desk batch (B=8, T=64).
void BM_TrainForwardBackward(benchmark::State& state) {
  DeskModel m(state.range(0) ? GateKind::g3 : GateKind::g1);
  const auto targets = next_token_targets(m.tokens, m.cfg.seq_len);
  const ForcingPlan plan = ForcingPlan::uniform(m.cfg.n_controlled, LayerMode::gate);
  for (auto _ : state) {
    Tape t;
    auto r = model_forward(t, *m.model, m.tokens, plan, m.ctrl.get(), m.gate);
    Var loss = mean(cross_entropy(r.logits, targets));
    t.backward(loss);
    benchmark::DoNotOptimize(t.param_grads(m.store));
  }
  state.SetLabel(state.range(0) ? "g3" : "g1");
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(m.tokens.size()));
}
BENCHMARK(BM_TrainForwardBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_InferenceForward(benchmark::State& state) {
  DeskModel m(GateKind::g1);
  for (auto _ : state) benchmark::DoNotOptimize(inference_forward(*m.model, m.tokens, *m.ctrl, m.gate).logits.data());
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(m.tokens.size()));
}
BENCHMARK(BM_InferenceForward)->Unit(benchmark::kMillisecond);

void BM_OracleLabels(benchmark::State& state) {
  DeskModel m(GateKind::g3);
  OracleConfig oc;
  oc.prefix = state.range(0) ? PrefixPolicy::forced_full : PrefixPolicy::on_policy;
  Tape t(false);
  const auto train = model_forward(t, *m.model, m.tokens, ForcingPlan::uniform(m.cfg.n_controlled, LayerMode::gate),
                                   m.ctrl.get(), m.gate);
  for (auto _ : state) benchmark::DoNotOptimize(compute_labels(*m.model, m.tokens, train, oc).u_star.data());
  state.SetLabel(std::string(to_string(oc.prefix)));
}
BENCHMARK(BM_OracleLabels)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// Full trainer step on a refresh step and on a plain step.
void BM_TrainerStep(benchmark::State& state) {
  std::string text;
  Rng rng(3);
  for (int d = 0; d < 60; ++d) {
    for (int i = 0; i < 2000; ++i) text += static_cast<char>('a' + rng.index(26));
    text += "\n\n";
  }
  const Corpus corpus = Corpus::from_text(text, 0.1, 0);
  ExperimentConfig c = preset("g3");
  c.oracle.warmup = 0;
  c.oracle.interval = state.range(0) ? 1 : 1000000;
  ParamStore backbone;
  Rng init(1);
  Backbone b(c.model, backbone, init);
  Trainer trainer(c, corpus, backbone);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step().total);
  state.SetLabel(state.range(0) ? "with labels" : "no labels");
}
BENCHMARK(BM_TrainerStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(20);

}  // namespace
