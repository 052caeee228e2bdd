// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <string>

#include "commands.hpp"
#include "condepth/gradcheck.hpp"
#include "condepth/harness.hpp"

namespace condepth::cli {

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.n_layers = 3;
  m.n_controlled = 2;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_ff = 32;
  m.cheap_rank = 4;
  m.vocab_size = 32;
  m.seq_len = 8;
  m.d_context = 8;
  m.d_summary = 4;
  m.d_action = 2;
  return m;
}

struct Fixture {
  ModelConfig cfg = tiny_model();
  GateConfig gate;
  ParamStore store;
  std::unique_ptr<Backbone> model;
  std::unique_ptr<Controller> ctrl;
  std::vector<int> tokens;

  Fixture(GateKind kind, std::uint64_t seed) {
    Rng rng(seed);
    model = std::make_unique<Backbone>(cfg, store, rng);
    ctrl = make_controller(kind, cfg, store, rng);
    // Non-zero cheap down projections so the cheap path carries gradient.
    for (ParamId id = 0; id < store.size(); ++id)
      if (store.name(id).find("cheap_ffn") == 0 && store.name(id).find("w_down") != std::string::npos)
        for (double& v : store.mutable_value(id).storage()) v = 0.3 * rng.normal();
    store.set_partition(controller_only_partition(*ctrl));
    for (std::size_t i = 0; i < 2 * cfg.seq_len; ++i) tokens.push_back(static_cast<int>(rng.index(cfg.vocab_size)));
  }

  std::vector<ParamId> trainable() const {
    std::vector<ParamId> out;
    for (ParamId id = 0; id < store.size(); ++id)
      if (store.trainable(id)) out.push_back(id);
    return out;
  }
};

int report(const std::string& name, bool ok, const std::string& detail, bool verbose, int& failures) {
  if (!ok) ++failures;
  if (verbose || !ok) std::printf("%s %-40s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  return ok ? 0 : 1;
}

std::string rel(const GradCheckReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "max rel err %.2e over %zu coords", r.max_rel_error, r.coords_checked);
  return buf;
}

}  // namespace

int run_checks(std::uint64_t seed, bool verbose) {
  int failures = 0;
  GradCheckOptions opt;
  opt.seed = seed;
  opt.max_coords_per_input = 6;

  {
    Fixture fx(GateKind::g3, seed);
    const ForcingPlan plan = ForcingPlan::uniform(fx.cfg.n_controlled, LayerMode::gate);
    const auto* jg = dynamic_cast<const JepaGate*>(fx.ctrl.get());
    auto jepa = [&](Tape& t) {
      ForwardResult r = model_forward(t, *fx.model, fx.tokens, plan, fx.ctrl.get(), fx.gate);
      std::vector<Var> terms;
      for (const LayerTrace& tr : r.traces) {
        auto [zf, zc] = jg->targets(t, tr.h_full, tr.h_cheap);
        terms.push_back(jepa_loss(*tr.q_full, *tr.q_cheap, zf, zc));
      }
      return add(terms[0], terms[1]);
    };
    // Controller parameters only: the targets and the G3 context read the
    // backbone through stop-gradients, which finite differences do not see.
    std::vector<ParamId> ids;
    for (ParamId id : fx.trainable())
      if (fx.ctrl->owns(fx.store.name(id))) ids.push_back(id);
    const auto r = finite_difference_check_params(jepa, fx.store, ids, opt);
    report("jepa loss gradient", r.passed(1e-4), rel(r), verbose, failures);

    auto budget = [&](Tape& t) {
      ForwardResult r2 = model_forward(t, *fx.model, fx.tokens, plan, fx.ctrl.get(), fx.gate);
      std::vector<Var> means;
      for (const LayerTrace& tr : r2.traces) means.push_back(mean(tr.p));
      return add(budget_loss(means, 0.3), alive_loss(means, 0.9));
    };
    const auto rb = finite_difference_check_params(budget, fx.store, ids, opt);
    report("budget + alive gradient", rb.passed(1e-4), rel(rb), verbose, failures);

    std::vector<ParamId> cheap;
    for (ParamId id : fx.trainable())
      if (Backbone::is_cheap_path_param(fx.store.name(id))) cheap.push_back(id);
    auto lm = [&](Tape& t) {
      ForwardResult r3 = model_forward(t, *fx.model, fx.tokens, plan, fx.ctrl.get(), fx.gate);
      return mean(cross_entropy(r3.logits, next_token_targets(fx.tokens, fx.cfg.seq_len)));
    };
    const auto rl = finite_difference_check_params(lm, fx.store, cheap, opt);
    report("lm loss gradient (cheap path)", rl.passed(1e-4), rel(rl), verbose, failures);

    Tape tape(false);
    ForwardResult train = model_forward(tape, *fx.model, fx.tokens, plan, fx.ctrl.get(), fx.gate);
    const InferenceResult inf = inference_forward(*fx.model, fx.tokens, *fx.ctrl, fx.gate);
    report("straight-through forward identity", train.logits.value().bit_equal(inf.logits), "", verbose, failures);

    OracleConfig oc;
    oc.prefix = PrefixPolicy::forced_full;
    const UtilityLabels a = compute_labels(*fx.model, fx.tokens, train, oc);
    const UtilityLabels b = compute_labels_naive(*fx.model, fx.tokens, fx.ctrl.get(), fx.gate, oc);
    report("oracle shared pass matches naive", a.u_star.bit_equal(b.u_star), "", verbose, failures);
  }
  {
    Fixture fx(GateKind::g1, seed + 1);
    const ForcingPlan plan = ForcingPlan::uniform(fx.cfg.n_controlled, LayerMode::gate);
    Tape t0(false);
    ForwardResult r0 = model_forward(t0, *fx.model, fx.tokens, plan, fx.ctrl.get(), fx.gate);
    const UtilityLabels labels = compute_labels(*fx.model, fx.tokens, r0, OracleConfig{});
    // Last controlled layer only: earlier G1 gates also reach these losses
    // through the straight-through mask, whose adjoint is a surrogate.
    std::vector<ParamId> gate_ids;
    const std::string last = "g1." + std::to_string(fx.cfg.n_layers - 1) + ".";
    for (ParamId id : fx.trainable())
      if (fx.store.name(id).rfind(last, 0) == 0) gate_ids.push_back(id);
    auto util = [&](Tape& t) {
      ForwardResult r = model_forward(t, *fx.model, fx.tokens, plan, fx.ctrl.get(), fx.gate);
      std::vector<Var> u;
      for (const LayerTrace& tr : r.traces) u.push_back(tr.u);
      Rng pairs(seed);
      return add(huber_util_loss(u, labels, 1.0), pairwise_rank_loss(u, labels, fx.cfg.seq_len, 64, pairs));
    };
    const auto ru = finite_difference_check_params(util, fx.store, gate_ids, opt);
    report("util + rank gradient", ru.passed(1e-4), rel(ru), verbose, failures);
  }
  std::printf("check: %d failure(s)\n", failures);
  return failures;
}

}  // namespace condepth::cli
