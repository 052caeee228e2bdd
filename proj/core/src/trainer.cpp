// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/trainer.hpp"

#include <cmath>
#include <string>

namespace condepth {

void LossWeights::validate() const {
  if (!(jepa >= 0.0 && util >= 0.0 && rank >= 0.0 && budget >= 0.0 && alive >= 0.0))
    throw ConfigError("loss weights must be nonnegative");
}

double total_loss(const LossParts& p, const LossWeights& w) {
  return p.lm + w.jepa * p.jepa + w.util * p.util + w.rank * p.rank + w.budget * p.budget + w.alive * p.alive;
}

void ExperimentConfig::validate() const {
  model.validate();
  gate_cfg.validate();
  oracle.validate();
  weights.validate();
  effective_optim().validate();
  if (steps == 0 || batch_size == 0 || eval_every == 0 || eval_batches == 0)
    throw ConfigError("steps, batch_size, eval_every and eval_batches must be positive");
  if (a2_shuffled && gate != GateKind::g3) throw ConfigError("a2_shuffled requires the g3 gate");
  if (a2_shuffled && batch_size * model.seq_len < 2) throw ConfigError("a2_shuffled needs at least two tokens per batch");
}

OptimConfig ExperimentConfig::effective_optim() const {
  OptimConfig o = optim;
  o.total_steps = steps;
  return o;
}

std::function<bool(std::string_view)> controller_only_partition(const Controller& controller) {
  return [&controller](std::string_view name) { return Backbone::is_cheap_path_param(name) || controller.owns(name); };
}

namespace {

double mean_ce(Var logits, std::span<const int> tokens, std::size_t seq_len) {
  const std::vector<int> targets = next_token_targets(tokens, seq_len);
  const Tensor ce = cross_entropy(logits, targets).value();
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ce.size(); ++i) {
    if (targets[i] < 0) continue;
    total += ce[i];
    ++n;
  }
  return total / static_cast<double>(n);
}

Var lm_loss(Var logits, std::span<const int> tokens, std::size_t seq_len) {
  const std::vector<int> targets = next_token_targets(tokens, seq_len);
  const std::size_t n_seq = tokens.size() / seq_len;
  return scale(sum(cross_entropy(logits, targets)), 1.0 / static_cast<double>(n_seq * (seq_len - 1)));
}

Var mean_of(std::span<const Var> terms) {
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

double evaluate(const Backbone& model, const Controller& controller, const GateConfig& gate,
                std::span<const std::vector<int>> batches) {
  if (batches.empty()) throw UsageError("evaluate: no batches");
  double total = 0.0;
  for (const auto& tokens : batches) {
    InferenceResult r = inference_forward(model, tokens, controller, gate);
    Tape tape(false);
    total += mean_ce(tape.constant(std::move(r.logits)), tokens, model.config().seq_len);
  }
  return total / static_cast<double>(batches.size());
}

double evaluate_dense(const Backbone& model, std::span<const std::vector<int>> batches) {
  if (batches.empty()) throw UsageError("evaluate_dense: no batches");
  const ForcingPlan plan = ForcingPlan::uniform(model.config().n_controlled, LayerMode::force_full);
  double total = 0.0;
  for (const auto& tokens : batches) {
    Tape tape(false);
    ForwardResult r = model_forward(tape, model, tokens, plan, nullptr, GateConfig{});
    total += mean_ce(r.logits, tokens, model.config().seq_len);
  }
  return total / static_cast<double>(batches.size());
}

double pretrain_backbone(Backbone& model, ParamStore& store, BatchStream& stream, std::size_t steps, double lr,
                         std::size_t warmup, const std::function<void(std::size_t, double)>& on_step) {
  if (!store.partitioned()) store.set_partition([](std::string_view n) { return !Backbone::is_cheap_path_param(n); });
  OptimConfig opt;
  opt.lr = lr;
  opt.total_steps = std::max<std::size_t>(steps, 1);
  opt.warmup_steps = std::min(warmup, opt.total_steps - 1);
  const ForcingPlan plan = ForcingPlan::uniform(model.config().n_controlled, LayerMode::force_full);
  double last = 0.0;
  for (std::size_t s = 1; s <= steps; ++s) {
    const std::vector<int> tokens = stream.next();
    Tape tape(true);
    ForwardResult r = model_forward(tape, model, tokens, plan, nullptr, GateConfig{});
    Var loss = lm_loss(r.logits, tokens, model.config().seq_len);
    last = loss.value().item();
    if (!std::isfinite(last)) throw TrainingDiverged("pretraining loss is not finite at step " + std::to_string(s));
    tape.backward(loss);
    Gradients g = tape.param_grads(store);
    clip_global_norm(g, opt.clip_norm);
    adamw_step(store, g, s, opt);
    if (on_step) on_step(s, last);
  }
  return last;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const ExperimentConfig& config, const Corpus& corpus, const ParamStore& backbone)
    : config_(config),
      train_(corpus.train(), config.model.seq_len, config.batch_size, splitmix64(config.seed ^ 0x7261696e)),
      aux_rng_(Rng(config.seed).fork(4)) {
  config_.validate();
  Rng init = Rng(config_.seed).fork(1);
  model_ = std::make_unique<Backbone>(config_.model, store_, init);
  Rng ctrl = Rng(config_.seed).fork(2);
  controller_ = make_controller(config_.gate, config_.model, store_, ctrl);
  for (ParamId id = 0; id < store_.size(); ++id) {
    const std::string& n = store_.name(id);
    if (Backbone::is_cheap_path_param(n) || controller_->owns(n) || n == "target_head") continue;
    if (!backbone.find(n)) throw ConfigError("pretrained backbone lacks tensor " + n);
  }
  copy_backbone_weights(backbone, store_);
  store_.set_partition(controller_only_partition(*controller_));
  cost_ = CostModel::make(config_.model, config_.gate);
  val_ = fixed_batches(corpus.val(), config_.model.seq_len, config_.batch_size, config_.eval_batches);
}

Trainer::Pass Trainer::forward_backward(std::span<const int> tokens, std::size_t step, bool with_labels) {
  const ModelConfig& mc = config_.model;
  const LossWeights& w = config_.weights;
  const std::size_t C = mc.n_controlled, N = tokens.size();
  Rng step_rng = aux_rng_.fork(step);
  Rng rank_rng = step_rng.fork(1);
  Rng shuffle_rng = step_rng.fork(2);

  Tape tape(true);
  const ForcingPlan plan = ForcingPlan::uniform(C, LayerMode::gate);
  ForwardResult fwd = model_forward(tape, *model_, tokens, plan, controller_.get(), config_.gate_cfg);

  Pass out;
  StepRecord& rec = out.record;
  rec.step = step;
  Var lm = lm_loss(fwd.logits, tokens, mc.seq_len);

  std::vector<Var> scores, mean_probs;
  double score_var = 0.0;
  for (const LayerTrace& tr : fwd.traces) {
    scores.push_back(tr.u);
    mean_probs.push_back(mean(tr.p));
    rec.mean_gate_prob.push_back(mean_probs.back().value().item());
    double full = 0.0;
    for (double m : tr.m_hard.storage()) full += m;
    rec.full_ratio.push_back(full / static_cast<double>(N));
    score_var += score_variance(tr.u.value().span());
  }
  rec.diag_util_score_var = score_var / static_cast<double>(C);
  Var budget = budget_loss(mean_probs, config_.gate_cfg.budget);
  Var alive = alive_loss(mean_probs, config_.gate_cfg.min_alive);

  double units = static_cast<double>(N * C) * (1.0 + cost_.cheap + cost_.controller);
  std::optional<Var> jepa;
  if (const auto* jg = dynamic_cast<const JepaGate*>(controller_.get())) {
    std::vector<Var> terms;
    double l2 = 0.0, cs = 0.0;
    for (const LayerTrace& tr : fwd.traces) {
      auto [zf, zc] = jg->targets(tape, tr.h_full, tr.h_cheap);
      if (config_.a2_shuffled) {
        const std::vector<std::size_t> perm = derangement(N, shuffle_rng);
        zf = tape.constant(permute_rows(zf.value(), perm));
        zc = tape.constant(permute_rows(zc.value(), perm));
      }
      terms.push_back(jepa_loss(*tr.q_full, *tr.q_cheap, zf, zc));
      const CollapseDiag d = collapse_diag(tr.q_full->value(), tr.q_cheap->value());
      l2 += d.l2;
      cs += d.cos;
    }
    jepa = mean_of(terms);
    rec.diag_qf_qc_l2 = l2 / static_cast<double>(C);
    rec.diag_qf_qc_cos = cs / static_cast<double>(C);
    units += static_cast<double>(N * C) * cost_.target_head;
  }

  std::optional<Var> util, rank;
  if (with_labels) {
    const UtilityLabels labels = compute_labels(*model_, tokens, fwd, config_.oracle);
    rec.labels = true;
    rec.oracle_passes = labels.work.suffix_passes;
    units += labels.work.ffn_units;
    if (w.util > 0.0) util = huber_util_loss(scores, labels, config_.oracle.huber_delta);
    if (w.rank > 0.0) rank = pairwise_rank_loss(scores, labels, mc.seq_len, config_.oracle.rank_pairs, rank_rng);
  }
  rec.compute_vs_full = units / static_cast<double>(N * C);

  Var total = lm;
  if (jepa && w.jepa > 0.0) total = add(total, scale(*jepa, w.jepa));
  if (util) total = add(total, scale(*util, w.util));
  if (rank) total = add(total, scale(*rank, w.rank));
  if (w.budget > 0.0) total = add(total, scale(budget, w.budget));
  if (w.alive > 0.0) total = add(total, scale(alive, w.alive));

  rec.loss.lm = lm.value().item();
  rec.loss.jepa = jepa ? jepa->value().item() : 0.0;
  rec.loss.util = util ? util->value().item() : 0.0;
  rec.loss.rank = rank ? rank->value().item() : 0.0;
  rec.loss.budget = budget.value().item();
  rec.loss.alive = alive.value().item();
  rec.total = total.value().item();
  if (!std::isfinite(rec.total))
    throw TrainingDiverged("non-finite loss at step " + std::to_string(step) + ": lm=" + std::to_string(rec.loss.lm) +
                           " jepa=" + std::to_string(rec.loss.jepa) + " util=" + std::to_string(rec.loss.util) +
                           " rank=" + std::to_string(rec.loss.rank) + " budget=" + std::to_string(rec.loss.budget));
  tape.backward(total);
  out.grads = tape.param_grads(store_);
  return out;
}

Gradients Trainer::gradients(std::span<const int> tokens, bool with_labels, std::size_t step_for_rng) {
  return forward_backward(tokens, step_for_rng, with_labels).grads;
}

StepRecord Trainer::step() {
  const std::size_t s = step_ + 1;
  const std::vector<int> tokens = train_.next();
  const bool with_labels = config_.uses_oracle() && labels_due(s, config_.oracle);
  Pass pass = forward_backward(tokens, s, with_labels);
  const OptimConfig opt = config_.effective_optim();
  pass.record.lr = lr_at(s, opt);
  pass.record.grad_norm = clip_global_norm(pass.grads, opt.clip_norm);
  if (!std::isfinite(pass.record.grad_norm))
    throw TrainingDiverged("non-finite gradient norm at step " + std::to_string(s));
  adamw_step(store_, pass.grads, s, opt);
  step_ = s;
  return pass.record;
}

double Trainer::evaluate() const { return condepth::evaluate(*model_, *controller_, config_.gate_cfg, val_); }

double Trainer::evaluate_dense() const { return condepth::evaluate_dense(*model_, val_); }

RunResult run_experiment(const ExperimentConfig& config, const Corpus& corpus, const ParamStore& backbone,
                         const std::function<void(const StepRecord&)>& on_step,
                         const std::function<void(const EvalPoint&)>& on_eval) {
  Trainer trainer(config, corpus, backbone);
  RunResult result;
  result.frozen_hash_start = trainer.store().frozen_hash();
  result.dense_eval_lm = trainer.evaluate_dense();
  for (std::size_t s = 1; s <= config.steps; ++s) {
    result.steps.push_back(trainer.step());
    if (on_step) on_step(result.steps.back());
    if (s % config.eval_every == 0 || s == config.steps) {
      result.evals.push_back(EvalPoint{s, trainer.evaluate()});
      if (on_eval) on_eval(result.evals.back());
    }
  }
  result.frozen_hash_end = trainer.store().frozen_hash();
  return result;
}

}  // namespace condepth
