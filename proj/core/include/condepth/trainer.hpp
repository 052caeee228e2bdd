// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "condepth/backbone.hpp"
#include "condepth/controllers.hpp"
#include "condepth/corpus.hpp"
#include "condepth/error.hpp"
#include "condepth/metrics.hpp"
#include "condepth/oracle.hpp"

namespace condepth {

struct LossWeights {
  double jepa = 1.0;
  double util = 1.0;
  double rank = 0.2;
  double budget = 1.0;
  double alive = 0.5;

  void validate() const;
};

struct LossParts {
  double lm = 0.0, jepa = 0.0, util = 0.0, rank = 0.0, budget = 0.0, alive = 0.0;
};

/// L_LM + sum of weighted auxiliary terms.
double total_loss(const LossParts& parts, const LossWeights& weights);

struct ExperimentConfig {
  std::string name = "g3";
  GateKind gate = GateKind::g3;
  LossWeights weights;
  OracleConfig oracle;
  GateConfig gate_cfg;
  ModelConfig model;
  OptimConfig optim;  ///< total_steps is forced to `steps`
  std::uint64_t seed = 42;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t eval_every = 100;
  std::size_t eval_batches = 8;
  bool a2_shuffled = false;

  // Dense pre-phase producing the shared frozen backbone.
  std::size_t pretrain_steps = 500;
  std::uint64_t pretrain_seed = 1;
  double pretrain_lr = 3e-3;
  std::size_t pretrain_warmup = 50;

  std::string corpus = "data/sample_corpus.txt";
  double val_fraction = 0.1;
  std::uint64_t split_seed = 0;

  void validate() const;
  OptimConfig effective_optim() const;
  bool uses_oracle() const { return weights.util > 0.0 || weights.rank > 0.0; }
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  LossParts loss;
  double total = 0.0;
  double grad_norm = 0.0;  ///< before clipping
  std::vector<double> mean_gate_prob;  ///< per controlled layer
  std::vector<double> full_ratio;      ///< per controlled layer
  std::optional<double> diag_qf_qc_l2;
  std::optional<double> diag_qf_qc_cos;
  double diag_util_score_var = 0.0;
  bool labels = false;
  std::size_t oracle_passes = 0;
  double compute_vs_full = 0.0;  ///< this step's controlled-layer cost over C*B*T
};

/// Which parameters train: the cheap path plus the controller's own modules.
std::function<bool(std::string_view)> controller_only_partition(const Controller& controller);

/// Mean next-token cross-entropy of hard-routed inference over the batches.
double evaluate(const Backbone& model, const Controller& controller, const GateConfig& gate,
                std::span<const std::vector<int>> batches);

/// Mean next-token cross-entropy of the dense (all controlled layers full) model.
double evaluate_dense(const Backbone& model, std::span<const std::vector<int>> batches);

/// Dense next-token pretraining of every non-cheap backbone parameter.
/// Returns the final training loss.
double pretrain_backbone(Backbone& model, ParamStore& store, BatchStream& stream, std::size_t steps, double lr,
                         std::size_t warmup, const std::function<void(std::size_t, double)>& on_step = {});

/// One experiment's live state: model, controller, optimizer and streams.
class Trainer {
 public:
  /// `backbone` holds pretrained weights for every non-cheap backbone tensor.
  Trainer(const ExperimentConfig& config, const Corpus& corpus, const ParamStore& backbone);

  StepRecord step();
  double evaluate() const;
  double evaluate_dense() const;

  const ExperimentConfig& config() const { return config_; }
  const ParamStore& store() const { return store_; }
  ParamStore& store() { return store_; }
  const Backbone& model() const { return *model_; }
  const Controller& controller() const { return *controller_; }
  const CostModel& cost() const { return cost_; }
  std::size_t steps_done() const { return step_; }

  /// Gradients of the loss on one batch without an optimizer update.
  /// `with_labels` forces label construction (and its losses) on or off.
  Gradients gradients(std::span<const int> tokens, bool with_labels, std::size_t step_for_rng);

 private:
  struct Pass {
    StepRecord record;
    Gradients grads;
  };
  Pass forward_backward(std::span<const int> tokens, std::size_t step, bool with_labels);

  ExperimentConfig config_;
  ParamStore store_;
  std::unique_ptr<Backbone> model_;
  std::unique_ptr<Controller> controller_;
  CostModel cost_;
  BatchStream train_;
  std::vector<std::vector<int>> val_;
  Rng aux_rng_;
  std::size_t step_ = 0;
};

struct RunResult {
  std::vector<StepRecord> steps;
  std::vector<EvalPoint> evals;
  double dense_eval_lm = 0.0;
  std::uint64_t frozen_hash_start = 0;
  std::uint64_t frozen_hash_end = 0;
};

/// Runs the controller-only loop for config.steps steps. Callbacks receive
/// each record as soon as it exists.
RunResult run_experiment(const ExperimentConfig& config, const Corpus& corpus, const ParamStore& backbone,
                         const std::function<void(const StepRecord&)>& on_step = {},
                         const std::function<void(const EvalPoint&)>& on_eval = {});

/// Thrown when a loss turns non-finite; the run stops.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace condepth
