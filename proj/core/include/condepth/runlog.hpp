// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "condepth/metrics.hpp"
#include "condepth/trainer.hpp"

namespace condepth {

/// One JSON object per line, no trailing newline.
std::string step_record_json(const StepRecord& record);
std::string eval_record_json(const EvalPoint& point);

/// Appends JSONL records and flushes after each line.
class RunLogWriter {
 public:
  explicit RunLogWriter(const std::string& path);
  void write(const StepRecord& record);
  void write(const EvalPoint& point);

 private:
  void line(const std::string& text);
  std::string path_;
  std::ofstream out_;
};

struct ParsedRunLog {
  std::vector<StepRecord> steps;
  std::vector<EvalPoint> evals;
};

ParsedRunLog read_run_log(const std::string& path);

struct SummaryMetrics {
  double best_eval_lm = 0.0;
  double endpoint_eval_lm = 0.0;
  double first_eval_lm = 0.0;
  std::optional<double> avg_lm_0_half;  ///< eval points in the first half of the run
  std::optional<double> avg_lm_0_full;
  std::vector<std::pair<double, std::optional<std::size_t>>> hits;
  double grad_norm_mean = 0.0;
  double compute_vs_full = 0.0;  ///< mean over steps
  double infer_vs_full = 0.0;
  double dense_eval_lm = 0.0;
  /// Means over the last `tail` steps of the run.
  std::optional<double> final_diag_qf_qc_l2;
  std::optional<double> final_diag_qf_qc_cos;
  double final_diag_util_score_var = 0.0;
  std::vector<double> final_mean_gate_prob;
  std::size_t tail = 0;
  std::size_t label_steps = 0;
  std::size_t oracle_passes = 0;
  bool frozen_unchanged = true;
  std::vector<EvalPoint> eval_curve;
};

/// Number of trailing steps averaged for the final diagnostics: 5% of the
/// run, at least one.
std::size_t summary_tail(std::size_t steps);

SummaryMetrics summarize_run(const ExperimentConfig& config, const RunResult& result,
                             std::span<const double> thresholds);

/// Summary JSON document: metrics, the full config echo, seed and version.
std::string summary_json(const ExperimentConfig& config, const SummaryMetrics& summary, const std::string& version);

/// Flattened numeric fields of a summary file for aggregation. Hit steps use
/// keys "hit_<k>" (k-th threshold) and are omitted when never hit.
RunSummary read_summary(const std::string& path);

}  // namespace condepth
