// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/runlog.hpp"

#include <algorithm>
#include <sstream>

#include "condepth/config.hpp"
#include "condepth/error.hpp"
#include "json.hpp"

namespace condepth {

using nlohmann::json;

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string step_record_json(const StepRecord& r) {
  json j;
  j["type"] = "step";
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["lm_loss"] = r.loss.lm;
  j["jepa_loss"] = r.loss.jepa;
  j["util_loss"] = r.loss.util;
  j["rank_loss"] = r.loss.rank;
  j["budget_loss"] = r.loss.budget;
  j["alive_loss"] = r.loss.alive;
  j["total"] = r.total;
  j["grad_norm"] = r.grad_norm;
  j["mean_gate_prob"] = r.mean_gate_prob;
  j["full_ratio"] = r.full_ratio;
  j["diag_qf_qc_l2"] = optional_number(r.diag_qf_qc_l2);
  j["diag_qf_qc_cos"] = optional_number(r.diag_qf_qc_cos);
  j["diag_util_score_var"] = r.diag_util_score_var;
  j["labels"] = r.labels;
  j["oracle_passes"] = r.oracle_passes;
  j["compute_vs_full"] = r.compute_vs_full;
  return j.dump();
}

std::string eval_record_json(const EvalPoint& p) {
  json j;
  j["type"] = "eval";
  j["step"] = p.step;
  j["eval_lm_loss"] = p.eval_lm;
  return j.dump();
}

RunLogWriter::RunLogWriter(const std::string& path) : path_(path), out_(path, std::ios::trunc) {
  if (!out_) throw InputError("cannot open run log '" + path + "' for writing");
}

void RunLogWriter::write(const StepRecord& record) { line(step_record_json(record)); }
void RunLogWriter::write(const EvalPoint& point) { line(eval_record_json(point)); }

void RunLogWriter::line(const std::string& text) {
  out_ << text << '\n';
  out_.flush();
  if (!out_) throw InputError("write to run log '" + path_ + "' failed");
}

ParsedRunLog read_run_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open run log '" + path + "'");
  ParsedRunLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.at("type") == "eval") {
        log.evals.push_back(EvalPoint{j.at("step").get<std::size_t>(), j.at("eval_lm_loss").get<double>()});
        continue;
      }
      StepRecord r;
      r.step = j.at("step").get<std::size_t>();
      r.lr = j.at("lr").get<double>();
      r.loss.lm = j.at("lm_loss").get<double>();
      r.loss.jepa = j.at("jepa_loss").get<double>();
      r.loss.util = j.at("util_loss").get<double>();
      r.loss.rank = j.at("rank_loss").get<double>();
      r.loss.budget = j.at("budget_loss").get<double>();
      r.loss.alive = j.at("alive_loss").get<double>();
      r.total = j.at("total").get<double>();
      r.grad_norm = j.at("grad_norm").get<double>();
      r.mean_gate_prob = j.at("mean_gate_prob").get<std::vector<double>>();
      r.full_ratio = j.at("full_ratio").get<std::vector<double>>();
      if (!j.at("diag_qf_qc_l2").is_null()) r.diag_qf_qc_l2 = j.at("diag_qf_qc_l2").get<double>();
      if (!j.at("diag_qf_qc_cos").is_null()) r.diag_qf_qc_cos = j.at("diag_qf_qc_cos").get<double>();
      r.diag_util_score_var = j.at("diag_util_score_var").get<double>();
      r.labels = j.at("labels").get<bool>();
      r.oracle_passes = j.at("oracle_passes").get<std::size_t>();
      r.compute_vs_full = j.at("compute_vs_full").get<double>();
      log.steps.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

std::size_t summary_tail(std::size_t steps) { return std::max<std::size_t>(1, steps / 20); }

SummaryMetrics summarize_run(const ExperimentConfig& config, const RunResult& result,
                             std::span<const double> thresholds) {
  if (result.steps.empty()) throw UsageError("summarize_run: run has no steps");
  SummaryMetrics s;
  const std::size_t half = config.steps / 2;
  const std::size_t windows[2] = {half, config.steps};
  const LmSummary lm = lm_summary(result.evals, thresholds, windows);
  s.best_eval_lm = lm.best;
  s.endpoint_eval_lm = lm.endpoint;
  s.first_eval_lm = result.evals.front().eval_lm;
  s.avg_lm_0_half = lm.window_means[0].second;
  s.avg_lm_0_full = lm.window_means[1].second;
  s.hits = lm.hits;
  std::vector<double> norms;
  double compute = 0.0;
  for (const StepRecord& r : result.steps) {
    norms.push_back(r.grad_norm);
    compute += r.compute_vs_full;
    if (r.labels) ++s.label_steps;
    s.oracle_passes += r.oracle_passes;
  }
  s.grad_norm_mean = grad_norm_mean(norms);
  s.compute_vs_full = compute / static_cast<double>(result.steps.size());
  s.infer_vs_full = infer_vs_full(CostModel::make(config.model, config.gate), config.gate_cfg.budget);
  s.dense_eval_lm = result.dense_eval_lm;
  s.frozen_unchanged = result.frozen_hash_start == result.frozen_hash_end;

  s.tail = std::min(summary_tail(result.steps.size()), result.steps.size());
  const std::size_t C = result.steps.back().mean_gate_prob.size();
  double l2 = 0.0, cs = 0.0, var = 0.0;
  bool has_diag = true;
  s.final_mean_gate_prob.assign(C, 0.0);
  for (std::size_t i = result.steps.size() - s.tail; i < result.steps.size(); ++i) {
    const StepRecord& r = result.steps[i];
    if (r.diag_qf_qc_l2 && r.diag_qf_qc_cos) {
      l2 += *r.diag_qf_qc_l2;
      cs += *r.diag_qf_qc_cos;
    } else {
      has_diag = false;
    }
    var += r.diag_util_score_var;
    for (std::size_t l = 0; l < C; ++l) s.final_mean_gate_prob[l] += r.mean_gate_prob[l];
  }
  const double n = static_cast<double>(s.tail);
  if (has_diag) {
    s.final_diag_qf_qc_l2 = l2 / n;
    s.final_diag_qf_qc_cos = cs / n;
  }
  s.final_diag_util_score_var = var / n;
  for (double& p : s.final_mean_gate_prob) p /= n;
  s.eval_curve = result.evals;
  return s;
}

std::string summary_json(const ExperimentConfig& config, const SummaryMetrics& s, const std::string& version) {
  json j;
  j["experiment"] = config.name;
  j["seed"] = config.seed;
  j["version"] = version;
  j["config_key"] = config_key(config);
  json cfg = json::object();
  for (const auto& [k, v] : config_settings(config)) cfg[k] = v;
  j["config"] = cfg;
  json m;
  m["best_eval_lm"] = s.best_eval_lm;
  m["endpoint_eval_lm"] = s.endpoint_eval_lm;
  m["first_eval_lm"] = s.first_eval_lm;
  m["avg_lm_0_half"] = optional_number(s.avg_lm_0_half);
  m["avg_lm_0_full"] = optional_number(s.avg_lm_0_full);
  json hits = json::array();
  for (const auto& [th, step] : s.hits) hits.push_back({{"threshold", th}, {"step", step ? json(*step) : json(nullptr)}});
  m["hits"] = hits;
  m["grad_norm_mean"] = s.grad_norm_mean;
  m["compute_vs_full"] = s.compute_vs_full;
  m["infer_vs_full"] = s.infer_vs_full;
  m["dense_eval_lm"] = s.dense_eval_lm;
  m["final_diag_qf_qc_l2"] = optional_number(s.final_diag_qf_qc_l2);
  m["final_diag_qf_qc_cos"] = optional_number(s.final_diag_qf_qc_cos);
  m["final_diag_util_score_var"] = s.final_diag_util_score_var;
  m["final_mean_gate_prob"] = s.final_mean_gate_prob;
  m["tail_steps"] = s.tail;
  m["label_steps"] = s.label_steps;
  m["oracle_passes"] = s.oracle_passes;
  m["frozen_unchanged"] = s.frozen_unchanged;
  json curve = json::array();
  for (const EvalPoint& p : s.eval_curve) curve.push_back({p.step, p.eval_lm});
  m["eval_curve"] = curve;
  j["metrics"] = m;
  return j.dump(2);
}

RunSummary read_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open summary '" + path + "'");
  RunSummary r;
  try {
    const json j = json::parse(in);
    r.experiment = j.at("experiment").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_key = j.at("config_key").get<std::string>();
    const json& m = j.at("metrics");
    for (const auto& [k, v] : m.items()) {
      if (v.is_number()) r.values[k] = v.get<double>();
    }
    const auto& hits = m.at("hits");
    for (std::size_t i = 0; i < hits.size(); ++i)
      if (!hits[i].at("step").is_null()) r.values["hit_" + std::to_string(i)] = hits[i].at("step").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("summary '" + path + "': " + e.what());
  }
  return r;
}

}  // namespace condepth
