// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "commands.hpp"
#include "condepth/harness.hpp"
#include "json.hpp"

namespace condepth::cli {

namespace fs = std::filesystem;

namespace {

struct Run {
  RunSummary summary;
  std::vector<EvalPoint> curve;
  fs::path dir;
};

std::map<std::string, std::vector<Run>> collect(const std::string& root) {
  std::map<std::string, std::vector<Run>> out;
  const fs::path runs = fs::path(root) / "runs";
  if (!fs::exists(runs)) return out;
  for (const auto& exp : fs::directory_iterator(runs)) {
    if (!exp.is_directory()) continue;
    for (const auto& seed_dir : fs::directory_iterator(exp.path())) {
      const fs::path file = seed_dir.path() / "summary.json";
      if (!fs::exists(file)) continue;
      Run r;
      r.summary = read_summary(file.string());
      r.dir = seed_dir.path();
      std::ifstream in(file);
      const auto j = nlohmann::json::parse(in);
      for (const auto& p : j.at("metrics").at("eval_curve"))
        r.curve.push_back(EvalPoint{p.at(0).get<std::size_t>(), p.at(1).get<double>()});
      out[r.summary.experiment].push_back(std::move(r));
    }
  }
  for (auto& [name, runs_of] : out)
    std::sort(runs_of.begin(), runs_of.end(), [](const Run& a, const Run& b) { return a.summary.seed < b.summary.seed; });
  return out;
}

std::vector<std::string> ordered_names(const std::map<std::string, std::vector<Run>>& groups) {
  std::vector<std::string> names;
  for (const auto& n : preset_names())
    if (groups.count(n)) names.push_back(n);
  for (const auto& [n, runs] : groups)
    if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  return names;
}

std::string cell(const std::map<std::string, FieldStats>& stats, const std::string& key, int prec) {
  auto it = stats.find(key);
  if (it == stats.end()) return "---";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f+-%.*f", prec, it->second.mean, prec, it->second.std);
  return buf;
}

}  // namespace

int summarize(const std::string& root, const std::string& csv_path) {
  auto groups = collect(root);
  if (groups.empty()) {
    std::cerr << "no summaries under " << root << "/runs\n";
    return 1;
  }
  const auto thresholds = read_thresholds(thresholds_path(root));
  // Hits are recomputed from the stored curves so runs finished before the
  // pilot fixed the thresholds are scored the same way.
  for (auto& [name, runs] : groups) {
    for (Run& r : runs) {
      for (auto it = r.summary.values.begin(); it != r.summary.values.end();)
        it = it->first.rfind("hit_", 0) == 0 ? r.summary.values.erase(it) : std::next(it);
      if (!thresholds) continue;
      const std::size_t ends[1] = {r.curve.empty() ? 0 : r.curve.back().step};
      const LmSummary lm = lm_summary(r.curve, *thresholds, ends);
      for (std::size_t i = 0; i < lm.hits.size(); ++i)
        if (lm.hits[i].second) r.summary.values["hit_" + std::to_string(i)] = static_cast<double>(*lm.hits[i].second);
    }
  }

  const std::vector<std::pair<std::string, std::string>> columns = {
      {"best_eval_lm", "best lm"},          {"endpoint_eval_lm", "end lm"},   {"avg_lm_0_half", "avg 0-50%"},
      {"avg_lm_0_full", "avg 0-100%"},      {"hit_0", "hit q30"},             {"hit_1", "hit q20"},
      {"hit_2", "hit q10"},                 {"grad_norm_mean", "grad_norm"},  {"compute_vs_full", "comp."},
      {"infer_vs_full", "infer"},           {"final_diag_qf_qc_l2", "qf-qc l2"},
      {"final_diag_util_score_var", "score var"}};
  std::ostringstream table, csv;
  table << "experiment  n";
  csv << "experiment,n";
  for (const auto& [key, label] : columns) {
    table << " | " << label;
    csv << "," << key << "_mean," << key << "_std";
  }
  table << "\n";
  csv << "\n";
  for (const auto& name : ordered_names(groups)) {
    std::vector<RunSummary> summaries;
    for (const Run& r : groups[name]) summaries.push_back(r.summary);
    std::map<std::string, FieldStats> stats;
    try {
      stats = aggregate_seeds(summaries);
    } catch (const UsageError& e) {
      std::cerr << "warning: " << e.what() << '\n';
      continue;
    }
    table << name << "  " << summaries.size();
    csv << name << "," << summaries.size();
    for (const auto& [key, label] : columns) {
      const int prec = key.rfind("hit_", 0) == 0 ? 0 : (key == "final_diag_util_score_var" ? 6 : 4);
      table << " | " << cell(stats, key, prec);
      auto it = stats.find(key);
      if (it == stats.end()) {
        csv << ",,";
      } else {
        char buf[96];
        std::snprintf(buf, sizeof buf, ",%.10g,%.10g", it->second.mean, it->second.std);
        csv << buf;
      }
    }
    table << "\n";
    csv << "\n";
  }
  std::cout << table.str();

  if (groups.count("g3")) {
    std::vector<RunSummary> base;
    for (const Run& r : groups["g3"]) base.push_back(r.summary);
    std::cout << "\npaired best_eval_lm deltas vs g3 (per seed; negative = better than g3)\n";
    for (const auto& name : ordered_names(groups)) {
      if (name == "g3") continue;
      std::vector<RunSummary> other;
      for (const Run& r : groups[name]) other.push_back(r.summary);
      const PairedDelta d = paired_deltas(base, other, "best_eval_lm");
      if (d.deltas.empty()) continue;
      std::cout << "  " << name << ":";
      for (const auto& [seed, delta] : d.deltas) std::printf(" %llu:%+.4f", static_cast<unsigned long long>(seed), delta);
      std::printf("  (%zu/%zu lower)\n", d.negative, d.deltas.size());
    }
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw InputError("cannot write '" + csv_path + "'");
    out << csv.str();
  }
  return 0;
}

int export_curves(const std::string& root, std::size_t window) {
  auto groups = collect(root);
  if (groups.empty()) {
    std::cerr << "no summaries under " << root << "/runs\n";
    return 1;
  }
  const fs::path dir = fs::path(root) / "curves";
  fs::create_directories(dir);
  auto write_table = [&](const fs::path& path, const std::vector<std::uint64_t>& seeds,
                         const std::map<std::size_t, std::vector<double>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    out << "step";
    for (auto s : seeds) out << ",seed" << s;
    out << ",mean,std\n";
    for (const auto& [step, vals] : rows) {
      out << step;
      double mean = 0.0;
      for (double v : vals) {
        char buf[32];
        std::snprintf(buf, sizeof buf, ",%.10g", v);
        out << buf;
        mean += v;
      }
      mean /= static_cast<double>(vals.size());
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      const double sd = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
      char buf[64];
      std::snprintf(buf, sizeof buf, ",%.10g,%.10g\n", mean, sd);
      out << buf;
    }
  };
  for (const auto& [name, runs] : groups) {
    std::vector<std::uint64_t> seeds;
    std::map<std::size_t, std::vector<double>> eval_rows, grad_rows;
    for (const Run& r : runs) {
      seeds.push_back(r.summary.seed);
      for (const EvalPoint& p : r.curve) eval_rows[p.step].push_back(p.eval_lm);
      const ParsedRunLog log = read_run_log((r.dir / "run.jsonl").string());
      std::vector<double> norms;
      for (const StepRecord& s : log.steps) norms.push_back(s.grad_norm);
      const std::vector<double> smooth = rolling_mean(norms, window);
      for (std::size_t i = 0; i < smooth.size(); ++i) grad_rows[log.steps[i].step].push_back(smooth[i]);
    }
    // Only steps present in every seed.
    std::erase_if(eval_rows, [&](const auto& kv) { return kv.second.size() != runs.size(); });
    std::erase_if(grad_rows, [&](const auto& kv) { return kv.second.size() != runs.size(); });
    write_table(dir / (name + "_eval_lm.csv"), seeds, eval_rows);
    write_table(dir / (name + "_grad_norm.csv"), seeds, grad_rows);
    std::printf("%s: %zu seeds -> %s\n", name.c_str(), runs.size(), (dir / (name + "_*.csv")).string().c_str());
  }
  return 0;
}

}  // namespace condepth::cli
