// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

// condepth: pretrain, run and aggregate conditional-depth experiments.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "condepth/harness.hpp"

namespace fs = std::filesystem;
using namespace condepth;

namespace {

void log_line(const std::string& s) {
  std::cerr << s << std::endl;
}

ExperimentConfig resolve(const std::string& name, std::uint64_t seed, const std::vector<std::string>& overrides,
                         std::size_t steps) {
  ExperimentConfig c = load_config(name);
  c.seed = seed;
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (steps) c.steps = steps;
  c.validate();
  return c;
}

std::vector<double> thresholds_for(const std::string& root) {
  auto t = read_thresholds(thresholds_path(root));
  return t ? *t : std::vector<double>{};
}

/// Runs the pilot (g1-base, first seed) when no thresholds exist yet and fixes
/// them from its eval curve.
std::vector<double> ensure_thresholds(const std::string& root, const Corpus& corpus,
                                      const std::vector<std::string>& overrides, std::size_t steps) {
  if (auto t = read_thresholds(thresholds_path(root))) return *t;
  ExperimentConfig pilot = resolve("g1-base", 42, overrides, steps);
  const std::string summary = (fs::path(run_directory(root, pilot.name, pilot.seed)) / "summary.json").string();
  std::vector<EvalPoint> curve;
  if (fs::exists(summary)) {
    const ParsedRunLog log = read_run_log((fs::path(run_directory(root, pilot.name, pilot.seed)) / "run.jsonl").string());
    curve = log.evals;
  } else {
    log_line("pilot run g1-base seed 42 fixes the thresholds");
    ParamStore backbone = obtain_backbone(pilot, corpus, (fs::path(root) / "cache").string(), log_line);
    curve = execute_run(pilot, corpus, backbone, root, {}, log_line).eval_curve;
  }
  const auto th = thresholds_from_pilot(curve, threshold_quantiles());
  write_thresholds(thresholds_path(root), th, "g1-base seed 42");
  return th;
}

int cmd_pretrain(const std::string& root, const std::string& config, const std::vector<std::string>& overrides) {
  const ExperimentConfig c = resolve(config, 42, overrides, 0);
  const Corpus corpus = Corpus::load({c.corpus, c.val_fraction, c.split_seed});
  const auto t0 = std::chrono::steady_clock::now();
  ParamStore store = obtain_backbone(c, corpus, (fs::path(root) / "cache").string(), log_line);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("backbone %s ready (%zu tensors, %.1f s)\n", backbone_cache_key(c).c_str(), store.size(), secs);
  return 0;
}

int cmd_run(const std::string& root, const std::string& config, std::uint64_t seed,
            const std::vector<std::string>& overrides, std::size_t steps) {
  const ExperimentConfig c = resolve(config, seed, overrides, steps);
  const Corpus corpus = Corpus::load({c.corpus, c.val_fraction, c.split_seed});
  ParamStore backbone = obtain_backbone(c, corpus, (fs::path(root) / "cache").string(), log_line);
  const auto t0 = std::chrono::steady_clock::now();
  const SummaryMetrics s = execute_run(c, corpus, backbone, root, thresholds_for(root), log_line);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s seed %llu: best_eval_lm %.5f endpoint %.5f compute_vs_full %.4f infer_vs_full %.4f (%.1f s)\n",
              c.name.c_str(), static_cast<unsigned long long>(c.seed), s.best_eval_lm, s.endpoint_eval_lm,
              s.compute_vs_full, s.infer_vs_full, secs);
  std::printf("%s\n", run_directory(root, c.name, c.seed).c_str());
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_matrix(const std::string& root, const std::string& experiments, const std::string& seeds,
               const std::vector<std::string>& overrides, std::size_t steps, std::size_t jobs, bool force) {
  std::vector<MatrixEntry> plan;
  if (experiments.empty() && seeds.empty()) {
    plan = default_matrix();
  } else {
    std::vector<std::uint64_t> seed_list;
    for (const auto& s : split_list(seeds)) seed_list.push_back(std::stoull(s));
    for (const auto& e : experiments.empty() ? preset_names() : split_list(experiments)) {
      if (seed_list.empty()) {
        for (const auto& m : default_matrix())
          if (m.experiment == e) plan.push_back(m);
      } else {
        plan.push_back({e, seed_list});
      }
    }
  }
  for (const auto& m : plan) load_config(m.experiment);  // validates names up front

  const ExperimentConfig first = resolve(plan.front().experiment, 42, overrides, steps);
  const Corpus corpus = Corpus::load({first.corpus, first.val_fraction, first.split_seed});
  obtain_backbone(first, corpus, (fs::path(root) / "cache").string(), log_line);
  ensure_thresholds(root, corpus, overrides, steps);

  std::vector<std::vector<std::string>> commands;
  std::size_t total = 0;
  for (const auto& m : plan) {
    for (std::uint64_t seed : m.seeds) {
      ++total;
      const fs::path summary = fs::path(run_directory(root, m.experiment, seed)) / "summary.json";
      if (!force && fs::exists(summary)) {
        log_line("skip " + m.experiment + " seed " + std::to_string(seed) + " (summary exists)");
        continue;
      }
      std::vector<std::string> argv = {"condepth", "--out", root, "run", "--config", m.experiment,
                                       "--seed", std::to_string(seed)};
      if (steps) argv.insert(argv.end(), {"--steps", std::to_string(steps)});
      for (const auto& o : overrides) argv.insert(argv.end(), {"--set", o});
      commands.push_back(std::move(argv));
    }
  }
  std::printf("matrix: %zu runs planned, %zu to execute\n", total, commands.size());

  // One process per run, at most `jobs` at a time.
  std::set<pid_t> live;
  int failures = 0;
  auto reap = [&] {
    int status = 0;
    const pid_t pid = wait(&status);
    if (pid > 0) {
      live.erase(pid);
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
    }
  };
  for (const auto& argv : commands) {
    while (live.size() >= std::max<std::size_t>(jobs, 1)) reap();
    const pid_t pid = fork();
    if (pid < 0) throw Error("fork failed");
    if (pid == 0) {
      std::vector<char*> raw;
      for (const auto& a : argv) raw.push_back(const_cast<char*>(a.c_str()));
      raw.push_back(nullptr);
      execv("/proc/self/exe", raw.data());
      _exit(127);
    }
    live.insert(pid);
  }
  while (!live.empty()) reap();
  std::printf("matrix: %d failed runs\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional-depth transformer training laboratory"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string out_dir;
  app.add_option("--out", out_dir, "Output root (default: $CONDEPTH_OUT_DIR or ./out)");
  app.set_version_flag("--version", version_string());

  std::string config = "g3";
  std::uint64_t seed = 42;
  std::vector<std::string> overrides;
  std::size_t steps = 0;

  auto* pretrain = app.add_subcommand("pretrain", "Run or load the shared dense backbone");
  pretrain->add_option("--config", config, "Preset name or config file");
  pretrain->add_option("--set", overrides, "Override a config key (key=value)");

  auto* run = app.add_subcommand("run", "Execute one experiment");
  run->add_option("--config", config, "Preset name or config file")->required();
  run->add_option("--seed", seed, "Random seed");
  run->add_option("--set", overrides, "Override a config key (key=value)");
  run->add_option("--steps", steps, "Override the step count");

  std::string experiments, seeds;
  std::size_t jobs = 1;
  bool force = false;
  auto* matrix = app.add_subcommand("matrix", "Execute the experiment grid");
  matrix->add_option("--experiments", experiments, "Comma-separated preset names (default: all)");
  matrix->add_option("--seeds", seeds, "Comma-separated seeds (default: per-experiment plan)");
  matrix->add_option("--set", overrides, "Override a config key (key=value)");
  matrix->add_option("--steps", steps, "Override the step count");
  matrix->add_option("--jobs", jobs, "Concurrent run processes");
  matrix->add_flag("--force", force, "Re-run experiments that already have a summary");

  std::string dir, csv;
  auto* summarize = app.add_subcommand("summarize", "Aggregate run summaries (mean +- std per experiment)");
  summarize->add_option("--dir", dir, "Output root to scan");
  summarize->add_option("--csv", csv, "Also write the table as CSV");

  std::size_t window = 200;
  auto* curves = app.add_subcommand("export-curves", "Write eval_lm and grad_norm curves as CSV");
  curves->add_option("--dir", dir, "Output root to scan");
  curves->add_option("--window", window, "Rolling-mean window for grad_norm");

  bool verbose = false;
  auto* check = app.add_subcommand("check", "Run the gradient and invariant self-check");
  check->add_option("--seed", seed, "Random seed");
  check->add_flag("-v,--verbose", verbose, "Print every check");

  CLI11_PARSE(app, argc, argv);
  try {
    const std::string root = output_root(out_dir);
    if (*pretrain) return cmd_pretrain(root, config, overrides);
    if (*run) return cmd_run(root, config, seed, overrides, steps);
    if (*matrix) return cmd_matrix(root, experiments, seeds, overrides, steps, jobs, force);
    if (*summarize) return cli::summarize(dir.empty() ? root : dir, csv);
    if (*curves) return cli::export_curves(dir.empty() ? root : dir, window);
    if (*check) return cli::run_checks(seed, verbose) == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
