// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/harness.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "condepth/checkpoint.hpp"
#include "condepth/error.hpp"
#include "json.hpp"

namespace condepth {

namespace fs = std::filesystem;

std::string output_root(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("CONDEPTH_OUT_DIR"); env && *env) return env;
  return "out";
}

std::string backbone_cache_key(const ExperimentConfig& config) {
  std::string text;
  for (const auto& [k, v] : config_settings(config)) {
    if (k.rfind("model.", 0) == 0 || k.rfind("pretrain.", 0) == 0 || k.rfind("corpus.", 0) == 0 || k == "batch_size")
      text += k + "=" + v + "\n";
  }
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "backbone-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ParamStore obtain_backbone(const ExperimentConfig& config, const Corpus& corpus, const std::string& cache_dir,
                           const LogFn& log) {
  ParamStore store;
  Rng init(config.pretrain_seed);
  Backbone model(config.model, store, init);
  const std::string path = cache_dir.empty() ? "" : (fs::path(cache_dir) / (backbone_cache_key(config) + ".ckpt")).string();
  if (!path.empty() && fs::exists(path)) {
    const Checkpoint ckpt = load_checkpoint(path);
    restore(store, ckpt);
    if (log) log("loaded backbone " + path);
    return store;
  }
  BatchStream stream(corpus.train(), config.model.seq_len, config.batch_size, splitmix64(config.pretrain_seed));
  pretrain_backbone(model, store, stream, config.pretrain_steps, config.pretrain_lr, config.pretrain_warmup,
                    [&](std::size_t step, double loss) {
                      if (log && (step % 50 == 0 || step == config.pretrain_steps))
                        log("pretrain step " + std::to_string(step) + " loss " + std::to_string(loss));
                    });
  if (!path.empty()) {
    fs::create_directories(cache_dir);
    Checkpoint ckpt = snapshot(store, [](std::string_view n) { return !Backbone::is_cheap_path_param(n); });
    nlohmann::json meta;
    meta["cache_key"] = backbone_cache_key(config);
    meta["pretrain_steps"] = config.pretrain_steps;
    meta["version"] = version_string();
    ckpt.metadata_json = meta.dump();
    save_checkpoint(path, ckpt);
    if (log) log("saved backbone " + path);
  }
  return store;
}

std::string run_directory(const std::string& root, const std::string& experiment, std::uint64_t seed) {
  return (fs::path(root) / "runs" / experiment / ("seed" + std::to_string(seed))).string();
}

std::string thresholds_path(const std::string& root) { return (fs::path(root) / "thresholds.json").string(); }

std::optional<std::vector<double>> read_thresholds(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in).at("thresholds").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("thresholds file '" + path + "': " + e.what());
  }
}

void write_thresholds(const std::string& path, const std::vector<double>& thresholds, const std::string& source) {
  nlohmann::json j;
  j["thresholds"] = thresholds;
  j["quantiles"] = threshold_quantiles();
  j["source"] = source;
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

const std::vector<double>& threshold_quantiles() {
  static const std::vector<double> q = {0.3, 0.2, 0.1};
  return q;
}

SummaryMetrics execute_run(const ExperimentConfig& config, const Corpus& corpus, const ParamStore& backbone,
                           const std::string& root, const std::vector<double>& thresholds, const LogFn& log) {
  const std::string dir = run_directory(root, config.name, config.seed);
  fs::create_directories(dir);
  {
    std::ofstream cfg(fs::path(dir) / "config.txt", std::ios::trunc);
    cfg << "# version " << version_string() << "\n" << config_text(config);
  }
  RunLogWriter writer((fs::path(dir) / "run.jsonl").string());
  const RunResult result = run_experiment(
      config, corpus, backbone, [&](const StepRecord& r) { writer.write(r); },
      [&](const EvalPoint& p) {
        writer.write(p);
        if (log) log(config.name + " seed " + std::to_string(config.seed) + " step " + std::to_string(p.step) +
                     " eval_lm " + std::to_string(p.eval_lm));
      });
  const SummaryMetrics s = summarize_run(config, result, thresholds);
  const std::string tmp = (fs::path(dir) / "summary.json.tmp").string();
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << summary_json(config, s, version_string()) << '\n';
    if (!out) throw InputError("cannot write summary in '" + dir + "'");
  }
  fs::rename(tmp, fs::path(dir) / "summary.json");
  return s;
}

}  // namespace condepth
