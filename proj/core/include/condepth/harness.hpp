// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "condepth/config.hpp"
#include "condepth/corpus.hpp"
#include "condepth/runlog.hpp"

namespace condepth {

using LogFn = std::function<void(const std::string&)>;

/// Output root: the explicit value if non-empty, else $CONDEPTH_OUT_DIR, else "out".
std::string output_root(const std::string& explicit_dir);

/// Stable name for the pretrained backbone of a config: depends on the model
/// dimensions, corpus and pre-phase settings, not on the run seed or gate.
std::string backbone_cache_key(const ExperimentConfig& config);

/// Loads the cached dense backbone for `config` from `cache_dir`, or runs the
/// pre-phase and stores it there. An empty cache_dir disables caching.
ParamStore obtain_backbone(const ExperimentConfig& config, const Corpus& corpus, const std::string& cache_dir,
                           const LogFn& log = {});

std::string run_directory(const std::string& root, const std::string& experiment, std::uint64_t seed);

/// Thresholds file under the output root; absent until a pilot run fixes it.
std::string thresholds_path(const std::string& root);
std::optional<std::vector<double>> read_thresholds(const std::string& path);
void write_thresholds(const std::string& path, const std::vector<double>& thresholds, const std::string& source);

/// Pilot quantiles of the eval range used for the desk-scale thresholds.
const std::vector<double>& threshold_quantiles();

/// Runs one experiment into run_directory(root, name, seed): config.txt,
/// run.jsonl (flushed per record) and summary.json.
SummaryMetrics execute_run(const ExperimentConfig& config, const Corpus& corpus, const ParamStore& backbone,
                           const std::string& root, const std::vector<double>& thresholds, const LogFn& log = {});

}  // namespace condepth
