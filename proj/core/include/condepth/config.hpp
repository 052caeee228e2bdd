// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "condepth/trainer.hpp"

namespace condepth {

/// Ordered key/value pairs of the flat config format:
///
///   # comment
///   key = value
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text);

/// Sets one field. Unknown keys and unparsable values are ConfigErrors.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Every field of the config, in a fixed order, with round-trip exact values.
KeyValues config_settings(const ExperimentConfig& config);
std::string config_text(const ExperimentConfig& config);
/// config_text without the seed line; equal for runs that differ only by seed.
std::string config_key(const ExperimentConfig& config);

const std::vector<std::string>& preset_names();
/// Named experiment with desk-scale defaults. Unknown names are ConfigErrors
/// listing the valid ones.
ExperimentConfig preset(const std::string& name);

/// A preset name, or a file whose optional `base = <preset>` line selects the
/// starting point before the remaining keys are applied in order.
ExperimentConfig load_config(const std::string& name_or_path);

struct MatrixEntry {
  std::string experiment;
  std::vector<std::uint64_t> seeds;
};

/// Library version plus the git description captured at configure time.
std::string version_string();

/// 3 seeds for the main grid, 1 for costmatch, 2 for the budget-0.25 runs.
std::vector<MatrixEntry> default_matrix();

}  // namespace condepth
