// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

namespace condepth::cli {

/// Finite-difference and invariant suite; returns the number of failures.
int run_checks(std::uint64_t seed, bool verbose);

/// Aggregates every summary under root; writes the table to stdout and,
/// when csv_path is non-empty, a CSV copy.
int summarize(const std::string& root, const std::string& csv_path);

/// One CSV per metric per experiment under root/curves.
int export_curves(const std::string& root, std::size_t window);

}  // namespace condepth::cli
