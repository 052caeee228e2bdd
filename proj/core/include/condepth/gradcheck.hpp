// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "condepth/tape.hpp"

namespace condepth {

/// Scalar-valued function of differentiable inputs, built on the given tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per input tensor; all of them when the tensor is smaller.
  std::size_t max_coords_per_input = 24;
  /// Relative errors use max(|analytic|, |numeric|, abs_floor) as denominator.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

/// Compares reverse-mode gradients of `f` with central differences on a
/// seeded random subset of coordinates.
GradCheckReport finite_difference_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                        const GradCheckOptions& options = {});

/// Loss built from parameters referenced through tape.param().
using ParamLossFn = std::function<Var(Tape&)>;

/// Same comparison for ParamStore entries: analytic gradients from one
/// recorded pass, central differences by perturbing the store in place (the
/// store is restored bit-for-bit afterwards).
GradCheckReport finite_difference_check_params(const ParamLossFn& f, ParamStore& store, std::span<const ParamId> ids,
                                               const GradCheckOptions& options = {});

}  // namespace condepth
