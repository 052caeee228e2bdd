// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "condepth/error.hpp"
#include "condepth/rng.hpp"

namespace condepth {

namespace {

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> coords(n);
  std::iota(coords.begin(), coords.end(), 0);
  // Partial Fisher-Yates picks a seeded subset.
  const std::size_t take = std::min(coords.size(), limit);
  for (std::size_t j = 0; j < take; ++j) std::swap(coords[j], coords[j + rng.index(coords.size() - j)]);
  coords.resize(take);
  return coords;
}

void record(GradCheckReport& report, double a, double numeric, double abs_floor) {
  const double abs_err = std::abs(a - numeric);
  const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
  report.max_abs_error = std::max(report.max_abs_error, abs_err);
  report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
  ++report.coords_checked;
}

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value().item();
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                        const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  Rng rng(options.seed);
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<std::size_t> coords = sample_coords(inputs[i].size(), options.max_coords_per_input, rng);
    for (std::size_t c : coords) {
      const double orig = probe[i][c];
      probe[i][c] = orig + options.step;
      const double fp = evaluate(f, probe);
      probe[i][c] = orig - options.step;
      const double fm = evaluate(f, probe);
      probe[i][c] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      record(report, analytic[i][c], numeric, options.abs_floor);
    }
  }
  return report;
}

GradCheckReport finite_difference_check_params(const ParamLossFn& f, ParamStore& store, std::span<const ParamId> ids,
                                               const GradCheckOptions& options) {
  Gradients analytic;
  {
    Tape tape;
    Var out = f(tape);
    tape.backward(out);
    analytic = tape.param_grads(store);
  }
  auto eval = [&] {
    Tape tape(false);
    return f(tape).value().item();
  };
  GradCheckReport report;
  Rng rng(options.seed);
  for (ParamId id : ids) {
    if (!store.trainable(id)) throw UsageError("finite_difference_check_params: " + store.name(id) + " is frozen");
    Tensor& w = store.mutable_value(id);
    const Tensor zero(w.shape());
    const Tensor& g = analytic[id].empty() ? zero : analytic[id];
    for (std::size_t c : sample_coords(w.size(), options.max_coords_per_input, rng)) {
      const double orig = w[c];
      w[c] = orig + options.step;
      const double fp = eval();
      w[c] = orig - options.step;
      const double fm = eval();
      w[c] = orig;
      record(report, g[c], (fp - fm) / (2.0 * options.step), options.abs_floor);
    }
  }
  return report;
}

}  // namespace condepth
