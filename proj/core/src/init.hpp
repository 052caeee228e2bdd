// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "condepth/rng.hpp"
#include "condepth/tensor.hpp"

namespace condepth::detail {

inline Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
  return t;
}

/// [fan_in, fan_out] weight with entries N(0, 1/fan_in), scaled by `gain`.
inline Tensor fan_in_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0) {
  return gaussian(Shape{fan_in, fan_out}, gain / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace condepth::detail
