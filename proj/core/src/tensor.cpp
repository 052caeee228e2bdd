// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "condepth/error.hpp"

namespace condepth {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                      shape_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ConfigError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace kernels {

void gemm_nn(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
  if (!accumulate) std::fill(out, out + n * m, 0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* c0 = out + (i + 0) * m;
    double* c1 = out + (i + 1) * m;
    double* c2 = out + (i + 2) * m;
    double* c3 = out + (i + 3) * m;
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * m;
      const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
      for (std::size_t j = 0; j < m; ++j) {
        const double bv = bp[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    double* c0 = out + i * m;
    const double* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * m;
      const double x0 = a0[p];
      for (std::size_t j = 0; j < m; ++j) c0[j] += x0 * bp[j];
    }
  }
}

void gemm_tn(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
  if (!accumulate) std::fill(out, out + k * m, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* ar = a + r * k;
    const double* br = b + r * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = ar[p];
      if (x == 0.0) continue;
      double* c = out + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += x * br[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
  std::vector<double> bt(k * m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * m + j] = b[j * k + p];
  gemm_nn(a, bt.data(), out, n, k, m, accumulate);
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ConfigError("transpose expects a matrix, got " + shape_string(a.shape()));
  const std::size_t r = a.rows(), c = a.cols();
  Tensor t(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ConfigError("matmul shape mismatch: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out(Shape{a.rows(), b.cols()});
  gemm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols(), false);
  return out;
}

}  // namespace kernels

}  // namespace condepth
