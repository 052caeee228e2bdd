// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace condepth {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of 64-bit reals.
///
/// Rank 0 is a scalar, rank 1 a vector, rank 2 a [rows, cols] matrix. Higher
/// ranks are representable but no op in the library produces them.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension for rank >= 1; 1 for scalars.
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  /// Trailing dimension for rank 2; 1 for vectors and scalars.
  std::size_t cols() const { return shape_.size() >= 2 ? shape_.back() : 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  /// Value of a one-element tensor.
  double item() const;

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Bitwise equality of shape and contents.
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

namespace kernels {

// All products accumulate each output element over the inner dimension in
// increasing index order, independent of how many rows are processed. A row
// computed inside a large batch is bit-identical to the same row computed
// alone; the inference path relies on this.

/// out[n,m] (+)= a[n,k] * b[k,m]
void gemm_nn(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate);
/// out[k,m] (+)= a[n,k]^T * b[n,m]
void gemm_tn(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate);
/// out[n,m] (+)= a[n,k] * b[m,k]^T
void gemm_nt(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate);

Tensor transpose(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace kernels

}  // namespace condepth
