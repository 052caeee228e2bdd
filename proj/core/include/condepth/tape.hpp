// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "condepth/optim.hpp"
#include "condepth/tensor.hpp"

namespace condepth {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so reverse id order is a reverse
/// topological order. A node records a backward rule only when at least one
/// input requires a gradient; with gradients disabled the tape is a plain
/// evaluator and keeps no closures.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  /// Differentiable input not owned by a ParamStore (tests, gradient checks).
  Var leaf(Tensor value);
  /// References the store's tensor without copying. Requires a gradient iff
  /// the tape records gradients and the entry is trainable. Repeated calls for
  /// the same id return the same node.
  Var param(const ParamStore& store, ParamId id);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates adjoints. `loss` must be a
  /// one-element tensor; calling twice on one tape is a UsageError.
  void backward(Var loss);

  /// Adjoint of a node after backward; a zero tensor if nothing flowed in.
  Tensor grad(Var v) const;

  /// Adjoints of every trainable parameter referenced by this tape, indexed
  /// by ParamId. Entries for unreferenced or frozen parameters are empty.
  Gradients param_grads(const ParamStore& store) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Op authoring interface.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  /// Accumulation buffer for a node's adjoint, zero-initialized on first use.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor grad;
  };
  std::deque<Node> nodes_;
  std::map<std::pair<const ParamStore*, ParamId>, std::size_t> param_nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Primitive ops. Every op checks operand shapes and throws ConfigError on a
// mismatch.

/// [n,k] x [k,m] -> [n,m]
Var matmul(Var a, Var b);
/// [n,k] x [m,k]^T -> [n,m]
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
/// [n,m] + [m] broadcast over rows.
Var add_bias(Var a, Var bias);
/// Row r of [n,m] scaled by s[r].
Var mul_rows(Var a, Var s);
/// Row-wise convex mix: m[r] * full[r] + (1 - m[r]) * cheap[r].
Var mix_rows(Var m, Var full, Var cheap);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var square(Var a);
Var silu(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// Numerically stable log(1 + exp(x)).
Var softplus(Var a);
/// Row-wise softmax for matrices, whole-tensor softmax for vectors.
Var softmax(Var a);
/// Row-wise layer normalization over the last dimension with affine gamma, beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Row-wise cosine similarity of [n,k] operands -> [n]; the denominator is
/// max(|a| |b|, eps).
Var cosine_similarity(Var a, Var b, double eps = 1e-8);
/// Per-row -log softmax(logits)[target] -> [n]. Rows with target < 0 yield 0
/// and no gradient.
Var cross_entropy(Var logits, std::span<const int> targets);
/// Elementwise Huber(a - b) with transition point delta.
Var huber(Var a, Var b, double delta);
/// Column concatenation of matrices with equal row counts.
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
/// [m] -> [n,m] by repeating the vector n times.
Var repeat_rows(Var v, std::size_t n);
/// Same data under a new shape with equal element count.
Var reshape(Var a, Shape shape);
/// Forward identity, zero adjoint upstream.
Var stop_gradient(Var a);
/// Forward value is `hard` exactly; the adjoint passes unchanged to `soft`.
Var straight_through(const Tensor& hard, Var soft);
Var sum(Var a);
Var mean(Var a);
/// Flat gather: out[i] = a.flat[idx[i]].
Var gather(Var a, std::span<const std::size_t> idx);
/// Embedding lookup: out[i] = table[ids[i]].
Var gather_rows(Var table, std::span<const int> ids);
/// Causal multi-head self-attention over packed sequences. qkv is [N, 3d]
/// laid out as [q | k | v]; N must be a multiple of seq_len. Returns [N, d].
Var causal_attention(Var qkv, std::size_t seq_len, std::size_t n_heads);

}  // namespace condepth
