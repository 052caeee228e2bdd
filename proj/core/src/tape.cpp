// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/tape.hpp"

#include <algorithm>
#include <cmath>

#include "condepth/error.hpp"

namespace condepth {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamStore& store, ParamId id) {
  const auto key = std::make_pair(&store, id);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external = &store.value(id);
  n.requires_grad = grad_enabled_ && store.trainable(id);
  nodes_.push_back(std::move(n));
  const std::size_t nid = nodes_.size() - 1;
  param_nodes_.emplace(key, nid);
  return Var(this, nid);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw UsageError("op mixes nodes from different tapes");
      if (v.requires_grad()) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && value(v.id()).size() > 0) n.grad = Tensor(value(v.id()).shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw UsageError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) throw UsageError("backward: loss must be scalar, got " + shape_string(loss.shape()));
  if (backward_done_) throw UsageError("backward called twice on one tape");
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad, value(id));
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(value(v.id()).shape());
  return n.grad;
}

Gradients Tape::param_grads(const ParamStore& store) const {
  Gradients out(store.size());
  for (const auto& [key, nid] : param_nodes_) {
    if (key.first != &store) continue;
    const Node& n = nodes_[nid];
    if (!n.requires_grad) continue;
    out[key.second] = n.grad.empty() ? Tensor(value(nid).shape()) : n.grad;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void require(bool ok, const char* op, const Shape& a, const Shape& b) {
  if (!ok) throw ConfigError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ConfigError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

/// Number of entries in the trailing dimension used by row-wise ops.
std::size_t row_width(const Tensor& t) { return t.rank() >= 2 ? t.cols() : t.size(); }
std::size_t row_count(const Tensor& t) { return t.rank() >= 2 ? t.rows() : 1; }

void accumulate(Tape& tape, Var v, const Tensor& g) {
  if (!v.requires_grad()) return;
  Tensor& buf = tape.grad_buffer(v);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  require(av.cols() == bv.rows(), "matmul", av.shape(), bv.shape());
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out(Shape{n, m});
  kernels::gemm_nn(av.data(), bv.data(), out.data(), n, k, m, false);
  return a.tape().record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g, const Tensor&) {
    if (a.requires_grad()) kernels::gemm_nt(g.data(), b.value().data(), t.grad_buffer(a).data(), n, m, k, true);
    if (b.requires_grad()) kernels::gemm_tn(a.value().data(), g.data(), t.grad_buffer(b).data(), n, k, m, true);
  });
}

Var matmul_bt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_bt");
  require_matrix(bv, "matmul_bt");
  require(av.cols() == bv.cols(), "matmul_bt", av.shape(), bv.shape());
  const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
  Tensor out(Shape{n, m});
  kernels::gemm_nt(av.data(), bv.data(), out.data(), n, k, m, false);
  return a.tape().record(std::move(out), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g, const Tensor&) {
    if (a.requires_grad()) kernels::gemm_nn(g.data(), b.value().data(), t.grad_buffer(a).data(), n, m, k, true);
    if (b.requires_grad()) kernels::gemm_tn(g.data(), a.value().data(), t.grad_buffer(b).data(), n, m, k, true);
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "add", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "sub", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    accumulate(t, a, g);
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "mul", av.shape(), bv.shape());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_buffer(b);
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_matrix(av, "add_bias");
  require(bv.size() == av.cols(), "add_bias", av.shape(), bv.shape());
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = av[r * m + j] + bv[j];
  return a.tape().record(std::move(out), {a, bias}, [a, bias, n, m](Tape& t, const Tensor& g, const Tensor&) {
    accumulate(t, a, g);
    if (bias.requires_grad()) {
      Tensor& gb = t.grad_buffer(bias);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[r * m + j];
    }
  });
}

Var mul_rows(Var a, Var s) {
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  require_matrix(av, "mul_rows");
  require(sv.size() == av.rows(), "mul_rows", av.shape(), sv.shape());
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = sv[r] * av[r * m + j];
  return a.tape().record(std::move(out), {a, s}, [a, s, n, m](Tape& t, const Tensor& g, const Tensor&) {
    if (a.requires_grad()) {
      Tensor& ga = t.grad_buffer(a);
      const Tensor& sv = s.value();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < m; ++j) ga[r * m + j] += g[r * m + j] * sv[r];
    }
    if (s.requires_grad()) {
      Tensor& gs = t.grad_buffer(s);
      const Tensor& av = a.value();
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += g[r * m + j] * av[r * m + j];
        gs[r] += acc;
      }
    }
  });
}

Var mix_rows(Var m, Var full, Var cheap) {
  const Tensor& mv = m.value();
  const Tensor& fv = full.value();
  const Tensor& cv = cheap.value();
  require_matrix(fv, "mix_rows");
  require(fv.same_shape(cv), "mix_rows", fv.shape(), cv.shape());
  require(mv.size() == fv.rows(), "mix_rows", mv.shape(), fv.shape());
  const std::size_t n = fv.rows(), d = fv.cols();
  Tensor out(fv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double w = mv[r];
    const double wc = 1.0 - w;
    // Binary weights select a branch exactly, so a hard mask reproduces the
    // selected branch bit for bit.
    if (w == 1.0) {
      std::copy_n(fv.data() + r * d, d, out.data() + r * d);
    } else if (w == 0.0) {
      std::copy_n(cv.data() + r * d, d, out.data() + r * d);
    } else {
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = w * fv[r * d + j] + wc * cv[r * d + j];
    }
  }
  return m.tape().record(std::move(out), {m, full, cheap}, [m, full, cheap, n, d](Tape& t, const Tensor& g, const Tensor&) {
    const Tensor& mv = m.value();
    if (full.requires_grad()) {
      Tensor& gf = t.grad_buffer(full);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) gf[r * d + j] += g[r * d + j] * mv[r];
    }
    if (cheap.requires_grad()) {
      Tensor& gc = t.grad_buffer(cheap);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) gc[r * d + j] += g[r * d + j] * (1.0 - mv[r]);
    }
    if (m.requires_grad()) {
      Tensor& gm = t.grad_buffer(m);
      const Tensor& fv = full.value();
      const Tensor& cv = cheap.value();
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += g[r * d + j] * (fv[r * d + j] - cv[r * d + j]);
        gm[r] += acc;
      }
    }
  });
}

Var scale(Var a, double c) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return a.tape().record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

Var add_scalar(Var a, double c) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) { accumulate(t, a, g); });
}

Var square(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
  });
}

Var silu(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * sigmoid_scalar(av[i]);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid_scalar(av[i]);
      ga[i] += g[i] * s * (1.0 + av[i] * (1.0 - s));
    }
  });
}

Var sigmoid(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(av[i]);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var relu(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) ga[i] += g[i];
  });
}

Var softplus(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_scalar(av[i]);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_buffer(a);
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_scalar(av[i]);
  });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  const std::size_t rows = row_count(av), w = row_width(av);
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * w;
    double* y = out.data() + r * w;
    const double mx = *std::max_element(x, x + w);
    double z = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < w; ++j) y[j] /= z;
  }
  return a.tape().record(std::move(out), {a}, [a, rows, w](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < w; ++j) dot += g[r * w + j] * y[r * w + j];
      for (std::size_t j = 0; j < w; ++j) ga[r * w + j] += y[r * w + j] * (g[r * w + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  require_matrix(xv, "layer_norm");
  require(gv.size() == xv.cols() && bv.size() == xv.cols(), "layer_norm", xv.shape(), gv.shape());
  const std::size_t n = xv.rows(), d = xv.cols();
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> rstd(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tape& tape = x.tape();
  if (!tape.grad_enabled()) return tape.record(std::move(out), {x, gamma, beta}, {});
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, const Tensor& g,
                                                                                            const Tensor&) {
                       const Tensor& gv = gamma.value();
                       if (gamma.requires_grad() || beta.requires_grad()) {
                         Tensor* gg = gamma.requires_grad() ? &t.grad_buffer(gamma) : nullptr;
                         Tensor* gb = beta.requires_grad() ? &t.grad_buffer(beta) : nullptr;
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t j = 0; j < d; ++j) {
                             if (gg) (*gg)[j] += g[r * d + j] * xhat[r * d + j];
                             if (gb) (*gb)[j] += g[r * d + j];
                           }
                       }
                       if (x.requires_grad()) {
                         Tensor& gx = t.grad_buffer(x);
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < n; ++r) {
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = g[r * d + j] * gv[j];
                             s1 += dh;
                             s2 += dh * xhat[r * d + j];
                           }
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = g[r * d + j] * gv[j];
                             gx[r * d + j] += rstd[r] * (dh - s1 * inv_d - xhat[r * d + j] * s2 * inv_d);
                           }
                         }
                       }
                     });
}

Var cosine_similarity(Var a, Var b, double eps) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "cosine_similarity", av.shape(), bv.shape());
  const std::size_t n = row_count(av), k = row_width(av);
  Tensor out(Shape{n});
  std::vector<double> na(n), nb(n), denom(n);
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      dot += av[r * k + j] * bv[r * k + j];
      sa += av[r * k + j] * av[r * k + j];
      sb += bv[r * k + j] * bv[r * k + j];
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    denom[r] = std::max(na[r] * nb[r], eps);
    out[r] = dot / denom[r];
  }
  return a.tape().record(
      std::move(out), {a, b},
      [a, b, n, k, eps, na = std::move(na), nb = std::move(nb), denom = std::move(denom)](Tape& t, const Tensor& g,
                                                                                         const Tensor& c) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        for (std::size_t r = 0; r < n; ++r) {
          const bool floored = na[r] * nb[r] <= eps;
          // Above the floor: d cos / d a = b / (|a||b|) - cos * a / |a|^2.
          if (a.requires_grad()) {
            Tensor& ga = t.grad_buffer(a);
            for (std::size_t j = 0; j < k; ++j) {
              double d = bv[r * k + j] / denom[r];
              if (!floored) d -= c[r] * av[r * k + j] / (na[r] * na[r]);
              ga[r * k + j] += g[r] * d;
            }
          }
          if (b.requires_grad()) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t j = 0; j < k; ++j) {
              double d = av[r * k + j] / denom[r];
              if (!floored) d -= c[r] * bv[r * k + j] / (nb[r] * nb[r]);
              gb[r * k + j] += g[r] * d;
            }
          }
        }
      });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy");
  if (targets.size() != lv.rows())
    throw ConfigError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                      std::to_string(lv.rows()) + " rows");
  const std::size_t n = lv.rows(), v = lv.cols();
  Tensor out(Shape{n});
  for (std::size_t r = 0; r < n; ++r) {
    const int tgt = targets[r];
    if (tgt < 0) continue;
    if (static_cast<std::size_t>(tgt) >= v) throw InputError("cross_entropy: target out of range");
    const double* x = lv.data() + r * v;
    const double mx = *std::max_element(x, x + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(x[j] - mx);
    out[r] = std::log(z) + mx - x[tgt];
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape().record(std::move(out), {logits}, [logits, n, v, tg = std::move(tg)](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gl = t.grad_buffer(logits);
    const Tensor& lv = logits.value();
    for (std::size_t r = 0; r < n; ++r) {
      if (tg[r] < 0 || g[r] == 0.0) continue;
      const double* x = lv.data() + r * v;
      const double mx = *std::max_element(x, x + v);
      double z = 0.0;
      for (std::size_t j = 0; j < v; ++j) z += std::exp(x[j] - mx);
      for (std::size_t j = 0; j < v; ++j) {
        double p = std::exp(x[j] - mx) / z;
        if (static_cast<int>(j) == tg[r]) p -= 1.0;
        gl[r * v + j] += g[r] * p;
      }
    }
  });
}

Var huber(Var a, Var b, double delta) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "huber", av.shape(), bv.shape());
  if (!(delta > 0)) throw ConfigError("huber: delta must be positive");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = av[i] - bv[i];
    const double ae = std::abs(e);
    out[i] = ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, delta](Tape& t, const Tensor& g, const Tensor&) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor* ga = a.requires_grad() ? &t.grad_buffer(a) : nullptr;
    Tensor* gb = b.requires_grad() ? &t.grad_buffer(b) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double e = std::clamp(av[i] - bv[i], -delta, delta);
      if (ga) (*ga)[i] += g[i] * e;
      if (gb) (*gb)[i] -= g[i] * e;
    }
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no operands");
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    require_matrix(pv, "concat_cols");
    require(pv.rows() == n, "concat_cols", parts[0].shape(), pv.shape());
    widths.push_back(pv.cols());
    total += pv.cols();
  }
  Tensor out(Shape{n, total});
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& pv = parts[i].value();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(pv.data() + r * widths[i], widths[i], out.data() + r * total + off);
    off += widths[i];
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [ins, widths, n, total](Tape& t, const Tensor& g, const Tensor&) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (ins[i].requires_grad()) {
        Tensor& gi = t.grad_buffer(ins[i]);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < widths[i]; ++j) gi[r * widths[i] + j] += g[r * total + off + j];
      }
      off += widths[i];
    }
  });
}

Var repeat_rows(Var v, std::size_t n) {
  const Tensor& vv = v.value();
  const std::size_t m = vv.size();
  Tensor out(Shape{n, m});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(vv.data(), m, out.data() + r * m);
  return v.tape().record(std::move(out), {v}, [v, n, m](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gv = t.grad_buffer(v);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < m; ++j) gv[j] += g[r * m + j];
  });
}

Var reshape(Var a, Shape shape) {
  const Tensor& av = a.value();
  if (shape_size(shape) != av.size())
    throw ConfigError("reshape: " + shape_string(av.shape()) + " -> " + shape_string(shape));
  return a.tape().record(Tensor(std::move(shape), av.storage()), {a},
                         [a](Tape& t, const Tensor& g, const Tensor&) { accumulate(t, a, g); });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var straight_through(const Tensor& hard, Var soft) {
  require(hard.same_shape(soft.value()), "straight_through", hard.shape(), soft.shape());
  return soft.tape().record(hard, {soft}, [soft](Tape& t, const Tensor& g, const Tensor&) { accumulate(t, soft, g); });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double x : av.storage()) s += x;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_buffer(a);
    for (double& x : ga.storage()) x += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ConfigError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var gather(Var a, std::span<const std::size_t> idx) {
  const Tensor& av = a.value();
  Tensor out(Shape{idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= av.size()) throw ConfigError("gather: index out of range");
    out[i] = av[idx[i]];
  }
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  return a.tape().record(std::move(out), {a}, [a, ix = std::move(ix)](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ix.size(); ++i) ga[ix[i]] += g[i];
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "gather_rows");
  const std::size_t d = tv.cols();
  Tensor out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows())
      throw InputError("token id " + std::to_string(ids[i]) + " out of range [0, " + std::to_string(tv.rows()) + ")");
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> ix(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table}, [table, d, ix = std::move(ix)](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gt = t.grad_buffer(table);
    for (std::size_t i = 0; i < ix.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(ix[i]) * d + j] += g[i * d + j];
  });
}

Var causal_attention(Var qkv, std::size_t seq_len, std::size_t n_heads) {
  const Tensor& x = qkv.value();
  require_matrix(x, "causal_attention");
  const std::size_t n = x.rows(), w = x.cols();
  if (w % 3 != 0 || seq_len == 0 || n % seq_len != 0 || n_heads == 0 || (w / 3) % n_heads != 0)
    throw ConfigError("causal_attention: incompatible shape " + shape_string(x.shape()));
  const std::size_t d = w / 3, dh = d / n_heads, T = seq_len, B = n / seq_len;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out(Shape{n, d});
  // probs[((b * H + h) * T + i) * T + j], zero above the diagonal.
  std::vector<double> probs(B * n_heads * T * T, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = x.data() + (b * T + i) * w + h * dh;
        double* pr = probs.data() + ((b * n_heads + h) * T + i) * T;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = x.data() + (b * T + j) * w + d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          pr[j] = s * sc;
          mx = std::max(mx, pr[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          z += pr[j];
        }
        double* oi = out.data() + (b * T + i) * d + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] /= z;
          const double* vj = x.data() + (b * T + j) * w + 2 * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pr[j] * vj[c];
        }
      }
    }
  }
  Tape& tape = qkv.tape();
  if (!tape.grad_enabled()) return tape.record(std::move(out), {qkv}, {});
  return tape.record(std::move(out), {qkv},
                     [qkv, B, T, n_heads, d, dh, w, sc, probs = std::move(probs)](Tape& t, const Tensor& g, const Tensor&) {
                       const Tensor& x = qkv.value();
                       Tensor& gx = t.grad_buffer(qkv);
                       std::vector<double> dp(T);
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t h = 0; h < n_heads; ++h) {
                           for (std::size_t i = 0; i < T; ++i) {
                             const double* pr = probs.data() + ((b * n_heads + h) * T + i) * T;
                             const double* gi = g.data() + (b * T + i) * d + h * dh;
                             double dot = 0.0;
                             for (std::size_t j = 0; j <= i; ++j) {
                               const double* vj = x.data() + (b * T + j) * w + 2 * d + h * dh;
                               double* gvj = gx.data() + (b * T + j) * w + 2 * d + h * dh;
                               double s = 0.0;
                               for (std::size_t c = 0; c < dh; ++c) {
                                 s += gi[c] * vj[c];
                                 gvj[c] += pr[j] * gi[c];
                               }
                               dp[j] = s;
                               dot += pr[j] * s;
                             }
                             const double* qi = x.data() + (b * T + i) * w + h * dh;
                             double* gqi = gx.data() + (b * T + i) * w + h * dh;
                             for (std::size_t j = 0; j <= i; ++j) {
                               const double ds = pr[j] * (dp[j] - dot) * sc;
                               if (ds == 0.0) continue;
                               const double* kj = x.data() + (b * T + j) * w + d + h * dh;
                               double* gkj = gx.data() + (b * T + j) * w + d + h * dh;
                               for (std::size_t c = 0; c < dh; ++c) {
                                 gqi[c] += ds * kj[c];
                                 gkj[c] += ds * qi[c];
                               }
                             }
                           }
                         }
                       }
                     });
}

}  // namespace condepth
