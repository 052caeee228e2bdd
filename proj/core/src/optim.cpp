// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/optim.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "condepth/error.hpp"

namespace condepth {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

ParamId ParamStore::add(std::string name, Tensor value) {
  if (partitioned_) throw UsageError("ParamStore::add after partition: " + name);
  if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  const ParamId id = entries_.size();
  index_.emplace(name, id);
  entries_.push_back(Entry{std::move(name), std::move(value), false, {}, {}});
  return id;
}

void ParamStore::set_partition(const std::function<bool(std::string_view)>& is_trainable) {
  if (partitioned_) throw UsageError("ParamStore partition is immutable once set");
  for (Entry& e : entries_) {
    e.trainable = is_trainable(e.name);
    if (e.trainable) {
      e.m = Tensor(e.value.shape());
      e.v = Tensor(e.value.shape());
    }
  }
  partitioned_ = true;
}

std::optional<ParamId> ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

ParamId ParamStore::at(std::string_view name) const {
  auto id = find(name);
  if (!id) throw ConfigError("unknown parameter: " + std::string(name));
  return *id;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const Entry& e : entries_)
    if (e.trainable) out.push_back(e.name);
  return out;
}

std::size_t ParamStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_)
    if (e.trainable) n += e.value.size();
  return n;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

std::uint64_t ParamStore::hash(ParamId id) const {
  const Entry& e = entries_.at(id);
  std::uint64_t h = fnv1a(kFnvOffset, e.name.data(), e.name.size());
  return fnv1a(h, e.value.data(), e.value.size() * sizeof(double));
}

std::uint64_t ParamStore::frozen_hash() const {
  std::uint64_t h = kFnvOffset;
  for (ParamId id = 0; id < entries_.size(); ++id) {
    if (entries_[id].trainable) continue;
    const std::uint64_t eh = hash(id);
    h = fnv1a(h, &eh, sizeof(eh));
  }
  return h;
}

void OptimConfig::validate() const {
  if (!(lr > 0) || !(weight_decay >= 0) || !(eps > 0) || !(clip_norm > 0))
    throw ConfigError("optimizer: lr, eps and clip_norm must be positive, weight_decay non-negative");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("optimizer: betas must lie in (0, 1)");
  if (total_steps == 0 || warmup_steps >= total_steps)
    throw ConfigError("optimizer: warmup_steps must be < total_steps");
  if (!(final_lr_fraction > 0 && final_lr_fraction <= 1)) throw ConfigError("optimizer: final_lr_fraction in (0, 1]");
}

double lr_at(std::size_t step, const OptimConfig& config) {
  if (step > config.total_steps) step = config.total_steps;
  if (config.warmup_steps > 0 && step <= config.warmup_steps) {
    return config.lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  const double span = static_cast<double>(config.total_steps - config.warmup_steps);
  const double progress = static_cast<double>(step - config.warmup_steps) / span;
  const double floor = config.lr * config.final_lr_fraction;
  return floor + (config.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_global_norm(Gradients& grads, double clip_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double x : g.storage()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double s = clip_norm / norm;
    for (Tensor& g : grads)
      for (double& x : g.storage()) x *= s;
  }
  return norm;
}

void adamw_step(ParamStore& store, const Gradients& grads, std::size_t step, const OptimConfig& config) {
  if (step == 0) throw UsageError("adamw_step: step is 1-based");
  if (!store.partitioned()) throw UsageError("adamw_step: ParamStore has no partition");
  if (grads.size() > store.size()) throw InternalError("adamw_step: more gradients than parameters");
  const double lr = lr_at(step, config);
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (ParamId id = 0; id < store.entries_.size(); ++id) {
    auto& e = store.entries_[id];
    const Tensor* g = id < grads.size() && !grads[id].empty() ? &grads[id] : nullptr;
    if (!e.trainable) {
      if (g) throw InternalError("partition violation: gradient for frozen parameter " + e.name);
      continue;
    }
    if (g && g->size() != e.value.size()) throw InternalError("gradient shape mismatch for " + e.name);
    double* w = e.value.data();
    double* m = e.m.data();
    double* v = e.v.data();
    const double decay = 1.0 - lr * config.weight_decay;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] *= decay;
      w[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace condepth
