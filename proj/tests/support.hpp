// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

// Small models shared by the unit tests and the acceptance binary.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "condepth/backbone.hpp"
#include "condepth/controllers.hpp"
#include "condepth/trainer.hpp"

namespace condepth::testing {

inline ModelConfig tiny_model() {
  ModelConfig m;
  m.n_layers = 3;
  m.n_controlled = 2;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_ff = 32;
  m.cheap_rank = 4;
  m.vocab_size = 32;
  m.seq_len = 8;
  m.d_context = 8;
  m.d_summary = 4;
  m.d_action = 2;
  return m;
}

/// Backbone plus controller with random weights. `cheap_scale` > 0 replaces the
/// zero-initialized cheap down projections so the cheap path carries signal.
struct TinyModel {
  ModelConfig cfg;
  GateConfig gate;
  ParamStore store;
  std::unique_ptr<Backbone> model;
  std::unique_ptr<Controller> ctrl;
  std::vector<int> tokens;

  TinyModel(GateKind kind, std::uint64_t seed, double cheap_scale = 0.3, std::size_t batch = 2,
            ModelConfig config = tiny_model())
      : cfg(config) {
    Rng rng(seed);
    model = std::make_unique<Backbone>(cfg, store, rng);
    ctrl = make_controller(kind, cfg, store, rng);
    if (cheap_scale > 0.0)
      for (ParamId id = 0; id < store.size(); ++id)
        if (store.name(id).rfind("cheap_ffn.", 0) == 0 && store.name(id).find("w_down") != std::string::npos)
          for (double& v : store.mutable_value(id).storage()) v = cheap_scale * rng.normal();
    store.set_partition(controller_only_partition(*ctrl));
    for (std::size_t i = 0; i < batch * cfg.seq_len; ++i)
      tokens.push_back(static_cast<int>(rng.index(cfg.vocab_size)));
  }

  std::vector<ParamId> trainable() const {
    std::vector<ParamId> out;
    for (ParamId id = 0; id < store.size(); ++id)
      if (store.trainable(id)) out.push_back(id);
    return out;
  }
  std::vector<ParamId> with_prefix(const std::string& prefix) const {
    std::vector<ParamId> out;
    for (ParamId id : trainable())
      if (store.name(id).rfind(prefix, 0) == 0) out.push_back(id);
    return out;
  }
  std::vector<ParamId> controller_ids() const {
    std::vector<ParamId> out;
    for (ParamId id : trainable())
      if (ctrl->owns(store.name(id))) out.push_back(id);
    return out;
  }
};

}  // namespace condepth::testing
