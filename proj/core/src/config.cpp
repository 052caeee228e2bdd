// Copyright 2026 The condepth Authors
// SPDX-License-Identifier: Apache-2.0

#include "condepth/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "condepth/error.hpp"

namespace condepth {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(std::uint64_t v, int) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a nonnegative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not true or false");
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

#define CD_SIZE(KEY, EXPR)                                                                          \
  Field {                                                                                           \
    KEY, [](const ExperimentConfig& c) { return fmt(static_cast<std::size_t>(c.EXPR)); },           \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {                       \
          c.EXPR = static_cast<std::size_t>(to_u64(k, v));                                          \
        }                                                                                           \
  }
#define CD_U64(KEY, EXPR)                                                                                   \
  Field {                                                                                                   \
    KEY, [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.EXPR), 0); },              \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.EXPR = to_u64(k, v); }      \
  }
#define CD_REAL(KEY, EXPR)                                                                                  \
  Field {                                                                                                   \
    KEY, [](const ExperimentConfig& c) { return fmt(c.EXPR); },                                             \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.EXPR = to_double(k, v); }   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"name", [](const ExperimentConfig& c) { return c.name; },
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.name = v; }},
      {"gate", [](const ExperimentConfig& c) { return std::string(to_string(c.gate)); },
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.gate = parse_gate_kind(v); }},
      CD_U64("seed", seed),
      CD_SIZE("steps", steps),
      CD_SIZE("batch_size", batch_size),
      CD_SIZE("eval_every", eval_every),
      CD_SIZE("eval_batches", eval_batches),
      {"a2_shuffled", [](const ExperimentConfig& c) { return fmt(c.a2_shuffled); },
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.a2_shuffled = to_bool(k, v); }},
      CD_REAL("loss.jepa", weights.jepa),
      CD_REAL("loss.util", weights.util),
      CD_REAL("loss.rank", weights.rank),
      CD_REAL("loss.budget", weights.budget),
      CD_REAL("loss.alive", weights.alive),
      CD_REAL("gate.budget", gate_cfg.budget),
      CD_REAL("gate.temperature", gate_cfg.temperature),
      CD_REAL("gate.min_alive", gate_cfg.min_alive),
      CD_SIZE("oracle.window", oracle.window),
      CD_REAL("oracle.decay", oracle.decay),
      CD_SIZE("oracle.warmup", oracle.warmup),
      CD_SIZE("oracle.interval", oracle.interval),
      CD_SIZE("oracle.rank_pairs", oracle.rank_pairs),
      CD_REAL("oracle.huber_delta", oracle.huber_delta),
      {"oracle.prefix", [](const ExperimentConfig& c) { return std::string(to_string(c.oracle.prefix)); },
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.oracle.prefix = parse_prefix_policy(v); }},
      CD_SIZE("model.n_layers", model.n_layers),
      CD_SIZE("model.n_controlled", model.n_controlled),
      CD_SIZE("model.d_model", model.d_model),
      CD_SIZE("model.n_heads", model.n_heads),
      CD_SIZE("model.d_ff", model.d_ff),
      CD_SIZE("model.cheap_rank", model.cheap_rank),
      CD_SIZE("model.vocab_size", model.vocab_size),
      CD_SIZE("model.seq_len", model.seq_len),
      CD_SIZE("model.d_context", model.d_context),
      CD_SIZE("model.d_summary", model.d_summary),
      CD_SIZE("model.d_action", model.d_action),
      CD_SIZE("model.predictor_hidden", model.predictor_hidden),
      CD_SIZE("model.decision_hidden", model.decision_hidden),
      CD_REAL("optim.lr", optim.lr),
      CD_REAL("optim.weight_decay", optim.weight_decay),
      CD_REAL("optim.beta1", optim.beta1),
      CD_REAL("optim.beta2", optim.beta2),
      CD_REAL("optim.eps", optim.eps),
      CD_REAL("optim.clip_norm", optim.clip_norm),
      CD_SIZE("optim.warmup_steps", optim.warmup_steps),
      CD_REAL("optim.final_lr_fraction", optim.final_lr_fraction),
      CD_SIZE("pretrain.steps", pretrain_steps),
      CD_U64("pretrain.seed", pretrain_seed),
      CD_REAL("pretrain.lr", pretrain_lr),
      CD_SIZE("pretrain.warmup", pretrain_warmup),
      {"corpus.path", [](const ExperimentConfig& c) { return c.corpus; },
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.corpus = v; }},
      CD_REAL("corpus.val_fraction", val_fraction),
      CD_U64("corpus.split_seed", split_seed),
  };
  return f;
}

#undef CD_SIZE
#undef CD_U64
#undef CD_REAL

ExperimentConfig desk_defaults() {
  ExperimentConfig c;
  c.optim.warmup_steps = 100;
  return c;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

KeyValues config_settings(const ExperimentConfig& config) {
  KeyValues out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

std::string config_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_settings(config)) out += k + " = " + v + "\n";
  return out;
}

std::string config_key(const ExperimentConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_settings(config))
    if (k != "seed") out += k + " = " + v + "\n";
  return out;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"g1-base", "g1-costmatch", "g3",     "a1",     "a2",    "a3-g3",
                                                 "a3-g1",   "a4-025",       "a4-200", "g1-b25", "g3-b25"};
  return names;
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c = desk_defaults();
  c.name = name;
  if (name == "g1-base") {
    c.gate = GateKind::g1;
  } else if (name == "g1-costmatch") {
    c.gate = GateKind::g1_costmatch;
  } else if (name == "g3") {
    c.gate = GateKind::g3;
  } else if (name == "a1") {
    c.weights.jepa = 0.0;
  } else if (name == "a2") {
    c.a2_shuffled = true;
  } else if (name == "a3-g3") {
    c.weights.util = c.weights.rank = 0.0;
  } else if (name == "a3-g1") {
    c.gate = GateKind::g1;
    c.weights.util = c.weights.rank = 0.0;
  } else if (name == "a4-025") {
    c.weights.jepa = 0.25;
  } else if (name == "a4-200") {
    c.weights.jepa = 2.0;
  } else if (name == "g1-b25") {
    c.gate = GateKind::g1;
    c.gate_cfg.budget = 0.25;
  } else if (name == "g3-b25") {
    c.gate_cfg.budget = 0.25;
  } else {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown config '" + name + "'; valid names: " + valid);
  }
  return c;
}

ExperimentConfig load_config(const std::string& name_or_path) {
  for (const auto& n : preset_names())
    if (n == name_or_path) return preset(n);
  std::ifstream in(name_or_path);
  if (!in) {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("'" + name_or_path + "' is neither a config file nor a preset; valid names: " + valid);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  const KeyValues kv = parse_key_values(buf.str());
  ExperimentConfig c = desk_defaults();
  for (const auto& [k, v] : kv)
    if (k == "base") c = preset(v);
  for (const auto& [k, v] : kv)
    if (k != "base") apply_setting(c, k, v);
  return c;
}

std::string version_string() {
#ifdef CONDEPTH_VERSION
  return CONDEPTH_VERSION;
#else
  return "unknown";
#endif
}

std::vector<MatrixEntry> default_matrix() {
  const std::vector<std::uint64_t> main = {42, 123, 7};
  return {
      {"g1-base", main}, {"g1-costmatch", {42}}, {"g3", main},     {"a1", main},
      {"a2", main},      {"a3-g3", main},        {"a3-g1", main},  {"a4-025", main},
      {"a4-200", main},  {"g1-b25", {42, 123}},  {"g3-b25", {42, 123}},
  };
}

}  // namespace condepth
