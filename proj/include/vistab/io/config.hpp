#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "vistab/analysis/probe.hpp"
#include "vistab/experiments.hpp"
#include "vistab/train.hpp"
#include "vistab/vae.hpp"

namespace vistab {

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t episodes = 20000;
  double grad_clip = 1.0;
  std::string supervised = "none";  // none, actions or beliefs
};

/// Everything a command needs. Every field has a default; files override.
struct ExperimentConfig {
  TaskConfig env;
  ModelConfig model;
  VaeConfig vae;
  VaePretrainConfig vae_run;
  RlHyper rl;
  RunConfig run;
  EvalGrid eval{.validities = {0.25, 0.5, 0.75, 1.0},
                .cue_positions = {Location::S1, Location::S4},
                .deltas = {0, 5, 10, 15, 20, 25, 30, 40, 50, 60},
                .trials = 100};
  ProbeTrainConfig probe;

  Controller controller() const {
    return run.supervised == "none" ? Controller::ActorCritic : parse_supervised(run.supervised);
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.task = env;
    t.rl = rl;
    t.episodes = run.episodes;
    t.seed = run.seed;
    t.grad_clip = run.grad_clip;
    return t;
  }

  void validate() const {
    env.validate();
    rl.validate();
    if (model.d_mem == 0 || model.head_width < 4) throw ConfigError("model.d_mem must be > 0 and model.head_width >= 4");
    if (model.n_time < std::size_t(kTimesteps)) throw ConfigError("model.n_time must be >= 7");
    if (model.support.atoms < 2 || !(model.support.z_max > model.support.z_min))
      throw ConfigError("model.atoms must be >= 2 and model.z_max > model.z_min");
    if (vae.d_latent == 0 || !(vae.beta >= 0)) throw ConfigError("vae.d_latent must be > 0 and vae.beta >= 0");
    if (eval.validities.empty() || eval.cue_positions.empty() || eval.deltas.empty())
      throw ConfigError("eval grid lists must be non-empty");
    for (double v : eval.validities)
      if (!is_valid_validity(v)) throw ConfigError("eval.validities: bad validity " + std::to_string(v));
    controller();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not a non-negative integer: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& x : split_list(s)) out.push_back(parse_double(x));
  return out;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

inline std::vector<Location> parse_locations(const std::string& s) {
  std::vector<Location> out;
  for (const auto& x : split_list(s)) out.push_back(parse_location(x));
  return out;
}

inline std::string join_locations(const std::vector<Location>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + to_string(v[i]);
  return out;
}

struct ConfigKey {
  std::string name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class M>
ConfigKey num_key(std::string name, M ExperimentConfig::*block, double M::*field) {
  return {std::move(name), [=](const ExperimentConfig& c) { return format_double(c.*block.*field); },
          [=](ExperimentConfig& c, const std::string& v) { c.*block.*field = parse_double(v); }};
}

template <class M, class U>
ConfigKey uint_key(std::string name, M ExperimentConfig::*block, U M::*field) {
  return {std::move(name), [=](const ExperimentConfig& c) { return std::to_string(c.*block.*field); },
          [=](ExperimentConfig& c, const std::string& v) { c.*block.*field = static_cast<U>(parse_uint(v)); }};
}

template <class M>
ConfigKey bool_key(std::string name, M ExperimentConfig::*block, bool M::*field) {
  return {std::move(name), [=](const ExperimentConfig& c) { return std::string(c.*block.*field ? "true" : "false"); },
          [=](ExperimentConfig& c, const std::string& v) { c.*block.*field = parse_bool(v); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back({"env.validities", [](const C& c) { return join_doubles(c.env.validities); },
                 [](C& c, const std::string& v) { c.env.validities = parse_doubles(v); }});
    k.push_back({"env.cue_positions", [](const C& c) { return join_locations(c.env.cue_positions); },
                 [](C& c, const std::string& v) { c.env.cue_positions = parse_locations(v); }});
    k.push_back(num_key("env.sigma", &C::env, &TaskConfig::sigma));
    k.push_back({"env.fixed_delta",
                 [](const C& c) { return c.env.fixed_delta ? format_double(*c.env.fixed_delta) : std::string("none"); },
                 [](C& c, const std::string& v) {
                   if (v == "none") c.env.fixed_delta.reset();
                   else c.env.fixed_delta = parse_double(v);
                 }});
    k.push_back(bool_key("env.adapt_difficulty", &C::env, &TaskConfig::adapt_difficulty));
    k.push_back({"env.k_start", [](const C& c) { return format_double(c.env.difficulty.k_start); },
                 [](C& c, const std::string& v) { c.env.difficulty.k_start = parse_double(v); }});
    k.push_back({"env.k_min", [](const C& c) { return format_double(c.env.difficulty.k_min); },
                 [](C& c, const std::string& v) { c.env.difficulty.k_min = parse_double(v); }});
    k.push_back({"env.threshold", [](const C& c) { return format_double(c.env.difficulty.threshold); },
                 [](C& c, const std::string& v) { c.env.difficulty.threshold = parse_double(v); }});
    k.push_back({"env.shrink", [](const C& c) { return format_double(c.env.difficulty.shrink); },
                 [](C& c, const std::string& v) { c.env.difficulty.shrink = parse_double(v); }});
    k.push_back({"env.window", [](const C& c) { return std::to_string(c.env.difficulty.window); },
                 [](C& c, const std::string& v) { c.env.difficulty.window = int(parse_uint(v)); }});

    k.push_back({"model.variant", [](const C& c) { return std::string(to_string(c.model.variant)); },
                 [](C& c, const std::string& v) { c.model.variant = parse_variant(v); }});
    k.push_back(bool_key("model.scaled_logits", &C::model, &ModelConfig::scaled_logits));
    k.push_back(uint_key("model.d_mem", &C::model, &ModelConfig::d_mem));
    k.push_back(uint_key("model.n_time", &C::model, &ModelConfig::n_time));
    k.push_back(uint_key("model.head_width", &C::model, &ModelConfig::head_width));
    k.push_back({"model.atoms", [](const C& c) { return std::to_string(c.model.support.atoms); },
                 [](C& c, const std::string& v) { c.model.support.atoms = parse_uint(v); }});
    k.push_back({"model.z_min", [](const C& c) { return format_double(c.model.support.z_min); },
                 [](C& c, const std::string& v) { c.model.support.z_min = parse_double(v); }});
    k.push_back({"model.z_max", [](const C& c) { return format_double(c.model.support.z_max); },
                 [](C& c, const std::string& v) { c.model.support.z_max = parse_double(v); }});

    k.push_back(uint_key("vae.d_latent", &C::vae, &VaeConfig::d_latent));
    k.push_back(num_key("vae.beta", &C::vae, &VaeConfig::beta));
    k.push_back(uint_key("vae.dataset", &C::vae_run, &VaePretrainConfig::dataset_size));
    k.push_back(uint_key("vae.batch", &C::vae_run, &VaePretrainConfig::batch));
    k.push_back(uint_key("vae.steps", &C::vae_run, &VaePretrainConfig::steps));
    k.push_back(num_key("vae.learning_rate", &C::vae_run, &VaePretrainConfig::learning_rate));

    k.push_back(num_key("rl.gamma", &C::rl, &RlHyper::gamma));
    k.push_back(num_key("rl.eta", &C::rl, &RlHyper::eta));
    k.push_back(num_key("rl.beta", &C::rl, &RlHyper::beta));
    k.push_back(num_key("rl.lambda_pol", &C::rl, &RlHyper::lambda_pol));
    k.push_back(num_key("rl.lambda_entropy", &C::rl, &RlHyper::lambda_entropy));
    k.push_back(num_key("rl.epsilon", &C::rl, &RlHyper::epsilon));
    k.push_back(uint_key("rl.target_sync", &C::rl, &RlHyper::target_sync));
    k.push_back(num_key("rl.learning_rate", &C::rl, &RlHyper::learning_rate));
    k.push_back(uint_key("rl.replay_capacity", &C::rl, &RlHyper::replay_capacity));
    k.push_back(uint_key("rl.batch", &C::rl, &RlHyper::batch));
    k.push_back(uint_key("rl.updates_per_trial", &C::rl, &RlHyper::updates_per_trial));
    k.push_back({"rl.target", [](const C& c) { return std::string(to_string(c.rl.target)); },
                 [](C& c, const std::string& v) { c.rl.target = parse_target_kind(v); }});

    k.push_back(uint_key("run.seed", &C::run, &RunConfig::seed));
    k.push_back(uint_key("run.episodes", &C::run, &RunConfig::episodes));
    k.push_back(num_key("run.grad_clip", &C::run, &RunConfig::grad_clip));
    k.push_back({"run.supervised", [](const C& c) { return c.run.supervised; },
                 [](C& c, const std::string& v) {
                   if (v != "none") parse_supervised(v);
                   c.run.supervised = v;
                 }});

    k.push_back({"eval.validities", [](const C& c) { return join_doubles(c.eval.validities); },
                 [](C& c, const std::string& v) { c.eval.validities = parse_doubles(v); }});
    k.push_back({"eval.cue_positions", [](const C& c) { return join_locations(c.eval.cue_positions); },
                 [](C& c, const std::string& v) { c.eval.cue_positions = parse_locations(v); }});
    k.push_back({"eval.deltas", [](const C& c) { return join_doubles(c.eval.deltas); },
                 [](C& c, const std::string& v) { c.eval.deltas = parse_doubles(v); }});
    k.push_back(uint_key("eval.trials", &C::eval, &EvalGrid::trials));
    k.push_back(num_key("eval.sigma", &C::eval, &EvalGrid::sigma));
    k.push_back({"eval.change",
                 [](const C& c) { return c.eval.change ? std::string(*c.eval.change ? "true" : "false") : "random"; },
                 [](C& c, const std::string& v) {
                   if (v == "random") c.eval.change.reset();
                   else c.eval.change = parse_bool(v);
                 }});

    k.push_back(uint_key("probe.epochs", &C::probe, &ProbeTrainConfig::epochs));
    k.push_back(uint_key("probe.batch", &C::probe, &ProbeTrainConfig::batch));
    k.push_back(num_key("probe.learning_rate", &C::probe, &ProbeTrainConfig::learning_rate));
    k.push_back(uint_key("probe.width1", &C::probe, &ProbeTrainConfig::width1));
    k.push_back(uint_key("probe.width2", &C::probe, &ProbeTrainConfig::width2));
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Sets one dotted key; unknown keys are rejected.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_keys())
    if (k.name == key) {
      try {
        k.set(cfg, value);
      } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
      } catch (const std::exception& e) {
        throw ConfigError(key + ": " + e.what());
      }
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Reads `key = value` lines. `[section]` headers prefix the keys that
/// follow; `#` starts a comment.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig cfg = {}) {
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    auto key = detail::trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      set_config_value(cfg, key, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

/// Every key with its current value, one per line, in a fixed order.
inline std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace vistab
