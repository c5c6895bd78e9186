#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "vistab/agent.hpp"
#include "vistab/attention.hpp"
#include "vistab/environment.hpp"
#include "vistab/memory.hpp"
#include "vistab/vae.hpp"

namespace vistab {

enum class Controller { ActorCritic, SupervisedActions, SupervisedBeliefs };

inline Controller parse_supervised(const std::string& s) {
  if (s == "actions") return Controller::SupervisedActions;
  if (s == "beliefs") return Controller::SupervisedBeliefs;
  throw ConfigError("unknown supervised mode '" + s + "' (expected actions or beliefs)");
}

inline const char* to_string(Controller c) {
  switch (c) {
    case Controller::ActorCritic: return "actor-critic";
    case Controller::SupervisedActions: return "actions";
    case Controller::SupervisedBeliefs: return "beliefs";
  }
  return "?";
}

struct ModelConfig {
  FeedbackVariant variant = FeedbackVariant::Multiplicative;
  bool scaled_logits = false;
  std::size_t d_mem = 64;
  std::size_t n_time = kDefaultTimeSlots;
  std::size_t head_width = 256;
  Support support;

  std::size_t d_model() const { return model_width(kFeatureDim, n_time); }
  std::size_t d_state() const { return kPatches * d_mem; }
};

/// Sigmoid read-out used by the supervised baselines: three
/// (affine, layer-norm, ELU) blocks over the flattened memory, then a logit.
template <std::floating_point T>
struct Decoder {
  std::vector<Linear<T>> layers;
  std::vector<LayerNorm<T>> norms;
  Linear<T> out;

  Decoder() = default;
  Decoder(std::size_t d_in, std::size_t width, Rng& rng) {
    auto w = trunk(d_in, width, 1);
    for (std::size_t k = 0; k < 3; ++k) {
      layers.emplace_back("decoder." + std::to_string(k), w[k], w[k + 1], rng);
      norms.emplace_back("decoder.ln" + std::to_string(k), w[k + 1]);
    }
    out = Linear<T>("decoder.out", w[3], 1, rng);
  }

  Var<T> logit(Tape<T>& tape, Var<T> h) {
    for (std::size_t k = 0; k < layers.size(); ++k) h = elu(norms[k](tape, layers[k](tape, h)));
    return out(tape, h);
  }

  void collect(ParamList<T>& o) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      layers[k].collect(o);
      norms[k].collect(o);
    }
    out.collect(o);
  }
};

/// Everything learnable downstream of the frozen encoder.
template <std::floating_point T>
struct Agent {
  ModelConfig cfg;
  Controller controller = Controller::ActorCritic;
  AttentionParams<T> attn;
  LstmParams<T> lstm;
  Heads<T> heads;
  Heads<T> target;
  Decoder<T> decoder;

  Agent() = default;
  Agent(const ModelConfig& c, Rng& rng, Controller ctl = Controller::ActorCritic)
      : cfg(c),
        controller(ctl),
        attn({.variant = c.variant, .scaled = c.scaled_logits}, c.d_model(), c.d_mem, rng),
        lstm(c.d_model(), c.d_mem, rng) {
    if (ctl == Controller::ActorCritic) {
      heads = Heads<T>(c.d_state(), c.head_width, c.support.atoms, rng);
      target = Heads<T>(c.d_state(), c.head_width, c.support.atoms, rng, "target.");
      sync_target();
    } else {
      decoder = Decoder<T>(c.d_state(), c.head_width, rng);
    }
  }

  void sync_target() {
    ParamList<T> from, to;
    heads.collect(from);
    target.collect(to);
    copy_values(from, to);
  }

  void collect_core(ParamList<T>& out) {
    attn.collect(out);
    lstm.collect(out);
  }

  /// Parameters updated by the optimizer.
  void collect_trainable(ParamList<T>& out) {
    collect_core(out);
    if (controller == Controller::ActorCritic) {
      heads.collect(out);
    } else {
      decoder.collect(out);
    }
  }

  /// Everything stored in a checkpoint.
  void collect_all(ParamList<T>& out) {
    collect_trainable(out);
    if (controller == Controller::ActorCritic) target.collect(out);
  }
};

/// Per-frame encoder features with memoization of the stimulus-free frames
/// (blank and cue), which repeat across trials.
class FeatureCache {
 public:
  explicit FeatureCache(Vae<float>& vae, RenderConfig render = {}) : vae_(&vae), render_(render) {}

  const RenderConfig& render_config() const { return render_; }

  /// 4 x 128 features of the frame shown at t.
  Tensorf features(const TrialSpec& spec, int t) {
    if (t >= 3) return encode(render(spec, t, render_));
    const auto key = std::make_tuple(t, index(spec.cue_position), spec.cue_validity);
    auto it = memo_.find(key);
    if (it == memo_.end()) it = memo_.emplace(key, encode(render(spec, t, render_))).first;
    return it->second;
  }

  Tensorf encode(const Frame& frame) {
    const auto patches = split_patches(frame);
    return vae_->features(std::vector<Tensorf>(patches.begin(), patches.end()));
  }

 private:
  Vae<float>* vae_;
  RenderConfig render_;
  std::map<std::tuple<int, int, double>, Tensorf> memo_;
};

template <std::floating_point T>
struct CoreStep {
  Var<T> h_flat;  // 1 x 4 d_mem
  AttentionMap<T> map;
  MemoryVars<T> state;
};

/// Advances the recurrent core by one frame.
template <std::floating_point T>
CoreStep<T> core_step(Tape<T>& tape, Agent<T>& agent, const Tensor<T>& features, int t, const MemoryVars<T>& prev,
                      std::span<const ForceRule> forces = {}) {
  auto x = tape.constant(embed(features, t, agent.cfg.n_time));
  const auto active = active_forces(forces, t);
  auto att = attend(tape, agent.attn, x, prev.h, active);
  CoreStep<T> step;
  step.state = lstm_step(tape, agent.lstm, att.z, prev);
  step.h_flat = reshape(step.state.h, Shape{1, agent.cfg.d_state()});
  step.map = std::move(att.map);
  return step;
}

/// Unrolls the core over a sequence of per-timestep features starting from
/// the reset state.
template <std::floating_point T>
std::vector<CoreStep<T>> unroll(Tape<T>& tape, Agent<T>& agent, std::span<const Tensor<T>> features,
                                std::span<const ForceRule> forces = {}) {
  std::vector<CoreStep<T>> steps;
  auto state = to_tape(tape, reset<T>(agent.cfg.d_mem));
  for (std::size_t t = 0; t < features.size(); ++t) {
    steps.push_back(core_step(tape, agent, features[t], int(t), state, forces));
    state = steps.back().state;
  }
  return steps;
}

enum class ActMode { Sample, Greedy };

/// Everything observed while running one trial.
template <std::floating_point T>
struct TrialResult {
  TrialSpec spec;
  std::vector<int> actions;
  std::vector<double> rewards;
  int end_t = 0;
  int reward = 0;
  Outcome outcome = Outcome::CorrectReject;
  std::array<std::array<double, kPatches>, kTimesteps> alpha{};  // NaN after the trial ended
  std::vector<double> value;   // V(H_t), actor-critic only
  std::vector<double> td;      // r_t + gamma V(H_{t+1}) - V(H_t)
  std::vector<Tensor<T>> features;
  std::vector<Tensor<T>> memory;  // flattened H_t
  std::vector<Tensor<T>> actor_hidden;  // actor layer-1 activations
};

struct RunOptions {
  ActMode mode = ActMode::Greedy;
  std::span<const ForceRule> forces;
  bool keep_features = false;
  bool keep_memory = false;
  bool run_to_end = false;  // keep stepping the core after the trial ends (probe export)
};

/// Runs one trial with the agent in the loop.
template <std::floating_point T>
TrialResult<T> run_trial(Agent<T>& agent, FeatureCache& cache, const TrialSpec& spec, Rng& act_rng,
                         const RunOptions& opt, double gamma = 0.95) {
  TrialResult<T> out;
  out.spec = spec;
  for (auto& row : out.alpha) row.fill(std::numeric_limits<double>::quiet_NaN());
  Tape<T> tape;
  tape.set_frozen(true);
  auto state = to_tape(tape, reset<T>(agent.cfg.d_mem));
  Episode episode(spec);
  const bool ac = agent.controller == Controller::ActorCritic;
  std::optional<int> change_col;
  if (spec.is_change_trial && spec.change_position) change_col = index(*spec.change_position);
  const auto forces = bind_change_column(opt.forces, change_col);
  for (int t = 0; t < kTimesteps; ++t) {
    if (episode.terminal() && !opt.run_to_end) break;
    auto feats = cache.features(spec, t).template cast<T>();
    auto step = core_step<T>(tape, agent, feats, t, state, forces);
    state = step.state;
    if (opt.keep_features) out.features.push_back(feats);
    if (opt.keep_memory) {
      out.memory.push_back(step.h_flat.value());
      if (ac) out.actor_hidden.push_back(agent.heads.actor.layer1(tape, step.h_flat).value());
    }
    if (episode.terminal()) continue;
    const auto alpha = step.map.alpha();
    for (int j = 0; j < kPatches; ++j) out.alpha[t][j] = double(alpha[j]);

    double p_declare;
    if (ac) {
      auto ho = evaluate_heads(agent.heads, step.h_flat.value());
      out.value.push_back(state_value(ho.pi[0], ho.q[0], agent.cfg.support));
      p_declare = ho.pi[0][1];
    } else {
      const double c = sigmoid(double(agent.decoder.logit(tape, step.h_flat).value().item()));
      const bool beliefs = agent.controller == Controller::SupervisedBeliefs;
      // Belief read-out only acts once a change is possible.
      p_declare = beliefs && t < kChangeTime ? 0.0 : c;
    }
    int a;
    if (ac && opt.mode == ActMode::Sample) {
      a = act_rng.uniform() < p_declare ? 1 : 0;
    } else {
      a = p_declare > 0.5 ? 1 : 0;  // ties go to wait
    }
    const auto r = episode.step(a ? Action::Declare : Action::Wait);
    out.actions.push_back(a);
    out.rewards.push_back(r.reward);
  }
  out.end_t = int(out.actions.size()) - 1;
  out.reward = episode.total_reward();
  out.outcome = episode.outcome();
  if (ac) {
    for (std::size_t t = 0; t < out.value.size(); ++t) {
      const double next = t + 1 < out.value.size() ? out.value[t + 1] : 0.0;
      out.td.push_back(out.rewards[t] + gamma * next - out.value[t]);
    }
  }
  return out;
}

}  // namespace vistab
