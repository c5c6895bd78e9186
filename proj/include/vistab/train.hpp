#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "vistab/model.hpp"
#include "vistab/numerics/optim.hpp"

namespace vistab {

/// Trial distribution seen during training and evaluation.
struct TaskConfig {
  std::vector<double> validities{0.25, 0.5, 0.75, 1.0};
  std::vector<Location> cue_positions{Location::S1, Location::S4};
  double sigma = 5.0;
  std::optional<double> fixed_delta;
  bool adapt_difficulty = true;
  DifficultyConfig difficulty;

  void validate() const {
    if (validities.empty() || cue_positions.empty()) throw ConfigError("task: empty validity or cue list");
    for (double v : validities)
      if (!is_valid_validity(v)) throw ConfigError("task: bad validity " + std::to_string(v));
    for (auto c : cue_positions)
      if (c != Location::S1 && c != Location::S4) throw ConfigError("task: cue position must be S1 or S4");
    if (sigma < 0) throw ConfigError("task: sigma must be >= 0");
  }
};

inline TrialSpec draw_trial(Rng& rng, const TaskConfig& task, double k) {
  TrialRequest req;
  req.cue_validity = task.validities[rng.below(task.validities.size())];
  req.cue_position = task.cue_positions[rng.below(task.cue_positions.size())];
  req.k = k;
  req.sigma = task.sigma;
  req.delta = task.fixed_delta;
  return sample_trial(rng, req);
}

struct TrainConfig {
  TaskConfig task;
  RlHyper rl;
  std::size_t episodes = 20000;
  std::uint64_t seed = 1;
  double grad_clip = 1.0;
};

/// One replayed trial: cached encoder features and the behaviour taken.
struct EpisodeRecord {
  std::vector<Tensorf> features;  // per timestep, 4 x 128
  std::vector<int> actions;
  std::vector<double> rewards;

  std::size_t length() const { return actions.size(); }
};

/// FIFO over whole episodes with a capacity counted in transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(EpisodeRecord e) {
    transitions_ += e.length();
    episodes_.push_back(std::move(e));
    while (transitions_ > capacity_ && episodes_.size() > 1) {
      transitions_ -= episodes_.front().length();
      episodes_.pop_front();
    }
  }

  /// Uniformly drawn episodes until at least `transitions` steps are covered.
  std::vector<const EpisodeRecord*> sample(std::size_t transitions, Rng& rng) const {
    std::vector<const EpisodeRecord*> out;
    std::size_t n = 0;
    while (n < transitions && !episodes_.empty()) {
      out.push_back(&episodes_[rng.below(episodes_.size())]);
      n += out.back()->length();
    }
    return out;
  }

  std::size_t transitions() const { return transitions_; }
  std::size_t episodes() const { return episodes_.size(); }

 private:
  std::size_t capacity_;
  std::size_t transitions_ = 0;
  std::deque<EpisodeRecord> episodes_;
};

struct UpdateStats {
  double actor = 0, critic = 0, total = 0, td_abs = 0, grad_norm = 0;
  std::size_t floored = 0;
};

/// One gradient step of the actor-critic on replayed episodes. The core is
/// re-unrolled under current parameters so gradients reach attention and
/// memory.
template <std::floating_point T>
UpdateStats actor_critic_update(Agent<T>& agent, Adam<T>& opt, const std::vector<const EpisodeRecord*>& episodes,
                                const RlHyper& hyper) {
  opt.zero_grad();
  Tape<T> tape;
  std::vector<Var<T>> rows;
  TransitionBatch<T> batch;
  std::vector<std::size_t> next_row;
  for (const auto* ep : episodes) {
    std::vector<Tensor<T>> feats;
    for (const auto& f : ep->features) feats.push_back(f.template cast<T>());
    auto steps = unroll<T>(tape, agent, std::span<const Tensor<T>>(feats.data(), ep->length()));
    for (std::size_t t = 0; t < ep->length(); ++t) {
      rows.push_back(steps[t].h_flat);
      batch.actions.push_back(ep->actions[t]);
      batch.rewards.push_back(ep->rewards[t]);
      const bool term = t + 1 == ep->length();
      batch.terminal.push_back(term);
    }
  }
  batch.h = concat_rows(rows);
  const std::size_t n = rows.size(), d = agent.cfg.d_state();
  batch.h_next = Tensor<T>({n, d});
  for (std::size_t b = 0; b + 1 < n; ++b)
    if (!batch.terminal[b])
      for (std::size_t j = 0; j < d; ++j) batch.h_next(b, j) = batch.h.value()(b + 1, j);
  auto terms = losses(tape, agent.heads, agent.target, batch, hyper, agent.cfg.support);
  tape.backward(terms.total);
  UpdateStats s;
  s.grad_norm = opt.step();
  s.actor = terms.actor.value().item();
  s.critic = terms.critic.value().item();
  s.total = terms.total.value().item();
  s.floored = terms.floored;
  for (double v : terms.td) s.td_abs += std::abs(v) / double(n);
  return s;
}

template <std::floating_point T>
struct TrainRecord {
  std::size_t episode = 0;
  TrialResult<T> trial;
  double k = 0;
  UpdateStats update;
  std::size_t updates = 0;
};

/// Online actor-critic training: sample actions from pi, store the episode,
/// then run U minibatch updates. Target heads follow every P updates.
template <std::floating_point T>
void train(Agent<T>& agent, FeatureCache& cache, const TrainConfig& cfg,
           const std::function<void(const TrainRecord<T>&)>& on_episode = {}) {
  if (agent.controller != Controller::ActorCritic) throw ConfigError("train: agent has no actor-critic heads");
  cfg.task.validate();
  cfg.rl.validate();
  Rng master(cfg.seed);
  Rng env_rng(master.next_u64()), act_rng(master.next_u64()), replay_rng(master.next_u64());
  ParamList<T> params;
  agent.collect_trainable(params);
  Adam<T> opt(params, {.learning_rate = cfg.rl.learning_rate, .grad_clip = cfg.grad_clip});
  ReplayBuffer replay(cfg.rl.replay_capacity);
  DifficultyState difficulty{cfg.task.difficulty.k_start};
  std::size_t updates = 0;
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    TrainRecord<T> rec;
    rec.episode = e;
    rec.k = difficulty.k;
    const auto spec = draw_trial(env_rng, cfg.task, difficulty.k);
    rec.trial = run_trial(agent, cache, spec, act_rng, {.mode = ActMode::Sample, .keep_features = true},
                          cfg.rl.gamma);
    EpisodeRecord ep;
    for (auto& f : rec.trial.features) ep.features.push_back(f.template cast<float>());
    ep.features.resize(rec.trial.actions.size());
    ep.actions = rec.trial.actions;
    ep.rewards = rec.trial.rewards;
    replay.push(std::move(ep));
    rec.trial.features.clear();
    if (cfg.task.adapt_difficulty && !cfg.task.fixed_delta)
      difficulty = record_trial(difficulty, rec.trial.reward, cfg.task.difficulty);
    for (std::size_t u = 0; u < cfg.rl.updates_per_trial; ++u) {
      rec.update = actor_critic_update(agent, opt, replay.sample(cfg.rl.batch, replay_rng), cfg.rl);
      if (++updates % cfg.rl.target_sync == 0) agent.sync_target();
    }
    rec.updates = updates;
    if (on_episode) on_episode(rec);
  }
}

/// Per-timestep labels of the supervised baselines.
inline std::vector<double> supervised_labels(Controller mode, const TrialSpec& spec) {
  std::vector<double> y(kTimesteps, 0.0);
  for (int t = 0; t < kTimesteps; ++t) {
    if (mode == Controller::SupervisedActions) y[t] = spec.is_change_trial && t >= kChangeTime ? 1.0 : 0.0;
    if (mode == Controller::SupervisedBeliefs) y[t] = spec.is_change_trial ? 1.0 : 0.0;
  }
  return y;
}

/// Mean binary cross-entropy of logits against labels.
template <std::floating_point T>
Var<T> bce_with_logits(Var<T> logits, const std::vector<double>& labels) {
  auto& tape = logits.tape();
  const std::size_t n = labels.size();
  auto two = concat_cols<T>({tape.constant(Tensor<T>({n, 1})), logits});
  Tensor<T> w({n, 2});
  for (std::size_t b = 0; b < n; ++b) {
    w(b, 0) = T((1.0 - labels[b]) / double(n));
    w(b, 1) = T(labels[b] / double(n));
  }
  return scale(weighted_sum(log_softmax_rows(two), w), T(-1));
}

/// Trains the supervised decoder end to end through the recurrent core.
template <std::floating_point T>
void train_supervised(Agent<T>& agent, FeatureCache& cache, const TrainConfig& cfg,
                      const std::function<void(const TrainRecord<T>&)>& on_episode = {}) {
  if (agent.controller == Controller::ActorCritic) throw ConfigError("train_supervised: agent has no decoder");
  cfg.task.validate();
  Rng master(cfg.seed);
  Rng env_rng(master.next_u64()), act_rng(master.next_u64());
  ParamList<T> params;
  agent.collect_trainable(params);
  Adam<T> opt(params, {.learning_rate = cfg.rl.learning_rate, .grad_clip = cfg.grad_clip});
  DifficultyState difficulty{cfg.task.difficulty.k_start};
  const std::size_t per_update = std::max<std::size_t>(1, cfg.rl.batch / kTimesteps);
  std::vector<std::vector<Tensor<T>>> pending_x;
  std::vector<double> pending_y;
  std::size_t updates = 0;
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    TrainRecord<T> rec;
    rec.episode = e;
    rec.k = difficulty.k;
    const auto spec = draw_trial(env_rng, cfg.task, difficulty.k);
    rec.trial = run_trial(agent, cache, spec, act_rng, {.mode = ActMode::Greedy});
    if (cfg.task.adapt_difficulty && !cfg.task.fixed_delta)
      difficulty = record_trial(difficulty, rec.trial.reward, cfg.task.difficulty);
    std::vector<Tensor<T>> feats;
    for (int t = 0; t < kTimesteps; ++t) feats.push_back(cache.features(spec, t).template cast<T>());
    pending_x.push_back(std::move(feats));
    const auto y = supervised_labels(agent.controller, spec);
    pending_y.insert(pending_y.end(), y.begin(), y.end());
    if (pending_x.size() >= per_update || e + 1 == cfg.episodes) {
      opt.zero_grad();
      Tape<T> tape;
      std::vector<Var<T>> rows;
      for (const auto& f : pending_x)
        for (auto& s : unroll<T>(tape, agent, f)) rows.push_back(s.h_flat);
      auto loss = bce_with_logits(agent.decoder.logit(tape, concat_rows(rows)), pending_y);
      if (!loss.value().all_finite()) throw NumericalError("supervised loss became non-finite");
      tape.backward(loss);
      rec.update.grad_norm = opt.step();
      rec.update.total = loss.value().item();
      ++updates;
      pending_x.clear();
      pending_y.clear();
    }
    rec.updates = updates;
    if (on_episode) on_episode(rec);
  }
}

/// A transition in memory space, as stored in offline transition files.
struct Transition {
  std::vector<float> h, h_next;
  int action = 0;
  double reward = 0;
  bool terminal = false;
};

/// Heads-only training from a fixed set of transitions.
template <std::floating_point T>
std::vector<UpdateStats> train_offline(Heads<T>& online, Heads<T>& target, const std::vector<Transition>& data,
                                       const RlHyper& hyper, const Support& support, std::size_t updates, Rng& rng,
                                       double grad_clip = 1.0) {
  if (data.empty()) throw ConfigError("train_offline: no transitions");
  hyper.validate();
  const std::size_t d = data.front().h.size();
  ParamList<T> params, tparams;
  online.collect(params);
  target.collect(tparams);
  copy_values(params, tparams);
  Adam<T> opt(params, {.learning_rate = hyper.learning_rate, .grad_clip = grad_clip});
  std::vector<UpdateStats> log;
  for (std::size_t u = 0; u < updates; ++u) {
    const std::size_t n = std::min(hyper.batch, data.size());
    Tensor<T> h({n, d}), hn({n, d});
    TransitionBatch<T> batch;
    for (std::size_t b = 0; b < n; ++b) {
      const auto& tr = data[rng.below(data.size())];
      if (tr.h.size() != d || (!tr.terminal && tr.h_next.size() != d))
        throw DimensionError("train_offline: ragged transition");
      for (std::size_t j = 0; j < d; ++j) {
        h(b, j) = T(tr.h[j]);
        hn(b, j) = tr.terminal ? T(0) : T(tr.h_next[j]);
      }
      batch.actions.push_back(tr.action);
      batch.rewards.push_back(tr.reward);
      batch.terminal.push_back(tr.terminal);
    }
    opt.zero_grad();
    Tape<T> tape;
    batch.h = tape.constant(h);
    batch.h_next = hn;
    auto terms = losses(tape, online, target, batch, hyper, support);
    tape.backward(terms.total);
    UpdateStats s;
    s.grad_norm = opt.step();
    s.actor = terms.actor.value().item();
    s.critic = terms.critic.value().item();
    s.total = terms.total.value().item();
    s.floored = terms.floored;
    for (double v : terms.td) s.td_abs += std::abs(v) / double(n);
    log.push_back(s);
    if ((u + 1) % hyper.target_sync == 0) copy_values(params, tparams);
  }
  return log;
}

}  // namespace vistab
