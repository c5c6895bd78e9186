#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vistab/environment.hpp"
#include "vistab/numerics/nn.hpp"
#include "vistab/numerics/ops.hpp"

namespace vistab {

inline constexpr std::size_t kActions = 2;
inline constexpr double kLogFloor = 1e-12;

/// Fixed, uniformly spaced return atoms.
struct Support {
  double z_min = 0.0;
  double z_max = 1.0;
  std::size_t atoms = 15;

  double spacing() const { return (z_max - z_min) / double(atoms - 1); }
  double atom(std::size_t i) const { return z_min + spacing() * double(i); }
  std::vector<double> values() const {
    std::vector<double> z(atoms);
    for (std::size_t i = 0; i < atoms; ++i) z[i] = atom(i);
    return z;
  }
};

using Distribution = std::vector<double>;

inline double q_mean(const Distribution& p, const Support& s) {
  double q = 0;
  for (std::size_t i = 0; i < p.size(); ++i) q += p[i] * s.atom(i);
  return q;
}

/// pi_imp(a) proportional to exp(Q(a) / eta) pi(a).
inline std::vector<double> improved_policy(const std::vector<double>& q, const std::vector<double>& pi, double eta) {
  if (!(eta > 0)) throw ConfigError("improved_policy: eta must be positive");
  if (q.size() != pi.size()) throw DimensionError("improved_policy: size mismatch");
  const double hi = *std::max_element(q.begin(), q.end());
  std::vector<double> out(q.size());
  double total = 0;
  for (std::size_t a = 0; a < q.size(); ++a) total += out[a] = std::exp((q[a] - hi) / eta) * pi[a];
  for (auto& v : out) v /= total;
  return out;
}

/// Index of the epsilon-interval [z_i - eps/2, z_i + eps/2) holding u, clamped
/// to the support ends. Points falling between intervals (eps < spacing) go
/// to the nearest atom.
inline std::size_t bin_of(double u, const Support& s, double eps) {
  if (u <= s.z_min) return 0;
  if (u >= s.z_max) return s.atoms - 1;
  for (std::size_t i = 0; i < s.atoms; ++i)
    if (u >= s.atom(i) - eps / 2 && u < s.atom(i) + eps / 2) return i;
  const double b = std::round((u - s.z_min) / s.spacing());
  return std::min<std::size_t>(std::size_t(b), s.atoms - 1);
}

/// Hard-binned distributional Bellman target.
inline Distribution bellman_target_binned(double r, double gamma, const Distribution& next, bool terminal,
                                          const Support& s, double eps) {
  Distribution out(s.atoms, 0.0);
  if (terminal) {
    out[bin_of(r, s, eps)] = 1.0;
    return out;
  }
  if (next.size() != s.atoms) throw DimensionError("bellman_target_binned: next distribution size");
  for (std::size_t j = 0; j < s.atoms; ++j) out[bin_of(r + gamma * s.atom(j), s, eps)] += next[j];
  return out;
}

/// Categorical projection of r + gamma z onto the support by linear
/// interpolation between neighbouring atoms.
inline Distribution bellman_target_projected(double r, double gamma, const Distribution& next, bool terminal,
                                             const Support& s) {
  Distribution out(s.atoms, 0.0);
  auto place = [&](double u, double mass) {
    u = std::clamp(u, s.z_min, s.z_max);
    const double b = (u - s.z_min) / s.spacing();
    const double lo = std::floor(b), hi = std::ceil(b);
    const auto l = std::min<std::size_t>(std::size_t(lo), s.atoms - 1);
    const auto h = std::min<std::size_t>(std::size_t(hi), s.atoms - 1);
    if (l == h) {
      out[l] += mass;
    } else {
      out[l] += mass * (hi - b);
      out[h] += mass * (b - lo);
    }
  };
  if (terminal) {
    place(r, 1.0);
    return out;
  }
  if (next.size() != s.atoms) throw DimensionError("bellman_target_projected: next distribution size");
  for (std::size_t j = 0; j < s.atoms; ++j) place(r + gamma * s.atom(j), next[j]);
  return out;
}

enum class TargetKind { Binned, Projected };

inline TargetKind parse_target_kind(const std::string& s) {
  if (s == "binned") return TargetKind::Binned;
  if (s == "projected") return TargetKind::Projected;
  throw ConfigError("unknown bellman target '" + s + "'");
}
inline const char* to_string(TargetKind k) { return k == TargetKind::Binned ? "binned" : "projected"; }

struct RlHyper {
  double gamma = 0.95;
  double eta = 1.0;
  double beta = 1.0;
  double lambda_pol = 0.0;
  double lambda_entropy = 0.0;
  double epsilon = 1.0 / 14.0;
  std::size_t target_sync = 200;
  double learning_rate = 1e-4;
  std::size_t replay_capacity = 50000;
  std::size_t batch = 64;
  std::size_t updates_per_trial = 4;
  TargetKind target = TargetKind::Binned;

  void validate() const {
    if (gamma < 0 || gamma > 1) throw ConfigError("rl.gamma must lie in [0, 1]");
    if (!(eta > 0)) throw ConfigError("rl.eta must be positive");
    if (!(beta > 0)) throw ConfigError("rl.beta must be positive");
    if (!(epsilon > 0)) throw ConfigError("rl.epsilon must be positive");
    if (batch == 0 || target_sync == 0) throw ConfigError("rl.batch and rl.target_sync must be positive");
  }
};

/// Stack of affine layers with ELU between them and none after the last.
template <std::floating_point T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng) {
    for (std::size_t k = 0; k + 1 < widths.size(); ++k)
      layers.emplace_back(name + "." + std::to_string(k), widths[k], widths[k + 1], rng);
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      x = layers[k](tape, x);
      if (k + 1 < layers.size()) x = elu(x);
    }
    return x;
  }

  void collect(ParamList<T>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

/// Hidden widths of the actor/critic trunks: w, w/2, w/4.
inline std::vector<std::size_t> trunk(std::size_t in, std::size_t width, std::size_t out) {
  return {in, width, std::max<std::size_t>(width / 2, 1), std::max<std::size_t>(width / 4, 1), out};
}

/// pi(a | H) over {wait, declare} from the flattened memory.
template <std::floating_point T>
struct Actor {
  Mlp<T> net;

  Actor() = default;
  Actor(std::size_t d_in, std::size_t width, Rng& rng, const std::string& prefix = "")
      : net(prefix + "actor", trunk(d_in, width, kActions), rng) {}

  /// Rows of h are flattened memories; returns B x 2 logits.
  Var<T> logits(Tape<T>& tape, Var<T> h) { return net(tape, h); }
  Var<T> operator()(Tape<T>& tape, Var<T> h) { return softmax_rows(logits(tape, h)); }

  /// Activations of the first hidden layer (probe input).
  Var<T> layer1(Tape<T>& tape, Var<T> h) { return elu(net.layers.front()(tape, h)); }

  void collect(ParamList<T>& out) { net.collect(out); }
};

/// p(q | H, a) over the return atoms.
template <std::floating_point T>
struct Critic {
  Linear<T> action_embed;
  Mlp<T> net;

  Critic() = default;
  Critic(std::size_t d_in, std::size_t width, std::size_t atoms, Rng& rng, const std::string& prefix = "")
      : action_embed(prefix + "critic.action", kActions, d_in, rng),
        net(prefix + "critic", trunk(2 * d_in, width, atoms), rng) {}

  /// h: B x d_in, actions: B one-hot rows. Returns B x K logits.
  Var<T> logits(Tape<T>& tape, Var<T> h, const std::vector<int>& actions) {
    Tensor<T> onehot({actions.size(), kActions});
    for (std::size_t b = 0; b < actions.size(); ++b) {
      if (actions[b] < 0 || actions[b] >= int(kActions)) throw DimensionError("critic: bad action index");
      onehot(b, std::size_t(actions[b])) = T(1);
    }
    auto a = action_embed(tape, tape.constant(std::move(onehot)));
    return net(tape, concat_cols<T>({h, a}));
  }
  Var<T> operator()(Tape<T>& tape, Var<T> h, const std::vector<int>& actions) {
    return softmax_rows(logits(tape, h, actions));
  }

  void collect(ParamList<T>& out) {
    action_embed.collect(out);
    net.collect(out);
  }
};

template <std::floating_point T>
struct Heads {
  Actor<T> actor;
  Critic<T> critic;

  Heads() = default;
  Heads(std::size_t d_in, std::size_t width, std::size_t atoms, Rng& rng, const std::string& prefix = "")
      : actor(d_in, width, rng, prefix), critic(d_in, width, atoms, rng, prefix) {}

  void collect(ParamList<T>& out) {
    actor.collect(out);
    critic.collect(out);
  }
};

/// Policy and both action-value distributions for each row of h, untaped.
template <std::floating_point T>
struct HeadOutputs {
  std::vector<std::vector<double>> pi;                // B x 2
  std::vector<std::array<Distribution, kActions>> q;  // B x 2 x K
};

template <std::floating_point T>
HeadOutputs<T> evaluate_heads(Heads<T>& heads, const Tensor<T>& h) {
  Tape<T> tape;
  tape.set_frozen(true);
  const std::size_t n = h.rows();
  auto hv = tape.constant(h);
  auto pi = heads.actor(tape, hv).value();
  std::vector<int> wait(n, 0), declare(n, 1);
  auto qw = heads.critic(tape, hv, wait).value();
  auto qd = heads.critic(tape, hv, declare).value();
  HeadOutputs<T> out;
  out.pi.resize(n);
  out.q.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    out.pi[b] = {double(pi(b, 0)), double(pi(b, 1))};
    out.q[b][0].assign(qw.row_span(b).begin(), qw.row_span(b).end());
    out.q[b][1].assign(qd.row_span(b).begin(), qd.row_span(b).end());
  }
  return out;
}

/// V(H) = sum_a pi(a) q_mean(a).
inline double state_value(const std::vector<double>& pi, const std::array<Distribution, kActions>& q, const Support& s) {
  double v = 0;
  for (std::size_t a = 0; a < kActions; ++a) v += pi[a] * q_mean(q[a], s);
  return v;
}

/// Transitions in memory space. `h` may carry gradient into the recurrent core;
/// `h_next` is treated as data.
template <std::floating_point T>
struct TransitionBatch {
  Var<T> h;              // B x d_in
  Tensor<T> h_next;      // B x d_in (rows of terminal transitions are ignored)
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<char> terminal;

  std::size_t size() const { return actions.size(); }
};

template <std::floating_point T>
struct LossTerms {
  Var<T> actor, critic, policy, entropy, total;
  std::size_t floored = 0;  // log arguments clamped at 1e-12
  std::vector<double> td;   // per-transition TD errors under the target heads
};

namespace detail {

/// log of softmax probabilities, clamped below at log(1e-12); counts clamps.
template <class T>
Var<T> floored_log_softmax(Var<T> logits, std::size_t& floored) {
  auto lp = log_softmax_rows(logits);
  const T floor = T(std::log(kLogFloor));
  for (T v : lp.value().data()) floored += v < floor;
  return maximum(lp, lp.tape().constant(Tensor<T>(lp.value().shape(), floor)));
}

}  // namespace detail

/// Actor, critic and optional offline terms for one batch.
///
///   L_actor  = -mean_b sum_a pi_imp(a) log pi(a)      (KL up to a constant)
///   L_critic = beta mean_b KL(target || p(. | h, a))
///   L_pol    = -mean_b sum_a pi(a) q_mean(a)          (weight lambda_pol)
///   L_H      = -mean_b entropy(pi)                    (weight lambda_entropy)
///
/// The improved policy and the Bellman targets come from the target heads,
/// evaluated on detached memories.
template <std::floating_point T>
LossTerms<T> losses(Tape<T>& tape, Heads<T>& online, Heads<T>& target, const TransitionBatch<T>& batch,
                    const RlHyper& hyper, const Support& support) {
  const std::size_t n = batch.size();
  if (n == 0) throw ConfigError("losses: empty batch");
  const std::size_t k = support.atoms;
  LossTerms<T> out;

  auto now = evaluate_heads(target, batch.h.value());
  auto next = evaluate_heads(target, batch.h_next);
  Tensor<T> pi_imp({n, kActions}), gamma_t({n, k});
  double target_entropy = 0;
  out.td.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> q{q_mean(now.q[b][0], support), q_mean(now.q[b][1], support)};
    auto imp = improved_policy(q, now.pi[b], hyper.eta);
    for (std::size_t a = 0; a < kActions; ++a) pi_imp(b, a) = T(imp[a]);

    Distribution mix(k, 0.0);
    const bool term = batch.terminal[b];
    if (!term)
      for (std::size_t a = 0; a < kActions; ++a)
        for (std::size_t i = 0; i < k; ++i) mix[i] += next.pi[b][a] * next.q[b][a][i];
    auto g = hyper.target == TargetKind::Binned
                 ? bellman_target_binned(batch.rewards[b], hyper.gamma, mix, term, support, hyper.epsilon)
                 : bellman_target_projected(batch.rewards[b], hyper.gamma, mix, term, support);
    for (std::size_t i = 0; i < k; ++i) {
      gamma_t(b, i) = T(g[i]);
      if (g[i] > 0) target_entropy += g[i] * std::log(g[i]);
    }
    const double v_next = term ? 0.0 : state_value(next.pi[b], next.q[b], support);
    out.td[b] = batch.rewards[b] + hyper.gamma * v_next - state_value(now.pi[b], now.q[b], support);
  }

  const T inv_n = T(1) / T(n);
  auto log_pi = detail::floored_log_softmax(online.actor.logits(tape, batch.h), out.floored);
  out.actor = scale(weighted_sum(log_pi, pi_imp), -inv_n);

  auto log_p = detail::floored_log_softmax(online.critic.logits(tape, batch.h, batch.actions), out.floored);
  // KL(G || p) = sum G log G - sum G log p; the first sum is a constant.
  out.critic = add_scalar(scale(weighted_sum(log_p, gamma_t), -T(hyper.beta) * inv_n),
                          T(hyper.beta * target_entropy / double(n)));

  out.total = out.actor + out.critic;
  if (hyper.lambda_pol != 0 || hyper.lambda_entropy != 0) {
    auto pi = exp(log_pi);
    Tensor<T> qm({n, kActions});
    for (std::size_t b = 0; b < n; ++b) {
      auto p_w = online.critic(tape, stop_gradient(slice_rows(batch.h, b, b + 1)), {0}).value();
      auto p_d = online.critic(tape, stop_gradient(slice_rows(batch.h, b, b + 1)), {1}).value();
      qm(b, 0) = T(q_mean(Distribution(p_w.data().begin(), p_w.data().end()), support));
      qm(b, 1) = T(q_mean(Distribution(p_d.data().begin(), p_d.data().end()), support));
    }
    out.policy = scale(weighted_sum(pi, qm), -inv_n);
    out.entropy = scale(sum(pi * log_pi), inv_n);
    out.total = out.total + scale(out.policy, T(hyper.lambda_pol)) + scale(out.entropy, T(hyper.lambda_entropy));
  }
  if (!out.total.value().all_finite()) throw NumericalError("training loss became non-finite");
  return out;
}

}  // namespace vistab
