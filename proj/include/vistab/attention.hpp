#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include "vistab/environment.hpp"
#include "vistab/numerics/nn.hpp"
#include "vistab/numerics/ops.hpp"

namespace vistab {

/// Raised when a forced attention map cannot be made row-stochastic.
class PerturbationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FeedbackVariant { Tokens, Additive, Multiplicative };

inline const char* to_string(FeedbackVariant v) {
  switch (v) {
    case FeedbackVariant::Tokens: return "tokens";
    case FeedbackVariant::Additive: return "additive";
    case FeedbackVariant::Multiplicative: return "multiplicative";
  }
  return "?";
}

inline FeedbackVariant parse_variant(const std::string& s) {
  if (s == "tokens") return FeedbackVariant::Tokens;
  if (s == "additive") return FeedbackVariant::Additive;
  if (s == "multiplicative") return FeedbackVariant::Multiplicative;
  throw ConfigError("unknown feedback variant '" + s + "'");
}

inline constexpr std::size_t kDefaultTimeSlots = 8;

inline std::size_t model_width(std::size_t feature_dim, std::size_t n_time) { return feature_dim + kPatches + n_time; }

/// x_i = [features_i, one-hot position i, one-hot time t] for the four patches.
template <std::floating_point T>
Tensor<T> embed(const Tensor<T>& features, int t, std::size_t n_time = kDefaultTimeSlots) {
  features.require_rank(2);
  if (features.rows() != std::size_t(kPatches)) throw DimensionError("embed: expected 4 patch rows");
  if (t < 0 || t >= kTimesteps || std::size_t(t) >= n_time)
    throw ConfigError("embed: timestep " + std::to_string(t) + " out of range");
  const std::size_t f = features.cols();
  Tensor<T> x({std::size_t(kPatches), model_width(f, n_time)});
  for (std::size_t i = 0; i < std::size_t(kPatches); ++i) {
    for (std::size_t j = 0; j < f; ++j) x(i, j) = features(i, j);
    x(i, f + i) = T(1);
    x(i, f + kPatches + std::size_t(t)) = T(1);
  }
  return x;
}

/// A 4x4 row-stochastic attention map over stimulus locations.
template <std::floating_point T>
struct AttentionMap {
  Tensor<T> a;

  /// Column sums in [0, 4].
  std::array<T, kPatches> alpha() const {
    std::array<T, kPatches> out{};
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
    return out;
  }

  /// Column sums divided by 4, in [0, 1].
  std::array<T, kPatches> share() const {
    auto s = alpha();
    for (auto& v : s) v /= T(kPatches);
    return s;
  }
};

struct ForceSpec {
  enum class Kind { Uniform, ZeroColumn, MaxColumn, SetAlpha, Explicit };
  Kind kind = Kind::Uniform;
  int column = 0;
  double value = 0.0;                                  // set_alpha target, a column sum in [0, 4]
  std::array<std::array<double, kPatches>, kPatches> map{};  // explicit override

  static ForceSpec uniform() { return {Kind::Uniform}; }
  static ForceSpec zero_column(int j) { return {Kind::ZeroColumn, j}; }
  static ForceSpec max_column(int j) { return {Kind::MaxColumn, j}; }
  static ForceSpec set_alpha(int j, double v) { return {Kind::SetAlpha, j, v}; }
  static ForceSpec explicit_map(const std::array<std::array<double, kPatches>, kPatches>& m) {
    ForceSpec s{Kind::Explicit};
    s.map = m;
    return s;
  }
};

namespace detail {

template <class T>
void renormalize_rows(Tensor<T>& a, const char* what) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T total = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) total += a(i, j);
    if (!(total > T(0)))
      throw PerturbationError(std::string(what) + ": row " + std::to_string(i) + " has no mass to renormalize");
    for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) /= total;
  }
}

inline void check_column(int j) {
  if (j < 0 || j >= kPatches) throw PerturbationError("forced column out of range: " + std::to_string(j));
}

}  // namespace detail

/// Applies one forcing rule to a location map and returns a row-stochastic map.
template <std::floating_point T>
AttentionMap<T> force_attention(const AttentionMap<T>& in, const ForceSpec& spec) {
  Tensor<T> a = in.a;
  const std::size_t n = a.rows();
  using K = ForceSpec::Kind;
  switch (spec.kind) {
    case K::Uniform:
      a.fill(T(1) / T(a.cols()));
      break;
    case K::ZeroColumn:
      detail::check_column(spec.column);
      for (std::size_t i = 0; i < n; ++i) a(i, spec.column) = T(0);
      detail::renormalize_rows(a, "zero_column");
      break;
    case K::MaxColumn:
      detail::check_column(spec.column);
      a.fill(T(0));
      for (std::size_t i = 0; i < n; ++i) a(i, spec.column) = T(1);
      break;
    case K::SetAlpha: {
      detail::check_column(spec.column);
      if (spec.value < 0.0 || spec.value > double(kPatches))
        throw PerturbationError("set_alpha: value must lie in [0, 4]");
      const T target = T(spec.value / kPatches);
      for (std::size_t i = 0; i < n; ++i) {
        T rest = 0;
        for (std::size_t j = 0; j < a.cols(); ++j)
          if (int(j) != spec.column) rest += a(i, j);
        for (std::size_t j = 0; j < a.cols(); ++j) {
          if (int(j) == spec.column) continue;
          if (rest > T(0)) {
            a(i, j) *= (T(1) - target) / rest;
          } else {
            a(i, j) = (T(1) - target) / T(a.cols() - 1);
          }
        }
        a(i, spec.column) = target;
      }
      break;
    }
    case K::Explicit:
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
          const double v = spec.map[i][j];
          if (!(v >= 0.0) || !std::isfinite(v)) throw PerturbationError("explicit map entries must be finite and >= 0");
          a(i, j) = T(v);
        }
      detail::renormalize_rows(a, "explicit map");
      break;
  }
  return {std::move(a)};
}

/// A forcing rule active over a timestep range.
struct ForceRule {
  ForceSpec spec;
  int t_min = 0;
  int t_max = kTimesteps - 1;
  bool applies(int t) const { return t >= t_min && t <= t_max; }
};

/// Column placeholder for "the location that changes on this trial".
inline constexpr int kChangeColumn = -1;

/// Parses "uniform@t=*", "max:S1@t=5", "zero:S4@t>=5", "alpha:S2=3.2@t<=4".
/// The location may also be "change", resolved per trial.
inline ForceRule parse_force(const std::string& text) {
  static const std::regex re(R"(^(uniform|max|zero|alpha)(?::(S[1-4]|change)(?:=([0-9.eE+-]+))?)?@t(=\*|=[0-9]+|>=[0-9]+|<=[0-9]+)$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw ConfigError("bad force spec '" + text + "'");
  const std::string kind = m[1], where = m[2], value = m[3], when = m[4];
  ForceRule rule;
  const bool needs_loc = kind != "uniform";
  if (needs_loc != !where.empty()) throw ConfigError("force spec '" + text + "': location required for " + kind + " only");
  if ((kind == "alpha") != !value.empty()) throw ConfigError("force spec '" + text + "': alpha takes =value");
  const int j = !needs_loc ? 0 : where == "change" ? kChangeColumn : index(parse_location(where));
  if (kind == "uniform") rule.spec = ForceSpec::uniform();
  if (kind == "max") rule.spec = ForceSpec::max_column(j);
  if (kind == "zero") rule.spec = ForceSpec::zero_column(j);
  if (kind == "alpha") rule.spec = ForceSpec::set_alpha(j, std::stod(value));
  if (when == "=*") return rule;
  const int t = std::stoi(when.substr(when[0] == '=' ? 1 : 2));
  if (t >= kTimesteps) throw ConfigError("force spec '" + text + "': timestep out of range");
  if (when[0] == '=') rule.t_min = rule.t_max = t;
  if (when[0] == '>') rule.t_min = t;
  if (when[0] == '<') rule.t_max = t;
  return rule;
}

/// Binds change-location placeholders to `change_column`; rules that refer to
/// the change location are dropped when there is none (no-change trials).
inline std::vector<ForceRule> bind_change_column(std::span<const ForceRule> rules, std::optional<int> change_column) {
  std::vector<ForceRule> out;
  for (auto r : rules) {
    if (r.spec.kind != ForceSpec::Kind::Uniform && r.spec.kind != ForceSpec::Kind::Explicit &&
        r.spec.column == kChangeColumn) {
      if (!change_column) continue;
      r.spec.column = *change_column;
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<ForceSpec> active_forces(std::span<const ForceRule> rules, int t) {
  std::vector<ForceSpec> out;
  for (const auto& r : rules)
    if (r.applies(t)) out.push_back(r.spec);
  return out;
}

struct AttentionConfig {
  FeedbackVariant variant = FeedbackVariant::Multiplicative;
  bool scaled = false;      // divide logits by sqrt(d_model)
  double logit_scale = 1.0;
};

/// Projections of the memory-gated self-attention stage.
template <std::floating_point T>
struct AttentionParams {
  AttentionConfig cfg;
  Parameter<T> w_xq, w_xk, w_xv;  // d_model x d_model
  Parameter<T> w_hq, w_hk, w_hv;  // d_mem x d_model (additive, multiplicative)
  Parameter<T> w_htok;            // d_mem x d_model (tokens: lifts memory tokens to model width)

  AttentionParams() = default;
  AttentionParams(const AttentionConfig& c, std::size_t d_model, std::size_t d_mem, Rng& rng) : cfg(c) {
    auto xw = [&](const char* n) { return Parameter<T>(n, glorot<T>({d_model, d_model}, d_model, d_model, rng)); };
    auto hw = [&](const char* n) { return Parameter<T>(n, glorot<T>({d_mem, d_model}, d_mem, d_model, rng)); };
    w_xq = xw("attn.w_xq");
    w_xk = xw("attn.w_xk");
    w_xv = xw("attn.w_xv");
    if (c.variant == FeedbackVariant::Tokens) {
      w_htok = hw("attn.w_htok");
    } else {
      w_hq = hw("attn.w_hq");
      w_hk = hw("attn.w_hk");
      w_hv = hw("attn.w_hv");
    }
  }

  std::size_t d_model() const { return w_xq.value().rows(); }
  std::size_t d_mem() const { return (cfg.variant == FeedbackVariant::Tokens ? w_htok : w_hq).value().rows(); }

  void collect(ParamList<T>& out) {
    out.insert(out.end(), {&w_xq, &w_xk, &w_xv});
    if (cfg.variant == FeedbackVariant::Tokens) {
      out.push_back(&w_htok);
    } else {
      out.insert(out.end(), {&w_hq, &w_hk, &w_hv});
    }
  }
};

template <std::floating_point T>
struct AttentionOutput {
  Var<T> z;              // 4 x d_model visual percept
  AttentionMap<T> map;   // location map actually used
};

/// Z = X + a V with Q, K, V gated by the previous memory H.
///
/// Zero-column forcing is applied as a logit mask, so the masked columns
/// carry exactly zero weight and the remaining entries come out of the same
/// softmax as a renormalized map would. All other forcing replaces the map
/// after the softmax and blocks its gradient.
template <std::floating_point T>
AttentionOutput<T> attend(Tape<T>& tape, AttentionParams<T>& p, Var<T> x, Var<T> h_prev,
                          std::span<const ForceSpec> forces = {}) {
  constexpr std::size_t n = kPatches;
  if (x.value().rows() != n || x.value().cols() != p.d_model())
    throw DimensionError("attend: X must be 4 x " + std::to_string(p.d_model()));
  if (h_prev.value().rows() != n || h_prev.value().cols() != p.d_mem())
    throw DimensionError("attend: H must be 4 x " + std::to_string(p.d_mem()));
  const bool tokens = p.cfg.variant == FeedbackVariant::Tokens;
  const std::size_t cols = tokens ? 2 * n : n;

  Var<T> q, k, v;
  switch (p.cfg.variant) {
    case FeedbackVariant::Multiplicative:
      q = matmul(x, tape.param(p.w_xq)) * matmul(h_prev, tape.param(p.w_hq));
      k = matmul(x, tape.param(p.w_xk)) * matmul(h_prev, tape.param(p.w_hk));
      v = matmul(x, tape.param(p.w_xv)) * matmul(h_prev, tape.param(p.w_hv));
      break;
    case FeedbackVariant::Additive:
      q = matmul(x, tape.param(p.w_xq)) + matmul(h_prev, tape.param(p.w_hq));
      k = matmul(x, tape.param(p.w_xk)) + matmul(h_prev, tape.param(p.w_hk));
      v = matmul(x, tape.param(p.w_xv)) + matmul(h_prev, tape.param(p.w_hv));
      break;
    case FeedbackVariant::Tokens: {
      // Only the first four query rows are kept, so only they are computed.
      auto tok = concat_rows<T>({x, matmul(h_prev, tape.param(p.w_htok))});
      q = matmul(x, tape.param(p.w_xq));
      k = matmul(tok, tape.param(p.w_xk));
      v = matmul(tok, tape.param(p.w_xv));
      break;
    }
  }

  T s = T(p.cfg.logit_scale);
  if (p.cfg.scaled) s /= std::sqrt(T(p.d_model()));
  auto logits = matmul(q, transpose(k));
  if (s != T(1)) logits = scale(logits, s);

  std::vector<char> zeroed(n, 0);
  for (const auto& f : forces)
    if (f.kind == ForceSpec::Kind::ZeroColumn) {
      detail::check_column(f.column);
      zeroed[f.column] = 1;
    }
  if (std::count(zeroed.begin(), zeroed.end(), 1) == long(n))
    throw PerturbationError("zero_column: every column zeroed, rows cannot renormalize");
  std::unique_ptr<bool[]> mask;
  if (std::count(zeroed.begin(), zeroed.end(), 1) > 0) {
    mask.reset(new bool[n * cols]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < cols; ++j) mask[i * cols + j] = !zeroed[j % n];
  }
  auto a = softmax_rows(logits, mask ? std::span<const bool>(mask.get(), n * cols) : std::span<const bool>{});

  auto location_map = [&](const Tensor<T>& full) {
    if (!tokens) return AttentionMap<T>{full};
    Tensor<T> loc({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) loc(i, j) = full(i, j) + full(i, j + n);
    return AttentionMap<T>{loc};
  };

  AttentionMap<T> map = location_map(a.value());
  bool replaced = false;
  for (const auto& f : forces) {
    if (f.kind == ForceSpec::Kind::ZeroColumn) continue;
    map = force_attention(map, f);
    replaced = true;
  }
  if (replaced) {
    Tensor<T> full = map.a;
    if (tokens) {
      // Split each location's forced weight over its image and memory token
      // in proportion to the natural map.
      full = Tensor<T>({n, cols});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T img = a.value()(i, j), mem = a.value()(i, j + n);
          const T share = img + mem > T(0) ? img / (img + mem) : T(0.5);
          full(i, j) = map.a(i, j) * share;
          full(i, j + n) = map.a(i, j) * (T(1) - share);
        }
    }
    a = tape.constant(std::move(full));
  }
  return {x + matmul(a, v), std::move(map)};
}

}  // namespace vistab
