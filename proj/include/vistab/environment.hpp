#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vistab/numerics/rng.hpp"
#include "vistab/numerics/tensor.hpp"

namespace vistab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr int kTimesteps = 7;
inline constexpr int kPatches = 4;
inline constexpr int kFrameSide = 50;
inline constexpr int kPatchSide = 25;
inline constexpr int kChangeTime = 5;

/// Stimulus locations. S1 top-left, S2 bottom-left, S3 top-right, S4 bottom-right.
enum class Location : int { S1 = 0, S2 = 1, S3 = 2, S4 = 3 };

enum class Action : int { Wait = 0, Declare = 1 };

enum class Outcome : int { Hit, Miss, FalseAlarm, CorrectReject };

inline int index(Location l) { return static_cast<int>(l); }
inline Location location_at(int i) {
  if (i < 0 || i >= kPatches) throw ConfigError("location index out of range: " + std::to_string(i));
  return static_cast<Location>(i);
}
inline std::string to_string(Location l) { return "S" + std::to_string(index(l) + 1); }
inline Location parse_location(const std::string& s) {
  if (s.size() == 2 && (s[0] == 'S' || s[0] == 's') && s[1] >= '1' && s[1] <= '4') return location_at(s[1] - '1');
  throw ConfigError("bad location '" + s + "' (expected S1..S4)");
}

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Hit: return "H";
    case Outcome::Miss: return "M";
    case Outcome::FalseAlarm: return "FA";
    case Outcome::CorrectReject: return "CR";
  }
  return "?";
}

inline Outcome parse_outcome(const std::string& s) {
  if (s == "H") return Outcome::Hit;
  if (s == "M") return Outcome::Miss;
  if (s == "FA") return Outcome::FalseAlarm;
  if (s == "CR") return Outcome::CorrectReject;
  throw ConfigError("bad outcome '" + s + "'");
}

/// Top-left pixel of a location's patch within the frame.
inline std::array<int, 2> patch_origin(Location l) {
  const int i = index(l);
  return {(i % 2) * kPatchSide, (i / 2) * kPatchSide};  // {row, col}
}

struct GaborConfig {
  double envelope_sd = 5.0;  // px
  double wavelength = 8.0;   // px
  double phase = 0.0;        // rad
  double aspect = 1.0;
};

struct CueConfig {
  double disc_radius = 5.0;
  double arc_inner = 8.0;
  double arc_outer = 10.0;
};

struct DifficultyConfig {
  double k_start = 65.0;
  double k_min = 10.0;
  double threshold = 0.75;
  double shrink = 0.9;
  int window = 500;
};

inline bool is_valid_validity(double v) {
  for (double level : {0.25, 0.5, 0.75, 1.0})
    if (v == level) return true;
  return false;
}

/// Everything drawn for one trial. Orientations in degrees.
struct TrialSpec {
  std::uint64_t seed = 0;
  Location cue_position = Location::S1;
  double cue_validity = 1.0;
  bool is_change_trial = false;
  std::optional<Location> change_position;
  double delta = 0.0;
  std::array<double, kPatches> base_orientations{};
  std::array<std::array<double, kTimesteps>, kPatches> noise{};

  friend bool operator==(const TrialSpec&, const TrialSpec&) = default;
};

/// What to sample. `delta` pins the change magnitude; `change` pins the trial type.
struct TrialRequest {
  double cue_validity = 1.0;
  Location cue_position = Location::S1;
  double k = 65.0;
  double sigma = 5.0;
  std::optional<double> delta;
  std::optional<bool> change;
};

/// Draws a trial from a per-trial seed. RNG consumption is fixed-order and
/// independent of the branch taken, so two requests that differ only in trial
/// type or delta share every other draw.
inline TrialSpec sample_trial(std::uint64_t seed, const TrialRequest& req) {
  if (!is_valid_validity(req.cue_validity))
    throw ConfigError("cue validity must be one of 0.25, 0.5, 0.75, 1.0; got " + std::to_string(req.cue_validity));
  if (req.cue_position != Location::S1 && req.cue_position != Location::S4)
    throw ConfigError("cue position must be S1 or S4");
  Rng rng(seed);
  const double u_change = rng.uniform();
  const double u_cued = rng.uniform();
  const double u_other = rng.uniform();
  const double u_delta = rng.uniform();

  TrialSpec spec;
  spec.seed = seed;
  spec.cue_position = req.cue_position;
  spec.cue_validity = req.cue_validity;
  spec.is_change_trial = req.change.value_or(u_change < 0.5);
  for (auto& theta : spec.base_orientations) theta = rng.uniform(0.0, 180.0);
  for (auto& row : spec.noise)
    for (auto& d : row) d = req.sigma * rng.normal();

  if (spec.is_change_trial) {
    if (u_cued < req.cue_validity) {
      spec.change_position = req.cue_position;
    } else {
      int pick = static_cast<int>(u_other * 3.0);
      int slot = -1;
      for (int i = 0; i < kPatches; ++i) {
        if (i == index(req.cue_position)) continue;
        if (pick-- == 0) slot = i;
      }
      spec.change_position = location_at(slot);
    }
    spec.delta = req.delta.value_or(-req.k + 2.0 * req.k * u_delta);
  }
  return spec;
}

inline TrialSpec sample_trial(Rng& rng, const TrialRequest& req) { return sample_trial(rng.next_u64(), req); }

/// The matched no-change trial: same seed, orientations and noise.
inline TrialSpec without_change(TrialSpec spec) {
  spec.is_change_trial = false;
  spec.change_position.reset();
  spec.delta = 0.0;
  return spec;
}

/// Orientation of stimulus i at timestep t, in [0, 180).
inline double orientation(const TrialSpec& spec, Location loc, int t) {
  const int i = index(loc);
  double theta = spec.base_orientations[i];
  if (spec.is_change_trial && spec.change_position == loc && t >= kChangeTime) theta += spec.delta;
  theta += spec.noise[i][t];
  theta = std::fmod(theta, 180.0);
  if (theta < 0) theta += 180.0;
  return theta;
}

using Frame = Tensorf;  // kFrameSide x kFrameSide, values in [0, 1]

/// 25x25 Gabor patch, 0.5 mean, amplitude 0.5 under the Gaussian envelope.
inline Tensorf gabor_patch(double orientation_deg, const GaborConfig& g = {}) {
  Tensorf patch({kPatchSide, kPatchSide});
  const double c = (kPatchSide - 1) / 2.0;
  const double th = orientation_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  for (int r = 0; r < kPatchSide; ++r)
    for (int q = 0; q < kPatchSide; ++q) {
      const double x = q - c, y = r - c;
      const double xr = x * ct + y * st;
      const double yr = -x * st + y * ct;
      const double env = std::exp(-(xr * xr + g.aspect * g.aspect * yr * yr) / (2 * g.envelope_sd * g.envelope_sd));
      const double carrier = std::cos(2 * std::numbers::pi * xr / g.wavelength + g.phase);
      patch(r, q) = static_cast<float>(0.5 + 0.5 * env * carrier);
    }
  return patch;
}

/// Pixel mask of the validity arc (annulus sector starting at angle 0,
/// counterclockwise) within a patch.
inline bool in_cue_arc(int r, int q, double validity, const CueConfig& cue = {}) {
  const double c = (kPatchSide - 1) / 2.0;
  const double dx = q - c, dy = c - r;
  const double dist = std::hypot(dx, dy);
  if (dist < cue.arc_inner || dist > cue.arc_outer) return false;
  double phi = std::atan2(dy, dx);
  if (phi < 0) phi += 2 * std::numbers::pi;
  return validity >= 1.0 || phi < 2 * std::numbers::pi * validity;
}

inline bool in_cue_disc(int r, int q, const CueConfig& cue = {}) {
  const double c = (kPatchSide - 1) / 2.0;
  return std::hypot(q - c, r - c) <= cue.disc_radius;
}

struct RenderConfig {
  GaborConfig gabor;
  CueConfig cue;
};

inline void blit(Frame& frame, Location loc, const Tensorf& patch) {
  const auto [r0, c0] = patch_origin(loc);
  for (int r = 0; r < kPatchSide; ++r)
    for (int q = 0; q < kPatchSide; ++q) frame(r0 + r, c0 + q) = patch(r, q);
}

/// Renders the frame shown at timestep t.
inline Frame render(const TrialSpec& spec, int t, const RenderConfig& cfg = {}) {
  if (t < 0 || t >= kTimesteps) throw ConfigError("render: timestep out of range: " + std::to_string(t));
  Frame frame({kFrameSide, kFrameSide});
  if (t == 1) {
    Tensorf cue({kPatchSide, kPatchSide});
    for (int r = 0; r < kPatchSide; ++r)
      for (int q = 0; q < kPatchSide; ++q)
        if (in_cue_disc(r, q, cfg.cue) || in_cue_arc(r, q, spec.cue_validity, cfg.cue)) cue(r, q) = 1.0f;
    blit(frame, spec.cue_position, cue);
  } else if (t >= 3) {
    for (int i = 0; i < kPatches; ++i)
      blit(frame, location_at(i), gabor_patch(orientation(spec, location_at(i), t), cfg.gabor));
  }
  return frame;
}

/// Cuts a frame into its four patches, in location order.
inline std::array<Tensorf, kPatches> split_patches(const Frame& frame) {
  std::array<Tensorf, kPatches> out;
  for (int i = 0; i < kPatches; ++i) {
    const auto [r0, c0] = patch_origin(location_at(i));
    out[i] = Tensorf({kPatchSide, kPatchSide});
    for (int r = 0; r < kPatchSide; ++r)
      for (int q = 0; q < kPatchSide; ++q) out[i](r, q) = frame(r0 + r, c0 + q);
  }
  return out;
}

/// Binary 8-bit portable graymap.
inline void write_pgm(std::ostream& os, const Tensorf& image) {
  os << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  for (float v : image.data()) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
}

struct StepOutcome {
  int reward = 0;
  bool terminal = false;
  int t = 0;
  friend bool operator==(const StepOutcome&, const StepOutcome&) = default;
};

/// Reward rule for taking `action` at timestep t.
inline StepOutcome score(const TrialSpec& spec, int t, Action action) {
  if (t < 0 || t >= kTimesteps) throw ProtocolError("score: timestep out of range");
  if (action == Action::Declare) return {spec.is_change_trial && t >= kChangeTime ? 1 : 0, true, t};
  if (t < kTimesteps - 1) return {0, false, t};
  return {spec.is_change_trial ? 0 : 1, true, t};
}

/// Outcome class of a finished trial. An early declare on a change trial is a miss.
inline Outcome classify(const TrialSpec& spec, Action final_action, int end_t) {
  const bool declared = final_action == Action::Declare;
  if (spec.is_change_trial) return declared && end_t >= kChangeTime ? Outcome::Hit : Outcome::Miss;
  return declared ? Outcome::FalseAlarm : Outcome::CorrectReject;
}

/// One trial as a state machine: frames out, actions in.
class Episode {
 public:
  explicit Episode(TrialSpec spec) : spec_(std::move(spec)) {}

  const TrialSpec& spec() const { return spec_; }
  int t() const { return t_; }
  bool terminal() const { return terminal_; }
  const std::vector<Action>& actions() const { return actions_; }
  int total_reward() const { return reward_; }

  Frame frame(const RenderConfig& cfg = {}) const { return render(spec_, t_, cfg); }

  StepOutcome step(Action a) {
    if (terminal_) throw ProtocolError("action after terminal step");
    const auto out = score(spec_, t_, a);
    actions_.push_back(a);
    reward_ += out.reward;
    if (out.terminal) {
      terminal_ = true;
      outcome_ = classify(spec_, a, t_);
    } else {
      ++t_;
    }
    return out;
  }

  Outcome outcome() const {
    if (!terminal_) throw ProtocolError("outcome of an unfinished trial");
    return *outcome_;
  }

 private:
  TrialSpec spec_;
  int t_ = 0;
  bool terminal_ = false;
  int reward_ = 0;
  std::vector<Action> actions_;
  std::optional<Outcome> outcome_;
};

/// Curriculum state: half-width k of the change distribution plus the
/// current evaluation window.
struct DifficultyState {
  double k = 65.0;
  int trials_seen = 0;
  double reward_sum = 0.0;
  friend bool operator==(const DifficultyState&, const DifficultyState&) = default;
};

inline DifficultyState update_difficulty(DifficultyState state, double window_reward_rate,
                                         const DifficultyConfig& cfg = {}) {
  if (window_reward_rate > cfg.threshold) state.k = std::max(cfg.shrink * state.k, cfg.k_min);
  state.trials_seen = 0;
  state.reward_sum = 0.0;
  return state;
}

/// Adds one finished trial; applies the schedule when the window fills.
inline DifficultyState record_trial(DifficultyState state, double reward, const DifficultyConfig& cfg = {}) {
  state.trials_seen += 1;
  state.reward_sum += reward;
  if (state.trials_seen >= cfg.window) return update_difficulty(state, state.reward_sum / state.trials_seen, cfg);
  return state;
}

}  // namespace vistab
