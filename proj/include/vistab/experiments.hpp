#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "vistab/analysis/behavior.hpp"
#include "vistab/model.hpp"
#include "vistab/record.hpp"

namespace vistab {

/// Conditions swept at evaluation time. Each (validity, cue, delta) cell gets
/// `trials` trials; trial seeds are drawn in a fixed order from the run seed,
/// so two sweeps with the same seed see the same trials.
struct EvalGrid {
  std::vector<double> validities{1.0};
  std::vector<Location> cue_positions{Location::S1};
  std::vector<double> deltas{60.0};
  std::size_t trials = 100;
  double sigma = 5.0;
  std::optional<bool> change;  // pin the trial type; random 50/50 otherwise
};

template <std::floating_point T>
TrialRecord to_record(const TrialResult<T>& r, std::uint64_t id) {
  TrialRecord rec;
  rec.trial_id = id;
  rec.seed = r.spec.seed;
  rec.cue_position = r.spec.cue_position;
  rec.validity = r.spec.cue_validity;
  rec.change_trial = r.spec.is_change_trial;
  rec.change_position = r.spec.change_position;
  rec.delta = r.spec.delta;
  rec.end_t = r.end_t;
  rec.actions = r.actions;
  rec.reward = r.reward;
  rec.outcome = r.outcome;
  rec.alpha = r.alpha;
  rec.value = r.value;
  rec.td = r.td;
  return rec;
}

inline std::vector<TrialSpec> grid_trials(const EvalGrid& grid, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrialSpec> out;
  for (double v : grid.validities)
    for (auto cue : grid.cue_positions)
      for (double delta : grid.deltas)
        for (std::size_t i = 0; i < grid.trials; ++i) {
          TrialRequest req;
          req.cue_validity = v;
          req.cue_position = cue;
          req.sigma = grid.sigma;
          req.delta = delta;
          req.change = grid.change;
          out.push_back(sample_trial(rng, req));
        }
  return out;
}

/// Greedy evaluation over a grid, optionally under attention forcing.
template <std::floating_point T>
std::vector<TrialRecord> evaluate(Agent<T>& agent, FeatureCache& cache, const EvalGrid& grid, std::uint64_t seed,
                                  std::span<const ForceRule> forces = {}) {
  std::vector<TrialRecord> out;
  Rng unused(seed);
  std::uint64_t id = 0;
  for (const auto& spec : grid_trials(grid, seed))
    out.push_back(to_record(run_trial(agent, cache, spec, unused, {.mode = ActMode::Greedy, .forces = forces}), id++));
  return out;
}

/// One behaviour table per named forcing set, all on the same trials.
template <std::floating_point T>
std::map<std::string, BehaviorTable> perturbation_sweep(Agent<T>& agent, FeatureCache& cache, const EvalGrid& grid,
                                                        std::uint64_t seed,
                                                        const std::map<std::string, std::vector<ForceRule>>& forcings) {
  std::map<std::string, BehaviorTable> out;
  for (const auto& [name, rules] : forcings) {
    const auto recs = evaluate(agent, cache, grid, seed, rules);
    out[name] = tabulate(recs);
  }
  return out;
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `trials` fair coin flips. Ties are excluded by the caller.
inline double sign_test_p(std::size_t wins, std::size_t trials) {
  if (trials == 0) return 1.0;
  if (wins == 0) return 1.0;
  boost::math::binomial_distribution<double> b(double(trials), 0.5);
  return boost::math::cdf(boost::math::complement(b, double(wins) - 1));
}

}  // namespace vistab
