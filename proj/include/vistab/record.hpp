#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "vistab/environment.hpp"

namespace vistab {

/// One finished trial as logged and analysed: no tensors, only behaviour
/// and the scalar traces.
struct TrialRecord {
  std::uint64_t trial_id = 0;
  std::uint64_t seed = 0;
  Location cue_position = Location::S1;
  double validity = 1.0;
  bool change_trial = false;
  std::optional<Location> change_position;
  double delta = 0.0;
  int end_t = 0;
  std::vector<int> actions;
  int reward = 0;
  Outcome outcome = Outcome::CorrectReject;
  std::array<std::array<double, kPatches>, kTimesteps> alpha{};  // NaN after the trial ended
  std::vector<double> value;
  std::vector<double> td;

  bool declared() const { return !actions.empty() && actions.back() == 1; }
};

}  // namespace vistab
