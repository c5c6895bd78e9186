#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "vistab/analysis/stats.hpp"
#include "vistab/record.hpp"

namespace vistab {

/// Condition a trial belongs to. change_position is -1 on no-change trials.
struct ConditionKey {
  int cue_position = 0;
  double validity = 1.0;
  int change_position = -1;
  double delta = 0.0;

  auto operator<=>(const ConditionKey&) const = default;
};

struct BehaviorRow {
  std::size_t n_trials = 0;
  std::size_t n_declare = 0;
  std::size_t rt_sum = 0;  // sum of trial-end timesteps
  std::size_t n_hit = 0, n_miss = 0, n_fa = 0, n_cr = 0;

  void add(const TrialRecord& r) {
    ++n_trials;
    n_declare += r.declared();
    rt_sum += std::size_t(r.end_t);
    switch (r.outcome) {
      case Outcome::Hit: ++n_hit; break;
      case Outcome::Miss: ++n_miss; break;
      case Outcome::FalseAlarm: ++n_fa; break;
      case Outcome::CorrectReject: ++n_cr; break;
    }
  }

  BehaviorRow& operator+=(const BehaviorRow& o) {
    n_trials += o.n_trials;
    n_declare += o.n_declare;
    rt_sum += o.rt_sum;
    n_hit += o.n_hit;
    n_miss += o.n_miss;
    n_fa += o.n_fa;
    n_cr += o.n_cr;
    return *this;
  }
};

/// n_dc / n_trials; empty for an empty condition.
inline std::optional<double> response_rate(const BehaviorRow& row) {
  if (row.n_trials == 0) return std::nullopt;
  return double(row.n_declare) / double(row.n_trials);
}

/// Mean trial-end timestep over all trials (waits count as 6).
inline std::optional<double> mean_rt(const BehaviorRow& row) {
  if (row.n_trials == 0) return std::nullopt;
  return double(row.rt_sum) / double(row.n_trials);
}

inline std::optional<double> hit_rate(const BehaviorRow& row) {
  if (row.n_hit + row.n_miss == 0) return std::nullopt;
  return double(row.n_hit) / double(row.n_hit + row.n_miss);
}

using BehaviorTable = std::map<ConditionKey, BehaviorRow>;

inline ConditionKey condition_of(const TrialRecord& r) {
  return {index(r.cue_position), r.validity, r.change_position ? index(*r.change_position) : -1,
          r.change_trial ? r.delta : 0.0};
}

inline BehaviorTable tabulate(std::span<const TrialRecord> records) {
  BehaviorTable table;
  for (const auto& r : records) table[condition_of(r)].add(r);
  return table;
}

/// Pools rows whose keys map to the same value of `f`.
template <class F>
auto pool(const BehaviorTable& table, F&& f) {
  std::map<decltype(f(ConditionKey{})), BehaviorRow> out;
  for (const auto& [k, row] : table) out[f(k)] += row;
  return out;
}

inline SdtEstimate sdt(const BehaviorRow& row) { return sdt(row.n_hit, row.n_miss, row.n_fa, row.n_cr); }

}  // namespace vistab
