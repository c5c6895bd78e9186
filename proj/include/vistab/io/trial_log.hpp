#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vistab/io/config.hpp"
#include "vistab/record.hpp"
#include "vistab/train.hpp"

namespace vistab {

inline const char* outcome_code(Outcome o) {
  switch (o) {
    case Outcome::Hit: return "H";
    case Outcome::Miss: return "M";
    case Outcome::FalseAlarm: return "FA";
    case Outcome::CorrectReject: return "CR";
  }
  return "?";
}

inline Outcome parse_outcome_code(const std::string& s) {
  if (s == "H") return Outcome::Hit;
  if (s == "M") return Outcome::Miss;
  if (s == "FA") return Outcome::FalseAlarm;
  if (s == "CR") return Outcome::CorrectReject;
  throw ConfigError("unknown outcome code '" + s + "'");
}

/// Column names of the trial log, in file order.
inline std::vector<std::string> trial_log_columns() {
  std::vector<std::string> c{"trial_id", "seed",  "cue_pos", "validity", "change_trial", "change_pos",
                             "delta",    "end_t", "actions", "reward",   "outcome"};
  for (int t = 0; t < kTimesteps; ++t)
    for (int j = 0; j < kPatches; ++j) c.push_back("alpha_t" + std::to_string(t) + "_s" + std::to_string(j + 1));
  c.push_back("value");
  c.push_back("td");
  return c;
}

namespace detail {

inline std::string join_trace(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + format_double(v[i]);
  return out;
}

inline std::vector<double> parse_trace(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';'))
    if (!item.empty()) out.push_back(parse_double(item));
  return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline std::string trial_log_header() {
  std::string h;
  for (const auto& c : trial_log_columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

inline std::string to_csv_row(const TrialRecord& r) {
  std::ostringstream os;
  os << r.trial_id << ',' << r.seed << ',' << to_string(r.cue_position) << ',' << detail::format_double(r.validity)
     << ',' << (r.change_trial ? 1 : 0) << ',' << (r.change_position ? to_string(*r.change_position) : "none") << ','
     << detail::format_double(r.delta) << ',' << r.end_t << ',';
  for (int a : r.actions) os << a;
  os << ',' << r.reward << ',' << outcome_code(r.outcome);
  for (const auto& row : r.alpha)
    for (double a : row) os << ',' << (std::isnan(a) ? std::string("nan") : detail::format_double(a));
  os << ',' << detail::join_trace(r.value) << ',' << detail::join_trace(r.td);
  return os.str();
}

inline TrialRecord parse_csv_row(const std::string& line) {
  const auto f = detail::split_csv(line);
  const std::size_t want = trial_log_columns().size();
  if (f.size() != want)
    throw ConfigError("trial log row has " + std::to_string(f.size()) + " fields, expected " + std::to_string(want));
  TrialRecord r;
  std::size_t i = 0;
  r.trial_id = detail::parse_uint(f[i++]);
  r.seed = detail::parse_uint(f[i++]);
  r.cue_position = parse_location(f[i++]);
  r.validity = detail::parse_double(f[i++]);
  r.change_trial = detail::parse_bool(f[i++]);
  if (const auto& cp = f[i++]; cp != "none") r.change_position = parse_location(cp);
  r.delta = detail::parse_double(f[i++]);
  r.end_t = int(detail::parse_uint(f[i++]));
  for (char ch : f[i++]) {
    if (ch != '0' && ch != '1') throw ConfigError("bad action sequence '" + f[i - 1] + "'");
    r.actions.push_back(ch - '0');
  }
  r.reward = int(detail::parse_uint(f[i++]));
  r.outcome = parse_outcome_code(f[i++]);
  for (auto& row : r.alpha)
    for (double& a : row) {
      const auto& s = f[i++];
      a = s == "nan" ? std::numeric_limits<double>::quiet_NaN() : detail::parse_double(s);
    }
  r.value = detail::parse_trace(f[i++]);
  r.td = detail::parse_trace(f[i++]);
  return r;
}

inline void write_trial_log(std::ostream& os, const std::vector<TrialRecord>& records) {
  os << trial_log_header() << '\n';
  for (const auto& r : records) os << to_csv_row(r) << '\n';
}

inline std::vector<TrialRecord> read_trial_log(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty trial log");
  if (line != trial_log_header()) throw ConfigError("trial log header does not match the schema");
  std::vector<TrialRecord> out;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(parse_csv_row(line));
  return out;
}

inline std::vector<TrialRecord> load_trial_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open trial log '" + path + "'");
  return read_trial_log(is);
}

inline void save_trial_log(const std::string& path, const std::vector<TrialRecord>& records) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write trial log '" + path + "'");
  write_trial_log(os, records);
}

// Transition files: a header "transitions d=<d>", then one line per
// transition: h (d floats), action, reward, h_next (d floats), terminal.
// Floats are float32 values printed in their shortest exact form.

inline void write_transitions(std::ostream& os, const std::vector<Transition>& data) {
  const std::size_t d = data.empty() ? 0 : data.front().h.size();
  os << "transitions d=" << d << '\n';
  char buf[32];
  auto put = [&](float v) {
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    os.write(buf, r.ptr - buf);
  };
  for (const auto& t : data) {
    if (t.h.size() != d) throw DimensionError("write_transitions: ragged h");
    for (float v : t.h) put(v), os << ',';
    os << t.action << ',' << detail::format_double(t.reward) << ',';
    for (std::size_t j = 0; j < d; ++j) put(t.terminal || t.h_next.empty() ? 0.0f : t.h_next[j]), os << ',';
    os << (t.terminal ? 1 : 0) << '\n';
  }
}

inline std::vector<Transition> read_transitions(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("transitions d=", 0) != 0) throw ConfigError("bad transition file header");
  const std::size_t d = detail::parse_uint(line.substr(14));
  std::vector<Transition> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 2 * d + 3) throw ConfigError("transition row has " + std::to_string(f.size()) + " fields");
    Transition t;
    auto flt = [](const std::string& s) {
      float v = 0;
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
      return v;
    };
    for (std::size_t j = 0; j < d; ++j) t.h.push_back(flt(f[j]));
    t.action = int(detail::parse_uint(f[d]));
    t.reward = detail::parse_double(f[d + 1]);
    for (std::size_t j = 0; j < d; ++j) t.h_next.push_back(flt(f[d + 2 + j]));
    t.terminal = detail::parse_bool(f[2 * d + 2]);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace vistab
