#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "vistab/analysis/behavior.hpp"
#include "vistab/analysis/probe.hpp"
#include "vistab/analysis/psychometric.hpp"
#include "vistab/io/trial_log.hpp"

namespace vistab {

/// A header plus string cells. Cells never contain commas or newlines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("no column '" + name + "'");
  }

  void add(std::vector<std::string> row) {
    if (row.size() != header.size()) throw DimensionError("csv row width != header width");
    for (auto& cell : row)
      for (auto& ch : cell)
        if (ch == ',' || ch == '\n') ch = ';';
    rows.push_back(std::move(row));
  }
};

inline void write_csv(std::ostream& os, const CsvTable& t) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty csv");
  t.header = detail::split_csv(line);
  while (std::getline(is, line))
    if (!line.empty()) {
      auto cells = detail::split_csv(line);
      if (cells.size() != t.header.size()) throw ConfigError("csv row width != header width");
      t.rows.push_back(std::move(cells));
    }
  return t;
}

inline void save_csv(const std::string& path, const CsvTable& t) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  write_csv(os, t);
}

inline CsvTable load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open '" + path + "'");
  return read_csv(is);
}

namespace detail {

inline std::string fmt(double v) { return std::isnan(v) ? "nan" : format_double(v); }
inline std::string fmt(std::optional<double> v) { return v ? format_double(*v) : "nan"; }
inline std::string loc_or_none(int j) { return j < 0 ? "none" : "S" + std::to_string(j + 1); }

}  // namespace detail

// Psychometric curves: change trials only, one curve per (cue, validity,
// change location). `rate` is the fraction of trials with a declaration at
// or after the change, with a 95% Jeffreys interval.

struct PsychometricTables {
  CsvTable points{{"cue_pos", "validity", "change_pos", "delta", "rate", "lo", "hi", "n"}, {}};
  CsvTable fits{{"cue_pos", "validity", "change_pos", "a", "b", "c", "d", "se_a", "se_b", "se_c", "se_d", "rss",
                 "status"},
                {}};
  std::vector<std::string> errors;
};

inline PsychometricTables psychometric_tables(std::span<const TrialRecord> records) {
  PsychometricTables out;
  const auto table = tabulate(records);
  std::map<std::tuple<int, double, int>, std::vector<PsychometricPoint>> curves;
  for (const auto& [key, row] : table) {
    if (key.change_position < 0) continue;
    const auto k = row.n_hit, n = row.n_hit + row.n_miss;
    const auto ci = jeffreys_interval(k, n, 0.95);
    out.points.add({to_string(Location(key.cue_position)), detail::fmt(key.validity),
                    detail::loc_or_none(key.change_position), detail::fmt(key.delta), detail::fmt(hit_rate(row)),
                    detail::fmt(ci ? ci->lo : NAN), detail::fmt(ci ? ci->hi : NAN), std::to_string(n)});
    curves[{key.cue_position, key.validity, key.change_position}].push_back(
        {key.delta, double(k) / double(n), n});
  }
  for (const auto& [key, pts] : curves) {
    const auto& [cue, validity, change] = key;
    std::vector<std::string> row{to_string(Location(cue)), detail::fmt(validity), detail::loc_or_none(change)};
    try {
      const auto f = fit_logistic(pts);
      for (double v : {f.a, f.b, f.c, f.d, f.se[0], f.se[1], f.se[2], f.se[3], f.residual})
        row.push_back(detail::fmt(v));
      row.push_back("ok");
    } catch (const AnalysisError& e) {
      for (int i = 0; i < 9; ++i) row.push_back("nan");
      row.push_back(std::string("fit_error: ") + e.what());
      out.errors.push_back(row[0] + "/" + row[1] + "/" + row[2] + ": " + e.what());
    }
    out.fits.add(std::move(row));
  }
  return out;
}

/// SDT per (cue, validity) and Delta; false alarms come from the no-change
/// trials of the same (cue, validity). Delta "all" pools the change trials.
/// Groups without both trial types are skipped.
inline CsvTable sdt_table(std::span<const TrialRecord> records) {
  CsvTable out{{"cue_pos", "validity", "delta", "n_hit", "n_miss", "n_fa", "n_cr", "hit_rate", "fa_rate", "c",
                "d_prime", "se_c", "se_d", "clamped"},
               {}};
  const auto table = tabulate(records);
  std::map<std::pair<int, double>, BehaviorRow> noise;
  std::map<std::tuple<int, double, double>, BehaviorRow> signal;
  std::map<std::pair<int, double>, BehaviorRow> pooled;
  for (const auto& [key, row] : table) {
    if (key.change_position < 0) {
      noise[{key.cue_position, key.validity}] += row;
    } else {
      signal[{key.cue_position, key.validity, key.delta}] += row;
      pooled[{key.cue_position, key.validity}] += row;
    }
  }
  auto emit = [&](int cue, double validity, const std::string& delta, const BehaviorRow& s) {
    const auto it = noise.find({cue, validity});
    if (it == noise.end() || s.n_hit + s.n_miss == 0) return;
    const auto& nz = it->second;
    const auto e = sdt(s.n_hit, s.n_miss, nz.n_fa, nz.n_cr);
    const char* clamped = e.hit_clamped && e.fa_clamped ? "both" : e.hit_clamped ? "hit" : e.fa_clamped ? "fa" : "none";
    out.add({to_string(Location(cue)), detail::fmt(validity), delta, std::to_string(s.n_hit),
             std::to_string(s.n_miss), std::to_string(nz.n_fa), std::to_string(nz.n_cr), detail::fmt(e.hit_rate),
             detail::fmt(e.fa_rate), detail::fmt(e.c), detail::fmt(e.d_prime), detail::fmt(std::sqrt(e.var_c)),
             detail::fmt(std::sqrt(e.var_d)), clamped});
  };
  for (const auto& [key, row] : signal) emit(std::get<0>(key), std::get<1>(key), detail::fmt(std::get<2>(key)), row);
  for (const auto& [key, row] : pooled) emit(key.first, key.second, "all", row);
  return out;
}

/// Mean attention share per location and timestep, by (cue, validity,
/// trial type). Timesteps after a trial ended are excluded.
inline CsvTable attention_table(std::span<const TrialRecord> records) {
  CsvTable out{{"cue_pos", "validity", "change_trial", "t", "n", "alpha_s1", "alpha_s2", "alpha_s3", "alpha_s4"}, {}};
  struct Acc {
    std::size_t n = 0;
    std::array<double, kPatches> sum{};
  };
  std::map<std::tuple<int, double, bool, int>, Acc> acc;
  for (const auto& r : records)
    for (int t = 0; t < kTimesteps; ++t) {
      if (std::isnan(r.alpha[t][0])) continue;
      auto& a = acc[{index(r.cue_position), r.validity, r.change_trial, t}];
      ++a.n;
      for (int j = 0; j < kPatches; ++j) a.sum[j] += r.alpha[t][j];
    }
  for (const auto& [key, a] : acc) {
    const auto& [cue, validity, change, t] = key;
    std::vector<std::string> row{to_string(Location(cue)), detail::fmt(validity), change ? "1" : "0",
                                 std::to_string(t), std::to_string(a.n)};
    for (double s : a.sum) row.push_back(detail::fmt(s / double(a.n)));
    out.add(std::move(row));
  }
  return out;
}

/// Mean V(H_t) and TD error per timestep, by trial type.
inline CsvTable value_table(std::span<const TrialRecord> records) {
  CsvTable out{{"change_trial", "t", "n", "value", "td"}, {}};
  struct Acc {
    std::size_t n = 0;
    double v = 0, td = 0;
  };
  std::map<std::pair<bool, int>, Acc> acc;
  for (const auto& r : records)
    for (std::size_t t = 0; t < r.value.size(); ++t) {
      auto& a = acc[{r.change_trial, int(t)}];
      ++a.n;
      a.v += r.value[t];
      a.td += t < r.td.size() ? r.td[t] : 0.0;
    }
  for (const auto& [key, a] : acc)
    out.add({key.first ? "1" : "0", std::to_string(key.second), std::to_string(a.n), detail::fmt(a.v / double(a.n)),
             detail::fmt(a.td / double(a.n))});
  return out;
}

inline CsvTable confusion_table(const ConfusionMatrix& m) {
  CsvTable out;
  out.header.push_back("true_class");
  const std::size_t k = m.counts.size();
  for (std::size_t j = 0; j < k; ++j) out.header.push_back("pred_" + std::to_string(j));
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (std::size_t j = 0; j < k; ++j) row.push_back(std::to_string(m.counts[i][j]));
    out.add(std::move(row));
  }
  return out;
}

// Probe datasets: header "label/<classes>,x0,...,x{d-1}", one row per sample.

inline CsvTable probe_dataset_table(const ProbeDataset& d) {
  CsvTable out;
  out.header.push_back("label/" + std::to_string(d.classes));
  for (std::size_t j = 0; j < d.x.cols(); ++j) out.header.push_back("x" + std::to_string(j));
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::vector<std::string> row{std::to_string(d.labels[i])};
    for (float v : d.x.row_span(i)) {
      char buf[32];
      auto r = std::to_chars(buf, buf + sizeof buf, v);
      row.emplace_back(buf, r.ptr);
    }
    out.add(std::move(row));
  }
  return out;
}

inline ProbeDataset probe_dataset_from(const CsvTable& t) {
  if (t.header.empty() || t.header[0].rfind("label/", 0) != 0) throw ConfigError("not a probe dataset");
  ProbeDataset d;
  d.classes = detail::parse_uint(t.header[0].substr(6));
  const std::size_t dim = t.header.size() - 1;
  d.x = Tensorf({t.rows.size(), dim});
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto label = detail::parse_uint(t.rows[i][0]);
    if (label >= d.classes) throw ConfigError("probe label out of range");
    d.labels.push_back(int(label));
    for (std::size_t j = 0; j < dim; ++j) {
      const auto& s = t.rows[i][j + 1];
      float v = 0;
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
      d.x(i, j) = v;
    }
  }
  return d;
}

}  // namespace vistab
