#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "vistab/numerics/nn.hpp"
#include "vistab/analysis/stats.hpp"
#include "vistab/numerics/optim.hpp"

namespace vistab {

/// Decoding probe: two (affine, layer-norm, ELU) blocks and a linear head.
template <std::floating_point T>
struct Probe {
  Linear<T> l1, l2, head;
  LayerNorm<T> n1, n2;

  Probe() = default;
  Probe(std::size_t d_in, std::size_t d_out, Rng& rng, std::size_t w1 = 512, std::size_t w2 = 256)
      : l1("probe.l1", d_in, w1, rng),
        l2("probe.l2", w1, w2, rng),
        head("probe.head", w2, d_out, rng),
        n1("probe.ln1", w1),
        n2("probe.ln2", w2) {}

  std::size_t d_in() const { return l1.in_features(); }
  std::size_t d_out() const { return head.out_features(); }

  Var<T> logits(Tape<T>& tape, Var<T> x) {
    if (x.value().rank() != 2 || x.value().cols() != d_in())
      throw DimensionError("probe: input width " + std::to_string(x.value().cols()) + ", expected " +
                           std::to_string(d_in()));
    auto h = elu(n1(tape, l1(tape, x)));
    h = elu(n2(tape, l2(tape, h)));
    return head(tape, h);
  }

  std::vector<int> predict(const Tensor<T>& x) {
    Tape<T> tape;
    tape.set_frozen(true);
    auto l = logits(tape, tape.constant(x)).value();
    std::vector<int> out(l.rows());
    for (std::size_t i = 0; i < l.rows(); ++i) {
      auto row = l.row_span(i);
      out[i] = int(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
  }

  void collect(ParamList<T>& o) {
    l1.collect(o);
    n1.collect(o);
    l2.collect(o);
    n2.collect(o);
    head.collect(o);
  }
};

struct ProbeDataset {
  Tensorf x;  // N x d
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }

  ProbeDataset subset(const std::vector<std::size_t>& rows) const {
    ProbeDataset out;
    out.classes = classes;
    out.x = Tensorf({rows.size(), x.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(x.row_span(rows[i]).begin(), x.cols(), out.x.row_span(i).begin());
      out.labels.push_back(labels[rows[i]]);
    }
    return out;
  }
};

/// Seeded shuffle split; `train_fraction` of the rows go to the first part.
inline std::pair<ProbeDataset, ProbeDataset> split(const ProbeDataset& d, double train_fraction, Rng& rng) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const auto n = std::size_t(train_fraction * double(idx.size()) + 0.5);
  return {d.subset({idx.begin(), idx.begin() + std::ptrdiff_t(n)}), d.subset({idx.begin() + std::ptrdiff_t(n), idx.end()})};
}

struct ProbeTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 64;
  double learning_rate = 1e-3;
  std::size_t width1 = 512, width2 = 256;
};

struct ProbeReport {
  std::vector<double> epoch_loss;
  std::vector<std::string> diagnostics;
};

/// Cross-entropy training with Adam over shuffled mini-batches.
inline Probe<float> train_probe(const ProbeDataset& data, const ProbeTrainConfig& cfg, Rng& rng,
                                ProbeReport* report = nullptr) {
  if (data.size() == 0) throw AnalysisError("train_probe: empty dataset");
  if (data.x.rank() != 2 || data.x.rows() != data.size()) throw DimensionError("train_probe: x rows != labels");
  std::vector<std::size_t> counts(data.classes, 0);
  for (int y : data.labels) {
    if (y < 0 || std::size_t(y) >= data.classes) throw DimensionError("train_probe: label out of range");
    ++counts[std::size_t(y)];
  }
  ProbeReport local;
  auto& rep = report ? *report : local;
  for (std::size_t c = 0; c < data.classes; ++c)
    if (counts[c] == 0) rep.diagnostics.push_back("class " + std::to_string(c) + " absent from training set");

  Probe<float> probe(data.x.cols(), data.classes, rng, cfg.width1, cfg.width2);
  ParamList<float> ps;
  probe.collect(ps);
  Adam<float> opt(ps, {.learning_rate = cfg.learning_rate});
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    double total = 0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch) {
      const std::size_t end = std::min(idx.size(), start + cfg.batch);
      auto b = data.subset({idx.begin() + std::ptrdiff_t(start), idx.begin() + std::ptrdiff_t(end)});
      Tensorf w({b.size(), data.classes});
      for (std::size_t i = 0; i < b.size(); ++i) w(i, std::size_t(b.labels[i])) = -1.0f / float(b.size());
      opt.zero_grad();
      Tape<float> tape;
      auto loss = weighted_sum(log_softmax_rows(probe.logits(tape, tape.constant(b.x))), w);
      if (!loss.value().all_finite()) throw NumericalError("probe loss became non-finite");
      tape.backward(loss);
      opt.step();
      total += double(loss.value().item()) * double(b.size());
    }
    rep.epoch_loss.push_back(total / double(data.size()));
  }
  return probe;
}

/// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : counts(k, std::vector<std::size_t>(k, 0)) {}

  std::size_t classes() const { return counts.size(); }

  std::vector<std::vector<double>> row_normalized() const {
    std::vector<std::vector<double>> out(classes(), std::vector<double>(classes(), 0.0));
    for (std::size_t i = 0; i < classes(); ++i) {
      const auto n = std::accumulate(counts[i].begin(), counts[i].end(), std::size_t(0));
      for (std::size_t j = 0; j < classes(); ++j) out[i][j] = n ? double(counts[i][j]) / double(n) : 0.0;
    }
    return out;
  }

  double accuracy() const {
    std::size_t hit = 0, n = 0;
    for (std::size_t i = 0; i < classes(); ++i)
      for (std::size_t j = 0; j < classes(); ++j) {
        n += counts[i][j];
        if (i == j) hit += counts[i][j];
      }
    return n ? double(hit) / double(n) : 0.0;
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t k) {
  if (truth.size() != predicted.size()) throw DimensionError("confusion: size mismatch");
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || std::size_t(truth[i]) >= k || std::size_t(predicted[i]) >= k)
      throw DimensionError("confusion: label out of range");
    ++m.counts[std::size_t(truth[i])][std::size_t(predicted[i])];
  }
  return m;
}

inline ConfusionMatrix confusion(Probe<float>& probe, const ProbeDataset& test) {
  return confusion(test.labels, probe.predict(test.x), probe.d_out());
}

}  // namespace vistab
