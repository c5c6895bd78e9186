#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vistab/numerics/autodiff.hpp"

namespace vistab {

/// Adaptive-moment optimizer over a fixed list of parameters.
template <std::floating_point T>
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
  };

  Adam(std::vector<Parameter<T>*> params, Options options) : params_(std::move(params)), opt_(options) {
    for (auto* p : params_) {
      m_.emplace_back(p->value().shape());
      v_.emplace_back(p->value().shape());
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  /// Applies one update from the accumulated gradients. Returns the global
  /// gradient norm before clipping.
  double step() {
    double norm2 = 0;
    for (auto* p : params_)
      for (T g : p->grad().data()) norm2 += double(g) * double(g);
    const double norm = std::sqrt(norm2);
    const double clip = (opt_.grad_clip > 0 && norm > opt_.grad_clip) ? opt_.grad_clip / norm : 1.0;
    ++steps_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(steps_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value();
      const auto& g = params_[k]->grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = double(g[i]) * clip;
        m[i] = T(opt_.beta1 * m[i] + (1 - opt_.beta1) * gi);
        v[i] = T(opt_.beta2 * v[i] + (1 - opt_.beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= T(opt_.learning_rate * mhat / (std::sqrt(vhat) + opt_.epsilon));
      }
    }
    return norm;
  }

  std::size_t steps() const { return steps_; }
  void set_learning_rate(double lr) { opt_.learning_rate = lr; }

 private:
  std::vector<Parameter<T>*> params_;
  Options opt_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace vistab
