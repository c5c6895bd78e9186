#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vistab/numerics/autodiff.hpp"

namespace vistab {

struct GradCheckResult {
  double max_relative_error = 0;
  std::string worst;  // "<name>[<index>]" of the worst coordinate
  std::size_t coordinates = 0;
};

namespace detail {

template <class T>
T scalar_loss(Var<T> v) {
  const T f = v.value().item();
  if (!std::isfinite(f)) throw NumericalError("grad_check: non-finite loss " + std::to_string(f));
  return f;
}

inline void track(GradCheckResult& r, double analytic, double numeric, const std::string& where) {
  const double err = std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8);
  ++r.coordinates;
  if (err > r.max_relative_error || r.worst.empty()) {
    r.max_relative_error = std::max(r.max_relative_error, err);
    r.worst = where;
  }
}

}  // namespace detail

/// Compares reverse-mode gradients of a scalar block against central
/// differences (f(x+h) - f(x-h)) / 2h over every coordinate of `theta`.
/// Returns max |analytic - numeric| / (|numeric| + 1e-8).
template <std::floating_point T>
GradCheckResult grad_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& block, Tensor<T> theta, T h) {
  Tensor<T> analytic;
  {
    Tape<T> tape;
    auto x = tape.input(theta);
    auto loss = block(tape, x);
    detail::scalar_loss(loss);
    tape.backward(loss);
    analytic = tape.grad(x);
  }
  auto eval = [&](const Tensor<T>& at) {
    Tape<T> tape;
    return detail::scalar_loss(block(tape, tape.constant(at)));
  };
  GradCheckResult result;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const T saved = theta[k];
    theta[k] = saved + h;
    const T fp = eval(theta);
    theta[k] = saved - h;
    const T fm = eval(theta);
    theta[k] = saved;
    detail::track(result, analytic[k], (double(fp) - double(fm)) / (2.0 * double(h)),
                  "theta[" + std::to_string(k) + "]");
  }
  return result;
}

/// Same check over the coordinates of a set of parameters; the block reads
/// them through `Tape::param`. With `max_per_param` > 0 only that many evenly
/// strided coordinates of each parameter are probed (large layers).
template <std::floating_point T>
GradCheckResult grad_check(const std::function<Var<T>(Tape<T>&)>& block, const std::vector<Parameter<T>*>& params,
                           T h, std::size_t max_per_param = 0) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<T> tape;
    auto loss = block(tape);
    detail::scalar_loss(loss);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape<T> tape;
    return detail::scalar_loss(block(tape));
  };
  GradCheckResult result;
  for (auto* p : params) {
    auto& w = p->value();
    const std::size_t n = max_per_param ? std::min(max_per_param, w.size()) : w.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i * w.size() / n;
      const T saved = w[k];
      w[k] = saved + h;
      const T fp = eval();
      w[k] = saved - h;
      const T fm = eval();
      w[k] = saved;
      detail::track(result, p->grad()[k], (double(fp) - double(fm)) / (2.0 * double(h)),
                    p->name() + "[" + std::to_string(k) + "]");
    }
  }
  return result;
}

}  // namespace vistab
