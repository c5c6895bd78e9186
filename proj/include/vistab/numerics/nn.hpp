#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vistab/numerics/autodiff.hpp"
#include "vistab/numerics/ops.hpp"
#include "vistab/numerics/rng.hpp"

namespace vistab {

template <std::floating_point T>
using ParamList = std::vector<Parameter<T>*>;

/// Glorot-uniform initialized tensor for a fan_in x fan_out map.
template <std::floating_point T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / double(fan_in + fan_out));
  Tensor<T> out(std::move(shape));
  for (auto& v : out.data()) v = T(rng.uniform(-a, a));
  return out;
}

/// Affine map y = x W + b over row vectors.
template <std::floating_point T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0)
      : weight(name + ".weight", glorot<T>({in, out}, in, out, rng, gain)),
        bias(name + ".bias", Tensor<T>({out})) {}

  std::size_t in_features() const { return weight.value().rows(); }
  std::size_t out_features() const { return weight.value().cols(); }

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    if (x.value().cols() != in_features())
      throw DimensionError(weight.name() + ": input width " + std::to_string(x.value().cols()) + ", expected " +
                           std::to_string(in_features()));
    return add_row(matmul(x, tape.param(weight)), tape.param(bias));
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Learnable gain/bias of a layer normalization.
template <std::floating_point T>
struct LayerNorm {
  Parameter<T> gain;
  Parameter<T> bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t n)
      : gain(name + ".gain", Tensor<T>::ones({n})), bias(name + ".bias", Tensor<T>({n})) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x) { return layer_norm(x, tape.param(gain), tape.param(bias)); }

  void collect(ParamList<T>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

/// Copies parameter values between two structurally identical lists.
template <std::floating_point T>
void copy_values(const ParamList<T>& from, const ParamList<T>& to) {
  if (from.size() != to.size()) throw DimensionError("copy_values: parameter count mismatch");
  for (std::size_t k = 0; k < from.size(); ++k) {
    from[k]->value().require_same_shape(to[k]->value(), "copy_values");
    to[k]->value() = from[k]->value();
  }
}

}  // namespace vistab
