#pragma once

#include <cstddef>
#include <string>

#include "vistab/environment.hpp"
#include "vistab/numerics/nn.hpp"
#include "vistab/numerics/ops.hpp"

namespace vistab {

inline constexpr double kNormalizerFloor = 1e-12;

/// Per-slot recurrent state, one row per stimulus location.
template <std::floating_point T>
struct MemoryState {
  Tensor<T> c, h, m, n;  // 4 x d_mem each
};

/// The same state living on a tape, so a trial can be unrolled and
/// differentiated through time.
template <std::floating_point T>
struct MemoryVars {
  Var<T> c, h, m, n;

  MemoryState<T> values() const { return {c.value(), h.value(), m.value(), n.value()}; }
};

/// Input and recurrent weights shared across the four slots. No biases.
template <std::floating_point T>
struct LstmParams {
  Parameter<T> w_i, w_f, w_o, w_u;  // d_model x d_mem
  Parameter<T> r_i, r_f, r_o, r_u;  // d_mem x d_mem

  LstmParams() = default;
  LstmParams(std::size_t d_model, std::size_t d_mem, Rng& rng) {
    auto w = [&](const char* n) { return Parameter<T>(n, glorot<T>({d_model, d_mem}, d_model, d_mem, rng)); };
    auto r = [&](const char* n) { return Parameter<T>(n, glorot<T>({d_mem, d_mem}, d_mem, d_mem, rng)); };
    w_i = w("lstm.w_i");
    w_f = w("lstm.w_f");
    w_o = w("lstm.w_o");
    w_u = w("lstm.w_u");
    r_i = r("lstm.r_i");
    r_f = r("lstm.r_f");
    r_o = r("lstm.r_o");
    r_u = r("lstm.r_u");
  }

  std::size_t d_model() const { return w_i.value().rows(); }
  std::size_t d_mem() const { return w_i.value().cols(); }

  void collect(ParamList<T>& out) { out.insert(out.end(), {&w_i, &w_f, &w_o, &w_u, &r_i, &r_f, &r_o, &r_u}); }
};

/// C = H = M = N = 0.
template <std::floating_point T>
MemoryState<T> reset(std::size_t d_mem) {
  const Shape s{std::size_t(kPatches), d_mem};
  return {Tensor<T>(s), Tensor<T>(s), Tensor<T>(s), Tensor<T>(s)};
}

template <std::floating_point T>
MemoryVars<T> to_tape(Tape<T>& tape, const MemoryState<T>& s) {
  return {tape.constant(s.c), tape.constant(s.h), tape.constant(s.m), tape.constant(s.n)};
}

/// Throws NumericalError naming the first slot with a non-finite entry.
template <std::floating_point T>
void check_finite(const MemoryState<T>& s) {
  for (const auto* t : {&s.c, &s.h, &s.m, &s.n})
    for (std::size_t i = 0; i < t->rows(); ++i)
      for (T v : t->row_span(i))
        if (!std::isfinite(v)) throw NumericalError("memory slot " + std::to_string(i) + " became non-finite");
}

/// One update of the exponential-gated LSTM, row-wise over the slots:
///   I~ = Z W_i + H R_i (likewise F~, O~, U~)
///   M = max(F~ + M_prev, I~), I = exp(I~ - M), F = exp(F~ + M_prev - M)
///   O = sigmoid(O~), U = tanh(U~)
///   N = F N_prev + I, C = C_prev F + U I, H = O C / N
template <std::floating_point T>
MemoryVars<T> lstm_step(Tape<T>& tape, LstmParams<T>& p, Var<T> z, const MemoryVars<T>& prev) {
  if (z.value().rows() != std::size_t(kPatches) || z.value().cols() != p.d_model())
    throw DimensionError("lstm_step: Z must be 4 x " + std::to_string(p.d_model()));
  auto pre = [&](Parameter<T>& w, Parameter<T>& r) { return matmul(z, tape.param(w)) + matmul(prev.h, tape.param(r)); };
  auto i_pre = pre(p.w_i, p.r_i);
  auto f_pre = pre(p.w_f, p.r_f);
  auto o_pre = pre(p.w_o, p.r_o);
  auto u_pre = pre(p.w_u, p.r_u);

  auto f_shift = f_pre + prev.m;
  MemoryVars<T> next;
  next.m = maximum(f_shift, i_pre);
  auto gate_i = exp(i_pre - next.m);
  auto gate_f = exp(f_shift - next.m);
  auto gate_o = sigmoid(o_pre);
  auto gate_u = tanh(u_pre);
  next.n = gate_f * prev.n + gate_i;
  next.c = prev.c * gate_f + gate_u * gate_i;
  auto floor = tape.constant(Tensor<T>(next.n.value().shape(), T(kNormalizerFloor)));
  next.h = gate_o * (next.c / maximum(next.n, floor));
  check_finite(next.values());
  return next;
}

/// Untaped convenience wrapper.
template <std::floating_point T>
MemoryState<T> lstm_step(LstmParams<T>& p, const Tensor<T>& z, const MemoryState<T>& prev) {
  Tape<T> tape;
  tape.set_frozen(true);
  return lstm_step(tape, p, tape.constant(z), to_tape(tape, prev)).values();
}

}  // namespace vistab
