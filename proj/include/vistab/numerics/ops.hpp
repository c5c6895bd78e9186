#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "vistab/numerics/autodiff.hpp"
#include "vistab/numerics/tensor.hpp"

// Differentiable operations over tape variables. Every op computes its value
// eagerly and records a closure that maps the output gradient to its parents.

namespace vistab {

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& tape = a.tape();
  return tape.record(matmul(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a)) t.accumulate(a, matmul_nt(g, b.value()));
    if (t.needs_grad(b)) t.accumulate(b, matmul_tn(a.value(), g));
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  return a.tape().record(transpose(a.value()), {a}, [a](Tape<T>& t, std::size_t self) {
    t.accumulate(a, transpose(t.grad(self)));
  });
}

template <class T>
Var<T> operator+(Var<T> a, Var<T> b) {
  auto out = zip(a.value(), b.value(), [](T x, T y) { return x + y; }, "add");
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <class T>
Var<T> operator-(Var<T> a, Var<T> b) {
  auto out = zip(a.value(), b.value(), [](T x, T y) { return x - y; }, "sub");
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, map(g, [](T v) { return -v; }));
  });
}

/// Elementwise (Hadamard) product.
template <class T>
Var<T> operator*(Var<T> a, Var<T> b) {
  auto out = zip(a.value(), b.value(), [](T x, T y) { return x * y; }, "hadamard");
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    auto prod = [](T x, T y) { return x * y; };
    if (t.needs_grad(a)) t.accumulate(a, zip(g, b.value(), prod));
    if (t.needs_grad(b)) t.accumulate(b, zip(g, a.value(), prod));
  });
}

template <class T>
Var<T> operator/(Var<T> a, Var<T> b) {
  auto out = zip(a.value(), b.value(), [](T x, T y) { return x / y; }, "div");
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (t.needs_grad(a)) t.accumulate(a, zip(g, bv, [](T gi, T y) { return gi / y; }));
    if (t.needs_grad(b)) {
      Tensor<T> gb(bv.shape());
      for (std::size_t k = 0; k < gb.size(); ++k) gb[k] = -g[k] * av[k] / (bv[k] * bv[k]);
      t.accumulate(b, gb);
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  return a.tape().record(map(a.value(), [s](T v) { return v * s; }), {a},
                         [a, s](Tape<T>& t, std::size_t self) {
                           t.accumulate(a, map(t.grad(self), [s](T v) { return v * s; }));
                         });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  return a.tape().record(map(a.value(), [s](T v) { return v + s; }), {a},
                         [a](Tape<T>& t, std::size_t self) { t.accumulate(a, t.grad(self)); });
}

/// Adds a bias vector (length n, any shape holding n values) to every row of
/// an m x n matrix.
template <class T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.size() != xv.cols()) throw DimensionError("add_row: bias length " + std::to_string(bv.size()));
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    t.accumulate(x, g);
    if (t.needs_grad(bias)) {
      Tensor<T> gb(bias.value().shape());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      t.accumulate(bias, gb);
    }
  });
}

namespace detail {

template <class T, class F, class D>
Var<T> unary(Var<T> a, F&& forward, D&& derivative) {
  Tensor<T> out = map(a.value(), forward);
  return a.tape().record(std::move(out), {a}, [a, derivative](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto& x = a.value();
    const auto& y = t.value(self);
    Tensor<T> ga(x.shape());
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = g[k] * derivative(x[k], y[k]);
    t.accumulate(a, ga);
  });
}

}  // namespace detail

template <class T>
Var<T> elu(Var<T> a) {
  return detail::unary(a, [](T x) { return elu(x); }, [](T x, T y) { return x >= T(0) ? T(1) : y + T(1); });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(a, [](T x) { return sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return detail::unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> relu(Var<T> a) {
  return detail::unary(a, [](T x) { return relu(x); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> exp(Var<T> a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(Var<T> a) {
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var<T> square(Var<T> a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// Elementwise maximum; ties route the gradient to the first operand.
template <class T>
Var<T> maximum(Var<T> a, Var<T> b) {
  auto out = zip(a.value(), b.value(), [](T x, T y) { return x >= y ? x : y; }, "maximum");
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto& av = a.value();
    const auto& bv = b.value();
    Tensor<T> ga(av.shape()), gb(bv.shape());
    for (std::size_t k = 0; k < g.size(); ++k) (av[k] >= bv[k] ? ga : gb)[k] = g[k];
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

/// Row-wise softmax; masked-out entries are excluded and come out as zero.
template <class T>
Var<T> softmax_rows(Var<T> a, std::span<const bool> mask = {}) {
  return a.tape().record(softmax_rows(a.value(), mask), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto& y = t.value(self);
    Tensor<T> ga(y.shape());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
    }
    t.accumulate(a, ga);
  });
}

/// Row-wise log-softmax.
template <class T>
Var<T> log_softmax_rows(Var<T> a) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    T hi = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) hi = std::max(hi, x(i, j));
    T total = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) total += std::exp(x(i, j) - hi);
    const T lse = hi + std::log(total);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto& y = t.value(self);
    Tensor<T> ga(y.shape());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      T gsum = 0;
      for (std::size_t j = 0; j < y.cols(); ++j) gsum += g(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = g(i, j) - std::exp(y(i, j)) * gsum;
    }
    t.accumulate(a, ga);
  });
}

/// Layer normalization over the last axis of a matrix, epsilon 1e-5.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias) {
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) throw DimensionError("layer_norm: gain/bias length");
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= T(n);
    inv_std[i] = T(1) / std::sqrt(var + T(kLayerNormEpsilon));
    for (std::size_t j = 0; j < n; ++j) xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
  }
  Tensor<T> out(xv.shape());
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = xhat(i, j) * gv[j] + bv[j];
  return x.tape().record(std::move(out), {x, gain, bias},
                         [x, gain, bias, xhat, inv_std](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto& gv = gain.value();
    const std::size_t m = g.rows(), n = g.cols();
    if (t.needs_grad(gain) || t.needs_grad(bias)) {
      Tensor<T> gg(gain.value().shape()), gb(bias.value().shape());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          gg[j] += g(i, j) * xhat(i, j);
          gb[j] += g(i, j);
        }
      t.accumulate(gain, gg);
      t.accumulate(bias, gb);
    }
    if (t.needs_grad(x)) {
      Tensor<T> gx(g.shape());
      for (std::size_t i = 0; i < m; ++i) {
        T sum_d = 0, sum_dx = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T d = g(i, j) * gv[j];
          sum_d += d;
          sum_dx += d * xhat(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) {
          const T d = g(i, j) * gv[j];
          gx(i, j) = inv_std[i] * (d - sum_d / T(n) - xhat(i, j) * sum_dx / T(n));
        }
      }
      t.accumulate(x, gx);
    }
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != m) throw DimensionError("concat_cols: row mismatch");
    n += p.value().cols();
  }
  Tensor<T> out({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
    off += v.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [parts](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.value().cols();
      if (t.needs_grad(p)) {
        Tensor<T> gp(p.value().shape());
        for (std::size_t i = 0; i < gp.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) = g(i, off + j);
        t.accumulate(p, gp);
      }
      off += w;
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t n = parts.front().value().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != n) throw DimensionError("concat_rows: column mismatch");
    m += p.value().rows();
  }
  std::vector<T> data;
  data.reserve(m * n);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return parts.front().tape().record(Tensor<T>({m, n}, std::move(data)), parts,
                                     [parts](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.value().size();
      if (t.needs_grad(p)) {
        Tensor<T> gp(p.value().shape());
        std::copy_n(g.data().begin() + off, len, gp.data().begin());
        t.accumulate(p, gp);
      }
      off += len;
    }
  });
}

/// Rows [begin, end) of a matrix.
template <class T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  if (begin > end || end > xv.rows()) throw DimensionError("slice_rows: bad range");
  const std::size_t n = xv.cols();
  Tensor<T> out({end - begin, n},
                std::vector<T>(xv.data().begin() + begin * n, xv.data().begin() + end * n));
  return x.tape().record(std::move(out), {x}, [x, begin, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    Tensor<T> gx(x.value().shape());
    std::copy(g.data().begin(), g.data().end(), gx.data().begin() + begin * n);
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape().record(x.value().reshaped(std::move(shape)), {x}, [x](Tape<T>& t, std::size_t self) {
    t.accumulate(x, t.grad(self).reshaped(x.value().shape()));
  });
}

/// Flattens to a 1 x n row.
template <class T>
Var<T> flatten_row(Var<T> x) {
  return reshape(x, Shape{1, x.value().size()});
}

template <class T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  return x.tape().record(Tensor<T>({1}, {total}), {x}, [x](Tape<T>& t, std::size_t self) {
    t.accumulate(x, Tensor<T>(x.value().shape(), t.grad(self)[0]));
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / T(x.value().size()));
}

/// Sum of w (constant) times x, elementwise.
template <class T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& w) {
  x.value().require_same_shape(w, "weighted_sum");
  T total = 0;
  for (std::size_t k = 0; k < w.size(); ++k) total += w[k] * x.value()[k];
  return x.tape().record(Tensor<T>({1}, {total}), {x}, [x, w](Tape<T>& t, std::size_t self) {
    Tensor<T> gx = w;
    gx *= t.grad(self)[0];
    t.accumulate(x, gx);
  });
}

/// Treats the value as a constant from here on.
template <class T>
Var<T> stop_gradient(Var<T> x) {
  return x.tape().constant(x.value());
}

// ---------------------------------------------------------------------------
// Convolutions over (N, C, H, W) batches via im2col.
// ---------------------------------------------------------------------------

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;             // sliding-window grid

  static ConvGeometry forward(std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t s,
                              std::size_t p) {
    if (h + 2 * p < k || w + 2 * p < k) throw DimensionError("conv: kernel larger than padded input");
    return {c, h, w, k, s, p, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1};
  }
};

namespace detail {

// img: C x H x W  ->  cols: (C*k*k) x (out_h*out_w)
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t npos = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * npos;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.height) && x < static_cast<long>(g.width);
            row[oy * g.out_w + ox] = inside ? img[(c * g.height + y) * g.width + x] : T(0);
          }
        }
      }
}

// Adjoint of im2col: scatter-adds cols back into img.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t npos = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * npos;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (y < 0 || y >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (x < 0 || x >= static_cast<long>(g.width)) continue;
            img[(c * g.height + y) * g.width + x] += row[oy * g.out_w + ox];
          }
        }
      }
}

template <class T>
Eigen::Map<const RowMajor<T>> view(const T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
template <class T>
Eigen::Map<RowMajor<T>> view(T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

}  // namespace detail

/// 2-D convolution. x: (N, Cin, H, W); weight: (Cout, Cin, k, k); bias: (Cout).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  xv.require_rank(4);
  wv.require_rank(4);
  const std::size_t n = xv.dim(0), cin = xv.dim(1), cout = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != cin || wv.dim(3) != k) throw DimensionError("conv2d: weight shape " + shape_string(wv.shape()));
  if (bias.value().size() != cout) throw DimensionError("conv2d: bias length");
  const auto g = ConvGeometry::forward(cin, xv.dim(2), xv.dim(3), k, stride, pad);
  const std::size_t ck = cin * k * k, npos = g.out_h * g.out_w, img = cin * g.height * g.width;
  Tensor<T> out({n, cout, g.out_h, g.out_w});
  std::vector<T> cols(ck * npos);
  const auto wm = detail::view(wv.data().data(), cout, ck);
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(xv.data().data() + s * img, g, cols.data());
    auto om = detail::view(out.data().data() + s * cout * npos, cout, npos);
    om.noalias() = wm * detail::view(static_cast<const T*>(cols.data()), ck, npos);
    for (std::size_t c = 0; c < cout; ++c) om.row(c).array() += bias.value()[c];
  }
  return x.tape().record(std::move(out), {x, weight, bias},
                         [x, weight, bias, g, n, cout, ck, npos, img](Tape<T>& t, std::size_t self) {
    const auto& go = t.grad(self);
    const auto& xv = x.value();
    const auto wm = detail::view(weight.value().data().data(), cout, ck);
    Tensor<T> gw(weight.value().shape()), gb(bias.value().shape()), gx(xv.shape());
    auto gwm = detail::view(gw.data().data(), cout, ck);
    std::vector<T> cols(ck * npos);
    for (std::size_t s = 0; s < n; ++s) {
      const auto gom = detail::view(go.data().data() + s * cout * npos, cout, npos);
      if (t.needs_grad(weight)) {
        detail::im2col(xv.data().data() + s * img, g, cols.data());
        gwm.noalias() += gom * detail::view(static_cast<const T*>(cols.data()), ck, npos).transpose();
      }
      for (std::size_t c = 0; c < cout; ++c) gb[c] += gom.row(c).sum();
      if (t.needs_grad(x)) {
        detail::view(cols.data(), ck, npos).noalias() = wm.transpose() * gom;
        detail::col2im(cols.data(), g, gx.data().data() + s * img);
      }
    }
    t.accumulate(weight, gw);
    t.accumulate(bias, gb);
    t.accumulate(x, gx);
  });
}

/// Transposed 2-D convolution (the adjoint of conv2d in x).
/// x: (N, Cin, H, W); weight: (Cin, Cout, k, k); bias: (Cout).
/// Output side: (H - 1) * stride - 2 * pad + k + output_pad.
template <class T>
Var<T> conv_transpose2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t pad,
                        std::size_t output_pad = 0) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  xv.require_rank(4);
  wv.require_rank(4);
  const std::size_t n = xv.dim(0), cin = xv.dim(1), cout = wv.dim(1), k = wv.dim(2);
  if (wv.dim(0) != cin || wv.dim(3) != k) throw DimensionError("conv_transpose2d: weight shape");
  if (bias.value().size() != cout) throw DimensionError("conv_transpose2d: bias length");
  const std::size_t oh = (xv.dim(2) - 1) * stride + k + output_pad - 2 * pad;
  const std::size_t ow = (xv.dim(3) - 1) * stride + k + output_pad - 2 * pad;
  const auto g = ConvGeometry::forward(cout, oh, ow, k, stride, pad);
  if (g.out_h != xv.dim(2) || g.out_w != xv.dim(3)) throw DimensionError("conv_transpose2d: geometry");
  const std::size_t ck = cout * k * k, npos = g.out_h * g.out_w, img = cout * oh * ow;
  Tensor<T> out({n, cout, oh, ow});
  std::vector<T> cols(ck * npos);
  const auto wm = detail::view(wv.data().data(), cin, ck);
  for (std::size_t s = 0; s < n; ++s) {
    const auto xm = detail::view(xv.data().data() + s * cin * npos, cin, npos);
    detail::view(cols.data(), ck, npos).noalias() = wm.transpose() * xm;
    T* o = out.data().data() + s * img;
    detail::col2im(cols.data(), g, o);
    for (std::size_t c = 0; c < cout; ++c)
      for (std::size_t p = 0; p < oh * ow; ++p) o[c * oh * ow + p] += bias.value()[c];
  }
  return x.tape().record(std::move(out), {x, weight, bias},
                         [x, weight, bias, g, n, cin, cout, ck, npos, img](Tape<T>& t, std::size_t self) {
    const auto& go = t.grad(self);
    const auto& xv = x.value();
    const auto wm = detail::view(weight.value().data().data(), cin, ck);
    Tensor<T> gw(weight.value().shape()), gb(bias.value().shape()), gx(xv.shape());
    auto gwm = detail::view(gw.data().data(), cin, ck);
    std::vector<T> cols(ck * npos);
    const std::size_t plane = g.height * g.width;
    for (std::size_t s = 0; s < n; ++s) {
      const T* gos = go.data().data() + s * img;
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t p = 0; p < plane; ++p) gb[c] += gos[c * plane + p];
      detail::im2col(gos, g, cols.data());
      const auto cm = detail::view(static_cast<const T*>(cols.data()), ck, npos);
      if (t.needs_grad(weight))
        gwm.noalias() += detail::view(xv.data().data() + s * cin * npos, cin, npos) * cm.transpose();
      if (t.needs_grad(x)) detail::view(gx.data().data() + s * cin * npos, cin, npos).noalias() = wm * cm;
    }
    t.accumulate(weight, gw);
    t.accumulate(bias, gb);
    t.accumulate(x, gx);
  });
}

}  // namespace vistab
