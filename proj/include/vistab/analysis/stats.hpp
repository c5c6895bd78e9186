#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>

#include <boost/math/special_functions/beta.hpp>

namespace vistab {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Inverse standard-normal CDF: Acklam's rational approximation refined by
/// one Halley step against erfc.
inline double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -INFINITY;
    if (p == 1.0) return INFINITY;
    throw AnalysisError("inverse_normal_cdf: p outside [0, 1]");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double lo = 0.02425, hi = 1 - lo;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= hi) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

struct Interval {
  double lo = 0, hi = 0;
};

/// Central credible interval of Beta(k + 1/2, n - k + 1/2). The upper end is
/// pinned to 1 when k = n and the lower to 0 when k = 0. Empty when n = 0.
inline std::optional<Interval> jeffreys_interval(std::size_t k, std::size_t n, double level = 0.95) {
  if (k > n) throw AnalysisError("jeffreys_interval: k > n");
  if (!(level > 0 && level < 1)) throw AnalysisError("jeffreys_interval: level must lie in (0, 1)");
  if (n == 0) return std::nullopt;
  const double a = double(k) + 0.5, b = double(n - k) + 0.5, tail = (1 - level) / 2;
  Interval out;
  out.lo = k == 0 ? 0.0 : boost::math::ibeta_inv(a, b, tail);
  out.hi = k == n ? 1.0 : boost::math::ibeta_inv(a, b, 1 - tail);
  return out;
}

/// Signal-detection estimates from outcome counts.
struct SdtEstimate {
  double hit_rate = 0, fa_rate = 0;
  double c = 0, d_prime = 0;
  double var_c = 0, var_d = 0;
  std::size_t n_change = 0, n_no_change = 0;
  bool hit_clamped = false, fa_clamped = false;
};

/// Delta-method variance of z(theta_hat): theta(1 - theta)/n / phi(z)^2.
inline double z_variance(double theta, std::size_t n) {
  const double z = inverse_normal_cdf(theta);
  const double dz = 1.0 / normal_pdf(z);
  return theta * (1 - theta) / double(n) * dz * dz;
}

inline SdtEstimate sdt(std::size_t n_hit, std::size_t n_miss, std::size_t n_fa, std::size_t n_cr) {
  SdtEstimate s;
  s.n_change = n_hit + n_miss;
  s.n_no_change = n_fa + n_cr;
  if (s.n_change == 0 || s.n_no_change == 0)
    throw AnalysisError("sdt: need at least one change and one no-change trial");
  // Rates of exactly 0 or 1 move to 1/(2n) and 1 - 1/(2n).
  auto rate = [](std::size_t k, std::size_t n, bool& clamped) {
    double r = double(k) / double(n);
    if (k == 0 || k == n) {
      clamped = true;
      r = k == 0 ? 0.5 / double(n) : 1 - 0.5 / double(n);
    }
    return r;
  };
  s.hit_rate = rate(n_hit, s.n_change, s.hit_clamped);
  s.fa_rate = rate(n_fa, s.n_no_change, s.fa_clamped);
  const double zh = inverse_normal_cdf(s.hit_rate), zf = inverse_normal_cdf(s.fa_rate);
  s.c = -0.5 * (zh + zf);
  s.d_prime = zh - zf;
  const double vh = z_variance(s.hit_rate, s.n_change), vf = z_variance(s.fa_rate, s.n_no_change);
  s.var_c = 0.25 * (vh + vf);
  s.var_d = vh + vf;
  return s;
}

}  // namespace vistab
