#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vistab/analysis/stats.hpp"

namespace vistab {

struct PsychometricPoint {
  double delta = 0;
  double rate = 0;
  std::size_t n = 0;
};

/// f(x) = A + (1 - B) / (1 + exp(-C (x - D))).
struct PsychometricFit {
  double a = 0, b = 0, c = 0, d = 0;
  std::array<double, 4> se{};
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
  double residual = 0;  // sum of squared residuals
  int starts_converged = 0;

  double operator()(double x) const { return a + (1 - b) / (1 + std::exp(-c * (x - d))); }
};

class FitError : public AnalysisError {
 public:
  FitError(const std::string& what, double best_residual)
      : AnalysisError(what + " (best residual " + std::to_string(best_residual) + ")"), best_residual(best_residual) {}
  double best_residual;
};

struct LogisticFitOptions {
  double c_min = 1e-6;
  double ab_max = 0.5;
  int max_iterations = 1000;
};

namespace detail {

using Vec4 = Eigen::Vector4d;

inline double logistic4(const Vec4& p, double x) { return p[0] + (1 - p[1]) / (1 + std::exp(-p[2] * (x - p[3]))); }

inline double rss(const Vec4& p, std::span<const PsychometricPoint> pts) {
  double s = 0;
  for (const auto& q : pts) s += std::pow(q.rate - logistic4(p, q.delta), 2);
  return s;
}

inline Eigen::MatrixXd jacobian(const Vec4& p, std::span<const PsychometricPoint> pts) {
  Eigen::MatrixXd j(pts.size(), 4);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x = pts[i].delta;
    const double s = 1 / (1 + std::exp(-p[2] * (x - p[3])));
    const double ds = (1 - p[1]) * s * (1 - s);
    j.row(Eigen::Index(i)) << 1.0, -s, ds * (x - p[3]), -ds * p[2];
  }
  return j;
}

inline Vec4 project(Vec4 p, const LogisticFitOptions& o) {
  p[0] = std::clamp(p[0], 0.0, o.ab_max);
  p[1] = std::clamp(p[1], 0.0, o.ab_max);
  p[2] = std::max(p[2], o.c_min);
  return p;
}

struct LmResult {
  Vec4 p;
  double rss = 0;
  bool converged = false;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling, projected onto the
/// parameter box after each step.
inline LmResult levenberg_marquardt(Vec4 p, std::span<const PsychometricPoint> pts, const LogisticFitOptions& o) {
  p = project(p, o);
  double f = rss(p, pts);
  double lambda = 1e-3;
  for (int it = 0; it < o.max_iterations; ++it) {
    const auto j = jacobian(p, pts);
    Eigen::VectorXd r(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) r[Eigen::Index(i)] = pts[i].rate - logistic4(p, pts[i].delta);
    const Eigen::Matrix4d h = j.transpose() * j;
    const Vec4 g = j.transpose() * r;
    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::Matrix4d damped = h;
      for (int k = 0; k < 4; ++k) damped(k, k) += lambda * std::max(h(k, k), 1e-12);
      const Vec4 step = damped.ldlt().solve(g);
      const Vec4 q = project(p + step, o);
      const double fq = rss(q, pts);
      if (std::isfinite(fq) && fq <= f) {
        const double moved = ((q - p).array().abs() / (1.0 + p.array().abs())).maxCoeff();
        const double gain = f - fq;
        p = q;
        f = fq;
        lambda = std::max(lambda / 10, 1e-15);
        accepted = true;
        if (moved < 1e-13 || gain <= 1e-30 + 1e-15 * f) return {p, f, true};
        break;
      }
      lambda *= 10;
    }
    // No descent direction left at any damping: a (possibly boundary) minimum.
    if (!accepted) return {p, f, true};
  }
  return {p, f, false};
}

}  // namespace detail

/// Least-squares fit of the four-parameter logistic with a grid of starts
/// (C in {0.1, 0.3, 1} by D at the quartiles of the delta range). Standard
/// errors come from sigma^2 (J^T J)^-1 at the optimum, sigma^2 = RSS / (m - 4).
inline PsychometricFit fit_logistic(std::span<const PsychometricPoint> pts, const LogisticFitOptions& opt = {}) {
  std::set<double> distinct;
  for (const auto& p : pts) {
    if (!std::isfinite(p.delta) || !std::isfinite(p.rate)) throw FitError("fit_logistic: non-finite point", NAN);
    distinct.insert(p.delta);
  }
  if (distinct.size() < 5)
    throw FitError("fit_logistic: need at least 5 distinct delta levels, got " + std::to_string(distinct.size()), NAN);
  const double x_lo = *distinct.begin(), x_hi = *distinct.rbegin();
  double r_lo = 1, r_hi = 0;
  for (const auto& p : pts) {
    r_lo = std::min(r_lo, p.rate);
    r_hi = std::max(r_hi, p.rate);
  }
  const double a0 = std::clamp(r_lo, 0.0, opt.ab_max);
  const double b0 = std::clamp(a0 + 1 - r_hi, 0.0, opt.ab_max);

  detail::LmResult best{detail::Vec4::Zero(), std::numeric_limits<double>::infinity(), false};
  int converged = 0;
  for (double c0 : {0.1, 0.3, 1.0})
    for (double q : {0.25, 0.5, 0.75}) {
      auto r = detail::levenberg_marquardt(detail::Vec4(a0, b0, c0, x_lo + q * (x_hi - x_lo)), pts, opt);
      if (!r.converged || !std::isfinite(r.rss)) continue;
      ++converged;
      if (r.rss < best.rss) best = r;
    }
  if (converged == 0) throw FitError("fit_logistic: no start converged", best.rss);

  PsychometricFit fit;
  fit.a = best.p[0];
  fit.b = best.p[1];
  fit.c = best.p[2];
  fit.d = best.p[3];
  fit.residual = best.rss;
  fit.starts_converged = converged;
  const auto j = detail::jacobian(best.p, pts);
  const Eigen::Matrix4d jtj = j.transpose() * j;
  const double dof = double(pts.size()) - 4;
  const double sigma2 = dof > 0 ? best.rss / dof : NAN;
  Eigen::FullPivLU<Eigen::Matrix4d> lu(jtj);
  if (lu.isInvertible()) {
    fit.covariance = sigma2 * lu.inverse();
    for (int k = 0; k < 4; ++k) fit.se[k] = std::sqrt(std::max(fit.covariance(k, k), 0.0));
  } else {
    fit.covariance.setConstant(NAN);
    fit.se.fill(NAN);
  }
  return fit;
}

}  // namespace vistab
