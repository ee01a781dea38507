#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "ensgcv/error.hpp"
#include "ensgcv/spectra.hpp"

namespace ensgcv {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Solution v(-lambda; theta) of 1/v = lambda + theta * int r/(1+vr) dH.
///
/// `v` may be +inf (lambda = 0, theta < 1). Formulas downstream should read
/// `ell` (= lambda*v, continuously extended) and `scaled_second_moment`
/// (= v^2 int r^2 (1+vr)^-2 dH) instead of `v`, because both stay finite in
/// every regime.
struct FixedPointSolution {
  double lambda = 0.0;
  double theta = 0.0;
  double v = 0.0;
  double ell = 0.0;
  double scaled_second_moment = 0.0;

  bool v_infinite() const noexcept { return std::isinf(v); }
};

namespace detail {

// g(x) = 1 - lambda x - theta int xr/(1+xr) dH; strictly decreasing, g(v) = 0.
inline double fixed_point_residual(double x, double lambda, double theta, const SpectralMeasure& H) {
  return 1.0 - lambda * x - theta * H.integrate([x](double r) { return x * r / (1.0 + x * r); });
}

inline double fixed_point_slope(double x, double lambda, double theta, const SpectralMeasure& H) {
  return -lambda - theta * H.integrate([x](double r) {
           const double d = 1.0 + x * r;
           return r / (d * d);
         });
}

inline double scaled_second_moment(double v, const SpectralMeasure& H) {
  if (v == 0.0) return 0.0;
  if (std::isinf(v)) return 1.0;
  return H.integrate([v](double r) {
    const double t = v * r / (1.0 + v * r);
    return t * t;
  });
}

}  // namespace detail

inline constexpr double kFixedPointTolerance = 1e-12;
inline constexpr int kMaxBisectionSteps = 200;

inline FixedPointSolution solve_v(double lambda, double theta, const SpectralMeasure& H) {
  require(!std::isnan(lambda) && lambda >= 0.0, ErrorKind::invalid_parameter, "lambda must be >= 0");
  require(!std::isnan(theta) && theta > 0.0, ErrorKind::invalid_parameter, "theta must be > 0");

  FixedPointSolution sol;
  sol.lambda = lambda;
  sol.theta = theta;

  if (std::isinf(lambda)) {
    sol.v = 0.0;
    sol.ell = 1.0;
    return sol;
  }
  if (std::isinf(theta)) {
    sol.v = 0.0;
    sol.ell = 0.0;
    return sol;
  }
  if (lambda == 0.0) {
    if (theta == 1.0)
      throw Error(ErrorKind::excluded_boundary, "lambda = 0 with theta = 1 (interpolation threshold)");
    if (theta < 1.0) {
      sol.v = kInf;
      sol.ell = 1.0 - theta;
      sol.scaled_second_moment = 1.0;
      return sol;
    }
  }

  // Analytic bracket: int xr/(1+xr) <= x int r gives g(lo) >= 0; for lambda > 0
  // g(1/lambda) < 0; for lambda = 0, theta > 1 the smallest atom bounds from above.
  double lo = 1.0 / (lambda + theta * H.mean());
  double hi = lambda > 0.0 ? 1.0 / lambda : kInf;
  if (theta > 1.0) hi = std::min(hi, 1.0 / (H.min_eigenvalue() * (theta - 1.0)));

  auto g = [&](double x) { return detail::fixed_point_residual(x, lambda, theta, H); };
  if (g(lo) <= 0.0) hi = lo;  // rounding put the root at the lower bound

  double x = lo;
  int steps = 0;
  while (hi > lo && steps < kMaxBisectionSteps) {
    x = (hi / lo > 4.0) ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
    const double gx = g(x);
    if (std::abs(gx) <= 1e-15) break;
    if (gx > 0.0)
      lo = x;
    else
      hi = x;
    if ((hi - lo) <= 1e-6 * hi) break;
    ++steps;
  }
  if (steps >= kMaxBisectionSteps)
    throw ConvergenceError("fixed point bisection did not converge", lo, hi);

  // Newton polish, kept inside the bracket.
  for (int it = 0; it < 60; ++it) {
    const double gx = g(x);
    if (std::abs(gx) <= 1e-15) break;
    if (gx > 0.0)
      lo = x;
    else
      hi = x;
    double next = x - gx / detail::fixed_point_slope(x, lambda, theta, H);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-17 * x) {
      x = next;
      break;
    }
    x = next;
  }
  const double residual = std::abs(g(x));
  if (!(residual <= kFixedPointTolerance))
    throw ConvergenceError("fixed point residual " + std::to_string(residual) + " above tolerance", lo, hi);

  sol.v = x;
  sol.ell = lambda * x;
  sol.scaled_second_moment = detail::scaled_second_moment(x, H);
  return sol;
}

/// tilde-v(-lambda; vartheta, theta), evaluated in the v^2-rescaled form
/// vartheta*A/(1 - vartheta*A) with A = scaled_second_moment.
inline double tilde_v(const FixedPointSolution& sol, double vartheta) {
  require(vartheta > 0.0, ErrorKind::invalid_parameter, "vartheta must be > 0");
  require(std::isinf(sol.theta) || vartheta <= sol.theta * (1.0 + 1e-12), ErrorKind::invalid_parameter,
          "vartheta must not exceed theta");
  const double a = vartheta * sol.scaled_second_moment;
  const double denom = 1.0 - a;
  if (!(denom > 0.0))
    throw Error(ErrorKind::divergent_variance, "variance factor diverges (vartheta at or above threshold)");
  return a / denom;
}

inline double tilde_v(double lambda, double vartheta, double theta, const SpectralMeasure& H) {
  return tilde_v(solve_v(lambda, theta, H), vartheta);
}

inline double tilde_c(const FixedPointSolution& sol, const SpectralMeasure& G) {
  if (sol.v_infinite()) return 0.0;
  if (sol.v == 0.0) return G.mean();
  const double v = sol.v;
  return G.integrate([v](double r) {
    const double d = 1.0 + v * r;
    return r / (d * d);
  });
}

inline double tilde_c(double lambda, double theta, const SpectralMeasure& G, const SpectralMeasure& H) {
  return tilde_c(solve_v(lambda, theta, H), G);
}

/// int r/(1+vr) dH at the solved v (0 when v is infinite).
inline double resolvent_mean(const FixedPointSolution& sol, const SpectralMeasure& H) {
  if (sol.v_infinite()) return 0.0;
  const double v = sol.v;
  return H.integrate([v](double r) { return r / (1.0 + v * r); });
}

}  // namespace ensgcv
