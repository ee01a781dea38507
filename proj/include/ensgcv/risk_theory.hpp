#pragma once

// Deterministic limits of ensemble risk and of the GCV numerator and
// denominator, plus the optimizers and the (lambda, phi_s) equivalence
// contours built on them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ensgcv/csv.hpp"
#include "ensgcv/error.hpp"
#include "ensgcv/fixed_point.hpp"
#include "ensgcv/spectra.hpp"

namespace ensgcv {

/// Ensemble size M in {1, 2, ...} or the full ensemble M = infinity.
class EnsembleSize {
 public:
  constexpr EnsembleSize(std::size_t m) : m_(m) {}  // NOLINT(google-explicit-constructor)

  static constexpr EnsembleSize full() { return EnsembleSize(0, FullTag{}); }

  constexpr bool is_full() const noexcept { return full_; }
  constexpr std::size_t count() const noexcept { return m_; }
  constexpr double inverse() const noexcept { return full_ ? 0.0 : 1.0 / static_cast<double>(m_); }

  std::string to_string() const { return full_ ? std::string("inf") : std::to_string(m_); }

  void validate() const {
    require(full_ || m_ >= 1, ErrorKind::invalid_parameter, "ensemble size must be >= 1");
  }

 private:
  struct FullTag {};
  constexpr EnsembleSize(std::size_t m, FullTag) : m_(m), full_(true) {}

  std::size_t m_ = 1;
  bool full_ = false;
};

struct AspectPair {
  double phi = 1.0;
  double phi_s = 1.0;

  void validate() const {
    require(phi > 0.0 && std::isfinite(phi), ErrorKind::invalid_parameter, "phi must be positive and finite");
    require(!std::isnan(phi_s) && phi_s >= phi * (1.0 - 1e-12), ErrorKind::invalid_parameter,
            "phi_s must be >= phi");
  }

  /// phi/phi_s in [0, 1]; the limiting fraction k/n.
  double ratio() const { return std::isinf(phi_s) ? 0.0 : std::min(1.0, phi / phi_s); }
};

struct RiskDecomposition {
  double sigma2 = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  double total = 0.0;
  EnsembleSize ensemble_size = 1;
};

namespace detail {

// Bias and variance pieces at vartheta = phi_s (single member) and
// vartheta = phi (member cross terms), sharing one fixed-point solve.
struct RiskPieces {
  FixedPointSolution sol;
  double bias_single = 0.0;
  double var_single = 0.0;
  double bias_cross = 0.0;
  double var_cross = 0.0;

  double risk_single(double sigma2) const { return sigma2 + bias_single + var_single; }
  double risk_full(double sigma2) const { return sigma2 + bias_cross + var_cross; }
};

inline RiskPieces risk_pieces(double lambda, const AspectPair& a, const ModelSpec& model) {
  a.validate();
  RiskPieces rp;
  rp.sol = solve_v(lambda, a.phi_s, model.H);
  const double tc = tilde_c(rp.sol, model.G);
  const double tv_single = std::isinf(a.phi_s) ? 0.0 : tilde_v(rp.sol, a.phi_s);
  const double tv_cross = std::isinf(a.phi_s) ? 0.0 : tilde_v(rp.sol, a.phi);
  rp.bias_single = model.rho2 * (1.0 + tv_single) * tc;
  rp.var_single = model.sigma2 * tv_single;
  rp.bias_cross = model.rho2 * (1.0 + tv_cross) * tc;
  rp.var_cross = model.sigma2 * tv_cross;
  return rp;
}

// c_{M,j} = (1 - (1-x)^j) / (1 - (1-x)^M), with its x -> 0 limit j/M.
inline double shared_fraction(double x, double j, EnsembleSize m) {
  if (m.is_full()) return x >= 1.0 ? 1.0 : -std::expm1(j * std::log1p(-x));
  const double mm = static_cast<double>(m.count());
  if (x <= 0.0) return j / mm;
  if (x >= 1.0) return 1.0;
  return std::expm1(j * std::log1p(-x)) / std::expm1(mm * std::log1p(-x));
}

}  // namespace detail

/// Limiting squared prediction risk of the M-ensemble of ridge fits.
inline RiskDecomposition asymptotic_risk(double lambda, EnsembleSize m, const AspectPair& aspects,
                                         const ModelSpec& model) {
  m.validate();
  const auto rp = detail::risk_pieces(lambda, aspects, model);
  const double w = m.inverse();
  RiskDecomposition out;
  out.sigma2 = model.sigma2;
  out.bias = w * rp.bias_single + (1.0 - w) * rp.bias_cross;
  out.variance = w * rp.var_single + (1.0 - w) * rp.var_cross;
  out.total = out.sigma2 + out.bias + out.variance;
  out.ensemble_size = m;
  return out;
}

/// Limit of the full-ensemble GCV denominator, ((phi_s-phi)/phi_s + (phi/phi_s) ell)^2.
inline double gcv_denominator_limit(double lambda, const AspectPair& aspects, const SpectralMeasure& H) {
  aspects.validate();
  const auto sol = solve_v(lambda, aspects.phi_s, H);
  const double x = aspects.ratio();
  const double d = 1.0 - x + x * sol.ell;
  return d * d;
}

/// Limit of the M-ensemble denominator (1 - kappa_M (1 - ell))^2 where
/// kappa_M = lim k/|I_{1:M}| = (phi/phi_s) / (1 - (1 - phi/phi_s)^M).
inline double gcv_denominator_limit(double lambda, EnsembleSize m, const AspectPair& aspects,
                                    const SpectralMeasure& H) {
  m.validate();
  if (m.is_full()) return gcv_denominator_limit(lambda, aspects, H);
  aspects.validate();
  const auto sol = solve_v(lambda, aspects.phi_s, H);
  const double x = aspects.ratio();
  const double kappa = x <= 0.0 ? 1.0 / static_cast<double>(m.count()) : x / detail::shared_fraction(x, static_cast<double>(m.count()), EnsembleSize::full());
  const double d = 1.0 - kappa * (1.0 - sol.ell);
  return d * d;
}

/// Everything needed for the GCV-numerator limits at one (lambda, phi, phi_s).
struct TrainingErrorTerms {
  FixedPointSolution sol;
  double ratio = 0.0;       // phi/phi_s
  double risk_single = 0.0;  // R_1
  double risk_full = 0.0;    // R_inf
  double train_single = 0.0;  // T_1
  double train_pair = 0.0;    // T_2

  double risk(EnsembleSize m) const { return risk_full + m.inverse() * (risk_single - risk_full); }
};

inline TrainingErrorTerms training_error_terms(double lambda, const AspectPair& aspects, const ModelSpec& model) {
  const auto rp = detail::risk_pieces(lambda, aspects, model);
  TrainingErrorTerms t;
  t.sol = rp.sol;
  t.ratio = aspects.ratio();
  t.risk_single = rp.risk_single(model.sigma2);
  t.risk_full = rp.risk_full(model.sigma2);
  const double ell = rp.sol.ell;
  const double x = t.ratio;
  t.train_single = ell * ell * t.risk_single;
  // The 1/(lambda v) factor multiplies D = ell^2, so it enters as ell.
  t.train_pair = (0.5 * (1.0 - x) + 0.5 * ell * ell) / (2.0 - x) * t.risk_single +
                 ((1.0 - x) * ell + 0.5 * x * ell * ell) / (2.0 - x) * t.risk_full;
  return t;
}

/// Limit of the in-sample training error of the M-ensemble:
/// 2 E_2 - E_1 + (2/M)(E_1 - E_2), E_j = c_{M,j} T_j + (1 - c_{M,j}) R_j.
inline double training_error_limit(const TrainingErrorTerms& t, EnsembleSize m) {
  m.validate();
  const double c1 = detail::shared_fraction(t.ratio, 1.0, m);
  const double c2 = detail::shared_fraction(t.ratio, 2.0, m);
  const double risk_pair = t.risk(2);
  const double e1 = c1 * t.train_single + (1.0 - c1) * t.risk_single;
  const double e2 = c2 * t.train_pair + (1.0 - c2) * risk_pair;
  return 2.0 * e2 - e1 + 2.0 * m.inverse() * (e1 - e2);
}

inline double training_error_limit(double lambda, EnsembleSize m, const AspectPair& aspects,
                                   const ModelSpec& model) {
  return training_error_limit(training_error_terms(lambda, aspects, model), m);
}

/// Full-ensemble GCV limit T_inf / D. Where D vanishes (lambda = 0 at
/// phi = phi_s > 1) the value is the continuous extension R_inf.
inline double gcv_limit(double lambda, const AspectPair& aspects, const ModelSpec& model) {
  const auto t = training_error_terms(lambda, aspects, model);
  const double x = t.ratio;
  const double d_root = 1.0 - x + x * t.sol.ell;
  const double d = d_root * d_root;
  if (d <= 1e-14) return t.risk_full;
  return training_error_limit(t, EnsembleSize::full()) / d;
}

inline double gcv_limit_finite_M(double lambda, EnsembleSize m, const AspectPair& aspects, const ModelSpec& model) {
  m.validate();
  if (m.is_full()) return gcv_limit(lambda, aspects, model);
  const auto t = training_error_terms(lambda, aspects, model);
  const double x = t.ratio;
  // Every member sees the same rows: the ensemble is a single fit.
  if (m.count() == 1 || x >= 1.0) return t.risk_single;
  const double mm = static_cast<double>(m.count());
  const double kappa = x <= 0.0 ? 1.0 / mm : x / detail::shared_fraction(x, mm, EnsembleSize::full());
  const double d_root = 1.0 - kappa * (1.0 - t.sol.ell);
  return training_error_limit(t, m) / (d_root * d_root);
}

/// Asymptotic bias of GCV for the 2-ensemble of ridgeless fits,
/// lim gcv_{k,2} - R_2 = (phi_s R_1 / (phi_s - phi) - R_inf) / 2.
inline double inconsistency_gap(const AspectPair& aspects, const ModelSpec& model) {
  aspects.validate();
  require(std::isfinite(aspects.phi_s) && aspects.phi_s > 1.0 && aspects.phi_s > aspects.phi,
          ErrorKind::invalid_parameter, "inconsistency gap needs phi_s in (max(1, phi), inf)");
  require(model.rho2 > 0.0 && model.sigma2 > 0.0, ErrorKind::invalid_parameter,
          "inconsistency gap needs rho2 > 0 and sigma2 > 0");
  return gcv_limit_finite_M(0.0, 2, aspects, model) - asymptotic_risk(0.0, 2, aspects, model).total;
}

// ---------------------------------------------------------------------------
// Optimizers

struct OptimalPoint {
  double argument = 0.0;  // lambda* or phi_s*; +inf is the null-predictor sentinel
  double risk = 0.0;
};

namespace detail {

// Golden-section search for a minimum of f on [a, b].
inline OptimalPoint golden_section(const std::function<double(double)>& f, double a, double b, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (std::abs(b - a) > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  const double fx = f(x);
  OptimalPoint best{x, fx};
  if (fc < best.risk) best = {c, fc};
  if (fd < best.risk) best = {d, fd};
  return best;
}

inline double safe_eval(const std::function<double(double)>& f, double x) {
  try {
    const double y = f(x);
    return std::isnan(y) ? kInf : y;
  } catch (const Error&) {
    return kInf;
  }
}

// Minimizes f over {lower_extra} U [10^lo, 10^hi] using a log-spaced scan and a
// golden-section refinement in log10 space. The upper end expands while the
// minimum keeps sitting on it; when it never comes back inside, the infinite
// sentinel is returned with f(inf).
inline OptimalPoint minimize_log_scale(const std::function<double(double)>& f, double lo, double hi,
                                       const std::vector<double>& extra_points, double tol = 1e-8,
                                       int points = 121) {
  auto g = [&](double t) { return safe_eval(f, std::pow(10.0, t)); };
  for (int expansions = 0;; ++expansions) {
    std::vector<double> ts(points), vals(points);
    for (int i = 0; i < points; ++i) {
      ts[i] = lo + (hi - lo) * i / (points - 1);
      vals[i] = g(ts[i]);
    }
    const auto best = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    if (best == points - 1) {
      const double at_inf = safe_eval(f, kInf);
      if (at_inf <= vals[best]) return {kInf, at_inf};
      if (expansions < 6) {
        hi += 2.0;
        continue;
      }
    }
    const int left = std::max(best - 1, 0);
    const int right = std::min(best + 1, points - 1);
    OptimalPoint candidate = golden_section(g, ts[left], ts[right], tol);
    candidate.argument = std::pow(10.0, candidate.argument);
    for (double x : extra_points) {
      const double fx = safe_eval(f, x);
      if (fx < candidate.risk) candidate = {x, fx};
    }
    return candidate;
  }
}

}  // namespace detail

/// argmin over lambda >= 0 of the single ridge fit risk R(lambda, 1, (phi, phi)).
inline OptimalPoint optimal_lambda(double phi, const ModelSpec& model) {
  require(phi > 0.0 && std::isfinite(phi), ErrorKind::invalid_parameter, "phi must be positive");
  if (model.rho2 == 0.0) return {kInf, model.sigma2};
  if (model.sigma2 == 0.0 && phi < 1.0) return {0.0, 0.0};
  auto f = [&](double lambda) { return asymptotic_risk(lambda, 1, {phi, phi}, model).total; };
  std::vector<double> extra;
  if (phi != 1.0) extra.push_back(0.0);
  return detail::minimize_log_scale(f, -6.0, 6.0, extra);
}

/// argmin over phi_s of the full ridgeless ensemble risk R(0, inf, (phi, phi_s)).
inline OptimalPoint optimal_subsample(double phi, const ModelSpec& model) {
  require(phi > 0.0 && std::isfinite(phi), ErrorKind::invalid_parameter, "phi must be positive");
  if (model.rho2 == 0.0) return {kInf, model.sigma2};
  if (model.sigma2 == 0.0 && phi <= 1.0) return {phi, 0.0};
  auto f = [&](double phi_s) { return asymptotic_risk(0.0, EnsembleSize::full(), {phi, phi_s}, model).total; };
  const double lower = std::max(phi, 1.000001);
  std::vector<double> extra;
  if (phi > 1.0) extra.push_back(phi);
  return detail::minimize_log_scale(f, std::log10(lower), 6.0, extra);
}

struct JointOptimum {
  double lambda = 0.0;
  double phi_s = 0.0;
  double risk = 0.0;
};

/// Joint minimum of R(lambda, inf, (phi, phi_s)) over lambda >= 0, phi_s >= phi,
/// by nested one-dimensional searches.
inline JointOptimum optimal_joint(double phi, const ModelSpec& model) {
  require(phi > 0.0 && std::isfinite(phi), ErrorKind::invalid_parameter, "phi must be positive");
  JointOptimum best{0.0, kInf, model.null_risk()};
  auto inner = [&](double lambda) {
    auto f = [&](double phi_s) {
      return asymptotic_risk(lambda, EnsembleSize::full(), {phi, phi_s}, model).total;
    };
    std::vector<double> extra{phi};
    const auto opt = detail::minimize_log_scale(f, std::log10(phi), 6.0, extra, 1e-8, 41);
    if (opt.risk < best.risk) best = {lambda, opt.argument, opt.risk};
    return opt.risk;
  };
  std::function<double(double)> outer = inner;
  const auto opt = detail::minimize_log_scale(outer, -6.0, 6.0, {0.0}, 1e-8, 41);
  if (opt.risk < best.risk) best.risk = opt.risk;
  return best;
}

// ---------------------------------------------------------------------------
// Equivalence contours

struct ContourPoint {
  double lambda = 0.0;
  double phi_s = 0.0;
  double theta = 0.0;
};

/// lambda_bar = (phi_s_bar - phi) int r/(1 + v(0; phi_s_bar) r) dH, the
/// penalty whose full-data ridge matches the ridgeless ensemble at phi_s_bar.
inline double contour_lambda_for_phis(double phi_s_bar, double phi, const SpectralMeasure& H) {
  require(phi > 0.0, ErrorKind::invalid_parameter, "phi must be positive");
  require(phi_s_bar >= phi, ErrorKind::invalid_parameter, "phi_s_bar must be >= phi");
  if (std::isinf(phi_s_bar)) return kInf;
  if (phi_s_bar == phi) return 0.0;
  const auto sol = solve_v(0.0, phi_s_bar, H);
  return (phi_s_bar - phi) * resolvent_mean(sol, H);
}

/// Point (1-theta)(lambda_bar, phi) + theta (0, phi_s_bar) on the equivalence segment.
inline ContourPoint equivalence_path(double lambda_bar, double phi_s_bar, double phi, double theta) {
  require(theta >= 0.0 && theta <= 1.0, ErrorKind::invalid_parameter, "theta must lie in [0,1]");
  ContourPoint pt;
  pt.theta = theta;
  pt.lambda = std::isinf(lambda_bar) ? (theta < 1.0 ? kInf : 0.0) : (1.0 - theta) * lambda_bar;
  pt.phi_s = std::isinf(phi_s_bar) ? (theta > 0.0 ? kInf : phi) : phi + theta * (phi_s_bar - phi);
  return pt;
}

// ---------------------------------------------------------------------------
// Risk surface

/// Totals on a (lambda x phi_s) grid. Excluded or invalid cells hold NaN.
inline Eigen::MatrixXd risk_surface(const std::vector<double>& lambda_grid, const std::vector<double>& phi_s_grid,
                                    double phi, EnsembleSize m, const ModelSpec& model) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(lambda_grid.size()), static_cast<Eigen::Index>(phi_s_grid.size()));
  for (std::size_t i = 0; i < lambda_grid.size(); ++i)
    for (std::size_t j = 0; j < phi_s_grid.size(); ++j) {
      double value = std::numeric_limits<double>::quiet_NaN();
      try {
        value = asymptotic_risk(lambda_grid[i], m, {phi, phi_s_grid[j]}, model).total;
      } catch (const Error&) {
      }
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value;
    }
  return out;
}

/// Header row holds the phi_s values, first column the lambda values.
inline void write_surface_csv(std::ostream& out, const std::vector<double>& lambda_grid,
                              const std::vector<double>& phi_s_grid, const Eigen::MatrixXd& surface) {
  out << "lambda\\phi_s";
  for (double ps : phi_s_grid) out << ',' << csv::format_double(ps);
  out << '\n';
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    out << csv::format_double(lambda_grid[i]);
    for (std::size_t j = 0; j < phi_s_grid.size(); ++j)
      out << ',' << csv::format_double(surface(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out << '\n';
  }
}

}  // namespace ensgcv
