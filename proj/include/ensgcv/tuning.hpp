#pragma once

// GCV-driven choice of the subsample size k, the lambda-tuning baseline and
// the extrapolated penalty estimate.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ensgcv/ensemble.hpp"
#include "ensgcv/error.hpp"
#include "ensgcv/rng.hpp"

namespace ensgcv {

/// {0, k0, 2k0, ..., floor(n/k0) k0} with k0 = floor(n^nu), plus n.
inline std::vector<Eigen::Index> subsample_grid(Eigen::Index n, double nu = 0.5) {
  require(n >= 2, ErrorKind::invalid_parameter, "subsample grid needs n >= 2");
  require(nu > 0.0 && nu < 1.0, ErrorKind::invalid_parameter, "nu must lie in (0,1)");
  const auto k0 = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::floor(std::pow(static_cast<double>(n), nu) + 1e-9)));
  std::vector<Eigen::Index> grid;
  for (Eigen::Index k = 0; k <= n; k += k0) grid.push_back(k);
  if (grid.back() != n) grid.push_back(n);
  return grid;
}

struct TunePathEntry {
  Eigen::Index k = 0;
  double gcv = 0.0;
  bool degenerate = false;   // denominator vanished; gcv set to +inf
  bool at_threshold = false;  // k = p with lambda = 0
};

struct LambdaPathEntry {
  double lambda = 0.0;
  double gcv = 0.0;
};

struct LambdaTuneResult {
  double lambda = 0.0;
  double gcv = 0.0;
  std::vector<LambdaPathEntry> path;
  Eigen::VectorXd coefficients;
};

struct TuneResult {
  Eigen::Index k_hat = 0;
  double gcv_at_k_hat = 0.0;
  std::vector<TunePathEntry> path;
  Eigen::VectorXd coefficients;  // averaged ensemble at k_hat
  std::optional<double> lambda_hat;
  std::optional<LambdaTuneResult> baseline;
  std::vector<std::string> warnings;
};

/// Fits an M-ensemble at each k (members seeded from (seed, {k}), so a
/// given k gives the same value on any grid) and keeps the smallest
/// minimizer of GCV. `observer`, if set, sees every fitted ensemble.
inline TuneResult tune_k(const Dataset& data, double lambda, const std::vector<Eigen::Index>& grid, std::size_t m,
                         std::uint64_t seed,
                         const std::function<void(Eigen::Index, const EnsembleFit&)>& observer = {}) {
  data.validate();
  require(!grid.empty(), ErrorKind::invalid_parameter, "subsample grid is empty");
  require(m >= 1, ErrorKind::invalid_parameter, "ensemble size must be >= 1");
  TuneResult out;
  out.gcv_at_k_hat = std::numeric_limits<double>::infinity();
  bool have = false;
  for (auto k : grid) {
    const auto fit = ensemble_fit(data, k, m, lambda, derive_seed(seed, {static_cast<std::uint64_t>(k)}));
    if (observer) observer(k, fit);
    const auto rep = gcv(fit, data);
    TunePathEntry e;
    e.k = k;
    e.gcv = rep.gcv;
    e.degenerate = rep.degenerate;
    e.at_threshold = lambda == 0.0 && k == data.p();
    if (e.degenerate) out.warnings.push_back("degenerate GCV denominator at k=" + std::to_string(k));
    if (e.at_threshold) out.warnings.push_back("k=" + std::to_string(k) + " sits at the interpolation threshold");
    out.path.push_back(e);
    if (!have || e.gcv < out.gcv_at_k_hat || (e.gcv == out.gcv_at_k_hat && k < out.k_hat)) {
      have = true;
      out.k_hat = k;
      out.gcv_at_k_hat = e.gcv;
      out.coefficients = fit.averaged_coefficients;
    }
  }
  return out;
}

/// lambda (n - k0) / (k_lambda - k0): the penalty at which the line through
/// (0, k0) and (lambda, k_lambda) reaches k = n.
inline double lambda_hat(Eigen::Index k_hat_0, Eigen::Index k_hat_lambda, double lambda, Eigen::Index n) {
  require(lambda > 0.0 && std::isfinite(lambda), ErrorKind::invalid_parameter, "lambda must be positive");
  if (k_hat_lambda <= k_hat_0)
    throw Error(ErrorKind::extrapolation_undefined, "extrapolation needs k_hat_lambda > k_hat_0");
  return lambda * static_cast<double>(n - k_hat_0) / static_cast<double>(k_hat_lambda - k_hat_0);
}

/// Full-data ridge (k = n, M = 1) along a lambda grid from one SVD; smallest
/// lambda wins ties. `seed` is unused because the fit has no randomness.
inline LambdaTuneResult tune_lambda(const Dataset& data, const std::vector<double>& lambda_grid,
                                    std::uint64_t /*seed*/ = 0) {
  data.validate();
  require(!lambda_grid.empty(), ErrorKind::invalid_parameter, "lambda grid is empty");
  const SpectralRidge path(data.X, data.y);
  const double n = static_cast<double>(data.n());
  LambdaTuneResult out;
  out.gcv = std::numeric_limits<double>::infinity();
  bool have = false;
  for (double lambda : lambda_grid) {
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::invalid_parameter, "lambda must be finite and >= 0");
    Eigen::VectorXd coef = path.coefficients(lambda);
    const double train = (data.y - data.X * coef).squaredNorm() / n;
    const double root = 1.0 - path.trace(lambda) / n;
    const double denom = root * root;
    const double value = denom < kDegenerateDenominator ? std::numeric_limits<double>::infinity() : train / denom;
    out.path.push_back({lambda, value});
    if (!have || value < out.gcv || (value == out.gcv && lambda < out.lambda)) {
      have = true;
      out.lambda = lambda;
      out.gcv = value;
      out.coefficients = std::move(coef);
    }
  }
  return out;
}

}  // namespace ensgcv
