#pragma once

// Subsample ridge ensembles on concrete data: member fits, averaged
// predictor, training / out-of-bag errors and the ensemble GCV estimate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ensgcv/error.hpp"
#include "ensgcv/rng.hpp"

namespace ensgcv {

struct Dataset {
  Eigen::MatrixXd X;  // n x p, rows are observations
  Eigen::VectorXd y;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }

  void validate() const {
    require(X.rows() >= 1 && X.cols() >= 1, ErrorKind::invalid_data, "dataset needs n >= 1 and p >= 1");
    require(y.size() == X.rows(), ErrorKind::invalid_data, "X and y row counts differ");
    require(X.allFinite() && y.allFinite(), ErrorKind::invalid_data, "dataset has non-finite entries");
  }
};

/// Strictly increasing row indices of one subsample.
struct SubsampleIndex {
  std::vector<Eigen::Index> indices;

  std::size_t size() const noexcept { return indices.size(); }
  bool empty() const noexcept { return indices.empty(); }
};

inline bool operator==(const SubsampleIndex& a, const SubsampleIndex& b) { return a.indices == b.indices; }

/// M independent uniform size-k subsets of {0..n-1}. Member l draws from its
/// own stream derive_seed(seed, {l}), so results do not depend on order.
inline std::vector<SubsampleIndex> sample_subsets(Eigen::Index n, Eigen::Index k, std::size_t m, std::uint64_t seed) {
  require(k >= 1 && k <= n, ErrorKind::invalid_parameter, "subsample size must satisfy 1 <= k <= n");
  require(m >= 1, ErrorKind::invalid_parameter, "ensemble size must be >= 1");
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  std::vector<SubsampleIndex> out(m);
  for (std::size_t l = 0; l < m; ++l) {
    auto rng = make_rng(seed, {l});
    out[l].indices.reserve(static_cast<std::size_t>(k));
    // Selection sampling keeps the input order, so indices come out sorted.
    std::sample(all.begin(), all.end(), std::back_inserter(out[l].indices), k, rng);
  }
  return out;
}

inline SubsampleIndex union_of(const std::vector<SubsampleIndex>& sets, Eigen::Index n) {
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (const auto& s : sets)
    for (auto i : s.indices) seen[static_cast<std::size_t>(i)] = 1;
  SubsampleIndex u;
  for (Eigen::Index i = 0; i < n; ++i)
    if (seen[static_cast<std::size_t>(i)]) u.indices.push_back(i);
  return u;
}

// ---------------------------------------------------------------------------
// Member solvers

struct MemberSolution {
  Eigen::VectorXd coef;
  double trace = 0.0;  // tr(M Sigma_hat) = tr((Sigma_hat + lambda I)^+ Sigma_hat)
};

/// Ridge / ridgeless through a thin SVD of X/sqrt(k). Reusable across lambdas.
class SpectralRidge {
 public:
  SpectralRidge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const double k = static_cast<double>(X.rows());
    Eigen::BDCSVD<Eigen::MatrixXd> svd(X / std::sqrt(k), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double cutoff = static_cast<double>(std::max(X.rows(), X.cols())) *
                          std::numeric_limits<double>::epsilon() * (s.size() > 0 ? s(0) : 0.0);
    rank_ = 0;
    while (rank_ < s.size() && s(rank_) > cutoff) ++rank_;
    s_ = s.head(rank_);
    u_ = svd.matrixU().leftCols(rank_);
    v_ = svd.matrixV().leftCols(rank_);
    uty_ = u_.transpose() * y / std::sqrt(k);
  }

  Eigen::Index rank() const { return rank_; }
  const Eigen::VectorXd& singular_values() const { return s_; }

  Eigen::VectorXd coefficients(double lambda) const {
    const Eigen::VectorXd w = (s_.array() / (s_.array().square() + lambda)).matrix();
    return v_ * w.cwiseProduct(uty_);
  }

  double trace(double lambda) const {
    if (lambda == 0.0) return static_cast<double>(rank_);
    return (s_.array().square() / (s_.array().square() + lambda)).sum();
  }

  MemberSolution solve(double lambda) const { return {coefficients(lambda), trace(lambda)}; }

 private:
  Eigen::Index rank_ = 0;
  Eigen::VectorXd s_;
  Eigen::MatrixXd u_, v_;
  Eigen::VectorXd uty_;
};

namespace detail {

inline constexpr double kMinCholeskyRcond = 1e-12;

// tr(A^{-1}) = |L^{-1}|_F^2 for A = L L'.
inline double inverse_trace(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto d = llt.matrixL().rows();
  Eigen::MatrixXd inv_l = Eigen::MatrixXd::Identity(d, d);
  llt.matrixL().solveInPlace(inv_l);
  return inv_l.squaredNorm();
}

}  // namespace detail

/// Solves (X'X/k + lambda I) b = X'y/k, using the pseudo-inverse when
/// lambda = 0. Cholesky on the smaller Gram matrix; thin SVD when the
/// Gram matrix is singular or badly conditioned.
inline MemberSolution solve_member(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& ys, double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::invalid_parameter, "lambda must be finite and >= 0");
  require(Xs.allFinite() && ys.allFinite(), ErrorKind::invalid_data, "non-finite input to ridge fit");
  require(Xs.rows() == ys.size() && Xs.rows() >= 1, ErrorKind::invalid_data, "ridge fit shape mismatch");
  const Eigen::Index k = Xs.rows();
  const Eigen::Index p = Xs.cols();
  const double kd = static_cast<double>(k);

  if (k >= p) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(Xs.transpose(), 1.0 / kd);
    gram.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() == Eigen::Success && (lambda > 0.0 || llt.rcond() >= detail::kMinCholeskyRcond)) {
      MemberSolution out;
      out.coef = llt.solve(Xs.transpose() * ys / kd);
      out.trace = lambda > 0.0 ? static_cast<double>(p) - lambda * detail::inverse_trace(llt) : static_cast<double>(p);
      return out;
    }
  } else {
    Eigen::MatrixXd kernel = Eigen::MatrixXd::Zero(k, k);
    kernel.selfadjointView<Eigen::Lower>().rankUpdate(Xs, 1.0 / kd);
    kernel.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(kernel);
    if (llt.info() == Eigen::Success && (lambda > 0.0 || llt.rcond() >= detail::kMinCholeskyRcond)) {
      MemberSolution out;
      out.coef = Xs.transpose() * llt.solve(ys) / kd;
      out.trace = lambda > 0.0 ? kd - lambda * detail::inverse_trace(llt) : kd;
      return out;
    }
  }
  return SpectralRidge(Xs, ys).solve(lambda);
}

inline Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& ys, double lambda) {
  return solve_member(Xs, ys, lambda).coef;
}

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleMember {
  SubsampleIndex index;
  Eigen::VectorXd coef;
  double trace_contribution = 0.0;
};

struct EnsembleFit {
  double lambda = 0.0;
  Eigen::Index k = 0;
  Eigen::Index n = 0;
  std::vector<EnsembleMember> members;
  Eigen::VectorXd averaged_coefficients;
  SubsampleIndex union_indices;

  bool null_fit() const noexcept { return members.empty(); }
  std::size_t ensemble_size() const noexcept { return members.size(); }

  /// (1/M) sum_l tr(M_l Sigma_hat_l) = tr of the smoothing matrix on I_{1:M}.
  double smoother_trace() const {
    if (members.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& m : members) acc += m.trace_contribution;
    return acc / static_cast<double>(members.size());
  }
};

namespace detail {

inline void finalize(EnsembleFit& fit, Eigen::Index p) {
  fit.averaged_coefficients = Eigen::VectorXd::Zero(p);
  for (const auto& m : fit.members) fit.averaged_coefficients += m.coef;
  if (!fit.members.empty()) fit.averaged_coefficients /= static_cast<double>(fit.members.size());
  std::vector<SubsampleIndex> sets;
  sets.reserve(fit.members.size());
  for (const auto& m : fit.members) sets.push_back(m.index);
  fit.union_indices = union_of(sets, fit.n);
}

}  // namespace detail

/// Fits M ridge members on subsets drawn from sample_subsets(n, k, M, seed).
/// k = 0 gives the null predictor (zero coefficients, empty union).
inline EnsembleFit ensemble_fit(const Dataset& data, Eigen::Index k, std::size_t m, double lambda,
                                std::uint64_t seed) {
  data.validate();
  require(k >= 0 && k <= data.n(), ErrorKind::invalid_parameter, "subsample size must lie in [0, n]");
  EnsembleFit fit;
  fit.lambda = lambda;
  fit.k = k;
  fit.n = data.n();
  if (k > 0) {
    const auto subsets = sample_subsets(data.n(), k, m, seed);
    fit.members.reserve(m);
    for (const auto& idx : subsets) {
      const Eigen::MatrixXd Xs = data.X(idx.indices, Eigen::all);
      const Eigen::VectorXd ys = data.y(idx.indices);
      auto sol = solve_member(Xs, ys, lambda);
      fit.members.push_back({idx, std::move(sol.coef), sol.trace});
    }
  }
  detail::finalize(fit, data.p());
  return fit;
}

/// The ensemble made of the first m members of `fit`.
inline EnsembleFit truncate_ensemble(const EnsembleFit& fit, std::size_t m) {
  require(m >= 1, ErrorKind::invalid_parameter, "ensemble size must be >= 1");
  EnsembleFit out;
  out.lambda = fit.lambda;
  out.k = fit.k;
  out.n = fit.n;
  out.members.assign(fit.members.begin(), fit.members.begin() + static_cast<std::ptrdiff_t>(std::min(m, fit.members.size())));
  detail::finalize(out, fit.averaged_coefficients.size());
  return out;
}

inline Eigen::VectorXd predict(const EnsembleFit& fit, const Eigen::MatrixXd& X_new) {
  require(X_new.cols() == fit.averaged_coefficients.size(), ErrorKind::invalid_data, "predict: column mismatch");
  return X_new * fit.averaged_coefficients;
}

namespace detail {

inline double mean_square_over(const Eigen::VectorXd& r, const std::vector<Eigen::Index>& idx) {
  double acc = 0.0;
  for (auto i : idx) acc += r[i] * r[i];
  return acc / static_cast<double>(idx.size());
}

inline std::vector<Eigen::Index> complement(const SubsampleIndex& s, Eigen::Index n) {
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(n) - s.size());
  std::size_t j = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (j < s.indices.size() && s.indices[j] == i)
      ++j;
    else
      out.push_back(i);
  }
  return out;
}

}  // namespace detail

/// Mean squared residual of the averaged predictor over I_{1:M}
/// (over all rows for the null fit).
inline double training_error(const EnsembleFit& fit, const Dataset& data) {
  const Eigen::VectorXd r = data.y - data.X * fit.averaged_coefficients;
  if (fit.union_indices.empty()) return r.squaredNorm() / static_cast<double>(r.size());
  return detail::mean_square_over(r, fit.union_indices.indices);
}

/// Mean squared residual over the rows no member saw; empty when the union covers every row.
inline std::optional<double> oob_error(const EnsembleFit& fit, const Dataset& data) {
  const auto out_rows = detail::complement(fit.union_indices, data.n());
  if (out_rows.empty()) return std::nullopt;
  const Eigen::VectorXd r = data.y - data.X * fit.averaged_coefficients;
  return detail::mean_square_over(r, out_rows);
}

struct GcvReport {
  double train_error = 0.0;
  double denominator = 1.0;
  double gcv = 0.0;
  std::optional<double> oob_error;
  double smoother_trace = 0.0;
  std::size_t union_size = 0;
  bool degenerate = false;  // denominator below 1e-12; gcv reported as +inf
};

inline constexpr double kDegenerateDenominator = 1e-12;

inline GcvReport gcv(const EnsembleFit& fit, const Dataset& data) {
  GcvReport rep;
  const Eigen::VectorXd r = data.y - data.X * fit.averaged_coefficients;
  const auto n = data.n();
  rep.union_size = fit.union_indices.size();
  if (fit.null_fit()) {
    rep.train_error = r.squaredNorm() / static_cast<double>(n);
    rep.denominator = 1.0;
    rep.gcv = rep.train_error;
    rep.oob_error = rep.train_error;
    return rep;
  }
  rep.train_error = detail::mean_square_over(r, fit.union_indices.indices);
  const auto out_rows = detail::complement(fit.union_indices, n);
  if (!out_rows.empty()) rep.oob_error = detail::mean_square_over(r, out_rows);
  rep.smoother_trace = fit.smoother_trace();
  const double root = 1.0 - rep.smoother_trace / static_cast<double>(rep.union_size);
  rep.denominator = root * root;
  if (rep.denominator < kDegenerateDenominator) {
    rep.degenerate = true;
    rep.gcv = std::numeric_limits<double>::infinity();
  } else {
    rep.gcv = rep.train_error / rep.denominator;
  }
  return rep;
}

/// Mean squared prediction error of the averaged predictor on held-out pairs.
inline double conditional_risk(const EnsembleFit& fit, const Dataset& test) {
  const Eigen::VectorXd r = test.y - predict(fit, test.X);
  return r.squaredNorm() / static_cast<double>(r.size());
}

// ---------------------------------------------------------------------------
// Finite-M GCV correction (experimental)

struct CorrectionWeights {
  double a1 = 1.0;
  double a2 = 0.0;
  bool available = false;
};

/// Weights (a1, a2) making (a1 T_M + a2 Rbar_M) / D_M consistent for R_M,
/// found by matching the R_1 and R_2 coefficients of both sides.
///
/// x = k/n, ell = 1 - tr/k, c1 = k/|I_{1:M}|, c2 = |I_m u I_l|/|I_{1:M}|,
/// d_single = ell^2, d_m = D_{k,M}.
inline CorrectionWeights correction_weights(double x, double ell, double c1, double c2, double d_m, std::size_t m) {
  CorrectionWeights w;
  if (m < 2) return w;
  const double mm = static_cast<double>(m);
  const double alpha = 1.0 - 2.0 / mm;
  const double beta = 2.0 * (1.0 - 1.0 / mm);
  const double d_single = ell * ell;
  const double b1 = (0.5 * (1.0 - x) + 0.5 * ell * ell - (1.0 - x) * ell - 0.5 * x * ell * ell) / (2.0 - x);
  const double b2 = (2.0 * (1.0 - x) * ell + x * ell * ell) / (2.0 - x);

  const double a00 = -alpha * (c1 * d_single + 1.0 - c1) + beta * c2 * b1;
  const double a01 = -alpha;
  const double a10 = beta * (c2 * b2 + 1.0 - c2);
  const double a11 = beta;
  const double r0 = -alpha * d_m;
  const double r1 = beta * d_m;
  const double det = a00 * a11 - a01 * a10;
  if (!(std::abs(det) > 1e-12)) return w;
  w.a1 = (r0 * a11 - a01 * r1) / det;
  w.a2 = (a00 * r1 - a10 * r0) / det;
  w.available = true;
  return w;
}

struct CorrectedGcv {
  double value = 0.0;
  CorrectionWeights weights;
  GcvReport plain;
};

/// Plug-in corrected GCV. Falls back to the plain estimate (weights flagged
/// unavailable) for M < 2, an empty out-of-bag set or a singular system.
inline CorrectedGcv corrected_gcv(const EnsembleFit& fit, const Dataset& data) {
  CorrectedGcv out;
  out.plain = gcv(fit, data);
  out.value = out.plain.gcv;
  const std::size_t m = fit.ensemble_size();
  if (m < 2 || !out.plain.oob_error || out.plain.degenerate) return out;

  const double kd = static_cast<double>(fit.k);
  const double u = static_cast<double>(fit.union_indices.size());
  const double x = kd / static_cast<double>(data.n());
  const double ell = 1.0 - fit.smoother_trace() / kd;
  const double c1 = kd / u;
  double pair_union = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) {
      const auto& ia = fit.members[a].index.indices;
      const auto& ib = fit.members[b].index.indices;
      std::size_t common = 0;
      for (std::size_t i = 0, j = 0; i < ia.size() && j < ib.size();) {
        if (ia[i] == ib[j]) {
          ++common;
          ++i;
          ++j;
        } else if (ia[i] < ib[j]) {
          ++i;
        } else {
          ++j;
        }
      }
      pair_union += static_cast<double>(ia.size() + ib.size() - common);
      ++pairs;
    }
  const double c2 = pair_union / static_cast<double>(pairs) / u;
  out.weights = correction_weights(x, ell, c1, c2, out.plain.denominator, m);
  if (!out.weights.available) return out;
  out.value = (out.weights.a1 * out.plain.train_error + out.weights.a2 * *out.plain.oob_error) / out.plain.denominator;
  return out;
}

}  // namespace ensgcv
