#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ensgcv/csv.hpp"
#include "ensgcv/error.hpp"

namespace ensgcv {

/// Finite weighted atom set standing in for a limiting spectral law.
///
/// Used both for the eigenvalue law H of the feature covariance and for the
/// signal law G (eigenvalues weighted by the normalized squared projections
/// of the coefficient vector). Every integral against the law is an exact
/// weighted sum over the atoms.
class SpectralMeasure {
 public:
  SpectralMeasure() = default;

  SpectralMeasure(std::vector<double> eigenvalues, std::vector<double> weights)
      : r_(std::move(eigenvalues)), w_(std::move(weights)) {
    validate();
  }

  static SpectralMeasure point_mass(double r) { return SpectralMeasure({r}, {1.0}); }

  std::size_t size() const noexcept { return r_.size(); }
  double eigenvalue(std::size_t i) const { return r_[i]; }
  double weight(std::size_t i) const { return w_[i]; }
  const std::vector<double>& eigenvalues() const noexcept { return r_; }
  const std::vector<double>& weights() const noexcept { return w_; }

  double min_eigenvalue() const { return *std::min_element(r_.begin(), r_.end()); }
  double max_eigenvalue() const { return *std::max_element(r_.begin(), r_.end()); }

  template <typename F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < r_.size(); ++i) acc += w_[i] * f(r_[i]);
    return acc;
  }

  double mean() const {
    return integrate([](double r) { return r; });
  }

  void write_csv(std::ostream& out) const {
    out << "eigenvalue,weight\n";
    for (std::size_t i = 0; i < r_.size(); ++i)
      out << csv::format_double(r_[i]) << ',' << csv::format_double(w_[i]) << '\n';
  }

  std::string to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }

  static SpectralMeasure read_csv(std::istream& in) {
    auto table = csv::read_table(in);
    if (table.header.size() != 2)
      throw Error(ErrorKind::invalid_data, "spectral CSV needs two columns (eigenvalue, weight)");
    std::vector<double> r, w;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      double a = 0, b = 0;
      if (!csv::parse_double(table.rows[i][0], a) || !csv::parse_double(table.rows[i][1], b))
        throw Error(ErrorKind::invalid_data, "non-numeric spectral CSV row " + std::to_string(i + 2));
      r.push_back(a);
      w.push_back(b);
    }
    return SpectralMeasure(std::move(r), std::move(w));
  }

 private:
  void validate() const {
    require(!r_.empty(), ErrorKind::invalid_parameter, "spectral measure needs at least one atom");
    require(r_.size() == w_.size(), ErrorKind::invalid_parameter, "eigenvalue/weight size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < r_.size(); ++i) {
      require(std::isfinite(r_[i]) && r_[i] > 0.0, ErrorKind::invalid_parameter,
              "eigenvalues must be positive and finite");
      require(w_[i] >= 0.0 && w_[i] <= 1.0, ErrorKind::invalid_parameter, "weights must lie in [0,1]");
      total += w_[i];
    }
    require(std::abs(total - 1.0) <= 1e-12, ErrorKind::invalid_parameter, "weights must sum to 1");
  }

  std::vector<double> r_;
  std::vector<double> w_;
};

/// Population description consumed by every asymptotic formula.
struct ModelSpec {
  SpectralMeasure H;
  SpectralMeasure G;
  double rho2 = 0.0;
  double sigma2 = 0.0;

  /// Risk of the null predictor: sigma^2 + rho^2 * int r dG.
  double null_risk() const { return sigma2 + rho2 * G.mean(); }
};

inline ModelSpec isotropic_model(double rho2, double sigma2) {
  require(rho2 >= 0.0 && sigma2 >= 0.0, ErrorKind::invalid_parameter, "rho2 and sigma2 must be nonnegative");
  return {SpectralMeasure::point_mass(1.0), SpectralMeasure::point_mass(1.0), rho2, sigma2};
}

// Atoms sorted by descending eigenvalue, weight 1/p each.
inline SpectralMeasure empirical_spectrum(const Eigen::MatrixXd& covariance) {
  const auto p = covariance.rows();
  require(p >= 1 && covariance.cols() == p, ErrorKind::invalid_parameter, "covariance must be square");
  const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
  require((covariance - covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
          ErrorKind::invalid_parameter, "covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance, Eigen::EigenvaluesOnly);
  std::vector<double> r(eig.eigenvalues().data(), eig.eigenvalues().data() + p);
  std::sort(r.begin(), r.end(), std::greater<>());
  if (r.back() <= 0.0) throw Error(ErrorKind::singular_covariance, "covariance has a nonpositive eigenvalue");
  return SpectralMeasure(std::move(r), std::vector<double>(static_cast<std::size_t>(p), 1.0 / static_cast<double>(p)));
}

struct SignalMeasure {
  SpectralMeasure G;
  double rho2 = 0.0;
  bool null_signal = false;
};

/// Projects beta0 onto an orthonormal eigenbasis; atom i gets weight
/// (beta0' w_i)^2 / |beta0|^2. Atoms with negligible weight are dropped.
inline SignalMeasure signal_measure(const Eigen::VectorXd& beta0, const Eigen::MatrixXd& eigenvectors,
                                    const Eigen::VectorXd& eigenvalues) {
  const auto p = eigenvectors.rows();
  require(eigenvectors.cols() == eigenvalues.size() && beta0.size() == p, ErrorKind::invalid_parameter,
          "signal_measure: shape mismatch");
  const Eigen::MatrixXd gram = eigenvectors.transpose() * eigenvectors;
  require((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() <= 1e-10,
          ErrorKind::invalid_parameter, "eigenvectors must be orthonormal");

  const double rho2 = beta0.squaredNorm();
  if (rho2 == 0.0) return {SpectralMeasure::point_mass(1.0), 0.0, true};

  const Eigen::VectorXd proj = eigenvectors.transpose() * beta0;
  std::vector<double> r, w;
  double kept = 0.0;
  for (Eigen::Index i = 0; i < proj.size(); ++i) {
    const double wi = proj[i] * proj[i] / rho2;
    if (wi <= 1e-14) continue;
    r.push_back(eigenvalues[i]);
    w.push_back(wi);
    kept += wi;
  }
  for (auto& wi : w) wi /= kept;
  return {SpectralMeasure(std::move(r), std::move(w)), rho2, false};
}

/// AR(1) population: covariance, coefficient vector and its spectral laws.
struct Ar1Model {
  double rho_ar1 = 0.5;
  ModelSpec spec;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd beta0;
  Eigen::VectorXd eigenvalues;   // descending
  Eigen::MatrixXd eigenvectors;  // columns match eigenvalues
};

inline Eigen::MatrixXd ar1_covariance(double rho_ar1, Eigen::Index p) {
  Eigen::MatrixXd cov(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) cov(i, j) = std::pow(rho_ar1, static_cast<double>(std::abs(i - j)));
  return cov;
}

/// Builds the AR(1) model with beta0 = (1/5) * (sum of the top-5 eigenvectors).
/// sigma2 only fills the returned ModelSpec.
inline Ar1Model ar1_model(double rho_ar1, Eigen::Index p_ref = 500, double sigma2 = 1.0) {
  require(rho_ar1 > 0.0 && rho_ar1 < 1.0, ErrorKind::invalid_parameter, "rho_ar1 must lie in (0,1)");
  require(p_ref >= 10, ErrorKind::invalid_parameter, "p_ref must be at least 10");
  require(sigma2 >= 0.0, ErrorKind::invalid_parameter, "sigma2 must be nonnegative");

  Ar1Model m;
  m.rho_ar1 = rho_ar1;
  m.covariance = ar1_covariance(rho_ar1, p_ref);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.covariance);
  // Eigen returns ascending order; flip to descending.
  m.eigenvalues = eig.eigenvalues().reverse();
  m.eigenvectors = eig.eigenvectors().rowwise().reverse();
  m.beta0 = m.eigenvectors.leftCols(5).rowwise().sum() / 5.0;

  std::vector<double> r(m.eigenvalues.data(), m.eigenvalues.data() + p_ref);
  m.spec.H = SpectralMeasure(std::move(r), std::vector<double>(static_cast<std::size_t>(p_ref),
                                                               1.0 / static_cast<double>(p_ref)));
  // The top five eigenvectors carry beta0 with equal squared projections 1/25.
  std::vector<double> top(m.eigenvalues.data(), m.eigenvalues.data() + 5);
  m.spec.G = SpectralMeasure(std::move(top), std::vector<double>(5, 0.2));
  m.spec.rho2 = m.beta0.squaredNorm();
  m.spec.sigma2 = sigma2;
  return m;
}

}  // namespace ensgcv
