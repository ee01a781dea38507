#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ensgcv/ensemble.hpp"
#include "ensgcv/montecarlo.hpp"
#include "ensgcv/risk_theory.hpp"

using namespace ensgcv;

namespace {

Dataset gaussian_data(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Dataset d;
  d.X = Eigen::MatrixXd::NullaryExpr(n, p, [&] { return z(rng); });
  d.y = Eigen::VectorXd::NullaryExpr(n, [&] { return z(rng); });
  return d;
}

Eigen::MatrixXd pinv(const Eigen::MatrixXd& a) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  cod.setThreshold(1e-10);
  return cod.pseudoInverse();
}

// Dense n x n smoothing matrix of the averaged predictor: yhat = S y.
Eigen::MatrixXd dense_smoother(const EnsembleFit& fit, const Dataset& d) {
  const auto n = d.n(), p = d.p();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  for (const auto& m : fit.members) {
    const auto& idx = m.index.indices;
    const double k = static_cast<double>(idx.size());
    const Eigen::MatrixXd Xl = d.X(idx, Eigen::all);
    const Eigen::MatrixXd A = Xl.transpose() * Xl / k + fit.lambda * Eigen::MatrixXd::Identity(p, p);
    const Eigen::MatrixXd Ainv = fit.lambda > 0.0 ? Eigen::MatrixXd(A.inverse()) : pinv(A);
    const Eigen::MatrixXd block = d.X * Ainv * Xl.transpose() / k;
    for (std::size_t c = 0; c < idx.size(); ++c) S.col(idx[c]) += block.col(static_cast<Eigen::Index>(c));
  }
  return S / static_cast<double>(fit.members.size());
}

}  // namespace

TEST(RidgeFit, Examples) {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::Vector2d y(1.0, 2.0);
  const auto b0 = ridge_fit(X, y, 0.0);
  EXPECT_NEAR(b0[0], 1.0, 1e-14);
  EXPECT_NEAR(b0[1], 2.0, 1e-14);
  const auto b1 = ridge_fit(X, y, 0.5);
  EXPECT_NEAR(b1[0], 0.5, 1e-14);
  EXPECT_NEAR(b1[1], 1.0, 1e-14);
  const auto big = ridge_fit(X, y, 1e9);
  EXPECT_LE(big.norm(), 1e-6 * (X.transpose() * y / 2.0).norm());
}

TEST(RidgeFit, NormalEquationsResidual) {
  for (auto [k, p] : {std::pair<Eigen::Index, Eigen::Index>{50, 10}, {10, 50}, {30, 30}}) {
    const auto d = gaussian_data(k, p, static_cast<std::uint64_t>(k * 100 + p));
    const double kd = static_cast<double>(k);
    for (double lambda : {0.0, 1e-3, 0.7}) {
      const auto b = ridge_fit(d.X, d.y, lambda);
      const Eigen::MatrixXd G = d.X.transpose() * d.X / kd;
      const Eigen::VectorXd rhs = d.X.transpose() * d.y / kd;
      if (lambda > 0.0) {
        const Eigen::VectorXd r = (G + lambda * Eigen::MatrixXd::Identity(p, p)) * b - rhs;
        EXPECT_LE(r.norm(), 1e-8 * std::max(1.0, rhs.norm()));
      } else {
        const Eigen::VectorXd expected = pinv(G) * rhs;
        EXPECT_LE((b - expected).norm(), 1e-8 * std::max(1.0, expected.norm()));
      }
    }
  }
}

TEST(RidgeFit, RankDeficientRidgelessUsesPseudoInverse) {
  auto d = gaussian_data(40, 6, 3);
  d.X.col(5) = d.X.col(0);  // duplicated feature
  const auto sol = solve_member(d.X, d.y, 0.0);
  const Eigen::VectorXd expected = pinv(d.X.transpose() * d.X / 40.0) * d.X.transpose() * d.y / 40.0;
  EXPECT_LE((sol.coef - expected).norm(), 1e-8);
  EXPECT_NEAR(sol.trace, 5.0, 1e-12);
}

TEST(RidgeFit, RejectsNonFinite) {
  auto d = gaussian_data(5, 3, 1);
  d.X(2, 1) = std::nan("");
  try {
    ridge_fit(d.X, d.y, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_data);
  }
}

TEST(RidgeFit, LipschitzInLambda) {
  const auto d = gaussian_data(60, 12, 9);
  for (double lambda : {0.01, 0.3, 2.0}) {
    const double delta = 1e-7;
    const double change = (ridge_fit(d.X, d.y, lambda) - ridge_fit(d.X, d.y, lambda + delta)).norm();
    EXPECT_LE(change, 100.0 * delta);
  }
}

TEST(SpectralRidge, PathMatchesRefits) {
  const auto d = gaussian_data(30, 45, 4);
  const SpectralRidge path(d.X, d.y);
  for (double lambda : {1e-4, 0.01, 0.5, 3.0}) {
    const auto direct = solve_member(d.X, d.y, lambda);
    EXPECT_LE((path.coefficients(lambda) - direct.coef).norm(), 1e-10);
    EXPECT_NEAR(path.trace(lambda), direct.trace, 1e-10);
  }
}

TEST(SampleSubsets, OnlyOneSubset) {
  const auto s = sample_subsets(5, 5, 3, 1);
  ASSERT_EQ(s.size(), 3u);
  for (const auto& idx : s) EXPECT_EQ(idx.indices, (std::vector<Eigen::Index>{0, 1, 2, 3, 4}));
}

TEST(SampleSubsets, SortedDistinctDeterministic) {
  const auto a = sample_subsets(100, 37, 20, 77);
  const auto b = sample_subsets(100, 37, 20, 77);
  const auto c = sample_subsets(100, 37, 20, 78);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& s : a) {
    ASSERT_EQ(s.size(), 37u);
    EXPECT_TRUE(std::adjacent_find(s.indices.begin(), s.indices.end(),
                                   [](auto x, auto y) { return x >= y; }) == s.indices.end());
    EXPECT_GE(s.indices.front(), 0);
    EXPECT_LT(s.indices.back(), 100);
  }
  // A prefix of a larger ensemble is the smaller ensemble.
  const auto prefix = sample_subsets(100, 37, 5, 77);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(prefix[i], a[i]);
}

TEST(SampleSubsets, Errors) {
  EXPECT_THROW(sample_subsets(5, 6, 1, 0), Error);
  EXPECT_THROW(sample_subsets(5, 0, 1, 0), Error);
  EXPECT_THROW(sample_subsets(5, 2, 0, 0), Error);
}

TEST(SampleSubsets, BinomialFrequency) {
  const auto s = sample_subsets(2, 1, 10000, 123);
  double zeros = 0;
  for (const auto& idx : s) zeros += idx.indices[0] == 0 ? 1 : 0;
  const double freq = zeros / 10000.0;
  EXPECT_GE(freq, 0.48);
  EXPECT_LE(freq, 0.52);
}

TEST(SampleSubsets, HypergeometricOverlapMeanAndVariance) {
  const int pairs = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < pairs; ++i) {
    const auto s = sample_subsets(100, 20, 2, 5000 + static_cast<std::uint64_t>(i));
    std::vector<Eigen::Index> common;
    std::set_intersection(s[0].indices.begin(), s[0].indices.end(), s[1].indices.begin(), s[1].indices.end(),
                          std::back_inserter(common));
    const double o = static_cast<double>(common.size());
    sum += o;
    sumsq += o * o;
  }
  const double mean = sum / pairs;
  const double var = sumsq / pairs - mean * mean;
  const double var_exact = 20.0 * 20.0 * 80.0 * 80.0 / (100.0 * 100.0 * 99.0);
  EXPECT_NEAR(mean, 4.0, 3.0 * std::sqrt(var_exact / pairs));
  // Sample variance of ~2.59 from 1e4 draws has relative sd about 2%.
  EXPECT_NEAR(var / var_exact, 1.0, 0.08);
}

TEST(EnsembleFit, SingleFullFit) {
  const auto d = gaussian_data(30, 5, 2);
  const auto fit = ensemble_fit(d, 30, 1, 0.2, 9);
  EXPECT_EQ(fit.union_indices.size(), 30u);
  EXPECT_LE((fit.averaged_coefficients - ridge_fit(d.X, d.y, 0.2)).norm(), 1e-12);
}

TEST(EnsembleFit, RidgelessTraceIsSubsampleSizeWhenOverparameterized) {
  const auto d = gaussian_data(50, 30, 8);
  const auto fit = ensemble_fit(d, 12, 4, 0.0, 1);
  for (const auto& m : fit.members) EXPECT_NEAR(m.trace_contribution, 12.0, 1e-12);
}

TEST(EnsembleFit, AverageOfMembersAndTraceRange) {
  const auto d = gaussian_data(40, 10, 5);
  const auto fit = ensemble_fit(d, 20, 8, 0.3, 21);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(10);
  for (const auto& m : fit.members) {
    const Eigen::MatrixXd Xl = d.X(m.index.indices, Eigen::all);
    const Eigen::VectorXd yl = d.y(m.index.indices);
    const Eigen::VectorXd direct =
        (Xl.transpose() * Xl / 20.0 + 0.3 * Eigen::MatrixXd::Identity(10, 10)).ldlt().solve(Xl.transpose() * yl / 20.0);
    EXPECT_LE((m.coef - direct).norm(), 1e-12);
    mean += direct / 8.0;
    EXPECT_GE(m.trace_contribution, 0.0);
    EXPECT_LE(m.trace_contribution, 10.0);
  }
  EXPECT_LE((fit.averaged_coefficients - mean).norm(), 1e-12);
}

TEST(EnsembleFit, NullFit) {
  const auto d = gaussian_data(20, 4, 6);
  const auto fit = ensemble_fit(d, 0, 5, 0.1, 0);
  EXPECT_TRUE(fit.null_fit());
  EXPECT_TRUE(fit.union_indices.empty());
  EXPECT_EQ(fit.averaged_coefficients, Eigen::VectorXd::Zero(4));
  const double mean_y2 = d.y.squaredNorm() / 20.0;
  EXPECT_DOUBLE_EQ(training_error(fit, d), mean_y2);
  ASSERT_TRUE(oob_error(fit, d).has_value());
  EXPECT_DOUBLE_EQ(*oob_error(fit, d), mean_y2);
  const auto rep = gcv(fit, d);
  EXPECT_DOUBLE_EQ(rep.gcv, mean_y2);
  EXPECT_DOUBLE_EQ(rep.denominator, 1.0);
}

TEST(EnsembleFit, Deterministic) {
  const auto d = gaussian_data(40, 10, 5);
  const auto a = ensemble_fit(d, 15, 6, 0.0, 33);
  const auto b = ensemble_fit(d, 15, 6, 0.0, 33);
  EXPECT_EQ(a.averaged_coefficients, b.averaged_coefficients);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a.members[i].index, b.members[i].index);
}

TEST(EnsembleFit, TruncateIsPrefixEnsemble) {
  const auto d = gaussian_data(40, 10, 5);
  const auto big = ensemble_fit(d, 15, 6, 0.1, 33);
  const auto small = ensemble_fit(d, 15, 3, 0.1, 33);
  const auto cut = truncate_ensemble(big, 3);
  EXPECT_LE((cut.averaged_coefficients - small.averaged_coefficients).norm(), 1e-14);
  EXPECT_EQ(cut.union_indices, small.union_indices);
}

TEST(TrainingError, InterpolatingMemberIsZero) {
  const auto d = gaussian_data(12, 12, 15);
  const auto fit = ensemble_fit(d, 12, 1, 0.0, 0);
  EXPECT_NEAR(training_error(fit, d), 0.0, 1e-16 + 1e-12 * d.y.squaredNorm());
}

TEST(DenseOracle, TraceTrainingErrorAndGcv) {
  std::mt19937_64 rng(99);
  for (int inst = 0; inst < 20; ++inst) {
    const auto n = std::uniform_int_distribution<Eigen::Index>(10, 60)(rng);
    const auto p = std::uniform_int_distribution<Eigen::Index>(3, 40)(rng);
    const auto k = std::uniform_int_distribution<Eigen::Index>(2, n)(rng);
    const auto m = std::uniform_int_distribution<std::size_t>(1, 5)(rng);
    const auto d = gaussian_data(n, p, 1000 + static_cast<std::uint64_t>(inst));
    for (double lambda : {0.0, 0.3}) {
      const auto fit = ensemble_fit(d, k, m, lambda, static_cast<std::uint64_t>(inst));
      const Eigen::MatrixXd S = dense_smoother(fit, d);
      const auto& u = fit.union_indices.indices;
      const Eigen::MatrixXd Su = S(u, u);
      EXPECT_NEAR(Su.trace(), fit.smoother_trace(), 1e-8);
      const Eigen::VectorXd resid = (d.y - S * d.y)(u);
      const double train = resid.squaredNorm() / static_cast<double>(u.size());
      EXPECT_NEAR(training_error(fit, d), train, 1e-10 * std::max(1.0, train));
      const auto rep = gcv(fit, d);
      const double root = 1.0 - Su.trace() / static_cast<double>(u.size());
      if (!rep.degenerate) {
        EXPECT_NEAR(rep.gcv, train / (root * root), 1e-7 * std::max(1.0, rep.gcv));
      }
    }
  }
}

TEST(Gcv, SingleFullFitMatchesTextbook) {
  const auto d = gaussian_data(25, 8, 41);
  const auto fit = ensemble_fit(d, 25, 1, 0.4, 0);
  const Eigen::MatrixXd S = d.X * (d.X.transpose() * d.X / 25.0 + 0.4 * Eigen::MatrixXd::Identity(8, 8)).inverse() *
                            d.X.transpose() / 25.0;
  const Eigen::VectorXd r = d.y - S * d.y;
  const double textbook = (r.squaredNorm() / 25.0) / std::pow(1.0 - S.trace() / 25.0, 2);
  EXPECT_NEAR(gcv(fit, d).gcv, textbook, 1e-10);
}

TEST(Gcv, LargePenaltyGivesMeanSquareOverUnion) {
  const auto d = gaussian_data(40, 6, 2);
  const auto fit = ensemble_fit(d, 20, 3, 1e12, 7);
  double acc = 0.0;
  for (auto i : fit.union_indices.indices) acc += d.y[i] * d.y[i];
  EXPECT_NEAR(gcv(fit, d).gcv, acc / static_cast<double>(fit.union_indices.size()), 1e-9);
}

TEST(Gcv, DegenerateDenominatorIsReported) {
  const auto d = gaussian_data(10, 15, 3);
  const auto fit = ensemble_fit(d, 10, 1, 0.0, 0);
  const auto rep = gcv(fit, d);
  EXPECT_TRUE(rep.degenerate);
  EXPECT_TRUE(std::isinf(rep.gcv));
}

TEST(Gcv, InvariantUnderRowPermutation) {
  auto d = gaussian_data(30, 7, 12);
  const double before = gcv(ensemble_fit(d, 30, 1, 0.25, 0), d).gcv;
  std::vector<Eigen::Index> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  Dataset q{d.X(perm, Eigen::all), d.y(perm)};
  EXPECT_NEAR(gcv(ensemble_fit(q, 30, 1, 0.25, 0), q).gcv, before, 1e-12);
}

TEST(OobError, EmptyComplement) {
  const auto d = gaussian_data(15, 4, 1);
  const auto fit = ensemble_fit(d, 15, 2, 0.1, 1);
  EXPECT_FALSE(oob_error(fit, d).has_value());
  EXPECT_FALSE(gcv(fit, d).oob_error.has_value());
}

// OOB error of the 2-ensemble estimates R_2; isotropic, rho2 = sigma2 = 1.
TEST(OobError, MatchesAsymptoticRiskOfTwoEnsemble) {
  const auto model = LinearModel::isotropic(20, 1.0, 1.0);
  std::vector<double> vals;
  for (std::uint64_t rep = 0; rep < 60; ++rep) {
    const auto d = generate(model, 200, 700 + rep);
    const auto fit = ensemble_fit(d, 50, 2, 0.0, rep);
    vals.push_back(*oob_error(fit, d));
  }
  double mean = 0.0, ss = 0.0;
  for (double v : vals) mean += v / static_cast<double>(vals.size());
  for (double v : vals) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (vals.size() - 1.0) / vals.size());
  const double theory = asymptotic_risk(0.0, 2, {0.1, 0.4}, model.spec).total;
  EXPECT_NEAR(mean, theory, 3.0 * se);
}

// n^-1 |y - X beta_M|^2 = -(1 - 2/M) mean_m E_m + 2 (1 - 1/M) mean_{m<l} E_{ml},
// with E the full-sample mean squared residual of single members and pairs.
TEST(Decomposition, EnsembleErrorFromSinglesAndPairs) {
  const auto d = gaussian_data(35, 9, 77);
  for (std::size_t m : {2u, 3u, 6u}) {
    const auto fit = ensemble_fit(d, 14, m, 0.2, 5);
    auto err = [&](const Eigen::VectorXd& b) { return (d.y - d.X * b).squaredNorm() / 35.0; };
    double singles = 0.0, pairs = 0.0;
    std::size_t npairs = 0;
    for (std::size_t a = 0; a < m; ++a) {
      singles += err(fit.members[a].coef) / static_cast<double>(m);
      for (std::size_t b = a + 1; b < m; ++b) {
        pairs += err(0.5 * (fit.members[a].coef + fit.members[b].coef));
        ++npairs;
      }
    }
    pairs /= static_cast<double>(npairs);
    const double mm = static_cast<double>(m);
    EXPECT_NEAR(err(fit.averaged_coefficients), -(1.0 - 2.0 / mm) * singles + 2.0 * (1.0 - 1.0 / mm) * pairs, 1e-10);
  }
}

TEST(Predict, Basics) {
  const auto d = gaussian_data(30, 5, 3);
  const auto fit = ensemble_fit(d, 10, 4, 0.1, 2);
  EXPECT_EQ(predict(fit, Eigen::MatrixXd::Zero(3, 5)), Eigen::VectorXd::Zero(3));
  EXPECT_LE((predict(fit, Eigen::MatrixXd::Identity(5, 5)) - fit.averaged_coefficients).norm(), 1e-15);
  const Eigen::MatrixXd Xn = gaussian_data(7, 5, 4).X;
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(7);
  for (const auto& m : fit.members) avg += Xn * m.coef / 4.0;
  EXPECT_LE((predict(fit, Xn) - avg).norm(), 1e-12);
  EXPECT_THROW(predict(fit, Eigen::MatrixXd::Zero(3, 4)), Error);
}

TEST(ConditionalRisk, Basics) {
  const auto model = LinearModel::isotropic(8, 1.0, 0.0);
  const auto test = generate(model, 50, 1);
  EnsembleFit oracle;
  oracle.averaged_coefficients = model.beta0;
  EXPECT_NEAR(conditional_risk(oracle, test), 0.0, 1e-24);

  const auto noisy = LinearModel::isotropic(50, 1.0, 1.0);
  const auto big = generate(noisy, 20000, 2);
  const auto null_fit = ensemble_fit(generate(noisy, 10, 3), 0, 1, 0.0, 0);
  EXPECT_NEAR(conditional_risk(null_fit, big), noisy.spec.null_risk(), 5.0 * 2.0 * std::sqrt(2.0 / 20000.0));

  const auto d = gaussian_data(40, 6, 8);
  const auto t = gaussian_data(30, 6, 9);
  const auto fit = ensemble_fit(d, 40, 1, 0.3, 0);
  const Eigen::VectorXd b = ridge_fit(d.X, d.y, 0.3);
  EXPECT_NEAR(conditional_risk(fit, t), (t.y - t.X * b).squaredNorm() / 30.0, 1e-12);
}

// The out-of-bag term already estimates R_M, so the matched weights are
// (0, D_M) at every M; the exact finite-M training-error limit is fed in.
TEST(CorrectedGcv, WeightsSolveMatchingSystem) {
  const double x = 0.25;
  for (double ell : {0.0, 0.3, 0.8}) {
    for (std::size_t m : {2u, 5u, 50u}) {
      const double full = 1.0 - std::pow(1.0 - x, static_cast<double>(m));
      const double c1 = x / full;
      const double c2 = (1.0 - (1.0 - x) * (1.0 - x)) / full;
      const double d_root = 1.0 - c1 * (1.0 - ell);
      const auto w = correction_weights(x, ell, c1, c2, d_root * d_root, m);
      ASSERT_TRUE(w.available);
      EXPECT_NEAR(w.a1, 0.0, 1e-8);
      EXPECT_NEAR(w.a2, d_root * d_root, 1e-8);
    }
  }
}

TEST(CorrectedGcv, LargeEnsembleFallsBackToPlain) {
  const auto d = gaussian_data(60, 10, 2);
  const auto fit = ensemble_fit(d, 30, 200, 0.2, 4);
  const auto c = corrected_gcv(fit, d);
  EXPECT_FALSE(c.plain.oob_error.has_value());
  EXPECT_EQ(c.value, c.plain.gcv);
}

TEST(CorrectedGcv, SingleMemberFallsBack) {
  const auto d = gaussian_data(40, 5, 1);
  const auto fit = ensemble_fit(d, 40, 1, 0.1, 1);
  const auto c = corrected_gcv(fit, d);
  EXPECT_FALSE(c.weights.available);
  EXPECT_EQ(c.value, gcv(fit, d).gcv);
  EXPECT_FALSE(correction_weights(1.0, 0.3, 1.0, 1.0, 0.09, 1).available);
}

TEST(CorrectedGcv, TwoMemberRidgelessIsOob) {
  const auto model = LinearModel::isotropic(200, 1.0, 1.0);
  std::vector<double> corrected, plain;
  for (std::uint64_t rep = 0; rep < 30; ++rep) {
    const auto d = generate(model, 400, 900 + rep);
    const auto fit = ensemble_fit(d, 100, 2, 0.0, rep);
    const auto c = corrected_gcv(fit, d);
    ASSERT_TRUE(c.weights.available);
    EXPECT_NEAR(c.weights.a1, 0.0, 1e-12);
    EXPECT_NEAR(c.value, *c.plain.oob_error, 1e-10);
    corrected.push_back(c.value);
    plain.push_back(c.plain.gcv);
  }
  auto stats = [](const std::vector<double>& v) {
    double m = 0.0, ss = 0.0;
    for (double x : v) m += x / static_cast<double>(v.size());
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, std::sqrt(ss / (v.size() - 1.0) / v.size())};
  };
  const auto iso = isotropic_model(1.0, 1.0);
  const auto [cm, cse] = stats(corrected);
  EXPECT_NEAR(cm, asymptotic_risk(0.0, 2, {0.5, 2.0}, iso).total, 3.0 * cse);
  const auto [pm, pse] = stats(plain);
  EXPECT_NEAR(pm, gcv_limit_finite_M(0.0, 2, {0.5, 2.0}, iso), 3.0 * pse);
}
