#pragma once

// Acceptance suite: each criterion is a self-contained check with pinned
// tolerances, run by `ensgcv verify` and the acceptance test binary.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ensgcv/commands.hpp"
#include "ensgcv/ensemble.hpp"
#include "ensgcv/fixed_point.hpp"
#include "ensgcv/montecarlo.hpp"
#include "ensgcv/risk_theory.hpp"
#include "ensgcv/rng.hpp"
#include "ensgcv/spectra.hpp"
#include "ensgcv/tuning.hpp"

namespace ensgcv::acceptance {

namespace fs = std::filesystem;

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Context {
  fs::path work_dir;
};

struct Criterion {
  int id;
  std::string slug;
  std::string title;
  double budget_seconds;
  std::function<Outcome(const Context&)> run;
};

struct Report {
  int id = 0;
  std::string slug;
  bool passed = false;
  bool within_budget = true;
  double seconds = 0.0;
  std::string detail;
};

namespace detail {

inline std::string fmt(double x, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << x;
  return os.str();
}

struct Check {
  bool ok = true;
  std::ostringstream msg;

  void expect(bool cond, const std::string& what) {
    if (!msg.str().empty()) msg << "; ";
    msg << what << (cond ? "" : " [FAIL]");
    ok = ok && cond;
  }

  Outcome outcome() const { return {ok, msg.str()}; }
};

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(uniform(rng, std::log(lo), std::log(hi)));
}

}  // namespace detail

// 1 ---------------------------------------------------------------------------
inline Outcome fixed_point_closed_forms(const Context&) {
  constexpr double kTol = 1e-10;
  const auto H = SpectralMeasure::point_mass(1.0);
  detail::Check c;
  const double v1 = solve_v(0.0, 2.0, H).v;
  c.expect(std::abs(v1 - 1.0) <= kTol, "v(0;2)=" + detail::fmt(v1, 15));
  const double v2 = solve_v(1.0, 1.0, H).v;
  const double v2_exact = (std::sqrt(5.0) - 1.0) / 2.0;
  c.expect(std::abs(v2 - v2_exact) <= kTol, "v(-1;1) err=" + detail::fmt(std::abs(v2 - v2_exact), 3));
  const auto s3 = solve_v(0.1, 0.5, H);
  const double v3_exact = (4.0 + std::sqrt(56.0)) / 2.0;
  c.expect(std::abs(s3.v - v3_exact) <= kTol && std::abs(s3.ell - 0.1 * v3_exact) <= kTol,
           "v(-0.1;0.5) err=" + detail::fmt(std::abs(s3.v - v3_exact), 3) +
               " ell err=" + detail::fmt(std::abs(s3.ell - 0.1 * v3_exact), 3));
  return c.outcome();
}

// 2 ---------------------------------------------------------------------------
inline Outcome isotropic_risk_closed_forms(const Context&) {
  constexpr double kTol = 1e-10;
  const auto model = isotropic_model(1.0, 1.0);
  detail::Check c;
  const double r1 = asymptotic_risk(0.0, 1, {2.0, 2.0}, model).total;
  c.expect(std::abs(r1 - 2.5) <= kTol, "R(0,1,(2,2))=" + detail::fmt(r1, 15));
  const double r2 = asymptotic_risk(0.0, EnsembleSize::full(), {0.5, 2.0}, model).total;
  c.expect(std::abs(r2 - 10.0 / 7.0) <= kTol, "R(0,inf,(0.5,2))=" + detail::fmt(r2, 15));
  return c.outcome();
}

// 3 ---------------------------------------------------------------------------
inline Outcome gcv_risk_identity(const Context&) {
  constexpr double kTol = 1e-10;
  const auto model = ar1_model(0.5, 500, 1.0).spec;
  auto rng = make_rng(3, {});
  double worst = 0.0;
  int evaluated = 0;
  while (evaluated < 100) {
    const double phi = detail::log_uniform(rng, 0.05, 5.0);
    const double phi_s = phi * detail::log_uniform(rng, 1.0, 20.0);
    const double lambda = evaluated % 5 == 0 ? 0.0 : detail::log_uniform(rng, 1e-3, 10.0);
    if (lambda == 0.0 && std::abs(phi_s - 1.0) < 0.05) continue;
    const AspectPair a{phi, phi_s};
    const double g = gcv_limit(lambda, a, model);
    const double r = asymptotic_risk(lambda, EnsembleSize::full(), a, model).total;
    worst = std::max(worst, std::abs(g - r));
    ++evaluated;
  }
  detail::Check c;
  c.expect(worst <= kTol, "max |gcv_limit - R_inf| over 100 tuples = " + detail::fmt(worst, 3));
  return c.outcome();
}

// 4 ---------------------------------------------------------------------------
inline Outcome optimal_equivalence(const Context&) {
  constexpr double kOptTol = 1e-6;
  constexpr double kSegmentTol = 1e-8;
  const auto model = ar1_model(0.5, 500, 1.0).spec;
  detail::Check c;
  for (double phi : {0.1, 0.5, 2.0}) {
    const auto sub = optimal_subsample(phi, model);
    const auto lam = optimal_lambda(phi, model);
    const auto joint = optimal_joint(phi, model);
    c.expect(std::abs(sub.risk - lam.risk) <= kOptTol,
             "phi=" + detail::fmt(phi) + ": |min_phis - min_lambda|=" + detail::fmt(std::abs(sub.risk - lam.risk), 3));
    c.expect(std::abs(joint.risk - lam.risk) <= kOptTol && std::abs(joint.risk - sub.risk) <= kOptTol,
             "joint gap=" + detail::fmt(std::max(std::abs(joint.risk - lam.risk), std::abs(joint.risk - sub.risk)), 3));
    double lo = kInf, hi = -kInf;
    if (std::isfinite(sub.argument) && sub.argument > phi) {
      const double lambda_bar = contour_lambda_for_phis(sub.argument, phi, model.H);
      for (int i = 0; i <= 10; ++i) {
        const auto pt = equivalence_path(lambda_bar, sub.argument, phi, i / 10.0);
        const double r = asymptotic_risk(pt.lambda, EnsembleSize::full(), {phi, pt.phi_s}, model).total;
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
      c.expect(hi - lo < kSegmentTol, "segment spread=" + detail::fmt(hi - lo, 3) + " (lambda_bar=" +
                                          detail::fmt(lambda_bar) + ", lambda*=" + detail::fmt(lam.argument) + ")");
    } else {
      c.expect(false, "phi_s* not finite; no segment");
    }
  }
  return c.outcome();
}

// 5 ---------------------------------------------------------------------------
inline Outcome contour_extension(const Context&) {
  constexpr double kTol = 1e-10;
  const auto model = ar1_model(0.5, 500, 1.0).spec;
  auto rng = make_rng(5, {});
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double phi = detail::log_uniform(rng, 0.05, 3.0);
    const double phi_s_bar = std::max(phi, 1.0) * detail::log_uniform(rng, 1.05, 8.0);
    const double lambda_bar = contour_lambda_for_phis(phi_s_bar, phi, model.H);
    const double a = asymptotic_risk(lambda_bar, EnsembleSize::full(), {phi, phi}, model).total;
    const double b = asymptotic_risk(0.0, EnsembleSize::full(), {phi, phi_s_bar}, model).total;
    worst = std::max(worst, std::abs(a - b));
  }
  const double spot = contour_lambda_for_phis(2.0, 0.5, SpectralMeasure::point_mass(1.0));
  detail::Check c;
  c.expect(worst <= kTol, "max |R(lambda_bar,phi) - R(0,phi_s_bar)| over 20 pairs = " + detail::fmt(worst, 3));
  c.expect(std::abs(spot - 0.75) <= kTol, "isotropic lambda_bar=" + detail::fmt(spot, 15));
  return c.outcome();
}

// 6 ---------------------------------------------------------------------------

/// tr of the dense smoothing matrix on I_{1:M}, built from explicit
/// (pseudo-)inverses independently of the library's member solver.
inline double dense_smoother_trace(const EnsembleFit& fit, const Dataset& data) {
  const auto& u = fit.union_indices.indices;
  const auto nu = static_cast<Eigen::Index>(u.size());
  const auto p = data.p();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(nu, nu);
  const Eigen::MatrixXd Xu = data.X(u, Eigen::all);
  for (const auto& m : fit.members) {
    const auto& idx = m.index.indices;
    const double k = static_cast<double>(idx.size());
    const Eigen::MatrixXd Xl = data.X(idx, Eigen::all);
    Eigen::MatrixXd A = Xl.transpose() * Xl / k + fit.lambda * Eigen::MatrixXd::Identity(p, p);
    Eigen::MatrixXd Ainv;
    if (fit.lambda > 0.0) {
      Ainv = A.inverse();
    } else {
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
      cod.setThreshold(1e-10);
      Ainv = cod.pseudoInverse();
    }
    // Column j of S gets the contribution of y_j for j in I_l.
    const Eigen::MatrixXd block = Xu * Ainv * Xl.transpose() / k;  // |U| x k
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const auto pos = std::lower_bound(u.begin(), u.end(), idx[c]) - u.begin();
      S.col(pos) += block.col(static_cast<Eigen::Index>(c));
    }
  }
  S /= static_cast<double>(fit.members.size());
  return S.trace();
}

inline Outcome trace_identity(const Context&) {
  constexpr double kTol = 1e-8;
  auto rng = make_rng(6, {});
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto n = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(10, 60)(rng));
    const auto p = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(3, 40)(rng));
    const auto k = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(2, static_cast<int>(n))(rng));
    const auto m = static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 6)(rng));
    Dataset d;
    d.X = Eigen::MatrixXd::NullaryExpr(n, p, [&] { return normal(rng); });
    d.y = Eigen::VectorXd::NullaryExpr(n, [&] { return normal(rng); });
    for (double lambda : {0.0, 0.3}) {
      const auto fit = ensemble_fit(d, k, m, lambda, derive_seed(6, {static_cast<std::uint64_t>(inst)}));
      worst = std::max(worst, std::abs(dense_smoother_trace(fit, d) - fit.smoother_trace()));
    }
  }
  detail::Check c;
  c.expect(worst <= kTol, "max |dense tr(S) - member trace| over 40 fits = " + detail::fmt(worst, 3));
  return c.outcome();
}

// 7 ---------------------------------------------------------------------------
inline const std::vector<double>& consistency_phi_s_grid() {
  static const std::vector<double> grid{0.2, 0.4, 0.6, 1.5, 2.5, 4.0, 7.0, 10.0};
  return grid;
}

struct ConsistencyPoint {
  Eigen::Index p = 0;
  double mean_abs_error = 0.0;
  double risk_level = 0.0;
};

inline ConsistencyPoint consistency_at(Eigen::Index p, std::size_t reps, std::size_t m, std::uint64_t seed) {
  SimConfig cfg;
  cfg.model = CovarianceKind::ar1;
  cfg.phi = 0.1;
  cfg.phi_s_grid = consistency_phi_s_grid();
  cfg.lambda_grid = {0.0};
  cfg.m_list = {m};
  cfg.p = p;
  cfg.reps = reps;
  cfg.rho_ar1 = 0.5;
  cfg.sigma2 = 1.0;
  cfg.master_seed = seed;
  const auto result = run_experiment(cfg);
  ConsistencyPoint out;
  out.p = p;
  double abs_sum = 0.0, risk_sum = 0.0;
  for (const auto& r : result.rows) {
    abs_sum += std::abs(r.gcv - r.test_risk);
    risk_sum += r.test_risk;
  }
  out.mean_abs_error = abs_sum / static_cast<double>(result.rows.size());
  out.risk_level = risk_sum / static_cast<double>(result.rows.size());
  return out;
}

inline Outcome gcv_consistency_trend(const Context&) {
  constexpr double kRelativeLimit = 0.05;
  std::vector<ConsistencyPoint> pts;
  for (Eigen::Index p : {100, 200, 400}) pts.push_back(consistency_at(p, 20, 100, 7));
  detail::Check c;
  std::string trend;
  for (const auto& pt : pts)
    trend += (trend.empty() ? "" : ", ") + ("p=" + std::to_string(pt.p) + ": " + detail::fmt(pt.mean_abs_error, 4));
  c.expect(pts[0].mean_abs_error > pts[1].mean_abs_error && pts[1].mean_abs_error > pts[2].mean_abs_error,
           "mean |gcv - risk| " + trend);
  const double rel = pts[2].mean_abs_error / pts[2].risk_level;
  c.expect(rel <= kRelativeLimit, "p=400 relative error " + detail::fmt(rel, 4) + " (risk " +
                                      detail::fmt(pts[2].risk_level, 4) + ")");
  return c.outcome();
}

// 8 ---------------------------------------------------------------------------
inline Outcome m2_inconsistency(const Context&) {
  constexpr double kStatedGcv = 6.25;
  constexpr double kStatedGap = 30.0 / 7.0;
  constexpr double kGapRelTol = 0.25;
  constexpr double kFullGapRelTol = 0.10;
  SimConfig cfg;
  cfg.model = CovarianceKind::isotropic;
  cfg.phi = 0.5;
  cfg.phi_s_grid = {2.0};
  cfg.lambda_grid = {0.0};
  cfg.m_list = {2, 100};
  cfg.p = 200;
  cfg.reps = 30;
  cfg.rho2 = 1.0;
  cfg.sigma2 = 1.0;
  cfg.master_seed = 8;
  const auto result = run_experiment(cfg);
  SimAggregate m2, m100;
  for (const auto& g : result.aggregate()) (g.key.m == 2 ? m2 : m100) = g;
  const auto model = isotropic_model(1.0, 1.0);
  const double theory_gcv = gcv_limit_finite_M(0.0, 2, {0.5, 2.0}, model);
  const double theory_gap = inconsistency_gap({0.5, 2.0}, model);

  detail::Check c;
  c.expect(std::abs(m2.gcv_mean - kStatedGcv) <= 3.0 * m2.gcv_stderr,
           "M=2 gcv " + detail::fmt(m2.gcv_mean, 4) + " +- " + detail::fmt(m2.gcv_stderr, 3) + " vs stated 6.25 (library limit " +
               detail::fmt(theory_gcv, 5) + ")");
  c.expect(std::abs(m2.gap_mean - kStatedGap) <= kGapRelTol * kStatedGap,
           "M=2 gap " + detail::fmt(m2.gap_mean, 4) + " vs stated 30/7 (library gap " + detail::fmt(theory_gap, 5) + ")");
  c.expect(std::abs(m100.gap_mean) < kFullGapRelTol * m100.test_mean,
           "M=100 gap " + detail::fmt(m100.gap_mean, 4) + " vs risk " + detail::fmt(m100.test_mean, 4));
  return c.outcome();
}

// 9 ---------------------------------------------------------------------------
inline Outcome tuning_end_to_end(const Context&) {
  constexpr double kRelTol = 0.05;
  constexpr Eigen::Index kN = 2000;
  constexpr Eigen::Index kP = 200;  // phi = 0.1
  constexpr std::size_t kReps = 10;
  constexpr std::size_t kM = 50;
  const auto model = LinearModel::ar1(kP, 0.5, 1.0);
  const auto grid = subsample_grid(kN, 0.5);
  const auto lambda_grid = parse_grid("1e-3:10:41:log");
  double risk_khat = 0.0, risk_oracle = 0.0, risk_baseline = 0.0;
  for (std::size_t rep = 0; rep < kReps; ++rep) {
    const auto train = generate(model, kN, derive_seed(9, {0, rep}));
    const auto test = generate(model, kN, derive_seed(9, {1, rep}));
    double best_test = kInf;
    double khat_test = kInf;
    const auto tuned = tune_k(train, 0.0, grid, kM, derive_seed(9, {2, rep}),
                              [&](Eigen::Index, const EnsembleFit& fit) {
                                best_test = std::min(best_test, conditional_risk(fit, test));
                              });
    const Eigen::VectorXd resid = test.y - test.X * tuned.coefficients;
    khat_test = resid.squaredNorm() / static_cast<double>(kN);
    const auto base = tune_lambda(train, lambda_grid);
    const Eigen::VectorXd base_resid = test.y - test.X * base.coefficients;
    risk_khat += khat_test / kReps;
    risk_oracle += best_test / kReps;
    risk_baseline += base_resid.squaredNorm() / static_cast<double>(kN) / kReps;
  }
  detail::Check c;
  const double rel_oracle = (risk_khat - risk_oracle) / risk_oracle;
  const double rel_base = std::abs(risk_khat - risk_baseline) / risk_baseline;
  c.expect(rel_oracle <= kRelTol, "risk(k_hat)=" + detail::fmt(risk_khat, 5) + " vs grid oracle " +
                                      detail::fmt(risk_oracle, 5) + " (rel " + detail::fmt(rel_oracle, 3) + ")");
  c.expect(rel_base <= kRelTol, "vs lambda-tuned " + detail::fmt(risk_baseline, 5) + " (rel " + detail::fmt(rel_base, 3) + ")");
  return c.outcome();
}

// 10 --------------------------------------------------------------------------
inline Outcome hypergeometric_overlap(const Context&) {
  constexpr Eigen::Index kN = 100, kK = 20;
  constexpr int kPairs = 10000;
  std::vector<double> overlaps;
  overlaps.reserve(kPairs);
  for (int i = 0; i < kPairs; ++i) {
    const auto sets = sample_subsets(kN, kK, 2, derive_seed(10, {static_cast<std::uint64_t>(i)}));
    std::vector<Eigen::Index> common;
    std::set_intersection(sets[0].indices.begin(), sets[0].indices.end(), sets[1].indices.begin(),
                          sets[1].indices.end(), std::back_inserter(common));
    overlaps.push_back(static_cast<double>(common.size()));
  }
  double mean = 0.0;
  for (double o : overlaps) mean += o / kPairs;
  const double N = kN, K = kK, n = kK;
  const double mean_exact = n * K / N;
  const double var_exact = n * K * (N - K) * (N - n) / (N * N * (N - 1.0));
  const double se = std::sqrt(var_exact / kPairs);
  detail::Check c;
  c.expect(std::abs(mean - mean_exact) <= 3.0 * se, "mean overlap " + detail::fmt(mean, 5) + " vs 4 (3 se = " +
                                                        detail::fmt(3.0 * se, 3) + ")");
  return c.outcome();
}

// 11 --------------------------------------------------------------------------
inline std::string reproducibility_config(std::uint64_t seed) {
  return R"({
  "model": "ar1",
  "phi": 0.5,
  "phi_s_grid": [1.5, 3.0],
  "lambda_grid": [0.0, 0.5],
  "M_list": [1, 5],
  "p": 50,
  "reps": 10,
  "rho_ar1": 0.5,
  "sigma2": 1.0,
  "master_seed": )" + std::to_string(seed) + "\n}\n";
}

inline Outcome reproducibility(const Context& ctx) {
  constexpr double kCompatSigmas = 4.0;
  const auto base = ctx.work_dir / "reproducibility";
  ensgcv::detail::ensure_dir(base);
  auto run = [&](const std::string& name, std::uint64_t seed) {
    const auto cfg_path = base / (name + ".json");
    csv::write_atomic(cfg_path, reproducibility_config(seed));
    SimOptions o;
    o.config_path = cfg_path;
    o.out_dir = base / name;
    cmd_sim(o);
    return std::pair{read_text(o.out_dir / "tidy.csv"), read_text(o.out_dir / "aggregate.csv")};
  };
  const auto a = run("seed11_a", 11);
  const auto b = run("seed11_b", 11);
  const auto d = run("seed12", 12);
  detail::Check c;
  c.expect(a == b, "same seed byte-identical");
  c.expect(a.first != d.first && a.second != d.second, "different seed differs");

  auto load = [&](const std::string& text) {
    std::istringstream in(text);
    return csv::read_table(in);
  };
  const auto ta = load(a.second), td = load(d.second);
  auto col = [](const csv::Table& t, const std::string& name) {
    return static_cast<std::size_t>(std::find(t.header.begin(), t.header.end(), name) - t.header.begin());
  };
  double worst = 0.0;
  for (std::size_t r = 0; r < ta.rows.size(); ++r)
    for (const auto& [mean_col, se_col] : {std::pair{"gcv_mean", "gcv_stderr"}, std::pair{"test_risk_mean", "test_risk_stderr"}}) {
      double ma = 0, sa = 0, md = 0, sd = 0;
      csv::parse_double(ta.rows[r][col(ta, mean_col)], ma);
      csv::parse_double(ta.rows[r][col(ta, se_col)], sa);
      csv::parse_double(td.rows[r][col(td, mean_col)], md);
      csv::parse_double(td.rows[r][col(td, se_col)], sd);
      worst = std::max(worst, std::abs(ma - md) / std::sqrt(sa * sa + sd * sd));
    }
  c.expect(ta.rows.size() == td.rows.size() && worst <= kCompatSigmas,
           "max standardized aggregate difference " + detail::fmt(worst, 3));
  return c.outcome();
}

// -----------------------------------------------------------------------------

inline const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "fixed-point", "fixed-point closed forms", 1.0, fixed_point_closed_forms},
      {2, "risk-closed-forms", "isotropic risk closed forms", 1.0, isotropic_risk_closed_forms},
      {3, "gcv-risk-identity", "gcv limit equals full-ensemble risk", 30.0, gcv_risk_identity},
      {4, "optimal-equivalence", "optimal risk equivalences and segments", 60.0, optimal_equivalence},
      {5, "contour", "contour extension", 10.0, contour_extension},
      {6, "trace-identity", "empirical trace identity", 10.0, trace_identity},
      {7, "gcv-consistency", "GCV consistency trend", 600.0, gcv_consistency_trend},
      {8, "m2-inconsistency", "M=2 inconsistency", 300.0, m2_inconsistency},
      {9, "tuning", "tuning end to end", 600.0, tuning_end_to_end},
      {10, "overlap", "hypergeometric overlap", 5.0, hypergeometric_overlap},
      {11, "reproducibility", "sim reproducibility", 120.0, reproducibility},
  };
  return all;
}

inline bool selected(const Criterion& c, const std::vector<std::string>& only) {
  if (only.empty()) return true;
  for (const auto& s : only)
    if (s == c.slug || s == std::to_string(c.id)) return true;
  return false;
}

/// Runs the selected criteria, printing one line each. Returns the reports.
inline std::vector<Report> run(const Context& ctx, const std::vector<std::string>& only, std::ostream& out) {
  std::vector<Report> reports;
  for (const auto& c : criteria()) {
    if (!selected(c, only)) continue;
    Report r;
    r.id = c.id;
    r.slug = c.slug;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto o = c.run(ctx);
      r.passed = o.passed;
      r.detail = o.detail;
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.within_budget = r.seconds <= c.budget_seconds;
    if (!r.within_budget) {
      r.passed = false;
      r.detail += "; over budget (" + detail::fmt(c.budget_seconds) + " s)";
    }
    out << std::left << std::setw(4) << c.id << std::setw(22) << c.slug << (r.passed ? "PASS" : "FAIL") << "  "
        << std::fixed << std::setprecision(2) << std::setw(8) << r.seconds << std::defaultfloat << "s  " << r.detail
        << '\n'
        << std::flush;
    reports.push_back(r);
  }
  return reports;
}

}  // namespace ensgcv::acceptance
