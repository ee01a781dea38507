#pragma once

// Seeded data generation and replicated ensemble/GCV experiments with
// matching theory columns.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ensgcv/csv.hpp"
#include "ensgcv/ensemble.hpp"
#include "ensgcv/error.hpp"
#include "ensgcv/parallel.hpp"
#include "ensgcv/risk_theory.hpp"
#include "ensgcv/rng.hpp"
#include "ensgcv/spectra.hpp"

namespace ensgcv {

enum class CovarianceKind { isotropic, ar1 };

/// Gaussian linear model y = x'beta0 + eps with isotropic or AR(1) features.
struct LinearModel {
  CovarianceKind kind = CovarianceKind::ar1;
  Eigen::Index p = 0;
  double rho_ar1 = 0.5;
  double sigma2 = 1.0;
  Eigen::VectorXd beta0;
  ModelSpec spec;  // spectral description at this p

  /// AR(1) covariance with beta0 the average of the top-5 eigenvectors.
  static LinearModel ar1(Eigen::Index p, double rho_ar1, double sigma2) {
    require(p >= 10, ErrorKind::invalid_parameter, "AR(1) model needs p >= 10");
    auto m = ar1_model(rho_ar1, p, sigma2);
    LinearModel out;
    out.kind = CovarianceKind::ar1;
    out.p = p;
    out.rho_ar1 = rho_ar1;
    out.sigma2 = sigma2;
    out.beta0 = std::move(m.beta0);
    out.spec = std::move(m.spec);
    return out;
  }

  /// Identity covariance with beta0 = sqrt(rho2/p) * (1, ..., 1).
  static LinearModel isotropic(Eigen::Index p, double rho2, double sigma2) {
    require(p >= 1, ErrorKind::invalid_parameter, "p must be >= 1");
    LinearModel out;
    out.kind = CovarianceKind::isotropic;
    out.p = p;
    out.rho_ar1 = 0.0;
    out.sigma2 = sigma2;
    out.beta0 = Eigen::VectorXd::Constant(p, std::sqrt(rho2 / static_cast<double>(p)));
    out.spec = isotropic_model(rho2, sigma2);
    return out;
  }
};

/// n rows from `model`; x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j gives the
/// AR(1) covariance exactly (this is multiplication by its Cholesky factor).
inline Dataset generate(const LinearModel& model, Eigen::Index n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::invalid_parameter, "n must be >= 1");
  require(model.sigma2 >= 0.0 && std::isfinite(model.sigma2), ErrorKind::invalid_parameter,
          "sigma2 must be finite and >= 0");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index p = model.p;
  Dataset d;
  d.X.resize(n, p);
  const double rho = model.kind == CovarianceKind::ar1 ? model.rho_ar1 : 0.0;
  const double innov = std::sqrt(1.0 - rho * rho);
  // Row-major fill keeps the stream layout independent of Eigen's storage.
  for (Eigen::Index i = 0; i < n; ++i) {
    double prev = normal(rng);
    d.X(i, 0) = prev;
    for (Eigen::Index j = 1; j < p; ++j) {
      prev = rho * prev + innov * normal(rng);
      d.X(i, j) = prev;
    }
  }
  d.y = d.X * model.beta0;
  const double sd = std::sqrt(model.sigma2);
  for (Eigen::Index i = 0; i < n; ++i) d.y[i] += sd * normal(rng);
  return d;
}

inline std::pair<Dataset, Eigen::VectorXd> generate_ar1(Eigen::Index n, Eigen::Index p, double rho_ar1,
                                                         double sigma2, std::uint64_t seed) {
  require(rho_ar1 > 0.0 && rho_ar1 < 1.0, ErrorKind::invalid_parameter, "rho_ar1 must lie in (0,1)");
  require(sigma2 >= 0.0, ErrorKind::invalid_parameter, "sigma2 must be >= 0");
  auto model = LinearModel::ar1(p, rho_ar1, sigma2);
  return {generate(model, n, seed), model.beta0};
}

// ---------------------------------------------------------------------------
// Experiments

struct SimConfig {
  CovarianceKind model = CovarianceKind::ar1;
  double phi = 0.1;
  std::vector<double> phi_s_grid;   // used when k_grid is empty
  std::vector<Eigen::Index> k_grid;
  std::vector<double> lambda_grid{0.0};
  std::vector<std::size_t> m_list{1};
  Eigen::Index p = 100;
  std::size_t reps = 1;
  double rho_ar1 = 0.5;
  double rho2 = 1.0;  // isotropic only; AR(1) uses |beta0|^2
  double sigma2 = 1.0;
  std::uint64_t master_seed = 0;
  Eigen::Index test_size = 0;  // 0 means n

  Eigen::Index n() const { return static_cast<Eigen::Index>(std::floor(static_cast<double>(p) / phi + 1e-9)); }

  /// Subsample sizes, from k_grid or round(p / phi_s) (phi_s = inf gives 0).
  std::vector<Eigen::Index> ks() const {
    if (!k_grid.empty()) return k_grid;
    std::vector<Eigen::Index> out;
    for (double ps : phi_s_grid)
      out.push_back(std::isinf(ps) ? 0 : static_cast<Eigen::Index>(std::llround(static_cast<double>(p) / ps)));
    return out;
  }

  void validate() const {
    require(phi > 0.0 && std::isfinite(phi), ErrorKind::invalid_parameter, "phi must be positive");
    require(p >= 1, ErrorKind::invalid_parameter, "p must be >= 1");
    require(reps >= 1, ErrorKind::invalid_parameter, "reps must be >= 1");
    require(!phi_s_grid.empty() || !k_grid.empty(), ErrorKind::invalid_parameter, "k or phi_s grid is empty");
    require(!lambda_grid.empty(), ErrorKind::invalid_parameter, "lambda grid is empty");
    require(!m_list.empty(), ErrorKind::invalid_parameter, "M list is empty");
    for (double l : lambda_grid)
      require(l >= 0.0 && std::isfinite(l), ErrorKind::invalid_parameter, "lambda values must be finite and >= 0");
    for (auto m : m_list) require(m >= 1, ErrorKind::invalid_parameter, "M values must be >= 1");
    for (double ps : phi_s_grid) require(ps > 0.0, ErrorKind::invalid_parameter, "phi_s values must be > 0");
    require(sigma2 >= 0.0 && rho2 >= 0.0, ErrorKind::invalid_parameter, "sigma2 and rho2 must be >= 0");
    if (model == CovarianceKind::ar1)
      require(rho_ar1 > 0.0 && rho_ar1 < 1.0 && p >= 10, ErrorKind::invalid_parameter,
              "AR(1) needs rho_ar1 in (0,1) and p >= 10");
    const auto nn = n();
    require(nn >= 1, ErrorKind::invalid_parameter, "n = floor(p/phi) must be >= 1");
    for (auto k : ks())
      require(k >= 0 && k <= nn, ErrorKind::invalid_parameter, "every k must lie in [0, n]");
    require(test_size >= 0, ErrorKind::invalid_parameter, "test_size must be >= 0");
  }

  LinearModel make_model() const {
    return model == CovarianceKind::ar1 ? LinearModel::ar1(p, rho_ar1, sigma2) : LinearModel::isotropic(p, rho2, sigma2);
  }
};

struct SimRow {
  std::size_t rep = 0;
  Eigen::Index k = 0;
  double lambda = 0.0;
  std::size_t m = 1;
  double gcv = 0.0;
  double train_error = 0.0;
  std::optional<double> oob_error;
  double test_risk = 0.0;
  double denominator = 1.0;
  bool degenerate = false;
  std::string marker;  // non-empty when the cell failed
};

struct TheoryCell {
  double risk = std::numeric_limits<double>::quiet_NaN();
  double gcv = std::numeric_limits<double>::quiet_NaN();
  std::string marker;
};

struct SimCellKey {
  Eigen::Index k;
  double lambda;
  std::size_t m;
  auto operator<=>(const SimCellKey&) const = default;
};

struct SimAggregate {
  SimCellKey key{};
  std::size_t count = 0;
  double gcv_mean = 0.0, gcv_stderr = 0.0;
  double test_mean = 0.0, test_stderr = 0.0;
  double train_mean = 0.0, train_stderr = 0.0;
  double oob_mean = std::numeric_limits<double>::quiet_NaN(), oob_stderr = std::numeric_limits<double>::quiet_NaN();
  double gap_mean = 0.0, gap_stderr = 0.0;  // gcv - test risk
  TheoryCell theory;
};

struct SimResult {
  SimConfig config;
  Eigen::Index n = 0;
  std::vector<SimRow> rows;  // ordered by (rep, k, lambda, M)
  std::map<SimCellKey, TheoryCell> theory;

  std::vector<SimAggregate> aggregate() const;
  std::string tidy_csv() const;
  std::string aggregate_csv() const;
};

namespace detail {

struct MeanStderr {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stderr_ = std::numeric_limits<double>::quiet_NaN();
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
  MeanStderr out;
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += x;
  out.mean = s / n;
  if (xs.size() < 2) {
    out.stderr_ = 0.0;
    return out;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  out.stderr_ = std::sqrt(ss / (n - 1.0) / n);
  return out;
}

inline TheoryCell theory_cell(const ModelSpec& spec, double lambda, double phi, double phi_s, std::size_t m) {
  TheoryCell t;
  try {
    const AspectPair a{phi, phi_s};
    t.risk = asymptotic_risk(lambda, m, a, spec).total;
    t.gcv = gcv_limit_finite_M(lambda, m, a, spec);
  } catch (const Error& e) {
    t.marker = to_string(e.kind());
  }
  return t;
}

}  // namespace detail

/// Seeds: training data (master, {0, rep}); test data (master, {1, rep});
/// ensemble members (master, {2, rep, k index}). Each M in the list uses the
/// first M members of the largest ensemble, and all lambdas share subsets.
inline SimResult run_experiment(const SimConfig& config) {
  config.validate();
  SimResult result;
  result.config = config;
  const auto n = config.n();
  result.n = n;
  const auto ks = config.ks();
  const auto model = config.make_model();
  const std::size_t m_max = *std::max_element(config.m_list.begin(), config.m_list.end());
  const Eigen::Index n_test = config.test_size > 0 ? config.test_size : n;

  const double phi_emp = static_cast<double>(config.p) / static_cast<double>(n);
  for (auto k : ks)
    for (double lambda : config.lambda_grid)
      for (auto m : config.m_list) {
        const double phi_s = k == 0 ? kInf : static_cast<double>(config.p) / static_cast<double>(k);
        result.theory[{k, lambda, m}] = detail::theory_cell(model.spec, lambda, phi_emp, phi_s, m);
      }

  const std::size_t cells_per_rep = ks.size() * config.lambda_grid.size() * config.m_list.size();
  std::vector<std::vector<SimRow>> per_rep(config.reps);
  parallel_for(config.reps, [&](std::size_t rep) {
    const Dataset train = generate(model, n, derive_seed(config.master_seed, {0, rep}));
    const Dataset test = generate(model, n_test, derive_seed(config.master_seed, {1, rep}));
    auto& rows = per_rep[rep];
    rows.reserve(cells_per_rep);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const auto k = ks[ki];
      const std::uint64_t member_seed = derive_seed(config.master_seed, {2, rep, ki});
      for (double lambda : config.lambda_grid) {
        std::optional<EnsembleFit> full;
        std::string failure;
        try {
          full = ensemble_fit(train, k, m_max, lambda, member_seed);
        } catch (const Error& e) {
          failure = to_string(e.kind());
        }
        for (auto m : config.m_list) {
          SimRow row;
          row.rep = rep;
          row.k = k;
          row.lambda = lambda;
          row.m = m;
          if (!full) {
            row.marker = failure;
            rows.push_back(row);
            continue;
          }
          const EnsembleFit fit = truncate_ensemble(*full, k == 0 ? 1 : m);
          const auto rep_gcv = gcv(fit, train);
          row.gcv = rep_gcv.gcv;
          row.train_error = rep_gcv.train_error;
          row.oob_error = rep_gcv.oob_error;
          row.denominator = rep_gcv.denominator;
          row.degenerate = rep_gcv.degenerate;
          if (row.degenerate) row.marker = "degenerate_denominator";
          row.test_risk = conditional_risk(fit, test);
          rows.push_back(row);
        }
      }
    }
  });
  for (auto& rows : per_rep)
    for (auto& r : rows) result.rows.push_back(std::move(r));
  return result;
}

inline std::vector<SimAggregate> SimResult::aggregate() const {
  struct Acc {
    std::vector<double> gcv, test, train, oob, gap;
  };
  std::map<SimCellKey, Acc> acc;
  for (const auto& [key, _] : theory) acc[key];
  for (const auto& r : rows) {
    auto& a = acc[{r.k, r.lambda, r.m}];
    if (!r.marker.empty() && !r.degenerate) continue;
    a.test.push_back(r.test_risk);
    a.train.push_back(r.train_error);
    if (r.oob_error) a.oob.push_back(*r.oob_error);
    if (r.degenerate) continue;
    a.gcv.push_back(r.gcv);
    a.gap.push_back(r.gcv - r.test_risk);
  }
  std::vector<SimAggregate> out;
  for (const auto& [key, a] : acc) {
    SimAggregate g;
    g.key = key;
    g.count = a.gcv.size();
    const auto gcv_ms = detail::mean_stderr(a.gcv);
    const auto test_ms = detail::mean_stderr(a.test);
    const auto train_ms = detail::mean_stderr(a.train);
    const auto oob_ms = detail::mean_stderr(a.oob);
    const auto gap_ms = detail::mean_stderr(a.gap);
    g.gcv_mean = gcv_ms.mean;
    g.gcv_stderr = gcv_ms.stderr_;
    g.test_mean = test_ms.mean;
    g.test_stderr = test_ms.stderr_;
    g.train_mean = train_ms.mean;
    g.train_stderr = train_ms.stderr_;
    g.oob_mean = oob_ms.mean;
    g.oob_stderr = oob_ms.stderr_;
    g.gap_mean = gap_ms.mean;
    g.gap_stderr = gap_ms.stderr_;
    if (auto it = theory.find(key); it != theory.end()) g.theory = it->second;
    out.push_back(g);
  }
  return out;
}

inline std::string SimResult::tidy_csv() const {
  using csv::format_double;
  std::ostringstream os;
  os << "rep,k,phi_s,lambda,M,gcv,train_error,oob_error,test_risk,denominator,risk_theory,gcv_theory,marker\n";
  for (const auto& r : rows) {
    const double phi_s = r.k == 0 ? kInf : static_cast<double>(config.p) / static_cast<double>(r.k);
    const auto& t = theory.at({r.k, r.lambda, r.m});
    os << r.rep << ',' << r.k << ',' << format_double(phi_s) << ',' << format_double(r.lambda) << ',' << r.m << ','
       << format_double(r.gcv) << ',' << format_double(r.train_error) << ','
       << (r.oob_error ? format_double(*r.oob_error) : std::string("nan")) << ',' << format_double(r.test_risk)
       << ',' << format_double(r.denominator) << ',' << format_double(t.risk) << ',' << format_double(t.gcv) << ','
       << (r.marker.empty() ? t.marker : r.marker) << '\n';
  }
  return os.str();
}

inline std::string SimResult::aggregate_csv() const {
  using csv::format_double;
  std::ostringstream os;
  os << "k,phi_s,lambda,M,count,gcv_mean,gcv_stderr,test_risk_mean,test_risk_stderr,train_mean,train_stderr,"
        "oob_mean,oob_stderr,gap_mean,gap_stderr,risk_theory,gcv_theory,marker\n";
  for (const auto& g : aggregate()) {
    const double phi_s = g.key.k == 0 ? kInf : static_cast<double>(config.p) / static_cast<double>(g.key.k);
    os << g.key.k << ',' << format_double(phi_s) << ',' << format_double(g.key.lambda) << ',' << g.key.m << ','
       << g.count << ',' << format_double(g.gcv_mean) << ',' << format_double(g.gcv_stderr) << ','
       << format_double(g.test_mean) << ',' << format_double(g.test_stderr) << ',' << format_double(g.train_mean)
       << ',' << format_double(g.train_stderr) << ',' << format_double(g.oob_mean) << ','
       << format_double(g.oob_stderr) << ',' << format_double(g.gap_mean) << ',' << format_double(g.gap_stderr)
       << ',' << format_double(g.theory.risk) << ',' << format_double(g.theory.gcv) << ',' << g.theory.marker
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Config files: a flat JSON object.

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

template <typename T>
T config_value(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_parameter, "config key '" + key + "': " + e.what());
  }
}

inline double config_double(const nlohmann::json& j, const std::string& key) {
  if (j.is_string()) {
    double v = 0.0;
    if (csv::parse_double(j.get<std::string>(), v)) return v;
  }
  return config_value<double>(j, key);
}

}  // namespace detail

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::invalid_parameter, "config must be a JSON object");
  SimConfig c;
  for (const auto& [key, val] : j.items()) {
    if (key == "model") {
      const auto s = detail::config_value<std::string>(val, key);
      if (s == "ar1")
        c.model = CovarianceKind::ar1;
      else if (s == "isotropic")
        c.model = CovarianceKind::isotropic;
      else
        throw Error(ErrorKind::invalid_parameter, "config key 'model': expected \"ar1\" or \"isotropic\"");
    } else if (key == "phi") {
      c.phi = detail::config_double(val, key);
    } else if (key == "phi_s_grid") {
      require(val.is_array(), ErrorKind::invalid_parameter, "config key 'phi_s_grid' must be an array");
      c.phi_s_grid.clear();
      for (const auto& v : val) c.phi_s_grid.push_back(detail::config_double(v, key));
    } else if (key == "k_grid") {
      c.k_grid = detail::config_value<std::vector<Eigen::Index>>(val, key);
    } else if (key == "lambda_grid") {
      require(val.is_array(), ErrorKind::invalid_parameter, "config key 'lambda_grid' must be an array");
      c.lambda_grid.clear();
      for (const auto& v : val) c.lambda_grid.push_back(detail::config_double(v, key));
    } else if (key == "M_list") {
      c.m_list = detail::config_value<std::vector<std::size_t>>(val, key);
    } else if (key == "p") {
      c.p = detail::config_value<Eigen::Index>(val, key);
    } else if (key == "reps") {
      c.reps = detail::config_value<std::size_t>(val, key);
    } else if (key == "rho_ar1") {
      c.rho_ar1 = detail::config_double(val, key);
    } else if (key == "rho2") {
      c.rho2 = detail::config_double(val, key);
    } else if (key == "sigma2") {
      c.sigma2 = detail::config_double(val, key);
    } else if (key == "master_seed") {
      c.master_seed = detail::config_value<std::uint64_t>(val, key);
    } else if (key == "test_size") {
      c.test_size = detail::config_value<Eigen::Index>(val, key);
    } else {
      throw Error(ErrorKind::invalid_parameter, "unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

/// Parses a config document; syntax errors report the offending line.
inline SimConfig parse_sim_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::invalid_parameter,
                "config parse error at line " + std::to_string(detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                    ": " + e.what());
  }
  return sim_config_from_json(j);
}

inline nlohmann::json to_json(const SimConfig& c) {
  nlohmann::json j;
  j["model"] = c.model == CovarianceKind::ar1 ? "ar1" : "isotropic";
  j["phi"] = c.phi;
  if (!c.k_grid.empty()) {
    j["k_grid"] = c.k_grid;
  } else {
    auto arr = nlohmann::json::array();
    for (double v : c.phi_s_grid) arr.push_back(std::isinf(v) ? nlohmann::json("inf") : nlohmann::json(v));
    j["phi_s_grid"] = arr;
  }
  j["lambda_grid"] = c.lambda_grid;
  j["M_list"] = c.m_list;
  j["p"] = c.p;
  j["reps"] = c.reps;
  j["rho_ar1"] = c.rho_ar1;
  j["rho2"] = c.rho2;
  j["sigma2"] = c.sigma2;
  j["master_seed"] = c.master_seed;
  j["test_size"] = c.test_size;
  return j;
}

}  // namespace ensgcv
