#pragma once

// Command implementations behind the `ensgcv` executable. Each command takes
// a plain options struct, writes its outputs atomically and returns a
// RunManifest describing them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ensgcv/csv.hpp"
#include "ensgcv/ensemble.hpp"
#include "ensgcv/error.hpp"
#include "ensgcv/montecarlo.hpp"
#include "ensgcv/risk_theory.hpp"
#include "ensgcv/rng.hpp"
#include "ensgcv/spectra.hpp"
#include "ensgcv/tuning.hpp"

namespace ensgcv {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

/// Parses `lo:hi:count`, `lo:hi:count:log`, a comma list, or one value.
/// Values may be `inf`.
inline std::vector<double> parse_grid(const std::string& text) {
  auto number = [&](const std::string& s) {
    double v = 0.0;
    if (!csv::parse_double(s, v) || std::isnan(v))
      throw Error(ErrorKind::invalid_parameter, "invalid grid value '" + s + "' in '" + text + "'");
    return v;
  };
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    require(parts.size() == 3 || parts.size() == 4, ErrorKind::invalid_parameter,
            "grid '" + text + "' must be lo:hi:count or lo:hi:count:log");
    const double lo = number(parts[0]);
    const double hi = number(parts[1]);
    const double count_d = number(parts[2]);
    require(count_d >= 1.0 && count_d == std::floor(count_d) && count_d <= 1e6, ErrorKind::invalid_parameter,
            "grid count must be a positive integer in '" + text + "'");
    require(std::isfinite(lo) && std::isfinite(hi) && lo <= hi, ErrorKind::invalid_parameter,
            "grid '" + text + "' needs finite lo <= hi");
    const bool log_scale = parts.size() == 4;
    if (log_scale)
      require(parts[3] == "log" && lo > 0.0, ErrorKind::invalid_parameter,
              "log grid '" + text + "' needs the suffix 'log' and lo > 0");
    const auto count = static_cast<std::size_t>(count_d);
    std::vector<double> out(count);
    if (count == 1) {
      require(lo == hi, ErrorKind::invalid_parameter, "a one-point grid needs lo == hi");
      out[0] = lo;
      return out;
    }
    for (std::size_t i = 0; i < count; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(count - 1);
      out[i] = log_scale ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))) : lo + t * (hi - lo);
    }
    out.back() = hi;
    return out;
  }
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) out.push_back(number(part));
  require(!out.empty(), ErrorKind::invalid_parameter, "empty grid");
  return out;
}

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t master_seed = 0;
  std::vector<fs::path> outputs;
  double wall_clock_seconds = 0.0;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["master_seed"] = master_seed;
    j["version"] = kVersion;
    auto files = nlohmann::json::array();
    for (const auto& p : outputs) files.push_back(p.string());
    j["outputs"] = files;
    j["wall_clock_seconds"] = wall_clock_seconds;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    return j;
  }

  /// Writes `name` into `dir` and adds it to the output list.
  void write(const fs::path& dir, const std::string& name = "manifest.json") {
    const auto path = dir / name;
    outputs.push_back(path);
    csv::write_atomic(path, to_json().dump(2) + "\n");
  }
};

namespace detail {

inline nlohmann::json json_number(double x) {
  if (std::isfinite(x)) return x;
  return csv::format_double(x);
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorKind::io, "cannot create output directory '" + dir.string() + "'");
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// theory-surface

struct TheorySurfaceOptions {
  double phi = 0.1;
  std::string model = "ar1";  // or "isotropic"
  double rho_ar1 = 0.5;
  Eigen::Index p_ref = 500;
  double rho2 = 1.0;  // isotropic only
  double sigma2 = 1.0;
  std::string lambda_grid = "0:0.5:51";
  std::string phi_s_grid = "0.1:10:51";
  std::string ensemble_size = "inf";
  fs::path out_dir = "theory_surface";
};

inline ModelSpec surface_model(const TheorySurfaceOptions& o) {
  if (o.model == "isotropic") return isotropic_model(o.rho2, o.sigma2);
  require(o.model == "ar1", ErrorKind::invalid_parameter, "model must be 'ar1' or 'isotropic'");
  return ar1_model(o.rho_ar1, o.p_ref, o.sigma2).spec;
}

inline EnsembleSize parse_ensemble_size(const std::string& s) {
  if (s == "inf") return EnsembleSize::full();
  double v = 0.0;
  require(csv::parse_double(s, v) && v >= 1.0 && v == std::floor(v), ErrorKind::invalid_parameter,
          "ensemble size must be a positive integer or 'inf'");
  return EnsembleSize(static_cast<std::size_t>(v));
}

inline RunManifest cmd_theory_surface(const TheorySurfaceOptions& o, std::ostream& log = std::cerr) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto lambdas = parse_grid(o.lambda_grid);
  const auto phis = parse_grid(o.phi_s_grid);
  for (double l : lambdas) require(l >= 0.0, ErrorKind::invalid_parameter, "lambda grid values must be >= 0");
  for (double s : phis) require(s > 0.0, ErrorKind::invalid_parameter, "phi_s grid values must be > 0");
  require(o.phi > 0.0 && std::isfinite(o.phi), ErrorKind::invalid_parameter, "phi must be positive");
  const auto model = surface_model(o);
  const auto m = parse_ensemble_size(o.ensemble_size);

  const Eigen::MatrixXd surface = risk_surface(lambdas, phis, o.phi, m, model);
  std::size_t undefined = 0;
  for (Eigen::Index i = 0; i < surface.size(); ++i) undefined += std::isnan(surface.data()[i]) ? 1 : 0;
  if (undefined > 0)
    log << "warning: " << undefined << " grid cell(s) undefined (phi_s < phi, excluded boundary or divergence); written as nan\n";

  detail::ensure_dir(o.out_dir);
  RunManifest man;
  man.command = "theory-surface";
  man.config = {{"phi", o.phi},          {"model", o.model},       {"rho_ar1", o.rho_ar1},
                {"p_ref", o.p_ref},      {"rho2", o.rho2},         {"sigma2", o.sigma2},
                {"lambda", o.lambda_grid}, {"phis", o.phi_s_grid}, {"M", o.ensemble_size}};

  std::ostringstream os;
  write_surface_csv(os, lambdas, phis, surface);
  const auto surface_path = o.out_dir / "surface.csv";
  csv::write_atomic(surface_path, os.str());
  man.outputs.push_back(surface_path);

  nlohmann::json markers;
  try {
    const auto lam = optimal_lambda(o.phi, model);
    const auto sub = optimal_subsample(o.phi, model);
    markers["lambda_star"] = detail::json_number(lam.argument);
    markers["risk_at_lambda_star"] = detail::json_number(lam.risk);
    markers["phi_s_star"] = detail::json_number(sub.argument);
    markers["risk_at_phi_s_star"] = detail::json_number(sub.risk);
    auto segment = nlohmann::json::array();
    if (std::isfinite(sub.argument) && sub.argument > o.phi) {
      const double lambda_bar = contour_lambda_for_phis(sub.argument, o.phi, model.H);
      markers["segment_lambda_bar"] = detail::json_number(lambda_bar);
      for (int i = 0; i <= 10; ++i) {
        const auto pt = equivalence_path(lambda_bar, sub.argument, o.phi, i / 10.0);
        const double r = asymptotic_risk(pt.lambda, EnsembleSize::full(), {o.phi, pt.phi_s}, model).total;
        segment.push_back({{"theta", pt.theta}, {"lambda", pt.lambda}, {"phi_s", pt.phi_s}, {"risk", r}});
      }
    }
    markers["optimal_segment"] = segment;
  } catch (const Error& e) {
    log << "warning: optimum markers unavailable: " << e.what() << "\n";
  }
  man.extra["markers"] = markers;
  man.wall_clock_seconds = detail::seconds_since(t0);
  man.write(o.out_dir);
  return man;
}

// ---------------------------------------------------------------------------
// sim

struct SimOptions {
  fs::path config_path;
  fs::path out_dir = "sim";
  std::optional<std::uint64_t> seed_override;
};

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunManifest cmd_sim(const SimOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  auto config = parse_sim_config(read_text(o.config_path));
  if (o.seed_override) config.master_seed = *o.seed_override;
  const auto result = run_experiment(config);

  detail::ensure_dir(o.out_dir);
  RunManifest man;
  man.command = "sim";
  man.config = to_json(config);
  man.master_seed = config.master_seed;
  const auto tidy = o.out_dir / "tidy.csv";
  const auto agg = o.out_dir / "aggregate.csv";
  csv::write_atomic(tidy, result.tidy_csv());
  csv::write_atomic(agg, result.aggregate_csv());
  man.outputs = {tidy, agg};
  man.extra["n"] = result.n;
  man.wall_clock_seconds = detail::seconds_since(t0);
  man.write(o.out_dir);
  return man;
}

// ---------------------------------------------------------------------------
// tune

struct TuneOptions {
  fs::path data_path;
  std::string target;
  double lambda = 0.0;
  std::size_t ensemble_size = 50;
  double nu = 0.5;
  std::uint64_t seed = 0;
  double holdout = 0.5;
  std::string baseline_lambda_grid;  // empty: no baseline
  fs::path out_dir = "tune";
};

struct LoadedData {
  std::vector<std::string> feature_names;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

inline LoadedData load_csv_dataset(const fs::path& path, const std::string& target) {
  const auto table = csv::read_table(path);
  const auto it = std::find(table.header.begin(), table.header.end(), target);
  if (it == table.header.end()) throw Error(ErrorKind::invalid_data, "target column '" + target + "' not found");
  const auto target_col = static_cast<std::size_t>(it - table.header.begin());
  require(table.header.size() >= 2, ErrorKind::invalid_data, "need at least one feature column");
  LoadedData d;
  for (std::size_t c = 0; c < table.header.size(); ++c)
    if (c != target_col) d.feature_names.push_back(table.header[c]);
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  d.X.resize(n, static_cast<Eigen::Index>(d.feature_names.size()));
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    Eigen::Index j = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      double v = 0.0;
      if (!csv::parse_double(row[c], v) || !std::isfinite(v))
        throw Error(ErrorKind::invalid_data, "non-numeric or non-finite cell at line " + std::to_string(i + 2) +
                                                 ", column '" + table.header[c] + "'");
      if (c == target_col)
        d.y[i] = v;
      else
        d.X(i, j++) = v;
    }
  }
  return d;
}

inline void write_dataset_csv(const fs::path& path, const Dataset& data, const std::string& target = "y") {
  std::ostringstream os;
  for (Eigen::Index j = 0; j < data.p(); ++j) os << 'x' << j << ',';
  os << target << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index j = 0; j < data.p(); ++j) os << csv::format_double(data.X(i, j)) << ',';
    os << csv::format_double(data.y[i]) << '\n';
  }
  csv::write_atomic(path, os.str());
}

struct TrainHoldoutSplit {
  Dataset train;
  Dataset holdout;
  double y_center = 0.0;
};

/// Seeded permutation split; features standardized and the target centered
/// with training-split statistics only.
inline TrainHoldoutSplit split_and_standardize(const LoadedData& d, double holdout, std::uint64_t seed) {
  const auto n = d.X.rows();
  require(n >= 4, ErrorKind::invalid_data, "need at least 4 rows");
  require(holdout > 0.0 && holdout < 1.0, ErrorKind::invalid_parameter, "holdout fraction must lie in (0,1)");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  auto rng = make_rng(seed, {0x5e11});
  std::shuffle(perm.begin(), perm.end(), rng);
  auto n_hold = static_cast<Eigen::Index>(std::llround(holdout * static_cast<double>(n)));
  n_hold = std::clamp<Eigen::Index>(n_hold, 1, n - 2);
  const std::vector<Eigen::Index> hold_idx(perm.begin(), perm.begin() + n_hold);
  const std::vector<Eigen::Index> train_idx(perm.begin() + n_hold, perm.end());

  TrainHoldoutSplit s;
  s.train.X = d.X(train_idx, Eigen::all);
  s.train.y = d.y(train_idx);
  s.holdout.X = d.X(hold_idx, Eigen::all);
  s.holdout.y = d.y(hold_idx);

  const Eigen::RowVectorXd mean = s.train.X.colwise().mean();
  const double nt = static_cast<double>(s.train.X.rows());
  Eigen::RowVectorXd sd = ((s.train.X.rowwise() - mean).array().square().colwise().sum() / std::max(1.0, nt - 1.0)).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (!(sd[j] > 0.0)) sd[j] = 1.0;
  s.train.X = (s.train.X.rowwise() - mean).array().rowwise() / sd.array();
  s.holdout.X = (s.holdout.X.rowwise() - mean).array().rowwise() / sd.array();
  s.y_center = s.train.y.mean();
  s.train.y.array() -= s.y_center;
  s.holdout.y.array() -= s.y_center;
  return s;
}

inline nlohmann::json tune_result_json(const TuneResult& r, double holdout_mse) {
  nlohmann::json j;
  j["k_hat"] = r.k_hat;
  j["gcv_at_k_hat"] = detail::json_number(r.gcv_at_k_hat);
  j["holdout_mse"] = detail::json_number(holdout_mse);
  auto path = nlohmann::json::array();
  for (const auto& e : r.path)
    path.push_back({{"k", e.k}, {"gcv", detail::json_number(e.gcv)}, {"degenerate", e.degenerate},
                    {"at_threshold", e.at_threshold}});
  j["path"] = path;
  j["lambda_hat"] = r.lambda_hat ? detail::json_number(*r.lambda_hat) : nlohmann::json(nullptr);
  j["warnings"] = r.warnings;
  return j;
}

inline RunManifest cmd_tune(const TuneOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  require(o.ensemble_size >= 1, ErrorKind::invalid_parameter, "M must be >= 1");
  require(o.lambda >= 0.0 && std::isfinite(o.lambda), ErrorKind::invalid_parameter, "lambda must be >= 0");
  const auto loaded = load_csv_dataset(o.data_path, o.target);
  const auto split = split_and_standardize(loaded, o.holdout, o.seed);
  const auto grid = subsample_grid(split.train.n(), o.nu);

  auto holdout_mse = [&](const Eigen::VectorXd& coef) {
    return (split.holdout.y - split.holdout.X * coef).squaredNorm() / static_cast<double>(split.holdout.n());
  };

  auto result = tune_k(split.train, o.lambda, grid, o.ensemble_size, o.seed);
  nlohmann::json out = tune_result_json(result, holdout_mse(result.coefficients));
  if (o.lambda > 0.0) {
    const auto at_zero = tune_k(split.train, 0.0, grid, o.ensemble_size, o.seed);
    out["k_hat_lambda0"] = at_zero.k_hat;
    try {
      result.lambda_hat = lambda_hat(at_zero.k_hat, result.k_hat, o.lambda, split.train.n());
      out["lambda_hat"] = *result.lambda_hat;
    } catch (const Error& e) {
      out["lambda_hat"] = nullptr;
      out["warnings"].push_back(e.what());
    }
  }
  if (!o.baseline_lambda_grid.empty()) {
    const auto base = tune_lambda(split.train, parse_grid(o.baseline_lambda_grid), o.seed);
    out["baseline"] = {{"lambda", base.lambda},
                       {"gcv", detail::json_number(base.gcv)},
                       {"holdout_mse", holdout_mse(base.coefficients)}};
  }
  out["n_train"] = split.train.n();
  out["n_holdout"] = split.holdout.n();
  out["p"] = split.train.p();

  detail::ensure_dir(o.out_dir);
  RunManifest man;
  man.command = "tune";
  man.config = {{"data", o.data_path.string()}, {"target", o.target},  {"lambda", o.lambda},
                {"M", o.ensemble_size},         {"nu", o.nu},          {"seed", o.seed},
                {"holdout", o.holdout},         {"baseline_lambda", o.baseline_lambda_grid}};
  man.master_seed = o.seed;
  const auto json_path = o.out_dir / "tune.json";
  csv::write_atomic(json_path, out.dump(2) + "\n");
  std::ostringstream path_csv;
  path_csv << "k,gcv,degenerate,at_threshold\n";
  for (const auto& e : result.path)
    path_csv << e.k << ',' << csv::format_double(e.gcv) << ',' << (e.degenerate ? 1 : 0) << ','
             << (e.at_threshold ? 1 : 0) << '\n';
  const auto path_path = o.out_dir / "path.csv";
  csv::write_atomic(path_path, path_csv.str());
  std::ostringstream coef_csv;
  coef_csv << "feature,coefficient\n";
  for (std::size_t j = 0; j < loaded.feature_names.size(); ++j)
    coef_csv << loaded.feature_names[j] << ',' << csv::format_double(result.coefficients[static_cast<Eigen::Index>(j)])
             << '\n';
  const auto coef_path = o.out_dir / "coefficients.csv";
  csv::write_atomic(coef_path, coef_csv.str());
  man.outputs = {json_path, path_path, coef_path};
  man.extra["result"] = out;
  man.wall_clock_seconds = detail::seconds_since(t0);
  man.write(o.out_dir);
  return man;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOptions {
  Eigen::Index n = 1000;
  Eigen::Index p = 100;
  double rho_ar1 = 0.5;
  double sigma2 = 1.0;
  std::uint64_t seed = 0;
  fs::path out_path = "data.csv";
};

inline RunManifest cmd_generate(const GenerateOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto [data, beta0] = generate_ar1(o.n, o.p, o.rho_ar1, o.sigma2, o.seed);
  const auto dir = o.out_path.has_parent_path() ? o.out_path.parent_path() : fs::path(".");
  detail::ensure_dir(dir);
  write_dataset_csv(o.out_path, data);
  RunManifest man;
  man.command = "generate";
  man.config = {{"n", o.n}, {"p", o.p}, {"rho_ar1", o.rho_ar1}, {"sigma2", o.sigma2}, {"seed", o.seed}};
  man.master_seed = o.seed;
  man.outputs = {o.out_path};
  man.wall_clock_seconds = detail::seconds_since(t0);
  man.write(dir, o.out_path.stem().string() + ".manifest.json");
  return man;
}

}  // namespace ensgcv
