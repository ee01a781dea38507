#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ensgcv/acceptance.hpp"
#include "ensgcv/commands.hpp"

namespace fs = std::filesystem;

namespace {

int run_verify(const std::vector<std::string>& only, const std::string& work_dir) {
  ensgcv::acceptance::Context ctx;
  if (!work_dir.empty()) {
    if (!fs::is_directory(work_dir)) {
      std::cerr << "error: work directory '" << work_dir << "' does not exist\n";
      return 2;
    }
    ctx.work_dir = work_dir;
  } else {
    ctx.work_dir = fs::temp_directory_path() / "ensgcv-verify";
    fs::create_directories(ctx.work_dir);
  }
  for (const auto& s : only) {
    bool known = false;
    for (const auto& c : ensgcv::acceptance::criteria()) known = known || ensgcv::acceptance::selected(c, {s});
    if (!known) {
      std::cerr << "error: unknown criterion '" << s << "'\n";
      return 2;
    }
  }
  const auto reports = ensgcv::acceptance::run(ctx, only, std::cout);
  std::size_t failed = 0;
  for (const auto& r : reports) failed += r.passed ? 0 : 1;
  std::cout << (reports.size() - failed) << "/" << reports.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subsample ridge ensembles: asymptotic theory, simulation and GCV tuning"};
  app.require_subcommand(1);

  ensgcv::TheorySurfaceOptions ts;
  std::string ts_out = "theory_surface";
  auto* surface = app.add_subcommand("theory-surface", "Asymptotic risk over a (lambda, phi_s) grid");
  surface->add_option("--phi", ts.phi, "Data aspect ratio p/n")->required();
  surface->add_option("--model", ts.model, "ar1 or isotropic")->capture_default_str();
  surface->add_option("--rho-ar1", ts.rho_ar1, "AR(1) correlation")->capture_default_str();
  surface->add_option("--p-ref", ts.p_ref, "Dimension of the AR(1) reference spectrum")->capture_default_str();
  surface->add_option("--rho2", ts.rho2, "Signal energy (isotropic model)")->capture_default_str();
  surface->add_option("--sigma2", ts.sigma2, "Noise variance")->capture_default_str();
  surface->add_option("--lambda", ts.lambda_grid, "Grid lo:hi:count[:log] or list")->capture_default_str();
  surface->add_option("--phis", ts.phi_s_grid, "Grid lo:hi:count[:log] or list")->capture_default_str();
  surface->add_option("--M", ts.ensemble_size, "Ensemble size or inf")->capture_default_str();
  surface->add_option("--out", ts_out, "Output directory")->capture_default_str();

  ensgcv::SimOptions sim;
  std::string sim_config, sim_out = "sim";
  std::uint64_t sim_seed = 0;
  auto* simc = app.add_subcommand("sim", "Replicated Monte Carlo experiment from a JSON config");
  simc->add_option("--config", sim_config, "Config file (flat JSON object)")->required();
  simc->add_option("--out", sim_out, "Output directory")->capture_default_str();
  auto* seed_opt = simc->add_option("--seed", sim_seed, "Override master_seed");

  ensgcv::TuneOptions tune;
  std::string tune_data, tune_out = "tune";
  auto* tunec = app.add_subcommand("tune", "Tune the subsample size by GCV on a CSV dataset");
  tunec->add_option("--data", tune_data, "CSV file with a header row")->required();
  tunec->add_option("--target", tune.target, "Target column name")->required();
  tunec->add_option("--lambda", tune.lambda, "Ridge penalty")->capture_default_str();
  tunec->add_option("--M", tune.ensemble_size, "Ensemble size")->capture_default_str();
  tunec->add_option("--nu", tune.nu, "Grid exponent, k0 = floor(n^nu)")->capture_default_str();
  tunec->add_option("--seed", tune.seed, "Seed")->capture_default_str();
  tunec->add_option("--holdout", tune.holdout, "Holdout fraction")->capture_default_str();
  tunec->add_option("--baseline-lambda", tune.baseline_lambda_grid, "Lambda grid for the full-data baseline");
  tunec->add_option("--out", tune_out, "Output directory")->capture_default_str();

  ensgcv::GenerateOptions gen;
  std::string gen_out = "data.csv";
  auto* genc = app.add_subcommand("generate", "Write an AR(1) dataset as CSV");
  genc->add_option("--n", gen.n, "Rows")->capture_default_str();
  genc->add_option("--p", gen.p, "Features")->capture_default_str();
  genc->add_option("--rho-ar1", gen.rho_ar1, "AR(1) correlation")->capture_default_str();
  genc->add_option("--sigma2", gen.sigma2, "Noise variance")->capture_default_str();
  genc->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  genc->add_option("--out", gen_out, "Output CSV")->capture_default_str();

  std::vector<std::string> only;
  std::string work_dir;
  auto* verify = app.add_subcommand("verify", "Run the acceptance suite");
  verify->add_option("--only", only, "Criterion ids or names")->delimiter(',');
  verify->add_option("--work-dir", work_dir, "Existing directory for scratch outputs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*surface) {
      ts.out_dir = ts_out;
      const auto man = ensgcv::cmd_theory_surface(ts);
      for (const auto& p : man.outputs) std::cout << p.string() << '\n';
    } else if (*simc) {
      sim.config_path = sim_config;
      sim.out_dir = sim_out;
      if (*seed_opt) sim.seed_override = sim_seed;
      const auto man = ensgcv::cmd_sim(sim);
      for (const auto& p : man.outputs) std::cout << p.string() << '\n';
    } else if (*tunec) {
      tune.data_path = tune_data;
      tune.out_dir = tune_out;
      const auto man = ensgcv::cmd_tune(tune);
      std::cout << man.extra["result"].dump(2) << '\n';
    } else if (*genc) {
      gen.out_path = gen_out;
      const auto man = ensgcv::cmd_generate(gen);
      for (const auto& p : man.outputs) std::cout << p.string() << '\n';
    } else if (*verify) {
      return run_verify(only, work_dir);
    }
  } catch (const ensgcv::Error& e) {
    std::cerr << "error (" << ensgcv::to_string(e.kind()) << "): " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
