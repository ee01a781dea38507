#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ensgcv/commands.hpp"
#include "ensgcv/csv.hpp"

using namespace ensgcv;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(fs::temp_directory_path() / ("ensgcv-test-" + name + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) { return read_text(p); }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ENSGCV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST(ParseGrid, Forms) {
  EXPECT_EQ(parse_grid("0:1:3"), (std::vector<double>{0.0, 0.5, 1.0}));
  const auto lg = parse_grid("0.01:100:5:log");
  ASSERT_EQ(lg.size(), 5u);
  EXPECT_NEAR(lg[1], 0.1, 1e-12);
  EXPECT_EQ(lg.back(), 100.0);
  EXPECT_EQ(parse_grid("1,2.5,inf").size(), 3u);
  EXPECT_TRUE(std::isinf(parse_grid("1,2.5,inf")[2]));
  EXPECT_EQ(parse_grid("0.3"), (std::vector<double>{0.3}));
  EXPECT_EQ(parse_grid("2:2:1"), (std::vector<double>{2.0}));
  EXPECT_THROW(parse_grid("1:0:3"), Error);
  EXPECT_THROW(parse_grid("0:1:3:log"), Error);
  EXPECT_THROW(parse_grid("0:1:2.5"), Error);
  EXPECT_THROW(parse_grid("a,b"), Error);
  EXPECT_THROW(parse_grid(""), Error);
}

TEST(TheorySurface, DefaultGridShapeAndMarkers) {
  TempDir dir("surface");
  TheorySurfaceOptions o;
  o.phi = 0.1;
  o.p_ref = 200;
  o.out_dir = dir.path();
  std::ostringstream log;
  const auto man = cmd_theory_surface(o, log);
  const auto lines = lines_of(slurp(dir.path() / "surface.csv"));
  ASSERT_EQ(lines.size(), 52u);
  for (const auto& l : lines) EXPECT_EQ(std::count(l.begin(), l.end(), ','), 51);
  const auto manifest = nlohmann::json::parse(slurp(dir.path() / "manifest.json"));
  EXPECT_EQ(manifest["command"], "theory-surface");
  EXPECT_TRUE(manifest.contains("markers"));
  EXPECT_EQ(man.outputs.front(), dir.path() / "surface.csv");
}

TEST(TheorySurface, SinglePointGrid) {
  TempDir dir("surface1");
  TheorySurfaceOptions o;
  o.phi = 0.5;
  o.model = "isotropic";
  o.lambda_grid = "0.1";
  o.phi_s_grid = "1";
  o.ensemble_size = "1";
  o.out_dir = dir.path();
  std::ostringstream log;
  cmd_theory_surface(o, log);
  const auto lines = lines_of(slurp(dir.path() / "surface.csv"));
  ASSERT_EQ(lines.size(), 2u);
  const auto value = std::stod(lines[1].substr(lines[1].find(',') + 1));
  EXPECT_NEAR(value, asymptotic_risk(0.1, 1, {0.5, 1.0}, isotropic_model(1.0, 1.0)).total, 1e-12);
}

TEST(TheorySurface, UndefinedCellsAreNanWithWarning) {
  TempDir dir("surface-nan");
  TheorySurfaceOptions o;
  o.phi = 0.5;
  o.model = "isotropic";
  o.lambda_grid = "0,0.5";
  o.phi_s_grid = "1,2";
  o.ensemble_size = "1";
  o.out_dir = dir.path();
  std::ostringstream log;
  cmd_theory_surface(o, log);
  const auto lines = lines_of(slurp(dir.path() / "surface.csv"));
  EXPECT_NE(lines[1].find("nan"), std::string::npos);  // lambda = 0, phi_s = 1
  EXPECT_FALSE(log.str().empty());
}

TEST(TheorySurface, RejectsBadInput) {
  TempDir dir("surface-bad");
  TheorySurfaceOptions o;
  o.out_dir = dir.path();
  o.model = "cauchy";
  std::ostringstream log;
  EXPECT_THROW(cmd_theory_surface(o, log), Error);
  o.model = "isotropic";
  o.lambda_grid = "-1,0";
  EXPECT_THROW(cmd_theory_surface(o, log), Error);
}

TEST(Sim, WritesOutputsAndSeedOverride) {
  TempDir dir("sim");
  const auto config = dir.path() / "config.json";
  write_file(config,
             R"({"model": "isotropic", "phi": 0.5, "p": 20, "phi_s_grid": [1, 2], "lambda_grid": [0.1],
                 "M_list": [1, 3], "reps": 2, "master_seed": 5})");
  SimOptions o;
  o.config_path = config;
  o.out_dir = dir.path() / "a";
  cmd_sim(o);
  for (const char* f : {"tidy.csv", "aggregate.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(o.out_dir / f)) << f;
  EXPECT_EQ(lines_of(slurp(o.out_dir / "tidy.csv")).size(), 1u + 2u * 2u * 2u);
  EXPECT_EQ(lines_of(slurp(o.out_dir / "aggregate.csv")).size(), 1u + 2u * 2u);
  const auto manifest = nlohmann::json::parse(slurp(o.out_dir / "manifest.json"));
  EXPECT_EQ(manifest["master_seed"], 5);

  SimOptions b = o;
  b.out_dir = dir.path() / "b";
  b.seed_override = 5;
  cmd_sim(b);
  EXPECT_EQ(slurp(o.out_dir / "tidy.csv"), slurp(b.out_dir / "tidy.csv"));
  b.out_dir = dir.path() / "c";
  b.seed_override = 6;
  cmd_sim(b);
  EXPECT_NE(slurp(o.out_dir / "tidy.csv"), slurp(b.out_dir / "tidy.csv"));
}

TEST(Sim, MissingConfigIsIoError) {
  SimOptions o;
  o.config_path = "/nonexistent/config.json";
  try {
    cmd_sim(o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(Tune, GeneratedDataRoundTrip) {
  TempDir dir("tune");
  GenerateOptions g;
  g.n = 200;
  g.p = 20;
  g.seed = 3;
  g.out_path = dir.path() / "data.csv";
  cmd_generate(g);
  EXPECT_TRUE(fs::exists(dir.path() / "data.manifest.json"));

  const auto loaded = load_csv_dataset(g.out_path, "y");
  const auto [truth, beta0] = generate_ar1(200, 20, 0.5, 1.0, 3);
  EXPECT_LE((loaded.X - truth.X).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((loaded.y - truth.y).cwiseAbs().maxCoeff(), 1e-15);

  TuneOptions t;
  t.data_path = g.out_path;
  t.target = "y";
  t.lambda = 0.1;
  t.ensemble_size = 5;
  t.baseline_lambda_grid = "0.01:10:5:log";
  t.out_dir = dir.path() / "out";
  cmd_tune(t);
  const auto result = nlohmann::json::parse(slurp(t.out_dir / "tune.json"));
  EXPECT_EQ(result["n_train"], 100);
  EXPECT_TRUE(result.contains("baseline"));
  EXPECT_TRUE(result.contains("k_hat_lambda0"));
  EXPECT_EQ(lines_of(slurp(t.out_dir / "coefficients.csv")).size(), 21u);
  EXPECT_EQ(lines_of(slurp(t.out_dir / "path.csv")).size(), 1u + subsample_grid(100).size());
}

TEST(Tune, ConstantTargetSelectsNullPredictor) {
  TempDir dir("tune-const");
  std::ostringstream os;
  os << "a,b,y\n";
  for (int i = 0; i < 30; ++i) os << i << ',' << (i * 7 % 11) << ",3.5\n";
  write_file(dir.path() / "d.csv", os.str());
  TuneOptions t;
  t.data_path = dir.path() / "d.csv";
  t.target = "y";
  t.ensemble_size = 3;
  t.out_dir = dir.path() / "out";
  cmd_tune(t);
  const auto result = nlohmann::json::parse(slurp(t.out_dir / "tune.json"));
  EXPECT_EQ(result["k_hat"], 0);
  EXPECT_EQ(result["gcv_at_k_hat"], 0.0);
}

TEST(Tune, DataErrors) {
  TempDir dir("tune-err");
  write_file(dir.path() / "ok.csv", "a,y\n1,2\n2,3\n3,5\n4,4\n5,1\n");
  write_file(dir.path() / "bad.csv", "a,y\n1,2\nx,3\n3,5\n4,4\n");
  write_file(dir.path() / "small.csv", "a,y\n1,2\n2,3\n3,5\n");
  auto kind_of = [&](const std::string& file, const std::string& target) {
    TuneOptions t;
    t.data_path = dir.path() / file;
    t.target = target;
    t.ensemble_size = 2;
    t.out_dir = dir.path() / "out";
    try {
      cmd_tune(t);
    } catch (const Error& e) {
      return std::optional<ErrorKind>(e.kind());
    }
    return std::optional<ErrorKind>();
  };
  EXPECT_EQ(kind_of("ok.csv", "missing"), ErrorKind::invalid_data);
  EXPECT_EQ(kind_of("bad.csv", "y"), ErrorKind::invalid_data);
  EXPECT_EQ(kind_of("small.csv", "y"), ErrorKind::invalid_data);
  EXPECT_FALSE(kind_of("ok.csv", "y").has_value());
}

TEST(Cli, ExitCodes) {
  TempDir dir("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_NE(run_cli("no-such-command"), 0);
  EXPECT_NE(run_cli("sim --config /nonexistent.json --out " + (dir.path() / "s").string()), 0);
  EXPECT_EQ(run_cli("verify --only 1,fixed-point --work-dir " + dir.path().string()), 0);
  EXPECT_NE(run_cli("verify --only 1 --work-dir " + (dir.path() / "missing").string()), 0);
  EXPECT_NE(run_cli("verify --only 99 --work-dir " + dir.path().string()), 0);
  EXPECT_EQ(run_cli("generate --n 20 --p 10 --out " + (dir.path() / "g.csv").string()), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "g.csv"));
}
