#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kSmall =
    "beam.l = 1\nbeam.b = 1\nbeam.lambda.modulation = 0.5\ngrid.n = 8\ntime.T = 0.05\ntime.dt = 1e-3\n"
    "noise.seed = 11\nrun.N = 3\nrun.observables = 1:3:u, 1:1:v\n";

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fibersde_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // Runs the CLI and returns its exit status; stdout and stderr go to log.txt.
  int run(const std::string& args) const {
    const std::string cmd = std::string(FIBERSDE_CLI) + " " + args + " > " + (dir_ / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string log() const { return read(dir_ / "log.txt"); }

  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::vector<std::string> lines(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateWritesExpectedRows) {
  const fs::path cfg = write_config("a.cfg", kSmall);
  ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + (dir_ / "out").string()), 0) << log();
  // 3 paths x 50 post-step times x 10 nodes x 3 channels, plus the header.
  EXPECT_EQ(lines(dir_ / "out" / "trajectory.csv").size(), 1u + 3 * 50 * 10 * 3);
  EXPECT_EQ(lines(dir_ / "out" / "observables.csv").size(), 1u + 3 * 50 * 2);
  EXPECT_EQ(lines(dir_ / "out" / "trajectory.csv").front(), "path,t,s,channel,u,v");
  EXPECT_EQ(lines(dir_ / "out" / "observables.csv").front(), "path,t,observable_id,value");
  const auto manifest = nlohmann::json::parse(read(dir_ / "out" / "manifest.json"));
  EXPECT_EQ(manifest.at("command"), "simulate");
  EXPECT_EQ(manifest.at("seed"), 11);
  EXPECT_EQ(manifest.at("outputs").size(), 3u);
}

TEST_F(Cli, SimulateIsByteReproducibleAcrossRunsAndThreads) {
  const fs::path one = write_config("one.cfg", kSmall + "run.threads = 1\n");
  const fs::path four = write_config("four.cfg", kSmall + "run.threads = 4\n");
  ASSERT_EQ(run("simulate --config " + one.string() + " --out " + (dir_ / "a").string()), 0) << log();
  ASSERT_EQ(run("simulate --config " + one.string() + " --out " + (dir_ / "b").string()), 0) << log();
  ASSERT_EQ(run("simulate --config " + four.string() + " --out " + (dir_ / "c").string()), 0) << log();
  for (const char* file : {"trajectory.csv", "observables.csv"}) {
    const std::string a = read(dir_ / "a" / file);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, read(dir_ / "b" / file)) << file;
    EXPECT_EQ(a, read(dir_ / "c" / file)) << file;
  }
}

TEST_F(Cli, OverridesChangePathsAndSeed) {
  const fs::path cfg = write_config("a.cfg", kSmall);
  ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + (dir_ / "a").string()), 0) << log();
  ASSERT_EQ(run("simulate --config " + cfg.string() + " --paths 1 --seed 12 --out " + (dir_ / "b").string()), 0) << log();
  EXPECT_EQ(lines(dir_ / "b" / "observables.csv").size(), 1u + 50 * 2);
  const auto manifest = nlohmann::json::parse(read(dir_ / "b" / "manifest.json"));
  EXPECT_EQ(manifest.at("seed"), 12);
  const auto a = lines(dir_ / "a" / "observables.csv");
  const auto b = lines(dir_ / "b" / "observables.csv");
  EXPECT_NE(std::vector<std::string>(a.begin() + 1, a.begin() + 1 + 50 * 2), std::vector<std::string>(b.begin() + 1, b.end()));
  EXPECT_NE(run("simulate --config " + cfg.string() + " --paths 0 --out " + (dir_ / "c").string()), 0);
}

TEST_F(Cli, NoiselessPathsAreIdentical) {
  const fs::path quiet = write_config("quiet.cfg", "beam.l = 1\nbeam.b = 1\ngrid.n = 8\ntime.T = 0.05\ntime.dt = 1e-3\n"
                                                   "noise.sigma = 0\nrun.N = 2\ninit.v1 = s^4 - 4*s + 3\n");
  ASSERT_EQ(run("simulate --config " + quiet.string() + " --out " + (dir_ / "out").string()), 0) << log();
  const auto rows = lines(dir_ / "out" / "trajectory.csv");
  const std::size_t per_path = (rows.size() - 1) / 2;
  ASSERT_EQ(per_path, 50u * 10 * 3);
  for (std::size_t i = 1; i <= per_path; ++i) {
    const std::string a = rows[i], b = rows[i + per_path];
    ASSERT_EQ(a.substr(0, 2), "0,");
    ASSERT_EQ(b.substr(0, 2), "1,");
    ASSERT_EQ(a.substr(2), b.substr(2)) << "row " << i;
  }
}

TEST_F(Cli, VerifyPassesOnDefaultProblem) {
  const fs::path cfg = write_config("a.cfg", kSmall);
  EXPECT_EQ(run("verify --config " + cfg.string() + " --out " + (dir_ / "out").string()), 0) << log();
  EXPECT_NE(log().find("all checks passed"), std::string::npos);
  const auto rows = lines(dir_ / "out" / "checks.csv");
  ASSERT_GT(rows.size(), 10u);
  EXPECT_EQ(rows.front().rfind("check,status,value,threshold", 0), 0u) << rows.front();
  const auto manifest = nlohmann::json::parse(read(dir_ / "out" / "manifest.json"));
  EXPECT_EQ(manifest.at("checks").size(), rows.size() - 1);
}

TEST_F(Cli, VerifyFailsOnBrokenTraction) {
  const fs::path cfg = write_config("a.cfg", "beam.l = 1\nbeam.b = 1\ngrid.n = 8\ntime.T = 0.05\ntime.dt = 1e-3\n"
                                             "beam.lambda = tabulated\nbeam.lambda.table = 0.5, 0.8, 1, 0.8, 0.5\n");
  EXPECT_EQ(run("verify --config " + cfg.string() + " --out " + (dir_ / "out").string()), 1) << log();
  EXPECT_NE(log().find("tractive_force.invariants"), std::string::npos) << log();
  EXPECT_NE(read(dir_ / "out" / "checks.csv").find("tractive_force.invariants,fail"), std::string::npos);
}

TEST_F(Cli, VerifySkipsNoiseChecksWithoutNoise) {
  const fs::path cfg = write_config("a.cfg", "beam.l = 1\nbeam.b = 1\ngrid.n = 8\ntime.T = 0.05\ntime.dt = 1e-3\nnoise.sigma = 0\n");
  EXPECT_EQ(run("verify --config " + cfg.string() + " --out " + (dir_ / "out").string()), 0) << log();
  const std::string checks = read(dir_ / "out" / "checks.csv");
  EXPECT_NE(checks.find("trace.bound,skip"), std::string::npos) << checks;
  EXPECT_NE(checks.find("ito.monte_carlo,skip"), std::string::npos) << checks;
}

TEST_F(Cli, VerifyOrderStudiesFollowTheWindow) {
  const fs::path odd = write_config("odd.cfg", "beam.l = 1\nbeam.b = 1\nbeam.lambda.modulation = 0.5\ngrid.n = 8\n"
                                               "time.T = 0.05\ntime.dt = 1e-3\n");
  EXPECT_EQ(run("verify --config " + odd.string() + " --out " + (dir_ / "a").string()), 0) << log();
  EXPECT_NE(read(dir_ / "a" / "checks.csv").find("propagator.generator_order,pass"), std::string::npos);
  const fs::path tiny = write_config("tiny.cfg", "beam.l = 1\nbeam.b = 1\nbeam.lambda.modulation = 0.5\ngrid.n = 8\n"
                                                 "time.T = 0.002\ntime.dt = 1e-3\n");
  EXPECT_EQ(run("verify --config " + tiny.string() + " --out " + (dir_ / "b").string()), 0) << log();
  const std::string checks = read(dir_ / "b" / "checks.csv");
  EXPECT_NE(checks.find("propagator.generator_order,skip"), std::string::npos) << checks;
  EXPECT_NE(checks.find("adjoint.backward_order,skip"), std::string::npos) << checks;
}

TEST_F(Cli, VerifyAddsShiftChecksForNonhomogeneousProblem) {
  const fs::path cfg = write_config("a.cfg", "beam.l = 1\nbeam.b = 1\ngrid.n = 8\ntime.T = 0.05\ntime.dt = 1e-3\n"
                                             "beam.bc = nonhomogeneous\n");
  EXPECT_EQ(run("verify --config " + cfg.string() + " --out " + (dir_ / "out").string()), 0) << log();
  const std::string checks = read(dir_ / "out" / "checks.csv");
  EXPECT_NE(checks.find("shift.stationary,pass"), std::string::npos) << checks;
  EXPECT_NE(checks.find("shift.consistency,pass"), std::string::npos) << checks;
}

TEST_F(Cli, CovarianceAndTraceCheck) {
  const fs::path cfg = write_config("a.cfg", "beam.l = 1\nbeam.b = 1\ngrid.n = 8\ntime.T = 0.05\ntime.dt = 1e-3\n"
                                             "run.N = 200\nrun.output_stride = 10\n");
  ASSERT_EQ(run("covariance --config " + cfg.string() + " --observable 1:2:v --out " + (dir_ / "cov").string()), 0) << log();
  const auto rows = lines(dir_ / "cov" / "covariance.csv");
  EXPECT_EQ(rows.size(), 1u + 6);
  EXPECT_NE(log().find("observable 1:2:v"), std::string::npos) << log();
  ASSERT_EQ(run("trace-check --config " + cfg.string() + " --out " + (dir_ / "tr").string()), 0) << log();
  EXPECT_EQ(lines(dir_ / "tr" / "trace.csv").size(), 1u + 51);
  const auto manifest = nlohmann::json::parse(read(dir_ / "tr" / "manifest.json"));
  EXPECT_EQ(manifest.at("checks").size(), 2u);
}

TEST_F(Cli, ConfigErrorsExitWithStatusTwo) {
  const fs::path bad = write_config("bad.cfg", "beam.l = 1\nbeam.b = 1\ngrid.n = 8\ntime.T = 1\ntime.dt = 0.3\n");
  EXPECT_EQ(run("simulate --config " + bad.string() + " --out " + (dir_ / "out").string()), 2);
  EXPECT_NE(log().find("config error:"), std::string::npos) << log();
  EXPECT_NE(log().find("dt must divide T"), std::string::npos) << log();
  const fs::path unknown = write_config("unknown.cfg", kSmall + "beam.colour = red\n");
  EXPECT_EQ(run("verify --config " + unknown.string() + " --out " + (dir_ / "out").string()), 2);
  EXPECT_NE(log().find("beam.colour"), std::string::npos) << log();
}

TEST_F(Cli, UsageErrors) {
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("simulate"), 0);
  EXPECT_NE(run("simulate --config " + (dir_ / "missing.cfg").string()), 0);
  EXPECT_NE(run("explode --config x"), 0);
}
