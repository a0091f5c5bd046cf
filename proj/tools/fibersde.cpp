// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <fibersde/fibersde.hpp>

namespace fs = std::filesystem;
using namespace fibersde;

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<int> paths;
  std::optional<std::uint64_t> seed;
  std::string observable;
};

SimulationConfig load(const Options& opt) {
  std::ifstream in(opt.config, std::ios::binary);
  if (!in) throw IoError("cannot read config '" + opt.config + "'");
  std::ostringstream text;
  text << in.rdbuf();
  SimulationConfig cfg = parse_config(text.str());
  if (opt.paths) {
    if (*opt.paths < 1) throw std::invalid_argument("--paths must be at least 1");
    cfg.paths = *opt.paths;
  }
  if (opt.seed) cfg.seed = *opt.seed;
  return cfg;
}

void finish(RunManifest& m, const Stopwatch& clock, const fs::path& dir) {
  m.wall_seconds = clock.seconds();
  m.outputs.push_back("manifest.json");
  write_text(dir / "manifest.json", manifest_to_text(m));
}

int simulate(const Options& opt) {
  const Stopwatch clock;
  const SimulationConfig cfg = load(opt);
  RunManifest m = start_manifest("simulate", cfg);
  const BeamProblem problem(cfg);
  const fs::path dir(opt.out);
  const SimulationFiles files = write_simulation(problem, dir);
  m.outputs = files.outputs;
  finish(m, clock, dir);
  fmt::print("simulate: {} path(s), {} steps, wrote {}\n", cfg.paths, problem.steps(), dir.string());
  return 0;
}

int verify(const Options& opt) {
  const Stopwatch clock;
  const SimulationConfig cfg = load(opt);
  RunManifest m = start_manifest("verify", cfg);
  m.checks = run_verification(cfg);
  fmt::print("{}", check_table(m.checks));
  const fs::path dir(opt.out);
  prepare_output_dir(dir);
  write_text(dir / "checks.csv", checks_csv(m.checks));
  m.outputs.push_back("checks.csv");
  finish(m, clock, dir);
  std::string failed;
  for (const auto& c : m.checks) {
    if (c.status == CheckStatus::fail) failed += (failed.empty() ? "" : ", ") + c.name;
  }
  if (!failed.empty()) {
    fmt::print(stderr, "verify: failed checks: {}\n", failed);
    return 1;
  }
  fmt::print("verify: all checks passed\n");
  return 0;
}

int covariance(const Options& opt) {
  const Stopwatch clock;
  const SimulationConfig cfg = load(opt);
  RunManifest m = start_manifest("covariance", cfg);
  const BeamProblem problem(cfg);
  const auto configured = parse_observables(cfg.observables);
  const Observable o = !opt.observable.empty() ? parse_observable(opt.observable) : configured.empty() ? Observable{} : configured.front();
  const Coordinates h = observable_state(o, problem.gram());
  const ItoStudy study = ito_study(problem, h, static_cast<std::size_t>(cfg.paths), cfg.threads,
                                   static_cast<std::size_t>(cfg.output_stride));
  const fs::path dir(opt.out);
  prepare_output_dir(dir);
  write_text(dir / "covariance.csv", covariance_csv(study));
  m.outputs.push_back("covariance.csv");
  finish(m, clock, dir);
  fmt::print("covariance: observable {}, {} paths, {}/{} time points within 3 standard errors\n", o.id(), cfg.paths,
             study.within, study.checked);
  return 0;
}

int trace_check(const Options& opt) {
  const Stopwatch clock;
  const SimulationConfig cfg = load(opt);
  RunManifest m = start_manifest("trace-check", cfg);
  const BeamProblem problem(cfg);
  const double c4 = estimate_constants(problem.family(), uniform_samples(0.0, cfg.T, 11)).c4;
  const TraceConditionResult tc = trace_condition(problem.propagator(), problem.noise(), 0.0, cfg.T, c4);
  const bool finite = std::isfinite(tc.value);
  m.checks.push_back({"trace.finite", finite ? CheckStatus::pass : CheckStatus::fail, tc.value, 0.0, "no threshold, value must be finite"});
  m.checks.push_back({"trace.bound", finite && tc.value <= tc.bound ? CheckStatus::pass : CheckStatus::fail, tc.value, tc.bound,
                      fmt::format("C4 {:.6g}", c4)});
  const fs::path dir(opt.out);
  prepare_output_dir(dir);
  write_text(dir / "trace.csv", trace_csv(tc));
  m.outputs.push_back("trace.csv");
  finish(m, clock, dir);
  fmt::print("{}", check_table(m.checks));
  return all_passed(m.checks) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic clamped-free fiber simulator"};
  app.set_version_flag("--version", std::string(version_string));
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Configuration file (flat key = value)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output directory")->capture_default_str();
    sub->add_option("--paths", opt.paths, "Number of paths, overrides run.N");
    sub->add_option("--seed", opt.seed, "Noise seed, overrides noise.seed");
  };
  auto* sim = app.add_subcommand("simulate", "Run the path ensemble and write trajectory.csv and observables.csv");
  auto* ver = app.add_subcommand("verify", "Run every invariant check; exit status 1 if any fails");
  auto* cov = app.add_subcommand("covariance", "Monte Carlo variance against the Ito isometry quadrature");
  auto* tr = app.add_subcommand("trace-check", "Trace condition integral and its analytic bound");
  for (auto* sub : {sim, ver, cov, tr}) add_common(sub);
  cov->add_option("--observable", opt.observable, "Test function as mode:channel:u|v (default: first of run.observables)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (sim->parsed()) return simulate(opt);
    if (ver->parsed()) return verify(opt);
    if (cov->parsed()) return covariance(opt);
    if (tr->parsed()) return trace_check(opt);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 2;
}
