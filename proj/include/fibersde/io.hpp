// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fmt/format.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "manifest.hpp"
#include "solver.hpp"
#include "verify.hpp"

namespace fibersde {

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + file.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + file.string() + "'");
}

inline void prepare_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Stopwatch {
public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
  std::chrono::steady_clock::time_point start_;
};

inline RunManifest start_manifest(const std::string& command, const SimulationConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.config = serialize_config(cfg);
  m.seed = cfg.seed;
  m.started_at = utc_timestamp();
  return m;
}

// Rows for one path: post-step times only, (n+2) nodes and 3 channels each.
inline void append_trajectory_rows(std::string& out, const BeamProblem& problem, const PathResult& pr,
                                   const std::vector<std::size_t>& record) {
  const auto& nodes = problem.gram().grid().nodes;
  for (std::size_t j = 1; j < record.size(); ++j) {
    const BeamState s = problem.emit(pr.states[j]);
    const double t = problem.time(record[j]);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        fmt::format_to(std::back_inserter(out), "{},{:.17g},{:.17g},{},{:.17g},{:.17g}\n", pr.path, t, nodes[i], c + 1,
                       s.u(static_cast<Eigen::Index>(i), c), s.v(static_cast<Eigen::Index>(i), c));
      }
    }
  }
}

inline void append_observable_rows(std::string& out, const BeamProblem& problem, const PathResult& pr,
                                   const std::vector<std::size_t>& record, const std::vector<Observable>& obs) {
  for (std::size_t j = 1; j < record.size(); ++j) {
    const double t = problem.time(record[j]);
    for (std::size_t o = 0; o < obs.size(); ++o) {
      fmt::format_to(std::back_inserter(out), "{},{:.17g},{},{:.17g}\n", pr.path, t, obs[o].id(),
                     pr.values(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(j)));
    }
  }
}

struct SimulationFiles {
  std::vector<std::string> outputs;
  EnsembleStatistics stats;
};

// trajectory.csv (unless disabled) and observables.csv. The byte content
// depends only on the configuration: paths are emitted in index order
// whatever the thread count.
inline SimulationFiles write_simulation(const BeamProblem& problem, const std::filesystem::path& dir) {
  const SimulationConfig& cfg = problem.config();
  prepare_output_dir(dir);
  const auto obs = parse_observables(cfg.observables);
  std::vector<Coordinates> hs;
  for (const auto& o : obs) hs.push_back(observable_state(o, problem.gram()));

  EnsembleOptions opt;
  opt.paths = static_cast<std::size_t>(cfg.paths);
  opt.threads = cfg.threads;
  opt.stride = static_cast<std::size_t>(cfg.output_stride);
  opt.keep_states = cfg.write_trajectory;
  // Small blocks bound the number of stored trajectories awaiting output.
  opt.block = cfg.write_trajectory ? 4 : 64;
  const auto record = recorded_steps(problem.steps(), opt.stride);

  const std::filesystem::path traj_file = dir / "trajectory.csv";
  const std::filesystem::path obs_file = dir / "observables.csv";
  std::ofstream traj;
  if (cfg.write_trajectory) {
    traj.open(traj_file, std::ios::binary | std::ios::trunc);
    if (!traj) throw IoError("cannot open '" + traj_file.string() + "' for writing");
    traj << "path,t,s,channel,u,v\n";
  }
  std::ofstream obs_out(obs_file, std::ios::binary | std::ios::trunc);
  if (!obs_out) throw IoError("cannot open '" + obs_file.string() + "' for writing");
  obs_out << "path,t,observable_id,value\n";

  std::string buffer;
  SimulationFiles files;
  files.stats = ensemble_run(problem, hs, opt, [&](const PathResult& pr) {
    if (cfg.write_trajectory) {
      buffer.clear();
      append_trajectory_rows(buffer, problem, pr, record);
      traj << buffer;
    }
    buffer.clear();
    append_observable_rows(buffer, problem, pr, record, obs);
    obs_out << buffer;
  });
  if (cfg.write_trajectory) {
    traj.flush();
    if (!traj) throw IoError("failed writing '" + traj_file.string() + "'");
    files.outputs.push_back("trajectory.csv");
  }
  obs_out.flush();
  if (!obs_out) throw IoError("failed writing '" + obs_file.string() + "'");
  files.outputs.push_back("observables.csv");
  return files;
}

// Monte Carlo variance of <X(t), h>_H, the Ito-isometry quadrature and the
// standard error of the variance estimate, per recorded time.
inline std::string covariance_csv(const ItoStudy& study) {
  std::string out = "t,mc_variance,ito_variance,standard_error\n";
  for (std::size_t k = 0; k < study.times.size(); ++k) {
    fmt::format_to(std::back_inserter(out), "{:.17g},{:.17g},{:.17g},{:.17g}\n", study.times[k], study.mc_variance[k],
                   study.quadrature[k], study.standard_error[k]);
  }
  return out;
}

inline std::string trace_csv(const TraceConditionResult& tc) {
  std::string out = "r,integrand\n";
  for (std::size_t k = 0; k < tc.times.size(); ++k) fmt::format_to(std::back_inserter(out), "{:.17g},{:.17g}\n", tc.times[k], tc.integrand[k]);
  return out;
}

inline std::string check_table(const std::vector<CheckRecord>& checks) {
  std::string out = fmt::format("{:<32} {:<6} {:>12} {:>12}  {}\n", "check", "status", "value", "threshold", "detail");
  for (const auto& c : checks) {
    out += fmt::format("{:<32} {:<6} {:>12.4e} {:>12.4e}  {}\n", c.name, to_string(c.status), c.value, c.threshold, c.detail);
  }
  return out;
}

inline std::string checks_csv(const std::vector<CheckRecord>& checks) {
  std::string out = "check,status,value,threshold\n";
  for (const auto& c : checks) out += fmt::format("{},{},{:.17g},{:.17g}\n", c.name, to_string(c.status), c.value, c.threshold);
  return out;
}

}  // namespace fibersde
