// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "beam_space.hpp"
#include "expression.hpp"
#include "noise.hpp"
#include "operators.hpp"
#include "propagator.hpp"

namespace fibersde {

enum class ForceKind { zero, tabulated, expression };

inline bool operator==(const Modulation& a, const Modulation& b) {
  return a.c0 == b.c0 && a.modulation == b.modulation && a.frequency == b.frequency;
}
inline bool operator==(const Spectrum& a, const Spectrum& b) { return a.kind == b.kind && a.table == b.table; }
inline bool operator==(const PicardConfig& a, const PicardConfig& b) {
  return a.tol == b.tol && a.max_iter == b.max_iter && a.alpha == b.alpha;
}

struct SimulationConfig {
  double l = 1.0;
  double b = 1.0;
  double g = 9.81;
  TractionFamily lambda = TractionFamily::bump;
  Modulation modulation;
  std::vector<double> lambda_table;
  ForceKind fdet = ForceKind::zero;
  std::array<std::string, 3> fdet_expr{"0", "0", "0"};
  std::array<std::vector<double>, 3> fdet_table;
  BoundaryKind bc = BoundaryKind::homogeneous;
  int n = 16;
  double T = 1.0;
  double dt = 1e-3;
  PropagatorScheme scheme = PropagatorScheme::cayley_midpoint;
  double sigma = 1.0;
  int K = 64;
  bool K_explicit = false;
  Spectrum spectrum;
  std::uint64_t seed = 0;
  std::array<std::string, 3> init_u{"0", "0", "0"};
  std::array<std::string, 3> init_v{"0", "0", "0"};
  int paths = 1;
  int threads = 1;
  std::string observables = "1:3:u";
  int output_stride = 1;
  bool write_trajectory = true;
  PicardConfig picard;

  bool operator==(const SimulationConfig&) const = default;

  // The default K is clipped to what the grid can represent; an explicit
  // value is taken literally and rejected by the noise model if too large.
  int noise_modes() const { return K_explicit ? K : std::min(K, n - 2); }
  std::size_t steps() const { return aligned_step_count(0.0, T, dt); }
};

inline TractiveForce make_tractive_force(const SimulationConfig& cfg) {
  switch (cfg.lambda) {
    case TractionFamily::zero: return TractiveForce::zero(cfg.l, cfg.T);
    case TractionFamily::bump: return TractiveForce::bump(cfg.l, cfg.T, cfg.modulation);
    case TractionFamily::tabulated: return TractiveForce::tabulated(cfg.l, cfg.T, cfg.lambda_table, cfg.modulation);
  }
  throw std::invalid_argument("unknown tractive force family");
}

// Variables available to force and initial-data expressions, in this order.
inline const std::vector<std::string>& field_variables() {
  static const std::vector<std::string> names{"s", "t", "l", "b", "g", "lam", "dlam"};
  return names;
}

// Deterministic force f^det(s, t) in R^3.
class DeterministicForce {
public:
  DeterministicForce(const SimulationConfig& cfg, const TractiveForce& force) : cfg_(cfg), force_(force) {
    if (cfg.fdet == ForceKind::expression) {
      for (int c = 0; c < 3; ++c) expr_[c] = Expression(cfg.fdet_expr[c], field_variables());
    }
    if (cfg.fdet == ForceKind::tabulated) {
      for (int c = 0; c < 3; ++c) {
        if (!cfg.fdet_table[c].empty() && cfg.fdet_table[c].size() < 2) {
          throw std::invalid_argument("tabulated force needs at least two samples per channel");
        }
      }
    }
  }

  double operator()(int c, double s, double t) const {
    switch (cfg_.fdet) {
      case ForceKind::zero: return 0.0;
      case ForceKind::expression: {
        const double vars[7] = {s, t, cfg_.l, cfg_.b, cfg_.g, force_(s, t), force_.slope(s, t)};
        return expr_[c](vars);
      }
      case ForceKind::tabulated: {
        const auto& tab = cfg_.fdet_table[c];
        if (tab.empty()) return 0.0;
        const double x = std::clamp(s / cfg_.l, 0.0, 1.0) * static_cast<double>(tab.size() - 1);
        const std::size_t i = std::min(static_cast<std::size_t>(x), tab.size() - 2);
        const double frac = x - static_cast<double>(i);
        return (1.0 - frac) * tab[i] + frac * tab[i + 1];
      }
    }
    return 0.0;
  }

private:
  const SimulationConfig& cfg_;
  const TractiveForce& force_;
  std::array<Expression, 3> expr_;
};

// Everything a run needs that does not depend on the noise path.
class BeamProblem {
public:
  explicit BeamProblem(SimulationConfig cfg)
      : cfg_(std::move(cfg)),
        gram_(std::make_shared<const GramSet>(build_grid(cfg_.l, cfg_.n), cfg_.b)),
        family_(gram_, make_tractive_force(cfg_)),
        noise_(gram_, cfg_.spectrum, cfg_.noise_modes(), cfg_.sigma, cfg_.seed),
        propagator_(build_propagator(family_, 0.0, cfg_.T, cfg_.dt, cfg_.scheme)) {
    if (!std::isfinite(cfg_.g)) throw std::invalid_argument("gravity must be finite");
    const int nn = gram_->node_count();
    shift_ = GridFunction::Zero(nn, 3);
    if (cfg_.bc == BoundaryKind::nonhomogeneous) {
      for (int i = 0; i < nn; ++i) shift_(i, 2) = gram_->grid().nodes[i] - cfg_.l;
    }
    assemble_loads();
    assemble_initial_state();
  }

  const SimulationConfig& config() const { return cfg_; }
  const GramSet& gram() const { return *gram_; }
  std::shared_ptr<const GramSet> gram_ptr() const { return gram_; }
  const GeneratorFamily& family() const { return family_; }
  const NoiseModel& noise() const { return noise_; }
  const PropagatorFactorization& propagator() const { return propagator_; }
  std::size_t steps() const { return propagator_.step_count(); }
  double time(std::size_t k) const { return propagator_.time(k); }
  int dim() const { return gram_->dim(); }

  // L2 projection of -g e3 + f^det (+ dlam e3 after the boundary shift) onto
  // the constrained velocity space, at grid time t_k.
  const Coordinates& load(std::size_t k) const { return loads_.at(k); }
  const Coordinates& initial_state() const { return x0_; }
  const GridFunction& shift() const { return shift_; }
  bool shifted() const { return cfg_.bc == BoundaryKind::nonhomogeneous; }

  // Grid-level state; adds (s - l) e3 to the displacement for the
  // nonhomogeneous problem.
  BeamState emit(const Coordinates& x) const {
    BeamState s = gram_->to_state(x);
    if (shifted()) s.u += shift_;
    return s;
  }

private:
  void assemble_loads() {
    const BeamGrid& grid = gram_->grid();
    const TractiveForce& force = family_.force();
    const DeterministicForce fdet(cfg_, force);
    const int nn = grid.node_count();
    const Eigen::MatrixXd proj = gram_->mass_factor().solve(gram_->prolongation().transpose() * gram_->weights().asDiagonal());
    loads_.resize(steps() + 1);
    GridFunction f(nn, 3);
    for (std::size_t k = 0; k <= steps(); ++k) {
      const double t = time(k);
      for (int i = 0; i < nn; ++i) {
        const double s = grid.nodes[i];
        for (int c = 0; c < 3; ++c) f(i, c) = fdet(c, s, t);
        if (shifted()) f(i, 2) += force.slope(s, t);
        f(i, 2) -= cfg_.g;
      }
      loads_[k] = proj * f;
    }
  }

  void assemble_initial_state() {
    const BeamGrid& grid = gram_->grid();
    const TractiveForce& force = family_.force();
    const int nn = grid.node_count();
    GridFunction u(nn, 3), v(nn, 3);
    for (int c = 0; c < 3; ++c) {
      const Expression eu(cfg_.init_u[c], field_variables());
      const Expression ev(cfg_.init_v[c], field_variables());
      for (int i = 0; i < nn; ++i) {
        const double s = grid.nodes[i];
        const double vars[7] = {s, 0.0, cfg_.l, cfg_.b, cfg_.g, force(s, 0.0), force.slope(s, 0.0)};
        u(i, c) = eu(vars);
        v(i, c) = ev(vars);
      }
    }
    if (!u.allFinite() || !v.allFinite()) throw PreconditionError("initial data is not finite");

    if (shifted()) {
      const bool is_default = cfg_.init_u == std::array<std::string, 3>{"0", "0", "0"};
      const double tol = 1e-12 * cfg_.l;
      const bool matches = ((u - shift_).cwiseAbs().maxCoeff() <= tol);
      if (!(is_default || matches) || v.cwiseAbs().maxCoeff() != 0.0) {
        throw std::invalid_argument("nonhomogeneous problem only supports the initial data x = (s - l) e3, v = 0");
      }
      x0_ = Coordinates::Zero(2 * dim(), 3);
      return;
    }

    const auto zero = Eigen::Matrix<double, 4, 3>::Zero();
    const SampledBcReport ru = check_sampled_bc(u, zero, *gram_, true);
    if (!ru.ok()) {
      throw PreconditionError("initial displacement violates the boundary conditions: " + ru.worst_name + " ratio " +
                              std::to_string(ru.worst) + " > " + std::to_string(ru.tolerance));
    }
    const SampledBcReport rv = check_sampled_bc(v, zero, *gram_, false);
    if (!rv.ok()) {
      throw PreconditionError("initial velocity violates the boundary conditions: " + rv.worst_name + " ratio " +
                              std::to_string(rv.worst) + " > " + std::to_string(rv.tolerance));
    }
    x0_ = gram_->to_coordinates({u, v});
  }

  SimulationConfig cfg_;
  std::shared_ptr<const GramSet> gram_;
  GeneratorFamily family_;
  NoiseModel noise_;
  PropagatorFactorization propagator_;
  std::vector<Coordinates> loads_;
  Coordinates x0_;
  GridFunction shift_;
};

// X_{k+1} = G (X_k + dt F_k) + A dW_k in state coordinates. F is the velocity
// load (d rows) and dW the velocity-coordinate increment.
inline Coordinates mild_step(const Eigen::MatrixXd& step, const Coordinates& x, const Coordinates& load,
                             const Coordinates& dw, double sigma, double dt) {
  const Eigen::Index d = x.rows() / 2;
  if (step.rows() != x.rows() || load.rows() != d || dw.rows() != d) throw ShapeError("mild_step: shape mismatch");
  Coordinates y = x;
  y.bottomRows(d) += dt * load;
  Coordinates out = step * y;
  out.bottomRows(d) += sigma * dw;
  if (!out.allFinite()) throw BlowUpError("mild_step: non-finite state");
  return out;
}

struct Trajectory {
  std::vector<double> times;
  std::vector<Coordinates> states;  // homogeneous part, state coordinates
  std::uint64_t path = 0;
  std::shared_ptr<const WienerIncrements> increments;
  BoundaryKind bc = BoundaryKind::homogeneous;
};

inline Trajectory integrate_path(const BeamProblem& problem, std::shared_ptr<const WienerIncrements> inc) {
  const std::size_t steps = problem.steps();
  if (inc->steps() != steps) throw ShapeError("integrate_path: increment count does not match the step count");
  Trajectory traj;
  traj.path = inc->path;
  traj.bc = problem.config().bc;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.times.push_back(problem.time(0));
  traj.states.push_back(problem.initial_state());
  const double dt = problem.propagator().dt();
  for (std::size_t k = 0; k < steps; ++k) {
    traj.states.push_back(mild_step(problem.propagator().step(k), traj.states.back(), problem.load(k), inc->dw[k],
                                    problem.noise().sigma(), dt));
    traj.times.push_back(problem.time(k + 1));
  }
  traj.increments = std::move(inc);
  return traj;
}

inline Trajectory solve_path(const BeamProblem& problem, std::uint64_t path) {
  auto inc = std::make_shared<const WienerIncrements>(
      sample_increments(problem.noise(), problem.propagator().dt(), problem.steps(), path));
  return integrate_path(problem, std::move(inc));
}

inline Trajectory solve_homogeneous(const BeamProblem& problem, std::uint64_t path = 0) {
  if (problem.config().bc != BoundaryKind::homogeneous) throw std::invalid_argument("solve_homogeneous: bc kind is not homogeneous");
  return solve_path(problem, path);
}

inline Trajectory solve_homogeneous(const SimulationConfig& cfg, std::uint64_t path = 0) {
  return solve_homogeneous(BeamProblem(cfg), path);
}

inline Trajectory solve_nonhomogeneous(const BeamProblem& problem, std::uint64_t path = 0) {
  if (problem.config().bc != BoundaryKind::nonhomogeneous) throw std::invalid_argument("solve_nonhomogeneous: bc kind is not nonhomogeneous");
  return solve_path(problem, path);
}

inline Trajectory solve_nonhomogeneous(const SimulationConfig& cfg, std::uint64_t path = 0) {
  return solve_nonhomogeneous(BeamProblem(cfg), path);
}

// The homogeneous configuration whose solution is x - (s - l) e3 for a
// nonhomogeneous configuration.
inline SimulationConfig shifted_homogeneous_config(const SimulationConfig& cfg) {
  if (cfg.fdet == ForceKind::tabulated) throw std::invalid_argument("shifted config requires an expression or zero force");
  SimulationConfig out = cfg;
  out.bc = BoundaryKind::homogeneous;
  out.init_u = {"0", "0", "0"};
  out.init_v = {"0", "0", "0"};
  if (cfg.fdet == ForceKind::zero) {
    out.fdet = ForceKind::expression;
    out.fdet_expr = {"0", "0", "0 + dlam"};
  } else {
    out.fdet_expr[2] = "(" + cfg.fdet_expr[2] + ") + dlam";
  }
  return out;
}

// Pathwise residual of the weak formulation tested against a fixed h.
inline ResidualCurve weak_residual(const Trajectory& traj, const Coordinates& h, const BeamProblem& problem) {
  const GramSet& g = problem.gram();
  const GeneratorFamily& fam = problem.family();
  const int d = g.dim();
  if (h.rows() != 2 * d) throw ShapeError("weak_residual: test function size mismatch");
  if (!traj.increments) throw std::invalid_argument("weak_residual: trajectory has no driving increments");
  const std::size_t steps = traj.states.size() - 1;
  const double dt = traj.increments->dt;
  const double sigma = problem.noise().sigma();

  // L*(t) h = L0* h + c(t) L1_profile* h.
  const Coordinates l0_star_h = fam.adjoint(fam.l0()) * h;
  Eigen::MatrixXd l1_profile = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  l1_profile.bottomLeftCorner(d, d) = fam.coupling();
  const Coordinates l1_star_h = fam.adjoint(l1_profile) * h;
  std::vector<double> integrand(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    const Coordinates lstar_h = l0_star_h + fam.force().c(traj.times[k]) * l1_star_h;
    const double load_term = (problem.load(k).transpose() * g.reduced_mass() * h.bottomRows(d)).trace();
    integrand[k] = g.coordinate_inner(traj.states[k], lstar_h) + load_term;
  }

  ResidualCurve out;
  const double base = g.coordinate_inner(traj.states[0], h);
  double integral = 0.0;
  Coordinates w = Coordinates::Zero(d, 3);
  const Eigen::MatrixXd mh = g.reduced_mass() * h.bottomRows(d);
  out.times.push_back(traj.times[0]);
  out.values.push_back(0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    integral += 0.5 * dt * (integrand[k] + integrand[k + 1]);
    w += traj.increments->dw[k];
    const double noise = sigma * (w.transpose() * mh).trace();
    out.times.push_back(traj.times[k + 1]);
    out.values.push_back(g.coordinate_inner(traj.states[k + 1], h) - base - integral - noise);
  }
  return out;
}

inline ResidualCurve weak_residual(const Trajectory& traj, const BeamState& h, const BeamProblem& problem) {
  const GramSet& g = problem.gram();
  const auto bc = BoundaryConditionSet::homogeneous();
  if (!g.satisfies(h.u, bc) || !g.satisfies(h.v, bc)) throw PreconditionError("weak_residual: test function is not in the discrete domain");
  return weak_residual(traj, g.to_coordinates(h), problem);
}

// Observables <X(t), h>_H with h = (e_j, 0) or (0, e_j) in one channel, e_j
// the j-th constrained sine mode.
struct Observable {
  int mode = 1;
  int channel = 3;
  char component = 'u';

  std::string id() const { return std::to_string(mode) + ":" + std::to_string(channel) + ":" + component; }
  bool operator==(const Observable&) const = default;
};

inline Observable parse_observable(const std::string& text) {
  Observable o;
  const auto a = text.find(':');
  const auto b = a == std::string::npos ? a : text.find(':', a + 1);
  if (b == std::string::npos) throw std::invalid_argument("observable '" + text + "' must look like mode:channel:u|v");
  try {
    std::size_t used = 0;
    o.mode = std::stoi(text.substr(0, a), &used);
    if (used != a) throw std::invalid_argument("");
    o.channel = std::stoi(text.substr(a + 1, b - a - 1), &used);
    if (used != b - a - 1) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw std::invalid_argument("observable '" + text + "': mode and channel must be integers");
  }
  const std::string comp = text.substr(b + 1);
  if (comp != "u" && comp != "v") throw std::invalid_argument("observable '" + text + "': component must be u or v");
  if (o.mode < 1) throw std::invalid_argument("observable '" + text + "': mode index starts at 1");
  if (o.channel < 1 || o.channel > 3) throw std::invalid_argument("observable '" + text + "': channel must be 1, 2 or 3");
  o.component = comp[0];
  return o;
}

inline std::vector<Observable> parse_observables(const std::string& text) {
  std::vector<Observable> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(',', start);
    std::string item = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(parse_observable(item));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

inline Coordinates observable_state(const Observable& o, const GramSet& g) {
  const int d = g.dim();
  if (o.mode > d) throw std::invalid_argument("observable mode " + std::to_string(o.mode) + " exceeds the grid dimension " + std::to_string(d));
  const Eigen::MatrixXd basis = constrained_sine_basis(g, o.mode);
  Coordinates h = Coordinates::Zero(2 * d, 3);
  h.block(o.component == 'u' ? 0 : d, o.channel - 1, d, 1) = basis.col(o.mode - 1);
  return h;
}

// Streaming count / mean / central moments with pairwise merging (Pebay 2008).
struct Moments {
  double n = 0.0, mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;

  void add(double x) { merge(Moments{1.0, x, 0.0, 0.0, 0.0}); }

  void merge(const Moments& o) {
    if (o.n == 0.0) return;
    if (n == 0.0) {
      *this = o;
      return;
    }
    const double na = n, nb = o.n, nt = na + nb;
    const double delta = o.mean - mean;
    const double d2 = delta * delta;
    const double m2n = m2 + o.m2 + d2 * na * nb / nt;
    const double m3n = m3 + o.m3 + d2 * delta * na * nb * (na - nb) / (nt * nt) + 3.0 * delta * (na * o.m2 - nb * m2) / nt;
    const double m4n = m4 + o.m4 + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (nt * nt * nt) +
                       6.0 * d2 * (na * na * o.m2 + nb * nb * m2) / (nt * nt) + 4.0 * delta * (na * o.m3 - nb * m3) / nt;
    mean += delta * nb / nt;
    m2 = m2n;
    m3 = m3n;
    m4 = m4n;
    n = nt;
  }

  bool variance_defined() const { return n >= 2.0; }
  double variance() const { return n >= 2.0 ? m2 / (n - 1.0) : 0.0; }
  double mean_se() const { return n >= 2.0 ? std::sqrt(variance() / n) : 0.0; }
  double variance_se() const {
    if (n < 4.0) return 0.0;
    const double var = variance();
    const double mu4 = m4 / n;
    return std::sqrt(std::max(0.0, (mu4 - (n - 3.0) / (n - 1.0) * var * var) / n));
  }
};

struct EnsembleStatistics {
  std::vector<double> times;
  std::vector<std::vector<Moments>> moments;  // [observable][time]
  std::size_t paths = 0;
};

struct PathResult {
  std::uint64_t path = 0;
  Eigen::MatrixXd values;  // observables x recorded times
  std::vector<Coordinates> states;  // recorded states when requested
};

struct EnsembleOptions {
  std::size_t paths = 1;
  int threads = 1;
  std::size_t stride = 1;
  bool keep_states = false;
  std::size_t block = 64;
};

inline std::vector<std::size_t> recorded_steps(std::size_t steps, std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k <= steps; k += stride) out.push_back(k);
  if (out.back() != steps) out.push_back(steps);
  return out;
}

inline PathResult run_path(const BeamProblem& problem, const std::vector<Eigen::RowVectorXd>& functionals,
                           const std::vector<std::size_t>& record, std::uint64_t path, bool keep_states) {
  const int d = problem.dim();
  const std::size_t steps = problem.steps();
  const double dt = problem.propagator().dt();
  const double scale = problem.noise().sigma() * std::sqrt(dt);
  const NoiseModel& noise = problem.noise();
  PathResult out;
  out.path = path;
  out.values.resize(static_cast<Eigen::Index>(functionals.size()), static_cast<Eigen::Index>(record.size()));
  Coordinates x = problem.initial_state();
  Coordinates y(2 * d, 3);
  std::size_t next = 0;
  auto observe = [&](std::size_t k) {
    if (next < record.size() && record[next] == k) {
      for (std::size_t i = 0; i < functionals.size(); ++i) {
        out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(next)) =
            (functionals[i] * x.reshaped()).value();
      }
      if (keep_states) out.states.push_back(x);
      ++next;
    }
  };
  observe(0);
  for (std::size_t k = 0; k < steps; ++k) {
    y = x;
    y.bottomRows(d) += dt * problem.load(k);
    x.noalias() = problem.propagator().step(k) * y;
    if (scale != 0.0 && noise.modes() > 0) x.bottomRows(d).noalias() += scale * (noise.scaled_basis() * noise.draw(path, k));
    if (!x.allFinite()) throw BlowUpError("path " + std::to_string(path) + ": non-finite state at step " + std::to_string(k + 1));
    observe(k + 1);
  }
  return out;
}

using PathSink = std::function<void(const PathResult&)>;

// Paths are grouped into fixed blocks. Each block accumulates its paths in
// order and blocks are merged in order, so the statistics and the sink call
// sequence do not depend on the thread count.
inline EnsembleStatistics ensemble_run(const BeamProblem& problem, const std::vector<Coordinates>& observables,
                                       const EnsembleOptions& opt, const PathSink& sink = {}) {
  if (opt.paths < 1) throw std::invalid_argument("ensemble_run: need at least one path");
  if (opt.stride < 1) throw std::invalid_argument("ensemble_run: stride must be positive");
  const GramSet& g = problem.gram();
  const Eigen::MatrixXd gram = g.state_gram();
  std::vector<Eigen::RowVectorXd> functionals;
  for (const Coordinates& h : observables) {
    if (h.rows() != 2 * g.dim()) throw ShapeError("ensemble_run: observable size mismatch");
    const Coordinates gh = gram * h;
    functionals.push_back(gh.reshaped().transpose());
  }
  const auto record = recorded_steps(problem.steps(), opt.stride);

  EnsembleStatistics stats;
  stats.paths = opt.paths;
  for (std::size_t k : record) stats.times.push_back(problem.time(k));
  stats.moments.assign(observables.size(), std::vector<Moments>(record.size()));

  const std::size_t block = std::max<std::size_t>(1, opt.block);
  const std::size_t n_blocks = (opt.paths + block - 1) / block;
  const std::size_t workers = static_cast<std::size_t>(std::max(1, opt.threads));
  const std::size_t wave = workers * 4;

  struct BlockResult {
    std::vector<std::vector<Moments>> moments;
    std::vector<PathResult> paths;
  };

  for (std::size_t first = 0; first < n_blocks; first += wave) {
    const std::size_t count = std::min(wave, n_blocks - first);
    std::vector<BlockResult> results(count);
    std::atomic<std::size_t> cursor{0};
    auto work = [&]() {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= count) return;
        BlockResult& r = results[i];
        r.moments.assign(observables.size(), std::vector<Moments>(record.size()));
        const std::size_t p0 = (first + i) * block;
        const std::size_t p1 = std::min(opt.paths, p0 + block);
        for (std::size_t p = p0; p < p1; ++p) {
          PathResult pr = run_path(problem, functionals, record, p, opt.keep_states);
          for (std::size_t o = 0; o < observables.size(); ++o) {
            for (std::size_t k = 0; k < record.size(); ++k) {
              r.moments[o][k].add(pr.values(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(k)));
            }
          }
          if (sink) r.paths.push_back(std::move(pr));
        }
      }
    };
    std::vector<std::exception_ptr> errors(std::min(workers, count));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < errors.size(); ++w) {
      pool.emplace_back([&, w]() {
        try {
          work();
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    try {
      work();
    } catch (...) {
      errors[0] = std::current_exception();
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (BlockResult& r : results) {
      for (std::size_t o = 0; o < observables.size(); ++o) {
        for (std::size_t k = 0; k < record.size(); ++k) stats.moments[o][k].merge(r.moments[o][k]);
      }
      if (sink) {
        for (const PathResult& pr : r.paths) sink(pr);
      }
    }
  }
  return stats;
}

}  // namespace fibersde
