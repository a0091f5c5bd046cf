#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include <fibersde/config.hpp>
#include <fibersde/solver.hpp>
#include <fibersde/verify.hpp>

using namespace fibersde;

namespace {

SimulationConfig base(double T = 0.1, double dt = 1e-3) {
  SimulationConfig c;
  c.T = T;
  c.dt = dt;
  return c;
}

// Meets the four clamped-free conditions; enough for an initial velocity.
constexpr const char* kQuartic = "s^4 - 4*s + 3";

// Also has vanishing fourth and fifth derivatives at s = 1, as required of an
// initial displacement.
constexpr const char* kSmooth = "(1 - s)^6 * (1 + 10*s/3 + 5*s^2)";

}  // namespace

TEST(Solver, GravityBalancedRestIsExactlyZero) {
  SimulationConfig c = base();
  c.sigma = 0.0;
  c.fdet = ForceKind::expression;
  c.fdet_expr = {"0", "0", "g"};
  const Trajectory traj = solve_homogeneous(c);
  ASSERT_EQ(traj.states.size(), 101u);
  for (const Coordinates& x : traj.states) EXPECT_EQ(x.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Solver, FreeEnergyConserved) {
  const auto g = std::make_shared<const GramSet>(build_grid(1.0, 16), 1.0);
  EXPECT_LE(energy_drift(g, 1e-3, 1000, 3), 1e-9);
}

TEST(Solver, MildStepLimits) {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(8, 8);
  const Coordinates x = Coordinates::Random(8, 3);
  const Coordinates load = Coordinates::Random(4, 3);
  const Coordinates dw = Coordinates::Random(4, 3);
  Coordinates want = x;
  want.bottomRows(4) += 0.1 * load + 2.0 * dw;
  EXPECT_LE((mild_step(id, x, load, dw, 2.0, 0.1) - want).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_TRUE((mild_step(id, x, Coordinates::Zero(4, 3), dw, 0.0, 0.1).array() == x.array()).all());
  EXPECT_THROW(mild_step(id, x, Coordinates::Zero(3, 3), dw, 0.0, 0.1), ShapeError);
  Coordinates bad = x;
  bad(0, 0) = NAN;
  EXPECT_THROW(mild_step(id, bad, load, dw, 0.0, 0.1), BlowUpError);
}

TEST(Solver, FirstStepMatchesDenseFormula) {
  SimulationConfig c = base(0.01, 1e-3);
  c.n = 8;
  c.modulation = {1.0, 0.5, 1.0};
  c.init_v = {kQuartic, "0", "0.1*(" + std::string(kQuartic) + ")"};
  c.fdet = ForceKind::expression;
  c.fdet_expr = {"sin(pi*s)", "0", "t"};
  const BeamProblem problem(c);
  const Trajectory traj = solve_homogeneous(problem, 4);
  const GramSet& g = problem.gram();
  const int d = g.dim();

  // (I - dt/2 L)^{-1} (I + dt/2 L) with L frozen at the midpoint.
  const Eigen::MatrixXd l = problem.family().l(0.5 * c.dt);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2 * d, 2 * d);
  const Eigen::MatrixXd step = (id - 0.5 * c.dt * l).partialPivLu().solve(id + 0.5 * c.dt * l);

  GridFunction f = GridFunction::Zero(g.grid().node_count(), 3);
  for (int i = 0; i < g.grid().node_count(); ++i) {
    f(i, 0) = std::sin(std::numbers::pi * g.grid().nodes[i]);
    f(i, 2) = -c.g;
  }
  const Coordinates load = g.reduced_mass().ldlt().solve(g.prolongation().transpose() * g.weights().asDiagonal() * f);
  Coordinates y = traj.states[0];
  y.bottomRows(d) += c.dt * load;
  Coordinates want = step * y;
  want.bottomRows(d) += c.sigma * traj.increments->dw[0];
  EXPECT_LE(g.coordinate_norm(traj.states[1] - want), 1e-12 * g.coordinate_norm(want));
}

namespace {

// Classical RK4 on dX/dt = L(t) X + F with a time-independent load.
Coordinates rk4_reference(const BeamProblem& p, const Coordinates& x0, double horizon, double h) {
  const int d = p.dim();
  Coordinates f = Coordinates::Zero(2 * d, 3);
  f.bottomRows(d) = p.load(0);
  auto rhs = [&](double t, const Coordinates& x) { return Coordinates(p.family().l(t) * x + f); };
  Coordinates x = x0;
  const long steps = std::lround(horizon / h);
  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * h;
    const Coordinates k1 = rhs(t, x);
    const Coordinates k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
    const Coordinates k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
    const Coordinates k4 = rhs(t + h, x + h * k3);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

std::vector<double> deterministic_errors(SimulationConfig c) {
  c.n = 8;
  c.T = 0.5;
  c.sigma = 0.0;
  c.modulation = {1.0, 0.5, 1.0};
  const BeamProblem fine(c);
  const Coordinates x0 = smooth_state(fine.family(), 2);
  const Coordinates ref = rk4_reference(fine, x0, c.T, 1e-5);
  std::vector<double> errors;
  for (double dt : {4e-3, 2e-3, 1e-3}) {
    c.dt = dt;
    const BeamProblem p(c);
    const Coordinates none = Coordinates::Zero(p.dim(), 3);
    Coordinates x = x0;
    for (std::size_t k = 0; k < p.steps(); ++k) x = mild_step(p.propagator().step(k), x, p.load(k), none, 0.0, dt);
    errors.push_back(p.gram().coordinate_norm(x - ref));
  }
  return errors;
}

}  // namespace

TEST(Solver, UnforcedPathsSecondOrderAgainstDenseOracle) {
  SimulationConfig c;
  c.fdet = ForceKind::expression;
  c.fdet_expr = {"0", "0", "g"};
  EXPECT_GE(min_order(deterministic_errors(c)), 1.9);
}

TEST(Solver, LoadedPathsFirstOrderAgainstDenseOracle) {
  // The load enters through U(t_k+1, t_k)(X_k + dt F_k), a left-point rule
  // for the convolution integral, which caps the order at one.
  EXPECT_GE(min_order(deterministic_errors(SimulationConfig{})), 0.9);
}

TEST(Solver, InitialDataMustSatisfyBoundaryConditions) {
  SimulationConfig c = base();
  c.n = 32;
  c.init_u = {"0", "0", kSmooth};
  c.init_v = {kQuartic, "0", "0"};
  EXPECT_NO_THROW(BeamProblem{c});
  c.init_v = {"0", "0", "0"};
  c.init_u = {"0", "0", "1 - s"};
  EXPECT_THROW(BeamProblem{c}, PreconditionError);
  c.init_u = {"0", "0", "(1 - s)^2"};
  EXPECT_THROW(BeamProblem{c}, PreconditionError);
  // Meets the four clamped-free conditions but not the fourth derivative at l.
  c.init_u = {"0", "0", "s^4 - 4*s + 3"};
  EXPECT_THROW(BeamProblem{c}, PreconditionError);
  c.init_u = {"0", "0", "0"};
  c.init_v = {"s", "0", "0"};
  EXPECT_THROW(BeamProblem{c}, PreconditionError);
}

TEST(Solver, HomogeneousSolverRejectsShiftedConfig) {
  SimulationConfig c = base();
  c.bc = BoundaryKind::nonhomogeneous;
  EXPECT_THROW(solve_homogeneous(c), std::invalid_argument);
  c.bc = BoundaryKind::homogeneous;
  EXPECT_THROW(solve_nonhomogeneous(c), std::invalid_argument);
}

TEST(Solver, BoundaryConditionsHoldAlongPaths) {
  SimulationConfig c = base();
  c.init_v = {kQuartic, "0", "0"};
  c.modulation = {1.0, 0.5, 1.0};
  const BeamProblem problem(c);
  EXPECT_LE(bc_invariance_defect(problem, solve_homogeneous(problem, 1)), GramSet::exact_tolerance);
}

TEST(Nonhomogeneous, StationaryUnderBalancingForce) {
  SimulationConfig c = base(0.5, 1e-3);
  c.bc = BoundaryKind::nonhomogeneous;
  c.sigma = 0.0;
  c.fdet = ForceKind::expression;
  c.fdet_expr = {"0", "0", "g - dlam"};
  const BeamProblem problem(c);
  EXPECT_LE(stationary_shift_defect(problem), 1e-9);
  // The emitted displacement is the shift itself: u(l) = 0 and u'(l) = e3.
  const BeamState s = problem.emit(problem.initial_state());
  EXPECT_NEAR(s.u(0, 2), -1.0, 1e-15);
  EXPECT_EQ(s.u(s.u.rows() - 1, 2), 0.0);
}

TEST(Nonhomogeneous, EmittedStatesSatisfyShiftedConditions) {
  SimulationConfig c = base();
  c.bc = BoundaryKind::nonhomogeneous;
  const BeamProblem problem(c);
  EXPECT_LE(bc_invariance_defect(problem, solve_nonhomogeneous(problem, 2)), GramSet::exact_tolerance);
}

TEST(Nonhomogeneous, ShiftConsistencyIsBitwise) {
  SimulationConfig c = base();
  c.bc = BoundaryKind::nonhomogeneous;
  c.modulation = {1.0, 0.5, 1.0};
  EXPECT_TRUE(shift_consistent(c, 0));
  EXPECT_TRUE(shift_consistent(c, 7));
  c.fdet = ForceKind::expression;
  c.fdet_expr = {"s", "0", "t*s"};
  EXPECT_TRUE(shift_consistent(c, 1));
}

TEST(Nonhomogeneous, OnlyTheShiftAsInitialData) {
  SimulationConfig c = base();
  c.bc = BoundaryKind::nonhomogeneous;
  c.init_u = {"0", "0", "s - l"};
  EXPECT_NO_THROW(BeamProblem{c});
  c.init_v = {"0", "0", kQuartic};
  EXPECT_THROW(BeamProblem{c}, std::invalid_argument);
}

TEST(WeakResidual, FirstOrderUnderNestedNoise) {
  SimulationConfig c = base(0.1, 4e-3);
  c.modulation = {1.0, 0.5, 1.0};
  const BeamProblem probe(c);
  const Coordinates h = observable_state(Observable{1, 3, 'u'}, probe.gram());
  const auto study = weak_residual_study(c, h, 3, 0);
  ASSERT_EQ(study.ratios.size(), 2u);
  EXPECT_FALSE(study.roundoff);
  for (double r : study.ratios) {
    EXPECT_GE(r, 1.6);
    EXPECT_LE(r, 2.6);
  }
}

TEST(WeakResidual, UnforcedChannelIsExactlyZero) {
  // With no noise and the load confined to channel 3, channels 1 and 2 stay
  // at rest and the residual against a channel-1 test function vanishes.
  SimulationConfig c = base();
  c.sigma = 0.0;
  const BeamProblem problem(c);
  const Trajectory traj = solve_homogeneous(problem);
  const auto r = weak_residual(traj, observable_state(Observable{2, 1, 'v'}, problem.gram()), problem);
  EXPECT_EQ(r.max(), 0.0);
  EXPECT_GT(weak_residual(traj, observable_state(Observable{1, 3, 'u'}, problem.gram()), problem).max(), 0.0);
}

TEST(WeakResidual, RejectsTestFunctionOutsideDomain) {
  SimulationConfig c = base();
  const BeamProblem problem(c);
  const Trajectory traj = solve_homogeneous(problem);
  BeamState h = BeamState::zero(problem.gram().grid());
  h.u.col(2).setOnes();
  EXPECT_THROW(weak_residual(traj, h, problem), PreconditionError);
}

TEST(Observable, Parsing) {
  EXPECT_EQ(parse_observable("2:1:v"), (Observable{2, 1, 'v'}));
  EXPECT_EQ(parse_observable("2:1:v").id(), "2:1:v");
  EXPECT_EQ(parse_observables(" 1:3:u , 4:2:v").size(), 2u);
  for (const char* bad : {"1:3", "x:3:u", "1:4:u", "0:1:u", "1:1:w", "1.5:1:u"}) {
    EXPECT_THROW(parse_observable(bad), std::invalid_argument) << bad;
  }
}

TEST(Moments, MergeMatchesTwoPass) {
  const std::vector<double> x{0.3, -1.2, 4.0, 2.5, 0.0, -0.7, 1.1, 3.3, -2.2};
  Moments left, right, all;
  for (std::size_t i = 0; i < x.size(); ++i) {
    (i < 4 ? left : right).add(x[i]);
    all.add(x[i]);
  }
  left.merge(right);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= x.size();
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    m2 += (v - mean) * (v - mean);
    m4 += std::pow(v - mean, 4);
  }
  for (const Moments& m : {left, all}) {
    EXPECT_NEAR(m.mean, mean, 1e-14);
    EXPECT_NEAR(m.variance(), m2 / (x.size() - 1), 1e-13);
    EXPECT_NEAR(m.m4, m4, 1e-11);
  }
  Moments one;
  one.add(5.0);
  EXPECT_FALSE(one.variance_defined());
  EXPECT_EQ(one.mean_se(), 0.0);
}

TEST(Ensemble, SinglePathMatchesSolver) {
  SimulationConfig c = base();
  c.init_v = {"0", "0", kQuartic};
  const BeamProblem problem(c);
  const Coordinates h = observable_state(Observable{1, 3, 'u'}, problem.gram());
  const auto stats = ensemble_run(problem, {h}, {1, 1, 10});
  const Trajectory traj = solve_homogeneous(problem, 0);
  ASSERT_EQ(stats.times.size(), 11u);
  for (std::size_t k = 0; k < stats.times.size(); ++k) {
    const double want = problem.gram().coordinate_inner(traj.states[10 * k], h);
    EXPECT_NEAR(stats.moments[0][k].mean, want, 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST(Ensemble, ZeroNoiseHasZeroVariance) {
  SimulationConfig c = base();
  c.sigma = 0.0;
  const BeamProblem problem(c);
  const auto stats = ensemble_run(problem, {observable_state(Observable{}, problem.gram())}, {3, 1, 5});
  for (const Moments& m : stats.moments[0]) EXPECT_EQ(m.variance(), 0.0);
}

TEST(Ensemble, MeanIsDeterministicSolution) {
  // The SDE is linear with additive noise, so its mean solves the noiseless problem.
  SimulationConfig c = base();
  c.modulation = {1.0, 0.5, 1.0};
  const BeamProblem noisy(c);
  c.sigma = 0.0;
  const BeamProblem quiet(c);
  const Coordinates h = observable_state(Observable{1, 3, 'v'}, noisy.gram());
  const auto stats = ensemble_run(noisy, {h}, {400, 1, 20});
  const auto mean = ensemble_run(quiet, {h}, {1, 1, 20});
  for (std::size_t k = 1; k < stats.times.size(); ++k) {
    EXPECT_LE(std::abs(stats.moments[0][k].mean - mean.moments[0][k].mean), 4.0 * stats.moments[0][k].mean_se()) << "t " << stats.times[k];
  }
}

TEST(Ensemble, ThreadCountDoesNotChangeResults) {
  SimulationConfig c = base(0.05);
  const BeamProblem problem(c);
  const std::vector<Coordinates> obs{observable_state(Observable{1, 3, 'u'}, problem.gram()),
                                     observable_state(Observable{2, 1, 'v'}, problem.gram())};
  std::vector<std::uint64_t> order1, order3;
  const auto a = ensemble_run(problem, obs, {37, 1, 7, false, 4}, [&](const PathResult& r) { order1.push_back(r.path); });
  const auto b = ensemble_run(problem, obs, {37, 3, 7, false, 4}, [&](const PathResult& r) { order3.push_back(r.path); });
  EXPECT_EQ(order1, order3);
  for (std::size_t o = 0; o < obs.size(); ++o) {
    for (std::size_t k = 0; k < a.times.size(); ++k) {
      EXPECT_EQ(a.moments[o][k].mean, b.moments[o][k].mean);
      EXPECT_EQ(a.moments[o][k].m2, b.moments[o][k].m2);
    }
  }
}

TEST(Ensemble, RecordedStepsIncludeEnd) {
  EXPECT_EQ(recorded_steps(10, 3), (std::vector<std::size_t>{0, 3, 6, 9, 10}));
  EXPECT_EQ(recorded_steps(10, 5), (std::vector<std::size_t>{0, 5, 10}));
}
