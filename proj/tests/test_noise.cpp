#include <gtest/gtest.h>

#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <memory>
#include <numbers>

#include <fibersde/noise.hpp>
#include <fibersde/verify.hpp>

using namespace fibersde;

namespace {

std::shared_ptr<const GramSet> gram(int n) { return std::make_shared<const GramSet>(build_grid(1.0, n), 1.0); }

}  // namespace

TEST(Spectrum, ParseAndName) {
  for (const char* s : {"k^-2", "k^-3", "tabulated"}) EXPECT_EQ(Spectrum::parse(s).name(), s);
  EXPECT_THROW(Spectrum::parse("k^-4"), std::invalid_argument);
}

TEST(Spectrum, TabulatedValidation) {
  Spectrum s = Spectrum::parse("tabulated");
  s.table = {1.0, 0.5};
  EXPECT_THROW(s.eigenvalues(3), std::invalid_argument);
  s.table = {1.0, 2.0};
  EXPECT_THROW(s.eigenvalues(2), std::invalid_argument);
  s.table = {1.0, -0.1};
  EXPECT_THROW(s.eigenvalues(2), std::invalid_argument);
  s.table = {1.0, 0.5, 0.25};
  EXPECT_DOUBLE_EQ(s.tail(1), 0.75);
}

TEST(Spectrum, TailMatchesZeta) {
  const Spectrum s = Spectrum::parse("k^-2");
  EXPECT_NEAR(s.tail(0), std::numbers::pi * std::numbers::pi / 6.0, 1e-14);
  EXPECT_NEAR(s.tail(10), boost::math::trigamma(11.0), 1e-13);
}

TEST(Noise, TraceOfInverseSquareSpectrum) {
  // 3 * sum_{k<=K} k^-2 = 3 (pi^2/6 - psi'(K+1)).
  const NoiseModel m(gram(110), Spectrum::parse("k^-2"), 100, 1.0, 0);
  const double want = 3.0 * (std::numbers::pi * std::numbers::pi / 6.0 - boost::math::trigamma(101.0));
  EXPECT_NEAR(trace_q(m), want, 1e-12);
  EXPECT_NEAR(want, 4.904952, 1e-6);
  EXPECT_NEAR(trace_q(m) + m.trace_tail(), std::numbers::pi * std::numbers::pi / 2.0, 1e-12);
}

TEST(Noise, TooManyModesRejected) {
  EXPECT_THROW(NoiseModel(gram(16), Spectrum::parse("k^-2"), 15, 1.0, 0), std::invalid_argument);
  EXPECT_NO_THROW(NoiseModel(gram(16), Spectrum::parse("k^-2"), 14, 1.0, 0));
  EXPECT_THROW(NoiseModel(gram(16), Spectrum::parse("k^-2"), 4, -1.0, 0), std::invalid_argument);
}

TEST(Noise, SampledSinesOrthonormalUnderTrapezoid) {
  // The sines vanish at both ends, so the trapezoid rule reduces to a
  // rectangle rule on which they are discretely orthonormal.
  const auto g = gram(16);
  const Eigen::MatrixXd e = sampled_sines(g->grid(), 16);
  const Eigen::MatrixXd gm = e.transpose() * g->weights().asDiagonal() * e;
  EXPECT_LE((gm - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Noise, BasisOrthonormalAndConstrained) {
  const auto g = gram(32);
  const NoiseModel m(g, Spectrum::parse("k^-3"), 20, 1.0, 0);
  const Eigen::MatrixXd& e = m.basis();
  const Eigen::MatrixXd gm = e.transpose() * g->reduced_mass() * e;
  EXPECT_LE((gm - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff(), 1e-10);
  for (int k = 0; k < 20; ++k) {
    const GridFunction f = g->lift(e.col(k).replicate(1, 3));
    EXPECT_TRUE(g->satisfies(f, BoundaryConditionSet::homogeneous())) << "mode " << k;
  }
  // Low modes stay close to the raw sines they came from.
  const Eigen::MatrixXd raw = sampled_sines(g->grid(), 2);
  const GridFunction first = g->lift(e.col(0).replicate(1, 3));
  const double overlap = std::abs(first.col(0).dot(g->weights().asDiagonal() * raw.col(0)));
  EXPECT_GT(overlap, 0.8);
}

TEST(Noise, ZeroSpectrumGivesZeroIncrements) {
  Spectrum s = Spectrum::parse("tabulated");
  s.table.assign(8, 0.0);
  const NoiseModel m(gram(16), s, 8, 1.0, 5);
  const WienerIncrements inc = sample_increments(m, 1e-2, 10, 0);
  for (const auto& dw : inc.dw) EXPECT_EQ(dw.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(trace_q(m), 0.0);
}

TEST(Noise, IncrementSecondMomentIsTraceQ) {
  // E |dW|^2_{L2} = dt tr(Q) because the basis is M_V-orthonormal.
  const auto g = gram(16);
  const NoiseModel m(g, Spectrum::parse("k^-2"), 14, 1.0, 9);
  const double dt = 1e-3;
  const std::size_t draws = 100000;
  const WienerIncrements inc = sample_increments(m, dt, draws, 0);
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t j = 0; j < draws; ++j) {
    const double x = (inc.dw[j].transpose() * g->reduced_mass() * inc.dw[j]).trace() / dt;
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / draws;
  const double se = std::sqrt((s2 / draws - mean * mean) / draws);
  EXPECT_LE(std::abs(mean - trace_q(m)), 3.0 * se) << "mean " << mean << " want " << trace_q(m);
}

TEST(Noise, DrawsAreReproducible) {
  const NoiseModel m(gram(16), Spectrum::parse("k^-2"), 10, 1.0, 77);
  const auto a = sample_increments(m, 1e-3, 20, 3);
  const auto b = sample_increments(m, 1e-3, 20, 3);
  for (std::size_t j = 0; j < 20; ++j) EXPECT_TRUE((a.dw[j].array() == b.dw[j].array()).all());
  EXPECT_TRUE((m.draw(3, 7).array() == a.xi[7].array()).all());
  EXPECT_FALSE((m.draw(4, 7).array() == a.xi[7].array()).all());
}

TEST(Noise, CoarseningSumsIncrements) {
  const NoiseModel m(gram(16), Spectrum::parse("k^-2"), 10, 1.0, 1);
  const auto fine = sample_increments(m, 1e-3, 8, 0);
  const auto coarse = coarsen(fine, 4);
  ASSERT_EQ(coarse.steps(), 2u);
  EXPECT_DOUBLE_EQ(coarse.dt, 4e-3);
  EXPECT_LE((coarse.cumulative(2) - fine.cumulative(8)).cwiseAbs().maxCoeff(), 1e-15);
  // Coarse normals keep unit variance scaling: dw = sqrt(dt) E xi.
  EXPECT_LE((coarse.dw[1] - std::sqrt(coarse.dt) * m.scaled_basis() * coarse.xi[1]).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(coarsen(fine, 3), std::invalid_argument);
}

TEST(Noise, ApplyAScalesVelocity) {
  const auto g = gram(16);
  const GridFunction f = GridFunction::Random(g->grid().node_count(), 3);
  const BeamState zero = apply_A(NoiseModel(g, Spectrum::parse("k^-2"), 4, 0.0, 0), f);
  EXPECT_EQ(zero.u.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(zero.v.cwiseAbs().maxCoeff(), 0.0);
  const BeamState two = apply_A(NoiseModel(g, Spectrum::parse("k^-2"), 4, 2.0, 0), f);
  EXPECT_EQ(two.u.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE((two.v.array() == (2.0 * f).array()).all());
  EXPECT_THROW(apply_A(NoiseModel(g, Spectrum::parse("k^-2"), 4, 2.0, 0), GridFunction::Zero(5, 3)), ShapeError);
}

TEST(TraceCondition, ZeroNoiseIsZero) {
  const auto g = gram(16);
  const GeneratorFamily fam(g, TractiveForce::bump(1.0, 0.2));
  const auto p = build_propagator(fam, 0.0, 0.2, 1e-3, PropagatorScheme::cayley_midpoint);
  const auto tc = trace_condition(p, NoiseModel(g, Spectrum::parse("k^-2"), 14, 0.0, 0), 0.0, 0.2, 0.0);
  EXPECT_EQ(tc.value, 0.0);
}

TEST(TraceCondition, FreeFlowClosedForm) {
  // The free flow is an isometry, so the integrand is sigma^2 tr(Q) throughout.
  const auto g = gram(16);
  const GeneratorFamily fam(g, TractiveForce::zero(1.0, 0.5));
  const auto p = build_propagator(fam, 0.0, 0.5, 1e-3, PropagatorScheme::cayley_midpoint);
  const NoiseModel m(g, Spectrum::parse("k^-2"), 14, 1.5, 0);
  const auto tc = trace_condition(p, m, 0.0, 0.5, 0.0);
  const double want = 0.5 * 1.5 * 1.5 * trace_q(m);
  EXPECT_NEAR(tc.value, want, 1e-8 * want);
  EXPECT_NEAR(tc.bound, want, 1e-12 * want);
}

TEST(TraceCondition, BumpWithinBound) {
  const auto g = gram(16);
  const GeneratorFamily fam = modulated_family(g, 1.0);
  const auto p = build_propagator(fam, 0.0, 1.0, 1e-3, PropagatorScheme::cayley_midpoint);
  const NoiseModel m(g, Spectrum::parse("k^-2"), 14, 1.0, 0);
  const double c4 = estimate_constants(fam, uniform_samples(0, 1, 11)).c4;
  const auto tc = trace_condition(p, m, 0.0, 1.0, c4);
  EXPECT_TRUE(std::isfinite(tc.value));
  EXPECT_GT(tc.value, 0.0);
  EXPECT_LE(tc.value, tc.bound);
  EXPECT_EQ(tc.times.size(), p.step_count() + 1);
}

TEST(ItoVariance, DegenerateCases) {
  const auto g = gram(16);
  const GeneratorFamily fam(g, TractiveForce::bump(1.0, 0.2));
  const auto adj = adjoint_propagator(build_propagator(fam, 0.0, 0.2, 1e-3, PropagatorScheme::cayley_midpoint), *g);
  const Coordinates h = unit_mode(fam, 0);
  EXPECT_EQ(ito_variance(adj, NoiseModel(g, Spectrum::parse("k^-2"), 14, 0.0, 0), h, 0.0, 0.2), 0.0);
  EXPECT_EQ(ito_variance(adj, NoiseModel(g, Spectrum::parse("k^-2"), 14, 1.0, 0), h, 0.1, 0.1), 0.0);
}

TEST(ItoVariance, FreeFlowModalOracle) {
  // For h = (0, phi_j e_c) the adjoint Cayley steps rotate mode j by
  // theta = 2 atan(omega_j dt / 2), leaving cos(m theta) phi_j in the velocity.
  const auto g = gram(16);
  const GeneratorFamily fam(g, TractiveForce::zero(1.0, 0.3));
  const double dt = 1e-3, sigma = 0.7;
  const auto adj = adjoint_propagator(build_propagator(fam, 0.0, 0.3, dt, PropagatorScheme::cayley_midpoint), *g);
  const NoiseModel m(g, Spectrum::parse("k^-2"), 14, sigma, 0);
  const int d = g->dim();
  for (int j : {0, 2}) {
    Coordinates h = Coordinates::Zero(2 * d, 3);
    h.block(d, 1, d, 1) = fam.modes().phi.col(j);
    double weight = 0.0;
    for (int k = 0; k < m.modes(); ++k) {
      const double c = m.basis().col(k).dot(g->reduced_mass() * fam.modes().phi.col(j));
      weight += m.eigenvalues()[k] * c * c;
    }
    const double theta = 2.0 * std::atan(0.5 * fam.modes().omega(j) * dt);
    double want = 0.0;
    for (int step = 0; step < 300; ++step) want += dt * sigma * sigma * weight * std::pow(std::cos(step * theta), 2);
    EXPECT_NEAR(ito_variance(adj, m, h, 0.0, 0.3), want, 1e-10 * want) << "mode " << j;
  }
}

TEST(ItoVariance, RequiresAdjoint) {
  const auto g = gram(16);
  const GeneratorFamily fam(g, TractiveForce::bump(1.0, 0.2));
  const auto p = build_propagator(fam, 0.0, 0.2, 1e-3, PropagatorScheme::cayley_midpoint);
  EXPECT_THROW(ito_variance(p, NoiseModel(g, Spectrum::parse("k^-2"), 4, 1.0, 0), unit_mode(fam, 0), 0.0, 0.2),
               std::invalid_argument);
}
