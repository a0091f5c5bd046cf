// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/constants/constants.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "beam_space.hpp"
#include "linalg.hpp"

namespace fibersde {

enum class TractionFamily { zero, bump, tabulated };

inline const char* to_string(TractionFamily f) {
  switch (f) {
    case TractionFamily::zero: return "zero";
    case TractionFamily::bump: return "bump";
    case TractionFamily::tabulated: return "tabulated";
  }
  return "?";
}

// c(t) = c0 (1 + modulation sin(2 pi frequency t))
struct Modulation {
  double c0 = 1.0;
  double modulation = 0.0;
  double frequency = 1.0;

  double operator()(double t) const {
    return c0 * (1.0 + modulation * std::sin(2.0 * boost::math::constants::pi<double>() * frequency * t));
  }
  double lower_bound() const { return c0 * (1.0 - std::abs(modulation)); }
};

// lambda(s, t) = c(t) p(s). The built-in bump has p(s) = s^2 (l - s)^2 / l^4;
// a tabulated profile is a cubic B-spline through equispaced samples on [0, l].
class TractiveForce {
public:
  static TractiveForce zero(double l, double horizon) { return TractiveForce(TractionFamily::zero, l, horizon, {0.0, 0.0, 1.0}); }

  static TractiveForce bump(double l, double horizon, Modulation c = {}) {
    return TractiveForce(TractionFamily::bump, l, horizon, c);
  }

  static TractiveForce tabulated(double l, double horizon, const std::vector<double>& samples, Modulation c = {}) {
    if (samples.size() < 5) throw std::invalid_argument("TractiveForce: a tabulated profile needs at least 5 samples");
    TractiveForce f(TractionFamily::tabulated, l, horizon, c);
    f.samples_ = samples;
    f.spline_.emplace(samples.data(), samples.size(), 0.0, l / static_cast<double>(samples.size() - 1));
    return f;
  }

  TractionFamily family() const { return family_; }
  double length() const { return l_; }
  double horizon() const { return horizon_; }
  const Modulation& modulation() const { return c_; }
  const std::vector<double>& samples() const { return samples_; }

  double c(double t) const { return family_ == TractionFamily::zero ? 0.0 : c_(t); }

  double profile(double s) const {
    switch (family_) {
      case TractionFamily::zero: return 0.0;
      case TractionFamily::bump: {
        const double a = s * (l_ - s);
        return a * a / (l_ * l_ * l_ * l_);
      }
      case TractionFamily::tabulated: return (*spline_)(std::clamp(s, 0.0, l_));
    }
    return 0.0;
  }

  double profile_slope(double s) const {
    switch (family_) {
      case TractionFamily::zero: return 0.0;
      case TractionFamily::bump: return 2.0 * s * (l_ - s) * (l_ - 2.0 * s) / (l_ * l_ * l_ * l_);
      case TractionFamily::tabulated: return spline_->prime(std::clamp(s, 0.0, l_));
    }
    return 0.0;
  }

  double operator()(double s, double t) const { return c(t) * profile(s); }
  double slope(double s, double t) const { return c(t) * profile_slope(s); }

  void require_time(double t) const {
    const double slack = 1e-12 * std::max(1.0, horizon_);
    if (!(t >= -slack && t <= horizon_ + slack)) {
      throw std::invalid_argument("tractive force evaluated at t = " + std::to_string(t) + " outside [0, " +
                                  std::to_string(horizon_) + "]");
    }
  }

  // Pointwise checks of the admissibility conditions on the grid nodes and the
  // given times. Returns one message per violated condition.
  std::vector<std::string> invariant_violations(const BeamGrid& grid, const std::vector<double>& t_samples) const {
    std::vector<std::string> out;
    if (family_ == TractionFamily::zero) return out;
    double peak = 0.0;
    for (double s : grid.nodes) peak = std::max(peak, std::abs(profile(s)));
    const double tol = 1e-10 * std::max(peak, 1e-300);
    const double slope_tol = tol / l_;
    if (std::abs(profile(0.0)) > tol) out.push_back("lambda(0,t) != 0");
    if (std::abs(profile(l_)) > tol) out.push_back("lambda(l,t) != 0");
    if (std::abs(profile_slope(0.0)) > slope_tol) out.push_back("d lambda/ds(0,t) != 0");
    if (std::abs(profile_slope(l_)) > slope_tol) out.push_back("d lambda/ds(l,t) != 0");
    for (std::size_t i = 1; i + 1 < grid.nodes.size(); ++i) {
      if (!(profile(grid.nodes[i]) > 0.0)) {
        out.push_back("lambda not positive at interior node s = " + std::to_string(grid.nodes[i]));
        break;
      }
    }
    for (double t : t_samples) {
      if (!(c(t) >= 0.0) || !std::isfinite(c(t))) {
        out.push_back("c(t) negative at t = " + std::to_string(t));
        break;
      }
    }
    return out;
  }

  // sqrt(4 l int (d lambda/ds)^2 ds / b) at time t.
  double c4_formula(double t, double b) const {
    if (family_ == TractionFamily::zero) return 0.0;
    const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [this](double s) { return profile_slope(s) * profile_slope(s); }, 0.0, l_, 15, 1e-14);
    return std::abs(c(t)) * std::sqrt(4.0 * l_ * integral / b);
  }

private:
  TractiveForce(TractionFamily family, double l, double horizon, Modulation c)
      : family_(family), l_(l), horizon_(horizon), c_(c) {
    if (!(l > 0.0)) throw std::invalid_argument("TractiveForce: length must be positive");
    if (!(horizon >= 0.0)) throw std::invalid_argument("TractiveForce: horizon must be non-negative");
  }

  TractionFamily family_;
  double l_;
  double horizon_;
  Modulation c_;
  std::vector<double> samples_;
  std::optional<boost::math::interpolators::cardinal_cubic_b_spline<double>> spline_;
};

// -D1^T diag(h lambda(midpoints)) D1 with lambda replaced by the profile p;
// the tension at time t is c(t) times this matrix.
inline Eigen::MatrixXd tension_profile_matrix(const TractiveForce& force, const GramSet& g) {
  const BeamGrid& grid = g.grid();
  Eigen::VectorXd wl(grid.node_count() - 1);
  for (int i = 0; i < wl.size(); ++i) wl(i) = grid.h * force.profile(0.5 * (grid.nodes[i] + grid.nodes[i + 1]));
  const auto& d1 = g.first_difference();
  return -(d1.transpose() * wl.asDiagonal() * d1);
}

inline Eigen::MatrixXd tension_matrix(const TractiveForce& force, double t, const GramSet& g) {
  force.require_time(t);
  return force.c(t) * tension_profile_matrix(force, g);
}

enum class OperatorRole { l0, l1, l, adjoint };

// A 2x2 block operator on state coordinates (displacement over velocity).
struct BlockOperator {
  OperatorRole role = OperatorRole::l0;
  double time = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd matrix;

  int dim() const { return static_cast<int>(matrix.rows() / 2); }
  auto block(int i, int j) const { return matrix.block(i * dim(), j * dim(), dim(), dim()); }

  Coordinates apply(const Coordinates& x) const {
    if (x.rows() != matrix.cols()) throw ShapeError("BlockOperator::apply: coordinate size mismatch");
    return matrix * x;
  }

  BeamState apply(const BeamState& x, const GramSet& g) const { return g.to_state(apply(g.to_coordinates(x))); }
};

inline BlockOperator build_L0(const GramSet& g) {
  const int d = g.dim();
  BlockOperator op;
  op.role = OperatorRole::l0;
  op.matrix = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  op.matrix.topRightCorner(d, d).setIdentity();
  op.matrix.bottomLeftCorner(d, d) = -g.mass_factor().solve(g.reduced_bending());
  return op;
}

inline BlockOperator build_L1(const TractiveForce& force, double t, const GramSet& g) {
  const int d = g.dim();
  const Eigen::MatrixXd& p = g.prolongation();
  BlockOperator op;
  op.role = OperatorRole::l1;
  op.time = t;
  op.matrix = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  op.matrix.bottomLeftCorner(d, d) = g.mass_factor().solve(p.transpose() * tension_matrix(force, t, g) * p);
  return op;
}

// Gram transpose M_H^{-1} op^T M_H, using the block-diagonal structure of M_H.
inline BlockOperator adjoint_H(const BlockOperator& op, const GramSet& g) {
  const int d = g.dim();
  if (op.matrix.rows() != 2 * d) throw ShapeError("adjoint_H: operator does not match the Gram set");
  Eigen::MatrixXd t = op.matrix.transpose();
  t.leftCols(d) = t.leftCols(d) * g.reduced_bending();
  t.rightCols(d) = t.rightCols(d) * g.reduced_mass();
  BlockOperator out;
  out.role = OperatorRole::adjoint;
  out.time = op.time;
  out.matrix.resize(2 * d, 2 * d);
  out.matrix.topRows(d) = g.bending_factor().solve(t.topRows(d));
  out.matrix.bottomRows(d) = g.mass_factor().solve(t.bottomRows(d));
  return out;
}

// Generalized eigenpairs of B_V phi = omega^2 M_V phi with M_V-orthonormal phi.
struct ModalBasis {
  Eigen::VectorXd omega;
  Eigen::MatrixXd phi;
  Eigen::MatrixXd phi_t_mass;  // phi^T M_V, maps coordinates to modal amplitudes

  explicit ModalBasis(const GramSet& g) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(g.reduced_bending(), g.reduced_mass());
    if (es.info() != Eigen::Success) throw AssemblyError("ModalBasis: generalized eigenproblem failed");
    omega = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    phi = es.eigenvectors();
    phi_t_mass = phi.transpose() * g.reduced_mass();
  }
};

// L(t) = L0 + L1(t) with everything that does not depend on t precomputed.
class GeneratorFamily {
public:
  GeneratorFamily(std::shared_ptr<const GramSet> g, TractiveForce force)
      : g_(std::move(g)), force_(std::move(force)), modes_(*g_) {
    l0_ = build_L0(*g_).matrix;
    const Eigen::MatrixXd& p = g_->prolongation();
    reduced_tension_ = p.transpose() * tension_profile_matrix(force_, *g_) * p;
    reduced_tension_ = 0.5 * (reduced_tension_ + reduced_tension_.transpose());
    coupling_ = g_->mass_factor().solve(reduced_tension_);
  }

  const GramSet& gram() const { return *g_; }
  std::shared_ptr<const GramSet> gram_ptr() const { return g_; }
  const TractiveForce& force() const { return force_; }
  const ModalBasis& modes() const { return modes_; }
  int dim() const { return g_->dim(); }
  double horizon() const { return force_.horizon(); }

  const Eigen::MatrixXd& l0() const { return l0_; }
  // M_V^{-1} P^T T_profile P; the lower-left block of L1(t) is c(t) times this.
  const Eigen::MatrixXd& coupling() const { return coupling_; }
  // P^T T_profile P, symmetric negative semidefinite.
  const Eigen::MatrixXd& reduced_tension() const { return reduced_tension_; }

  // B_V - c(t) P^T T_profile P, so that the lower-left block of L(t) is
  // -M_V^{-1} times this.
  Eigen::MatrixXd effective_stiffness(double t) const {
    force_.require_time(t);
    return g_->reduced_bending() - force_.c(t) * reduced_tension_;
  }

  Eigen::MatrixXd l1(double t) const {
    force_.require_time(t);
    const int d = dim();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    m.bottomLeftCorner(d, d) = force_.c(t) * coupling_;
    return m;
  }

  Eigen::MatrixXd l(double t) const {
    force_.require_time(t);
    Eigen::MatrixXd m = l0_;
    m.bottomLeftCorner(dim(), dim()) += force_.c(t) * coupling_;
    return m;
  }

  BlockOperator op(double t) const { return {OperatorRole::l, t, l(t)}; }

  Eigen::MatrixXd adjoint(const Eigen::MatrixXd& m) const { return adjoint_H({OperatorRole::l, 0.0, m}, *g_).matrix; }

  // Gram matrix of the discrete D norm, |x|_D = |L0 x|_H.
  Eigen::MatrixXd d_gram() const {
    const int d = dim();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    gram.topLeftCorner(d, d) = g_->reduced_bending() * g_->mass_factor().solve(g_->reduced_bending());
    gram.bottomRightCorner(d, d) = g_->reduced_bending();
    return 0.5 * (gram + gram.transpose());
  }

private:
  std::shared_ptr<const GramSet> g_;
  TractiveForce force_;
  ModalBasis modes_;
  Eigen::MatrixXd l0_;
  Eigen::MatrixXd reduced_tension_;
  Eigen::MatrixXd coupling_;
};

struct StabilityConstants {
  double c4 = 0.0;
  double c5 = 0.0;
  double m = 0.0;
  double c4_formula = 0.0;
  std::vector<double> times;
  std::vector<double> h_norms;  // numerical |L1(t)|_{L(H)} per sample
  std::vector<double> d_norms;  // numerical |L1(t)|_{L(D)} per sample
};

inline StabilityConstants estimate_constants(const GeneratorFamily& fam, const std::vector<double>& t_samples) {
  if (t_samples.empty()) throw std::invalid_argument("estimate_constants: need at least one sample time");
  const GramSet& g = fam.gram();
  const Eigen::MatrixXd h_gram = g.state_gram();
  const Eigen::MatrixXd d_gram = fam.d_gram();
  StabilityConstants out;
  out.times = t_samples;
  for (double t : t_samples) {
    const Eigen::MatrixXd l1 = fam.l1(t);
    const double formula = fam.force().c4_formula(t, g.stiffness());
    const double hn = l1.isZero(0.0) ? 0.0 : gram_operator_norm(l1, h_gram);
    const double dn = l1.isZero(0.0) ? 0.0 : gram_operator_norm(l1, d_gram);
    out.h_norms.push_back(hn);
    out.d_norms.push_back(dn);
    out.c4_formula = std::max(out.c4_formula, formula);
    out.c4 = std::max({out.c4, formula, hn});
    out.c5 = std::max(out.c5, dn);
  }
  out.m = std::max(out.c4, out.c5);
  return out;
}

inline StabilityConstants estimate_constants(const TractiveForce& force, std::shared_ptr<const GramSet> g,
                                             const std::vector<double>& t_samples) {
  return estimate_constants(GeneratorFamily(std::move(g), force), t_samples);
}

inline std::vector<double> uniform_samples(double t0, double t1, int count) {
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i) out[i] = count == 1 ? t0 : t0 + (t1 - t0) * i / (count - 1);
  return out;
}

}  // namespace fibersde
