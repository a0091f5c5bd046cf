// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "errors.hpp"
#include "stencil.hpp"

namespace fibersde {

// Nodal values of an R^3-valued function, one row per grid node.
using GridFunction = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// Coordinates in the constrained subspace. A displacement or velocity uses d
// rows; a full state stacks displacement over velocity (2d rows).
using Coordinates = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct BeamGrid {
  double l = 1.0;
  int n = 0;
  double h = 0.0;
  std::vector<double> nodes;

  int node_count() const { return n + 2; }
  bool operator==(const BeamGrid& other) const { return l == other.l && n == other.n; }
};

inline BeamGrid build_grid(double l, int n) {
  if (!(l > 0.0) || !std::isfinite(l)) throw std::invalid_argument("build_grid: length must be positive");
  if (n < 3) throw std::invalid_argument("build_grid: need at least 3 interior nodes");
  BeamGrid g;
  g.l = l;
  g.n = n;
  g.h = l / (n + 1);
  g.nodes.resize(n + 2);
  for (int i = 0; i <= n + 1; ++i) g.nodes[i] = l * static_cast<double>(i) / (n + 1);
  g.nodes.back() = l;
  return g;
}

struct BeamState {
  GridFunction u;
  GridFunction v;

  static BeamState zero(const BeamGrid& grid) {
    return {GridFunction::Zero(grid.node_count(), 3), GridFunction::Zero(grid.node_count(), 3)};
  }
};

enum class BoundaryKind { homogeneous, nonhomogeneous };

// Row order of the constraint matrix and of BoundaryConditionSet::values.
enum Constraint : int { value_at_l = 0, slope_at_l = 1, moment_at_0 = 2, shear_at_0 = 3 };

inline const char* constraint_name(int k) {
  static const char* names[] = {"u(l)", "du/ds(l)", "d2u/ds2(0)", "d3u/ds3(0)"};
  return names[k];
}

struct BoundaryConditionSet {
  BoundaryKind kind = BoundaryKind::homogeneous;
  Eigen::Matrix<double, 4, 3> values = Eigen::Matrix<double, 4, 3>::Zero();

  static BoundaryConditionSet homogeneous() { return {}; }

  static BoundaryConditionSet nonhomogeneous() {
    BoundaryConditionSet bc;
    bc.kind = BoundaryKind::nonhomogeneous;
    bc.values(slope_at_l, 2) = 1.0;
    return bc;
  }
};

// Difference operators, quadrature and the constrained subspace V of grid
// functions satisfying the four boundary stencils. Nodes 0, 1, N-2, N-1 are
// eliminated; everything else is a free coordinate.
class GramSet {
public:
  GramSet(BeamGrid grid, double b) : grid_(std::move(grid)), b_(b) {
    if (!(b > 0.0) || !std::isfinite(b)) throw std::invalid_argument("GramSet: bending stiffness must be positive");
    if (grid_.n < 4) throw std::invalid_argument("GramSet: need at least 4 interior nodes");
    assemble();
  }

  const BeamGrid& grid() const { return grid_; }
  double stiffness() const { return b_; }
  int node_count() const { return grid_.node_count(); }
  int dim() const { return static_cast<int>(kept_.size()); }

  const Eigen::VectorXd& weights() const { return w_; }
  const Eigen::MatrixXd& first_difference() const { return d1_; }
  const Eigen::MatrixXd& second_difference() const { return d2_; }
  const Eigen::MatrixXd& bending() const { return bending_; }
  const Eigen::MatrixXd& constraints() const { return constraints_; }
  const Eigen::MatrixXd& prolongation() const { return p_; }
  const std::vector<int>& kept_nodes() const { return kept_; }
  const std::array<int, 4>& eliminated_nodes() const { return eliminated_; }

  const Eigen::MatrixXd& reduced_mass() const { return mv_; }
  const Eigen::MatrixXd& reduced_bending() const { return bv_; }
  const Eigen::LLT<Eigen::MatrixXd>& mass_factor() const { return mv_llt_; }
  const Eigen::LLT<Eigen::MatrixXd>& bending_factor() const { return bv_llt_; }

  // Block Gram matrix of the H inner product in state coordinates.
  Eigen::MatrixXd state_gram() const {
    const int d = dim();
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    g.topLeftCorner(d, d) = bv_;
    g.bottomRightCorner(d, d) = mv_;
    return g;
  }

  Coordinates restrict(const GridFunction& u) const {
    require_shape(u, "restrict");
    Coordinates r(dim(), 3);
    for (int j = 0; j < dim(); ++j) r.row(j) = u.row(kept_[j]);
    return r;
  }

  GridFunction lift(const Coordinates& r) const {
    if (r.rows() != dim()) throw ShapeError("lift: coordinate count does not match the subspace");
    return p_ * r;
  }

  Coordinates to_coordinates(const BeamState& x) const {
    Coordinates c(2 * dim(), 3);
    c.topRows(dim()) = restrict(x.u);
    c.bottomRows(dim()) = restrict(x.v);
    return c;
  }

  BeamState to_state(const Coordinates& c) const {
    if (c.rows() != 2 * dim()) throw ShapeError("to_state: expected 2d coordinate rows");
    return {lift(c.topRows(dim())), lift(c.bottomRows(dim()))};
  }

  double coordinate_inner(const Coordinates& x, const Coordinates& y) const {
    const int d = dim();
    return (x.topRows(d).transpose() * bv_ * y.topRows(d)).trace() +
           (x.bottomRows(d).transpose() * mv_ * y.bottomRows(d)).trace();
  }

  double coordinate_norm(const Coordinates& x) const { return std::sqrt(std::max(0.0, coordinate_inner(x, x))); }

  // Raw stencil values C u, one row per constraint.
  Eigen::Matrix<double, 4, 3> constraint_values(const GridFunction& u) const {
    require_shape(u, "constraint_values");
    return constraints_ * u;
  }

  // Stencil residuals scaled to displacement units (residual_k * h^k) and
  // divided by max|u|, so roundoff-level satisfaction gives ~1e-15.
  Eigen::Matrix<double, 4, 3> scaled_residuals(const GridFunction& u, const BoundaryConditionSet& bc) const {
    Eigen::Matrix<double, 4, 3> r = constraint_values(u) - bc.values;
    double scale = u.cwiseAbs().maxCoeff();
    for (int k = 0; k < 4; ++k) scale = std::max(scale, bc.values.row(k).cwiseAbs().maxCoeff() * std::pow(grid_.h, k));
    if (scale == 0.0) return Eigen::Matrix<double, 4, 3>::Zero();
    for (int k = 0; k < 4; ++k) r.row(k) *= std::pow(grid_.h, k) / scale;
    return r;
  }

  bool satisfies(const GridFunction& u, const BoundaryConditionSet& bc, int constraint_count = 4,
                 double tol = exact_tolerance) const {
    const auto r = scaled_residuals(u, bc);
    return r.topRows(constraint_count).cwiseAbs().maxCoeff() <= tol;
  }

  static constexpr double exact_tolerance = 1e-8;

  // Sets the eliminated nodes so that every boundary stencil holds exactly;
  // free nodes are left untouched, which makes the map idempotent.
  GridFunction enforce(const GridFunction& u, const Eigen::Matrix<double, 4, 3>& targets) const {
    require_shape(u, "enforce_bc");
    GridFunction out = u;
    Eigen::Matrix<double, 4, 3> rhs = targets;
    for (int j = 0; j < dim(); ++j) rhs -= constraints_.col(kept_[j]) * u.row(kept_[j]);
    const Eigen::Matrix<double, 4, 3> e = ce_lu_.solve(rhs);
    for (int k = 0; k < 4; ++k) out.row(eliminated_[k]) = e.row(k);
    return out;
  }

  void require_shape(const GridFunction& u, const char* where) const {
    if (u.rows() != node_count()) {
      throw ShapeError(std::string(where) + ": grid function has " + std::to_string(u.rows()) + " nodes, grid has " +
                       std::to_string(node_count()));
    }
  }

private:
  void assemble() {
    const int nn = node_count();
    const double h = grid_.h;

    w_ = Eigen::VectorXd::Constant(nn, h);
    w_(0) = w_(nn - 1) = 0.5 * h;

    d1_ = Eigen::MatrixXd::Zero(nn - 1, nn);
    for (int i = 0; i < nn - 1; ++i) {
      d1_(i, i) = -1.0 / h;
      d1_(i, i + 1) = 1.0 / h;
    }

    const double h2 = h * h;
    d2_ = Eigen::MatrixXd::Zero(nn, nn);
    const auto free_row = one_sided_weights(2, +1);
    for (int j = 0; j < 4; ++j) d2_(0, j) = free_row[j] / h2;
    for (int i = 1; i < nn - 1; ++i) {
      d2_(i, i - 1) = 1.0 / h2;
      d2_(i, i) = -2.0 / h2;
      d2_(i, i + 1) = 1.0 / h2;
    }
    // Clamped-end closure: the centered stencil with the ghost value fixed by
    // reflection through the zero-slope condition.
    d2_(nn - 1, nn - 3) = -0.5 / h2;
    d2_(nn - 1, nn - 2) = 4.0 / h2;
    d2_(nn - 1, nn - 1) = -3.5 / h2;

    bending_ = b_ * d2_.transpose() * w_.asDiagonal() * d2_;

    constraints_ = Eigen::MatrixXd::Zero(4, nn);
    constraints_(value_at_l, nn - 1) = 1.0;
    const auto slope = one_sided_weights(1, -1);
    for (int j = 0; j < 3; ++j) constraints_(slope_at_l, nn - 1 - j) = slope[j] / h;
    constraints_.row(moment_at_0) = d2_.row(0);
    const auto shear = one_sided_weights(3, +1);
    for (int j = 0; j < 5; ++j) constraints_(shear_at_0, j) = shear[j] / (h2 * h);

    eliminated_ = {0, 1, nn - 2, nn - 1};
    kept_.clear();
    for (int i = 2; i < nn - 2; ++i) kept_.push_back(i);
    const int d = static_cast<int>(kept_.size());

    Eigen::Matrix4d ce;
    for (int k = 0; k < 4; ++k) ce.col(k) = constraints_.col(eliminated_[k]);
    ce_lu_.compute(ce);
    if (ce_lu_.rcond() < 1e-14) throw AssemblyError("GramSet: boundary constraints are not solvable for the end nodes");

    Eigen::MatrixXd ck(4, d);
    for (int j = 0; j < d; ++j) ck.col(j) = constraints_.col(kept_[j]);
    const Eigen::MatrixXd pe = -ce_lu_.solve(ck);
    p_ = Eigen::MatrixXd::Zero(nn, d);
    for (int j = 0; j < d; ++j) p_(kept_[j], j) = 1.0;
    for (int k = 0; k < 4; ++k) p_.row(eliminated_[k]) = pe.row(k);

    mv_ = p_.transpose() * w_.asDiagonal() * p_;
    bv_ = p_.transpose() * bending_ * p_;
    mv_ = 0.5 * (mv_ + mv_.transpose()).eval();
    bv_ = 0.5 * (bv_ + bv_.transpose()).eval();
    mv_llt_.compute(mv_);
    if (mv_llt_.info() != Eigen::Success) throw AssemblyError("GramSet: reduced mass matrix is not positive definite");
    bv_llt_.compute(bv_);
    if (bv_llt_.info() != Eigen::Success) throw AssemblyError("GramSet: reduced bending matrix is not positive definite");
  }

  BeamGrid grid_;
  double b_;
  Eigen::VectorXd w_;
  Eigen::MatrixXd d1_, d2_, bending_, constraints_, p_, mv_, bv_;
  std::vector<int> kept_;
  std::array<int, 4> eliminated_{};
  Eigen::FullPivLU<Eigen::Matrix4d> ce_lu_;
  Eigen::LLT<Eigen::MatrixXd> mv_llt_, bv_llt_;
};

inline void require_same_shape(const GridFunction& a, const GridFunction& b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(where) + ": mismatched grid functions");
}

inline double l2_inner(const GridFunction& a, const GridFunction& b, const GramSet& g) {
  g.require_shape(a, "l2_inner");
  require_same_shape(a, b, "l2_inner");
  return (a.transpose() * g.weights().asDiagonal() * b).trace();
}

inline double h2bc_inner(const GridFunction& u1, const GridFunction& u2, const GramSet& g) {
  g.require_shape(u1, "h2bc_inner");
  require_same_shape(u1, u2, "h2bc_inner");
  const auto bc = BoundaryConditionSet::homogeneous();
  if (!g.satisfies(u1, bc, 2) || !g.satisfies(u2, bc, 2)) {
    throw PreconditionError("h2bc_inner: argument is not clamped at s = l");
  }
  return (u1.transpose() * g.bending() * u2).trace();
}

inline double h_inner(const BeamState& x1, const BeamState& x2, const GramSet& g) {
  return h2bc_inner(x1.u, x2.u, g) + l2_inner(x1.v, x2.v, g);
}

inline double h_norm(const BeamState& x, const GramSet& g) { return std::sqrt(std::max(0.0, h_inner(x, x, g))); }

// b^2 |d4 u|^2 + b |d2 v|^2 with the fourth derivative realized weakly as
// M_V^{-1} B_V on the constrained subspace.
inline double d_norm_sq(const BeamState& x, const GramSet& g) {
  const auto bc = BoundaryConditionSet::homogeneous();
  g.require_shape(x.u, "d_norm_sq");
  g.require_shape(x.v, "d_norm_sq");
  for (const GridFunction* f : {&x.u, &x.v}) {
    if (!g.satisfies(*f, bc)) {
      const auto r = g.scaled_residuals(*f, bc);
      Eigen::Index row = 0, col = 0;
      r.cwiseAbs().maxCoeff(&row, &col);
      throw PreconditionError(std::string("d_norm_sq: state is not in the discrete domain, ") +
                              constraint_name(static_cast<int>(row)) + " residual " + std::to_string(r(row, col)));
    }
  }
  const Coordinates ru = g.restrict(x.u);
  const Coordinates rv = g.restrict(x.v);
  const Coordinates fourth = g.mass_factor().solve(g.reduced_bending() * ru);
  return (fourth.transpose() * g.reduced_mass() * fourth).trace() + (rv.transpose() * g.reduced_bending() * rv).trace();
}

inline BeamState enforce_bc(const BeamState& x, const BoundaryConditionSet& bc, const GramSet& g) {
  return {g.enforce(x.u, bc.values), g.enforce(x.v, Eigen::Matrix<double, 4, 3>::Zero())};
}

// Boundary check for sampled smooth data. Each stencil residual is compared
// with the size of the same derivative over the interior, so a function that
// satisfies the continuous condition passes with an O(h^2) margin while a
// genuine violation shows up as an O(1) ratio. The one-sided stencils are
// also evaluated at stride 2: for data that meets the condition the residual
// is C h^2 and grows to about 4 C h^2 on the coarse stencil, so the gap
// between the two bounds the truncation error and is discounted. A real
// violation gives the same value at both strides and keeps its full size.
struct SampledBcReport {
  double worst = 0.0;
  std::string worst_name;
  double tolerance = 0.0;
  bool ok() const { return worst <= tolerance; }
};

inline double sampled_bc_tolerance(const BeamGrid& grid) {
  const double r = grid.h / grid.l;
  return std::max(1e-8, std::min(0.1, 64.0 * r * r));
}

inline SampledBcReport check_sampled_bc(const GridFunction& u, const Eigen::Matrix<double, 4, 3>& targets,
                                        const GramSet& g, bool sixth_order_conditions = false) {
  g.require_shape(u, "check_sampled_bc");
  const BeamGrid& grid = g.grid();
  const int nn = grid.node_count();
  const double h = grid.h;
  SampledBcReport report;
  report.tolerance = sampled_bc_tolerance(grid);
  const double amplitude = u.cwiseAbs().maxCoeff() + targets.row(slope_at_l).cwiseAbs().maxCoeff() * grid.l;

  auto interior_scale = [&](int order, int c) {
    const int half = (order + 2) / 2;
    std::vector<double> offsets;
    for (int k = -half; k <= half; ++k) offsets.push_back(k);
    const auto wts = finite_difference_weights(order, offsets);
    double m = 0.0;
    for (int i = half; i < nn - half; ++i) {
      double acc = 0.0;
      for (int k = 0; k < static_cast<int>(wts.size()); ++k) acc += wts[k] * u(i - half + k, c);
      m = std::max(m, std::abs(acc) / std::pow(h, order));
    }
    return m;
  };

  auto record = [&](double residual, double scale, const std::string& name) {
    const double ratio = residual == 0.0 ? 0.0 : residual / std::max(scale, 1e-300);
    if (ratio > report.worst) {
      report.worst = ratio;
      report.worst_name = name;
    }
  };

  // One-sided derivative at the end selected by `direction` (+1 at 0, -1 at l)
  // using every `stride`-th node; NaN when the grid is too short.
  auto one_sided = [&](int order, int direction, int c, int stride) {
    const auto wts = one_sided_weights(order, direction);
    if (static_cast<int>(wts.size() - 1) * stride >= nn) return std::numeric_limits<double>::quiet_NaN();
    const int anchor = direction > 0 ? 0 : nn - 1;
    double acc = 0.0;
    for (int j = 0; j < static_cast<int>(wts.size()); ++j) acc += wts[j] * u(anchor + direction * j * stride, c);
    return acc / std::pow(stride * h, order);
  };

  auto check_derivative = [&](int order, int direction, double target, int c, const std::string& name) {
    const double fine = one_sided(order, direction, c, 1);
    const double coarse = one_sided(order, direction, c, 2);
    const double allowance = std::isnan(coarse) ? 0.0 : std::abs(coarse - fine);
    const double scale = std::max({interior_scale(order, c), std::abs(target), amplitude / std::pow(grid.l, order)});
    record(std::max(0.0, std::abs(fine - target) - allowance), scale, name);
  };

  for (int c = 0; c < 3; ++c) {
    const std::string channel = " channel " + std::to_string(c + 1);
    const double value_scale = std::max({u.col(c).cwiseAbs().maxCoeff(), std::abs(targets(value_at_l, c)), amplitude});
    record(std::abs(u(nn - 1, c) - targets(value_at_l, c)), value_scale, std::string(constraint_name(value_at_l)) + channel);
    check_derivative(1, -1, targets(slope_at_l, c), c, std::string(constraint_name(slope_at_l)) + channel);
    check_derivative(2, +1, targets(moment_at_0, c), c, std::string(constraint_name(moment_at_0)) + channel);
    check_derivative(3, +1, targets(shear_at_0, c), c, std::string(constraint_name(shear_at_0)) + channel);
    if (sixth_order_conditions && nn >= 10) {
      for (int order : {4, 5}) {
        check_derivative(order, -1, 0.0, c, "d" + std::to_string(order) + "u/ds" + std::to_string(order) + "(l)" + channel);
      }
    }
  }
  return report;
}

}  // namespace fibersde
