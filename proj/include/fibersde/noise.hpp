// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/zeta.hpp>

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "beam_space.hpp"
#include "philox.hpp"
#include "propagator.hpp"

namespace fibersde {

enum class SpectrumKind { inverse_square, inverse_cube, tabulated };

struct Spectrum {
  SpectrumKind kind = SpectrumKind::inverse_square;
  std::vector<double> table;

  static Spectrum parse(const std::string& name) {
    if (name == "k^-2") return {SpectrumKind::inverse_square, {}};
    if (name == "k^-3") return {SpectrumKind::inverse_cube, {}};
    if (name == "tabulated") return {SpectrumKind::tabulated, {}};
    throw std::invalid_argument("unknown noise spectrum '" + name + "'");
  }

  std::string name() const {
    switch (kind) {
      case SpectrumKind::inverse_square: return "k^-2";
      case SpectrumKind::inverse_cube: return "k^-3";
      case SpectrumKind::tabulated: return "tabulated";
    }
    return "?";
  }

  std::vector<double> eigenvalues(int count) const {
    std::vector<double> q(count);
    if (kind == SpectrumKind::tabulated) {
      if (static_cast<int>(table.size()) < count) {
        throw std::invalid_argument("tabulated spectrum has " + std::to_string(table.size()) + " entries, need " +
                                    std::to_string(count));
      }
      for (int k = 0; k < count; ++k) {
        if (!(table[k] >= 0.0) || !std::isfinite(table[k])) throw std::invalid_argument("spectrum entries must be non-negative");
        if (k > 0 && table[k] > table[k - 1]) throw std::invalid_argument("spectrum entries must be non-increasing");
        q[k] = table[k];
      }
      return q;
    }
    const double p = kind == SpectrumKind::inverse_square ? 2.0 : 3.0;
    for (int k = 0; k < count; ++k) q[k] = std::pow(static_cast<double>(k + 1), -p);
    return q;
  }

  // Scalar trace of the modes beyond `count` (per channel).
  double tail(int count) const {
    if (kind == SpectrumKind::tabulated) {
      double s = 0.0;
      for (std::size_t k = count; k < table.size(); ++k) s += table[k];
      return s;
    }
    const double p = kind == SpectrumKind::inverse_square ? 2.0 : 3.0;
    double partial = 0.0;
    for (int k = count; k >= 1; --k) partial += std::pow(static_cast<double>(k), -p);
    return std::max(0.0, boost::math::zeta(p) - partial);
  }
};

// sqrt(2/l) sin(k pi s / l), k = 1..count, sampled on the nodes.
inline Eigen::MatrixXd sampled_sines(const BeamGrid& grid, int count) {
  Eigen::MatrixXd e(grid.node_count(), count);
  const double amp = std::sqrt(2.0 / grid.l);
  for (int k = 0; k < count; ++k) {
    for (int i = 0; i < grid.node_count(); ++i) e(i, k) = amp * std::sin((k + 1) * std::numbers::pi * grid.nodes[i] / grid.l);
  }
  return e;
}

// Sine modes projected onto the constrained subspace (L2-orthogonally) and
// then Gram-Schmidt orthonormalized in M_V. Returns d x count coordinates.
inline Eigen::MatrixXd constrained_sine_basis(const GramSet& g, int count) {
  if (count < 0 || count > g.dim()) {
    throw std::invalid_argument("requested " + std::to_string(count) + " noise modes but the constrained grid space has dimension " +
                                std::to_string(g.dim()));
  }
  const Eigen::MatrixXd raw = sampled_sines(g.grid(), count);
  Eigen::MatrixXd e = g.mass_factor().solve(g.prolongation().transpose() * g.weights().asDiagonal() * raw);
  const Eigen::MatrixXd& mv = g.reduced_mass();
  for (int k = 0; k < count; ++k) {
    Eigen::VectorXd col = e.col(k);
    const double initial = std::sqrt(col.dot(mv * col));
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < k; ++j) col -= e.col(j).dot(mv * col) * e.col(j);
    }
    const double norm = std::sqrt(std::max(0.0, col.dot(mv * col)));
    if (!(norm > 1e-8 * initial)) throw std::invalid_argument("sine modes are linearly dependent on this grid");
    e.col(k) = col / norm;
  }
  return e;
}

class NoiseModel {
public:
  NoiseModel(std::shared_ptr<const GramSet> g, Spectrum spectrum, int modes, double sigma, std::uint64_t seed)
      : g_(std::move(g)), spectrum_(std::move(spectrum)), k_(modes), sigma_(sigma), seed_(seed) {
    if (modes < 0) throw std::invalid_argument("noise mode count must be non-negative");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("noise amplitude must be non-negative");
    basis_ = constrained_sine_basis(*g_, modes);
    q_ = spectrum_.eigenvalues(modes);
    sqrt_q_.resize(modes);
    for (int k = 0; k < modes; ++k) sqrt_q_(k) = std::sqrt(q_[k]);
    scaled_basis_ = basis_ * sqrt_q_.asDiagonal();
  }

  const GramSet& gram() const { return *g_; }
  int modes() const { return k_; }
  double sigma() const { return sigma_; }
  std::uint64_t seed() const { return seed_; }
  const Spectrum& spectrum() const { return spectrum_; }
  const std::vector<double>& eigenvalues() const { return q_; }
  const Eigen::MatrixXd& basis() const { return basis_; }
  // basis * diag(sqrt(q)); a velocity increment is scaled_basis * xi * sqrt(dt).
  const Eigen::MatrixXd& scaled_basis() const { return scaled_basis_; }

  // K x 3 standard normals for one (path, step).
  Eigen::Matrix<double, Eigen::Dynamic, 3> draw(std::uint64_t path, std::uint64_t step) const {
    Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> xi(k_, 3);
    NormalStream(seed_, path, step).fill(xi.data(), static_cast<std::size_t>(3 * k_));
    return xi;
  }

  double trace_tail() const { return 3.0 * spectrum_.tail(k_); }

private:
  std::shared_ptr<const GramSet> g_;
  Spectrum spectrum_;
  int k_;
  double sigma_;
  std::uint64_t seed_;
  Eigen::MatrixXd basis_;
  Eigen::MatrixXd scaled_basis_;
  std::vector<double> q_;
  Eigen::VectorXd sqrt_q_;
};

inline double trace_q(const NoiseModel& model) {
  double s = 0.0;
  for (double q : model.eigenvalues()) s += q;
  return 3.0 * s;
}

struct WienerIncrements {
  double dt = 0.0;
  std::uint64_t path = 0;
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 3>> xi;  // K x 3 per step
  std::vector<Coordinates> dw;  // d x 3 velocity coordinates per step

  std::size_t steps() const { return dw.size(); }

  GridFunction grid_increment(std::size_t j, const GramSet& g) const { return g.lift(dw.at(j)); }

  // W(t_k) - W(t_0)
  Coordinates cumulative(std::size_t k) const {
    Coordinates w = Coordinates::Zero(dw.empty() ? 0 : dw.front().rows(), 3);
    for (std::size_t j = 0; j < k; ++j) w += dw[j];
    return w;
  }
};

inline WienerIncrements sample_increments(const NoiseModel& model, double dt, std::size_t n_steps, std::uint64_t path) {
  if (!(dt > 0.0)) throw std::invalid_argument("sample_increments: dt must be positive");
  WienerIncrements inc;
  inc.dt = dt;
  inc.path = path;
  inc.xi.reserve(n_steps);
  inc.dw.reserve(n_steps);
  const double root = std::sqrt(dt);
  for (std::size_t j = 0; j < n_steps; ++j) {
    inc.xi.push_back(model.draw(path, j));
    inc.dw.push_back(root * (model.scaled_basis() * inc.xi.back()));
  }
  return inc;
}

// Nested refinement: each coarse increment is the sum of `factor` fine ones.
inline WienerIncrements coarsen(const WienerIncrements& fine, std::size_t factor) {
  if (factor == 0 || fine.steps() % factor != 0) throw std::invalid_argument("coarsen: factor must divide the step count");
  WienerIncrements out;
  out.dt = fine.dt * static_cast<double>(factor);
  out.path = fine.path;
  const double norm = 1.0 / std::sqrt(static_cast<double>(factor));
  for (std::size_t j = 0; j < fine.steps(); j += factor) {
    auto xi = fine.xi[j];
    Coordinates dw = fine.dw[j];
    for (std::size_t i = 1; i < factor; ++i) {
      xi += fine.xi[j + i];
      dw += fine.dw[j + i];
    }
    out.xi.push_back(norm * xi);
    out.dw.push_back(std::move(dw));
  }
  return out;
}

inline BeamState apply_A(const NoiseModel& model, const GridFunction& g) {
  model.gram().require_shape(g, "apply_A");
  return {GridFunction::Zero(g.rows(), 3), model.sigma() * g};
}

// (0, sigma w) in state coordinates for a velocity-coordinate input.
inline Coordinates inject(const NoiseModel& model, const Coordinates& w) {
  const int d = model.gram().dim();
  if (w.rows() != d) throw ShapeError("inject: expected velocity coordinates");
  Coordinates out = Coordinates::Zero(2 * d, 3);
  out.bottomRows(d) = model.sigma() * w;
  return out;
}

struct TraceConditionResult {
  double value = 0.0;
  double bound = 0.0;
  std::vector<double> times;
  std::vector<double> integrand;
};

// Trapezoidal quadrature in r of sum_{k,c} |U(t,r) A sqrt(q_k) e_{k,c}|_H^2.
inline TraceConditionResult trace_condition(const PropagatorFactorization& p, const NoiseModel& model, double t0,
                                            double t, double c4) {
  const GramSet& g = model.gram();
  const int d = g.dim();
  const std::size_t a = p.index_of(t0), b = p.index_of(t);
  if (a > b) throw std::invalid_argument("trace_condition: need t0 <= t");
  TraceConditionResult out;
  const double tr = trace_q(model);
  out.bound = (t - t0) * model.sigma() * model.sigma() * std::exp(2.0 * c4 * (t - t0)) * tr;
  if (p.is_adjoint()) throw std::invalid_argument("trace_condition: expects a forward factorization");

  // Q_r = U(t,r)^T M_H U(t,r), built backwards from Q_t = M_H. The recursion
  // runs in H-orthonormal coordinates (M_H = R^T R) so that Q stays O(1).
  const Eigen::LLT<Eigen::MatrixXd> gram(g.state_gram());
  const Eigen::MatrixXd r = gram.matrixU();
  const auto r_upper = r.triangularView<Eigen::Upper>();
  Eigen::MatrixXd inject = Eigen::MatrixXd::Zero(2 * d, model.modes());
  inject.bottomRows(d) = model.sigma() * model.scaled_basis();
  const Eigen::MatrixXd r_inject = r * inject;
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2 * d, 2 * d);
  out.times.assign(b - a + 1, 0.0);
  out.integrand.assign(b - a + 1, 0.0);
  const Eigen::MatrixXd* last = nullptr;
  Eigen::MatrixXd step_tilde;
  for (std::size_t k = b + 1; k-- > a;) {
    if (k < b) {
      if (&p.step(k) != last) {
        last = &p.step(k);
        step_tilde = r * r_upper.solve<Eigen::OnTheRight>(p.step(k));
      }
      q = step_tilde.transpose() * q * step_tilde;
    }
    out.times[k - a] = p.time(k);
    out.integrand[k - a] = 3.0 * (r_inject.transpose() * q * r_inject).trace();
  }
  for (std::size_t j = 0; j + 1 < out.integrand.size(); ++j) {
    out.value += 0.5 * p.dt() * (out.integrand[j] + out.integrand[j + 1]);
  }
  return out;
}

// Variance of <int_t0^t U(t,r) A dW(r), h>_H, i.e. the quadrature of
// sum_{k,c} q_k <A e_{k,c}, U*(t,r) h>_H^2 over r. The right-endpoint rule
// matches how the stepper injects each increment. `adj` must be the adjoint
// factorization.
inline double ito_variance(const PropagatorFactorization& adj, const NoiseModel& model, const Coordinates& h, double t0,
                           double t) {
  if (!adj.is_adjoint()) throw std::invalid_argument("ito_variance: expects an adjoint factorization");
  const GramSet& g = model.gram();
  const int d = g.dim();
  if (h.rows() != 2 * d) throw ShapeError("ito_variance: test function size mismatch");
  const std::size_t a = adj.index_of(t0), b = adj.index_of(t);
  if (a > b) throw std::invalid_argument("ito_variance: need t0 <= t");
  if (a == b || model.sigma() == 0.0) return 0.0;
  // <A e_k, z>_H = sigma e_k^T M_V z_v, so project with (sigma sqrt(q) E)^T M_V.
  const Eigen::MatrixXd proj = model.sigma() * model.scaled_basis().transpose() * g.reduced_mass();
  Coordinates z = h;
  double total = 0.0;
  for (std::size_t k = b; k > a; --k) {
    if (k < b) z = adj.step(k) * z;
    total += adj.dt() * (proj * z.bottomRows(d)).squaredNorm();
  }
  return total;
}

}  // namespace fibersde
