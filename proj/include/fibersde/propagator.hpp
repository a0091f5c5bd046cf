// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <fmt/format.h>

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "beam_space.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "operators.hpp"

namespace fibersde {

enum class PropagatorScheme { cayley_midpoint, picard };

inline const char* to_string(PropagatorScheme s) {
  return s == PropagatorScheme::cayley_midpoint ? "cayley-midpoint" : "picard";
}

// Number of steps of size dt in [t0, t1]; throws unless dt divides the window.
inline std::size_t aligned_step_count(double t0, double t1, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
  const double window = t1 - t0;
  if (!(window >= 0.0)) throw std::invalid_argument("time window is reversed");
  const double ratio = window / dt;
  const double steps = std::round(ratio);
  if (std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio)) throw std::invalid_argument("dt must divide the time window");
  return static_cast<std::size_t>(steps);
}

inline Eigen::MatrixXd cayley_step(const Eigen::MatrixXd& l, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("cayley_step: dt must be positive");
  const Eigen::Index n = l.rows();
  const Eigen::MatrixXd half = 0.5 * dt * l;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - half);
  if (lu.rcond() < 1e-14) throw Error("cayley_step: resolvent is numerically singular (rcond " + std::to_string(lu.rcond()) + ")");
  return lu.solve(Eigen::MatrixXd::Identity(n, n) + half);
}

inline Eigen::MatrixXd cayley_step(const BlockOperator& l0, double dt) { return cayley_step(l0.matrix, dt); }

// Cayley step for L = [0 I; -M^{-1} K 0] with K symmetric. Eliminating the
// velocity leaves one SPD solve with M + (dt/2)^2 K, which keeps the step
// H-isometric to roundoff even when K is stiff.
inline Eigen::MatrixXd cayley_step(const Eigen::MatrixXd& mass, const Eigen::LLT<Eigen::MatrixXd>& mass_factor,
                                   const Eigen::MatrixXd& stiffness, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("cayley_step: dt must be positive");
  const Eigen::Index d = mass.rows();
  const double h = 0.5 * dt;
  const Eigen::LLT<Eigen::MatrixXd> schur(mass + h * h * stiffness);
  if (schur.info() != Eigen::Success) throw Error("cayley_step: M + (dt/2)^2 K is not positive definite");
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd guu = schur.solve(mass - h * h * stiffness);
  const Eigen::MatrixXd guv = schur.solve(dt * mass);
  const Eigen::MatrixXd k = mass_factor.solve(stiffness);
  Eigen::MatrixXd g(2 * d, 2 * d);
  g.topLeftCorner(d, d) = guu;
  g.topRightCorner(d, d) = guv;
  g.bottomLeftCorner(d, d) = -h * k * (id + guu);
  g.bottomRightCorner(d, d) = id - h * k * guv;
  return g;
}

inline Eigen::MatrixXd cayley_step(const GeneratorFamily& fam, double t, double dt) {
  const GramSet& g = fam.gram();
  return cayley_step(g.reduced_mass(), g.mass_factor(), fam.effective_stiffness(t), dt);
}

// Ordered per-step maps. For an adjoint factorization the stored steps are the
// Gram transposes and composition runs in reverse.
class PropagatorFactorization {
public:
  PropagatorFactorization(double t0, double t1, double dt, PropagatorScheme scheme, bool adjoint = false)
      : t0_(t0), t1_(t1), dt_(dt), scheme_(scheme), adjoint_(adjoint) {
    count_ = aligned_step_count(t0, t1, dt);
  }

  double t0() const { return t0_; }
  double t1() const { return t1_; }
  double dt() const { return dt_; }
  PropagatorScheme scheme() const { return scheme_; }
  bool is_adjoint() const { return adjoint_; }
  std::size_t step_count() const { return count_; }
  Eigen::Index size() const { return steps_.empty() ? 0 : steps_.front()->rows(); }

  double time(std::size_t k) const { return k == count_ ? t1_ : t0_ + static_cast<double>(k) * dt_; }

  std::size_t index_of(double t) const {
    const double x = (t - t0_) / dt_;
    const double k = std::round(x);
    if (std::abs(x - k) > 1e-9 || k < 0 || k > static_cast<double>(count_)) {
      throw std::invalid_argument("time " + std::to_string(t) + " is not on the propagator grid");
    }
    return static_cast<std::size_t>(k);
  }

  const Eigen::MatrixXd& step(std::size_t k) const { return *steps_.at(k); }

  void push_step(std::shared_ptr<const Eigen::MatrixXd> g) {
    for (Eigen::Index i = 0; i < g->size(); ++i) {
      if (!std::isfinite(g->data()[i])) throw BlowUpError("propagator step has non-finite entries");
    }
    steps_.push_back(std::move(g));
  }

  std::size_t stored_steps() const { return steps_.size(); }

  // U(t_to, t_from) x, or U*(t_to, t_from) x for an adjoint factorization.
  template <class Derived>
  Eigen::Matrix<double, Eigen::Dynamic, Derived::ColsAtCompileTime> apply(const Eigen::MatrixBase<Derived>& x,
                                                                          std::size_t from, std::size_t to) const {
    check_pair(from, to);
    Eigen::Matrix<double, Eigen::Dynamic, Derived::ColsAtCompileTime> y = x;
    if (!adjoint_) {
      for (std::size_t k = from; k < to; ++k) y = step(k) * y;
    } else {
      for (std::size_t k = to; k-- > from;) y = step(k) * y;
    }
    return y;
  }

  Coordinates apply_between(const Coordinates& x, double from, double to) const { return apply(x, index_of(from), index_of(to)); }

  Eigen::MatrixXd matrix(std::size_t from, std::size_t to) const {
    check_pair(from, to);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(size(), size());
    if (!adjoint_) {
      for (std::size_t k = from; k < to; ++k) m = step(k) * m;
    } else {
      for (std::size_t k = to; k-- > from;) m = step(k) * m;
    }
    return m;
  }

private:
  void check_pair(std::size_t from, std::size_t to) const {
    if (from > to || to > count_) throw std::invalid_argument("propagator: need from <= to within the window");
    if (steps_.size() != count_) throw std::logic_error("propagator: factorization is incomplete");
  }

  double t0_, t1_, dt_;
  PropagatorScheme scheme_;
  bool adjoint_;
  std::size_t count_ = 0;
  std::vector<std::shared_ptr<const Eigen::MatrixXd>> steps_;
};

namespace detail {

// (sin x - x cos x) / x^3, (x sin x + cos x - 1) / x^2, (1 - cos x) / x^2 and
// sin x / x, with power series near zero.
struct PhiFunctions {
  double a, b, c, sinc;

  explicit PhiFunctions(double x) {
    if (std::abs(x) < 0.5) {
      const double x2 = x * x;
      a = b = c = sinc = 0.0;
      double p = 1.0;  // x^(2k-2)
      double fact = 1.0;  // (2k-1)!
      double sign = 1.0;
      for (int k = 1; k <= 14; ++k) {
        const double f2k = fact * (2 * k);   // (2k)!
        const double f2k1 = f2k * (2 * k + 1);  // (2k+1)!
        a += sign * (2.0 * k) / f2k1 * p;
        b += sign * (2.0 * k - 1.0) / f2k * p;
        c += sign / f2k * p;
        sinc += sign / fact * p;
        fact = f2k1;
        p *= x2;
        sign = -sign;
      }
    } else {
      const double s = std::sin(x), co = std::cos(x);
      a = (s - x * co) / (x * x * x);
      b = (x * s + co - 1.0) / (x * x);
      c = (1.0 - co) / (x * x);
      sinc = s / x;
    }
  }
};

}  // namespace detail

// Exact unperturbed flow S(dt) and the weights of the exponential quadrature
// of int_0^dt S(dt - r) (0, f(r)) dr with f linear between the step ends.
// The weight matrices act on velocity-block forcing (d rows); the vectors are
// the same maps per mode, on displacement and velocity amplitudes.
struct ExponentialQuadrature {
  Eigen::MatrixXd flow;        // 2d x 2d
  Eigen::MatrixXd weight_start;  // 2d x d
  Eigen::MatrixXd weight_end;    // 2d x d
  Eigen::VectorXd cs, sn_over_w, msn_w, a0, a1, b0, b1;

  ExponentialQuadrature(const ModalBasis& modes, double dt) {
    const Eigen::Index d = modes.omega.size();
    for (auto* v : {&cs, &sn_over_w, &msn_w, &a0, &a1, &b0, &b1}) v->resize(d);
    for (Eigen::Index m = 0; m < d; ++m) {
      const double w = modes.omega(m);
      const double th = w * dt;
      const detail::PhiFunctions f(th);
      cs(m) = std::cos(th);
      sn_over_w(m) = dt * f.sinc;
      msn_w(m) = -w * std::sin(th);
      a0(m) = dt * dt * f.a;
      a1(m) = dt * dt * f.c - a0(m);
      b0(m) = dt * f.b;
      b1(m) = dt * f.sinc - b0(m);
    }
    const Eigen::MatrixXd& phi = modes.phi;
    const Eigen::MatrixXd& psi = modes.phi_t_mass;
    auto conj = [&](const Eigen::VectorXd& diag) -> Eigen::MatrixXd { return phi * diag.asDiagonal() * psi; };
    flow.resize(2 * d, 2 * d);
    flow << conj(cs), conj(sn_over_w), conj(msn_w), conj(cs);
    weight_start.resize(2 * d, d);
    weight_start << conj(a0), conj(b0);
    weight_end.resize(2 * d, d);
    weight_end << conj(a1), conj(b1);
  }
};

struct PicardConfig {
  double tol = 1e-10;
  int max_iter = 100;
  double alpha = 0.0;  // 0 selects 2 C5 + 1
};

namespace detail {

inline Eigen::MatrixXd picard_step(const GeneratorFamily& fam, const ExponentialQuadrature& q, double ca, double cb) {
  const int d = fam.dim();
  const Eigen::MatrixXd& k = fam.coupling();
  // x1 = A x0 + B x1 with B = W_end c(t1) K acting on the displacement block.
  Eigen::MatrixXd a = q.flow;
  a.leftCols(d) += ca * q.weight_start * k;
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  b.leftCols(d) = cb * q.weight_end * k;
  Eigen::MatrixXd g = a;
  for (int it = 0; it < 200; ++it) {
    Eigen::MatrixXd next = a + b * g;
    const double change = (next - g).cwiseAbs().maxCoeff();
    g = std::move(next);
    if (change <= 1e-15 * g.cwiseAbs().maxCoeff()) return g;
  }
  throw NonConvergenceError("picard step: one-step fixed point did not converge", (a + b * g - g).cwiseAbs().maxCoeff());
}

}  // namespace detail

inline PropagatorFactorization build_propagator(const GeneratorFamily& fam, double t0, double t1, double dt,
                                                PropagatorScheme scheme) {
  PropagatorFactorization p(t0, t1, dt, scheme);
  fam.force().require_time(t0);
  fam.force().require_time(t1);
  const std::size_t count = p.step_count();
  std::map<std::pair<double, double>, std::shared_ptr<const Eigen::MatrixXd>> cache;
  std::unique_ptr<ExponentialQuadrature> quad;
  if (scheme == PropagatorScheme::picard) quad = std::make_unique<ExponentialQuadrature>(fam.modes(), dt);
  for (std::size_t k = 0; k < count; ++k) {
    const double ta = p.time(k);
    const double tb = p.time(k + 1);
    std::pair<double, double> key;
    if (scheme == PropagatorScheme::cayley_midpoint) {
      key = {fam.force().c(0.5 * (ta + tb)), 0.0};
    } else {
      key = {fam.force().c(ta), fam.force().c(tb)};
    }
    auto it = cache.find(key);
    if (it == cache.end()) {
      Eigen::MatrixXd g = scheme == PropagatorScheme::cayley_midpoint ? cayley_step(fam, 0.5 * (ta + tb), dt)
                                                                       : detail::picard_step(fam, *quad, key.first, key.second);
      it = cache.emplace(key, std::make_shared<const Eigen::MatrixXd>(std::move(g))).first;
    }
    p.push_step(it->second);
  }
  return p;
}

inline PropagatorFactorization adjoint_propagator(const PropagatorFactorization& p, const GramSet& g) {
  PropagatorFactorization out(p.t0(), p.t1(), p.dt(), p.scheme(), !p.is_adjoint());
  std::map<const Eigen::MatrixXd*, std::shared_ptr<const Eigen::MatrixXd>> cache;
  for (std::size_t k = 0; k < p.step_count(); ++k) {
    const Eigen::MatrixXd* key = &p.step(k);
    auto it = cache.find(key);
    if (it == cache.end()) {
      auto adj = std::make_shared<const Eigen::MatrixXd>(adjoint_H({OperatorRole::l, p.time(k), p.step(k)}, g).matrix);
      it = cache.emplace(key, std::move(adj)).first;
    }
    out.push_step(it->second);
  }
  return out;
}

// U*(t, tau) y by integrating dV/dtau = -L*(tau) V backwards from V(t) = y
// with the endpoint trapezoidal rule.
inline Coordinates backward_adjoint_integration(const GeneratorFamily& fam, const Coordinates& y, double tau, double t,
                                                double dt) {
  const std::size_t count = aligned_step_count(tau, t, dt);
  const Eigen::Index n = 2 * fam.dim();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  Coordinates v = y;
  Eigen::MatrixXd upper_adj = fam.adjoint(fam.l(t));
  for (std::size_t k = count; k-- > 0;) {
    const double tk = k == 0 ? tau : tau + static_cast<double>(k) * dt;
    const Eigen::MatrixXd lower_adj = fam.adjoint(fam.l(tk));
    const Coordinates rhs = v + 0.5 * dt * (upper_adj * v);
    v = (id - 0.5 * dt * lower_adj).partialPivLu().solve(rhs);
    upper_adj = lower_adj;
  }
  return v;
}

// Operator-norm estimate of U(t,tau) - U(t,r) U(r,tau), with both sides
// applied through the stored factors. `adj` is the adjoint factorization of p.
inline double cocycle_defect(const PropagatorFactorization& p, const PropagatorFactorization& adj, double tau, double r,
                             double t, const GramSet& g) {
  const std::size_t a = p.index_of(tau), b = p.index_of(r), c = p.index_of(t);
  if (!(a <= b && b <= c)) throw std::invalid_argument("cocycle_defect: need tau <= r <= t");
  if (adj.step_count() != p.step_count() || adj.is_adjoint() == p.is_adjoint()) {
    throw std::invalid_argument("cocycle_defect: second factorization is not the adjoint of the first");
  }
  using Vec = Eigen::VectorXd;
  return gram_operator_norm([&](const Vec& x) -> Vec { return p.apply(x, a, c) - p.apply(p.apply(x, a, b), b, c); },
                            [&](const Vec& x) -> Vec { return adj.apply(x, a, c) - adj.apply(adj.apply(x, b, c), a, b); },
                            g.state_gram(), seeded_vector(p.size(), 17));
}

inline double cocycle_defect(const PropagatorFactorization& p, double tau, double r, double t, const GramSet& g) {
  return cocycle_defect(p, adjoint_propagator(p, g), tau, r, t, g);
}

struct ResidualCurve {
  std::vector<double> times;
  std::vector<double> values;
  double max() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }
};

// |U(t,tau) w - w - int_tau^t L(r) U(r,tau) w dr|_H on the grid times of P,
// with the integral taken by the trapezoidal rule.
inline ResidualCurve generator_residual(const PropagatorFactorization& p, const GeneratorFamily& fam,
                                        const Coordinates& w, double tau) {
  const GramSet& g = fam.gram();
  if (w.rows() != 2 * g.dim()) throw ShapeError("generator_residual: state size mismatch");
  ResidualCurve out;
  std::size_t k = p.index_of(tau);
  Coordinates x = w;
  Coordinates lx = fam.l(p.time(k)) * x;
  Coordinates integral = Coordinates::Zero(w.rows(), 3);
  out.times.push_back(p.time(k));
  out.values.push_back(0.0);
  for (; k < p.step_count(); ++k) {
    const Coordinates next = p.step(k) * x;
    const Coordinates lnext = fam.l(p.time(k + 1)) * next;
    integral += 0.5 * p.dt() * (lx + lnext);
    x = next;
    lx = lnext;
    out.times.push_back(p.time(k + 1));
    out.values.push_back(g.coordinate_norm(x - w - integral));
  }
  return out;
}

struct PicardResult {
  std::vector<double> times;
  std::vector<Coordinates> states;
  int iterations = 0;
  double alpha = 0.0;
  std::vector<double> defects;  // weighted sup-norm distance between successive iterates
  std::vector<double> contraction_ratios;
};

inline double weighted_d_norm(const Coordinates& x, const Eigen::MatrixXd& d_gram) {
  return std::sqrt(std::max(0.0, (x.transpose() * d_gram * x).trace()));
}

// Fixed point of u = S(. - tau) w + int_tau^. S(. - r) L1(r) u(r) dr on the
// grid tau, tau + dt, ..., t, iterated in the norm sup_k |u_k|_D e^{-alpha (t_k - tau)}.
// The iteration runs on modal amplitudes, where S is a rotation per mode and
// the D norm is diagonal, so roundoff is not amplified by the stiff modes.
inline PicardResult picard_evolution(const GeneratorFamily& fam, const Coordinates& w, double tau, double t, double dt,
                                     const PicardConfig& cfg, double c5) {
  if (!(cfg.tol > 0.0)) throw std::invalid_argument("picard_evolution: tolerance must be positive");
  const std::size_t count = aligned_step_count(tau, t, dt);
  const int d = fam.dim();
  if (w.rows() != 2 * d) throw ShapeError("picard_evolution: state size mismatch");
  PicardResult out;
  out.alpha = cfg.alpha > 0.0 ? cfg.alpha : 2.0 * c5 + 1.0;
  if (!(out.alpha > c5)) throw std::invalid_argument("picard_evolution: alpha must exceed C5");
  fam.force().require_time(tau);
  fam.force().require_time(t);

  const ModalBasis& modes = fam.modes();
  const ExponentialQuadrature q(modes, dt);
  const Eigen::MatrixXd coupling = modes.phi.transpose() * fam.reduced_tension() * modes.phi;
  const Eigen::ArrayXd w2 = modes.omega.array().square();
  const Eigen::ArrayXd disp_weight = w2.square(), vel_weight = w2;
  using Amplitudes = Eigen::Matrix<double, Eigen::Dynamic, 3>;
  struct Modal {
    Amplitudes a, b;
  };
  auto d_norm = [&](const Amplitudes& a, const Amplitudes& b) {
    return std::sqrt((a.array().square().colwise() * disp_weight).sum() + (b.array().square().colwise() * vel_weight).sum());
  };

  out.times.resize(count + 1);
  std::vector<double> cs(count + 1), weight(count + 1);
  for (std::size_t k = 0; k <= count; ++k) {
    out.times[k] = k == count ? t : tau + static_cast<double>(k) * dt;
    cs[k] = fam.force().c(out.times[k]);
    weight[k] = std::exp(-out.alpha * (out.times[k] - tau));
  }

  const Modal start{modes.phi_t_mass * w.topRows(d), modes.phi_t_mass * w.bottomRows(d)};
  auto rotate = [&](const Modal& x) -> Modal {
    return {(x.a.array().colwise() * q.cs.array() + x.b.array().colwise() * q.sn_over_w.array()).matrix(),
            (x.a.array().colwise() * q.msn_w.array() + x.b.array().colwise() * q.cs.array()).matrix()};
  };
  std::vector<Modal> u(count + 1);
  u[0] = start;
  for (std::size_t k = 0; k < count; ++k) u[k + 1] = rotate(u[k]);

  std::vector<Amplitudes> forcing(count + 1);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    for (std::size_t k = 0; k <= count; ++k) forcing[k] = cs[k] * (coupling * u[k].a);
    std::vector<Modal> next(count + 1);
    next[0] = start;
    double defect = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      Modal m = rotate(next[k]);
      m.a.array() += forcing[k].array().colwise() * q.a0.array() + forcing[k + 1].array().colwise() * q.a1.array();
      m.b.array() += forcing[k].array().colwise() * q.b0.array() + forcing[k + 1].array().colwise() * q.b1.array();
      defect = std::max(defect, weight[k + 1] * d_norm(m.a - u[k + 1].a, m.b - u[k + 1].b));
      next[k + 1] = std::move(m);
    }
    if (!out.defects.empty() && out.defects.back() > 0.0) out.contraction_ratios.push_back(defect / out.defects.back());
    out.defects.push_back(defect);
    u = std::move(next);
    out.iterations = it;
    if (defect <= cfg.tol) {
      out.states.reserve(count + 1);
      for (const Modal& m : u) {
        Coordinates x(2 * d, 3);
        x.topRows(d) = modes.phi * m.a;
        x.bottomRows(d) = modes.phi * m.b;
        out.states.push_back(std::move(x));
      }
      return out;
    }
  }
  throw NonConvergenceError("picard_evolution: no convergence after " + std::to_string(cfg.max_iter) +
                                " iterations, last defect " + fmt::format("{:.3e}", out.defects.back()),
                            out.defects.back());
}

}  // namespace fibersde
