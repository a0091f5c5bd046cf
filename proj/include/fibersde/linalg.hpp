// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>

namespace fibersde {

// Deterministic pseudo-random start vector for power iterations.
inline Eigen::VectorXd seeded_vector(Eigen::Index size, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) v(i) = std::ldexp(static_cast<double>(gen() >> 11), -53) - 0.5;
  return v;
}

// Largest singular value of `apply` with respect to the inner product
// <x, y> = x^T G y. `adjoint` must realize the G-adjoint of `apply`.
template <class Apply, class Adjoint>
double gram_operator_norm(Apply&& apply, Adjoint&& adjoint, const Eigen::MatrixXd& gram, Eigen::VectorXd x,
                          int max_iter = 5000, double rtol = 1e-13) {
  auto norm = [&](const Eigen::VectorXd& y) { return std::sqrt(std::max(0.0, y.dot(gram * y))); };
  double nx = norm(x);
  if (nx == 0.0) return 0.0;
  x /= nx;
  double estimate = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd ax = apply(x);
    const double next = norm(ax);
    if (next == 0.0) return 0.0;
    Eigen::VectorXd z = adjoint(ax);
    const double nz = norm(z);
    if (nz == 0.0) return next;
    x = z / nz;
    if (it > 3 && std::abs(next - estimate) <= rtol * next) return next;
    estimate = next;
  }
  return estimate;
}

inline double gram_operator_norm(const Eigen::MatrixXd& a, const Eigen::MatrixXd& gram, std::uint64_t seed = 17) {
  const Eigen::LLT<Eigen::MatrixXd> gram_llt(gram);
  const Eigen::MatrixXd adjoint = gram_llt.solve(a.transpose() * gram);
  return gram_operator_norm([&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x; },
                            [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return adjoint * x; }, gram,
                            seeded_vector(a.cols(), seed));
}

}  // namespace fibersde
