// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace fibersde {

// Fornberg's recursion for finite-difference weights. Offsets are in units of
// the grid spacing; the returned weights must still be divided by h^order.
inline std::vector<double> finite_difference_weights(int order, std::span<const double> offsets,
                                                     double x0 = 0.0) {
  const int n = static_cast<int>(offsets.size());
  if (order < 0 || n <= order) throw std::invalid_argument("finite_difference_weights: too few offsets");

  std::vector<std::vector<double>> c(n, std::vector<double>(order + 1, 0.0));
  double c1 = 1.0;
  double c4 = offsets[0] - x0;
  c[0][0] = 1.0;
  for (int i = 1; i < n; ++i) {
    const int mn = std::min(i, order);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = offsets[i] - x0;
    for (int j = 0; j < i; ++j) {
      const double c3 = offsets[i] - offsets[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
        c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
      }
      for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
      c[j][0] = c4 * c[j][0] / c3;
    }
    c1 = c2;
  }

  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = c[i][order];
  return w;
}

// Weights for a one-sided stencil on nodes first, first+dir, ..., anchored at
// node `first` and accurate to second order.
inline std::vector<double> one_sided_weights(int order, int direction) {
  std::vector<double> offsets(order + 2);
  for (int i = 0; i < order + 2; ++i) offsets[i] = static_cast<double>(direction * i);
  return finite_difference_weights(order, offsets);
}

}  // namespace fibersde
