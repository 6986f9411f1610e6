// SPDX-License-Identifier: Apache-2.0
// Independent reference computations for the tilt and toy-task checks.
#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace ipo::testing {

/// E_pi[r] - beta * KL(pi || p), with 0 log 0 = 0.
inline double kl_regularized_value(std::span<const double> pi, std::span<const double> p,
                                   std::span<const double> r, double beta) {
  double value = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (pi[i] <= 0.0) continue;
    value += pi[i] * r[i] - beta * pi[i] * std::log(pi[i] / p[i]);
  }
  return value;
}

/// Maximizes the KL-regularized value over the probability simplex restricted
/// to a grid: starting at the uniform point, move `step` of mass between
/// any two states while that improves the value, refining the step from 0.1
/// down to final_step. Every visited point stays on the final_step grid.
inline std::vector<double> grid_search_optimum(std::span<const double> p, std::span<const double> r, double beta,
                                               double final_step) {
  const std::size_t n = p.size();
  std::vector<double> pi(n, 1.0 / static_cast<double>(n));
  for (double step = 0.1; step >= final_step * 0.999; step /= 10.0) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j || pi[j] < step - 1e-15) continue;
          const double before = kl_regularized_value(pi, p, r, beta);
          pi[i] += step;
          pi[j] -= step;
          if (pi[j] < 0.0) pi[j] = 0.0;
          if (kl_regularized_value(pi, p, r, beta) > before + 1e-15) {
            moved = true;
          } else {
            pi[i] -= step;
            pi[j] += step;
          }
        }
      }
    }
  }
  return pi;
}

inline double total_variation(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace ipo::testing
