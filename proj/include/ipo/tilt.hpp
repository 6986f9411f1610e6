// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace ipo {

/// normalize(p * exp(r / beta)), computed with the max log-weight shifted
/// out so large r / beta does not overflow.
inline std::vector<double> discrete_tilt(std::span<const double> p, std::span<const double> r, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("tilt needs beta > 0");
  if (p.size() != r.size() || p.empty()) throw std::invalid_argument("tilt needs equal-length nonempty vectors");
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0) throw std::invalid_argument("tilt needs nonnegative probabilities");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("tilt needs p to sum to 1");

  std::vector<double> logw(p.size(), -std::numeric_limits<double>::infinity());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(r[i])) throw std::invalid_argument("tilt needs finite rewards");
    if (p[i] > 0.0) {
      logw[i] = std::log(p[i]) + r[i] / beta;
      mx = std::max(mx, logw[i]);
    }
  }
  std::vector<double> out(p.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      out[i] = std::exp(logw[i] - mx);
      z += out[i];
    }
  }
  for (auto& v : out) v /= z;
  return out;
}

}  // namespace ipo
