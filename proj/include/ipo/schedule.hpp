// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ipo/random.hpp"

namespace ipo {

enum class ScheduleKind { linear, cosine };

inline std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}

inline ScheduleKind schedule_kind_from_string(std::string_view s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule kind '" + std::string(s) + "'");
}

/// Discrete DDPM noise schedule. Index t in [0, T) is step t+1 of the
/// usual 1-based notation.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> snr;

  int steps() const { return static_cast<int>(betas.size()); }
};

/// Builds a linear or cosine schedule. Cosine betas follow the squared-cosine
/// alpha-bar curve (offset 0.008) and are clipped into [beta_min, beta_max].
inline NoiseSchedule build_schedule(int steps, ScheduleKind kind, double beta_min,
                                    double beta_max) {
  if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    throw std::invalid_argument("schedule betas must satisfy 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.kind = kind;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  const auto n = static_cast<std::size_t>(steps);
  s.betas.resize(n);
  if (kind == ScheduleKind::linear) {
    for (std::size_t t = 0; t < n; ++t) {
      const double frac = n == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(n - 1);
      s.betas[t] = beta_min + frac * (beta_max - beta_min);
    }
  } else {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / static_cast<double>(n) + offset) / (1.0 + offset) *
                                std::numbers::pi / 2.0);
      return c * c;
    };
    for (std::size_t t = 0; t < n; ++t) {
      const double beta = 1.0 - f(static_cast<double>(t + 1)) / f(static_cast<double>(t));
      s.betas[t] = std::clamp(beta, beta_min, beta_max);
    }
  }
  s.alphas.resize(n);
  s.alpha_bars.resize(n);
  s.snr.resize(n);
  double prod = 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
    s.snr[t] = prod / (1.0 - prod);
  }
  return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Vec forward_sample(std::span<const double> x0, int t, std::span<const double> eps,
                          const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.steps()) throw std::invalid_argument("timestep out of range");
  if (x0.size() != eps.size()) throw std::invalid_argument("noise dimension mismatch");
  const double abar = schedule.alpha_bars[static_cast<std::size_t>(t)];
  const double a = std::sqrt(abar);
  const double b = std::sqrt(1.0 - abar);
  Vec out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

}  // namespace ipo
