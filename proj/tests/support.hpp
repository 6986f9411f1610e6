// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ipo/denoiser.hpp"
#include "ipo/diffusion.hpp"
#include "ipo/random.hpp"
#include "ipo/schedule.hpp"

namespace ipo::testing {

struct StubArch {
  std::size_t dim = 2;
  int tag = 0;
  bool operator==(const StubArch&) const = default;
};

/// Predicts the zero vector; no parameters.
struct ZeroPredictor {
  struct Tape {};
  std::size_t dim = 2;

  std::size_t input_dim() const { return dim; }
  std::size_t num_params() const { return 0; }
  StubArch arch() const { return {dim, 0}; }
  Vec predict(std::span<const double>, int, std::span<const double>, Tape&) const { return Vec(dim, 0.0); }
  void backprop(const Tape&, std::span<const double>, std::span<double>) const {}
};

/// The exact noise predictor for a dataset that is a point mass at mu:
/// eps = (x_t - sqrt(abar_t) mu) / sqrt(1 - abar_t).
struct PointMassPredictor {
  struct Tape {};
  Vec mu;
  Vec alpha_bars;

  std::size_t input_dim() const { return mu.size(); }
  std::size_t num_params() const { return 0; }
  StubArch arch() const { return {mu.size(), 1}; }
  Vec predict(std::span<const double> x, int t, std::span<const double>, Tape&) const {
    const double ab = alpha_bars[static_cast<std::size_t>(t)];
    Vec out(mu.size());
    for (std::size_t j = 0; j < mu.size(); ++j) out[j] = (x[j] - std::sqrt(ab) * mu[j]) / std::sqrt(1.0 - ab);
    return out;
  }
  void backprop(const Tape&, std::span<const double>, std::span<double>) const {}
};

inline DenoiserArch tiny_arch(std::vector<std::size_t> hidden = {8}) {
  DenoiserArch a;
  a.input_dim = 2;
  a.condition_dim = 2;
  a.hidden_sizes = std::move(hidden);
  a.time_embedding_size = 4;
  return a;
}

inline SampleBatch small_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  SampleBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    Vec c(2, 0.0);
    c[i % 2] = 1.0;
    b.push_back(rng.normal_vector(2), c, i);
  }
  return b;
}

/// Central differences of f at params, one coordinate at a time; f must
/// rebuild its RNG stream on every call so the draws stay fixed.
inline Vec numeric_gradient(const std::function<double(std::span<const double>)>& f, Vec params,
                            double h = 1e-5) {
  Vec g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f(params);
    params[i] = keep - h;
    const double down = f(params);
    params[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Elementwise |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace ipo::testing
