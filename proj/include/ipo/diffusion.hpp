// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ipo/denoiser.hpp"
#include "ipo/random.hpp"
#include "ipo/schedule.hpp"

namespace ipo {

/// Per-timestep loss weight: uniform (w = 1) or the schedule's SNR.
enum class Weighting { uniform, snr };

inline std::string_view to_string(Weighting w) { return w == Weighting::uniform ? "uniform" : "snr"; }

inline Weighting weighting_from_string(std::string_view s) {
  if (s == "uniform") return Weighting::uniform;
  if (s == "snr") return Weighting::snr;
  throw std::invalid_argument("unknown weighting '" + std::string(s) + "'");
}

inline double timestep_weight(Weighting w, const NoiseSchedule& schedule, int t) {
  return w == Weighting::uniform ? 1.0 : schedule.snr[static_cast<std::size_t>(t)];
}

struct SampleBatch {
  std::vector<Vec> x0;
  std::vector<Vec> conditions;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const { return x0.size(); }
  bool empty() const { return x0.empty(); }

  void validate() const {
    if (conditions.size() != x0.size() || seeds.size() != x0.size()) {
      throw std::invalid_argument("sample batch fields have different row counts");
    }
  }

  void push_back(Vec x, Vec c, std::uint64_t seed) {
    x0.push_back(std::move(x));
    conditions.push_back(std::move(c));
    seeds.push_back(seed);
  }
};

struct LossAndGradient {
  double loss = 0.0;
  Vec gradient;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// One (t, eps) draw for a diffusion loss term. Draw order is t first,
/// then the noise components.
struct NoiseDraw {
  int t = 0;
  Vec eps;
};

inline NoiseDraw draw_noise(Rng& rng, const NoiseSchedule& schedule, std::size_t dim) {
  NoiseDraw d;
  d.t = static_cast<int>(rng.index(static_cast<std::size_t>(schedule.steps())));
  d.eps = rng.normal_vector(dim);
  return d;
}

/// Epsilon-prediction loss: mean over the batch of w(t) ||eps - eps_hat||^2,
/// one uniform t and one standard normal eps per row.
template <NoisePredictor Model>
LossAndGradient ddpm_loss(const Model& model, const SampleBatch& batch, const NoiseSchedule& schedule,
                          Rng& rng, Weighting weighting = Weighting::uniform) {
  if (batch.empty()) throw std::invalid_argument("ddpm_loss needs a nonempty batch");
  batch.validate();
  LossAndGradient out;
  out.gradient.assign(model.num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  typename Model::Tape tape;
  Vec grad_out(model.input_dim());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const NoiseDraw d = draw_noise(rng, schedule, batch.x0[i].size());
    const Vec xt = forward_sample(batch.x0[i], d.t, d.eps, schedule);
    const Vec pred = model.predict(xt, d.t, batch.conditions[i], tape);
    const double w = timestep_weight(weighting, schedule, d.t);
    out.loss += w * squared_distance(pred, d.eps) * inv_n;
    for (std::size_t j = 0; j < pred.size(); ++j) grad_out[j] = 2.0 * w * (pred[j] - d.eps[j]) * inv_n;
    model.backprop(tape, grad_out, out.gradient);
  }
  return out;
}

/// Standard DDPM reverse chain from x_T ~ N(0, I) using the posterior variance
/// beta_t (1 - abar_{t-1}) / (1 - abar_t). The final step is noise-free.
template <NoisePredictor Model>
Vec ancestral_sample(const Model& model, std::span<const double> condition, const NoiseSchedule& schedule,
                     std::uint64_t seed) {
  Rng rng(seed);
  Vec x = rng.normal_vector(model.input_dim());
  typename Model::Tape tape;
  for (int t = schedule.steps() - 1; t >= 0; --t) {
    const auto ti = static_cast<std::size_t>(t);
    const Vec eps = model.predict(x, t, condition, tape);
    const double beta = schedule.betas[ti];
    const double abar = schedule.alpha_bars[ti];
    const double coef = beta / std::sqrt(1.0 - abar);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alphas[ti]);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = inv_sqrt_alpha * (x[j] - coef * eps[j]);
    if (t > 0) {
      const double abar_prev = schedule.alpha_bars[ti - 1];
      const double sigma = std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
      for (auto& v : x) v += sigma * rng.normal();
    }
  }
  return x;
}

}  // namespace ipo
