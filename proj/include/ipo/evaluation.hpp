// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ipo/diffusion.hpp"
#include "ipo/random.hpp"
#include "ipo/schedule.hpp"

namespace ipo {

struct EvalConfig {
  std::size_t n_samples = 500;
  std::size_t n_pairs = 500;

  bool operator==(const EvalConfig&) const = default;
};

template <class F>
concept RewardFunction = requires(const F& f, std::span<const double> x, std::span<const double> c) {
  { f(x, c) } -> std::convertible_to<double>;
};

/// n samples cycling through the conditions; sample i is seeded from (seed, i).
template <NoisePredictor Model>
SampleBatch sample_eval_set(const Model& policy, const std::vector<Vec>& conditions, std::size_t n,
                            std::uint64_t seed, const NoiseSchedule& schedule) {
  if (conditions.empty()) throw std::invalid_argument("evaluation needs at least one condition");
  SampleBatch out;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& c = conditions[i % conditions.size()];
    const std::uint64_t s = derive_seed(seed, "eval-sample", i);
    out.push_back(ancestral_sample(policy, c, schedule, s), c, s);
  }
  return out;
}

struct RewardSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

template <RewardFunction Reward>
RewardSummary summarize_rewards(const SampleBatch& samples, const Reward& reward) {
  if (samples.empty()) throw std::invalid_argument("reward summary needs samples");
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double r = reward(samples.x0[i], samples.conditions[i]);
    sum += r;
    sq += r * r;
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(0.0, sq / n - mean * mean))};
}

template <NoisePredictor Model, RewardFunction Reward>
RewardSummary mean_reward(const Model& policy, const Reward& reward, const std::vector<Vec>& conditions,
                          std::size_t n_samples, std::uint64_t seed, const NoiseSchedule& schedule) {
  if (n_samples == 0) throw std::invalid_argument("mean_reward needs n_samples >= 1");
  return summarize_rewards(sample_eval_set(policy, conditions, n_samples, seed, schedule), reward);
}

/// Head-to-head: pair i samples both policies with the same seed and the
/// same condition. Wins count 1, exact ties 0.5.
template <NoisePredictor ModelA, NoisePredictor ModelB, RewardFunction Reward>
double win_rate(const ModelA& a, const ModelB& b, const Reward& reward, const std::vector<Vec>& conditions,
                std::size_t n_pairs, std::uint64_t seed, const NoiseSchedule& schedule) {
  if (n_pairs == 0) throw std::invalid_argument("win_rate needs n_pairs >= 1");
  if (conditions.empty()) throw std::invalid_argument("win_rate needs at least one condition");
  double wins = 0.0;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const Vec& c = conditions[i % conditions.size()];
    const std::uint64_t s = derive_seed(seed, "eval-pair", i);
    const double ra = reward(ancestral_sample(a, c, schedule, s), c);
    const double rb = reward(ancestral_sample(b, c, schedule, s), c);
    if (ra > rb) wins += 1.0;
    else if (ra == rb) wins += 0.5;
  }
  return wins / static_cast<double>(n_pairs);
}

/// 2 E||x - y|| - E||x - x'|| - E||y - y'|| over all ordered pairs of the
/// two empirical sets.
inline double energy_distance(const std::vector<Vec>& xs, const std::vector<Vec>& ys) {
  if (xs.empty() || ys.empty()) throw std::invalid_argument("energy_distance needs nonempty sets");
  auto mean_dist = [](const std::vector<Vec>& a, const std::vector<Vec>& b) {
    double sum = 0.0;
    for (const auto& p : a) {
      for (const auto& q : b) sum += std::sqrt(squared_distance(p, q));
    }
    return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };
  const double d = 2.0 * mean_dist(xs, ys) - mean_dist(xs, xs) - mean_dist(ys, ys);
  return std::max(0.0, d);
}

struct EvalRow {
  int iteration = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double win_rate_vs_prev = 0.5;
  double energy_distance = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  bool monotone_improvement = true;

  void refresh_flags() {
    monotone_improvement = true;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].mean_reward < rows[i - 1].mean_reward) monotone_improvement = false;
    }
  }
};

}  // namespace ipo
