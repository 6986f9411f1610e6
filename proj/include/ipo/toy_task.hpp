// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "ipo/annotation.hpp"
#include "ipo/critic.hpp"
#include "ipo/diffusion.hpp"
#include "ipo/random.hpp"

namespace ipo {

// The desk task: every condition is a 2-D Gaussian mixture with one target
// mode the critic prefers and one or more distractor modes that are equally
// "real".

struct MixtureComponent {
  Vec mean;
  double std = 0.3;
  double weight = 0.5;

  bool operator==(const MixtureComponent&) const = default;
};

struct ConditionMixture {
  std::vector<MixtureComponent> components;
  std::size_t target = 0;

  bool operator==(const ConditionMixture&) const = default;
};

struct DataConfig {
  ConditionSpec conditions;
  std::vector<ConditionMixture> mixtures;
  std::size_t real_count = 3000;

  bool operator==(const DataConfig&) const = default;

  void validate() const {
    if (mixtures.size() != conditions.combination_count()) {
      throw std::invalid_argument("data needs one mixture per condition combination");
    }
    for (const auto& m : mixtures) {
      if (m.components.empty()) throw std::invalid_argument("mixture has no components");
      if (m.target >= m.components.size()) throw std::invalid_argument("mixture target out of range");
      double total = 0.0;
      for (const auto& c : m.components) {
        if (c.mean.size() != mixtures.front().components.front().mean.size()) {
          throw std::invalid_argument("mixture means have inconsistent dimension");
        }
        if (!(c.std > 0.0) || c.weight < 0.0) throw std::invalid_argument("mixture component needs std > 0, weight >= 0");
        total += c.weight;
      }
      if (!(total > 0.0)) throw std::invalid_argument("mixture weights sum to zero");
    }
  }

  std::size_t dim() const { return mixtures.front().components.front().mean.size(); }
};

/// Six conditions (3 subjects x 2 actions). Condition k puts its target mode
/// at angle 2 pi k / 6 on the radius-2 circle and a distractor a quarter
/// turn further on.
inline DataConfig default_data_config() {
  DataConfig d;
  d.conditions.categories = {{"subject", {"human", "animal", "vehicle"}}, {"action", {"walk", "run"}}};
  const std::size_t n = d.conditions.combination_count();
  for (std::size_t k = 0; k < n; ++k) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    const double phi = theta + std::numbers::pi / 2.0;
    ConditionMixture m;
    m.components.push_back({{2.0 * std::cos(theta), 2.0 * std::sin(theta)}, 0.3, 0.5});
    m.components.push_back({{2.0 * std::cos(phi), 2.0 * std::sin(phi)}, 0.3, 0.5});
    m.target = 0;
    d.mixtures.push_back(std::move(m));
  }
  return d;
}

inline std::size_t condition_slot(std::span<const double> c) {
  if (c.empty()) throw std::invalid_argument("empty condition vector");
  return static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin());
}

inline Vec draw_from_mixture(const ConditionMixture& m, Rng& rng) {
  double total = 0.0;
  for (const auto& c : m.components) total += c.weight;
  double u = rng.uniform() * total;
  std::size_t k = 0;
  while (k + 1 < m.components.size() && u >= m.components[k].weight) {
    u -= m.components[k].weight;
    ++k;
  }
  const auto& comp = m.components[k];
  Vec x(comp.mean.size());
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = comp.mean[j] + comp.std * rng.normal();
  return x;
}

/// Condition-balanced real data: row i belongs to condition i mod C.
inline SampleBatch sample_real_data(const DataConfig& data, std::size_t count, std::uint64_t seed) {
  data.validate();
  SampleBatch out;
  const std::size_t n = data.mixtures.size();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, "real-data", i);
    Rng rng(s);
    out.push_back(draw_from_mixture(data.mixtures[i % n], rng), data.conditions.encode(i % n), s);
  }
  return out;
}

struct RewardShape {
  double adherence_scale = 0.5;
  double fidelity_scale = 0.5;
  double regularity_radius = 3.0;

  bool operator==(const RewardShape&) const = default;
};

/// condition_adherence: Gaussian kernel around the condition's target mode.
/// sample_fidelity: kernel around the nearest mode of the condition.
/// regularity: broad kernel around the origin.
inline OracleReward make_oracle(const DataConfig& data, const RewardShape& shape, Vec weights, double tau_bad,
                                double tau_good, double tie_margin) {
  data.validate();
  auto mixtures = std::make_shared<const std::vector<ConditionMixture>>(data.mixtures);
  auto kernel = [](double sq, double scale) { return std::exp(-sq / (2.0 * scale * scale)); };
  OracleReward o;
  o.components.push_back({"condition_adherence", [mixtures, shape, kernel](std::span<const double> x,
                                                                           std::span<const double> c) {
                            const auto& m = mixtures->at(condition_slot(c));
                            return kernel(squared_distance(x, m.components[m.target].mean), shape.adherence_scale);
                          }});
  o.components.push_back({"sample_fidelity", [mixtures, shape, kernel](std::span<const double> x,
                                                                       std::span<const double> c) {
                            const auto& m = mixtures->at(condition_slot(c));
                            double best = std::numeric_limits<double>::infinity();
                            for (const auto& comp : m.components) best = std::min(best, squared_distance(x, comp.mean));
                            return kernel(best, shape.fidelity_scale);
                          }});
  o.components.push_back({"regularity", [shape, kernel](std::span<const double> x, std::span<const double>) {
                            double sq = 0.0;
                            for (double v : x) sq += v * v;
                            return kernel(sq, shape.regularity_radius);
                          }});
  o.weights = std::move(weights);
  o.tau_bad = tau_bad;
  o.tau_good = tau_good;
  o.tie_margin = tie_margin;
  o.validate();
  return o;
}

}  // namespace ipo
