// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ipo {

enum class OptimizerKind { sgd, adam };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_kind_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

/// SGD with heavy-ball momentum, or Adam with bias correction.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      throw std::invalid_argument("optimizer size mismatch");
    }
    ++steps_;
    if (cfg_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = cfg_.momentum * m_[i] + grad[i];
        params[i] -= cfg_.learning_rate * m_[i];
      }
      return;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      params[i] -= cfg_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
    }
  }

  std::size_t steps() const { return steps_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t steps_ = 0;
};

}  // namespace ipo
