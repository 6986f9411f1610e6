// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ipo/denoiser.hpp"
#include "ipo/diffusion.hpp"
#include "ipo/labels.hpp"
#include "ipo/random.hpp"
#include "ipo/schedule.hpp"

namespace ipo {

struct PairMeta {
  int iteration = 0;
  std::string critic_id = "oracle";

  bool operator==(const PairMeta&) const = default;
};

/// A (condition, winner, loser) triple; margin is the critic's reward gap.
struct PreferencePair {
  std::size_t condition_index = 0;
  Vec condition;
  Vec winner;
  Vec loser;
  double margin = 0.0;
  PairMeta meta;

  bool operator==(const PreferencePair&) const = default;
};

struct PointwiseExample {
  std::size_t condition_index = 0;
  Vec condition;
  Vec sample;
  int weight = +1;
  Level level = Level::Normal;
  int iteration = 0;

  bool operator==(const PointwiseExample&) const = default;
};

inline PointwiseExample make_pointwise_example(std::size_t condition_index, Vec condition, Vec sample,
                                               Level level, int iteration = 0) {
  return {condition_index, std::move(condition), std::move(sample), weight_for(level), level, iteration};
}

struct AlignmentConfig {
  double beta = 0.05;
  double lambda1 = 0.2;  // NLL on preferred samples (pairwise)
  double lambda2 = 0.1;  // NLL on real data (pairwise)
  double lambda_kto = 0.1;  // NLL on real data (pointwise)
  Weighting weighting = Weighting::uniform;
  std::size_t batch_size = 128;

  bool operator==(const AlignmentConfig&) const = default;
};

enum class Method { dpo, kto };

inline std::string_view to_string(Method m) { return m == Method::dpo ? "dpo" : "kto"; }

inline Method method_from_string(std::string_view s) {
  if (s == "dpo") return Method::dpo;
  if (s == "kto") return Method::kto;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

/// inner = -scale * (winner_diff - loser_diff), where each diff is
/// ||eps - eps_theta||^2 - ||eps - eps_ref||^2 and scale = beta * T * w(t).
inline double dpo_inner(double scale, double winner_diff, double loser_diff) {
  return -scale * (winner_diff - loser_diff);
}

inline double dpo_pair_loss(double inner) { return -log_sigmoid(inner); }

/// U(w (l - q)) with U the logistic sigmoid.
inline double kto_utility(int weight, double log_ratio, double q_ref) {
  return sigmoid(static_cast<double>(weight) * (log_ratio - q_ref));
}

/// Reference point: clamp of the batch-mean log-ratio surrogate at zero.
inline double qref_from_log_ratios(std::span<const double> log_ratios) {
  if (log_ratios.empty()) throw std::invalid_argument("Q_ref needs a nonempty batch");
  double sum = 0.0;
  for (double v : log_ratios) sum += v;
  return std::max(0.0, sum / static_cast<double>(log_ratios.size()));
}

namespace detail {

template <NoisePredictor Model>
void require_same_arch(const Model& policy, const Model& reference) {
  if (!(policy.arch() == reference.arch()) || policy.num_params() != reference.num_params()) {
    throw std::invalid_argument("policy and reference architectures differ");
  }
}

inline double loss_scale(const AlignmentConfig& cfg, const NoiseSchedule& schedule, int t) {
  return cfg.beta * static_cast<double>(schedule.steps()) * timestep_weight(cfg.weighting, schedule, t);
}

inline void validate_examples(const std::vector<PointwiseExample>& examples) {
  for (const auto& ex : examples) {
    if (ex.weight != weight_for(ex.level)) {
      throw std::invalid_argument("pointwise example weight does not match its level");
    }
  }
}

}  // namespace detail

struct DpoResult {
  double loss = 0.0;
  Vec gradient;
  Vec margins;
};

/// Diffusion-DPO loss with one t and one eps per branch for each pair.
/// Draw order per pair: t, eps_w, eps_l. The reference is frozen.
template <NoisePredictor Model>
DpoResult dpo_loss(const Model& policy, const Model& reference, const std::vector<PreferencePair>& pairs,
                   const NoiseSchedule& schedule, const AlignmentConfig& cfg, Rng& rng) {
  detail::require_same_arch(policy, reference);
  if (pairs.empty()) throw std::invalid_argument("dpo_loss needs at least one pair");
  DpoResult out;
  out.gradient.assign(policy.num_params(), 0.0);
  out.margins.reserve(pairs.size());
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  typename Model::Tape tape_w, tape_l, scratch;
  const std::size_t dim = policy.input_dim();
  Vec grad_out(dim);
  for (const auto& pair : pairs) {
    if (pair.winner.size() != dim || pair.loser.size() != dim) {
      throw std::invalid_argument("preference pair dimension mismatch");
    }
    const int t = static_cast<int>(rng.index(static_cast<std::size_t>(schedule.steps())));
    const Vec eps_w = rng.normal_vector(dim);
    const Vec eps_l = rng.normal_vector(dim);
    const Vec xw = forward_sample(pair.winner, t, eps_w, schedule);
    const Vec xl = forward_sample(pair.loser, t, eps_l, schedule);

    const Vec pw = policy.predict(xw, t, pair.condition, tape_w);
    const Vec pl = policy.predict(xl, t, pair.condition, tape_l);
    const Vec rw = reference.predict(xw, t, pair.condition, scratch);
    const Vec rl = reference.predict(xl, t, pair.condition, scratch);

    const double winner_diff = squared_distance(eps_w, pw) - squared_distance(eps_w, rw);
    const double loser_diff = squared_distance(eps_l, pl) - squared_distance(eps_l, rl);
    const double scale = detail::loss_scale(cfg, schedule, t);
    const double inner = dpo_inner(scale, winner_diff, loser_diff);
    out.margins.push_back(inner);
    out.loss += dpo_pair_loss(inner) * inv_n;

    // d(-log sigma(inner))/d inner = -sigma(-inner)
    const double g = -sigmoid(-inner) * inv_n;
    for (std::size_t j = 0; j < dim; ++j) grad_out[j] = g * (-scale) * 2.0 * (pw[j] - eps_w[j]);
    policy.backprop(tape_w, grad_out, out.gradient);
    for (std::size_t j = 0; j < dim; ++j) grad_out[j] = g * scale * 2.0 * (pl[j] - eps_l[j]);
    policy.backprop(tape_l, grad_out, out.gradient);
  }
  return out;
}

/// Per-example log-ratio surrogate l = -scale * (||eps - eps_theta||^2 - ||eps - eps_ref||^2)
/// with draws in the same order kto_loss uses.
template <NoisePredictor Model>
Vec kto_log_ratios(const Model& policy, const Model& reference, const std::vector<PointwiseExample>& examples,
                   const NoiseSchedule& schedule, const AlignmentConfig& cfg, Rng& rng) {
  detail::require_same_arch(policy, reference);
  Vec out;
  out.reserve(examples.size());
  typename Model::Tape scratch;
  for (const auto& ex : examples) {
    const NoiseDraw d = draw_noise(rng, schedule, policy.input_dim());
    const Vec xt = forward_sample(ex.sample, d.t, d.eps, schedule);
    const double diff = squared_distance(d.eps, policy.predict(xt, d.t, ex.condition, scratch)) -
                        squared_distance(d.eps, reference.predict(xt, d.t, ex.condition, scratch));
    out.push_back(-detail::loss_scale(cfg, schedule, d.t) * diff);
  }
  return out;
}

/// Estimate of beta * KL(policy || reference) on the given batch, clamped at 0.
/// Carries no gradient.
template <NoisePredictor Model>
double estimate_qref(const Model& policy, const Model& reference, const std::vector<PointwiseExample>& examples,
                     const NoiseSchedule& schedule, const AlignmentConfig& cfg, Rng& rng) {
  if (examples.empty()) throw std::invalid_argument("estimate_qref needs a nonempty batch");
  const Vec ratios = kto_log_ratios(policy, reference, examples, schedule, cfg, rng);
  return qref_from_log_ratios(ratios);
}

struct KtoResult {
  double loss = 0.0;
  Vec gradient;
  Vec utilities;
};

/// Diffusion-KTO in minimization form: loss = -mean U(w (l - q_ref)).
template <NoisePredictor Model>
KtoResult kto_loss(const Model& policy, const Model& reference, const std::vector<PointwiseExample>& examples,
                   const NoiseSchedule& schedule, const AlignmentConfig& cfg, double q_ref, Rng& rng) {
  detail::require_same_arch(policy, reference);
  if (examples.empty()) throw std::invalid_argument("kto_loss needs at least one example");
  if (q_ref < 0.0) throw std::invalid_argument("q_ref must be nonnegative");
  detail::validate_examples(examples);
  KtoResult out;
  out.gradient.assign(policy.num_params(), 0.0);
  out.utilities.reserve(examples.size());
  const double inv_n = 1.0 / static_cast<double>(examples.size());
  const std::size_t dim = policy.input_dim();
  typename Model::Tape tape, scratch;
  Vec grad_out(dim);
  for (const auto& ex : examples) {
    if (ex.sample.size() != dim) throw std::invalid_argument("pointwise example dimension mismatch");
    const NoiseDraw d = draw_noise(rng, schedule, dim);
    const Vec xt = forward_sample(ex.sample, d.t, d.eps, schedule);
    const Vec p = policy.predict(xt, d.t, ex.condition, tape);
    const Vec r = reference.predict(xt, d.t, ex.condition, scratch);
    const double scale = detail::loss_scale(cfg, schedule, d.t);
    const double log_ratio = -scale * (squared_distance(d.eps, p) - squared_distance(d.eps, r));
    const double u = kto_utility(ex.weight, log_ratio, q_ref);
    out.utilities.push_back(u);
    out.loss -= u * inv_n;

    // d(-u)/d l = -w u (1 - u);  d l / d p = -scale * 2 (p - eps)
    const double g = -static_cast<double>(ex.weight) * u * (1.0 - u) * inv_n;
    for (std::size_t j = 0; j < dim; ++j) grad_out[j] = g * (-scale) * 2.0 * (p[j] - d.eps[j]);
    policy.backprop(tape, grad_out, out.gradient);
  }
  return out;
}

/// -log p_theta(x0 | c) surrogate: the uniform-weighted epsilon-prediction loss.
template <NoisePredictor Model>
LossAndGradient diffusion_nll(const Model& policy, const SampleBatch& batch, const NoiseSchedule& schedule,
                              Rng& rng) {
  return ddpm_loss(policy, batch, schedule, rng, Weighting::uniform);
}

using PreferenceData = std::variant<std::vector<PreferencePair>, std::vector<PointwiseExample>>;

struct LossParts {
  double preference = 0.0;   // L_dpo or L_kto
  double nll_winners = 0.0;  // pairwise only
  double nll_real = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda_kto = 0.0;
  double q_ref = 0.0;
  double mean_margin = 0.0;
  double mean_utility = 0.0;
};

struct CombinedResult {
  double loss = 0.0;
  Vec gradient;
  LossParts parts;
};

/// dpo: L_dpo + lambda1 NLL(winners) + lambda2 NLL(real)
/// kto: L_kto + lambda_kto NLL(real)
///
/// For kto, q_ref defaults to the in-batch estimate on the same draws as the
/// loss, held constant for the gradient.
template <NoisePredictor Model>
CombinedResult combined_loss(Method method, const Model& policy, const Model& reference, const PreferenceData& data,
                             const SampleBatch& real_batch, const std::optional<SampleBatch>& winner_batch,
                             const NoiseSchedule& schedule, const AlignmentConfig& cfg, Rng& rng,
                             std::optional<double> q_ref = std::nullopt) {
  CombinedResult out;
  auto add_nll = [&](const SampleBatch& batch, double weight, double& part) {
    if (batch.empty()) {
      if (weight != 0.0) throw std::invalid_argument("NLL term with nonzero weight needs a nonempty batch");
      return;
    }
    const LossAndGradient nll = diffusion_nll(policy, batch, schedule, rng);
    part = nll.loss;
    out.loss += weight * nll.loss;
    for (std::size_t i = 0; i < out.gradient.size(); ++i) out.gradient[i] += weight * nll.gradient[i];
  };

  if (method == Method::dpo) {
    const auto* pairs = std::get_if<std::vector<PreferencePair>>(&data);
    if (pairs == nullptr) throw std::invalid_argument("dpo objective needs pairwise data");
    if (!winner_batch) throw std::invalid_argument("dpo objective needs a winner batch");
    DpoResult dpo = dpo_loss(policy, reference, *pairs, schedule, cfg, rng);
    out.loss = dpo.loss;
    out.gradient = std::move(dpo.gradient);
    out.parts.preference = dpo.loss;
    out.parts.lambda1 = cfg.lambda1;
    out.parts.lambda2 = cfg.lambda2;
    double sum = 0.0;
    for (double m : dpo.margins) sum += m;
    out.parts.mean_margin = sum / static_cast<double>(dpo.margins.size());
    add_nll(*winner_batch, cfg.lambda1, out.parts.nll_winners);
    add_nll(real_batch, cfg.lambda2, out.parts.nll_real);
  } else {
    const auto* examples = std::get_if<std::vector<PointwiseExample>>(&data);
    if (examples == nullptr) throw std::invalid_argument("kto objective needs pointwise data");
    if (winner_batch) throw std::invalid_argument("kto objective takes no winner batch");
    double q = 0.0;
    if (q_ref) {
      q = *q_ref;
    } else {
      Rng replay = rng;
      q = estimate_qref(policy, reference, *examples, schedule, cfg, replay);
    }
    KtoResult kto = kto_loss(policy, reference, *examples, schedule, cfg, q, rng);
    out.loss = kto.loss;
    out.gradient = std::move(kto.gradient);
    out.parts.preference = kto.loss;
    out.parts.lambda_kto = cfg.lambda_kto;
    out.parts.q_ref = q;
    double sum = 0.0;
    for (double u : kto.utilities) sum += u;
    out.parts.mean_utility = sum / static_cast<double>(kto.utilities.size());
    add_nll(real_batch, cfg.lambda_kto, out.parts.nll_real);
  }
  return out;
}

}  // namespace ipo
