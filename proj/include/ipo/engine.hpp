// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipo/annotation.hpp"
#include "ipo/critic.hpp"
#include "ipo/denoiser.hpp"
#include "ipo/diffusion.hpp"
#include "ipo/errors.hpp"
#include "ipo/evaluation.hpp"
#include "ipo/objectives.hpp"
#include "ipo/optim.hpp"
#include "ipo/random.hpp"

namespace ipo {

struct EarlyStopConfig {
  bool enabled = true;
  std::string metric = "mean_reward";
  std::size_t patience = 2;
  double min_delta = 0.0;

  bool operator==(const EarlyStopConfig&) const = default;
};

struct LoopConfig {
  std::size_t iterations = 3;
  std::size_t steps_per_iteration = 500;
  std::size_t conditions_per_iteration = 256;
  std::size_t variants_per_condition = 4;
  OptimizerConfig optimizer;
  EarlyStopConfig early_stop;
  std::vector<double> beta_schedule;  // per-round beta; empty means align.beta every round

  bool operator==(const LoopConfig&) const = default;
};

/// Direction of a watched validation metric; throws ConfigError for names
/// the metrics stream does not carry.
inline bool metric_higher_is_better(const std::string& name) {
  if (name == "mean_reward" || name == "win_rate_vs_prev") return true;
  if (name == "energy_distance") return false;
  throw ConfigError("unknown early-stop metric '" + name + "'");
}

enum class StopDecision { proceed, stop };

/// Stops once the best value has not improved by more than min_delta for
/// `patience` consecutive entries.
inline StopDecision check_early_stop(std::span<const double> history, const EarlyStopConfig& cfg) {
  const bool higher = metric_higher_is_better(cfg.metric);
  if (history.empty()) throw std::invalid_argument("early stopping needs a nonempty history");
  if (!cfg.enabled || cfg.patience == 0) return StopDecision::proceed;
  double best = history[0];
  std::size_t stale = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    const double gain = higher ? history[i] - best : best - history[i];
    if (gain > cfg.min_delta) {
      best = history[i];
      stale = 0;
    } else {
      ++stale;
    }
  }
  return stale >= cfg.patience ? StopDecision::stop : StopDecision::proceed;
}

struct MetricsRow {
  int iteration = 0;
  Method method = Method::dpo;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double win_rate_vs_prev = 0.5;
  double energy_distance = 0.0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct RoundStats {
  std::size_t conditions = 0;
  std::size_t swap_rejected = 0;
  std::size_t tied = 0;
};

struct IterationState {
  int k = 0;
  Vec policy_params;
  Vec reference_params;
  double beta_k = 0.0;
  std::vector<PreferencePair> pairs;
  std::vector<PointwiseExample> pointwise;
  std::vector<VerdictRecord> verdicts;
  std::vector<MetricsRow> metrics;
  RoundStats stats;
};

/// k = 0: policy and reference both equal the pretrained base (neutral reward).
inline IterationState initial_state(std::span<const double> base_params, double beta) {
  IterationState s;
  s.policy_params.assign(base_params.begin(), base_params.end());
  s.reference_params = s.policy_params;
  s.beta_k = beta;
  return s;
}

/// Reference snapshot replacement: the freshly optimized policy becomes the
/// next round's reference.
inline IterationState update_reference(IterationState state) {
  state.reference_params = state.policy_params;
  return state;
}

/// Everything a round needs besides the evolving state.
struct AlignmentSetup {
  DenoiserArch arch;
  NoiseSchedule schedule;
  ConditionSpec conditions;
  OracleReward oracle;
  SampleBatch real_data;
  Method method = Method::dpo;
  AlignmentConfig align;
  LoopConfig loop;
  EvalConfig eval;
  std::uint64_t seed = 0;
};

inline std::vector<Vec> all_condition_encodings(const ConditionSpec& spec) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < spec.combination_count(); ++i) out.push_back(spec.encode(i));
  return out;
}

inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Validation metrics for one policy snapshot. Validation seeds are fixed
/// across rounds so consecutive rows compare on common noise.
inline MetricsRow evaluate_snapshot(const MlpDenoiser& policy, const MlpDenoiser* previous, const AlignmentSetup& setup,
                                    int iteration) {
  const auto conditions = all_condition_encodings(setup.conditions);
  const std::uint64_t val_seed = derive_seed(setup.seed, "validation");
  const SampleBatch samples = sample_eval_set(policy, conditions, setup.eval.n_samples, val_seed, setup.schedule);
  const RewardSummary summary = summarize_rewards(samples, setup.oracle);
  MetricsRow row;
  row.iteration = iteration;
  row.method = setup.method;
  row.mean_reward = summary.mean;
  row.reward_std = summary.std;
  row.win_rate_vs_prev =
      previous == nullptr
          ? 0.5
          : win_rate(policy, *previous, setup.oracle, conditions, setup.eval.n_pairs,
                     derive_seed(setup.seed, "validation-pairs"), setup.schedule);
  row.energy_distance = energy_distance(samples.x0, setup.real_data.x0);
  row.seed = setup.seed;
  return row;
}

namespace detail {

inline SampleBatch draw_rows(const SampleBatch& data, std::size_t n, Rng& rng) {
  SampleBatch out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = rng.index(data.size());
    out.push_back(data.x0[j], data.conditions[j], data.seeds[j]);
  }
  return out;
}

}  // namespace detail

/// One IPO round: sample variants from the current policy, label them with the
/// critic, optimize the combined objective against the frozen reference, then
/// replace the reference with the optimized policy.
inline IterationState run_iteration(const IterationState& state, const AlignmentSetup& setup) {
  const auto started = std::chrono::steady_clock::now();
  const std::uint64_t round_seed = derive_seed(setup.seed, "round", static_cast<std::uint64_t>(state.k));
  const LoopConfig& loop = setup.loop;

  MlpDenoiser policy(setup.arch);
  policy.set_params(state.policy_params);
  MlpDenoiser reference(setup.arch);
  reference.set_params(state.reference_params);
  const MlpDenoiser previous = policy;

  IterationState next;
  next.k = state.k + 1;
  next.metrics = state.metrics;
  next.beta_k = loop.beta_schedule.empty()
                    ? setup.align.beta
                    : loop.beta_schedule.at(std::min<std::size_t>(static_cast<std::size_t>(state.k),
                                                                  loop.beta_schedule.size() - 1));

  // (1) strategic sampling, (2) preference labeling
  const auto conditions =
      make_conditions(setup.conditions, loop.conditions_per_iteration, derive_seed(round_seed, "conditions"));
  const RankingCritic ranker = oracle_ranking_critic(setup.oracle);
  const ScoringCritic scorer = oracle_scoring_critic(setup.oracle);
  next.stats.conditions = conditions.size();
  for (std::size_t j = 0; j < conditions.size(); ++j) {
    const auto& cond = conditions[j];
    const auto points = sample_variants(policy, cond.encoding, loop.variants_per_condition,
                                        derive_seed(round_seed, "variants", j), setup.schedule);
    std::vector<Variant> variants;
    for (std::size_t i = 0; i < points.size(); ++i) {
      variants.push_back({points[i], oracle_reward(setup.oracle, points[i], cond.encoding),
                          j * loop.variants_per_condition + i});
    }
    if (setup.method == Method::dpo) {
      auto built = build_pairwise_data(variants, ranker, cond, setup.oracle.tie_margin, next.k);
      if (built.swap_rejected) ++next.stats.swap_rejected;
      if (built.verdict) next.verdicts.push_back(*built.verdict);
      if (built.pair) next.pairs.push_back(std::move(*built.pair));
      else if (!built.swap_rejected) ++next.stats.tied;
    } else {
      auto built = build_pointwise_data(variants, scorer, cond, next.k);
      next.pointwise.insert(next.pointwise.end(), built.examples.begin(), built.examples.end());
      next.verdicts.insert(next.verdicts.end(), built.verdicts.begin(), built.verdicts.end());
    }
  }
  const std::size_t data_size = setup.method == Method::dpo ? next.pairs.size() : next.pointwise.size();
  if (data_size == 0) {
    throw std::runtime_error(
        "empty preference dataset after tie/swap filtering; lower critic.tie_margin or raise "
        "loop.variants_per_condition");
  }

  // (3) alignment optimization
  AlignmentConfig align = setup.align;
  align.beta = next.beta_k;
  Optimizer opt(loop.optimizer, policy.num_params());
  Rng batch_rng(derive_seed(round_seed, "minibatch"));
  const std::size_t batch = std::max<std::size_t>(1, align.batch_size);
  double loss_sum = 0.0;
  for (std::size_t step = 0; step < loop.steps_per_iteration; ++step) {
    const SampleBatch real = detail::draw_rows(setup.real_data, batch, batch_rng);
    Rng loss_rng(derive_seed(round_seed, "loss", step));
    CombinedResult result;
    if (setup.method == Method::dpo) {
      std::vector<PreferencePair> pairs;
      SampleBatch winners;
      for (std::size_t i = 0; i < batch; ++i) {
        const auto& p = next.pairs[batch_rng.index(next.pairs.size())];
        pairs.push_back(p);
        winners.push_back(p.winner, p.condition, p.condition_index);
      }
      result = combined_loss(Method::dpo, policy, reference, PreferenceData(std::move(pairs)), real,
                             std::optional<SampleBatch>(std::move(winners)), setup.schedule, align, loss_rng);
    } else {
      std::vector<PointwiseExample> examples;
      for (std::size_t i = 0; i < batch; ++i) examples.push_back(next.pointwise[batch_rng.index(next.pointwise.size())]);
      result = combined_loss(Method::kto, policy, reference, PreferenceData(std::move(examples)), real,
                             std::nullopt, setup.schedule, align, loss_rng);
    }
    loss_sum += result.loss;
    opt.step(policy.params(), result.gradient);
  }

  next.policy_params.assign(policy.params().begin(), policy.params().end());
  next.reference_params = state.reference_params;
  next = update_reference(std::move(next));

  MetricsRow row = evaluate_snapshot(policy, &previous, setup, next.k);
  row.loss = loop.steps_per_iteration == 0 ? std::numeric_limits<double>::quiet_NaN()
                                           : loss_sum / static_cast<double>(loop.steps_per_iteration);
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  next.metrics.push_back(row);
  return next;
}

}  // namespace ipo
