// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipo/diffusion.hpp"
#include "ipo/labels.hpp"
#include "ipo/random.hpp"

namespace ipo {

/// A sample shown to a critic: the point, its condition and an identity.
struct Candidate {
  Vec x0;
  Vec condition;
  std::size_t id = 0;
};

using ComponentFn = std::function<double(std::span<const double> x0, std::span<const double> condition)>;

struct RewardComponent {
  std::string name;
  ComponentFn score;
};

/// Programmatic critic over a weighted sum of named reward components.
struct OracleReward {
  std::vector<RewardComponent> components;
  Vec weights;
  double tau_good = 0.7;
  double tau_bad = 0.3;
  double tie_margin = 1e-3;

  void validate() const {
    if (components.size() != weights.size()) {
      throw std::invalid_argument("oracle needs one weight per component");
    }
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("oracle weights must be nonnegative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("oracle weights must sum to 1");
    if (!(tau_bad < tau_good)) throw std::invalid_argument("oracle thresholds need tau_bad < tau_good");
    if (tie_margin < 0.0) throw std::invalid_argument("tie margin must be nonnegative");
  }

  double operator()(std::span<const double> x0, std::span<const double> condition) const;
};

inline Vec component_values(const OracleReward& oracle, std::span<const double> x0,
                            std::span<const double> condition) {
  Vec out;
  out.reserve(oracle.components.size());
  for (const auto& c : oracle.components) out.push_back(c.score(x0, condition));
  return out;
}

inline double oracle_reward(const OracleReward& oracle, std::span<const double> x0,
                            std::span<const double> condition) {
  double r = 0.0;
  for (std::size_t i = 0; i < oracle.components.size(); ++i) {
    r += oracle.weights[i] * oracle.components[i].score(x0, condition);
  }
  return r;
}

inline double OracleReward::operator()(std::span<const double> x0, std::span<const double> condition) const {
  return oracle_reward(*this, x0, condition);
}

enum class VerdictKind { ranking, scoring };

inline std::string_view to_string(VerdictKind k) { return k == VerdictKind::ranking ? "ranking" : "scoring"; }

struct CriticVerdict {
  VerdictKind kind = VerdictKind::scoring;
  std::optional<RankingAnswer> answer;
  std::optional<Level> level;
  std::string reason;
  double margin = 0.0;

  static CriticVerdict ranking(RankingAnswer a, double margin, std::string reason = {}) {
    return {VerdictKind::ranking, a, std::nullopt, std::move(reason), margin};
  }
  static CriticVerdict scoring(Level l, double margin, std::string reason = {}) {
    return {VerdictKind::scoring, std::nullopt, l, std::move(reason), margin};
  }

  bool well_formed() const {
    return kind == VerdictKind::ranking ? (answer.has_value() && !level.has_value())
                                        : (level.has_value() && !answer.has_value());
  }

  bool operator==(const CriticVerdict&) const = default;
};

using RankingCritic = std::function<CriticVerdict(const Candidate& first, const Candidate& second)>;
using ScoringCritic = std::function<CriticVerdict(const Candidate& sample)>;

/// Good if r >= tau_good, Bad if r < tau_bad, Normal otherwise.
inline Level level_for_reward(double r, double tau_bad, double tau_good) {
  if (r >= tau_good) return Level::Good;
  if (r < tau_bad) return Level::Bad;
  return Level::Normal;
}

namespace detail {

inline std::string format_reward(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", r);
  return buf;
}

inline std::size_t dominant_index(const OracleReward& oracle, const Vec& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (std::abs(oracle.weights[i] * values[i]) > std::abs(oracle.weights[best] * values[best])) best = i;
  }
  return best;
}

}  // namespace detail

inline CriticVerdict score_pointwise(const OracleReward& oracle, std::span<const double> x0,
                                     std::span<const double> condition) {
  const Vec values = component_values(oracle, x0, condition);
  double r = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) r += oracle.weights[i] * values[i];
  const Level level = level_for_reward(r, oracle.tau_bad, oracle.tau_good);
  const double margin =
      std::abs(r - oracle.tau_good) <= std::abs(r - oracle.tau_bad) ? r - oracle.tau_good : r - oracle.tau_bad;
  std::string reason = std::string(to_string(level)) + ": reward " + detail::format_reward(r);
  if (!values.empty()) {
    reason += ", dominated by " + oracle.components[detail::dominant_index(oracle, values)].name;
  }
  return CriticVerdict::scoring(level, margin, std::move(reason));
}

/// Compares oracle rewards of two candidates; a tie when |r_first - r_second| <= tie_margin.
inline CriticVerdict rank_by_oracle(const OracleReward& oracle, const Candidate& first, const Candidate& second) {
  const Vec va = component_values(oracle, first.x0, first.condition);
  const Vec vb = component_values(oracle, second.x0, second.condition);
  double ra = 0.0, rb = 0.0;
  Vec gaps(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    ra += oracle.weights[i] * va[i];
    rb += oracle.weights[i] * vb[i];
    gaps[i] = va[i] - vb[i];
  }
  const double margin = ra - rb;
  RankingAnswer answer = RankingAnswer::tie;
  if (margin > oracle.tie_margin) answer = RankingAnswer::first;
  if (margin < -oracle.tie_margin) answer = RankingAnswer::second;
  std::string reason = std::string(to_string(answer)) + ": rewards " + detail::format_reward(ra) + " vs " +
                       detail::format_reward(rb);
  if (!gaps.empty()) reason += ", largest gap in " + oracle.components[detail::dominant_index(oracle, gaps)].name;
  return CriticVerdict::ranking(answer, margin, std::move(reason));
}

inline RankingCritic oracle_ranking_critic(OracleReward oracle) {
  auto shared = std::make_shared<const OracleReward>(std::move(oracle));
  return [shared](const Candidate& a, const Candidate& b) { return rank_by_oracle(*shared, a, b); };
}

inline ScoringCritic oracle_scoring_critic(OracleReward oracle) {
  auto shared = std::make_shared<const OracleReward>(std::move(oracle));
  return [shared](const Candidate& s) { return score_pointwise(*shared, s.x0, s.condition); };
}

/// Queries the critic in both presentation orders. Returns the verdict
/// (relative to the order a, b) only when both queries name the same
/// sample; nullopt marks a rejected comparison.
inline std::optional<CriticVerdict> rank_pairwise_swapped(const RankingCritic& critic, const Candidate& a,
                                                          const Candidate& b) {
  if (a.condition != b.condition) throw std::invalid_argument("pairwise comparison needs a shared condition");
  const CriticVerdict forward = critic(a, b);
  const CriticVerdict swapped = critic(b, a);
  if (!forward.answer || !swapped.answer) throw std::invalid_argument("ranking critic returned no answer");
  auto unswap = [](RankingAnswer x) {
    switch (x) {
      case RankingAnswer::first: return RankingAnswer::second;
      case RankingAnswer::second: return RankingAnswer::first;
      case RankingAnswer::tie: return RankingAnswer::tie;
    }
    return RankingAnswer::tie;
  };
  if (*forward.answer != unswap(*swapped.answer)) return std::nullopt;
  return forward;
}

struct CriticSFTSample {
  std::vector<int> context;   // multimodal input M
  std::vector<int> question;  // Q
  std::vector<int> answer;    // A, length N
};

/// Autoregressive token scorer: log p(token | prefix), accumulating the
/// gradient of that log-probability into grad when grad is nonempty.
template <class S>
concept TokenScorer = requires(const S& s, std::span<const int> prefix, int token, std::span<double> grad) {
  { s.vocab_size() } -> std::convertible_to<std::size_t>;
  { s.num_params() } -> std::convertible_to<std::size_t>;
  { s.log_prob(prefix, token, grad) } -> std::convertible_to<double>;
};

namespace detail {

/// log softmax(logits)[token]; adds d/d logits into dlogits when nonempty.
inline double log_softmax_at(std::span<const double> logits, int token, std::span<double> dlogits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  if (!dlogits.empty()) {
    for (std::size_t j = 0; j < logits.size(); ++j) dlogits[j] -= std::exp(logits[j] - log_z);
    dlogits[static_cast<std::size_t>(token)] += 1.0;
  }
  return logits[static_cast<std::size_t>(token)] - log_z;
}

}  // namespace detail

/// Next-token logits W[last prefix token] + b (b alone for an empty prefix).
class BigramScorer {
 public:
  explicit BigramScorer(std::size_t vocab) : vocab_(vocab), params_(vocab * vocab + vocab, 0.0) {}

  static BigramScorer initialized(std::size_t vocab, std::uint64_t seed, double scale = 0.5) {
    BigramScorer s(vocab);
    Rng rng(seed);
    for (auto& p : s.params_) p = scale * rng.normal();
    return s;
  }

  std::size_t vocab_size() const { return vocab_; }
  std::size_t num_params() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  double log_prob(std::span<const int> prefix, int token, std::span<double> grad) const {
    Vec logits(params_.begin() + static_cast<std::ptrdiff_t>(vocab_ * vocab_), params_.end());
    std::size_t row = 0;
    const bool has_prev = !prefix.empty();
    if (has_prev) {
      row = static_cast<std::size_t>(prefix.back()) * vocab_;
      for (std::size_t j = 0; j < vocab_; ++j) logits[j] += params_[row + j];
    }
    if (grad.empty()) return detail::log_softmax_at(logits, token, {});
    Vec dlogits(vocab_, 0.0);
    const double lp = detail::log_softmax_at(logits, token, dlogits);
    for (std::size_t j = 0; j < vocab_; ++j) {
      grad[vocab_ * vocab_ + j] += dlogits[j];
      if (has_prev) grad[row + j] += dlogits[j];
    }
    return lp;
  }

 private:
  std::size_t vocab_;
  Vec params_;
};

/// Answer-masked autoregressive loss: -sum_i log p(A_i | M, Q, A_<i).
template <TokenScorer Scorer>
LossAndGradient critic_sft_loss(const Scorer& scorer, const CriticSFTSample& sample) {
  const std::size_t vocab = scorer.vocab_size();
  auto check = [&](const std::vector<int>& tokens) {
    for (int tok : tokens) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= vocab) {
        throw std::invalid_argument("token " + std::to_string(tok) + " outside vocabulary");
      }
    }
  };
  check(sample.context);
  check(sample.question);
  check(sample.answer);

  LossAndGradient out;
  out.gradient.assign(scorer.num_params(), 0.0);
  std::vector<int> prefix;
  prefix.reserve(sample.context.size() + sample.question.size() + sample.answer.size());
  prefix.insert(prefix.end(), sample.context.begin(), sample.context.end());
  prefix.insert(prefix.end(), sample.question.begin(), sample.question.end());
  Vec grad_lp(scorer.num_params(), 0.0);
  for (int tok : sample.answer) {
    std::fill(grad_lp.begin(), grad_lp.end(), 0.0);
    out.loss -= scorer.log_prob(prefix, tok, grad_lp);
    for (std::size_t j = 0; j < grad_lp.size(); ++j) out.gradient[j] -= grad_lp[j];
    prefix.push_back(tok);
  }
  return out;
}

struct PairwiseLabel {
  Candidate a;
  Candidate b;
  RankingAnswer truth = RankingAnswer::tie;
};

struct PointwiseLabel {
  Candidate sample;
  Level truth = Level::Normal;
};

/// Fraction of pairs the critic ranks as labeled; swap-rejected pairs count as wrong.
inline double critic_accuracy(const RankingCritic& critic, const std::vector<PairwiseLabel>& labeled) {
  if (labeled.empty()) throw std::invalid_argument("critic_accuracy needs a nonempty labeled set");
  std::size_t correct = 0;
  for (const auto& item : labeled) {
    const auto verdict = rank_pairwise_swapped(critic, item.a, item.b);
    if (verdict && verdict->answer == item.truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labeled.size());
}

inline double critic_accuracy(const ScoringCritic& critic, const std::vector<PointwiseLabel>& labeled) {
  if (labeled.empty()) throw std::invalid_argument("critic_accuracy needs a nonempty labeled set");
  std::size_t correct = 0;
  for (const auto& item : labeled) {
    if (critic(item.sample).level == item.truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labeled.size());
}

}  // namespace ipo
