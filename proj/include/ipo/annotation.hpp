// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipo/critic.hpp"
#include "ipo/diffusion.hpp"
#include "ipo/labels.hpp"
#include "ipo/objectives.hpp"
#include "ipo/random.hpp"

namespace ipo {

struct Category {
  std::string name;
  std::vector<std::string> values;

  bool operator==(const Category&) const = default;
};

/// Cross product of categories; combination k is one-hot encoded at slot k.
/// The first category is the most significant digit of k.
struct ConditionSpec {
  std::vector<Category> categories;

  bool operator==(const ConditionSpec&) const = default;

  void validate() const {
    if (categories.empty()) throw std::invalid_argument("condition spec has no categories");
    for (const auto& c : categories) {
      if (c.values.empty()) throw std::invalid_argument("category '" + c.name + "' is empty");
    }
  }

  std::size_t combination_count() const {
    validate();
    std::size_t n = 1;
    for (const auto& c : categories) n *= c.values.size();
    return n;
  }

  Vec encode(std::size_t index) const {
    const std::size_t n = combination_count();
    if (index >= n) throw std::invalid_argument("condition index out of range");
    Vec v(n, 0.0);
    v[index] = 1.0;
    return v;
  }

  std::size_t decode(std::span<const double> encoding) const {
    if (encoding.size() != combination_count()) throw std::invalid_argument("condition encoding has wrong size");
    std::optional<std::size_t> hot;
    for (std::size_t i = 0; i < encoding.size(); ++i) {
      if (encoding[i] == 1.0) {
        if (hot) throw std::invalid_argument("condition encoding is not one-hot");
        hot = i;
      } else if (encoding[i] != 0.0) {
        throw std::invalid_argument("condition encoding is not one-hot");
      }
    }
    if (!hot) throw std::invalid_argument("condition encoding is not one-hot");
    return *hot;
  }

  std::vector<std::string> labels(std::size_t index) const {
    std::vector<std::string> out(categories.size());
    for (std::size_t c = categories.size(); c-- > 0;) {
      const auto& values = categories[c].values;
      out[c] = values[index % values.size()];
      index /= values.size();
    }
    return out;
  }
};

struct Condition {
  std::size_t index = 0;
  Vec encoding;
};

/// Deterministic condition draws: a seeded permutation of the cross product
/// first, then uniform draws with replacement.
inline std::vector<Condition> make_conditions(const ConditionSpec& spec, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_conditions needs count >= 1");
  const std::size_t n = spec.combination_count();
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<Condition> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = i < n ? order[i] : rng.index(n);
    out.push_back({idx, spec.encode(idx)});
  }
  return out;
}

inline constexpr std::size_t min_variants_per_condition = 3;

/// n samples for one condition; variant i uses seed base_seed + i.
template <NoisePredictor Model>
std::vector<Vec> sample_variants(const Model& policy, std::span<const double> condition, std::size_t n,
                                 std::uint64_t base_seed, const NoiseSchedule& schedule) {
  if (n < min_variants_per_condition) {
    throw std::invalid_argument("at least " + std::to_string(min_variants_per_condition) +
                                " variants per condition are required, got " + std::to_string(n));
  }
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ancestral_sample(policy, condition, schedule, base_seed + i));
  return out;
}

namespace detail {

/// Mode over ordinals in [0, K); ties resolved by the (lower) median of
/// the tied ordinals.
template <std::size_t K>
std::size_t ordinal_majority(std::span<const std::size_t> votes) {
  if (votes.size() < 3) throw std::invalid_argument("majority vote needs at least 3 votes");
  std::array<std::size_t, K> counts{};
  for (std::size_t v : votes) ++counts.at(v);
  const std::size_t best = *std::max_element(counts.begin(), counts.end());
  std::vector<std::size_t> tied;
  for (std::size_t k = 0; k < K; ++k) {
    if (counts[k] == best) tied.push_back(k);
  }
  return tied[(tied.size() - 1) / 2];
}

inline std::size_t ranking_ordinal(RankingAnswer a) {
  switch (a) {
    case RankingAnswer::second: return 0;
    case RankingAnswer::tie: return 1;
    case RankingAnswer::first: return 2;
  }
  return 1;
}

}  // namespace detail

/// Modal level on the Bad < Normal < Good scale; a tie between modes goes to
/// the median tied level (the lower one when two levels tie).
inline Level majority_vote(std::span<const Level> votes) {
  std::vector<std::size_t> ord;
  ord.reserve(votes.size());
  for (Level l : votes) ord.push_back(static_cast<std::size_t>(l));
  return static_cast<Level>(detail::ordinal_majority<3>(ord));
}

/// Same rule on the ordered scale second < tie < first.
inline RankingAnswer majority_vote(std::span<const RankingAnswer> votes) {
  std::vector<std::size_t> ord;
  ord.reserve(votes.size());
  for (RankingAnswer a : votes) ord.push_back(detail::ranking_ordinal(a));
  constexpr std::array<RankingAnswer, 3> back{RankingAnswer::second, RankingAnswer::tie, RankingAnswer::first};
  return back[detail::ordinal_majority<3>(ord)];
}

struct AnnotationRecord {
  std::size_t sample_id = 0;
  std::vector<Level> votes;
  Level final = Level::Normal;
};

/// Simulated annotator: the true level, replaced with probability noise by
/// one of the other two levels chosen uniformly.
inline Level noisy_level(Level truth, double noise, Rng& rng) {
  if (rng.uniform() >= noise) return truth;
  const auto t = static_cast<std::size_t>(truth);
  return static_cast<Level>((t + 1 + rng.index(2)) % 3);
}

inline RankingAnswer noisy_answer(RankingAnswer truth, double noise, Rng& rng) {
  if (rng.uniform() >= noise) return truth;
  constexpr std::array<RankingAnswer, 3> all{RankingAnswer::first, RankingAnswer::second, RankingAnswer::tie};
  std::size_t t = 0;
  while (all[t] != truth) ++t;
  return all[(t + 1 + rng.index(2)) % 3];
}

inline AnnotationRecord annotate(std::size_t sample_id, Level truth, std::size_t annotators, double noise, Rng& rng) {
  AnnotationRecord rec;
  rec.sample_id = sample_id;
  for (std::size_t i = 0; i < annotators; ++i) rec.votes.push_back(noisy_level(truth, noise, rng));
  rec.final = majority_vote(std::span<const Level>(rec.votes));
  return rec;
}

struct Variant {
  Vec x0;
  double reward = 0.0;
  std::size_t id = 0;
};

/// A critic verdict together with what it was about.
struct VerdictRecord {
  CriticVerdict verdict;
  std::size_t condition_index = 0;
  std::vector<std::size_t> sample_ids;
  int iteration = 0;

  bool operator==(const VerdictRecord&) const = default;
};

struct PairwiseBuild {
  std::optional<PreferencePair> pair;
  std::optional<VerdictRecord> verdict;
  bool swap_rejected = false;
};

/// Selective pairing: compare only the highest- and lowest-reward variants
/// and keep them if the swap-checked critic prefers one of them.
inline PairwiseBuild build_pairwise_data(const std::vector<Variant>& variants, const RankingCritic& critic,
                                         const Condition& condition, double tie_margin, int iteration = 0,
                                         const std::string& critic_id = "oracle") {
  if (variants.size() < 2) throw std::invalid_argument("pairwise construction needs at least 2 variants");
  std::size_t hi = 0, lo = 0;
  for (std::size_t i = 1; i < variants.size(); ++i) {
    if (variants[i].reward > variants[hi].reward) hi = i;
    if (variants[i].reward < variants[lo].reward) lo = i;
  }
  PairwiseBuild out;
  if (variants[hi].reward - variants[lo].reward <= tie_margin) return out;

  const Candidate a{variants[hi].x0, condition.encoding, variants[hi].id};
  const Candidate b{variants[lo].x0, condition.encoding, variants[lo].id};
  const auto verdict = rank_pairwise_swapped(critic, a, b);
  if (!verdict) {
    out.swap_rejected = true;
    return out;
  }
  out.verdict = VerdictRecord{*verdict, condition.index, {a.id, b.id}, iteration};
  if (verdict->answer == RankingAnswer::tie) return out;
  const bool a_wins = verdict->answer == RankingAnswer::first;
  PreferencePair pair;
  pair.condition_index = condition.index;
  pair.condition = condition.encoding;
  pair.winner = a_wins ? a.x0 : b.x0;
  pair.loser = a_wins ? b.x0 : a.x0;
  pair.margin = std::abs(verdict->margin);
  pair.meta = {iteration, critic_id};
  out.pair = std::move(pair);
  return out;
}

struct PointwiseBuild {
  std::vector<PointwiseExample> examples;
  std::vector<VerdictRecord> verdicts;
};

/// One example per variant, labeled by the scoring critic.
inline PointwiseBuild build_pointwise_data(const std::vector<Variant>& variants, const ScoringCritic& critic,
                                           const Condition& condition, int iteration = 0) {
  if (variants.empty()) throw std::invalid_argument("pointwise construction needs at least 1 variant");
  PointwiseBuild out;
  for (const auto& v : variants) {
    const CriticVerdict verdict = critic(Candidate{v.x0, condition.encoding, v.id});
    const Level level = verdict.level.value_or(Level::Bad);
    out.examples.push_back(make_pointwise_example(condition.index, condition.encoding, v.x0, level, iteration));
    out.verdicts.push_back({verdict, condition.index, {v.id}, iteration});
  }
  return out;
}

}  // namespace ipo
