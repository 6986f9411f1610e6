// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ipo {

/// Pointwise quality level, ordered Bad < Normal < Good.
enum class Level { Bad = 0, Normal = 1, Good = 2 };

/// Pairwise answer relative to presentation order.
enum class RankingAnswer { first, second, tie };

inline std::string_view to_string(Level l) {
  switch (l) {
    case Level::Good: return "Good";
    case Level::Normal: return "Normal";
    case Level::Bad: return "Bad";
  }
  return "Bad";
}

inline Level level_from_string(std::string_view s) {
  if (s == "Good") return Level::Good;
  if (s == "Normal") return Level::Normal;
  // "Poor" is accepted as a synonym for Bad.
  if (s == "Bad" || s == "Poor") return Level::Bad;
  throw std::invalid_argument("unknown level '" + std::string(s) + "'");
}

inline std::string_view to_string(RankingAnswer a) {
  switch (a) {
    case RankingAnswer::first: return "first";
    case RankingAnswer::second: return "second";
    case RankingAnswer::tie: return "tie";
  }
  return "tie";
}

inline RankingAnswer ranking_answer_from_string(std::string_view s) {
  if (s == "first") return RankingAnswer::first;
  if (s == "second") return RankingAnswer::second;
  if (s == "tie") return RankingAnswer::tie;
  throw std::invalid_argument("unknown ranking answer '" + std::string(s) + "'");
}

/// Good and Normal are desirable (+1); Bad is undesirable (-1).
constexpr int weight_for(Level l) { return l == Level::Bad ? -1 : +1; }

}  // namespace ipo
