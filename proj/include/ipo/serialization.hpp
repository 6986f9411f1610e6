// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipo/annotation.hpp"
#include "ipo/critic.hpp"
#include "ipo/evaluation.hpp"
#include "ipo/objectives.hpp"

namespace ipo {

using json = nlohmann::json;

// Line-delimited JSON records for datasets and verdicts.

inline json to_json(const PreferencePair& p) {
  return {{"condition_index", p.condition_index}, {"winner", p.winner},    {"loser", p.loser},
          {"margin", p.margin},                   {"iteration", p.meta.iteration}, {"critic", p.meta.critic_id}};
}

inline PreferencePair pair_from_json(const json& j, const ConditionSpec& spec) {
  PreferencePair p;
  p.condition_index = j.at("condition_index").get<std::size_t>();
  p.condition = spec.encode(p.condition_index);
  p.winner = j.at("winner").get<Vec>();
  p.loser = j.at("loser").get<Vec>();
  p.margin = j.at("margin").get<double>();
  p.meta.iteration = j.at("iteration").get<int>();
  p.meta.critic_id = j.value("critic", std::string("oracle"));
  return p;
}

inline json to_json(const PointwiseExample& e) {
  return {{"condition_index", e.condition_index},
          {"sample", e.sample},
          {"level", std::string(to_string(e.level))},
          {"weight", e.weight},
          {"iteration", e.iteration}};
}

inline PointwiseExample pointwise_from_json(const json& j, const ConditionSpec& spec) {
  PointwiseExample e;
  e.condition_index = j.at("condition_index").get<std::size_t>();
  e.condition = spec.encode(e.condition_index);
  e.sample = j.at("sample").get<Vec>();
  e.level = level_from_string(j.at("level").get<std::string>());
  e.weight = j.at("weight").get<int>();
  if (e.weight != weight_for(e.level)) throw std::invalid_argument("pointwise record weight does not match level");
  e.iteration = j.at("iteration").get<int>();
  return e;
}

inline json to_json(const VerdictRecord& r) {
  json j = {{"kind", std::string(to_string(r.verdict.kind))},
            {"margin", r.verdict.margin},
            {"reason", r.verdict.reason},
            {"condition", r.condition_index},
            {"sample_ids", r.sample_ids},
            {"iteration", r.iteration}};
  if (r.verdict.answer) j["answer"] = std::string(to_string(*r.verdict.answer));
  if (r.verdict.level) j["level"] = std::string(to_string(*r.verdict.level));
  return j;
}

inline VerdictRecord verdict_from_json(const json& j) {
  VerdictRecord r;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "ranking") {
    r.verdict = CriticVerdict::ranking(ranking_answer_from_string(j.at("answer").get<std::string>()), 0.0);
  } else if (kind == "scoring") {
    r.verdict = CriticVerdict::scoring(level_from_string(j.at("level").get<std::string>()), 0.0);
  } else {
    throw std::invalid_argument("unknown verdict kind '" + kind + "'");
  }
  r.verdict.margin = j.at("margin").get<double>();
  r.verdict.reason = j.at("reason").get<std::string>();
  r.condition_index = j.at("condition").get<std::size_t>();
  r.sample_ids = j.at("sample_ids").get<std::vector<std::size_t>>();
  r.iteration = j.value("iteration", 0);
  return r;
}

inline json to_json(const EvalReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"iteration", r.iteration},
                    {"mean_reward", r.mean_reward},
                    {"reward_std", r.reward_std},
                    {"win_rate_vs_prev", r.win_rate_vs_prev},
                    {"energy_distance", r.energy_distance},
                    {"n_samples", r.n_samples},
                    {"seed", r.seed}});
  }
  return {{"rows", rows}, {"monotone_improvement", report.monotone_improvement}};
}

inline EvalReport report_from_json(const json& j) {
  EvalReport report;
  for (const auto& r : j.at("rows")) {
    report.rows.push_back({r.at("iteration").get<int>(), r.at("mean_reward").get<double>(),
                           r.at("reward_std").get<double>(), r.at("win_rate_vs_prev").get<double>(),
                           r.at("energy_distance").get<double>(), r.at("n_samples").get<std::size_t>(),
                           r.at("seed").get<std::uint64_t>()});
  }
  report.monotone_improvement = j.at("monotone_improvement").get<bool>();
  return report;
}

template <class Record>
void write_jsonl(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

/// Parses each nonempty line with parse(json).
template <class Parse>
auto read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<decltype(parse(json{}))> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse(json::parse(line)));
  }
  return out;
}

}  // namespace ipo
