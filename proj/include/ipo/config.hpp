// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipo/checkpoint.hpp"
#include "ipo/denoiser.hpp"
#include "ipo/engine.hpp"
#include "ipo/errors.hpp"
#include "ipo/evaluation.hpp"
#include "ipo/objectives.hpp"
#include "ipo/toy_task.hpp"

namespace ipo {

struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 256;
  double learning_rate = 2e-3;

  bool operator==(const PretrainConfig&) const = default;
};

enum class ThresholdMode { quantile, fixed };

struct CriticConfig {
  Vec weights{0.5, 0.3, 0.2};  // condition_adherence, sample_fidelity, regularity
  RewardShape shape;
  ThresholdMode threshold_mode = ThresholdMode::quantile;
  double quantile_bad = 0.3;
  double quantile_good = 0.7;
  std::size_t calibration_samples = 1000;
  double tau_bad = 0.3;  // used when threshold_mode is fixed
  double tau_good = 0.7;
  double tie_margin = 1e-3;
  double annotator_noise = 0.1;
  std::size_t annotators = 3;
  std::size_t labeled_set_size = 1000;

  bool operator==(const CriticConfig&) const = default;
};

struct OutputConfig {
  // Wall-clock time is nondeterministic; metrics.csv carries 0 unless enabled.
  bool wall_clock_in_metrics = false;

  bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data = default_data_config();
  DenoiserArch model;
  ScheduleParams schedule;
  PretrainConfig pretrain;
  Method method = Method::dpo;
  AlignmentConfig align;
  LoopConfig loop;
  CriticConfig critic;
  EvalConfig eval;
  OutputConfig output;

  bool operator==(const RunConfig&) const = default;
};

using json = nlohmann::json;

inline json to_json(const RunConfig& c) {
  json categories = json::array();
  for (const auto& cat : c.data.conditions.categories) categories.push_back({{"name", cat.name}, {"values", cat.values}});
  json mixtures = json::array();
  for (const auto& m : c.data.mixtures) {
    json comps = json::array();
    for (const auto& comp : m.components) comps.push_back({{"mean", comp.mean}, {"std", comp.std}, {"weight", comp.weight}});
    mixtures.push_back({{"components", comps}, {"target", m.target}});
  }
  const auto& o = c.loop.optimizer;
  const auto& es = c.loop.early_stop;
  return {
      {"seed", c.seed},
      {"data", {{"categories", categories}, {"mixtures", mixtures}, {"real_count", c.data.real_count}}},
      {"model", arch_to_json(c.model)},
      {"schedule", schedule_to_json(c.schedule)},
      {"pretrain",
       {{"steps", c.pretrain.steps}, {"batch_size", c.pretrain.batch_size}, {"learning_rate", c.pretrain.learning_rate}}},
      {"align",
       {{"method", std::string(to_string(c.method))},
        {"beta", c.align.beta},
        {"lambda1", c.align.lambda1},
        {"lambda2", c.align.lambda2},
        {"lambda_kto", c.align.lambda_kto},
        {"weighting", std::string(to_string(c.align.weighting))},
        {"batch_size", c.align.batch_size}}},
      {"loop",
       {{"iterations", c.loop.iterations},
        {"steps_per_iteration", c.loop.steps_per_iteration},
        {"conditions_per_iteration", c.loop.conditions_per_iteration},
        {"variants_per_condition", c.loop.variants_per_condition},
        {"beta_schedule", c.loop.beta_schedule},
        {"optimizer",
         {{"kind", std::string(to_string(o.kind))},
          {"learning_rate", o.learning_rate},
          {"momentum", o.momentum},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"epsilon", o.epsilon}}},
        {"early_stop",
         {{"enabled", es.enabled}, {"metric", es.metric}, {"patience", es.patience}, {"min_delta", es.min_delta}}}}},
      {"critic",
       {{"weights", c.critic.weights},
        {"adherence_scale", c.critic.shape.adherence_scale},
        {"fidelity_scale", c.critic.shape.fidelity_scale},
        {"regularity_radius", c.critic.shape.regularity_radius},
        {"threshold_mode", c.critic.threshold_mode == ThresholdMode::quantile ? "quantile" : "fixed"},
        {"quantile_bad", c.critic.quantile_bad},
        {"quantile_good", c.critic.quantile_good},
        {"calibration_samples", c.critic.calibration_samples},
        {"tau_bad", c.critic.tau_bad},
        {"tau_good", c.critic.tau_good},
        {"tie_margin", c.critic.tie_margin},
        {"annotator_noise", c.critic.annotator_noise},
        {"annotators", c.critic.annotators},
        {"labeled_set_size", c.critic.labeled_set_size}}},
      {"eval", {{"n_samples", c.eval.n_samples}, {"n_pairs", c.eval.n_pairs}}},
      {"output", {{"wall_clock_in_metrics", c.output.wall_clock_in_metrics}}},
  };
}

namespace detail {

inline std::string first_leaf(const std::string& path, const json& value) {
  if (value.is_object() && !value.empty()) return first_leaf(path + "." + value.begin().key(), value.begin().value());
  return path;
}

/// Reads known keys from one JSON object and rejects the rest by their full
/// dotted path.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + display() + "' must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("bad value for config key '" + child_path(key) + "': " + e.what());
    }
  }

  template <class T, class Convert>
  void read_as(const char* key, T& out, Convert convert) {
    std::string s;
    read(key, s);
    if (!j_.contains(key)) return;
    try {
      out = convert(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("bad value for config key '" + child_path(key) + "': " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  ObjectReader section(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return ObjectReader(j_.contains(key) ? j_.at(key) : empty, child_path(key));
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("unknown config key '" + first_leaf(child_path(it.key()), it.value()) + "'");
      }
    }
  }

  std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Strict parse: every key is optional (defaults apply); unknown keys throw
/// ConfigError naming the offending dotted key.
inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::ObjectReader root(j, "");
  root.read("seed", c.seed);

  auto data = root.section("data");
  if (data.has("categories")) {
    c.data.conditions.categories.clear();
    for (const auto& cat : data.raw("categories")) {
      detail::ObjectReader r(cat, "data.categories[]");
      Category out;
      r.read("name", out.name);
      r.read("values", out.values);
      r.finish();
      c.data.conditions.categories.push_back(std::move(out));
    }
  }
  if (data.has("mixtures")) {
    c.data.mixtures.clear();
    for (const auto& m : data.raw("mixtures")) {
      detail::ObjectReader r(m, "data.mixtures[]");
      ConditionMixture out;
      r.read("target", out.target);
      if (r.has("components")) {
        for (const auto& comp : r.raw("components")) {
          detail::ObjectReader rc(comp, "data.mixtures[].components[]");
          MixtureComponent mc;
          rc.read("mean", mc.mean);
          rc.read("std", mc.std);
          rc.read("weight", mc.weight);
          rc.finish();
          out.components.push_back(std::move(mc));
        }
      }
      r.finish();
      c.data.mixtures.push_back(std::move(out));
    }
  }
  data.read("real_count", c.data.real_count);
  data.finish();

  auto model = root.section("model");
  model.read("input_dim", c.model.input_dim);
  model.read("condition_dim", c.model.condition_dim);
  model.read("hidden_sizes", c.model.hidden_sizes);
  model.read("time_embedding_size", c.model.time_embedding_size);
  model.finish();

  auto sched = root.section("schedule");
  sched.read("T", c.schedule.steps);
  sched.read_as("kind", c.schedule.kind, schedule_kind_from_string);
  sched.read("beta_min", c.schedule.beta_min);
  sched.read("beta_max", c.schedule.beta_max);
  sched.finish();

  auto pre = root.section("pretrain");
  pre.read("steps", c.pretrain.steps);
  pre.read("batch_size", c.pretrain.batch_size);
  pre.read("learning_rate", c.pretrain.learning_rate);
  pre.finish();

  auto align = root.section("align");
  align.read_as("method", c.method, method_from_string);
  align.read("beta", c.align.beta);
  align.read("lambda1", c.align.lambda1);
  align.read("lambda2", c.align.lambda2);
  align.read("lambda_kto", c.align.lambda_kto);
  align.read_as("weighting", c.align.weighting, weighting_from_string);
  align.read("batch_size", c.align.batch_size);
  align.finish();

  auto loop = root.section("loop");
  loop.read("iterations", c.loop.iterations);
  loop.read("steps_per_iteration", c.loop.steps_per_iteration);
  loop.read("conditions_per_iteration", c.loop.conditions_per_iteration);
  loop.read("variants_per_condition", c.loop.variants_per_condition);
  loop.read("beta_schedule", c.loop.beta_schedule);
  auto opt = loop.section("optimizer");
  opt.read_as("kind", c.loop.optimizer.kind, optimizer_kind_from_string);
  opt.read("learning_rate", c.loop.optimizer.learning_rate);
  opt.read("momentum", c.loop.optimizer.momentum);
  opt.read("beta1", c.loop.optimizer.beta1);
  opt.read("beta2", c.loop.optimizer.beta2);
  opt.read("epsilon", c.loop.optimizer.epsilon);
  opt.finish();
  auto es = loop.section("early_stop");
  es.read("enabled", c.loop.early_stop.enabled);
  es.read("metric", c.loop.early_stop.metric);
  es.read("patience", c.loop.early_stop.patience);
  es.read("min_delta", c.loop.early_stop.min_delta);
  es.finish();
  loop.finish();

  auto critic = root.section("critic");
  critic.read("weights", c.critic.weights);
  critic.read("adherence_scale", c.critic.shape.adherence_scale);
  critic.read("fidelity_scale", c.critic.shape.fidelity_scale);
  critic.read("regularity_radius", c.critic.shape.regularity_radius);
  critic.read_as("threshold_mode", c.critic.threshold_mode, [](const std::string& s) {
    if (s == "quantile") return ThresholdMode::quantile;
    if (s == "fixed") return ThresholdMode::fixed;
    throw std::invalid_argument("expected 'quantile' or 'fixed', got '" + s + "'");
  });
  critic.read("quantile_bad", c.critic.quantile_bad);
  critic.read("quantile_good", c.critic.quantile_good);
  critic.read("calibration_samples", c.critic.calibration_samples);
  critic.read("tau_bad", c.critic.tau_bad);
  critic.read("tau_good", c.critic.tau_good);
  critic.read("tie_margin", c.critic.tie_margin);
  critic.read("annotator_noise", c.critic.annotator_noise);
  critic.read("annotators", c.critic.annotators);
  critic.read("labeled_set_size", c.critic.labeled_set_size);
  critic.finish();

  auto eval = root.section("eval");
  eval.read("n_samples", c.eval.n_samples);
  eval.read("n_pairs", c.eval.n_pairs);
  eval.finish();

  auto output = root.section("output");
  output.read("wall_clock_in_metrics", c.output.wall_clock_in_metrics);
  output.finish();

  root.finish();
  return c;
}

/// Semantic checks that do not fit the per-key parse.
inline void validate(const RunConfig& c) {
  try {
    c.data.validate();
    if (c.model.input_dim != c.data.dim()) throw ConfigError("model.input_dim must match the data dimension");
    if (c.model.condition_dim != c.data.conditions.combination_count()) {
      throw ConfigError("model.condition_dim must equal the number of condition combinations (" +
                        std::to_string(c.data.conditions.combination_count()) + ")");
    }
    (void)c.schedule.build();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(c.align.beta > 0.0)) throw ConfigError("align.beta must be positive");
  if (c.align.lambda1 < 0.0 || c.align.lambda2 < 0.0 || c.align.lambda_kto < 0.0) {
    throw ConfigError("align lambdas must be nonnegative");
  }
  if (c.align.batch_size == 0) throw ConfigError("align.batch_size must be positive");
  if (c.loop.iterations == 0) throw ConfigError("loop.iterations must be positive");
  if (c.loop.variants_per_condition < min_variants_per_condition) {
    throw ConfigError("loop.variants_per_condition must be at least " + std::to_string(min_variants_per_condition));
  }
  if (c.loop.conditions_per_iteration == 0) throw ConfigError("loop.conditions_per_iteration must be positive");
  if (c.critic.weights.size() != 3) throw ConfigError("critic.weights needs 3 entries");
  if (!(c.critic.quantile_bad < c.critic.quantile_good) || c.critic.quantile_bad < 0.0 || c.critic.quantile_good > 1.0) {
    throw ConfigError("critic quantiles need 0 <= quantile_bad < quantile_good <= 1");
  }
  if (c.critic.annotators < 3) throw ConfigError("critic.annotators must be at least 3");
  if (c.eval.n_samples == 0 || c.eval.n_pairs == 0) throw ConfigError("eval sizes must be positive");
  (void)metric_higher_is_better(c.loop.early_stop.metric);
}

/// Applies "dotted.key=value" onto a config tree. The value is parsed as JSON
/// when possible and taken as a string otherwise.
inline void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &tree;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + key + "' passes through a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override '" + key + "' passes through a non-object");
  (*node)[parts.back()] = value;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  json tree = read_json_file(path);
  for (const auto& o : overrides) apply_override(tree, o);
  RunConfig c = run_config_from_json(tree);
  validate(c);
  return c;
}

inline void write_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace ipo
