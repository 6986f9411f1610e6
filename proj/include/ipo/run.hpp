// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipo/annotation.hpp"
#include "ipo/checkpoint.hpp"
#include "ipo/config.hpp"
#include "ipo/critic.hpp"
#include "ipo/diffusion.hpp"
#include "ipo/engine.hpp"
#include "ipo/errors.hpp"
#include "ipo/evaluation.hpp"
#include "ipo/optim.hpp"
#include "ipo/serialization.hpp"
#include "ipo/toy_task.hpp"

namespace ipo {

namespace fs = std::filesystem;

/// runs/<name>/ layout.
struct RunPaths {
  fs::path root;

  fs::path config() const { return root / "config.json"; }
  fs::path base_checkpoint() const { return root / "base" / "checkpoint"; }
  fs::path iteration_dir(int k) const { return root / ("iter_" + std::to_string(k)); }
  fs::path metrics() const { return root / "metrics.csv"; }
  fs::path timings() const { return root / "timings.csv"; }
  fs::path calibration() const { return root / "critic_calibration.json"; }
  fs::path report() const { return root / "report.json"; }
  fs::path summary() const { return root / "summary.txt"; }
  fs::path plots() const { return root / "plots"; }
  fs::path critic_eval() const { return root / "critic_eval.json"; }
};

inline SampleBatch real_data_for(const RunConfig& cfg) {
  return sample_real_data(cfg.data, cfg.data.real_count, derive_seed(cfg.seed, "real"));
}

struct PretrainResult {
  MlpDenoiser model;
  double final_loss = 0.0;
};

/// Fits the base DDPM to the real data; Adam with a cosine-decayed step size.
inline PretrainResult pretrain_model(const RunConfig& cfg, std::ostream* log = nullptr) {
  const NoiseSchedule schedule = cfg.schedule.build();
  const SampleBatch real = real_data_for(cfg);
  MlpDenoiser model = MlpDenoiser::initialized(cfg.model, derive_seed(cfg.seed, "init"));
  OptimizerConfig opt_cfg;
  opt_cfg.learning_rate = cfg.pretrain.learning_rate;
  Rng batch_rng(derive_seed(cfg.seed, "pretrain-batches"));
  double ema = 0.0;
  Optimizer opt(opt_cfg, model.num_params());
  for (std::size_t step = 0; step < cfg.pretrain.steps; ++step) {
    const SampleBatch batch = detail::draw_rows(real, cfg.pretrain.batch_size, batch_rng);
    Rng loss_rng(derive_seed(cfg.seed, "pretrain-loss", step));
    LossAndGradient lg = ddpm_loss(model, batch, schedule, loss_rng);
    const double progress = static_cast<double>(step) / static_cast<double>(cfg.pretrain.steps);
    const double scale = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    opt.set_learning_rate(cfg.pretrain.learning_rate * scale);
    opt.step(model.params(), lg.gradient);
    ema = step == 0 ? lg.loss : 0.99 * ema + 0.01 * lg.loss;
    if (log && (step + 1) % 500 == 0) *log << "pretrain step " << step + 1 << " loss " << ema << '\n';
  }
  return {std::move(model), ema};
}

inline void pretrain(const RunConfig& cfg, const RunPaths& paths, std::ostream* log = nullptr) {
  PretrainResult result = pretrain_model(cfg, log);
  fs::create_directories(paths.base_checkpoint().parent_path());
  save_checkpoint(paths.base_checkpoint(), result.model, cfg.schedule);
}

inline MlpDenoiser load_model(const fs::path& stem, const RunConfig& cfg) {
  Checkpoint ck = load_checkpoint(stem);
  if (!(ck.model.arch() == cfg.model)) throw ConfigError("checkpoint " + stem.string() + " does not match model config");
  if (!(ck.schedule == cfg.schedule)) throw ConfigError("checkpoint " + stem.string() + " was trained with another schedule");
  return std::move(ck.model);
}

struct Thresholds {
  double tau_bad = 0.0;
  double tau_good = 0.0;
};

/// Fixed thresholds, or reward quantiles of base-policy samples.
inline Thresholds calibrate_thresholds(const RunConfig& cfg, const MlpDenoiser& base, const NoiseSchedule& schedule) {
  if (cfg.critic.threshold_mode == ThresholdMode::fixed) return {cfg.critic.tau_bad, cfg.critic.tau_good};
  const OracleReward probe = make_oracle(cfg.data, cfg.critic.shape, cfg.critic.weights, 0.0, 1.0, cfg.critic.tie_margin);
  const auto conditions = all_condition_encodings(cfg.data.conditions);
  const SampleBatch samples =
      sample_eval_set(base, conditions, cfg.critic.calibration_samples, derive_seed(cfg.seed, "calibration"), schedule);
  std::vector<double> rewards;
  for (std::size_t i = 0; i < samples.size(); ++i) rewards.push_back(probe(samples.x0[i], samples.conditions[i]));
  return {quantile(rewards, cfg.critic.quantile_bad), quantile(rewards, cfg.critic.quantile_good)};
}

inline OracleReward build_oracle(const RunConfig& cfg, const Thresholds& t) {
  return make_oracle(cfg.data, cfg.critic.shape, cfg.critic.weights, t.tau_bad, t.tau_good, cfg.critic.tie_margin);
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows, bool include_wall_clock) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,method,mean_reward,win_rate_vs_prev,energy_distance,loss,wall_seconds,seed\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << to_string(r.method) << ',' << format_number(r.mean_reward) << ','
        << format_number(r.win_rate_vs_prev) << ',' << format_number(r.energy_distance) << ','
        << format_number(r.loss) << ',' << format_number(include_wall_clock ? r.wall_seconds : 0.0) << ',' << r.seed
        << '\n';
  }
}

inline void write_timings_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  out << "iteration,wall_seconds\n";
  for (const auto& r : rows) out << r.iteration << ',' << format_number(r.wall_seconds) << '\n';
}

inline std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("missing metrics file " + path.string());
  std::vector<MetricsRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw std::runtime_error("malformed metrics row: " + line);
    MetricsRow r;
    r.iteration = std::stoi(cells[0]);
    r.method = method_from_string(cells[1]);
    r.mean_reward = std::stod(cells[2]);
    r.win_rate_vs_prev = std::stod(cells[3]);
    r.energy_distance = std::stod(cells[4]);
    r.loss = cells[5] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[5]);
    r.wall_seconds = std::stod(cells[6]);
    r.seed = std::stoull(cells[7]);
    rows.push_back(r);
  }
  return rows;
}

inline AlignmentSetup make_setup(const RunConfig& cfg, const OracleReward& oracle) {
  AlignmentSetup setup;
  setup.arch = cfg.model;
  setup.schedule = cfg.schedule.build();
  setup.conditions = cfg.data.conditions;
  setup.oracle = oracle;
  setup.real_data = real_data_for(cfg);
  setup.method = cfg.method;
  setup.align = cfg.align;
  setup.loop = cfg.loop;
  setup.eval = cfg.eval;
  setup.seed = cfg.seed;
  return setup;
}

struct AlignResult {
  std::vector<MetricsRow> metrics;
  IterationState final_state;
  bool stopped_early = false;
};

/// Baseline row, then up to loop.iterations IPO rounds, persisting each
/// round's checkpoints, dataset and verdicts.
inline AlignResult align(const RunConfig& cfg, const RunPaths& paths, std::ostream* log = nullptr) {
  const MlpDenoiser base = load_model(paths.base_checkpoint(), cfg);
  const NoiseSchedule schedule = cfg.schedule.build();
  const Thresholds thresholds = calibrate_thresholds(cfg, base, schedule);
  {
    std::ofstream out(paths.calibration());
    out << nlohmann::json{{"tau_bad", thresholds.tau_bad}, {"tau_good", thresholds.tau_good}}.dump(2) << '\n';
  }
  const AlignmentSetup setup = make_setup(cfg, build_oracle(cfg, thresholds));

  AlignResult result;
  IterationState state = initial_state(base.params(), cfg.align.beta);
  state.metrics.push_back(evaluate_snapshot(base, nullptr, setup, 0));
  if (log) *log << "iteration 0 mean_reward " << state.metrics.back().mean_reward << '\n';
  write_metrics_csv(paths.metrics(), state.metrics, cfg.output.wall_clock_in_metrics);

  for (std::size_t round = 0; round < cfg.loop.iterations; ++round) {
    state = run_iteration(state, setup);
    const fs::path dir = paths.iteration_dir(state.k);
    fs::create_directories(dir);
    MlpDenoiser snapshot(cfg.model);
    snapshot.set_params(state.policy_params);
    save_checkpoint(dir / "checkpoint", snapshot, cfg.schedule);
    snapshot.set_params(state.reference_params);
    save_checkpoint(dir / "reference_checkpoint", snapshot, cfg.schedule);
    if (cfg.method == Method::dpo) write_jsonl(dir / "dataset.jsonl", state.pairs);
    else write_jsonl(dir / "dataset.jsonl", state.pointwise);
    write_jsonl(dir / "verdicts.jsonl", state.verdicts);
    write_metrics_csv(paths.metrics(), state.metrics, cfg.output.wall_clock_in_metrics);
    write_timings_csv(paths.timings(), state.metrics);
    const auto& row = state.metrics.back();
    if (log) {
      *log << "iteration " << row.iteration << " mean_reward " << row.mean_reward << " win_rate_vs_prev "
           << row.win_rate_vs_prev << " energy_distance " << row.energy_distance << " loss " << row.loss << " ("
           << row.wall_seconds << " s)\n";
    }
    std::vector<double> history;
    for (const auto& m : state.metrics) {
      const auto& name = cfg.loop.early_stop.metric;
      history.push_back(name == "mean_reward"        ? m.mean_reward
                        : name == "win_rate_vs_prev" ? m.win_rate_vs_prev
                                                     : m.energy_distance);
    }
    if (round + 1 < cfg.loop.iterations && check_early_stop(history, cfg.loop.early_stop) == StopDecision::stop) {
      result.stopped_early = true;
      if (log) *log << "early stop after iteration " << row.iteration << '\n';
      break;
    }
  }
  result.metrics = state.metrics;
  result.final_state = std::move(state);
  return result;
}

/// Re-scores every saved snapshot (base, iter_1, ...) on held-out seeds.
inline EvalReport evaluate_run(const RunConfig& cfg, const RunPaths& paths) {
  const NoiseSchedule schedule = cfg.schedule.build();
  std::vector<MlpDenoiser> snapshots;
  snapshots.push_back(load_model(paths.base_checkpoint(), cfg));
  for (int k = 1; fs::exists(fs::path(paths.iteration_dir(k) / "checkpoint").string() + ".json"); ++k) {
    snapshots.push_back(load_model(paths.iteration_dir(k) / "checkpoint", cfg));
  }
  Thresholds thresholds{cfg.critic.tau_bad, cfg.critic.tau_good};
  if (fs::exists(paths.calibration())) {
    const auto j = read_json_file(paths.calibration());
    thresholds = {j.at("tau_bad").get<double>(), j.at("tau_good").get<double>()};
  }
  const OracleReward oracle = build_oracle(cfg, thresholds);
  const SampleBatch real = real_data_for(cfg);
  const auto conditions = all_condition_encodings(cfg.data.conditions);
  const std::uint64_t seed = derive_seed(cfg.seed, "eval");

  EvalReport report;
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    const SampleBatch samples = sample_eval_set(snapshots[k], conditions, cfg.eval.n_samples, seed, schedule);
    const RewardSummary s = summarize_rewards(samples, oracle);
    EvalRow row;
    row.iteration = static_cast<int>(k);
    row.mean_reward = s.mean;
    row.reward_std = s.std;
    row.win_rate_vs_prev = k == 0 ? 0.5
                                  : win_rate(snapshots[k], snapshots[k - 1], oracle, conditions, cfg.eval.n_pairs,
                                             derive_seed(cfg.seed, "eval-pairs"), schedule);
    row.energy_distance = energy_distance(samples.x0, real.x0);
    row.n_samples = cfg.eval.n_samples;
    row.seed = cfg.seed;
    report.rows.push_back(row);
  }
  report.refresh_flags();
  std::ofstream out(paths.report());
  out << to_json(report).dump(2) << '\n';
  return report;
}

namespace detail {

inline std::string svg_line_plot(const std::string& title, const std::vector<double>& ys) {
  const double w = 480, h = 320, pad = 48;
  double lo = ys.empty() ? 0.0 : ys.front(), hi = lo;
  for (double y : ys) {
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  auto px = [&](std::size_t i) {
    return pad + (ys.size() <= 1 ? 0.0 : (w - 2 * pad) * static_cast<double>(i) / static_cast<double>(ys.size() - 1));
  };
  auto py = [&](double y) { return h - pad - (h - 2 * pad) * (y - lo) / (hi - lo); };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
      << "</text>\n";
  svg << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < ys.size(); ++i) svg << px(i) << ',' << py(ys[i]) << ' ';
  svg << "\"/>\n";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    svg << "<circle cx=\"" << px(i) << "\" cy=\"" << py(ys[i]) << "\" r=\"3\" fill=\"steelblue\"/>\n";
    svg << "<text x=\"" << px(i) << "\" y=\"" << h - pad + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << i
        << "</text>\n";
  }
  svg << "<text x=\"8\" y=\"" << pad << "\" font-size=\"11\">" << format_number(hi) << "</text>\n";
  svg << "<text x=\"8\" y=\"" << h - pad << "\" font-size=\"11\">" << format_number(lo) << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace detail

/// Text summary plus one SVG line plot per metric.
inline std::string write_report(const RunPaths& paths) {
  if (!fs::exists(paths.report())) throw MissingArtifact("missing " + paths.report().string() + "; run eval first");
  const EvalReport report = report_from_json(read_json_file(paths.report()));
  std::ostringstream text;
  text << "iteration  mean_reward  reward_std  win_rate_vs_prev  energy_distance\n";
  std::vector<double> rewards, wins, energy;
  for (const auto& r : report.rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%9d  %11.4f  %10.4f  %16.3f  %15.4f\n", r.iteration, r.mean_reward, r.reward_std,
                  r.win_rate_vs_prev, r.energy_distance);
    text << buf;
    rewards.push_back(r.mean_reward);
    wins.push_back(r.win_rate_vs_prev);
    energy.push_back(r.energy_distance);
  }
  text << "monotone_improvement: " << (report.monotone_improvement ? "yes" : "no") << '\n';
  {
    std::ofstream out(paths.summary());
    out << text.str();
  }
  fs::create_directories(paths.plots());
  const std::vector<std::pair<std::string, const std::vector<double>*>> plots{
      {"mean_reward", &rewards}, {"win_rate_vs_prev", &wins}, {"energy_distance", &energy}};
  for (const auto& [name, ys] : plots) {
    std::ofstream out(paths.plots() / (name + ".svg"));
    out << detail::svg_line_plot(name + " vs iteration", *ys);
  }
  return text.str();
}

struct CriticEvalResult {
  double pairwise_accuracy = 0.0;
  double pointwise_accuracy = 0.0;
  std::size_t pairwise_items = 0;
  std::size_t pointwise_items = 0;
};

/// Labeled sets from base-policy samples; each ground-truth label is the
/// majority of simulated noisy annotators over the oracle's own verdict.
inline CriticEvalResult critic_eval(const RunConfig& cfg, const RunPaths& paths) {
  const MlpDenoiser base = load_model(paths.base_checkpoint(), cfg);
  const NoiseSchedule schedule = cfg.schedule.build();
  Thresholds thresholds;
  if (fs::exists(paths.calibration())) {
    const auto j = read_json_file(paths.calibration());
    thresholds = {j.at("tau_bad").get<double>(), j.at("tau_good").get<double>()};
  } else {
    thresholds = calibrate_thresholds(cfg, base, schedule);
  }
  const OracleReward oracle = build_oracle(cfg, thresholds);
  const auto conditions = all_condition_encodings(cfg.data.conditions);
  const std::size_t n = cfg.critic.labeled_set_size;
  const SampleBatch samples = sample_eval_set(base, conditions, 2 * n, derive_seed(cfg.seed, "critic-eval"), schedule);
  Rng annotators(derive_seed(cfg.seed, "annotators"));

  std::vector<PointwiseLabel> pointwise;
  std::vector<PairwiseLabel> pairwise;
  for (std::size_t i = 0; i < n; ++i) {
    const Candidate a{samples.x0[i], samples.conditions[i], i};
    const Level truth = *score_pointwise(oracle, a.x0, a.condition).level;
    pointwise.push_back({a, annotate(i, truth, cfg.critic.annotators, cfg.critic.annotator_noise, annotators).final});

    // i and i + conditions.size() share a condition under the cyclic layout
    const std::size_t j = (i + conditions.size()) % (2 * n);
    const Candidate b{samples.x0[j], samples.conditions[j], j};
    const RankingAnswer clean = *rank_by_oracle(oracle, a, b).answer;
    std::vector<RankingAnswer> votes;
    for (std::size_t v = 0; v < cfg.critic.annotators; ++v) {
      votes.push_back(noisy_answer(clean, cfg.critic.annotator_noise, annotators));
    }
    pairwise.push_back({a, b, majority_vote(std::span<const RankingAnswer>(votes))});
  }
  CriticEvalResult r;
  r.pairwise_accuracy = critic_accuracy(oracle_ranking_critic(oracle), pairwise);
  r.pointwise_accuracy = critic_accuracy(oracle_scoring_critic(oracle), pointwise);
  r.pairwise_items = pairwise.size();
  r.pointwise_items = pointwise.size();
  std::ofstream out(paths.critic_eval());
  out << nlohmann::json{{"pairwise_accuracy", r.pairwise_accuracy},
                        {"pointwise_accuracy", r.pointwise_accuracy},
                        {"pairwise_items", r.pairwise_items},
                        {"pointwise_items", r.pointwise_items},
                        {"annotators", cfg.critic.annotators},
                        {"annotator_noise", cfg.critic.annotator_noise}}
             .dump(2)
      << '\n';
  return r;
}

}  // namespace ipo
