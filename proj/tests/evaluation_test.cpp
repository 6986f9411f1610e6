// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "ipo/evaluation.hpp"
#include "ipo/serialization.hpp"
#include "support.hpp"

namespace ipo {
namespace {

struct Setup : ::testing::Test {
  NoiseSchedule schedule = build_schedule(20, ScheduleKind::linear, 1e-3, 0.3);
  MlpDenoiser model = MlpDenoiser::initialized(testing::tiny_arch(), 3);
  MlpDenoiser other = MlpDenoiser::initialized(testing::tiny_arch(), 4);
  std::vector<Vec> conditions{{1.0, 0.0}, {0.0, 1.0}};
};

double first_coordinate(std::span<const double> x, std::span<const double>) { return x[0]; }

TEST_F(Setup, ConstantRewardSummary) {
  const auto s = mean_reward(model, [](auto, auto) { return 0.7; }, conditions, 50, 1, schedule);
  EXPECT_DOUBLE_EQ(s.mean, 0.7);
  EXPECT_NEAR(s.std, 0.0, 1e-12);
}

TEST_F(Setup, MeanRewardDeterministic) {
  const auto a = mean_reward(model, first_coordinate, conditions, 100, 9, schedule);
  const auto b = mean_reward(model, first_coordinate, conditions, 100, 9, schedule);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_THROW(mean_reward(model, first_coordinate, conditions, 0, 9, schedule), std::invalid_argument);
}

TEST_F(Setup, MeanRewardStableAcrossSeeds) {
  const auto a = mean_reward(model, [](auto x, auto) { return std::tanh(x[0]); }, conditions, 500, 1, schedule);
  const auto b = mean_reward(model, [](auto x, auto) { return std::tanh(x[0]); }, conditions, 500, 2, schedule);
  EXPECT_LT(std::abs(a.mean - b.mean), 3.0 * std::sqrt(2.0) * a.std / std::sqrt(500.0));
}

TEST_F(Setup, SelfWinRateIsHalf) {
  EXPECT_DOUBLE_EQ(win_rate(model, model, first_coordinate, conditions, 200, 5, schedule), 0.5);
}

TEST_F(Setup, WinRatesComplement) {
  const double ab = win_rate(model, other, first_coordinate, conditions, 300, 6, schedule);
  const double ba = win_rate(other, model, first_coordinate, conditions, 300, 6, schedule);
  EXPECT_NEAR(ab + ba, 1.0, 1e-12);
  EXPECT_THROW(win_rate(model, other, first_coordinate, conditions, 0, 6, schedule), std::invalid_argument);
}

TEST_F(Setup, PointMassSamplers) {
  // the exact predictor for a point mass samples that point for every seed
  const testing::PointMassPredictor high{{0.9, 0.0}, schedule.alpha_bars};
  const testing::PointMassPredictor low{{0.1, 0.0}, schedule.alpha_bars};
  EXPECT_EQ(win_rate(high, low, first_coordinate, conditions, 100, 7, schedule), 1.0);
  EXPECT_EQ(win_rate(low, high, first_coordinate, conditions, 100, 7, schedule), 0.0);
}

TEST_F(Setup, JudgeThatAlwaysPrefersOneSample) {
  // the judge scores samples from `model` high whatever they are
  auto judge = [this](std::span<const double> x, std::span<const double> c) {
    for (std::size_t i = 0; i < 100; ++i) {
      const Vec& cond = conditions[i % conditions.size()];
      if (std::equal(c.begin(), c.end(), cond.begin()) &&
          ancestral_sample(model, cond, schedule, derive_seed(7, "eval-pair", i)) == Vec(x.begin(), x.end())) {
        return 1.0;
      }
    }
    return 0.0;
  };
  EXPECT_EQ(win_rate(model, other, judge, conditions, 100, 7, schedule), 1.0);
}

TEST(EnergyDistance, IdenticalSetsGiveZero) {
  Rng rng(1);
  std::vector<Vec> xs;
  for (int i = 0; i < 50; ++i) xs.push_back(rng.normal_vector(2));
  EXPECT_NEAR(energy_distance(xs, xs), 0.0, 1e-12);
  std::vector<Vec> shuffled(xs.rbegin(), xs.rend());
  EXPECT_NEAR(energy_distance(xs, shuffled), 0.0, 1e-12);
}

TEST(EnergyDistance, SymmetricAndPositive) {
  Rng rng(2);
  std::vector<Vec> xs, ys;
  for (int i = 0; i < 40; ++i) xs.push_back(rng.normal_vector(2));
  for (int i = 0; i < 30; ++i) {
    Vec y = rng.normal_vector(2);
    y[0] += 0.5;
    ys.push_back(y);
  }
  EXPECT_NEAR(energy_distance(xs, ys), energy_distance(ys, xs), 1e-12);
  EXPECT_GT(energy_distance(xs, ys), 0.0);
}

TEST(EnergyDistance, PointMasses) {
  EXPECT_NEAR(energy_distance({Vec{0.0, 0.0}}, {Vec{3.0, 4.0}}), 10.0, 1e-12);
  EXPECT_THROW(energy_distance({}, {Vec{1.0}}), std::invalid_argument);
}

TEST(EvalReport, MonotoneFlag) {
  EvalReport r;
  for (double m : {0.5, 0.6, 0.6, 0.7}) r.rows.push_back({static_cast<int>(r.rows.size()), m});
  r.refresh_flags();
  EXPECT_TRUE(r.monotone_improvement);
  r.rows[2].mean_reward = 0.55;
  r.refresh_flags();
  EXPECT_FALSE(r.monotone_improvement);
}

TEST(EvalReport, JsonRoundTrip) {
  EvalReport r;
  r.rows.push_back({0, 0.5, 0.1, 0.5, 0.01, 500, 7});
  r.rows.push_back({1, 0.4, 0.2, 0.3, 0.02, 500, 7});
  r.refresh_flags();
  const EvalReport back = report_from_json(to_json(r));
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[1].mean_reward, 0.4);
  EXPECT_EQ(back.rows[1].n_samples, 500u);
  EXPECT_EQ(back.rows[1].seed, 7u);
  EXPECT_FALSE(back.monotone_improvement);
}

}  // namespace
}  // namespace ipo
