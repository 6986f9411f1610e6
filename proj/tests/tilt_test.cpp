// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "ipo/random.hpp"
#include "ipo/tilt.hpp"
#include "oracles.hpp"

namespace ipo {
namespace {

Vec random_simplex(std::size_t n, Rng& rng) {
  Vec p(n);
  double s = 0.0;
  for (auto& v : p) s += (v = 0.05 + rng.uniform());
  for (auto& v : p) v /= s;
  // renormalize so the sum passes the 1e-12 check exactly enough
  double t = 0.0;
  for (double v : p) t += v;
  p.back() += 1.0 - t;
  return p;
}

TEST(Tilt, TwoStateExample) {
  const Vec out = discrete_tilt(Vec{0.5, 0.5}, Vec{1.0, 0.0}, 1.0);
  EXPECT_NEAR(out[0], 0.7310585786300049, 1e-15);
  EXPECT_NEAR(out[1], 0.2689414213699951, 1e-15);
}

TEST(Tilt, NeutralRewardIsIdentity) {
  Rng rng(1);
  const Vec p = random_simplex(8, rng);
  const Vec out = discrete_tilt(p, Vec(8, 0.0), 0.3);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[i], p[i], 1e-15);
}

TEST(Tilt, HugeBetaIsIdentity) {
  Rng rng(2);
  const Vec p = random_simplex(8, rng), r = rng.normal_vector(8);
  const Vec out = discrete_tilt(p, r, 1e12);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[i], p[i], 1e-9);
}

TEST(Tilt, SmallBetaConcentratesOnArgmax) {
  const Vec p{0.4, 0.3, 0.2, 0.1};
  const Vec r{0.1, 0.5, 0.45, -1.0};
  double prev = 0.0;
  for (double beta : {1.0, 0.1, 0.01, 1e-3}) {
    const double mass = discrete_tilt(p, r, beta)[1];
    EXPECT_GT(mass, prev);
    prev = mass;
  }
  EXPECT_GT(prev, 1.0 - 1e-9);
}

TEST(Tilt, CompositionAddsRewards) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec p = random_simplex(8, rng), r1 = rng.normal_vector(8), r2 = rng.normal_vector(8);
    const double beta = 0.2 + 2.0 * rng.uniform();
    Vec sum(8);
    for (std::size_t i = 0; i < 8; ++i) sum[i] = r1[i] + r2[i];
    const Vec two = discrete_tilt(discrete_tilt(p, r1, beta), r2, beta);
    const Vec one = discrete_tilt(p, sum, beta);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(two[i], one[i], 1e-12);
  }
}

TEST(Tilt, ZeroMassStaysZero) {
  const Vec out = discrete_tilt(Vec{0.0, 0.5, 0.5}, Vec{100.0, 0.0, 1.0}, 0.5);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_NEAR(out[1] + out[2], 1.0, 1e-15);
}

TEST(Tilt, NoOverflowForLargeRatio) {
  const Vec out = discrete_tilt(Vec{0.5, 0.5}, Vec{1000.0, 999.0}, 1e-3);
  EXPECT_TRUE(std::isfinite(out[0]));
  EXPECT_NEAR(out[0], 1.0, 1e-12);
}

TEST(Tilt, RejectsBadInput) {
  EXPECT_THROW(discrete_tilt(Vec{0.5, 0.5}, Vec{1, 0}, 0.0), std::invalid_argument);
  EXPECT_THROW(discrete_tilt(Vec{0.5, 0.5}, Vec{1, 0}, -1.0), std::invalid_argument);
  EXPECT_THROW(discrete_tilt(Vec{0.6, 0.5}, Vec{1, 0}, 1.0), std::invalid_argument);
  EXPECT_THROW(discrete_tilt(Vec{1.5, -0.5}, Vec{1, 0}, 1.0), std::invalid_argument);
  EXPECT_THROW(discrete_tilt(Vec{0.5, 0.5}, Vec{INFINITY, 0}, 1.0), std::invalid_argument);
  EXPECT_THROW(discrete_tilt(Vec{0.5, 0.5}, Vec{1}, 1.0), std::invalid_argument);
}

TEST(Tilt, MatchesGridSearchOptimum) {
  Rng rng(4);
  for (double beta : {0.25, 1.0, 3.0}) {
    const Vec p = random_simplex(8, rng), r = rng.normal_vector(8);
    const Vec grid = testing::grid_search_optimum(p, r, beta, 1e-3);
    const Vec tilt = discrete_tilt(p, r, beta);
    EXPECT_LT(testing::total_variation(grid, tilt), 2e-3) << "beta " << beta;
    EXPECT_GE(testing::kl_regularized_value(tilt, p, r, beta), testing::kl_regularized_value(grid, p, r, beta));
  }
}

}  // namespace
}  // namespace ipo
