// Copyright 2026 The stitchkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "stitch/metrics.hpp"
#include "support/oracles.hpp"

namespace stitch {
namespace {

using testing::brute_ndcg;
using testing::brute_spearman;

std::vector<double> random_metrics(std::mt19937_64& rng, std::size_t n, bool ties) {
  std::uniform_int_distribution<int> coarse(0, 3);
  std::uniform_real_distribution<double> fine(0, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = ties ? coarse(rng) / 4.0 : fine(rng);
  return v;
}

TEST(Ndcg, Examples) {
  std::vector<double> ref = {1, 0};
  std::vector<std::size_t> rev = {1, 0};
  EXPECT_NEAR(ndcg_at_k(std::span<const std::size_t>(rev), ref, 2), 1 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(ndcg_at_k(std::span<const std::size_t>(rev), ref, 2), 0.6309, 5e-5);
  std::vector<double> cand = {0.9, 0.5, 0.1}, r3 = {3, 2, 1};
  EXPECT_EQ(ndcg_at_k(cand, r3, 3), 1.0);
  std::vector<double> flat = {0.4, 0.4, 0.4};
  EXPECT_EQ(ndcg_at_k(cand, flat, 2), 1.0);
  EXPECT_THROW(ndcg_at_k(cand, r3, 0), ArgumentError);
  EXPECT_THROW(ndcg_at_k(cand, r3, 4), ArgumentError);
}

TEST(Ndcg, CandidateTiesBreakByIndex) {
  std::vector<double> cand = {1, 1}, ref = {0, 1};
  // Order is (0, 1): gain 0 first.
  EXPECT_NEAR(ndcg_at_k(cand, ref, 1), 0.0, 0);
}

TEST(Spearman, Examples) {
  std::vector<double> a = {1, 2, 3}, b = {1, 3, 2}, c = {3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman_rho(a, a), 1.0);
  EXPECT_DOUBLE_EQ(spearman_rho(a, c), -1.0);
  EXPECT_DOUBLE_EQ(spearman_rho(a, b), 0.5);
  std::vector<double> same = {2, 2, 2};
  EXPECT_THROW(spearman_rho(a, same), UndefinedCorrelationError);
  std::vector<double> one = {1};
  EXPECT_THROW(spearman_rho(one, one), ArgumentError);
}

TEST(Spearman, AverageRanksForTies) {
  std::vector<double> v = {5, 7, 5, 1};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{2.5, 1, 2.5, 4}));
}

TEST(Metrics, MatchBruteForceExactlyOnRandomRankings) {
  std::mt19937_64 rng(2026);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + trial % 9;
    auto cand = random_metrics(rng, n, trial % 3 == 0);
    auto ref = random_metrics(rng, n, trial % 4 == 0);
    for (std::size_t k = 1; k <= n; ++k) EXPECT_EQ(ndcg_at_k(cand, ref, k), brute_ndcg(cand, ref, k));
    bool cv = std::adjacent_find(cand.begin(), cand.end(), std::not_equal_to<>()) != cand.end();
    bool rv = std::adjacent_find(ref.begin(), ref.end(), std::not_equal_to<>()) != ref.end();
    if (cv && rv)
      EXPECT_EQ(spearman_rho(cand, ref), brute_spearman(cand, ref));
    else
      EXPECT_THROW(spearman_rho(cand, ref), UndefinedCorrelationError);
  }
}

TEST(Metrics, InvariantUnderMonotoneCandidateTransform) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + trial % 8;
    auto cand = random_metrics(rng, n, trial % 2);
    auto ref = random_metrics(rng, n, false);
    std::vector<double> t;
    for (double x : cand) t.push_back(std::exp(3 * x) + x * x * x);
    for (std::size_t k = 1; k <= n; ++k) EXPECT_EQ(ndcg_at_k(cand, ref, k), ndcg_at_k(t, ref, k));
    try {
      EXPECT_EQ(spearman_rho(cand, ref), spearman_rho(t, ref));
    } catch (const UndefinedCorrelationError&) {
    }
  }
}

TEST(Metrics, InvariantUnderConsistentRelabeling) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + trial % 8;
    auto cand = random_metrics(rng, n, false), ref = random_metrics(rng, n, false);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pc(n), pr(n);
    for (std::size_t i = 0; i < n; ++i) pc[perm[i]] = cand[i], pr[perm[i]] = ref[i];
    for (std::size_t k = 1; k <= n; ++k) EXPECT_NEAR(ndcg_at_k(cand, ref, k), ndcg_at_k(pc, pr, k), 1e-12);
    EXPECT_NEAR(spearman_rho(cand, ref), spearman_rho(pc, pr), 1e-12);
  }
}

TEST(Delta, Examples) {
  ReportKey key{"mic", "synthetic", "mlp1"};
  auto same = delta_table(key, {{"hyma", 0.5}, {"grid", 0.5}, {"random", 0.5}});
  for (const auto& r : same) EXPECT_EQ(r.delta, 0.0);
  auto d = delta_table(key, {{"hyma", 38.4}, {"grid", 39.3}});
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NEAR(d[0].delta, -0.9, 1e-12);
  auto c = delta_table(key, {{"hyma", 27.46}, {"cgs", 24.07}});
  EXPECT_NEAR(c[0].delta, 3.39, 1e-12);
  EXPECT_THROW(delta_table(key, {{"grid", 1.0}}), ArgumentError);
}

TEST(Csv, HeaderEscapingAndRows) {
  std::ostringstream os;
  write_csv(os, {{{"itm", "a,b", "mlp1"}, "delta:grid", -0.5}});
  EXPECT_EQ(os.str(), "task,dataset,connector,metric,value\nitm,\"a,b\",mlp1,delta:grid,-0.5\n");
}

TEST(Efficiency, Ratios) {
  auto r = efficiency_ratios(27, 120, 40);
  EXPECT_NEAR(r.grid_over_hyma, 4.444444444444, 1e-9);
  EXPECT_NEAR(r.best_guess_over_hyma, 1.481481481481, 1e-9);
  EXPECT_DOUBLE_EQ(r.grid_over_hyma / r.best_guess_over_hyma, 3.0);
  EXPECT_THROW(efficiency_ratios(0, 1, 1), ArgumentError);
}

TEST(Ndcg, DefaultKs) {
  EXPECT_EQ(default_ndcg_ks(27), (std::vector<std::size_t>{5, 7, 10}));
  EXPECT_EQ(default_ndcg_ks(9), (std::vector<std::size_t>{5, 7, 9}));
  EXPECT_EQ(default_ndcg_ks(3), (std::vector<std::size_t>{1, 2, 3}));
}

}  // namespace
}  // namespace stitch
