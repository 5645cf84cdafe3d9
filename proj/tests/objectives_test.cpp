// Copyright 2026 The stitchkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stitch/objectives.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace stitch {
namespace {

Tensor randn(Shape shape, Rng& rng) {
  std::normal_distribution<double> normal;
  std::vector<real> v(shape_numel(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor(std::move(shape), std::move(v));
}

using testing::sorted_rank;

TEST(InfoNce, SingleRowIsZero) {
  Tensor a({1, 3}, {1, 2, 3}), b({1, 3}, {-1, 0.5, 2});
  EXPECT_EQ(info_nce(a, b).item(), 0);
}

TEST(InfoNce, UniformSimilaritiesGiveLn2) {
  Tensor a({2, 2}, {1, 0, 1, 0}), b({2, 2}, {0, 1, 0, 1});
  EXPECT_NEAR(info_nce(a, b).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(info_nce(a, b, {0.07, true}).item(), std::log(2.0), 1e-12);
}

TEST(InfoNce, HandComputedThreeRows) {
  // Unit rows so that the similarity matrix is the dot-product matrix.
  Tensor s({3, 2}, {1, 0, 0, 1, std::sqrt(0.5), std::sqrt(0.5)});
  Tensor a({3, 2}, {0, 1, 1, 0, std::sqrt(0.5), -std::sqrt(0.5)});
  double loss = 0;
  for (int i = 0; i < 3; ++i) {
    double sims[3], mx = -1e9;
    for (int j = 0; j < 3; ++j) {
      sims[j] = s(i, 0) * a(j, 0) + s(i, 1) * a(j, 1);
      mx = std::max(mx, sims[j]);
    }
    double z = 0;
    for (double v : sims) z += std::exp(v - mx);
    loss += -(sims[i] - mx - std::log(z));
  }
  EXPECT_NEAR(info_nce(s, a, {1.0, false}).item(), loss / 3, 1e-12);
}

TEST(InfoNce, Errors) {
  Tensor a({2, 2}, {1, 0, 0, 1});
  EXPECT_THROW(info_nce(a, a, {0.0, false}), ArgumentError);
  EXPECT_THROW(info_nce(a, Tensor({2, 2}, {1, 0, 0, 0})), DegenerateInputError);
  EXPECT_THROW(info_nce(a, Tensor({2, 3}, std::vector<real>(6, 1))), DimensionError);
}

TEST(InfoNce, DecreasesAsPositiveSimilarityGrows) {
  Tensor anchors({3, 2}, {1, 0, 0, 1, -1, 0});
  double prev = 1e9;
  for (int t = 0; t <= 10; ++t) {
    const double ang = 1.5 - 0.15 * t;  // angle between row 0 and its anchor
    Tensor st({3, 2}, {std::cos(ang), std::sin(ang), 0, 1, -1, 0});
    const double l = info_nce(st, anchors).item();
    EXPECT_GT(l, 0);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(InfoNce, ScaleInvarianceAndPermutationEquivariance) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor s = randn({5, 4}, rng), a = randn({5, 4}, rng);
    const double base = info_nce(s, a).item();
    std::vector<real> scaled(s.data().begin(), s.data().end());
    std::uniform_real_distribution<double> lam(0.1, 10);
    for (std::size_t i = 0; i < 5; ++i) {
      const double f = lam(rng);
      for (std::size_t j = 0; j < 4; ++j) scaled[i * 4 + j] *= f;
    }
    EXPECT_NEAR(info_nce(Tensor({5, 4}, scaled), a).item(), base, 1e-12);
    auto perm = permutation(5, rng);
    std::vector<real> ps, pa;
    for (auto p : perm) {
      for (std::size_t j = 0; j < 4; ++j) {
        ps.push_back(s(p, j));
        pa.push_back(a(p, j));
      }
    }
    EXPECT_NEAR(info_nce(Tensor({5, 4}, ps), Tensor({5, 4}, pa)).item(), base, 1e-12);
  }
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  auto s = testing::random_leaf({4, 3}, 1);
  Tensor a({4, 3}, {0.1, 0.4, -0.2, 0.5, -0.3, 0.9, -0.6, 0.2, 0.3, 0.7, 0.7, -0.1});
  EXPECT_LT(testing::max_grad_rel_err({s}, [&] { return info_nce(s, a, {0.1, false}); }), 1e-4);
  EXPECT_LT(testing::max_grad_rel_err({s}, [&] { return info_nce(s, a, {0.1, true}); }), 1e-4);
}

TEST(Recall, ExamplesAndTies) {
  Matrix<real> m(2, 3, {0.9, 0.1, 0.2, 0.1, 0.8, 0.3});
  std::vector<std::size_t> gold = {0, 1};
  EXPECT_EQ(recall_at_k(m, gold, 1), 1.0);
  Matrix<real> flat(1, 4, {1, 1, 1, 1});
  std::vector<std::size_t> g0 = {0}, g3 = {3};
  EXPECT_EQ(recall_at_k(flat, g0, 1), 1.0);
  EXPECT_EQ(recall_at_k(flat, g3, 1), 0.0);
  EXPECT_EQ(recall_at_k(flat, g3, 4), 1.0);
  EXPECT_THROW(recall_at_k(flat, g0, 5), ArgumentError);
}

TEST(Recall, MatchesSortOracleOnRandomMatrices) {
  Rng rng(11);
  std::uniform_int_distribution<int> coarse(0, 4);  // many ties
  for (int trial = 0; trial < 200; ++trial) {
    Matrix<real> m(5, 10);
    for (auto& v : m.values) v = trial % 2 ? real(coarse(rng)) : std::normal_distribution<double>()(rng);
    std::vector<std::size_t> gold(5);
    for (auto& g : gold) g = rng() % 10;
    for (std::size_t k = 1; k <= 10; ++k) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < 5; ++i) hits += sorted_rank(m.row(i), gold[i]) < k;
      EXPECT_EQ(recall_at_k(m, gold, k), double(hits) / 5);
    }
  }
}

TEST(Classify, Examples) {
  Tensor images({3, 3}, {1, 2, 0, 0, 1, 1, 3, 0, 1});
  std::vector<std::size_t> gold = {0, 1, 2};
  EXPECT_EQ(classify_by_prompt(images, images, gold), 1.0);
  Tensor classes({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor scaled({3, 3}, {5, 0, 0, 0, 5, 0, 0, 0, 5});
  EXPECT_EQ(classify_by_prompt(classes, scaled, gold), 1.0);
}

TEST(Classify, MatchesBruteForce) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor cls = randn({3, 4}, rng), img = randn({4, 4}, rng);
    std::vector<std::size_t> gold(4);
    for (auto& g : gold) g = rng() % 3;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      std::size_t best = 0;
      double best_s = -2;
      for (std::size_t c = 0; c < 3; ++c) {
        double dot = 0, ni = 0, nc = 0;
        for (std::size_t j = 0; j < 4; ++j) {
          dot += img(i, j) * cls(c, j);
          ni += img(i, j) * img(i, j);
          nc += cls(c, j) * cls(c, j);
        }
        const double s = dot / std::sqrt(ni * nc);
        if (s > best_s) best_s = s, best = c;
      }
      hits += best == gold[i];
    }
    EXPECT_EQ(classify_by_prompt(cls, img, gold), double(hits) / 4);
  }
}

TEST(Vqa, Examples) {
  Tensor img({1, 2}, {1, 0});
  std::vector<std::size_t> g0 = {0}, g1 = {1};
  std::vector<Tensor> cands = {Tensor({2, 2}, {2, 0, 0, 1})};
  EXPECT_EQ(vqa_qip_score(cands, img, g0), 1.0);
  std::vector<Tensor> same = {Tensor({2, 2}, {1, 1, 1, 1})};
  EXPECT_EQ(vqa_qip_score(same, img, g0), 1.0);
  EXPECT_EQ(vqa_qip_score(same, img, g1), 0.0);
  std::vector<Tensor> one = {Tensor({1, 2}, {1, 0})};
  EXPECT_THROW(vqa_qip_score(one, img, g0), ArgumentError);
  EXPECT_EQ(qip_prompt("what color?", "red"), "QUESTION: what color? ANSWER: red");
}

TEST(Vqa, ThreeItemsBruteForce) {
  Tensor img({3, 2}, {1, 0, 0, 1, 1, 1});
  std::vector<Tensor> cands = {Tensor({3, 2}, {0, 1, 1, 0.1, -1, 0}), Tensor({2, 2}, {1, 0, 0.2, 1}),
                               Tensor({2, 2}, {1, 0.9, 1, 0})};
  std::vector<std::size_t> gold = {1, 1, 0};
  EXPECT_EQ(vqa_qip_score(cands, img, gold), 1.0);
  gold = {0, 0, 1};
  EXPECT_EQ(vqa_qip_score(cands, img, gold), 0.0);
}

TEST(EvalTask, RetrievalIdentityStitchIsPerfect) {
  PairedEmbeddingDataset data;
  data.count = 4;
  data.banks_a = {Matrix<real>(4, 2, {1, 0, 0, 1, -1, 0, 0, -1})};
  data.banks_b = data.banks_a;
  data.val = {0, 1, 2, 3};
  auto task = eval_task_from_json(nlohmann::json::parse(R"({"split": "val", "k": 1})"), data);
  EXPECT_EQ(task.items.size(), 4u);
  EXPECT_EQ(evaluate_task(task, data.banks_a[0], data.banks_b[0], [](const Tensor& t) { return t; }), 1.0);
  EXPECT_THROW(eval_task_from_json(nlohmann::json::parse(R"({"kind": "bogus", "items": []})"), data),
               ConfigError);
  auto vqa = eval_task_from_json(
      nlohmann::json::parse(
          R"({"kind": "vqa-qip", "items": [{"image": 0, "candidates": [2, 0], "gold": 1}]})"),
      data);
  EXPECT_EQ(evaluate_task(vqa, data.banks_a[0], data.banks_b[0], [](const Tensor& t) { return t; }), 1.0);
  EXPECT_THROW(eval_task_from_json(
                   nlohmann::json::parse(R"({"kind": "classification", "candidates": [0], "items": [{"image": 0, "gold": 3}]})"),
                   data),
               ConfigError);
}

}  // namespace
}  // namespace stitch
