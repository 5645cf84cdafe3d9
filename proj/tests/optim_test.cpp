// Copyright 2026 The stitchkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "stitch/optim.hpp"

namespace stitch {
namespace {

// Textbook Adam on plain doubles.
struct AdamOracle {
  double b1, b2, eps;
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& w, const std::vector<double>& g, double lr) {
    ++t;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

TEST(LrSchedule, WarmupThenCosine) {
  LrSchedule s(1e-2, 10, 110);
  EXPECT_DOUBLE_EQ(s.lr(0), 0.0);
  EXPECT_DOUBLE_EQ(s.lr(5), 5e-3);
  EXPECT_DOUBLE_EQ(s.lr(10), 1e-2);
  EXPECT_NEAR(s.lr(60), 5e-3, 1e-15);
  EXPECT_NEAR(s.lr(110), 0.0, 1e-18);
  EXPECT_THROW(s.lr(111), RangeError);
}

TEST(LrSchedule, MatchesClosedForm) {
  LrSchedule s(3e-4, 7, 50);
  for (std::uint64_t t = 7; t <= 50; ++t) {
    const double p = double(t - 7) / 43.0;
    EXPECT_NEAR(s.lr(t), 3e-4 * 0.5 * (1 + std::cos(std::numbers::pi * p)), 1e-18);
  }
}

TEST(LrSchedule, NonIncreasingAfterWarmup) {
  LrSchedule s(1.0, 3, 40);
  for (std::uint64_t t = 3; t < 40; ++t) EXPECT_LE(s.lr(t + 1), s.lr(t));
  for (std::uint64_t t = 0; t < 3; ++t) EXPECT_LE(s.lr(t), s.lr(t + 1));
}

TEST(LrSchedule, AllWarmupHoldsPeak) {
  LrSchedule s(2.0, 4, 4);
  EXPECT_DOUBLE_EQ(s.lr(2), 1.0);
  EXPECT_DOUBLE_EQ(s.lr(4), 2.0);
}

TEST(LrSchedule, RejectsWarmupBeyondTotal) {
  EXPECT_THROW(LrSchedule(1.0, 5, 4), ArgumentError);
}

TEST(Adam, MatchesOracleOverSeveralSteps) {
  Tensor w({3}, {0.5, -1.0, 2.0}, true);
  Adam adam;
  adam.add_param("w", w);
  AdamOracle ref{0.9, 0.999, 1e-8, {0, 0, 0}, {0, 0, 0}};
  std::vector<double> wr = {0.5, -1.0, 2.0};
  for (int s = 0; s < 6; ++s) {
    adam.zero_grad();
    sum(mul(w, w)).backward();  // grad = 2w
    std::vector<double> g(3);
    for (int i = 0; i < 3; ++i) g[i] = 2 * wr[i];
    adam.step(0.1);
    ref.step(wr, g, 0.1);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(w.data()[i], wr[i], 1e-12);
  }
  EXPECT_EQ(adam.step_count(), 6u);
}

TEST(Adam, FirstStepMovesByLrTimesSign) {
  Tensor w({2}, {1.0, -1.0}, true);
  Adam adam;
  adam.add_param("w", w);
  sum(mul(w, Tensor({2}, {3.0, -0.25}))).backward();
  adam.step(0.01);
  EXPECT_NEAR(w.data()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w.data()[1], -1.0 + 0.01, 1e-9);
}

TEST(Adam, SpecScalarStep) {
  Tensor w({1}, {0.0}, true);
  Adam adam;
  adam.add_param("w", w);
  w.mutable_grad()[0] = 1.0;
  adam.step(0.1);
  // m = 0.1, v = 0.001; mhat = 1, vhat = 1.
  EXPECT_NEAR(w.data()[0], -0.1 / (1 + 1e-8), 1e-15);
  adam.step(0.1);
  // m = 0.19, v = 0.001999; mhat = 1, vhat = 1.
  const double m = 0.19 / (1 - 0.81), v = 0.001999 / (1 - 0.999 * 0.999);
  EXPECT_NEAR(w.data()[0], -0.1 / (1 + 1e-8) - 0.1 * m / (std::sqrt(v) + 1e-8), 1e-12);
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  Tensor w({2}, {0.3, -0.7}, true);
  Adam adam;
  adam.add_param("w", w);
  for (int i = 0; i < 3; ++i) {
    w.mutable_grad()[0] = 0;
    adam.step(0.5);
  }
  EXPECT_EQ(w.data()[0], real(0.3));
  EXPECT_EQ(w.data()[1], real(-0.7));
  EXPECT_EQ(adam.step_count(), 3u);
}

TEST(Adam, DeterministicBytes) {
  auto run = [] {
    Tensor w({3}, {0.1, 0.2, 0.3}, true);
    Adam adam;
    adam.add_param("w", w);
    for (int s = 0; s < 4; ++s) {
      adam.zero_grad();
      sum(mul(mul(w, w), w)).backward();
      adam.step(0.05);
    }
    return std::vector<real>(w.data().begin(), w.data().end());
  };
  const auto a = run(), b = run();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(real)), 0);
}

TEST(Adam, SecondMomentNonNegative) {
  Tensor w({4}, {1, -2, 3, -4}, true);
  Adam adam;
  adam.add_param("w", w);
  for (int s = 0; s < 5; ++s) {
    adam.zero_grad();
    sum(mul(w, Tensor({4}, {-1, 2, -3, 4}))).backward();
    adam.step(0.1);
  }
  for (real v : adam.second_moment(0)) EXPECT_GE(v, 0);
}

TEST(LrSchedule, SpecExamples) {
  LrSchedule s(1e-2, 50, 100);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 25), 5e-3);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 50), 1e-2);
  EXPECT_NEAR(schedule_lr(s, 75), 5e-3, 1e-17);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor w({2}, {1.0, 1.0}, true);
  Adam adam;
  adam.add_param("proj.w", w);
  w.mutable_grad()[1] = std::numeric_limits<real>::quiet_NaN();
  try {
    adam.step(0.1);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("proj.w"), std::string::npos);
  }
  EXPECT_EQ(w.data()[0], 1.0);
}

TEST(Adam, DuplicateNameRejected) {
  Adam adam;
  adam.add_param("w", Tensor::zeros({1}, true));
  EXPECT_THROW(adam.add_param("w", Tensor::zeros({1}, true)), ConfigError);
}

TEST(Adam, ClipGradNorm) {
  Tensor a({2}, {0, 0}, true), b({1}, {0}, true);
  Adam adam;
  adam.add_param("a", a);
  adam.add_param("b", b);
  a.mutable_grad()[0] = 3;
  a.mutable_grad()[1] = 0;
  b.mutable_grad()[0] = 4;
  EXPECT_DOUBLE_EQ(adam.clip_grad_norm(1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-12);
}

}  // namespace
}  // namespace stitch
