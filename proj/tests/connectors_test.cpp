// Copyright 2026 The stitchkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "stitch/connectors.hpp"
#include "support/gradcheck.hpp"

namespace stitch {
namespace {

double gelu_ref(double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); }

TEST(Layout, ParameterCounts) {
  EXPECT_EQ(make_layout(ConnectorKind::Linear, 4, 3).total_params(), 15u);
  EXPECT_EQ(make_layout(ConnectorKind::Mlp1, 384, 384).total_params(),
            384u * 1024 + 1024 + 1024u * 384 + 384);
  const auto l2 = make_layout(ConnectorKind::Mlp2, 8, 8);
  EXPECT_EQ(l2.max_layer_size(), 1049600u);
  EXPECT_EQ(l2.layers.size(), 3u);
  EXPECT_EQ(make_layout(ConnectorKind::Mlp1, 5, 6).layers,
            (std::vector<LayerShape>{{1024, 5}, {6, 1024}}));
  EXPECT_THROW(make_layout(ConnectorKind::Linear, 0, 3), ConfigError);
}

TEST(Layout, OffsetsAccumulateBlocks) {
  const auto l = make_layout(ConnectorKind::Mlp1, 3, 2, 4);
  EXPECT_EQ(l.offset(0), 0u);
  EXPECT_EQ(l.offset(1), 16u);
  EXPECT_EQ(l.total_params(), 16u + 10u);
}

TEST(Layout, KindNames) {
  for (auto k : {ConnectorKind::Linear, ConnectorKind::Mlp1, ConnectorKind::Mlp2})
    EXPECT_EQ(parse_connector_kind(to_string(k)), k);
  EXPECT_THROW(parse_connector_kind("mlp3"), ConfigError);
}

TEST(Flatten, RoundTripRandomLayouts) {
  Rng rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 7);
  for (int trial = 0; trial < 50; ++trial) {
    auto kind = static_cast<ConnectorKind>(trial % 3);
    auto layout = make_layout(kind, dim(rng), dim(rng), dim(rng));
    std::vector<LayerValues> layers;
    std::normal_distribution<double> normal;
    for (const auto& s : layout.layers) {
      LayerValues v;
      for (std::size_t i = 0; i < s.rows * s.cols; ++i) v.weight.push_back(normal(rng));
      for (std::size_t i = 0; i < s.rows; ++i) v.bias.push_back(normal(rng));
      layers.push_back(v);
    }
    auto theta = flatten(layout, layers);
    ASSERT_EQ(theta.size(), layout.total_params());
    auto back = unflatten(layout, theta);
    for (std::size_t j = 0; j < layers.size(); ++j) {
      EXPECT_EQ(back[j].weight, layers[j].weight);
      EXPECT_EQ(back[j].bias, layers[j].bias);
    }
    // Layer 0 weights come first, then layer 0 bias.
    EXPECT_EQ(theta[0], layers[0].weight[0]);
    EXPECT_EQ(theta[layout.layers[0].rows * layout.layers[0].cols], layers[0].bias[0]);
  }
}

TEST(Forward, IdentityAndZero) {
  const auto l = make_layout(ConnectorKind::Linear, 3, 3);
  Tensor theta({12}, flatten(l, {{{1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}}}));
  Tensor x({2, 3}, {1, -2, 3, 0.5, 4, -6});
  Tensor y = connector_forward(l, theta, x);
  EXPECT_TRUE(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  const auto m = make_layout(ConnectorKind::Mlp2, 3, 2, 5);
  Tensor zeros = Tensor::zeros({m.total_params()});
  Tensor out = connector_forward(m, zeros, x);
  for (real v : out.data()) EXPECT_EQ(v, 0);
}

TEST(Forward, HandComputedMlp1) {
  const auto l = make_layout(ConnectorKind::Mlp1, 2, 1, 2);
  std::vector<real> w1 = {0.5, -1.0, 2.0, 0.25}, b1 = {0.1, -0.2}, w2 = {1.5, -0.5}, b2 = {0.3};
  Tensor theta({l.total_params()}, flatten(l, {{w1, b1}, {w2, b2}}));
  Tensor x({1, 2}, {0.7, -0.4});
  const double h0 = gelu_ref(0.5 * 0.7 - 1.0 * -0.4 + 0.1);
  const double h1 = gelu_ref(2.0 * 0.7 + 0.25 * -0.4 - 0.2);
  const double want = 1.5 * h0 - 0.5 * h1 + 0.3;
  EXPECT_NEAR(connector_forward(l, theta, x).item(), want, 1e-12);
}

TEST(Forward, WidthMismatch) {
  const auto l = make_layout(ConnectorKind::Linear, 3, 2);
  EXPECT_THROW(connector_forward(l, Tensor::zeros({8}), Tensor::zeros({1, 4})), DimensionError);
  EXPECT_THROW(connector_forward(l, Tensor::zeros({7}), Tensor::zeros({1, 3})), DimensionError);
}

TEST(Forward, GradientsIntoThetaAndInput) {
  const auto l = make_layout(ConnectorKind::Mlp2, 3, 2, 4);
  auto theta = testing::random_leaf({l.total_params()}, 1);
  auto x = testing::random_leaf({3, 3}, 2);
  auto w = testing::random_leaf({3, 2}, 3);
  EXPECT_LT(testing::max_grad_rel_err({theta, x},
                                      [&] { return sum(mul(connector_forward(l, theta, x), w)); }),
            1e-4);
}

TEST(Init, FanInScaledAndZeroBias) {
  const auto l = make_layout(ConnectorKind::Linear, 400, 50);
  Rng rng(1);
  auto theta = init_connector_theta(l, rng);
  double sq = 0;
  for (std::size_t i = 0; i < 400 * 50; ++i) sq += theta[i] * theta[i];
  EXPECT_NEAR(std::sqrt(sq / (400 * 50)), 1 / std::sqrt(400.0), 0.002);
  for (std::size_t i = 400 * 50; i < theta.size(); ++i) EXPECT_EQ(theta[i], 0);
}

TEST(Flops, Examples) {
  EXPECT_EQ(flops_per_forward(make_layout(ConnectorKind::Linear, 4, 3), 1), 24u);
  EXPECT_EQ(flops_per_forward(make_layout(ConnectorKind::Mlp1, 4, 4), 2),
            2u * (2 * 1024 * 4 + 2 * 4 * 1024));
  const auto l = make_layout(ConnectorKind::Linear, 4, 3);
  EXPECT_EQ(flops_per_forward(l, 4), 2 * flops_per_forward(l, 2));
  EXPECT_EQ(similarity_flops(4, 3), 4 * similarity_flops(2, 3));
  EXPECT_EQ(flops_per_train_step(l, 2), 3 * 48u + 6u * 4 * 3);
  EXPECT_EQ(encoder_embed_flops(10, 20, 3), 180u);
  EXPECT_THROW(flops_per_train_step(l, 0), ArgumentError);
}

TEST(Flops, StrictlyMonotone) {
  for (std::uint64_t b = 1; b < 20; ++b) {
    auto l = make_layout(ConnectorKind::Mlp1, 8, 8, 16);
    EXPECT_LT(flops_per_train_step(l, b), flops_per_train_step(l, b + 1));
    EXPECT_LT(flops_per_train_step(make_layout(ConnectorKind::Mlp1, 8, 8 + b, 16), 4),
              flops_per_train_step(make_layout(ConnectorKind::Mlp1, 8, 9 + b, 16), 4));
    EXPECT_LT(flops_per_train_step(make_layout(ConnectorKind::Mlp1, 8 + b, 8, 16), 4),
              flops_per_train_step(make_layout(ConnectorKind::Mlp1, 9 + b, 8, 16), 4));
  }
  EXPECT_LT(flops_per_forward(make_layout(ConnectorKind::Linear, 8, 8, 16), 2),
            flops_per_forward(make_layout(ConnectorKind::Mlp1, 8, 8, 16), 2));
  EXPECT_LT(flops_per_forward(make_layout(ConnectorKind::Mlp1, 8, 8, 16), 2),
            flops_per_forward(make_layout(ConnectorKind::Mlp2, 8, 8, 16), 2));
}

}  // namespace
}  // namespace stitch
