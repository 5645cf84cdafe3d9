// Copyright 2026 The stitchkit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "stitch/tensor.hpp"

namespace stitch::testing {

inline Tensor random_leaf(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<real>(u(rng));
  return Tensor(std::move(shape), std::move(v), true);
}

/// Largest |analytic - numeric| / (|numeric| + 1e-8) over every entry of
/// every leaf, numeric from central differences with step h.
inline double max_grad_rel_err(const std::vector<Tensor>& leaves,
                               const std::function<Tensor()>& f, double h = 1e-5) {
  for (auto leaf : leaves) leaf.zero_grad();
  f().backward();
  double worst = 0.0;
  for (auto leaf : leaves) {
    std::vector<real> analytic(leaf.numel(), real(0));
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto data = leaf.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const real saved = data[i];
      data[i] = saved + h;
      const double up = f().item();
      data[i] = saved - h;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8));
    }
  }
  return worst;
}

}  // namespace stitch::testing
