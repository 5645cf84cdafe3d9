// Copyright 2026 The stitchkit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "stitch/embeddings.hpp"

namespace stitch::testing {

/// Synthetic zoo with one encoder per quality value on each side; latent
/// width 4, encoder widths `dim_a` / `dim_b`.
inline SyntheticZoo small_zoo(const std::vector<double>& qa, const std::vector<double>& qb,
                              std::size_t samples, std::uint64_t seed, std::size_t dim_a = 6,
                              std::size_t dim_b = 5, std::size_t latent = 4) {
  std::vector<SyntheticEncoderConfig> a, b;
  for (std::size_t i = 0; i < qa.size(); ++i)
    a.push_back({"img" + std::to_string(i), {latent, dim_a, qa[i], seed * 100 + i, Nonlinearity::None},
                 double(qa.size() - i), std::nullopt});
  for (std::size_t i = 0; i < qb.size(); ++i)
    b.push_back({"txt" + std::to_string(i), {latent, dim_b, qb[i], seed * 100 + 50 + i, Nonlinearity::None},
                 double(qb.size() - i), std::nullopt});
  return generate_synthetic_zoo(a, b, samples, seed);
}

}  // namespace stitch::testing
