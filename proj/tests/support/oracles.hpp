// Copyright 2026 The stitchkit Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Brute-force reference implementations, written without the library's
// helpers: selection sort for orders, pairwise counting for ranks.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace stitch::testing {

/// Indices by value descending, ties to the lower index.
inline std::vector<std::size_t> brute_order(const std::vector<double>& v) {
  std::vector<std::size_t> out;
  std::vector<bool> used(v.size(), false);
  for (std::size_t r = 0; r < v.size(); ++r) {
    std::size_t best = v.size();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!used[i] && (best == v.size() || v[i] > v[best])) best = i;
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

inline double brute_ndcg(const std::vector<double>& cand, const std::vector<double>& ref, std::size_t k) {
  auto order = brute_order(cand);
  auto ideal_order = brute_order(ref);
  double dcg = 0, idcg = 0;
  for (std::size_t i = 0; i < k; ++i) {
    dcg += ref[order[i]] / std::log2(double(i) + 2.0);
    idcg += ref[ideal_order[i]] / std::log2(double(i) + 2.0);
  }
  return idcg == 0 ? 1.0 : dcg / idcg;
}

/// Average-tie ranks by counting, 1 = largest.
inline std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t greater = 0, equal = 0;
    for (double x : v) {
      greater += x > v[i];
      equal += x == v[i];
    }
    r[i] = double(greater) + (double(equal) + 1.0) / 2.0;
  }
  return r;
}

inline double brute_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto x = brute_ranks(a), y = brute_ranks(b);
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline bool all_equal(const std::vector<double>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

/// Position of `gold` after a stable sort of candidates by score, descending.
template <class T>
std::size_t sorted_rank(std::span<const T> scores, std::size_t gold) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return std::size_t(std::find(idx.begin(), idx.end(), gold) - idx.begin());
}

/// Median by sorting a copy; mean of the middle pair on an even count.
inline double brute_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace stitch::testing
