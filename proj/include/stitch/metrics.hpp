/*
 * Copyright 2026 The stitchkit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stitch/errors.hpp"

namespace stitch {

/// Item indices sorted by value, descending; ties by lower index.
inline std::vector<std::size_t> order_by_metric(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return idx;
}

/// NDCG@k of a candidate ordering against reference gains. Gains are the
/// raw reference values (linear); position i (1-based) is discounted by
/// log2(i + 1). An all-zero ideal DCG scores 1.
inline double ndcg_at_k(std::span<const std::size_t> candidate_order,
                        std::span<const double> reference, std::size_t k) {
  const std::size_t n = reference.size();
  if (k == 0) throw ArgumentError("ndcg_at_k: k must be positive");
  if (k > n) throw ArgumentError("ndcg_at_k: k exceeds the number of items");
  if (candidate_order.size() != n) throw DimensionError("ndcg_at_k: order does not cover every item");
  std::vector<bool> seen(n, false);
  for (auto i : candidate_order) {
    if (i >= n || seen[i]) throw ArgumentError("ndcg_at_k: order is not a permutation");
    seen[i] = true;
  }
  for (double g : reference)
    if (!(g >= 0.0)) throw ArgumentError("ndcg_at_k: gains must be finite and non-negative");
  std::vector<double> ideal(reference.begin(), reference.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double disc = std::log2(double(i) + 2.0);
    dcg += reference[candidate_order[i]] / disc;
    idcg += ideal[i] / disc;
  }
  return idcg == 0.0 ? 1.0 : dcg / idcg;
}

/// NDCG@k with the candidate ordering induced by candidate metrics.
inline double ndcg_at_k(std::span<const double> candidate, std::span<const double> reference,
                        std::size_t k) {
  if (candidate.size() != reference.size()) throw DimensionError("ndcg_at_k: sizes differ");
  const auto order = order_by_metric(candidate);
  return ndcg_at_k(std::span<const std::size_t>(order), reference, k);
}

/// 1-based ranks by value descending; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const auto order = order_by_metric(values);
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (double(i + 1) + double(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw UndefinedCorrelationError("correlation undefined: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

/// Spearman's rho: Pearson correlation of average-tie ranks.
inline double spearman_rho(std::span<const double> candidate, std::span<const double> reference) {
  if (candidate.size() != reference.size()) throw DimensionError("spearman_rho: sizes differ");
  if (candidate.size() < 2) throw ArgumentError("spearman_rho needs at least 2 items");
  const auto rc = average_ranks(candidate), rr = average_ranks(reference);
  return pearson(rc, rr);
}

/// Default NDCG cut-offs for a zoo of `num_pairs` pairs.
inline std::vector<std::size_t> default_ndcg_ks(std::size_t num_pairs) {
  if (num_pairs >= 27) return {5, 7, 10};
  if (num_pairs >= 9) return {5, 7, 9};
  std::vector<std::size_t> ks;
  for (std::size_t k = 1; k <= num_pairs; ++k) ks.push_back(k);
  return ks;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

struct ReportKey {
  std::string task;
  std::string dataset;
  std::string connector;
};

struct DeltaRow {
  ReportKey key;
  std::string baseline;
  double hyma = 0.0;
  double baseline_metric = 0.0;
  double delta = 0.0;  // hyma - baseline
};

/// Signed gain of the `reference` strategy's winner over every other
/// strategy's winner.
inline std::vector<DeltaRow> delta_table(const ReportKey& key,
                                         const std::map<std::string, double>& winners,
                                         const std::string& reference = "hyma") {
  auto it = winners.find(reference);
  if (it == winners.end()) throw ArgumentError("delta_table: no '" + reference + "' entry");
  std::vector<DeltaRow> rows;
  for (const auto& [name, metric] : winners) {
    if (name == reference) continue;
    rows.push_back({key, name, it->second, metric, it->second - metric});
  }
  return rows;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One CSV row per (task, dataset, connector, metric) measurement.
struct CsvRow {
  ReportKey key;
  std::string metric;  // e.g. "delta:grid", "ndcg@5", "spearman", "flops:hyma"
  double value = 0.0;
};

inline constexpr const char* kCsvHeader = "task,dataset,connector,metric,value";

inline void write_csv(std::ostream& out, const std::vector<CsvRow>& rows) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows)
    out << csv_field(r.key.task) << ',' << csv_field(r.key.dataset) << ','
        << csv_field(r.key.connector) << ',' << csv_field(r.metric) << ','
        << format_number(r.value) << '\n';
}

inline std::vector<CsvRow> to_csv_rows(const std::vector<DeltaRow>& deltas) {
  std::vector<CsvRow> rows;
  for (const auto& d : deltas) rows.push_back({d.key, "delta:" + d.baseline, d.delta});
  return rows;
}

struct EfficiencyRatios {
  std::uint64_t hyma_flops = 0;
  std::uint64_t grid_flops = 0;
  std::uint64_t best_guess_flops = 0;
  double grid_over_hyma = 0.0;
  double best_guess_over_hyma = 0.0;
};

inline EfficiencyRatios efficiency_ratios(std::uint64_t hyma, std::uint64_t grid,
                                          std::uint64_t best_guess) {
  if (hyma == 0) throw ArgumentError("efficiency ratios need a non-zero HYMA bill");
  return {hyma, grid, best_guess, double(grid) / double(hyma), double(best_guess) / double(hyma)};
}

}  // namespace stitch
