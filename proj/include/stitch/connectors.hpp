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

// Connector shapes and the canonical flat parameter layout.
//
// A connector maps a modality-B embedding (width in_dim) into modality-A
// space (width out_dim). theta stores, for layer 0, 1, ...: the weight
// matrix (rows = fan-out, cols = fan-in) row-major, then the bias of
// length rows. Hidden layers use GELU.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "stitch/errors.hpp"
#include "stitch/random.hpp"
#include "stitch/tensor.hpp"

namespace stitch {

enum class ConnectorKind { Linear, Mlp1, Mlp2 };

inline constexpr std::size_t kConnectorHidden = 1024;

inline std::string_view to_string(ConnectorKind k) {
  switch (k) {
    case ConnectorKind::Linear: return "linear";
    case ConnectorKind::Mlp1: return "mlp1";
    case ConnectorKind::Mlp2: return "mlp2";
  }
  return "?";
}

inline ConnectorKind parse_connector_kind(std::string_view s) {
  if (s == "linear") return ConnectorKind::Linear;
  if (s == "mlp1") return ConnectorKind::Mlp1;
  if (s == "mlp2") return ConnectorKind::Mlp2;
  throw ConfigError("unknown connector kind '" + std::string(s) + "'");
}

/// Number of hidden layers: 0 for Linear.
inline std::size_t connector_depth(ConnectorKind k) {
  return k == ConnectorKind::Linear ? 0 : k == ConnectorKind::Mlp1 ? 1 : 2;
}

struct LayerShape {
  std::size_t rows = 0;  // fan-out
  std::size_t cols = 0;  // fan-in
  std::size_t block() const { return rows * cols + rows; }
  bool operator==(const LayerShape&) const = default;
};

struct ConnectorLayout {
  ConnectorKind kind = ConnectorKind::Linear;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t hidden = kConnectorHidden;
  std::vector<LayerShape> layers;

  std::size_t total_params() const {
    std::size_t t = 0;
    for (const auto& l : layers) t += l.block();
    return t;
  }
  std::size_t max_layer_size() const {
    std::size_t m = 0;
    for (const auto& l : layers) m = std::max(m, l.block());
    return m;
  }
  /// Offset of layer j's block inside theta.
  std::size_t offset(std::size_t j) const {
    std::size_t o = 0;
    for (std::size_t i = 0; i < j; ++i) o += layers.at(i).block();
    return o;
  }
  bool operator==(const ConnectorLayout&) const = default;
};

inline ConnectorLayout make_layout(ConnectorKind kind, std::size_t in_dim,
                                   std::size_t out_dim,
                                   std::size_t hidden = kConnectorHidden) {
  if (in_dim == 0 || out_dim == 0 || hidden == 0)
    throw ConfigError("connector dims must be positive");
  ConnectorLayout l{kind, in_dim, out_dim, hidden, {}};
  switch (kind) {
    case ConnectorKind::Linear:
      l.layers = {{out_dim, in_dim}};
      break;
    case ConnectorKind::Mlp1:
      l.layers = {{hidden, in_dim}, {out_dim, hidden}};
      break;
    case ConnectorKind::Mlp2:
      l.layers = {{hidden, in_dim}, {hidden, hidden}, {out_dim, hidden}};
      break;
  }
  return l;
}

struct LayerValues {
  std::vector<real> weight;  // rows x cols, row-major
  std::vector<real> bias;    // rows
};

inline std::vector<real> flatten(const ConnectorLayout& layout,
                                 const std::vector<LayerValues>& layers) {
  if (layers.size() != layout.layers.size())
    throw DimensionError("layer count does not match layout");
  std::vector<real> theta;
  theta.reserve(layout.total_params());
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const auto& s = layout.layers[j];
    if (layers[j].weight.size() != s.rows * s.cols || layers[j].bias.size() != s.rows)
      throw DimensionError("layer " + std::to_string(j) + " does not match its shape");
    theta.insert(theta.end(), layers[j].weight.begin(), layers[j].weight.end());
    theta.insert(theta.end(), layers[j].bias.begin(), layers[j].bias.end());
  }
  return theta;
}

inline std::vector<LayerValues> unflatten(const ConnectorLayout& layout,
                                          std::span<const real> theta) {
  if (theta.size() != layout.total_params())
    throw DimensionError("theta has " + std::to_string(theta.size()) +
                         " entries, layout needs " + std::to_string(layout.total_params()));
  std::vector<LayerValues> out;
  std::size_t o = 0;
  for (const auto& s : layout.layers) {
    LayerValues lv;
    lv.weight.assign(theta.begin() + o, theta.begin() + o + s.rows * s.cols);
    o += s.rows * s.cols;
    lv.bias.assign(theta.begin() + o, theta.begin() + o + s.rows);
    o += s.rows;
    out.push_back(std::move(lv));
  }
  return out;
}

struct ConnectorParams {
  ConnectorLayout layout;
  Tensor theta;  // 1-D, length layout.total_params()
};

/// x * W^T + b for one layer whose block starts at `offset` in theta.
inline Tensor affine_from_theta(const Tensor& theta, std::size_t offset,
                                const LayerShape& s, const Tensor& x) {
  const std::size_t b = x.rows();
  Tensor w = reshape(slice(theta, offset, s.rows * s.cols), {s.rows, s.cols});
  Tensor bias = reshape(slice(theta, offset + s.rows * s.cols, s.rows), {1, s.rows});
  Tensor y = matmul(x, transpose(w));
  // Row-broadcast of the bias expressed as ones(b x 1) * bias(1 x rows).
  return add(y, matmul(Tensor::filled({b, 1}, real(1)), bias));
}

inline Tensor connector_forward(const ConnectorLayout& layout, const Tensor& theta,
                                const Tensor& x) {
  if (theta.numel() != layout.total_params())
    throw DimensionError("theta length does not match the connector layout");
  if (x.ndim() != 2 || x.cols() != layout.in_dim)
    throw DimensionError("connector expects input width " + std::to_string(layout.in_dim) +
                         ", got " + shape_str(x.shape()));
  Tensor h = x;
  std::size_t offset = 0;
  for (std::size_t j = 0; j < layout.layers.size(); ++j) {
    const auto& s = layout.layers[j];
    h = affine_from_theta(theta, offset, s, h);
    offset += s.block();
    if (j + 1 < layout.layers.size()) h = gelu(h);
  }
  return h;
}

inline Tensor connector_forward(const ConnectorParams& p, const Tensor& x) {
  return connector_forward(p.layout, p.theta, x);
}

/// Fan-in scaled initialization: W ~ N(0, 1/cols), b = 0.
inline std::vector<real> init_connector_theta(const ConnectorLayout& layout, Rng& rng) {
  std::vector<LayerValues> layers;
  for (const auto& s : layout.layers) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(s.cols)));
    LayerValues lv;
    lv.weight.resize(s.rows * s.cols);
    for (auto& w : lv.weight) w = static_cast<real>(normal(rng));
    lv.bias.assign(s.rows, real(0));
    layers.push_back(std::move(lv));
  }
  return flatten(layout, layers);
}

// ---------------------------------------------------------------------------
// FLOPs model. Conventions: 2 FLOPs per multiply-accumulate, backward costs
// twice the forward, bias adds and elementwise ops are not counted.
// ---------------------------------------------------------------------------

using Flops = std::uint64_t;

inline Flops flops_per_forward(const ConnectorLayout& layout, std::uint64_t batch) {
  Flops per_row = 0;
  for (const auto& s : layout.layers) per_row += 2 * Flops(s.rows) * s.cols;
  return batch * per_row;
}

/// InfoNCE similarity matrix (b x b x D_A MACs), forward plus backward.
inline Flops similarity_flops(std::uint64_t batch, std::size_t out_dim) {
  return 3 * 2 * batch * batch * Flops(out_dim);
}

/// Connector forward+backward plus the similarity term. Encoder cost is
/// accounted separately by encoder_embed_flops.
inline Flops flops_per_train_step(const ConnectorLayout& layout, std::uint64_t batch) {
  if (batch == 0) throw ArgumentError("batch must be at least 1");
  return 3 * flops_per_forward(layout, batch) + similarity_flops(batch, layout.out_dim);
}

/// Frozen encoders run forward only: 2 FLOPs per parameter per sample each.
inline Flops encoder_embed_flops(std::uint64_t param_count_a, std::uint64_t param_count_b,
                                 std::uint64_t batch) {
  return 2 * (param_count_a + param_count_b) * batch;
}

}  // namespace stitch
