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

// Connector-generating hypernetwork.
//
// Pair k is identified by a conditioning vector c_k (a learnable codebook
// row, or a learnt compression of the pair's batch-averaged anchor
// features). For every connector layer j the generator MLP maps
// c_k + e_j to one fixed-size slab; layer j's weights-then-bias block is
// the prefix of that slab, and the blocks concatenate into theta_k.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "stitch/connectors.hpp"
#include "stitch/errors.hpp"
#include "stitch/optim.hpp"
#include "stitch/random.hpp"
#include "stitch/tensor.hpp"

namespace stitch {

enum class ConditioningMode { Codebook, EncoderCompression };

struct HyperNetConfig {
  std::size_t cond_dim = 32;
  std::vector<std::size_t> generator_hidden{64};
  std::size_t num_pairs = 0;
  std::size_t max_layers = 0;
  std::size_t slab_size = 0;
  ConditioningMode mode = ConditioningMode::Codebook;
  std::size_t feature_dim = 0;  // widest anchor embedding; compression mode only
};

/// Derives the pair count, layer count and slab size from the per-pair
/// connector layouts. Fails here, never at step time, if a layout cannot
/// be served.
inline HyperNetConfig make_hypernet_config(const std::vector<ConnectorLayout>& layouts,
                                           std::size_t cond_dim,
                                           std::vector<std::size_t> generator_hidden,
                                           ConditioningMode mode = ConditioningMode::Codebook) {
  if (layouts.empty()) throw ConfigError("hypernetwork needs at least one pair");
  if (cond_dim == 0) throw ConfigError("cond_dim must be positive");
  HyperNetConfig c;
  c.cond_dim = cond_dim;
  c.generator_hidden = std::move(generator_hidden);
  c.num_pairs = layouts.size();
  c.mode = mode;
  for (const auto& l : layouts) {
    c.max_layers = std::max(c.max_layers, l.layers.size());
    c.slab_size = std::max(c.slab_size, l.max_layer_size());
    c.feature_dim = std::max(c.feature_dim, l.out_dim);
  }
  return c;
}

inline nlohmann::ordered_json to_json(const HyperNetConfig& c) {
  nlohmann::ordered_json j;
  j["cond_dim"] = c.cond_dim;
  j["generator_hidden"] = c.generator_hidden;
  j["num_pairs"] = c.num_pairs;
  j["max_layers"] = c.max_layers;
  j["slab_size"] = c.slab_size;
  j["conditioning"] = c.mode == ConditioningMode::Codebook ? "codebook" : "encoder-compression";
  j["feature_dim"] = c.feature_dim;
  return j;
}

struct DenseLayer {
  Tensor w;  // fan_in x fan_out
  Tensor b;  // 1 x fan_out
};

inline Tensor dense(const Tensor& x, const DenseLayer& layer) {
  Tensor y = matmul(x, layer.w);
  return add(y, matmul(Tensor::filled({x.rows(), 1}, real(1)), layer.b));
}

class HyperNetState {
 public:
  HyperNetConfig config;
  Tensor codebook;    // num_pairs x cond_dim
  Tensor layer_emb;   // max_layers x cond_dim
  std::vector<DenseLayer> generator;
  std::optional<DenseLayer> compressor;  // feature_dim -> cond_dim

  /// Every learnable leaf, in a fixed order, with its checkpoint name.
  std::vector<NamedTensor> leaves() const {
    std::vector<NamedTensor> out;
    if (config.mode == ConditioningMode::Codebook) out.push_back({"codebook", codebook});
    out.push_back({"layer_emb", layer_emb});
    for (std::size_t i = 0; i < generator.size(); ++i) {
      out.push_back({"gen.layer" + std::to_string(i) + ".w", generator[i].w});
      out.push_back({"gen.layer" + std::to_string(i) + ".b", generator[i].b});
    }
    if (compressor) {
      out.push_back({"compressor.w", compressor->w});
      out.push_back({"compressor.b", compressor->b});
    }
    return out;
  }

  /// Number of generator multiply-accumulates per conditioning row.
  std::uint64_t generator_macs_per_row() const {
    std::uint64_t macs = 0;
    for (const auto& l : generator) macs += std::uint64_t(l.w.rows()) * l.w.cols();
    return macs;
  }
};

namespace detail {

inline Tensor normal_leaf(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<real>(stddev > 0.0 ? normal(rng) : 0.0);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor hidden_forward(const HyperNetState& s, const Tensor& cond) {
  Tensor h = cond;
  for (std::size_t i = 0; i < s.config.generator_hidden.size(); ++i)
    h = relu(dense(h, s.generator[i]));
  return h;
}

// Column-mean of the anchor batch, zero-padded to feature_dim. Constant:
// anchor encoders are frozen.
inline Tensor batch_feature_mean(const Tensor& features, std::size_t feature_dim) {
  if (features.ndim() != 2 || features.cols() > feature_dim)
    throw DimensionError("anchor features wider than the compressor input");
  std::vector<real> mean(feature_dim, real(0));
  const std::size_t r = features.rows(), c = features.cols();
  auto d = features.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += d[i * c + j];
  for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<real>(r);
  return Tensor({1, feature_dim}, std::move(mean));
}

}  // namespace detail

/// Conditioning vector c_k as a 1 x cond_dim tensor.
inline Tensor condition(const HyperNetState& s, std::size_t k,
                        const Tensor* batch_features = nullptr) {
  if (k >= s.config.num_pairs)
    throw RangeError("pair index " + std::to_string(k) + " out of range");
  if (s.config.mode == ConditioningMode::Codebook) return slice_rows(s.codebook, k, k + 1);
  if (batch_features == nullptr || !batch_features->defined())
    throw ArgumentError("encoder-compression conditioning needs batch features");
  return dense(detail::batch_feature_mean(*batch_features, s.config.feature_dim), *s.compressor);
}

/// Raw generator output for pair k: one slab per layout layer
/// (layers x slab_size).
inline Tensor generate_slabs(const HyperNetState& s, std::size_t k, std::size_t num_layers,
                             const Tensor* batch_features = nullptr) {
  if (num_layers > s.config.max_layers)
    throw ConfigError("connector has more layers than the hypernetwork serves");
  Tensor c = condition(s, k, batch_features);
  Tensor cond = add(matmul(Tensor::filled({num_layers, 1}, real(1)), c),
                    slice_rows(s.layer_emb, 0, num_layers));
  return dense(detail::hidden_forward(s, cond), s.generator.back());
}

/// Concatenation of the prefix of slab j of length block(j), for every
/// layer j of `layout`.
inline Tensor slice_layout_blocks(const Tensor& slabs, const ConnectorLayout& layout) {
  const std::size_t L = layout.layers.size();
  if (slabs.ndim() != 2 || slabs.rows() != L)
    throw DimensionError("need one slab per connector layer");
  const std::size_t slab = slabs.cols();
  std::vector<Tensor> blocks;
  blocks.reserve(L);
  for (std::size_t j = 0; j < L; ++j) {
    if (layout.layers[j].block() > slab)
      throw ConfigError("connector layer block exceeds the hypernetwork slab");
    blocks.push_back(slice(slabs, j * slab, layout.layers[j].block()));
  }
  return concat(blocks);
}

/// theta_k for `layout`, differentiable into every leaf of the state.
inline Tensor generate(const HyperNetState& s, std::size_t k, const ConnectorLayout& layout,
                       const Tensor* batch_features = nullptr) {
  if (layout.max_layer_size() > s.config.slab_size)
    throw ConfigError("connector layer block exceeds the hypernetwork slab");
  return slice_layout_blocks(generate_slabs(s, k, layout.layers.size(), batch_features), layout);
}

/// Initial state. Codebook and layer embeddings ~ N(0, 1/C); hidden
/// layers use He scaling with zero bias; the output layer has zero bias
/// and a weight scale chosen so generated connector weights start with
/// variance close to the mean fan-in variance 1/fan_in of the connectors
/// they stand in for.
inline HyperNetState init_hypernet(const HyperNetConfig& config,
                                   const std::vector<ConnectorLayout>& layouts,
                                   std::uint64_t seed) {
  if (config.cond_dim == 0) throw ConfigError("cond_dim must be positive");
  if (layouts.size() != config.num_pairs) throw ConfigError("one layout per pair required");
  auto rng = make_rng(seed, "hypernet-init");
  HyperNetState s;
  s.config = config;
  const double emb_std = 1.0 / std::sqrt(double(config.cond_dim));
  s.codebook = detail::normal_leaf({config.num_pairs, config.cond_dim}, emb_std, rng);
  s.layer_emb = detail::normal_leaf({config.max_layers, config.cond_dim}, emb_std, rng);
  if (config.mode == ConditioningMode::EncoderCompression) {
    if (config.feature_dim == 0) throw ConfigError("compression mode needs feature_dim");
    DenseLayer comp;
    comp.w = detail::normal_leaf({config.feature_dim, config.cond_dim},
                                 1.0 / std::sqrt(double(config.feature_dim)), rng);
    comp.b = Tensor::zeros({1, config.cond_dim}, true);
    s.compressor = std::move(comp);
  }
  std::size_t fan_in = config.cond_dim;
  for (std::size_t width : config.generator_hidden) {
    DenseLayer l;
    l.w = detail::normal_leaf({fan_in, width}, std::sqrt(2.0 / double(fan_in)), rng);
    l.b = Tensor::zeros({1, width}, true);
    s.generator.push_back(std::move(l));
    fan_in = width;
  }

  // Output scale: measure the hidden activations' squared norm over every
  // (pair, layer) conditioning row this state will see at step 0.
  double target = 0.0, h2 = 0.0;
  std::size_t n_target = 0, n_rows = 0;
  for (std::size_t k = 0; k < layouts.size(); ++k) {
    for (const auto& sh : layouts[k].layers) {
      target += 1.0 / double(sh.cols);
      ++n_target;
    }
    Tensor c = config.mode == ConditioningMode::Codebook
                   ? slice_rows(s.codebook, k, k + 1).detach()
                   : Tensor::zeros({1, config.cond_dim});
    const std::size_t L = layouts[k].layers.size();
    Tensor cond = add(matmul(Tensor::filled({L, 1}, real(1)), c),
                      slice_rows(s.layer_emb.detach(), 0, L));
    Tensor h = detail::hidden_forward(s, cond).detach();
    for (real v : h.data()) h2 += double(v) * v;
    n_rows += L;
  }
  target /= double(n_target);
  const double mean_h2 = h2 / double(n_rows);
  const double out_std = mean_h2 > 0.0 ? std::sqrt(target / mean_h2) : 0.0;

  DenseLayer out;
  out.w = detail::normal_leaf({fan_in, config.slab_size}, out_std, rng);
  out.b = Tensor::zeros({1, config.slab_size}, true);
  s.generator.push_back(std::move(out));
  return s;
}

}  // namespace stitch
