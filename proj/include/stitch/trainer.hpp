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
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stitch/connectors.hpp"
#include "stitch/embeddings.hpp"
#include "stitch/errors.hpp"
#include "stitch/hypernet.hpp"
#include "stitch/objectives.hpp"
#include "stitch/optim.hpp"
#include "stitch/random.hpp"
#include "stitch/tensor.hpp"

namespace stitch {

enum class TrainMode { Hypernet, DirectPair };

struct TrainConfig {
  std::size_t batch_data = 128;   // B_d
  std::size_t batch_models = 1;   // B_m
  std::size_t epochs = 10;
  double base_lr = 1e-2;
  std::uint64_t warmup_steps = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double tau = 0.07;
  bool symmetric_loss = false;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  std::uint64_t seed = 0;
  std::uint64_t eval_every = 0;  // 0: evaluate only at the end
  TrainMode mode = TrainMode::Hypernet;
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["batch_data"] = c.batch_data;
  j["batch_models"] = c.batch_models;
  j["epochs"] = c.epochs;
  j["lr"] = c.base_lr;
  j["warmup_steps"] = c.warmup_steps;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["tau"] = c.tau;
  j["symmetric_loss"] = c.symmetric_loss;
  j["clip_norm"] = c.clip_norm;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["mode"] = c.mode == TrainMode::Hypernet ? "hypernet" : "direct-pair";
  return j;
}

/// Reads the keys present in `j` over `base`.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  base.batch_data = j.value("batch_data", base.batch_data);
  base.batch_models = j.value("batch_models", base.batch_models);
  base.epochs = j.value("epochs", base.epochs);
  base.base_lr = j.value("lr", base.base_lr);
  base.warmup_steps = j.value("warmup_steps", base.warmup_steps);
  base.beta1 = j.value("beta1", base.beta1);
  base.beta2 = j.value("beta2", base.beta2);
  base.eps = j.value("eps", base.eps);
  base.tau = j.value("tau", base.tau);
  base.symmetric_loss = j.value("symmetric_loss", base.symmetric_loss);
  base.clip_norm = j.value("clip_norm", base.clip_norm);
  base.seed = j.value("seed", base.seed);
  base.eval_every = j.value("eval_every", base.eval_every);
  if (j.contains("mode")) {
    const auto m = j["mode"].get<std::string>();
    if (m != "hypernet" && m != "direct-pair") throw ConfigError("unknown train mode '" + m + "'");
    base.mode = m == "hypernet" ? TrainMode::Hypernet : TrainMode::DirectPair;
  }
  return base;
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct RunRecord {
  std::uint64_t step = 0;
  std::size_t k = 0;
  double loss = 0.0;
  double lr = 0.0;
  Flops flops_cum = 0;
  double wall_ms = 0.0;
  std::optional<double> metric;
};

/// Equality of everything except wall-clock time.
inline bool same_measurement(const RunRecord& a, const RunRecord& b) {
  return a.step == b.step && a.k == b.k && a.loss == b.loss && a.lr == b.lr &&
         a.flops_cum == b.flops_cum && a.metric == b.metric;
}

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["k"] = r.k;
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  j["flops_cum"] = r.flops_cum;
  j["wall_ms"] = r.wall_ms;
  if (r.metric) j["metric"] = *r.metric;
  return j;
}

inline void append_records(const std::filesystem::path& path, const std::vector<RunRecord>& records,
                           const std::string& strategy = {}) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  for (const auto& r : records) {
    auto j = to_json(r);
    if (!strategy.empty()) j["strategy"] = strategy;
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Pair indices for optimizer step `step`: a seeded permutation of all
/// pairs is consumed B_m at a time and redrawn once exhausted; a short
/// tail batch is emitted as-is.
inline std::vector<std::size_t> pair_sampler(std::size_t num_pairs, std::size_t batch_models,
                                             std::uint64_t seed, std::uint64_t step) {
  if (num_pairs == 0 || batch_models == 0 || batch_models > num_pairs)
    throw ConfigError("B_m must lie in [1, NM]");
  const std::uint64_t per_cycle = (num_pairs + batch_models - 1) / batch_models;
  const std::uint64_t cycle = step / per_cycle;
  const std::uint64_t pos = step % per_cycle;
  auto rng = make_rng(seed, "pair-sampler", cycle);
  auto perm = permutation(num_pairs, rng);
  const std::size_t begin = pos * batch_models;
  const std::size_t end = std::min(num_pairs, begin + batch_models);
  return {perm.begin() + begin, perm.begin() + end};
}

/// Epoch-shuffled data batches over a fixed list of training rows; a
/// short tail batch ends each epoch.
class DataSchedule {
 public:
  DataSchedule(std::vector<std::size_t> rows, std::size_t batch, std::uint64_t seed)
      : rows_(std::move(rows)), batch_(batch), seed_(seed) {
    if (rows_.empty()) throw ConfigError("no training rows");
    if (batch_ == 0 || batch_ > rows_.size())
      throw ConfigError("B_d must lie in [1, train-set size]");
  }
  std::uint64_t steps_per_epoch() const { return (rows_.size() + batch_ - 1) / batch_; }
  std::size_t batch_size(std::uint64_t step) const {
    const std::uint64_t pos = step % steps_per_epoch();
    return std::min(batch_, rows_.size() - pos * batch_);
  }
  std::vector<std::size_t> batch(std::uint64_t step) {
    const std::uint64_t epoch = step / steps_per_epoch();
    if (!cached_epoch_ || *cached_epoch_ != epoch) {
      auto rng = make_rng(seed_, "data-order", epoch);
      auto p = permutation(rows_.size(), rng);
      order_.resize(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) order_[i] = rows_[p[i]];
      cached_epoch_ = epoch;
    }
    const std::size_t begin = (step % steps_per_epoch()) * batch_;
    const std::size_t end = std::min(order_.size(), begin + batch_);
    return {order_.begin() + begin, order_.begin() + end};
  }
  const std::vector<std::size_t>& rows() const { return rows_; }

 private:
  std::vector<std::size_t> rows_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::optional<std::uint64_t> cached_epoch_;
};

/// Seeded subset of `rows` of size round(fraction * |rows|), returned in
/// the original order.
inline std::vector<std::size_t> data_subset(const std::vector<std::size_t>& rows, double fraction,
                                            std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(fraction * double(rows.size())));
  if (n == 0) throw ConfigError("data fraction selects no rows");
  if (n == rows.size()) return rows;
  auto rng = make_rng(seed, "data-subset");
  auto p = permutation(rows.size(), rng);
  std::vector<std::size_t> pick(p.begin(), p.begin() + n);
  std::sort(pick.begin(), pick.end());
  std::vector<std::size_t> out;
  for (auto i : pick) out.push_back(rows[i]);
  return out;
}

inline LrSchedule make_schedule(const TrainConfig& c, std::uint64_t total_steps) {
  return LrSchedule(c.base_lr, std::min<std::uint64_t>(c.warmup_steps, total_steps), total_steps);
}

// ---------------------------------------------------------------------------
// Checkpoint container
//   "STCK" | u32 version | u32 len + config JSON | u64 step | u64 flops_cum
//   | u64 seed | u64 adam_t | u32 n_blobs | blobs
//   blob: u32 len + name | u32 ndim | u64 dims... | f64 LE payload
// ---------------------------------------------------------------------------

struct Blob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::ordered_json config;
  std::uint64_t step = 0;
  Flops flops_cum = 0;
  std::uint64_t seed = 0;
  std::uint64_t adam_step = 0;
  std::vector<Blob> blobs;

  const Blob& blob(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return b;
    throw FormatError("checkpoint has no blob '" + name + "'", 0);
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}
  std::uint64_t u(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= std::uint64_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > b_.size()) throw FormatError("truncated checkpoint", pos_);
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string out = "STCK";
  detail::put_u32(out, 1);
  const std::string cfg = c.config.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  detail::put_u64(out, c.step);
  detail::put_u64(out, c.flops_cum);
  detail::put_u64(out, c.seed);
  detail::put_u64(out, c.adam_step);
  detail::put_u32(out, static_cast<std::uint32_t>(c.blobs.size()));
  for (const auto& b : c.blobs) {
    detail::put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    detail::put_u32(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) detail::put_u64(out, d);
    for (double v : b.values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::Reader r(bytes);
  if (r.str(4) != "STCK") throw FormatError("bad checkpoint magic", 0);
  const auto version = r.u(4);
  if (version != 1) throw UnsupportedVersionError("unsupported checkpoint version", 4);
  Checkpoint c;
  const auto cfg_len = r.u(4);
  c.config = nlohmann::ordered_json::parse(r.str(cfg_len));
  c.step = r.u(8);
  c.flops_cum = r.u(8);
  c.seed = r.u(8);
  c.adam_step = r.u(8);
  const auto n = r.u(4);
  for (std::uint64_t i = 0; i < n; ++i) {
    Blob b;
    b.name = r.str(r.u(4));
    const auto nd = r.u(4);
    for (std::uint64_t d = 0; d < nd; ++d) b.shape.push_back(r.u(8));
    b.values.resize(shape_numel(b.shape));
    for (auto& v : b.values) v = std::bit_cast<double>(r.u(8));
    c.blobs.push_back(std::move(b));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.pos());
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

namespace detail {

inline Blob to_blob(const std::string& name, const Shape& shape, std::span<const real> v) {
  return {name, shape, std::vector<double>(v.begin(), v.end())};
}

inline void from_blob(const Blob& b, std::span<real> dst) {
  if (b.values.size() != dst.size())
    throw FormatError("checkpoint blob '" + b.name + "' has the wrong size", 0);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>(b.values[i]);
}

inline void save_optimizer(const Adam& adam, Checkpoint& c) {
  c.adam_step = adam.step_count();
  const auto& ps = adam.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    c.blobs.push_back(to_blob(ps[i].name, ps[i].tensor.shape(), ps[i].tensor.data()));
    c.blobs.push_back(to_blob("adam.m." + ps[i].name, ps[i].tensor.shape(), adam.first_moment(i)));
    c.blobs.push_back(to_blob("adam.v." + ps[i].name, ps[i].tensor.shape(), adam.second_moment(i)));
  }
}

inline void restore_optimizer(Adam& adam, const Checkpoint& c) {
  adam.set_step_count(c.adam_step);
  auto ps = adam.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& b = c.blob(ps[i].name);
    if (b.shape != ps[i].tensor.shape())
      throw FormatError("checkpoint blob '" + b.name + "' has the wrong shape", 0);
    from_blob(b, ps[i].tensor.mutable_data());
    from_blob(c.blob("adam.m." + ps[i].name), adam.first_moment(i));
    from_blob(c.blob("adam.v." + ps[i].name), adam.second_moment(i));
  }
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameter sources for the joint trainer
// ---------------------------------------------------------------------------

/// Connector parameters produced by the hypernetwork.
class HypernetSource {
 public:
  HypernetSource(HyperNetState state, std::vector<ConnectorLayout> layouts)
      : state_(std::move(state)), layouts_(std::move(layouts)) {
    if (layouts_.size() != state_.config.num_pairs) throw ConfigError("one layout per pair required");
    for (const auto& l : layouts_) {
      if (l.max_layer_size() > state_.config.slab_size)
        throw ConfigError("connector layer block exceeds the hypernetwork slab");
      if (l.layers.size() > state_.config.max_layers)
        throw ConfigError("connector has more layers than the hypernetwork serves");
    }
  }
  std::vector<NamedTensor> leaves() const { return state_.leaves(); }
  const ConnectorLayout& layout(std::size_t k) const { return layouts_.at(k); }
  std::size_t num_pairs() const { return layouts_.size(); }
  Tensor theta(std::size_t k, const Tensor& anchor_features) const {
    return generate(state_, k, layouts_[k], &anchor_features);
  }
  /// Generator (and compressor) forward+backward cost for one pair.
  Flops generation_flops(std::size_t k) const {
    Flops f = 3 * 2 * Flops(layouts_[k].layers.size()) * state_.generator_macs_per_row();
    if (state_.config.mode == ConditioningMode::EncoderCompression)
      f += 3 * 2 * Flops(state_.config.feature_dim) * state_.config.cond_dim;
    return f;
  }
  const HyperNetState& state() const { return state_; }

 private:
  HyperNetState state_;
  std::vector<ConnectorLayout> layouts_;
};

/// One directly-optimized theta per pair; the joint trainer's reduction to
/// plain connector training.
class DirectSource {
 public:
  DirectSource(std::vector<ConnectorLayout> layouts, std::uint64_t seed)
      : layouts_(std::move(layouts)) {
    for (std::size_t k = 0; k < layouts_.size(); ++k) {
      auto rng = make_rng(seed, "connector-init", k);
      thetas_.push_back(Tensor({layouts_[k].total_params()},
                               init_connector_theta(layouts_[k], rng), true));
    }
  }
  std::vector<NamedTensor> leaves() const {
    std::vector<NamedTensor> out;
    for (std::size_t k = 0; k < thetas_.size(); ++k)
      out.push_back({"theta.k" + std::to_string(k), thetas_[k]});
    return out;
  }
  const ConnectorLayout& layout(std::size_t k) const { return layouts_.at(k); }
  std::size_t num_pairs() const { return layouts_.size(); }
  Tensor theta(std::size_t k, const Tensor&) const { return thetas_.at(k); }
  Flops generation_flops(std::size_t) const { return 0; }

 private:
  std::vector<ConnectorLayout> layouts_;
  std::vector<Tensor> thetas_;
};

// ---------------------------------------------------------------------------
// Joint trainer: B_d data rows x B_m pairs per optimizer step
// ---------------------------------------------------------------------------

template <class Source>
class JointTrainer {
 public:
  JointTrainer(const ModelZoo& zoo, const PairedEmbeddingDataset& data, Source source,
               TrainConfig config, std::vector<std::size_t> train_rows = {})
      : zoo_(zoo),
        data_(data),
        source_(std::move(source)),
        config_(config),
        batches_(train_rows.empty() ? data.train : std::move(train_rows), config.batch_data,
                 derive_seed(config.seed, "data")),
        adam_(AdamConfig{config.beta1, config.beta2, config.eps}) {
    if (source_.num_pairs() != zoo.num_pairs()) throw ConfigError("source does not cover the zoo");
    if (config_.batch_models == 0 || config_.batch_models > zoo.num_pairs())
      throw ConfigError("B_m must lie in [1, NM]");
    for (auto& leaf : source_.leaves()) adam_.add_param(leaf.name, leaf.tensor);
    total_steps_ = config_.epochs * batches_.steps_per_epoch();
    schedule_ = make_schedule(config_, total_steps_);
  }

  std::uint64_t step_index() const { return step_; }
  std::uint64_t total_steps() const { return total_steps_; }
  bool done() const { return step_ >= total_steps_; }
  Flops flops() const { return flops_; }
  const std::vector<RunRecord>& records() const { return records_; }
  const Source& source() const { return source_; }
  const TrainConfig& config() const { return config_; }
  const DataSchedule& batches() const { return batches_; }

  std::vector<std::size_t> pairs_for(std::uint64_t step) const {
    return pair_sampler(zoo_.num_pairs(), config_.batch_models, derive_seed(config_.seed, "pairs"),
                        step);
  }

  /// FLOPs that step `step` will add to the ledger.
  Flops step_flops(std::uint64_t step) const {
    const std::uint64_t b = batches_.batch_size(step);
    Flops f = 0;
    for (auto k : pairs_for(step)) f += pair_step_flops(k, b);
    return f;
  }

  /// Per-pair InfoNCE losses on the batch of `step` under the current
  /// parameters, without updating anything.
  std::vector<double> probe_losses(std::uint64_t step) {
    auto rows = batches_.batch(step);
    std::vector<double> out;
    for (auto k : pairs_for(step)) out.push_back(pair_loss(k, rows).item());
    return out;
  }

  void step() {
    if (done()) throw RangeError("training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = batches_.batch(step_);
    const auto pairs = pairs_for(step_);
    const double lr = schedule_.lr(step_);
    adam_.zero_grad();
    std::vector<Tensor> losses;
    for (auto k : pairs) {
      losses.push_back(pair_loss(k, rows));
      const double v = losses.back().item();
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "training diverged at step " << step_ << ", pair " << k << " (" << zoo_.pair_name(k)
           << "), lr " << lr << ", loss " << v;
        throw DivergenceError(os.str());
      }
    }
    Tensor total = scale(sum(concat(reshape_all(losses))), static_cast<real>(1.0 / double(pairs.size())));
    total.backward();
    if (config_.clip_norm > 0.0) adam_.clip_grad_norm(config_.clip_norm);
    adam_.step(lr);
    const double ms = detail::elapsed_ms(t0);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      flops_ += pair_step_flops(pairs[i], rows.size());
      records_.push_back({step_, pairs[i], static_cast<double>(losses[i].item()), lr, flops_,
                          ms / double(pairs.size()), std::nullopt});
    }
    ++step_;
  }

  void run() {
    while (!done()) step();
  }

  Checkpoint checkpoint(nlohmann::ordered_json config_echo = {}) const {
    Checkpoint c;
    c.config = std::move(config_echo);
    c.config["train"] = to_json(config_);
    c.step = step_;
    c.flops_cum = flops_;
    c.seed = config_.seed;
    detail::save_optimizer(adam_, c);
    return c;
  }

  void restore(const Checkpoint& c) {
    if (c.seed != config_.seed) throw ConfigError("checkpoint seed does not match the config");
    detail::restore_optimizer(adam_, c);
    step_ = c.step;
    flops_ = c.flops_cum;
    records_.clear();
  }

  /// theta_k under the current parameters, detached from the graph.
  /// Compression-mode conditioning sees the whole training split.
  Tensor current_theta(std::size_t k) const {
    return source_.theta(k, anchor_features(k, batches_.rows())).detach();
  }

 private:
  static std::vector<Tensor> reshape_all(const std::vector<Tensor>& v) {
    std::vector<Tensor> out;
    for (const auto& t : v) out.push_back(reshape(t, {1}));
    return out;
  }

  Tensor anchor_features(std::size_t k, const std::vector<std::size_t>& rows) const {
    return embed_batch(data_.banks_a.at(zoo_.pair(k).n), rows);
  }

  Tensor pair_loss(std::size_t k, const std::vector<std::size_t>& rows) {
    const auto pc = zoo_.pair(k);
    Tensor xa = embed_batch(data_.banks_a.at(pc.n), rows);
    Tensor xb = embed_batch(data_.banks_b.at(pc.m), rows);
    Tensor theta = source_.theta(k, xa);
    Tensor stitched = connector_forward(source_.layout(k), theta, xb);
    return info_nce(stitched, xa, {config_.tau, config_.symmetric_loss});
  }

  Flops pair_step_flops(std::size_t k, std::uint64_t b) const {
    return flops_per_train_step(source_.layout(k), b) +
           encoder_embed_flops(zoo_.encoder_a(k).param_count, zoo_.encoder_b(k).param_count, b) +
           source_.generation_flops(k);
  }

  const ModelZoo& zoo_;
  const PairedEmbeddingDataset& data_;
  Source source_;
  TrainConfig config_;
  DataSchedule batches_;
  Adam adam_;
  LrSchedule schedule_;
  std::uint64_t total_steps_ = 0;
  std::uint64_t step_ = 0;
  Flops flops_ = 0;
  std::vector<RunRecord> records_;
};

// ---------------------------------------------------------------------------
// Direct single-pair trainer
// ---------------------------------------------------------------------------

/// Evaluates a detached theta; higher is better.
using ThetaEvaluator = std::function<double(const Tensor& theta)>;

class DirectTrainer {
 public:
  DirectTrainer(const ModelZoo& zoo, const PairedEmbeddingDataset& data, std::size_t pair,
                ConnectorLayout layout, TrainConfig config, std::vector<std::size_t> train_rows = {})
      : zoo_(zoo),
        data_(data),
        pair_(pair),
        layout_(std::move(layout)),
        config_(config),
        batches_(train_rows.empty() ? data.train : std::move(train_rows), config.batch_data,
                 derive_seed(config.seed, "data")),
        adam_(AdamConfig{config.beta1, config.beta2, config.eps}) {
    const auto pc = zoo.pair(pair);
    if (layout_.in_dim != zoo.encoders_b()[pc.m].dim || layout_.out_dim != zoo.encoders_a()[pc.n].dim)
      throw ConfigError("layout dims do not match pair " + zoo.pair_name(pair));
    auto rng = make_rng(config.seed, "connector-init", pair);
    theta_ = Tensor({layout_.total_params()}, init_connector_theta(layout_, rng), true);
    adam_.add_param("theta.k" + std::to_string(pair), theta_);
    total_steps_ = config_.epochs * batches_.steps_per_epoch();
    schedule_ = make_schedule(config_, total_steps_);
  }

  std::size_t pair() const { return pair_; }
  const ConnectorLayout& layout() const { return layout_; }
  std::uint64_t step_index() const { return step_; }
  std::uint64_t total_steps() const { return total_steps_; }
  std::uint64_t steps_per_epoch() const { return batches_.steps_per_epoch(); }
  bool done() const { return step_ >= total_steps_; }
  Flops flops() const { return flops_; }
  const Tensor& theta() const { return theta_; }
  const std::vector<RunRecord>& records() const { return records_; }
  std::vector<RunRecord>& records() { return records_; }

  Flops step_flops(std::uint64_t step) const {
    const std::uint64_t b = batches_.batch_size(step);
    return flops_per_train_step(layout_, b) +
           encoder_embed_flops(zoo_.encoder_a(pair_).param_count, zoo_.encoder_b(pair_).param_count, b);
  }
  Flops next_step_flops() const { return step_flops(step_); }

  double step() {
    if (done()) throw RangeError("training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = batches_.batch(step_);
    const double lr = schedule_.lr(step_);
    const auto pc = zoo_.pair(pair_);
    adam_.zero_grad();
    Tensor xa = embed_batch(data_.banks_a.at(pc.n), rows);
    Tensor xb = embed_batch(data_.banks_b.at(pc.m), rows);
    Tensor loss = info_nce(connector_forward(layout_, theta_, xb), xa,
                           {config_.tau, config_.symmetric_loss});
    const double v = loss.item();
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "training diverged at step " << step_ << ", pair " << pair_ << " ("
         << zoo_.pair_name(pair_) << "), lr " << lr << ", loss " << v;
      throw DivergenceError(os.str());
    }
    loss.backward();
    if (config_.clip_norm > 0.0) adam_.clip_grad_norm(config_.clip_norm);
    adam_.step(lr);
    flops_ += step_flops(step_);
    records_.push_back({step_, pair_, v, lr, flops_, detail::elapsed_ms(t0), std::nullopt});
    ++step_;
    return v;
  }

  Checkpoint checkpoint(nlohmann::ordered_json config_echo = {}) const {
    Checkpoint c;
    c.config = std::move(config_echo);
    c.config["train"] = to_json(config_);
    c.config["pair"] = pair_;
    c.step = step_;
    c.flops_cum = flops_;
    c.seed = config_.seed;
    detail::save_optimizer(adam_, c);
    return c;
  }

  void restore(const Checkpoint& c) {
    if (c.seed != config_.seed) throw ConfigError("checkpoint seed does not match the config");
    detail::restore_optimizer(adam_, c);
    step_ = c.step;
    flops_ = c.flops_cum;
    records_.clear();
  }

 private:
  const ModelZoo& zoo_;
  const PairedEmbeddingDataset& data_;
  std::size_t pair_;
  ConnectorLayout layout_;
  TrainConfig config_;
  DataSchedule batches_;
  Adam adam_;
  LrSchedule schedule_;
  Tensor theta_;
  std::uint64_t total_steps_ = 0;
  std::uint64_t step_ = 0;
  Flops flops_ = 0;
  std::vector<RunRecord> records_;
};

struct DirectResult {
  Tensor theta;       // final parameters
  Tensor best_theta;  // parameters at the best evaluation
  double best_metric = -1.0;
  Flops flops = 0;
  std::vector<RunRecord> records;
};

/// Steps `t` to the end of its schedule, filling `r`. With an evaluator,
/// the connector is scored every eval_every steps and at the end; the
/// best evaluation is kept. On divergence `r` holds the progress so far.
inline void run_direct(DirectTrainer& t, const TrainConfig& config, const ThetaEvaluator& evaluate,
                       DirectResult& r) {
  auto consider = [&] {
    if (!evaluate) return;
    Tensor th = t.theta().detach();
    const double m = evaluate(th);
    if (!t.records().empty()) t.records().back().metric = m;
    if (!r.best_theta.defined() || m > r.best_metric) {
      r.best_metric = m;
      r.best_theta = th;
    }
  };
  auto finish = [&] {
    r.theta = t.theta().detach();
    if (!r.best_theta.defined()) r.best_theta = r.theta;
    r.flops = t.flops();
    r.records = t.records();
  };
  try {
    while (!t.done()) {
      t.step();
      if (config.eval_every > 0 && t.step_index() % config.eval_every == 0 && !t.done()) consider();
    }
  } catch (const DivergenceError&) {
    finish();
    throw;
  }
  consider();
  finish();
}

/// Trains one pair's connector for config.epochs.
inline DirectResult train_direct(std::size_t pair, const ModelZoo& zoo,
                                 const PairedEmbeddingDataset& data, const ConnectorLayout& layout,
                                 const TrainConfig& config, const ThetaEvaluator& evaluate = {},
                                 std::vector<std::size_t> train_rows = {}) {
  DirectTrainer t(zoo, data, pair, layout, config, std::move(train_rows));
  DirectResult r;
  run_direct(t, config, evaluate, r);
  return r;
}

/// Builds one layout per pair, connector mapping modality-B width into
/// modality-A width.
inline std::vector<ConnectorLayout> pair_layouts(const ModelZoo& zoo, ConnectorKind kind,
                                                 std::size_t hidden = kConnectorHidden) {
  std::vector<ConnectorLayout> out;
  for (std::size_t k = 0; k < zoo.num_pairs(); ++k)
    out.push_back(make_layout(kind, zoo.encoder_b(k).dim, zoo.encoder_a(k).dim, hidden));
  return out;
}

struct HymaResult {
  HyperNetState state;
  Flops flops = 0;
  std::vector<RunRecord> records;
};

/// Joint hypernetwork training over the whole zoo.
inline HymaResult train_hyma(const ModelZoo& zoo, const PairedEmbeddingDataset& data,
                             HyperNetState state, const std::vector<ConnectorLayout>& layouts,
                             const TrainConfig& config) {
  JointTrainer<HypernetSource> t(zoo, data, HypernetSource(std::move(state), layouts), config);
  t.run();
  return {t.source().state(), t.flops(), t.records()};
}

/// Closed-form ledger of a direct run: sum of per-step FLOPs over the
/// schedule, no training.
inline Flops predict_direct_flops(const ConnectorLayout& layout, std::uint64_t param_a,
                                  std::uint64_t param_b, std::size_t train_rows,
                                  std::size_t batch, std::size_t epochs) {
  const std::uint64_t full = train_rows / batch, tail = train_rows % batch;
  auto per = [&](std::uint64_t b) {
    return flops_per_train_step(layout, b) + encoder_embed_flops(param_a, param_b, b);
  };
  Flops epoch = full * per(batch) + (tail ? per(tail) : 0);
  return epochs * epoch;
}

}  // namespace stitch
