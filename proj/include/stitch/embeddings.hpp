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
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "stitch/errors.hpp"
#include "stitch/random.hpp"
#include "stitch/tensor.hpp"

namespace stitch {

/// Row-major dense matrix without autodiff, used for embedding banks.
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> v)
      : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != r * c) throw DimensionError("matrix size mismatch");
  }

  T& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  T operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const T> row(std::size_t i) const {
    return std::span<const T>(values).subspan(i * cols, cols);
  }
  bool operator==(const Matrix&) const = default;
};

// ---------------------------------------------------------------------------
// Embedding-bank file: "EMB1" | u32 LE count | u32 LE dim | count*dim f32 LE
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline constexpr std::array<char, 4> kBankMagic{'E', 'M', 'B', '1'};

inline std::string encode_bank(const Matrix<float>& m) {
  for (float v : m.values)
    if (!std::isfinite(v)) throw ArgumentError("bank payload must be finite");
  std::string out(kBankMagic.begin(), kBankMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols));
  out.reserve(out.size() + m.values.size() * 4);
  for (float v : m.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Matrix<float> decode_bank(std::string_view bytes) {
  if (bytes.size() < 4) throw FormatError("truncated magic", bytes.size());
  if (bytes.substr(0, 3) == "EMB" && bytes[3] != '1')
    throw UnsupportedVersionError(
        "unsupported embedding-bank version '" + std::string(bytes.substr(0, 4)) + "'", 0);
  if (bytes.substr(0, 4) != std::string_view(kBankMagic.data(), 4))
    throw FormatError("bad embedding-bank magic", 0);
  if (bytes.size() < 12) throw FormatError("truncated header", bytes.size());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t count = detail::get_u32(p + 4);
  const std::uint32_t dim = detail::get_u32(p + 8);
  const std::uint64_t expected = std::uint64_t(count) * dim * 4;
  const std::uint64_t payload = bytes.size() - 12;
  if (payload != expected)
    throw FormatError("payload is " + std::to_string(payload) + " bytes, header needs " +
                          std::to_string(expected),
                      12 + std::min(payload, expected));
  Matrix<float> m(count, dim);
  for (std::size_t i = 0; i < m.values.size(); ++i)
    m.values[i] = std::bit_cast<float>(detail::get_u32(p + 12 + 4 * i));
  return m;
}

inline void write_bank(const std::filesystem::path& path, const Matrix<float>& m) {
  const std::string bytes = encode_bank(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Matrix<float> read_bank(const std::filesystem::path& path) {
  return decode_bank(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Encoders and the model zoo
// ---------------------------------------------------------------------------

/// Modality A is the anchor (image) side, B the side the connector reads
/// from (text).
enum class Modality { A, B };

enum class Nonlinearity { None, Tanh };

struct SyntheticEncoderSpec {
  std::size_t latent_dim = 16;
  std::size_t dim = 32;
  double quality = 1.0;
  std::uint64_t seed = 0;
  Nonlinearity nonlinearity = Nonlinearity::None;
};

struct EncoderHandle {
  std::string id;
  Modality modality = Modality::A;
  std::size_t dim = 0;
  std::uint64_t param_count = 0;
  std::optional<double> unimodal_score;
  std::variant<std::filesystem::path, SyntheticEncoderSpec> source;
};

struct PairCoord {
  std::size_t n = 0;  // modality-A encoder
  std::size_t m = 0;  // modality-B encoder
  bool operator==(const PairCoord&) const = default;
};

class ModelZoo {
 public:
  ModelZoo() = default;
  ModelZoo(std::vector<EncoderHandle> a, std::vector<EncoderHandle> b)
      : a_(std::move(a)), b_(std::move(b)) {
    if (a_.empty() || b_.empty()) throw ConfigError("zoo needs encoders on both sides");
    std::vector<std::string> ids;
    for (const auto& e : a_) ids.push_back(e.id);
    for (const auto& e : b_) ids.push_back(e.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw ConfigError("encoder ids must be unique within a zoo");
  }

  std::size_t n() const { return a_.size(); }
  std::size_t m() const { return b_.size(); }
  std::size_t num_pairs() const { return a_.size() * b_.size(); }
  const std::vector<EncoderHandle>& encoders_a() const { return a_; }
  const std::vector<EncoderHandle>& encoders_b() const { return b_; }

  /// Row-major pair enumeration, k = n * M + m.
  std::size_t pair_index(std::size_t n, std::size_t m) const {
    if (n >= a_.size() || m >= b_.size()) throw RangeError("pair coordinate out of range");
    return n * b_.size() + m;
  }
  PairCoord pair(std::size_t k) const {
    if (k >= num_pairs()) throw RangeError("pair index " + std::to_string(k) + " out of range");
    return {k / b_.size(), k % b_.size()};
  }
  const EncoderHandle& encoder_a(std::size_t k) const { return a_[pair(k).n]; }
  const EncoderHandle& encoder_b(std::size_t k) const { return b_[pair(k).m]; }
  std::string pair_name(std::size_t k) const {
    return encoder_a(k).id + "+" + encoder_b(k).id;
  }

 private:
  std::vector<EncoderHandle> a_;
  std::vector<EncoderHandle> b_;
};

// ---------------------------------------------------------------------------
// Paired dataset
// ---------------------------------------------------------------------------

struct PairedEmbeddingDataset {
  std::vector<Matrix<real>> banks_a;  // indexed like ModelZoo::encoders_a
  std::vector<Matrix<real>> banks_b;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::size_t count = 0;

  const Matrix<real>& bank(Modality mod, std::size_t i) const {
    return mod == Modality::A ? banks_a.at(i) : banks_b.at(i);
  }
};

/// Seeded train/val split; both lists are returned sorted.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t count, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in [0, 1)");
  auto rng = make_rng(seed, "split");
  auto perm = permutation(count, rng);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * count));
  std::vector<std::size_t> val(perm.begin(), perm.begin() + n_val);
  std::vector<std::size_t> train(perm.begin() + n_val, perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

inline Matrix<real> promote(const Matrix<float>& m) {
  Matrix<real> out(m.rows, m.cols);
  std::copy(m.values.begin(), m.values.end(), out.values.begin());
  return out;
}

inline Matrix<float> demote(const Matrix<real>& m) {
  Matrix<float> out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.values.size(); ++i)
    out.values[i] = static_cast<float>(m.values[i]);
  return out;
}

/// Bank rows for `indices` as a constant (non-differentiable) tensor.
inline Tensor embed_batch(const Matrix<real>& bank, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("embed_batch needs at least one index");
  std::vector<real> out;
  out.reserve(indices.size() * bank.cols);
  for (auto i : indices) {
    if (i >= bank.rows)
      throw RangeError("sample index " + std::to_string(i) + " outside bank of " +
                       std::to_string(bank.rows) + " rows");
    auto r = bank.row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor({indices.size(), bank.cols}, std::move(out), false);
}

inline Tensor embed_batch(const PairedEmbeddingDataset& data, const ModelZoo& zoo,
                          const EncoderHandle& handle,
                          std::span<const std::size_t> indices) {
  const auto& list = handle.modality == Modality::A ? zoo.encoders_a() : zoo.encoders_b();
  for (std::size_t i = 0; i < list.size(); ++i)
    if (list[i].id == handle.id) return embed_batch(data.bank(handle.modality, i), indices);
  throw ConfigError("encoder '" + handle.id + "' is not part of the zoo");
}

// ---------------------------------------------------------------------------
// Synthetic zoo with a planted quality ordering
// ---------------------------------------------------------------------------

/// Random projection of a synthetic encoder: dim x latent_dim, N(0, 1/L).
inline Matrix<double> synthetic_projection(const SyntheticEncoderSpec& spec) {
  auto rng = make_rng(spec.seed, "projection");
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(spec.latent_dim)));
  Matrix<double> p(spec.dim, spec.latent_dim);
  for (auto& v : p.values) v = normal(rng);
  return p;
}

/// Encodes the shared latents with one synthetic encoder:
/// out_i = nl(P z_i + (1 - q) * eps_i), rounded to 32-bit floats.
inline Matrix<float> synthetic_encode(const SyntheticEncoderSpec& spec,
                                      const Matrix<double>& latents) {
  if (spec.latent_dim > spec.dim)
    throw ConfigError("latent_dim exceeds encoder dim; the projection would lose rank");
  if (latents.cols != spec.latent_dim)
    throw ConfigError("latent width does not match the encoder spec");
  if (!(spec.quality >= 0.0 && spec.quality <= 1.0))
    throw ConfigError("quality must lie in [0, 1]");
  const auto proj = synthetic_projection(spec);
  auto noise_rng = make_rng(spec.seed, "noise");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_scale = 1.0 - spec.quality;
  Matrix<float> out(latents.rows, spec.dim);
  for (std::size_t i = 0; i < latents.rows; ++i) {
    auto z = latents.row(i);
    for (std::size_t d = 0; d < spec.dim; ++d) {
      double s = 0.0;
      for (std::size_t l = 0; l < spec.latent_dim; ++l) s += proj(d, l) * z[l];
      s += noise_scale * normal(noise_rng);
      if (spec.nonlinearity == Nonlinearity::Tanh) s = std::tanh(s);
      out(i, d) = static_cast<float>(s);
    }
  }
  return out;
}

struct SyntheticEncoderConfig {
  std::string id;
  SyntheticEncoderSpec spec;
  std::optional<double> unimodal_score;
  std::optional<std::uint64_t> param_count;  // defaults to dim * latent_dim
};

struct SyntheticZoo {
  ModelZoo zoo;
  PairedEmbeddingDataset dataset;
};

/// Planted score of a pair: the negated total noise variance of its two
/// encoders. Higher is better.
inline double planted_pair_score(double quality_a, double quality_b) {
  return -((1.0 - quality_a) * (1.0 - quality_a) + (1.0 - quality_b) * (1.0 - quality_b));
}

inline SyntheticZoo generate_synthetic_zoo(const std::vector<SyntheticEncoderConfig>& a,
                                           const std::vector<SyntheticEncoderConfig>& b,
                                           std::size_t sample_count, std::uint64_t seed,
                                           double val_fraction = 0.125) {
  if (a.empty() || b.empty()) throw ConfigError("synthetic zoo needs n, m >= 1");
  if (sample_count < 4) throw ConfigError("synthetic zoo needs at least 4 samples");
  const std::size_t latent = a.front().spec.latent_dim;
  for (const auto* side : {&a, &b})
    for (const auto& e : *side) {
      if (e.spec.latent_dim != latent)
        throw ConfigError("all synthetic encoders must share one latent_dim");
      if (e.spec.latent_dim > e.spec.dim)
        throw ConfigError("encoder '" + e.id + "': latent_dim exceeds dim");
    }

  auto rng = make_rng(seed, "latents");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<double> z(sample_count, latent);
  for (auto& v : z.values) v = normal(rng);

  SyntheticZoo out;
  std::vector<EncoderHandle> ha, hb;
  auto build = [&](const std::vector<SyntheticEncoderConfig>& side, Modality mod,
                   std::vector<EncoderHandle>& handles, std::vector<Matrix<real>>& banks) {
    for (const auto& e : side) {
      EncoderHandle h;
      h.id = e.id;
      h.modality = mod;
      h.dim = e.spec.dim;
      h.param_count = e.param_count.value_or(e.spec.dim * e.spec.latent_dim);
      h.unimodal_score = e.unimodal_score;
      h.source = e.spec;
      handles.push_back(std::move(h));
      banks.push_back(promote(synthetic_encode(e.spec, z)));
    }
  };
  build(a, Modality::A, ha, out.dataset.banks_a);
  build(b, Modality::B, hb, out.dataset.banks_b);
  out.zoo = ModelZoo(std::move(ha), std::move(hb));
  out.dataset.count = sample_count;
  std::tie(out.dataset.train, out.dataset.val) =
      split_indices(sample_count, val_fraction, derive_seed(seed, "split"));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON): encoder id -> bank path, split seed, val fraction
// ---------------------------------------------------------------------------

struct Manifest {
  struct Entry {
    std::string id;
    Modality modality = Modality::A;
    std::filesystem::path bank;
    std::size_t dim = 0;
    std::uint64_t param_count = 0;
    std::optional<double> unimodal_score;
    std::optional<double> quality;  // planted quality, synthetic zoos only
  };
  std::vector<Entry> encoders;
  std::uint64_t split_seed = 0;
  double val_fraction = 0.125;
};

inline nlohmann::ordered_json manifest_to_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["split_seed"] = m.split_seed;
  j["val_fraction"] = m.val_fraction;
  auto& list = j["encoders"] = nlohmann::ordered_json::array();
  for (const auto& e : m.encoders) {
    nlohmann::ordered_json je;
    je["id"] = e.id;
    je["modality"] = e.modality == Modality::A ? "A" : "B";
    je["bank"] = e.bank.generic_string();
    je["dim"] = e.dim;
    je["param_count"] = e.param_count;
    if (e.unimodal_score) je["unimodal_score"] = *e.unimodal_score;
    if (e.quality) je["quality"] = *e.quality;
    list.push_back(std::move(je));
  }
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != 1) throw ConfigError("manifest schema_version must be 1");
  Manifest m;
  m.split_seed = j.at("split_seed").get<std::uint64_t>();
  m.val_fraction = j.at("val_fraction").get<double>();
  for (const auto& je : j.at("encoders")) {
    Manifest::Entry e;
    e.id = je.at("id").get<std::string>();
    const auto mod = je.at("modality").get<std::string>();
    if (mod != "A" && mod != "B") throw ConfigError("modality must be \"A\" or \"B\"");
    e.modality = mod == "A" ? Modality::A : Modality::B;
    e.bank = je.at("bank").get<std::string>();
    e.dim = je.at("dim").get<std::size_t>();
    e.param_count = je.value("param_count", std::uint64_t{0});
    if (je.contains("unimodal_score")) e.unimodal_score = je["unimodal_score"].get<double>();
    if (je.contains("quality")) e.quality = je["quality"].get<double>();
    m.encoders.push_back(std::move(e));
  }
  return m;
}

/// Loads every bank named by the manifest (paths relative to `base_dir`)
/// and checks that they are index-aligned and match the declared dims.
inline SyntheticZoo load_manifest(const Manifest& m, const std::filesystem::path& base_dir) {
  std::vector<EncoderHandle> ha, hb;
  SyntheticZoo out;
  std::size_t count = 0;
  bool first = true;
  for (const auto& e : m.encoders) {
    const auto path = e.bank.is_absolute() ? e.bank : base_dir / e.bank;
    if (!std::filesystem::exists(path))
      throw ConfigError("bank file for '" + e.id + "' not found: " + path.string());
    auto bank = read_bank(path);
    if (bank.cols != e.dim)
      throw ConfigError("bank for '" + e.id + "' has dim " + std::to_string(bank.cols) +
                        ", manifest says " + std::to_string(e.dim));
    if (first) count = bank.rows;
    if (bank.rows != count) throw ConfigError("banks are not index-aligned (row counts differ)");
    first = false;
    EncoderHandle h{e.id, e.modality, e.dim, e.param_count, e.unimodal_score, path};
    if (e.modality == Modality::A) {
      ha.push_back(std::move(h));
      out.dataset.banks_a.push_back(promote(bank));
    } else {
      hb.push_back(std::move(h));
      out.dataset.banks_b.push_back(promote(bank));
    }
  }
  out.zoo = ModelZoo(std::move(ha), std::move(hb));
  out.dataset.count = count;
  std::tie(out.dataset.train, out.dataset.val) =
      split_indices(count, m.val_fraction, m.split_seed);
  return out;
}

}  // namespace stitch
