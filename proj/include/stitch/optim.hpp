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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "stitch/errors.hpp"
#include "stitch/tensor.hpp"

namespace stitch {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at
/// `total_steps`.
struct LrSchedule {
  double base_lr = 1e-2;
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 0;

  LrSchedule() = default;
  LrSchedule(double base, std::uint64_t warmup, std::uint64_t total)
      : base_lr(base), warmup_steps(warmup), total_steps(total) {
    if (!(base >= 0.0)) throw ArgumentError("base_lr must be non-negative");
    if (warmup > total)
      throw ArgumentError("warmup_steps exceeds total_steps");
  }

  double lr(std::uint64_t step) const {
    if (step > total_steps)
      throw RangeError("step " + std::to_string(step) + " beyond schedule end " +
                       std::to_string(total_steps));
    if (step < warmup_steps)
      return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    // Degenerate schedule that is all warmup: hold the peak.
    if (total_steps == warmup_steps) return base_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

inline double schedule_lr(const LrSchedule& s, std::uint64_t step) {
  return s.lr(step);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of named parameters.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) ||
        !(config.beta2 >= 0.0 && config.beta2 < 1.0))
      throw ArgumentError("Adam betas must lie in [0, 1)");
    if (!(config.eps > 0.0)) throw ArgumentError("Adam eps must be positive");
  }

  void add_param(std::string name, Tensor param) {
    for (const auto& p : params_)
      if (p.name == name) throw ConfigError("parameter registered twice: " + name);
    first_.emplace_back(param.numel(), real(0));
    second_.emplace_back(param.numel(), real(0));
    params_.push_back({std::move(name), std::move(param)});
  }

  const std::vector<NamedTensor>& params() const { return params_; }
  std::uint64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Applies one update with learning rate `lr`. Parameters that received
  /// no gradient this step are treated as having a zero gradient.
  void step(double lr) {
    for (const auto& p : params_)
      if (p.tensor.has_grad() && !all_finite(p.tensor.grad()))
        throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    const real b1 = static_cast<real>(config_.beta1);
    const real b2 = static_cast<real>(config_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].tensor;
      auto w = p.mutable_data();
      auto& m = first_[i];
      auto& v = second_[i];
      const bool has = p.has_grad();
      auto g = p.grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const real gj = has ? g[j] : real(0);
        m[j] = b1 * m[j] + (real(1) - b1) * gj;
        v[j] = b2 * v[j] + (real(1) - b2) * gj * gj;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] -= static_cast<real>(lr * mhat / (std::sqrt(vhat) + config_.eps));
      }
    }
  }

  /// Scales all gradients so their global L2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& p : params_)
      if (p.tensor.has_grad())
        for (real g : p.tensor.grad()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
      const real f = static_cast<real>(max_norm / norm);
      for (auto& p : params_)
        if (p.tensor.has_grad())
          for (auto& g : p.tensor.mutable_grad()) g *= f;
    }
    return norm;
  }

  // Checkpoint access.
  std::vector<real>& first_moment(std::size_t i) { return first_.at(i); }
  std::vector<real>& second_moment(std::size_t i) { return second_.at(i); }
  const std::vector<real>& first_moment(std::size_t i) const { return first_.at(i); }
  const std::vector<real>& second_moment(std::size_t i) const { return second_.at(i); }
  void set_step_count(std::uint64_t t) { step_count_ = t; }

 private:
  AdamConfig config_;
  std::vector<NamedTensor> params_;
  std::vector<std::vector<real>> first_;
  std::vector<std::vector<real>> second_;
  std::uint64_t step_count_ = 0;
};

}  // namespace stitch
