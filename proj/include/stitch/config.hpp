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
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "stitch/connectors.hpp"
#include "stitch/embeddings.hpp"
#include "stitch/errors.hpp"
#include "stitch/hypernet.hpp"
#include "stitch/metrics.hpp"
#include "stitch/objectives.hpp"
#include "stitch/search.hpp"
#include "stitch/trainer.hpp"

namespace stitch {

inline constexpr int kRunConfigSchema = 1;

inline const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names{"hyma", "grid", "random", "unit1", "ask", "autopair", "cgs"};
  return names;
}

struct SyntheticZooConfig {
  std::size_t samples = 4096;
  std::size_t latent_dim = 16;
  double val_fraction = 0.125;
  std::vector<SyntheticEncoderConfig> encoders_a;
  std::vector<SyntheticEncoderConfig> encoders_b;
};

struct AdvisorSettings {
  std::string kind = "scripted";  // "scripted" | "http"
  std::vector<std::string> replies;
  std::string endpoint;
  std::string model;
  std::string key_env = "STITCH_ADVISOR_KEY";
  double timeout_s = 30.0;
  AdvisorBrief brief;
};

struct StrategySettings {
  std::vector<std::string> run;
  std::size_t random_trials = 5;
  std::optional<Flops> autopair_budget;  // unset: the predicted HYMA bill
  std::size_t autopair_epochs_per_round = 2;
  double cgs_fraction = 1.0 / 3.0;
  AdvisorSettings ask;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  std::filesystem::path base_dir = ".";  // resolves relative paths
  std::optional<std::filesystem::path> manifest;
  SyntheticZooConfig synthetic;
  ConnectorKind connector = ConnectorKind::Mlp1;
  std::size_t hidden = kConnectorHidden;
  TrainConfig direct;
  HymaSettings hyma;
  nlohmann::ordered_json eval = {{"split", "val"}, {"k", 5}};
  StrategySettings strategies;
  ReportKey report{"retrieval", "synthetic", "mlp1"};
  nlohmann::ordered_json echo;  // the file as read
};

namespace detail {

inline void reject_unknown(const nlohmann::ordered_json& j, const std::set<std::string>& known,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

inline SyntheticEncoderConfig parse_synthetic_encoder(const nlohmann::ordered_json& j,
                                                      std::size_t latent, std::uint64_t root,
                                                      Nonlinearity nl) {
  reject_unknown(j, {"id", "dim", "quality", "unimodal_score", "param_count", "seed"}, "encoder");
  SyntheticEncoderConfig e;
  e.id = j.at("id").get<std::string>();
  e.spec.latent_dim = latent;
  e.spec.dim = j.at("dim").get<std::size_t>();
  e.spec.quality = j.at("quality").get<double>();
  e.spec.seed = j.contains("seed") ? j["seed"].get<std::uint64_t>() : derive_seed(root, "encoder:" + e.id);
  e.spec.nonlinearity = nl;
  if (j.contains("unimodal_score")) e.unimodal_score = j["unimodal_score"].get<double>();
  if (j.contains("param_count")) e.param_count = j["param_count"].get<std::uint64_t>();
  return e;
}

}  // namespace detail

/// Parses a run config. Relative paths resolve against `base_dir`. Every
/// training seed is the root seed; components draw named substreams.
inline RunConfig parse_run_config(const nlohmann::ordered_json& j,
                                  const std::filesystem::path& base_dir = ".") {
  using detail::reject_unknown;
  try {
    reject_unknown(j, {"schema_version", "seed", "output_dir", "zoo", "connector", "direct", "hyma",
                       "eval", "strategies", "report"},
                   "run config");
    if (j.value("schema_version", 0) != kRunConfigSchema)
      throw ConfigError("run config schema_version must be " + std::to_string(kRunConfigSchema));
    RunConfig c;
    c.echo = j;
    c.base_dir = base_dir;
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();

    const auto& zoo = j.at("zoo");
    reject_unknown(zoo, {"manifest", "synthetic"}, "zoo");
    if (zoo.contains("manifest") == zoo.contains("synthetic"))
      throw ConfigError("zoo needs exactly one of 'manifest' or 'synthetic'");
    if (zoo.contains("manifest")) {
      c.manifest = zoo["manifest"].get<std::string>();
    } else {
      const auto& s = zoo["synthetic"];
      reject_unknown(s, {"samples", "latent_dim", "val_fraction", "nonlinearity", "image_encoders",
                         "text_encoders"},
                     "zoo.synthetic");
      c.synthetic.samples = s.value("samples", c.synthetic.samples);
      c.synthetic.latent_dim = s.value("latent_dim", c.synthetic.latent_dim);
      c.synthetic.val_fraction = s.value("val_fraction", c.synthetic.val_fraction);
      const auto nl_name = s.value("nonlinearity", std::string("none"));
      if (nl_name != "none" && nl_name != "tanh") throw ConfigError("nonlinearity must be none or tanh");
      const auto nl = nl_name == "tanh" ? Nonlinearity::Tanh : Nonlinearity::None;
      for (const auto& e : s.at("image_encoders"))
        c.synthetic.encoders_a.push_back(
            detail::parse_synthetic_encoder(e, c.synthetic.latent_dim, c.seed, nl));
      for (const auto& e : s.at("text_encoders"))
        c.synthetic.encoders_b.push_back(
            detail::parse_synthetic_encoder(e, c.synthetic.latent_dim, c.seed, nl));
    }

    if (j.contains("connector")) {
      const auto& k = j["connector"];
      reject_unknown(k, {"kind", "hidden"}, "connector");
      c.connector = parse_connector_kind(k.value("kind", std::string("mlp1")));
      c.hidden = k.value("hidden", c.hidden);
      if (c.hidden == 0) throw ConfigError("connector hidden width must be positive");
    }

    const std::set<std::string> train_keys{"batch_data", "batch_models", "epochs", "lr",
                                           "warmup_steps", "beta1", "beta2", "eps", "tau",
                                           "symmetric_loss", "clip_norm", "eval_every"};
    c.direct.mode = TrainMode::DirectPair;
    if (j.contains("direct")) {
      reject_unknown(j["direct"], train_keys, "direct");
      c.direct = train_config_from_json(j["direct"], c.direct);
    }
    c.direct.seed = c.seed;
    c.direct.batch_models = 1;
    c.hyma.train.mode = TrainMode::Hypernet;
    if (j.contains("hyma")) {
      auto keys = train_keys;
      keys.insert({"cond_dim", "generator_hidden", "conditioning"});
      const auto& h = j["hyma"];
      reject_unknown(h, keys, "hyma");
      c.hyma.train = train_config_from_json(h, c.hyma.train);
      c.hyma.cond_dim = h.value("cond_dim", c.hyma.cond_dim);
      if (h.contains("generator_hidden"))
        c.hyma.generator_hidden = h["generator_hidden"].get<std::vector<std::size_t>>();
      const auto cond = h.value("conditioning", std::string("codebook"));
      if (cond != "codebook" && cond != "encoder-compression")
        throw ConfigError("conditioning must be codebook or encoder-compression");
      c.hyma.conditioning =
          cond == "codebook" ? ConditioningMode::Codebook : ConditioningMode::EncoderCompression;
    }
    c.hyma.train.seed = c.seed;

    if (j.contains("eval")) c.eval = j["eval"];

    if (j.contains("strategies")) {
      const auto& s = j["strategies"];
      reject_unknown(s, {"run", "random", "autopair", "cgs", "ask"}, "strategies");
      if (s.contains("run")) c.strategies.run = s["run"].get<std::vector<std::string>>();
      for (const auto& name : c.strategies.run)
        if (std::find(strategy_names().begin(), strategy_names().end(), name) == strategy_names().end())
          throw ConfigError("unknown strategy '" + name + "'");
      if (s.contains("random")) {
        reject_unknown(s["random"], {"trials"}, "strategies.random");
        c.strategies.random_trials = s["random"].value("trials", c.strategies.random_trials);
      }
      if (s.contains("autopair")) {
        const auto& a = s["autopair"];
        reject_unknown(a, {"budget", "epochs_per_round"}, "strategies.autopair");
        if (a.contains("budget") && !(a["budget"].is_string() && a["budget"] == "hyma"))
          c.strategies.autopair_budget = a["budget"].get<Flops>();
        c.strategies.autopair_epochs_per_round =
            a.value("epochs_per_round", c.strategies.autopair_epochs_per_round);
      }
      if (s.contains("cgs")) {
        reject_unknown(s["cgs"], {"fraction"}, "strategies.cgs");
        c.strategies.cgs_fraction = s["cgs"].value("fraction", c.strategies.cgs_fraction);
      }
      if (s.contains("ask")) {
        const auto& a = s["ask"];
        reject_unknown(a, {"advisor", "replies", "endpoint", "model", "key_env", "timeout_s", "task",
                           "dataset"},
                       "strategies.ask");
        auto& adv = c.strategies.ask;
        adv.kind = a.value("advisor", adv.kind);
        if (adv.kind != "scripted" && adv.kind != "http")
          throw ConfigError("advisor must be scripted or http");
        if (a.contains("replies")) adv.replies = a["replies"].get<std::vector<std::string>>();
        adv.endpoint = a.value("endpoint", adv.endpoint);
        adv.model = a.value("model", adv.model);
        adv.key_env = a.value("key_env", adv.key_env);
        adv.timeout_s = a.value("timeout_s", adv.timeout_s);
        adv.brief.task = a.value("task", adv.brief.task);
        adv.brief.dataset = a.value("dataset", adv.brief.dataset);
        if (adv.kind == "http" && adv.endpoint.empty())
          throw ConfigError("http advisor needs an endpoint");
      }
    }
    c.strategies.ask.brief.connector = c.connector;

    c.report.connector = std::string(to_string(c.connector));
    if (j.contains("report")) {
      reject_unknown(j["report"], {"task", "dataset", "connector"}, "report");
      c.report.task = j["report"].value("task", c.report.task);
      c.report.dataset = j["report"].value("dataset", c.report.dataset);
      c.report.connector = j["report"].value("connector", c.report.connector);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto base = path.parent_path();
  return parse_run_config(j, base.empty() ? "." : base);
}

inline std::filesystem::path resolve(const RunConfig& c, const std::filesystem::path& p) {
  return p.is_absolute() ? p : c.base_dir / p;
}

/// The zoo and dataset a config names: generated in memory for synthetic
/// specs, read from disk for a manifest.
inline SyntheticZoo load_zoo(const RunConfig& c) {
  if (c.manifest) {
    const auto path = resolve(c, *c.manifest);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    auto base = path.parent_path();
    return load_manifest(manifest_from_json(j), base.empty() ? "." : base);
  }
  return generate_synthetic_zoo(c.synthetic.encoders_a, c.synthetic.encoders_b, c.synthetic.samples,
                                c.seed, c.synthetic.val_fraction);
}

inline EvalTask load_eval_task(const RunConfig& c, const PairedEmbeddingDataset& data) {
  if (c.eval.contains("file")) {
    const auto path = resolve(c, c.eval["file"].get<std::string>());
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open eval task " + path.string());
    return eval_task_from_json(nlohmann::json::parse(in), data);
  }
  return eval_task_from_json(nlohmann::json(c.eval), data);
}

inline SearchContext make_search_context(const RunConfig& c, const SyntheticZoo& z,
                                         std::size_t jobs = 1) {
  return SearchContext{z.zoo,    z.dataset, pair_layouts(z.zoo, c.connector, c.hidden),
                       c.direct, c.hyma,    load_eval_task(c, z.dataset),
                       jobs};
}

/// Writes a synthetic zoo's banks (32-bit) and manifest under `dir`.
inline Manifest write_synthetic_zoo(const RunConfig& c, const SyntheticZoo& z,
                                    const std::filesystem::path& dir) {
  if (c.manifest) throw ConfigError("config names a manifest, not a synthetic zoo");
  std::filesystem::create_directories(dir / "banks");
  Manifest m;
  m.split_seed = derive_seed(c.seed, "split");
  m.val_fraction = c.synthetic.val_fraction;
  auto add = [&](const std::vector<SyntheticEncoderConfig>& side, const std::vector<Matrix<real>>& banks,
                 const std::vector<EncoderHandle>& handles, Modality mod) {
    for (std::size_t i = 0; i < side.size(); ++i) {
      const auto rel = std::filesystem::path("banks") / (side[i].id + ".emb");
      write_bank(dir / rel, demote(banks[i]));
      m.encoders.push_back({side[i].id, mod, rel, handles[i].dim, handles[i].param_count,
                            side[i].unimodal_score, side[i].spec.quality});
    }
  };
  add(c.synthetic.encoders_a, z.dataset.banks_a, z.zoo.encoders_a(), Modality::A);
  add(c.synthetic.encoders_b, z.dataset.banks_b, z.zoo.encoders_b(), Modality::B);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw Error("failed to write " + (dir / "manifest.json").string());
  return m;
}

/// Pairs ordered by planted score, best first (ties to the lower index).
inline std::vector<std::size_t> planted_order(const RunConfig& c, const ModelZoo& zoo) {
  std::vector<double> score(zoo.num_pairs());
  for (std::size_t k = 0; k < zoo.num_pairs(); ++k) {
    const auto pc = zoo.pair(k);
    score[k] = planted_pair_score(c.synthetic.encoders_a.at(pc.n).spec.quality,
                                  c.synthetic.encoders_b.at(pc.m).spec.quality);
  }
  return order_by_metric(score);
}

}  // namespace stitch
