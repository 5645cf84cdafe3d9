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
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "stitch/connectors.hpp"
#include "stitch/embeddings.hpp"
#include "stitch/errors.hpp"
#include "stitch/hypernet.hpp"
#include "stitch/objectives.hpp"
#include "stitch/random.hpp"
#include "stitch/trainer.hpp"

namespace stitch {

// ---------------------------------------------------------------------------
// Outcome
// ---------------------------------------------------------------------------

struct RankedPair {
  std::size_t k = 0;
  std::string name;
  double metric = 0.0;
  bool failed = false;
  std::string note;
};

struct Stage {
  std::string name;
  Flops flops = 0;
};

struct StrategyOutcome {
  std::string strategy;
  std::vector<RankedPair> ranking;  // best first
  Flops flops_total = 0;
  std::vector<Stage> stages;
  std::map<std::size_t, Flops> pair_flops;  // per-pair training bill, where trained
  std::optional<double> reported_metric;    // when it differs from the winner's
  bool partial = false;
  nlohmann::ordered_json details = nlohmann::ordered_json::object();

  // In-memory only.
  Tensor winner_theta;
  std::optional<HyperNetState> hypernet;
  std::vector<RunRecord> records;

  const RankedPair& winner() const {
    if (ranking.empty()) throw ArgumentError("outcome has an empty ranking");
    return ranking.front();
  }
  Flops stage_sum() const {
    Flops f = 0;
    for (const auto& s : stages) f += s.flops;
    return f;
  }
};

/// Deterministic serialization: no timings, fixed key order.
inline nlohmann::ordered_json to_json(const StrategyOutcome& o) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["schema_version"] = 1;
  j["strategy"] = o.strategy;
  const auto& w = o.winner();
  j["winner"] = ordered_json{{"k", w.k}, {"name", w.name}, {"metric", w.metric}};
  if (o.reported_metric) j["reported_metric"] = *o.reported_metric;
  j["flops_total"] = o.flops_total;
  j["partial"] = o.partial;
  auto& rank = j["ranking"] = ordered_json::array();
  for (const auto& r : o.ranking) {
    ordered_json jr{{"k", r.k}, {"name", r.name}};
    if (r.failed) {
      jr["metric"] = nullptr;
      jr["failed"] = true;
      jr["note"] = r.note;
    } else {
      jr["metric"] = r.metric;
    }
    rank.push_back(std::move(jr));
  }
  auto& stages = j["stages"] = ordered_json::array();
  for (const auto& s : o.stages) stages.push_back(ordered_json{{"name", s.name}, {"flops", s.flops}});
  auto& pf = j["pair_flops"] = ordered_json::array();
  for (const auto& [k, f] : o.pair_flops) pf.push_back(ordered_json{{"k", k}, {"flops", f}});
  j["details"] = o.details;
  return j;
}

inline StrategyOutcome outcome_from_json(const nlohmann::ordered_json& j) {
  if (j.value("schema_version", 0) != 1) throw FormatError("outcome schema_version must be 1", 0);
  StrategyOutcome o;
  o.strategy = j.at("strategy").get<std::string>();
  if (j.contains("reported_metric")) o.reported_metric = j["reported_metric"].get<double>();
  o.flops_total = j.at("flops_total").get<Flops>();
  o.partial = j.value("partial", false);
  for (const auto& jr : j.at("ranking")) {
    RankedPair r;
    r.k = jr.at("k").get<std::size_t>();
    r.name = jr.at("name").get<std::string>();
    r.failed = jr.value("failed", false);
    r.metric = r.failed ? 0.0 : jr.at("metric").get<double>();
    r.note = jr.value("note", std::string());
    o.ranking.push_back(std::move(r));
  }
  for (const auto& js : j.at("stages"))
    o.stages.push_back({js.at("name").get<std::string>(), js.at("flops").get<Flops>()});
  for (const auto& jp : j.at("pair_flops"))
    o.pair_flops[jp.at("k").get<std::size_t>()] = jp.at("flops").get<Flops>();
  if (j.contains("details")) o.details = j["details"];
  if (o.ranking.empty()) throw FormatError("outcome has an empty ranking", 0);
  return o;
}

/// Per-pair metrics of an outcome indexed by pair; failed pairs score 0.
inline std::map<std::size_t, double> metric_by_pair(const StrategyOutcome& o) {
  std::map<std::size_t, double> out;
  for (const auto& r : o.ranking) out[r.k] = r.failed ? 0.0 : r.metric;
  return out;
}

/// Orders entries best first: finished pairs by metric (ties to the lower
/// pair index), then failed pairs by index.
inline std::vector<RankedPair> rank_entries(std::vector<RankedPair> entries) {
  std::stable_sort(entries.begin(), entries.end(), [](const RankedPair& a, const RankedPair& b) {
    if (a.failed != b.failed) return !a.failed;
    if (!a.failed && a.metric != b.metric) return a.metric > b.metric;
    return a.k < b.k;
  });
  return entries;
}

// ---------------------------------------------------------------------------
// Search context
// ---------------------------------------------------------------------------

struct HymaSettings {
  TrainConfig train;
  std::size_t cond_dim = 32;
  std::vector<std::size_t> generator_hidden{64};
  ConditioningMode conditioning = ConditioningMode::Codebook;
};

struct SearchContext {
  const ModelZoo& zoo;
  const PairedEmbeddingDataset& data;
  std::vector<ConnectorLayout> layouts;
  TrainConfig direct;
  HymaSettings hyma;
  EvalTask task;
  std::size_t jobs = 1;
};

/// Task score of pair `k` stitched with `theta`.
inline double evaluate_pair(const SearchContext& ctx, std::size_t k, const Tensor& theta) {
  const auto pc = ctx.zoo.pair(k);
  const auto& layout = ctx.layouts.at(k);
  return evaluate_task(ctx.task, ctx.data.banks_a.at(pc.n), ctx.data.banks_b.at(pc.m),
                       [&](const Tensor& x) { return connector_forward(layout, theta, x); });
}

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written to per-index slots; the first exception by index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct PairRun {
  DirectResult result;
  bool failed = false;
  std::string error;
};

inline PairRun train_pair(const SearchContext& ctx, std::size_t k, const TrainConfig& config,
                          const std::vector<std::size_t>& rows) {
  PairRun run;
  DirectTrainer t(ctx.zoo, ctx.data, k, ctx.layouts.at(k), config, rows);
  try {
    run_direct(t, config, [&](const Tensor& th) { return evaluate_pair(ctx, k, th); }, run.result);
  } catch (const DivergenceError& e) {
    run.failed = true;
    run.error = e.what();
  }
  return run;
}

inline void check_context(const SearchContext& ctx) {
  if (ctx.layouts.size() != ctx.zoo.num_pairs()) throw ConfigError("one layout per pair required");
  for (std::size_t k = 0; k < ctx.layouts.size(); ++k) {
    const auto& l = ctx.layouts[k];
    if (l.in_dim != ctx.zoo.encoder_b(k).dim || l.out_dim != ctx.zoo.encoder_a(k).dim)
      throw ConfigError("layout dims do not match pair " + ctx.zoo.pair_name(k));
  }
  validate(ctx.task);
}

inline StrategyOutcome grid_over_rows(const SearchContext& ctx, const std::string& strategy,
                                      const std::vector<std::size_t>& rows) {
  check_context(ctx);
  const std::size_t nm = ctx.zoo.num_pairs();
  std::vector<PairRun> runs(nm);
  parallel_for(nm, ctx.jobs, [&](std::size_t k) { runs[k] = train_pair(ctx, k, ctx.direct, rows); });

  StrategyOutcome o;
  o.strategy = strategy;
  std::vector<RankedPair> entries;
  for (std::size_t k = 0; k < nm; ++k) {
    const auto& r = runs[k];
    entries.push_back({k, ctx.zoo.pair_name(k), r.failed ? 0.0 : r.result.best_metric, r.failed,
                       r.error});
    o.stages.push_back({"train " + ctx.zoo.pair_name(k), r.result.flops});
    o.pair_flops[k] = r.result.flops;
    o.flops_total += r.result.flops;
    o.records.insert(o.records.end(), r.result.records.begin(), r.result.records.end());
  }
  o.ranking = rank_entries(std::move(entries));
  if (!o.winner().failed) o.winner_theta = runs[o.winner().k].result.best_theta;
  return o;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Grid search, constrained grid search, best guess
// ---------------------------------------------------------------------------

/// Trains every pair for the full schedule and ranks by each pair's best
/// evaluation. Diverged pairs rank last, flagged.
inline StrategyOutcome run_grid_search(const SearchContext& ctx) {
  return detail::grid_over_rows(ctx, "grid", ctx.data.train);
}

/// Grid search where every pair trains on one shared seeded subset of the
/// training split of size round(fraction * |train|).
inline StrategyOutcome run_cgs(const SearchContext& ctx, double fraction) {
  const auto rows = data_subset(ctx.data.train, fraction, derive_seed(ctx.direct.seed, "data-subset"));
  auto o = detail::grid_over_rows(ctx, "cgs", rows);
  o.details["fraction"] = fraction;
  o.details["train_rows"] = rows.size();
  return o;
}

/// Cost of training only the grid winner, taken from the grid outcome.
inline StrategyOutcome best_guess(const StrategyOutcome& grid) {
  const auto& w = grid.winner();
  auto it = grid.pair_flops.find(w.k);
  if (it == grid.pair_flops.end()) throw ArgumentError("grid outcome lacks the winner's bill");
  StrategyOutcome o;
  o.strategy = "best-guess";
  o.ranking = {w};
  o.flops_total = it->second;
  o.stages = {{"train " + w.name, it->second}};
  o.pair_flops[w.k] = it->second;
  o.winner_theta = grid.winner_theta;
  return o;
}

// ---------------------------------------------------------------------------
// HYMA
// ---------------------------------------------------------------------------

inline HyperNetConfig hyma_hypernet_config(const SearchContext& ctx) {
  return make_hypernet_config(ctx.layouts, ctx.hyma.cond_dim, ctx.hyma.generator_hidden,
                              ctx.hyma.conditioning);
}

/// One joint hypernetwork run, then every pair's generated connector is
/// evaluated and ranked.
inline StrategyOutcome run_hyma_search(const SearchContext& ctx) {
  detail::check_context(ctx);
  const auto hcfg = hyma_hypernet_config(ctx);
  auto state = init_hypernet(hcfg, ctx.layouts, ctx.hyma.train.seed);
  JointTrainer<HypernetSource> t(ctx.zoo, ctx.data, HypernetSource(std::move(state), ctx.layouts),
                                 ctx.hyma.train);
  t.run();

  StrategyOutcome o;
  o.strategy = "hyma";
  std::vector<RankedPair> entries;
  std::vector<Tensor> thetas;
  for (std::size_t k = 0; k < ctx.zoo.num_pairs(); ++k) {
    thetas.push_back(t.current_theta(k));
    entries.push_back({k, ctx.zoo.pair_name(k), evaluate_pair(ctx, k, thetas.back()), false, ""});
  }
  o.ranking = rank_entries(std::move(entries));
  o.flops_total = t.flops();
  o.stages = {{"train hypernetwork", t.flops()}};
  o.winner_theta = thetas[o.winner().k];
  o.hypernet = t.source().state();
  o.records = t.records();
  o.details["steps"] = t.total_steps();
  o.details["hypernet"] = to_json(hcfg);
  return o;
}

// ---------------------------------------------------------------------------
// Random
// ---------------------------------------------------------------------------

/// Pair drawn by random trial `t`.
inline std::size_t random_trial_pair(std::uint64_t seed, std::size_t num_pairs, std::size_t trial) {
  auto rng = make_rng(seed, "random-trial", trial);
  return static_cast<std::size_t>(rng() % num_pairs);
}

/// `trials` independent draws of a uniform pair, each trained directly.
/// The reported metric is the mean over trials; the winner is the best
/// trial's pair. A pair drawn twice appears once, with its best metric.
inline StrategyOutcome run_random(const SearchContext& ctx, std::size_t trials = 5) {
  detail::check_context(ctx);
  if (trials == 0) throw ConfigError("random search needs at least one trial");
  const std::size_t nm = ctx.zoo.num_pairs();
  std::vector<std::size_t> picks(trials);
  std::vector<detail::PairRun> runs(trials);
  for (std::size_t t = 0; t < trials; ++t) picks[t] = random_trial_pair(ctx.direct.seed, nm, t);
  detail::parallel_for(trials, ctx.jobs, [&](std::size_t t) {
    TrainConfig c = ctx.direct;
    c.seed = derive_seed(ctx.direct.seed, "random-trial-train", t);
    runs[t] = detail::train_pair(ctx, picks[t], c, ctx.data.train);
  });

  StrategyOutcome o;
  o.strategy = "random";
  std::map<std::size_t, RankedPair> best;
  double mean = 0.0;
  std::size_t best_trial = trials;
  auto& jt = o.details["trials"] = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < trials; ++t) {
    const auto& r = runs[t];
    const std::size_t k = picks[t];
    const double m = r.failed ? 0.0 : r.result.best_metric;
    mean += m;
    o.stages.push_back({"trial " + std::to_string(t) + " " + ctx.zoo.pair_name(k), r.result.flops});
    o.flops_total += r.result.flops;
    o.pair_flops[k] += r.result.flops;
    o.records.insert(o.records.end(), r.result.records.begin(), r.result.records.end());
    nlohmann::ordered_json e{{"trial", t}, {"k", k}, {"name", ctx.zoo.pair_name(k)}};
    e["metric"] = r.failed ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(m);
    e["flops"] = r.result.flops;
    jt.push_back(std::move(e));
    auto it = best.find(k);
    if (it == best.end() || (!r.failed && (it->second.failed || m > it->second.metric)))
      best[k] = {k, ctx.zoo.pair_name(k), m, r.failed, r.error};
    if (!r.failed && (best_trial == trials || m > (runs[best_trial].result.best_metric)))
      best_trial = t;
  }
  o.reported_metric = mean / double(trials);
  std::vector<RankedPair> entries;
  for (auto& [k, e] : best) entries.push_back(e);
  o.ranking = rank_entries(std::move(entries));
  if (best_trial < trials) o.winner_theta = runs[best_trial].result.best_theta;
  return o;
}

// ---------------------------------------------------------------------------
// UniT-1
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t top_unimodal(const std::vector<EncoderHandle>& side) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < side.size(); ++i) {
    if (!side[i].unimodal_score)
      throw ConfigError("encoder '" + side[i].id + "' has no unimodal_score");
    const double s = *side[i].unimodal_score, b = *side[best].unimodal_score;
    if (s > b || (s == b && side[i].id < side[best].id)) best = i;
  }
  return best;
}

}  // namespace detail

/// Index of the pair joining each modality's best unimodal encoder. Ties
/// go to the lexicographically lower encoder id.
inline std::size_t unit1_pair(const ModelZoo& zoo) {
  const auto n = detail::top_unimodal(zoo.encoders_a());
  const auto m = detail::top_unimodal(zoo.encoders_b());
  return zoo.pair_index(n, m);
}

/// Trains one already chosen pair and wraps it as a one-entry outcome.
inline StrategyOutcome run_single_pair(const SearchContext& ctx, const std::string& strategy,
                                       std::size_t k) {
  detail::check_context(ctx);
  auto r = detail::train_pair(ctx, k, ctx.direct, ctx.data.train);
  StrategyOutcome o;
  o.strategy = strategy;
  o.ranking = {{k, ctx.zoo.pair_name(k), r.failed ? 0.0 : r.result.best_metric, r.failed, r.error}};
  o.flops_total = r.result.flops;
  o.stages = {{"train " + ctx.zoo.pair_name(k), r.result.flops}};
  o.pair_flops[k] = r.result.flops;
  o.winner_theta = r.result.best_theta;
  o.records = std::move(r.result.records);
  return o;
}

inline StrategyOutcome run_unit1(const SearchContext& ctx) {
  return run_single_pair(ctx, "unit1", unit1_pair(ctx.zoo));
}

// ---------------------------------------------------------------------------
// Advisor
// ---------------------------------------------------------------------------

/// Sends a prompt, returns the reply text. Transport failures throw
/// AdvisorUnavailableError.
class Advisor {
 public:
  virtual ~Advisor() = default;
  virtual std::string ask(const std::string& prompt) = 0;
};

/// Replays canned replies in order.
class ScriptedAdvisor : public Advisor {
 public:
  explicit ScriptedAdvisor(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string ask(const std::string& prompt) override {
    prompts_.push_back(prompt);
    if (next_ >= replies_.size()) throw AdvisorUnavailableError("scripted advisor has no replies left");
    return replies_[next_++];
  }
  const std::vector<std::string>& prompts() const { return prompts_; }

 private:
  std::vector<std::string> replies_;
  std::vector<std::string> prompts_;
  std::size_t next_ = 0;
};

struct AdvisorBrief {
  std::string task = "image-text retrieval";
  std::string dataset = "paired image-caption embeddings";
  ConnectorKind connector = ConnectorKind::Mlp1;
};

inline std::string render_advisor_prompt(const ModelZoo& zoo, const AdvisorBrief& brief) {
  std::ostringstream os;
  auto list = [&](const std::vector<EncoderHandle>& side) {
    for (const auto& e : side) {
      os << "- " << e.id << ": embedding dim " << e.dim << ", " << e.param_count << " parameters";
      if (e.unimodal_score) os << ", unimodal score " << *e.unimodal_score;
      os << '\n';
    }
  };
  os << "Choose one image encoder and one text encoder to join with a trained connector.\n"
     << "Task: " << brief.task << '\n'
     << "Dataset: " << brief.dataset << '\n'
     << "Connector: " << to_string(brief.connector) << ", " << connector_depth(brief.connector)
     << " hidden layer(s)\n"
     << "Image encoders:\n";
  list(zoo.encoders_a());
  os << "Text encoders:\n";
  list(zoo.encoders_b());
  os << "Answer with the pair expected to score highest, formatted as "
        "(image_encoder, text_encoder) using the ids above.\n";
  return os.str();
}

/// First bracketed two-element tuple in `reply`, names trimmed of spaces,
/// quotes and backticks.
inline std::optional<std::pair<std::string, std::string>> find_pair_tuple(const std::string& reply) {
  static const std::regex tuple(R"(\(\s*([^(),\n]+?)\s*,\s*([^(),\n]+?)\s*\))");
  std::smatch m;
  if (!std::regex_search(reply, m, tuple)) return std::nullopt;
  auto clean = [](std::string s) {
    const std::string junk = " \t\"'`*";
    const auto b = s.find_first_not_of(junk);
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(junk);
    return s.substr(b, e - b + 1);
  };
  auto a = clean(m[1].str()), b = clean(m[2].str());
  if (a.empty() || b.empty()) return std::nullopt;
  return std::make_pair(a, b);
}

/// Pair named by an advisor reply. No tuple: std::nullopt. A tuple naming
/// an encoder outside the zoo: AdvisorParseError.
inline std::optional<std::size_t> parse_advisor_reply(const std::string& reply, const ModelZoo& zoo) {
  auto t = find_pair_tuple(reply);
  if (!t) return std::nullopt;
  auto find = [](const std::vector<EncoderHandle>& side, const std::string& id) {
    for (std::size_t i = 0; i < side.size(); ++i)
      if (side[i].id == id) return std::optional<std::size_t>(i);
    return std::optional<std::size_t>();
  };
  auto n = find(zoo.encoders_a(), t->first);
  if (!n) throw AdvisorParseError("advisor named unknown image encoder '" + t->first + "'");
  auto m = find(zoo.encoders_b(), t->second);
  if (!m) throw AdvisorParseError("advisor named unknown text encoder '" + t->second + "'");
  return zoo.pair_index(*n, *m);
}

/// Asks the advisor (one retry on a malformed reply) and returns the pair.
inline std::size_t ask_for_pair(Advisor& advisor, const ModelZoo& zoo, const AdvisorBrief& brief,
                                std::vector<std::string>* replies = nullptr) {
  const auto prompt = render_advisor_prompt(zoo, brief);
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto reply = advisor.ask(prompt);
    if (replies) replies->push_back(reply);
    if (auto k = parse_advisor_reply(reply, zoo)) return *k;
  }
  throw AdvisorParseError("advisor reply has no (image_encoder, text_encoder) tuple after a retry");
}

inline StrategyOutcome run_ask_advisor(const SearchContext& ctx, Advisor& advisor,
                                       const AdvisorBrief& brief) {
  std::vector<std::string> replies;
  const auto k = ask_for_pair(advisor, ctx.zoo, brief, &replies);
  auto o = run_single_pair(ctx, "ask", k);
  o.details["replies"] = replies;
  return o;
}

// ---------------------------------------------------------------------------
// AutoPair
// ---------------------------------------------------------------------------

/// One candidate pair as AutoPair sees it.
class AutoPairArm {
 public:
  virtual ~AutoPairArm() = default;
  virtual std::uint64_t steps_per_epoch() const = 0;
  virtual bool done() const = 0;
  virtual Flops next_step_flops() const = 0;
  virtual void step() = 0;
  virtual double evaluate() = 0;
};

struct AutoPairRound {
  std::vector<std::size_t> survivors_before;
  std::vector<double> metrics;  // aligned with survivors_before
  std::vector<std::size_t> survivors_after;
  Flops flops = 0;  // spent in this round
  bool partial = false;
  bool final_phase = false;
};

struct AutoPairTrace {
  std::vector<AutoPairRound> rounds;
  std::vector<std::size_t> survivors;
  Flops spent = 0;
  bool partial = false;
};

/// Median of `v` (mean of the middle two on an even count).
inline double median(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

/// Survivors of one prune: metric strictly above the median. If that
/// leaves nobody (all tied), the best arm stays, ties to the lower index.
inline std::vector<std::size_t> prune_at_median(const std::vector<std::size_t>& arms,
                                                const std::vector<double>& metrics) {
  const double med = median(metrics);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < arms.size(); ++i)
    if (metrics[i] > med) keep.push_back(arms[i]);
  if (keep.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < arms.size(); ++i)
      if (metrics[i] > metrics[best]) best = i;
    keep.push_back(arms[best]);
  }
  return keep;
}

/// Rounds of train/evaluate/prune under a FLOPs budget. No step starts
/// unless its full cost fits. A lone survivor trains until the budget or
/// its schedule runs out.
inline AutoPairTrace autopair(std::vector<AutoPairArm*> arms, Flops budget,
                              std::size_t epochs_per_round = 2) {
  if (arms.empty()) throw ConfigError("autopair needs at least one pair");
  if (budget == 0) throw ConfigError("autopair budget must be positive");
  if (epochs_per_round == 0) throw ConfigError("epochs_per_round must be positive");
  AutoPairTrace tr;
  for (std::size_t i = 0; i < arms.size(); ++i) tr.survivors.push_back(i);
  bool exhausted = false;
  auto try_step = [&](AutoPairArm& a, Flops& round_flops) {
    const Flops f = a.next_step_flops();
    if (f > budget - tr.spent) {
      exhausted = true;
      return false;
    }
    a.step();
    tr.spent += f;
    round_flops += f;
    return true;
  };
  while (true) {
    AutoPairRound r;
    r.survivors_before = tr.survivors;
    if (tr.survivors.size() == 1) {
      r.final_phase = true;
      auto& a = *arms[tr.survivors[0]];
      while (!a.done() && try_step(a, r.flops)) {
      }
      r.metrics = {a.evaluate()};
      r.survivors_after = tr.survivors;
      tr.rounds.push_back(std::move(r));
      break;
    }
    for (auto i : tr.survivors) {
      auto& a = *arms[i];
      const std::uint64_t steps = epochs_per_round * a.steps_per_epoch();
      for (std::uint64_t s = 0; s < steps && !a.done(); ++s)
        if (!try_step(a, r.flops)) break;
      if (exhausted) break;
    }
    for (auto i : tr.survivors) r.metrics.push_back(arms[i]->evaluate());
    if (exhausted) {
      r.partial = true;
      tr.partial = true;
      r.survivors_after = tr.survivors;
      tr.rounds.push_back(std::move(r));
      break;
    }
    tr.survivors = prune_at_median(tr.survivors, r.metrics);
    r.survivors_after = tr.survivors;
    tr.rounds.push_back(std::move(r));
  }
  return tr;
}

namespace detail {

class DirectArm : public AutoPairArm {
 public:
  DirectArm(const SearchContext& ctx, std::size_t k)
      : ctx_(ctx), k_(k), t_(ctx.zoo, ctx.data, k, ctx.layouts.at(k), ctx.direct) {}
  std::uint64_t steps_per_epoch() const override { return t_.steps_per_epoch(); }
  bool done() const override { return t_.done(); }
  Flops next_step_flops() const override { return t_.next_step_flops(); }
  void step() override { t_.step(); }
  double evaluate() override {
    const double m = evaluate_pair(ctx_, k_, t_.theta().detach());
    if (!t_.records().empty()) t_.records().back().metric = m;
    return m;
  }
  const DirectTrainer& trainer() const { return t_; }

 private:
  const SearchContext& ctx_;
  std::size_t k_;
  DirectTrainer t_;
};

}  // namespace detail

/// Ranks an AutoPair trace: final survivors by their last metric, then
/// pruned pairs, later prunes first, each group by its last metric.
inline std::vector<RankedPair> autopair_ranking(const AutoPairTrace& tr,
                                                const std::vector<std::string>& names) {
  const std::size_t n = names.size();
  std::vector<double> last(n, 0.0);
  std::vector<std::size_t> out_round(n, tr.rounds.size());
  for (std::size_t r = 0; r < tr.rounds.size(); ++r) {
    const auto& rd = tr.rounds[r];
    for (std::size_t i = 0; i < rd.survivors_before.size(); ++i) {
      const auto k = rd.survivors_before[i];
      last[k] = rd.metrics[i];
      if (std::find(rd.survivors_after.begin(), rd.survivors_after.end(), k) == rd.survivors_after.end())
        out_round[k] = r;
    }
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (out_round[a] != out_round[b]) return out_round[a] > out_round[b];
    if (last[a] != last[b]) return last[a] > last[b];
    return a < b;
  });
  std::vector<RankedPair> ranking;
  for (auto k : idx) ranking.push_back({k, names[k], last[k], false, ""});
  return ranking;
}

/// AutoPair over direct connector trainers. Every pair's learning-rate
/// schedule spans the direct config's epochs; rounds resume it.
inline StrategyOutcome run_autopair(const SearchContext& ctx, Flops budget,
                                    std::size_t epochs_per_round = 2) {
  detail::check_context(ctx);
  const std::size_t nm = ctx.zoo.num_pairs();
  std::vector<std::unique_ptr<detail::DirectArm>> arms;
  std::vector<AutoPairArm*> ptrs;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < nm; ++k) {
    arms.push_back(std::make_unique<detail::DirectArm>(ctx, k));
    ptrs.push_back(arms.back().get());
    names.push_back(ctx.zoo.pair_name(k));
  }
  const auto tr = autopair(ptrs, budget, epochs_per_round);

  StrategyOutcome o;
  o.strategy = "autopair";
  o.ranking = autopair_ranking(tr, names);
  o.flops_total = tr.spent;
  o.partial = tr.partial;
  auto& jr = o.details["rounds"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < tr.rounds.size(); ++r) {
    const auto& rd = tr.rounds[r];
    o.stages.push_back({(rd.final_phase ? "final " : "round ") + std::to_string(r), rd.flops});
    jr.push_back(nlohmann::ordered_json{{"survivors_before", rd.survivors_before},
                                        {"metrics", rd.metrics},
                                        {"survivors_after", rd.survivors_after},
                                        {"flops", rd.flops},
                                        {"partial", rd.partial},
                                        {"final", rd.final_phase}});
  }
  o.details["budget"] = budget;
  for (std::size_t k = 0; k < nm; ++k) {
    const auto& t = arms[k]->trainer();
    if (t.flops() > 0) o.pair_flops[k] = t.flops();
    o.records.insert(o.records.end(), t.records().begin(), t.records().end());
  }
  o.winner_theta = arms[o.winner().k]->trainer().theta().detach();
  return o;
}

// ---------------------------------------------------------------------------
// Closed-form bills
// ---------------------------------------------------------------------------

/// Generator multiply-accumulates per conditioning row for `c`.
inline std::uint64_t generator_macs_per_row(const HyperNetConfig& c) {
  std::uint64_t macs = 0;
  std::size_t fan_in = c.cond_dim;
  for (auto w : c.generator_hidden) {
    macs += std::uint64_t(fan_in) * w;
    fan_in = w;
  }
  return macs + std::uint64_t(fan_in) * c.slab_size;
}

inline Flops predict_grid_flops(const SearchContext& ctx, std::size_t train_rows) {
  Flops total = 0;
  for (std::size_t k = 0; k < ctx.zoo.num_pairs(); ++k)
    total += predict_direct_flops(ctx.layouts.at(k), ctx.zoo.encoder_a(k).param_count,
                                  ctx.zoo.encoder_b(k).param_count, train_rows,
                                  ctx.direct.batch_data, ctx.direct.epochs);
  return total;
}

inline Flops predict_pair_flops(const SearchContext& ctx, std::size_t k, const TrainConfig& c) {
  return predict_direct_flops(ctx.layouts.at(k), ctx.zoo.encoder_a(k).param_count,
                              ctx.zoo.encoder_b(k).param_count, ctx.data.train.size(),
                              c.batch_data, c.epochs);
}

/// HYMA bill by walking the pair sampler over the whole schedule.
inline Flops predict_hyma_flops(const SearchContext& ctx) {
  const auto& c = ctx.hyma.train;
  const auto hcfg = hyma_hypernet_config(ctx);
  const std::uint64_t macs = generator_macs_per_row(hcfg);
  const std::size_t rows = ctx.data.train.size();
  if (c.batch_data == 0 || c.batch_data > rows) throw ConfigError("B_d must lie in [1, |train|]");
  const std::uint64_t spe = (rows + c.batch_data - 1) / c.batch_data;
  const std::uint64_t total = c.epochs * spe;
  const auto pair_seed = derive_seed(c.seed, "pairs");
  Flops f = 0;
  for (std::uint64_t s = 0; s < total; ++s) {
    const std::uint64_t b = std::min<std::uint64_t>(c.batch_data, rows - (s % spe) * c.batch_data);
    for (auto k : pair_sampler(ctx.zoo.num_pairs(), c.batch_models, pair_seed, s)) {
      f += flops_per_train_step(ctx.layouts[k], b) +
           encoder_embed_flops(ctx.zoo.encoder_a(k).param_count, ctx.zoo.encoder_b(k).param_count, b) +
           3 * 2 * Flops(ctx.layouts[k].layers.size()) * macs;
      if (hcfg.mode == ConditioningMode::EncoderCompression)
        f += 3 * 2 * Flops(hcfg.feature_dim) * hcfg.cond_dim;
    }
  }
  return f;
}

/// Samples each pair sees under model mini-batching: the total sample
/// count divided by NM / B_m.
inline double hyma_pair_exposure(double total_samples, std::size_t num_pairs, std::size_t batch_models) {
  if (batch_models == 0) throw ConfigError("B_m must be positive");
  return total_samples / (double(num_pairs) / double(batch_models));
}

}  // namespace stitch
