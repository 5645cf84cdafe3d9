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

// stitch: command-line driver for zoo generation, pair search, evaluation
// and reporting.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stitch/config.hpp"
#include "stitch/http_advisor.hpp"
#include "stitch/metrics.hpp"
#include "stitch/search.hpp"
#include "stitch/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace stitch::cli {

struct UsageError : Error {
  using Error::Error;
};

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error("failed to write " + tmp.string());
  }
  fs::rename(tmp, path);
}

ordered_json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

ordered_json report_key_json(const ReportKey& k) {
  return {{"task", k.task}, {"dataset", k.dataset}, {"connector", k.connector}};
}

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

int gen_synthetic(const std::string& config_path, const std::string& out) {
  auto cfg = load_run_config(config_path);
  const auto dir = out.empty() ? resolve(cfg, cfg.output_dir) / "zoo" : fs::path(out);
  auto z = load_zoo(cfg);
  write_synthetic_zoo(cfg, z, dir);
  std::cout << "wrote " << z.zoo.num_pairs() << "-pair zoo to " << (dir / "manifest.json").string()
            << "\nplanted order (best first):\n";
  std::size_t rank = 1;
  for (auto k : planted_order(cfg, z.zoo)) {
    const auto pc = z.zoo.pair(k);
    std::cout << "  " << rank++ << ". " << z.zoo.pair_name(k) << "  (q = "
              << cfg.synthetic.encoders_a[pc.n].spec.quality << ", "
              << cfg.synthetic.encoders_b[pc.m].spec.quality << ")\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

std::unique_ptr<Advisor> make_advisor(const AdvisorSettings& s) {
  if (s.kind == "http") return std::make_unique<HttpAdvisor>(s.endpoint, s.model, s.key_env, s.timeout_s);
  return std::make_unique<ScriptedAdvisor>(s.replies);
}

StrategyOutcome run_strategy(const std::string& name, const RunConfig& cfg, const SearchContext& ctx) {
  if (name == "hyma") return run_hyma_search(ctx);
  if (name == "grid") return run_grid_search(ctx);
  if (name == "random") return run_random(ctx, cfg.strategies.random_trials);
  if (name == "unit1") return run_unit1(ctx);
  if (name == "ask") {
    auto advisor = make_advisor(cfg.strategies.ask);
    return run_ask_advisor(ctx, *advisor, cfg.strategies.ask.brief);
  }
  if (name == "autopair") {
    const Flops budget = cfg.strategies.autopair_budget.value_or(predict_hyma_flops(ctx));
    auto o = run_autopair(ctx, budget, cfg.strategies.autopair_epochs_per_round);
    o.details["budget_source"] = cfg.strategies.autopair_budget ? "config" : "hyma";
    return o;
  }
  if (name == "cgs") return run_cgs(ctx, cfg.strategies.cgs_fraction);
  throw UsageError("unknown strategy '" + name + "'");
}

Checkpoint outcome_checkpoint(const StrategyOutcome& o, const RunConfig& cfg) {
  Checkpoint ck;
  ck.config = {{"run", cfg.echo}, {"strategy", o.strategy}};
  ck.step = o.records.empty() ? 0 : o.records.back().step + 1;
  ck.flops_cum = o.flops_total;
  ck.seed = cfg.seed;
  if (o.hypernet) {
    ck.config["hypernet"] = to_json(o.hypernet->config);
    for (const auto& leaf : o.hypernet->leaves())
      ck.blobs.push_back(detail::to_blob(leaf.name, leaf.tensor.shape(), leaf.tensor.data()));
  } else if (o.winner_theta.defined()) {
    ck.config["pair"] = o.winner().k;
    ck.blobs.push_back(detail::to_blob("theta.k" + std::to_string(o.winner().k),
                                       o.winner_theta.shape(), o.winner_theta.data()));
  }
  return ck;
}

void search_one(const std::string& name, const RunConfig& cfg, const SearchContext& ctx,
                const fs::path& out_dir, bool wall_clock) {
  const auto dir = out_dir / name;
  fs::create_directories(dir);
  ordered_json run{{"schema_version", 1},
                   {"command", "search"},
                   {"strategy", name},
                   {"status", "running"},
                   {"report", report_key_json(cfg.report)},
                   {"config", cfg.echo}};
  write_file(dir / "run.json", run.dump(2) + "\n");
  write_file(dir / "records.jsonl", ordered_json{{"config", cfg.echo}}.dump() + "\n");
  StrategyOutcome o;
  try {
    o = run_strategy(name, cfg, ctx);
  } catch (const std::exception& e) {
    run["status"] = "aborted";
    run["error"] = e.what();
    write_file(dir / "run.json", run.dump(2) + "\n");
    throw Error("search --strategy " + name + ": " + e.what());
  }
  if (!wall_clock)
    for (auto& r : o.records) r.wall_ms = 0.0;
  append_records(dir / "records.jsonl", o.records, name);
  auto outcome = to_json(o);
  outcome["config"] = cfg.echo;
  write_file(dir / "outcome.json", outcome.dump(2) + "\n");
  save_checkpoint(dir / "checkpoint.stck", outcome_checkpoint(o, cfg));
  run["status"] = "complete";
  run["outputs"] = {"outcome.json", "records.jsonl", "checkpoint.stck"};
  write_file(dir / "run.json", run.dump(2) + "\n");

  const auto& w = o.winner();
  std::cout << name << ": winner " << w.name << " metric " << fmt(w.metric);
  if (o.reported_metric) std::cout << " (mean " << fmt(*o.reported_metric) << ")";
  std::cout << ", " << o.flops_total << " FLOPs" << (o.partial ? ", partial" : "") << " -> "
            << dir.string() << "\n";
}

int search(const std::string& config_path, const std::string& strategy, const std::string& out,
           std::size_t jobs, bool wall_clock) {
  auto cfg = load_run_config(config_path);
  std::vector<std::string> names = strategy.empty() ? cfg.strategies.run : std::vector{strategy};
  if (names.empty()) throw UsageError("no strategy: pass --strategy or set strategies.run");
  const auto out_dir = out.empty() ? resolve(cfg, cfg.output_dir) : fs::path(out);
  auto z = load_zoo(cfg);
  auto ctx = make_search_context(cfg, z, jobs);
  for (const auto& n : names) search_one(n, cfg, ctx, out_dir, wall_clock);
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int eval(const std::string& config_path, const std::string& checkpoint, std::optional<std::size_t> pair) {
  auto cfg = load_run_config(config_path);
  auto z = load_zoo(cfg);
  auto ctx = make_search_context(cfg, z);
  const auto ck = load_checkpoint(checkpoint);
  std::vector<std::pair<std::size_t, Tensor>> thetas;
  const bool hyper = std::any_of(ck.blobs.begin(), ck.blobs.end(),
                                 [](const Blob& b) { return b.name == "layer_emb"; });
  if (hyper) {
    auto state = init_hypernet(hyma_hypernet_config(ctx), ctx.layouts, cfg.seed);
    for (auto& leaf : state.leaves()) {
      const auto& b = ck.blob(leaf.name);
      if (b.shape != leaf.tensor.shape())
        throw FormatError("checkpoint blob '" + b.name + "' does not match the config", 0);
      detail::from_blob(b, leaf.tensor.mutable_data());
    }
    for (std::size_t k = 0; k < z.zoo.num_pairs(); ++k) {
      if (pair && *pair != k) continue;
      Tensor feats = embed_batch(z.dataset.banks_a[z.zoo.pair(k).n], z.dataset.train);
      thetas.emplace_back(k, generate(state, k, ctx.layouts[k], &feats).detach());
    }
  } else {
    for (const auto& b : ck.blobs) {
      if (b.name.rfind("theta.k", 0) != 0) continue;
      const auto k = static_cast<std::size_t>(std::stoull(b.name.substr(7)));
      if (k >= z.zoo.num_pairs()) throw FormatError("checkpoint names pair outside the zoo", 0);
      if (pair && *pair != k) continue;
      if (b.shape != Shape{ctx.layouts[k].total_params()})
        throw FormatError("checkpoint blob '" + b.name + "' does not match the layout", 0);
      Tensor t(b.shape, std::vector<real>(b.values.begin(), b.values.end()));
      thetas.emplace_back(k, t);
    }
  }
  if (thetas.empty()) throw ArgumentError("checkpoint holds no connector for the requested pair");
  std::cout << "pair  name  " << ctx.task.name << "\n";
  for (const auto& [k, th] : thetas)
    std::cout << k << "  " << z.zoo.pair_name(k) << "  " << fmt(evaluate_pair(ctx, k, th)) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// rank-compare
// ---------------------------------------------------------------------------

struct Aligned {
  std::vector<std::size_t> pairs;          // sorted pair ids
  std::vector<double> reference;           // oracle metric per aligned pair
  std::vector<std::size_t> candidate_order;  // aligned indices, best first
  std::vector<double> candidate_score;     // higher is better, from rank position
};

Aligned align(const StrategyOutcome& oracle, const StrategyOutcome& cand) {
  auto ref = metric_by_pair(oracle);
  std::set<std::size_t> cset;
  for (const auto& r : cand.ranking) cset.insert(r.k);
  std::set<std::size_t> rset;
  for (auto& [k, m] : ref) rset.insert(k);
  if (cset != rset) throw ArgumentError("rankings cover different pair sets");
  Aligned a;
  std::map<std::size_t, std::size_t> pos;
  for (auto& [k, m] : ref) {
    pos[k] = a.pairs.size();
    a.pairs.push_back(k);
    a.reference.push_back(m);
  }
  a.candidate_score.resize(a.pairs.size());
  for (std::size_t i = 0; i < cand.ranking.size(); ++i) {
    const auto idx = pos.at(cand.ranking[i].k);
    a.candidate_order.push_back(idx);
    a.candidate_score[idx] = -double(i);
  }
  return a;
}

int rank_compare(const std::string& oracle_path, const std::string& cand_path,
                 std::vector<std::size_t> ks, const std::string& csv_path, const ReportKey& key) {
  const auto oracle = outcome_from_json(read_json(oracle_path));
  const auto cand = outcome_from_json(read_json(cand_path));
  const auto a = align(oracle, cand);
  const std::size_t n = a.pairs.size();
  if (ks.empty()) ks = default_ndcg_ks(n);
  std::vector<CsvRow> rows;
  std::cout << "oracle " << oracle.strategy << " vs candidate " << cand.strategy << " over " << n
            << " pairs\n";
  for (auto k : ks) {
    const double v = ndcg_at_k(std::span<const std::size_t>(a.candidate_order), a.reference, k);
    std::cout << "  NDCG@" << k << "  " << fmt(v) << "\n";
    rows.push_back({key, "ndcg@" + std::to_string(k), v});
  }
  try {
    const double rho = spearman_rho(a.candidate_score, a.reference);
    std::cout << "  Spearman rho  " << fmt(rho) << "\n";
    rows.push_back({key, "spearman", rho});
  } catch (const Error& e) {
    std::cout << "  Spearman rho  undefined (" << e.what() << ")\n";
  }
  if (!csv_path.empty()) {
    std::ostringstream os;
    write_csv(os, rows);
    write_file(csv_path, os.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// flops
// ---------------------------------------------------------------------------

int flops(const std::string& config_path) {
  auto cfg = load_run_config(config_path);
  auto z = load_zoo(cfg);
  auto ctx = make_search_context(cfg, z);
  const std::size_t nm = z.zoo.num_pairs();
  const std::size_t rows = z.dataset.train.size();

  ordered_json j;
  j["num_pairs"] = nm;
  j["train_rows"] = rows;
  const Flops grid = predict_grid_flops(ctx, rows);
  j["grid"] = grid;
  Flops lo = 0, hi = 0;
  auto& per = j["per_pair"] = ordered_json::array();
  for (std::size_t k = 0; k < nm; ++k) {
    const Flops f = predict_pair_flops(ctx, k, ctx.direct);
    per.push_back(ordered_json{{"k", k}, {"name", z.zoo.pair_name(k)}, {"flops", f}});
    lo = k == 0 ? f : std::min(lo, f);
    hi = std::max(hi, f);
  }
  j["best_guess"] = ordered_json{{"min", lo}, {"max", hi}};
  const Flops hyma = predict_hyma_flops(ctx);
  j["hyma"] = hyma;
  Flops random = 0;
  for (std::size_t t = 0; t < cfg.strategies.random_trials; ++t)
    random += predict_pair_flops(ctx, random_trial_pair(cfg.seed, nm, t), ctx.direct);
  j["random"] = random;
  try {
    j["unit1"] = predict_pair_flops(ctx, unit1_pair(z.zoo), ctx.direct);
  } catch (const ConfigError&) {
    j["unit1"] = nullptr;
  }
  j["ask"] = ordered_json{{"min", lo}, {"max", hi}};
  j["autopair_budget"] = cfg.strategies.autopair_budget.value_or(hyma);
  const auto sub = data_subset(z.dataset.train, cfg.strategies.cgs_fraction,
                               derive_seed(cfg.seed, "data-subset"));
  j["cgs"] = predict_grid_flops(ctx, sub.size());
  const double total_samples = double(cfg.hyma.train.epochs) * double(rows);
  j["hyma_samples_total"] = total_samples;
  j["hyma_samples_per_pair"] = hyma_pair_exposure(total_samples, nm, cfg.hyma.train.batch_models);
  j["grid_over_hyma"] = double(grid) / double(hyma);
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int report(const std::string& runs_dir, const std::string& csv_path) {
  std::map<std::string, StrategyOutcome> found;
  for (const auto& name : strategy_names()) {
    const auto p = fs::path(runs_dir) / name / "outcome.json";
    if (fs::exists(p)) found.emplace(name, outcome_from_json(read_json(p)));
  }
  if (!found.count("hyma") || !found.count("grid"))
    throw ArgumentError("report needs hyma and grid outcomes under " + runs_dir);
  ReportKey key{"retrieval", "synthetic", "mlp1"};
  const auto run_json = fs::path(runs_dir) / "hyma" / "run.json";
  if (fs::exists(run_json)) {
    auto r = read_json(run_json);
    if (r.contains("report")) {
      key.task = r["report"].value("task", key.task);
      key.dataset = r["report"].value("dataset", key.dataset);
      key.connector = r["report"].value("connector", key.connector);
    }
  }
  const auto bg = best_guess(found.at("grid"));
  found.emplace("best-guess", bg);

  std::cout << "strategy      winner                      metric    FLOPs\n";
  std::map<std::string, double> winners;
  for (const auto& [name, o] : found) {
    const double m = o.reported_metric.value_or(o.winner().metric);
    winners[name] = m;
    std::cout << std::left << std::setw(14) << name << std::setw(28) << o.winner().name << std::setw(10)
              << fmt(m) << o.flops_total << (o.partial ? " (partial)" : "") << "\n";
  }
  const auto eff = efficiency_ratios(found.at("hyma").flops_total, found.at("grid").flops_total,
                                     bg.flops_total);
  std::cout << "efficiency: grid/hyma " << fmt(eff.grid_over_hyma, 2) << "x, best-guess/hyma "
            << fmt(eff.best_guess_over_hyma, 2) << "x\n";
  const auto deltas = delta_table(key, winners, "hyma");
  std::cout << "delta (hyma - baseline):\n";
  for (const auto& d : deltas) std::cout << "  " << std::setw(12) << d.baseline << fmt(d.delta) << "\n";

  if (!csv_path.empty()) {
    auto rows = to_csv_rows(deltas);
    for (const auto& [name, o] : found) rows.push_back({key, "flops:" + name, double(o.flops_total)});
    rows.push_back({key, "ratio:grid/hyma", eff.grid_over_hyma});
    rows.push_back({key, "ratio:best-guess/hyma", eff.best_guess_over_hyma});
    std::ostringstream os;
    write_csv(os, rows);
    write_file(csv_path, os.str());
  }
  return 0;
}

}  // namespace stitch::cli

int main(int argc, char** argv) {
  using namespace stitch;
  CLI::App app{"stitch: encoder-pair search and connector stitching"};
  app.require_subcommand(1);

  std::string config, out, strategy, checkpoint, oracle, candidate, csv, runs;
  std::size_t jobs = 1;
  bool no_wall_clock = false;
  std::optional<std::size_t> pair;
  std::vector<std::size_t> ks;
  ReportKey key{"retrieval", "synthetic", "mlp1"};

  auto* gen = app.add_subcommand("gen-synthetic", "Write a planted synthetic zoo (banks + manifest)");
  gen->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory (default: <output_dir>/zoo)");

  auto* srch = app.add_subcommand("search", "Run one search strategy end to end");
  srch->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  srch->add_option("--strategy", strategy, "Strategy (default: strategies.run from the config)")
      ->check(CLI::IsMember(strategy_names()));
  srch->add_option("--out", out, "Output directory (default: output_dir from the config)");
  srch->add_option("--jobs", jobs, "Parallel pair trainings")->check(CLI::PositiveNumber);
  srch->add_flag("--no-wall-clock", no_wall_clock, "Write wall_ms as 0 for byte-stable records");

  auto* ev = app.add_subcommand("eval", "Evaluate connectors stored in a checkpoint");
  ev->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--pair", pair, "Only this pair index");

  auto* rc = app.add_subcommand("rank-compare", "NDCG@k and Spearman rho between two outcomes");
  rc->add_option("--oracle", oracle, "Reference outcome.json")->required()->check(CLI::ExistingFile);
  rc->add_option("--candidate", candidate, "Candidate outcome.json")->required()->check(CLI::ExistingFile);
  rc->add_option("--k", ks, "NDCG cut-offs (default: by zoo size)")->delimiter(',');
  rc->add_option("--csv", csv, "Write CSV rows here");
  rc->add_option("--task", key.task, "CSV task column");
  rc->add_option("--dataset", key.dataset, "CSV dataset column");
  rc->add_option("--connector", key.connector, "CSV connector column");

  auto* fl = app.add_subcommand("flops", "Predicted FLOPs bills per strategy, without training");
  fl->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);

  auto* rp = app.add_subcommand("report", "Efficiency ratios and deltas over stored outcomes");
  rp->add_option("--runs", runs, "Directory holding <strategy>/outcome.json")->required()
      ->check(CLI::ExistingDirectory);
  rp->add_option("--csv", csv, "Write CSV rows here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cli::gen_synthetic(config, out);
    if (*srch) return cli::search(config, strategy, out, jobs, !no_wall_clock);
    if (*ev) return cli::eval(config, checkpoint, pair);
    if (*rc) return cli::rank_compare(oracle, candidate, ks, csv, key);
    if (*fl) return cli::flops(config);
    if (*rp) return cli::report(runs, csv);
  } catch (const cli::UsageError& e) {
    std::cerr << "stitch: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "stitch: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
