// Copyright 2026 The stitchkit Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(STITCH_CLI_PATH) + " " + args + " 2>&1";
  Result r{0, {}};
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, {}};
  char buf[4096];
  while (auto n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ordered_json config(bool single_pair = false) {
  auto j = ordered_json::parse(R"cfg({
    "schema_version": 1,
    "seed": 5,
    "output_dir": "runs",
    "zoo": {"synthetic": {
      "samples": 96, "latent_dim": 3, "val_fraction": 0.25,
      "image_encoders": [
        {"id": "img-a", "dim": 5, "quality": 1.0, "unimodal_score": 0.7,
         "param_count": 86000000},
        {"id": "img-b", "dim": 4, "quality": 0.3, "unimodal_score": 0.2,
         "param_count": 22000000}],
      "text_encoders": [
        {"id": "txt-a", "dim": 6, "quality": 0.9, "unimodal_score": 0.5,
         "param_count": 63000000}]}},
    "connector": {"kind": "linear"},
    "direct": {"batch_data": 16, "epochs": 2, "lr": 0.02, "warmup_steps": 2},
    "hyma": {"batch_data": 16, "batch_models": 2, "epochs": 2, "cond_dim": 4,
             "generator_hidden": [8]},
    "eval": {"split": "val", "k": 3},
    "strategies": {"run": ["grid", "hyma"]}
  })cfg");
  if (single_pair) j["zoo"]["synthetic"]["image_encoders"].erase(1);
  return j;
}

fs::path scratch(const std::string& name, const ordered_json& cfg) {
  auto d = fs::temp_directory_path() / ("stitch_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  std::ofstream(d / "run.json") << cfg.dump(2);
  return d;
}

TEST(Cli, UnknownStrategyIsAUsageError) {
  auto d = scratch("usage", config());
  auto r = run("search --config " + (d / "run.json").string() + " --strategy bandit");
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST(Cli, GenSyntheticIsDeterministic) {
  auto d = scratch("gen", config());
  const auto cfg = (d / "run.json").string();
  auto r1 = run("gen-synthetic --config " + cfg + " --out " + (d / "z1").string());
  auto r2 = run("gen-synthetic --config " + cfg + " --out " + (d / "z2").string());
  ASSERT_EQ(r1.code, 0) << r1.out;
  ASSERT_EQ(r2.code, 0) << r2.out;
  EXPECT_NE(r1.out.find("1. img-a+txt-a"), std::string::npos) << r1.out;
  EXPECT_EQ(slurp(d / "z1/manifest.json"), slurp(d / "z2/manifest.json"));
  EXPECT_EQ(slurp(d / "z1/banks/img-b.emb"), slurp(d / "z2/banks/img-b.emb"));
  auto m = ordered_json::parse(slurp(d / "z1/manifest.json"));
  std::map<std::string, int> dims;
  for (auto& e : m["encoders"]) dims[e["id"].get<std::string>()] = e["dim"].get<int>();
  EXPECT_EQ(dims["img-a"], 5);
  EXPECT_EQ(dims["img-b"], 4);
  EXPECT_EQ(dims["txt-a"], 6);
}

TEST(Cli, GridOnASinglePairSucceeds) {
  auto d = scratch("single", config(true));
  auto r = run("search --config " + (d / "run.json").string() + " --strategy grid");
  ASSERT_EQ(r.code, 0) << r.out;
  auto o = ordered_json::parse(slurp(d / "runs/grid/outcome.json"));
  EXPECT_EQ(o["ranking"].size(), 1u);
  EXPECT_EQ(o["winner"]["name"], "img-a+txt-a");
  auto run_json = ordered_json::parse(slurp(d / "runs/grid/run.json"));
  EXPECT_EQ(run_json["status"], "complete");
  EXPECT_TRUE(fs::exists(d / "runs/grid/checkpoint.stck"));
}

TEST(Cli, SearchThenReportAndEval) {
  auto d = scratch("report", config());
  const auto cfg = (d / "run.json").string();
  auto r = run("search --config " + cfg);
  ASSERT_EQ(r.code, 0) << r.out;
  auto rep = run("report --runs " + (d / "runs").string() + " --csv " + (d / "r.csv").string());
  ASSERT_EQ(rep.code, 0) << rep.out;
  EXPECT_NE(rep.out.find("grid/hyma"), std::string::npos) << rep.out;
  auto csv = slurp(d / "r.csv");
  EXPECT_EQ(csv.rfind("task,dataset,connector,metric,value\n", 0), 0u) << csv;
  EXPECT_NE(csv.find("ratio:grid/hyma"), std::string::npos);

  auto ev = run("eval --config " + cfg + " --checkpoint " + (d / "runs/hyma/checkpoint.stck").string());
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("img-b+txt-a"), std::string::npos) << ev.out;

  auto o = ordered_json::parse(slurp(d / "runs/grid/outcome.json"));
  auto winner = o["winner"]["metric"].get<double>();
  auto evg = run("eval --config " + cfg + " --checkpoint " + (d / "runs/grid/checkpoint.stck").string());
  ASSERT_EQ(evg.code, 0) << evg.out;
  char expect[32];
  std::snprintf(expect, sizeof expect, "%.4f", winner);
  EXPECT_NE(evg.out.find(expect), std::string::npos) << evg.out;
}

TEST(Cli, RankCompareAgainstItselfAndReversed) {
  auto d = scratch("rank", config());
  ASSERT_EQ(run("search --config " + (d / "run.json").string() + " --strategy grid").code, 0);
  const auto grid = d / "runs/grid/outcome.json";
  auto self = run("rank-compare --oracle " + grid.string() + " --candidate " + grid.string());
  ASSERT_EQ(self.code, 0) << self.out;
  EXPECT_NE(self.out.find("NDCG@1  1.0000"), std::string::npos) << self.out;
  EXPECT_NE(self.out.find("Spearman rho  1.0000"), std::string::npos) << self.out;

  auto o = ordered_json::parse(slurp(grid));
  ordered_json reversed = o;
  reversed["ranking"] = ordered_json::array();
  for (auto it = o["ranking"].rbegin(); it != o["ranking"].rend(); ++it) reversed["ranking"].push_back(*it);
  std::ofstream(d / "reversed.json") << reversed.dump();
  auto rev = run("rank-compare --oracle " + grid.string() + " --candidate " + (d / "reversed.json").string());
  ASSERT_EQ(rev.code, 0) << rev.out;
  EXPECT_NE(rev.out.find("Spearman rho  -1.0000"), std::string::npos) << rev.out;
}

TEST(Cli, FlopsPredictionMatchesMeasuredGridBill) {
  auto cfg_json = config();
  cfg_json["hyma"]["batch_models"] = 1;
  auto d = scratch("flops", cfg_json);
  const auto cfg = (d / "run.json").string();
  auto f = run("flops --config " + cfg);
  ASSERT_EQ(f.code, 0) << f.out;
  auto predicted = ordered_json::parse(f.out);
  ASSERT_EQ(run("search --config " + cfg).code, 0);
  auto grid = ordered_json::parse(slurp(d / "runs/grid/outcome.json"));
  auto hyma = ordered_json::parse(slurp(d / "runs/hyma/outcome.json"));
  EXPECT_EQ(predicted["grid"], grid["flops_total"]);
  EXPECT_EQ(predicted["hyma"], hyma["flops_total"]);
  EXPECT_LT(predicted["hyma"].get<double>(), predicted["grid"].get<double>());
}

TEST(Cli, RerunIsByteIdentical) {
  auto d = scratch("rerun", config());
  const auto cfg = (d / "run.json").string();
  const auto a = d / "a", b = d / "b";
  ASSERT_EQ(run("search --config " + cfg + " --no-wall-clock --out " + a.string()).code, 0);
  ASSERT_EQ(run("search --config " + cfg + " --no-wall-clock --jobs 2 --out " + b.string()).code, 0);
  for (auto s : {"grid", "hyma"})
    for (auto f : {"outcome.json", "records.jsonl", "checkpoint.stck"})
      EXPECT_EQ(slurp(a / s / f), slurp(b / s / f)) << s << "/" << f;
}

TEST(Cli, MissingConfigExitsNonZero) {
  auto d = scratch("bad", config());
  std::ofstream(d / "broken.json") << "{\"schema_version\": 1, \"seed\": 1, \"bogus\": 3}";
  auto r = run("flops --config " + (d / "broken.json").string());
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("error"), std::string::npos);
}

}  // namespace
