// Copyright 2026 The FreqAdapter Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "fqa/cli.hpp"
#include "fqa/data.hpp"
#include "fqa/errors.hpp"
#include "fqa/tensor_file.hpp"

using namespace fqa;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "fqa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "fqa_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Tiny problem shared by the training commands.
std::vector<std::string> small(std::vector<std::string> args) {
  for (const char* kv : {"--adapter.d_v=8", "--adapter.d_t=8", "--adapter.h=3", "--adapter.grid_h=4",
                         "--adapter.grid_w=4", "--data.synthetic.d_v=8", "--data.synthetic.d_t=8",
                         "--data.synthetic.grid_h=4", "--data.synthetic.grid_w=4", "--data.synthetic.n_pairs=16",
                         "--data.n_val=8", "--train.batch_size=8", "--train.steps=4", "--train.top_k=2",
                         "--train.eval_every=0", "--train.learning_rate=0.01"}) {
    args.emplace_back(kv);
  }
  return args;
}

std::vector<std::vector<double>> read_csv(const fs::path& p) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<double> row;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST(Config, PrecedenceFlagsOverFileOverDefaults) {
  const fs::path dir = fresh_dir("precedence");
  const fs::path file = dir / "c.json";
  std::ofstream(file) << R"({"adapter": {"h": 5, "w": 0.5}, "seed": 9})";
  const json c = cli::resolve_config(file, std::nullopt, {{"adapter.h", "7"}});
  EXPECT_EQ(c["adapter"]["h"], 7);
  EXPECT_EQ(c["adapter"]["w"], 0.5);
  EXPECT_EQ(c["adapter"]["n_scales"], cli::default_config()["adapter"]["n_scales"]);
  EXPECT_EQ(c["train"]["seed"], 9);
  EXPECT_EQ(cli::resolve_config(file, 11, {})["data"]["synthetic"]["seed"], 11);
  EXPECT_THROW(cli::resolve_config(std::nullopt, std::nullopt, {{"adapter.nope", "1"}}), ConfigError);
  EXPECT_THROW(cli::resolve_config(dir / "missing.json", std::nullopt, {}), IoError);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("codes");
  EXPECT_EQ(invoke({"param-count", "--out", dir.string()}).code, cli::kExitOk);
  EXPECT_EQ(invoke({"param-count", "--out", dir.string(), "--adapter.bogus", "1"}).code, cli::kExitConfig);
  EXPECT_EQ(invoke({"param-count", "--out", dir.string(), "--adapter.h", "0"}).code, cli::kExitConfig);
  EXPECT_EQ(invoke({"no-such-command"}).code, cli::kExitConfig);
  const Result bad = invoke({"verify-props", "--out", dir.string(), "--verify.dims=[16]", "--verify.trials=3",
                             "--verify.curve_dim=16", "--verify.corrupt_basis=true"});
  EXPECT_EQ(bad.code, cli::kExitVerify);
  EXPECT_NE(bad.err.find("orthonormality_d16"), std::string::npos);
  EXPECT_EQ(invoke(small({"train", "--out", dir.string(), "--data.source=file",
                          "--data.train_path=" + (dir / "absent.fqa").string()}))
                .code,
            cli::kExitIo);
  EXPECT_EQ(invoke({"eval", "--out", (dir / "empty").string()}).code, cli::kExitIo);
}

TEST(Cli, VerifyPropsSmall) {
  const fs::path dir = fresh_dir("verify");
  const Result r = invoke({"verify-props", "--out", dir.string(), "--verify.dims=[2,16]", "--verify.trials=10",
                           "--verify.curve_dim=64"});
  EXPECT_EQ(r.code, 0) << r.err;
  const std::string curve = slurp(dir / "concentration_curve.csv");
  EXPECT_EQ(curve.rfind("k,retained_fraction,cosine_similarity\n", 0), 0u);
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 65);
  EXPECT_TRUE(json::parse(slurp(dir / "verify_report.json"))["passed"].get<bool>());
}

TEST(Cli, ParamCountReportsFormula) {
  const fs::path dir = fresh_dir("param");
  const Result r = invoke({"param-count", "--out", dir.string(), "--adapter.d_v=1024", "--adapter.d_t=768",
                           "--adapter.h=32", "--adapter.n_scales=3", "--adapter.grid_h=16", "--adapter.grid_w=16"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("476352"), std::string::npos);
  const json j = json::parse(slurp(dir / "param_count.json"));
  EXPECT_EQ(j["total"], 476352);
  const Result tiny = invoke({"param-count", "--out", dir.string(), "--adapter.d_v=4", "--adapter.d_t=4",
                              "--adapter.h=2", "--adapter.n_scales=1"});
  EXPECT_EQ(json::parse(slurp(dir / "param_count.json"))["total"], 56);
}

TEST(Cli, OutDirFromEnvironmentAndConfigEcho) {
  const fs::path dir = fresh_dir("env");
  ::setenv("FQA_OUT", dir.string().c_str(), 1);
  const Result r = invoke({"param-count", "--seed", "5"});
  ::unsetenv("FQA_OUT");
  EXPECT_EQ(r.code, 0);
  const json echo = json::parse(slurp(dir / "config.json"));
  EXPECT_EQ(echo["command"], "param-count");
  EXPECT_EQ(echo["config"]["seed"], 5);
  EXPECT_EQ(echo["config"]["adapter"]["init"]["seed"], 5);
}

TEST(Cli, TrainIsIdempotent) {
  const fs::path a = fresh_dir("train_a"), b = fresh_dir("train_b");
  ASSERT_EQ(invoke(small({"train", "--out", a.string()})).code, 0);
  ASSERT_EQ(invoke(small({"train", "--out", b.string()})).code, 0);
  for (const char* f : {"report.json", "loss_curve.csv", "checkpoint.fqa"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  const Result e = invoke(small({"eval", "--out", a.string()}));
  EXPECT_EQ(e.code, 0) << e.err;
  EXPECT_TRUE(json::parse(slurp(a / "eval.json")).contains("identity"));
}

TEST(Cli, TrainZeroSteps) {
  const fs::path dir = fresh_dir("zero");
  auto args = small({"train", "--out", dir.string()});
  args.insert(args.end(), {"--train.steps", "0"});
  const Result r = invoke(args);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "loss_curve.csv"), "step,train_loss,grad_norm\n");
}

TEST(Cli, CompareSingleCellAndParityHook) {
  const fs::path dir = fresh_dir("compare");
  const Result r = invoke(small({"compare", "--out", dir.string(), "--compare.learning_rates=[0.01]",
                                 "--compare.checkpoints=[2]"}));
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(dir / "benchmark.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[1].rfind("2,0.01,Spatial,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("2,0.01,Freq,", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "curves" / "Freq_lr0.01.csv"));
  const Result parity = invoke(small({"compare", "--out", dir.string(), "--compare.checkpoints=[2]",
                                      R"(--compare.spatial_adapter={"h":4})"}));
  EXPECT_EQ(parity.code, cli::kExitConfig);
  EXPECT_NE(parity.err.find("parity"), std::string::npos);
}

TEST(Cli, DeltaMapZeroInitIsAllZero) {
  const fs::path dir = fresh_dir("delta_zero");
  const Result r = invoke(small({"delta-map", "--out", dir.string(), "--adapter.n_scales=1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "delta_freq_scale1.csv"));
  EXPECT_FALSE(fs::exists(dir / "delta_freq_scale2.csv"));
  const auto grid = read_csv(dir / "delta_freq_scale1.csv");
  ASSERT_EQ(grid.size(), 4u);
  for (const auto& row : grid) {
    ASSERT_EQ(row.size(), 4u);
    for (double v : row) EXPECT_EQ(v, 0.0);
  }
}

TEST(Cli, DeltaMapParallelWritesBothAdapters) {
  const fs::path dir = fresh_dir("delta_both");
  const Result r = invoke(small({"delta-map", "--out", dir.string(), "--train.composition=fuse_parallel"}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"delta_freq_scale1.csv", "delta_freq_scale2.csv", "delta_spatial_scale1.csv",
                        "delta_spatial_scale2.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(read_csv(dir / "delta_spatial_scale2.csv").size(), 4u);
}

TEST(Cli, DeltaMapHighlightsPlantedRegion) {
  const fs::path dir = fresh_dir("planted");
  ASSERT_EQ(invoke(small({"train", "--out", dir.string(), "--train.steps=20", "--adapter.n_scales=1"})).code, 0);

  SyntheticSpec s;
  s.n_pairs = 4;
  s.grid_h = s.grid_w = 4;
  s.d_v = s.d_t = 8;
  EmbeddingBatch b = generate_synthetic(s);
  // Scale the top-left 2x2 patches of sample 0 (token 0 is CLS).
  const std::size_t d = 8;
  for (std::size_t r : {0, 1})
    for (std::size_t c : {0, 1})
      for (std::size_t k = 0; k < d; ++k) b.visual[((1 + r * 4 + c) * d) + k] *= 25.0;
  save_embeddings(b, dir / "planted.fqa");

  const Result r = invoke(small({"delta-map", "--out", dir.string(), "--adapter.n_scales=1", "--data.source=file",
                                 "--data.train_path=" + (dir / "planted.fqa").string(),
                                 "--data.val_path=" + (dir / "planted.fqa").string(),
                                 "--delta_map.checkpoint=" + (dir / "checkpoint.fqa").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto g = read_csv(dir / "delta_freq_scale1.csv");
  double planted = 0.0, background = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) (i < 2 && j < 2 ? planted : background) += g[i][j];
  EXPECT_GT(planted / 4.0, background / 12.0);
}
