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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fqa/adapter.hpp"
#include "fqa/cli.hpp"
#include "fqa/data.hpp"
#include "fqa/gradcheck.hpp"
#include "fqa/random.hpp"
#include "fqa/spectral.hpp"
#include "fqa/train.hpp"
#include "oracles.hpp"

using namespace fqa;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "fqa_acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int cli_run(std::vector<std::string> args, std::string* err = nullptr) {
  args.insert(args.begin(), "fqa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, e);
  if (err) *err = e.str();
  return code;
}

// Random adapter config with d_v == d_t (required by the contrastive loss).
AdapterConfig random_config(Rng& rng, bool small_random) {
  AdapterConfig c;
  c.d_v = c.d_t = 2 + rng.below(5);
  c.h = 1 + rng.below(3);
  c.n_scales = 1 + rng.below(3);
  const std::size_t base = std::size_t{1} << (c.n_scales - 1);
  c.grid_h = base * (1 + rng.below(2));
  c.grid_w = base * (1 + rng.below(2));
  c.has_cls = rng.below(2) == 0;
  c.w = rng.uniform(0.05, 1.0);
  c.init = {small_random ? InitKind::kSmallRandom : InitKind::kZeroResidual, rng.next_u64(), 0.5};
  return c;
}

struct Problem {
  AdapterStack model;
  Tensor visual;  // [B*S x d]
  std::size_t images;
  std::vector<Tensor> conditions;
  Tensor texts;

  Var loss(const Var& x, const BoundStack& bound) const {
    return batch_loss(bound, x, images, conditions, texts, 0.1);
  }
};

Problem random_problem(Rng& rng, CompositionMode mode) {
  const AdapterConfig c = random_config(rng, true);
  Problem p{AdapterStack::create(c, mode), {}, 2 + rng.below(3), {}, {}};
  p.visual = rng.normal_tensor({p.images * c.token_count(), c.d_v}, 1.0);
  p.texts = rng.normal_tensor({p.images, c.d_t}, 1.0);
  for (std::size_t i = 0; i < p.images; ++i) p.conditions.push_back(rng.normal_tensor({c.d_t}, 1.0));
  return p;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  AdapterConfig big;
  big.d_v = 1024;
  big.d_t = 768;
  big.h = 32;
  big.n_scales = 3;
  big.grid_h = big.grid_w = 16;
  const ParamCount pc = param_count(big);
  const std::size_t allocated = Adapter(big, Domain::kFrequency).parameter_count();
  const double thousands = std::round(static_cast<double>(pc.total) / 100.0) / 10.0;
  bool ok = pc.total == 476352 && allocated == pc.total && thousands == 476.4;

  Rng rng(101);
  std::size_t mismatches = 0;
  for (int i = 0; i < 50; ++i) {
    AdapterConfig c;
    c.d_v = 1 + rng.below(64);
    c.d_t = 1 + rng.below(64);
    c.h = 1 + rng.below(16);
    c.n_scales = 1 + rng.below(3);
    c.grid_h = c.grid_w = 4;
    const std::size_t formula = c.n_scales * ((2 * c.d_v * c.h + c.h + c.d_v) +
                                              (c.d_t * c.h + 2 * c.d_v * c.h + c.h + 2 * c.d_v));
    if (param_count(c).total != formula || Adapter(c, Domain::kFrequency).parameter_count() != formula ||
        Adapter(c, Domain::kSpatial).parameter_count() != formula)
      ++mismatches;
  }
  const double secs = seconds_since(t0);
  ok = ok && mismatches == 0 && secs < 1.0;
  return {ok, "total " + std::to_string(pc.total) + " (" + num(thousands) + "k), allocated " +
                  std::to_string(allocated) + ", 50 random configs mismatched " + std::to_string(mismatches) + ", " +
                  num(secs, 3) + " s"};
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  Rng rng(202);
  double worst_orth = 0.0, worst_rt = 0.0, worst_pv = 0.0;
  for (std::size_t d : {2u, 4u, 16u, 64u, 768u, 1024u}) {
    const auto basis = dct_basis(d);
    worst_orth = std::max(worst_orth, basis->orthonormality_error());
    for (int t = 0; t < 100; ++t) {
      const Tensor e = rng.normal_tensor({d}, 1.0);
      const Tensor x = dct(e, *basis);
      worst_rt = std::max(worst_rt, max_abs_diff(idct(x, *basis), e));
      worst_pv = std::max(worst_pv, std::abs(l2_norm(x.data()) - l2_norm(e.data())));
    }
  }
  // Cross-check the fast path against the cosine-sum definition once per small D.
  double worst_oracle = 0.0;
  for (std::size_t d : {2u, 4u, 16u, 64u}) {
    const Tensor e = rng.normal_tensor({d}, 1.0);
    const oracle::Vec ref = oracle::dct(oracle::vec(e));
    const Tensor x = dct(e);
    for (std::size_t k = 0; k < d; ++k) worst_oracle = std::max(worst_oracle, std::abs(x[k] - ref[k]));
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_orth < 1e-10 && worst_rt < 1e-10 && worst_pv < 1e-10 && worst_oracle < 1e-10 && secs < 30.0;
  return {ok, "orthonormality " + num(worst_orth) + ", round-trip " + num(worst_rt) + ", Parseval " + num(worst_pv) +
                  ", vs definition " + num(worst_oracle) + ", " + num(secs, 3) + " s"};
}

Outcome criterion3() {
  Rng rng(303);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t w = 1 + rng.below(64), d = 1 + rng.below(768);
    const Tensor tokens = rng.normal_tensor({w, d}, 1.0);
    worst = std::max(worst, max_abs_diff(aggregate_frequency(tokens), dct(kernels::mean_axis(tokens, 0))));
  }
  return {worst < 1e-10, "100 cases, worst |mean of DCTs - DCT of mean| " + num(worst)};
}

Outcome criterion4() {
  Rng rng(404);
  double norm_gap = 0.0, map_gap = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Problem p = random_problem(rng, CompositionMode::kFreqOnly);
    const auto rep = gradient_norm_check(
        [&](Tape& tape, const Var& x) { return p.loss(x, bind(tape, p.model, false)); }, p.visual);
    norm_gap = std::max(norm_gap, std::abs(rep.spatial_norm - rep.frequency_norm));
    // grad_e = T^T grad_x, applied row by row.
    map_gap = std::max(map_gap, max_abs_diff(rep.spatial_grad, idct(rep.frequency_grad)));
  }
  return {norm_gap < 1e-8 && map_gap < 1e-8,
          "20 configs, worst norm gap " + num(norm_gap) + ", worst |grad_e - T^T grad_x| " + num(map_gap)};
}

Outcome criterion5() {
  Rng rng(505);
  bool monotone = true;
  double final_err = 0.0, worst_frac = 0.0;
  for (int t = 0; t < 10; ++t) {
    const ConcentrationCurve c = concentration_curve(power_law_signal(rng, 768, 1.0));
    for (std::size_t k = 1; k < c.similarity.size(); ++k) monotone = monotone && c.similarity[k] >= c.similarity[k - 1];
    final_err = std::max(final_err, std::abs(c.similarity.back() - 1.0));
    worst_frac = std::max(worst_frac, static_cast<double>(c.first_k_reaching(0.9)) / 768.0);
  }
  return {monotone && final_err < 1e-10 && worst_frac < 1.0,
          std::string("10 signals, monotone ") + (monotone ? "yes" : "no") + ", final error " + num(final_err) +
              ", largest fraction for similarity 0.9: " + num(worst_frac)};
}

Outcome criterion6() {
  Rng rng(606);
  double worst = 0.0;
  const CompositionMode modes[] = {CompositionMode::kFreqOnly, CompositionMode::kSpatialOnly,
                                   CompositionMode::kFuseFreqFirst, CompositionMode::kFuseSpatialFirst,
                                   CompositionMode::kFuseParallel};
  for (int t = 0; t < 20; ++t) {
    AdapterConfig c = random_config(rng, false);
    c.d_t = 1 + rng.below(6);
    c.init.sigma = 0.02 + rng.uniform();
    const Tensor ev = rng.normal_tensor({c.token_count(), c.d_v}, 3.0);
    const Tensor et = rng.normal_tensor({c.d_t}, 3.0);
    for (auto mode : modes) worst = std::max(worst, max_abs_diff(stack_forward(AdapterStack::create(c, mode), ev, et), ev));
  }
  return {worst < 1e-10, "20 configs x 5 modes, worst |out - in| " + num(worst)};
}

Outcome criterion7() {
  const auto t0 = Clock::now();
  Rng rng(707);
  const CompositionMode modes[] = {CompositionMode::kFreqOnly, CompositionMode::kSpatialOnly,
                                   CompositionMode::kFuseParallel};
  double worst = 0.0;
  std::size_t checks = 0, resampled = 0;
  for (int t = 0; t < 10; ++t) {
    Problem p = random_problem(rng, modes[t % 3]);
    // Keep every ReLU pre-activation at least 1e-3 from its kink.
    for (;;) {
      Tape probe;
      p.loss(probe.constant(p.visual), bind(probe, p.model, false));
      if (probe.relu_margin() >= 1e-3) break;
      ++resampled;
      p = random_problem(rng, modes[t % 3]);
    }
    auto input_fn = [&](Tape& tape, const Var& x) { return p.loss(x, bind(tape, p.model, false)); };
    worst = std::max(worst, finite_difference_check(input_fn, p.visual, 1e-5).max_relative_error);
    ++checks;
    // Every parameter tensor, substituted one at a time.
    const auto params = p.model.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto param_fn = [&](Tape& tape, const Var& x) {
        BoundStack b = bind(tape, p.model, false);
        std::vector<Var*> slots;
        for (BoundAdapter* a : {b.freq ? &*b.freq : nullptr, b.spatial ? &*b.spatial : nullptr}) {
          if (!a) continue;
          for (auto& s : a->scales)
            for (Var* v : {&s.mgfa.w1, &s.mgfa.b1, &s.mgfa.w2, &s.mgfa.b2, &s.mcfa.w1, &s.mcfa.b1, &s.mcfa.w2,
                           &s.mcfa.b2})
              slots.push_back(v);
        }
        *slots[k] = x;
        return p.loss(tape.constant(p.visual), b);
      };
      worst = std::max(worst, finite_difference_check(param_fn, *params[k].tensor, 1e-5).max_relative_error);
      ++checks;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 120.0, std::to_string(checks) + " gradient checks over 10 configs (" +
                                             std::to_string(resampled) + " resampled for ReLU margin), worst rel " +
                                             num(worst) + ", " + num(secs, 3) + " s"};
}

Outcome criterion8() {
  const auto t0 = Clock::now();
  const fs::path a = scratch("c8_a"), b = scratch("c8_b");
  std::string err;
  if (cli_run({"train", "--out", a.string()}, &err) != 0) return {false, "train failed: " + err};
  if (cli_run({"train", "--out", b.string()}, &err) != 0) return {false, "rerun failed: " + err};
  const bool identical = slurp(a / "report.json") == slurp(b / "report.json") &&
                         slurp(a / "checkpoint.fqa") == slurp(b / "checkpoint.fqa");
  const json cfg = json::parse(slurp(a / "config.json"))["config"];
  const json rep = json::parse(slurp(a / "report.json"));
  const bool recipe = cfg["data"]["synthetic"]["n_pairs"] == 512 && cfg["adapter"]["d_v"] == 64 &&
                      cfg["adapter"]["d_t"] == 64 && cfg["adapter"]["h"] == 8 && cfg["adapter"]["n_scales"] == 2 &&
                      cfg["adapter"]["grid_h"] == 8 && cfg["adapter"]["grid_w"] == 8 && cfg["adapter"]["w"] == 0.01 &&
                      cfg["train"]["learning_rate"] == 1e-3 && cfg["train"]["steps"] == 200 && cfg["seed"] == 42;
  const auto& steps = rep["steps"];
  const auto& evals = rep["evals"];
  const double first = steps.front()["train_loss"], last = steps.back()["train_loss"];
  // evals[0] runs before any update, where the adapter is the identity map.
  const double base_r1 = evals.front()["retrieval"]["i2t"]["r1"], final_r1 = evals.back()["retrieval"]["i2t"]["r1"];
  const double secs = seconds_since(t0);
  const bool ok = recipe && identical && last <= 0.5 * first && final_r1 > base_r1 && secs < 600.0;
  return {ok, "loss " + num(first) + " -> " + num(last) + " over " + std::to_string(steps.size()) +
                  " steps, val I2T R@1 identity " + num(base_r1) + " -> " + num(final_r1) + ", reruns " +
                  (identical ? "identical" : "DIFFER") + ", " + num(secs, 3) + " s for two runs"};
}

Outcome criterion9() {
  const auto t0 = Clock::now();
  const fs::path dir = scratch("c9");
  std::string err;
  if (cli_run({"compare", "--out", dir.string()}, &err) != 0) return {false, "compare failed: " + err};
  std::istringstream in(slurp(dir / "benchmark.csv"));
  std::string header;
  std::getline(in, header);
  bool ok = header == "step,lr,method,train_loss,eval_loss,i2t_r1,i2t_r5,t2i_r1,t2i_r5";
  const std::size_t ck[] = {25, 50, 75, 100};
  const double lrs[] = {1e-3, 1e-4};
  std::size_t rows = 0, nonfinite = 0;
  for (std::string line; std::getline(in, line); ++rows) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (cells.size() != 9) {
      ok = false;
      continue;
    }
    const std::size_t lr_i = rows / 8, method_i = (rows / 4) % 2, ck_i = rows % 4;
    if (rows >= 16 || std::stoul(cells[0]) != ck[ck_i] || std::stod(cells[1]) != lrs[lr_i] ||
        cells[2] != (method_i == 0 ? "Spatial" : "Freq"))
      ok = false;
    for (std::size_t i = 3; i < 9; ++i) nonfinite += std::isfinite(std::stod(cells[i])) ? 0 : 1;
  }
  // A spatial adapter with a different bottleneck breaks parity and must be refused.
  const int refused = cli_run({"compare", "--out", scratch("c9_parity").string(), "--compare.checkpoints=[1]",
                               "--compare.learning_rates=[0.001]", R"(--compare.spatial_adapter={"h":9})"},
                              &err);
  const bool parity = refused == cli::kExitConfig && err.find("parity") != std::string::npos;
  const double secs = seconds_since(t0);
  ok = ok && rows == 16 && nonfinite == 0 && parity && secs < 900.0;
  return {ok, std::to_string(rows) + " rows (2 lr x 4 checkpoints x 2 methods), " + std::to_string(nonfinite) +
                  " non-finite cells, parity violation " + (parity ? "refused" : "NOT refused") + ", " +
                  num(secs, 3) + " s"};
}

Outcome criterion10() {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  for (std::size_t n = 1; n <= 3; ++n) {
    SyntheticSpec s;
    s.n_pairs = 24;
    s.grid_h = s.grid_w = 16;
    s.d_v = s.d_t = 16;
    const DataSplit data = generate_split(s, 8);
    AdapterConfig c;
    c.d_v = c.d_t = 16;
    c.h = 4;
    c.n_scales = n;
    c.grid_h = c.grid_w = 16;
    TrainConfig tc;
    tc.batch_size = 8;
    tc.steps = 4;
    tc.learning_rate = 1e-2;

    AdapterStack model = AdapterStack::create(c, CompositionMode::kFreqOnly);
    const AdapterStack initial = model;
    const RunReport rep = train(model, data.train, data.val, tc);
    bool finite = rep.steps.size() == 4 && rep.evals.size() == 2;
    for (const auto& st : rep.steps) finite = finite && std::isfinite(st.train_loss) && st.grad_norm > 0.0;

    const Tensor tokens = data.val.image_tokens(0);
    const Tensor out = stack_forward(model, tokens, Tensor({16}, std::vector<double>(16, 0.1)));
    const bool shape = out.shape() == tokens.shape();

    // Every parameter tensor at every scale moved during training.
    std::size_t frozen = 0;
    const auto before = initial.parameters();
    const auto after = model.parameters();
    for (std::size_t k = 0; k < after.size(); ++k) frozen += *before[k].tensor == *after[k].tensor ? 1 : 0;

    // And receives a nonzero gradient from one contrastive batch at the trained point.
    Tape tape;
    const BoundStack bound = bind(tape, model, true);
    const EmbeddingBatch sub = subset(data.train, std::vector<std::size_t>{0, 1, 2, 3});
    const auto conds = text_conditions(sub.pooled_images(), sub.pooled_captions(), 5);
    Tensor texts({4, 16});
    const Tensor pc = sub.pooled_captions();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 16; ++k) texts.at(i, k) = pc.at(sub.caption_groups[i][0], k);
    Var loss = batch_loss(bound, tape.constant(sub.visual.reshaped({4 * c.token_count(), 16})), 4, conds, texts, 0.07);
    tape.backward(loss);
    std::size_t zero_grads = 0;
    for (const Var& v : bound.parameters()) zero_grads += l2_norm(tape.grad(v).data()) == 0.0 ? 1 : 0;

    const bool pass = finite && shape && frozen == 0 && zero_grads == 0;
    ok = ok && pass;
    detail += (n > 1 ? "; " : "") + std::string("N=") + std::to_string(n) + " loss " + num(rep.steps.front().train_loss) +
              " -> " + num(rep.steps.back().train_loss) + ", shape " + (shape ? "kept" : "CHANGED") + ", " +
              std::to_string(after.size() - frozen) + "/" + std::to_string(after.size()) + " tensors updated, " +
              std::to_string(after.size() - zero_grads) + "/" + std::to_string(after.size()) + " with gradient";
  }
  return {ok, detail + ", " + num(seconds_since(t0), 3) + " s"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"parameter count", criterion1},        {"DCT correctness", criterion2},
      {"aggregation commutes with DCT", criterion3}, {"gradient norm preservation", criterion4},
      {"concentration curve", criterion5},    {"identity at init", criterion6},
      {"gradient fidelity", criterion7},      {"desk-scale training", criterion8},
      {"benchmark harness", criterion9},      {"scale ablation harness", criterion10},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  std::cout << criteria.size() - static_cast<std::size_t>(failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
