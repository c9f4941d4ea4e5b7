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

#include "fqa/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fqa/adapter.hpp"
#include "fqa/data.hpp"
#include "fqa/errors.hpp"
#include "fqa/random.hpp"
#include "fqa/spectral.hpp"
#include "fqa/tensor_file.hpp"
#include "fqa/train.hpp"

namespace fqa::cli {

namespace fs = std::filesystem;

json default_config() {
  TrainConfig train;
  train.eval_every = 50;
  const json data = SyntheticSpec{};
  const json adapter = AdapterConfig{};
  const json tc = train;
  return json{
      {"seed", 42},
      {"adapter", adapter},
      {"train", tc},
      {"data", {{"source", "synthetic"}, {"synthetic", data}, {"n_val", 128}, {"train_path", ""}, {"val_path", ""}}},
      {"verify",
       {{"dims", {2, 4, 16, 64, 768, 1024}},
        {"trials", 100},
        {"gradient_trials", 5},
        {"max_tokens", 64},
        {"curve_dim", 768},
        {"spectrum", 1.0},
        {"tolerance", 1e-10},
        {"gradient_tolerance", 1e-8},
        {"corrupt_basis", false}}},
      {"compare", {{"learning_rates", {1e-3, 1e-4}}, {"checkpoints", {25, 50, 75, 100}}, {"spatial_adapter", json::object()}}},
      {"eval", {{"checkpoint", ""}}},
      {"delta_map", {{"checkpoint", ""}, {"sample", 0}, {"split", "val"}}},
  };
}

namespace {

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

json::json_pointer pointer_for(const std::string& dotted) {
  std::string p;
  std::istringstream is(dotted);
  for (std::string part; std::getline(is, part, '.');) {
    if (part.empty()) throw ConfigError("malformed key '" + dotted + "'");
    p += "/" + part;
  }
  return json::json_pointer(p);
}

// Keys absent from the defaults are rejected; objects merge recursively.
void merge_known(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config " + (where.empty() ? "document" : "'" + where + "'") + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && !slot.empty() && it.value().is_object()) {
      merge_known(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

}  // namespace

json resolve_config(const std::optional<fs::path>& file, std::optional<std::uint64_t> seed,
                    const std::vector<std::pair<std::string, std::string>>& overrides) {
  json cfg = default_config();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw IoError("cannot read config file " + file->string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
    merge_known(cfg, doc, "");
  }
  for (const auto& [key, value] : overrides) {
    const auto ptr = pointer_for(key);
    if (!cfg.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
    cfg[ptr] = parse_value(value);
  }
  if (seed) cfg["seed"] = *seed;
  const json s = cfg.at("seed");
  cfg["adapter"]["init"]["seed"] = s;
  cfg["train"]["seed"] = s;
  cfg["data"]["synthetic"]["seed"] = s;
  return cfg;
}

namespace {

class VerifyFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string fmt(double v, int precision = 17) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

struct Context {
  json config;
  fs::path out;
  std::ostream& cout;
  std::ostream& cerr;
};

template <typename T>
T get(const json& cfg, const char* dotted) {
  try {
    return cfg.at(pointer_for(dotted)).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + dotted + "': " + e.what());
  }
}

AdapterConfig adapter_config(const json& cfg) {
  try {
    AdapterConfig a = cfg.at("adapter").get<AdapterConfig>();
    a.validate();
    return a;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("adapter config: ") + e.what());
  }
}

TrainConfig train_config(const json& cfg) {
  try {
    TrainConfig t = cfg.at("train").get<TrainConfig>();
    t.validate();
    return t;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

DataSplit load_data(const json& cfg) {
  const std::string source = get<std::string>(cfg, "data.source");
  if (source == "synthetic") {
    SyntheticSpec spec;
    try {
      spec = cfg.at("data").at("synthetic").get<SyntheticSpec>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("data.synthetic: ") + e.what());
    }
    return generate_split(spec, get<std::size_t>(cfg, "data.n_val"));
  }
  if (source == "file") {
    const std::string train_path = get<std::string>(cfg, "data.train_path");
    const std::string val_path = get<std::string>(cfg, "data.val_path");
    if (train_path.empty()) throw ConfigError("data.source=file needs data.train_path");
    DataSplit split;
    split.train = load_embeddings(train_path);
    if (!val_path.empty()) split.val = load_embeddings(val_path);
    return split;
  }
  throw ConfigError("data.source must be 'synthetic' or 'file', got '" + source + "'");
}

bool has_val(const DataSplit& d) { return d.val.visual.rank() == 3; }

// ---------------------------------------------------------------------------

struct Check {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

int cmd_verify_props(Context& ctx) {
  const json& cfg = ctx.config;
  const auto dims = get<std::vector<std::size_t>>(cfg, "verify.dims");
  const auto trials = get<std::size_t>(cfg, "verify.trials");
  const auto grad_trials = get<std::size_t>(cfg, "verify.gradient_trials");
  const auto max_tokens = get<std::size_t>(cfg, "verify.max_tokens");
  const auto curve_dim = get<std::size_t>(cfg, "verify.curve_dim");
  const auto spectrum = get<double>(cfg, "verify.spectrum");
  const auto tol = get<double>(cfg, "verify.tolerance");
  const auto grad_tol = get<double>(cfg, "verify.gradient_tolerance");
  const bool corrupt = get<bool>(cfg, "verify.corrupt_basis");
  if (dims.empty() || trials == 0 || max_tokens == 0 || curve_dim == 0) {
    throw ConfigError("verify needs non-empty dims and positive trials, max_tokens, curve_dim");
  }
  if (std::find(dims.begin(), dims.end(), std::size_t{0}) != dims.end()) throw ConfigError("verify.dims must be positive");

  Rng rng(derive_seed(get<std::uint64_t>(cfg, "seed"), SeedTag::kVerify));
  std::vector<Check> checks;
  auto record = [&](std::string name, double err, double t) { checks.push_back({std::move(name), err, t, err < t}); };

  for (std::size_t d : dims) {
    const std::string tag = "_d" + std::to_string(d);
    std::shared_ptr<const DctBasis> basis = dct_basis(d);
    if (corrupt) {
      Tensor m = basis->matrix();
      m[0] += 1e-3;
      basis = std::make_shared<const DctBasis>(DctBasis::from_matrix(std::move(m)));
    }
    record("orthonormality" + tag, basis->orthonormality_error(), tol);

    double round_trip = 0.0, parseval = 0.0, linearity = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const Tensor e = rng.normal_tensor({d}, 1.0);
      const Tensor x = dct(e, *basis);
      round_trip = std::max(round_trip, max_abs_diff(idct(x, *basis), e));
      parseval = std::max(parseval, std::abs(l2_norm(x.data()) - l2_norm(e.data())));

      const std::size_t w = 1 + rng.below(max_tokens);
      const Tensor tokens = rng.normal_tensor({w, d}, 1.0);
      const Tensor mean_of_dcts = kernels::mean_axis(dct(tokens, *basis), 0);
      linearity = std::max(linearity, max_abs_diff(mean_of_dcts, dct(kernels::mean_axis(tokens, 0), *basis)));
    }
    record("round_trip" + tag, round_trip, tol);
    record("parseval" + tag, parseval, tol);
    record("linearity" + tag, linearity, tol);

    double norm_gap = 0.0, grad_gap = 0.0;
    for (std::size_t t = 0; t < grad_trials; ++t) {
      const Tensor e = rng.normal_tensor({d}, 1.0);
      const auto weights = std::make_shared<const Tensor>(rng.normal_tensor({d}, 1.0));
      const auto report = gradient_norm_check(
          [&](Tape& tape, const Var& v) { return sum(mul(relu(v), tape.constant(*weights))); }, e);
      norm_gap = std::max(norm_gap, std::abs(report.spatial_norm - report.frequency_norm));
      grad_gap = std::max(grad_gap, max_abs_diff(report.spatial_grad, idct(report.frequency_grad, *dct_basis(d))));
    }
    record("gradient_norm" + tag, norm_gap, grad_tol);
    record("gradient_map" + tag, grad_gap, grad_tol);
  }

  const ConcentrationCurve curve = concentration_curve(power_law_signal(rng, curve_dim, spectrum));
  bool monotone = true;
  double worst_drop = 0.0;
  for (std::size_t k = 1; k < curve.similarity.size(); ++k) {
    const double drop = curve.similarity[k - 1] - curve.similarity[k];
    if (drop > 0.0) {
      monotone = false;
      worst_drop = std::max(worst_drop, drop);
    }
  }
  checks.push_back({"curve_monotone", worst_drop, 0.0, monotone});
  record("curve_final", std::abs(curve.similarity.back() - 1.0), tol);
  const std::size_t k90 = curve.first_k_reaching(0.9);
  checks.push_back({"concentration", static_cast<double>(k90) / static_cast<double>(curve_dim), 1.0, k90 < curve_dim});

  std::string csv = "k,retained_fraction,cosine_similarity\n";
  for (std::size_t k = 1; k <= curve.dim; ++k) {
    csv += std::to_string(k) + "," + fmt(static_cast<double>(k) / static_cast<double>(curve.dim)) + "," +
           fmt(curve.at(k)) + "\n";
  }
  write_text(ctx.out / "concentration_curve.csv", csv);

  json report = json::array();
  std::vector<std::string> failed;
  for (const auto& c : checks) {
    report.push_back({{"check", c.name}, {"passed", c.passed}, {"error", c.error}, {"tolerance", c.tolerance}});
    if (!c.passed) failed.push_back(c.name);
  }
  write_json(ctx.out / "verify_report.json",
             json{{"passed", failed.empty()}, {"checks", report}, {"k_for_0.9", k90}, {"curve_dim", curve_dim}});
  ctx.cout << checks.size() - failed.size() << "/" << checks.size() << " checks passed\n";
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    throw VerifyFailure("failed checks: " + names);
  }
  return kExitOk;
}

int cmd_param_count(Context& ctx) {
  const AdapterConfig cfg = adapter_config(ctx.config);
  const ParamCount c = param_count(cfg);
  const std::size_t f = Adapter(cfg, Domain::kFrequency).parameter_count();
  const std::size_t s = Adapter(cfg, Domain::kSpatial).parameter_count();
  auto& o = ctx.cout;
  o << "d_v=" << cfg.d_v << " d_t=" << cfg.d_t << " h=" << cfg.h << " N=" << cfg.n_scales << "\n";
  o << "per_mgfa    " << c.per_mgfa << "\n";
  o << "per_mcfa    " << c.per_mcfa << "\n";
  o << "total       " << c.total << "\n";
  o << "allocated   " << f << " (frequency), " << s << " (spatial)\n";
  json j{{"per_mgfa", c.per_mgfa},
         {"per_mcfa", c.per_mcfa},
         {"total", c.total},
         {"allocated_frequency", f},
         {"allocated_spatial", s}};
  if (cfg.d_v == 1024 && cfg.d_t == 768 && cfg.h == 32 && cfg.n_scales == 3) {
    const std::string note =
        "note: 475,776 is sometimes quoted for this configuration, but the per-module formulas give 476,352 "
        "(about 476.4k); the formula value is reported";
    o << note << "\n";
    j["note"] = note;
  }
  write_json(ctx.out / "param_count.json", j);
  if (f != c.total || s != c.total) {
    ctx.cerr << "parameter count mismatch: formula " << c.total << ", allocated " << f << " / " << s << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

std::string summary_line(const RunReport& r) {
  std::ostringstream os;
  os << std::setprecision(5);
  if (!r.steps.empty()) os << "train loss " << r.steps.front().train_loss << " -> " << r.steps.back().train_loss;
  if (!r.evals.empty()) {
    os << (r.steps.empty() ? "" : "; ") << "val I2T R@1 " << r.evals.front().metrics.i2t.r1 << " -> "
       << r.evals.back().metrics.i2t.r1;
  }
  return os.str();
}

int cmd_train(Context& ctx) {
  const AdapterConfig acfg = adapter_config(ctx.config);
  const TrainConfig tcfg = train_config(ctx.config);
  const DataSplit data = load_data(ctx.config);
  AdapterStack model = AdapterStack::create(acfg, tcfg.mode());
  std::optional<EmbeddingBatch> val;
  if (has_val(data)) val = data.val;
  const RunReport report = train(model, data.train, val, tcfg);
  write_json(ctx.out / "report.json", to_json(report));
  write_text(ctx.out / "loss_curve.csv", loss_curve_csv(report));
  save_checkpoint(model, ctx.out / "checkpoint.fqa");
  ctx.cout << summary_line(report) << "\n";
  return kExitOk;
}

fs::path checkpoint_path(Context& ctx, const char* key) {
  const std::string p = get<std::string>(ctx.config, key);
  return p.empty() ? ctx.out / "checkpoint.fqa" : fs::path(p);
}

json eval_json(const Evaluation& e) {
  auto one = [](const RetrievalResult& r) { return json{{"r1", r.r1}, {"r5", r.r5}, {"r10", r.r10}}; };
  return json{{"loss", e.loss}, {"i2t", one(e.metrics.i2t)}, {"t2i", one(e.metrics.t2i)}};
}

int cmd_eval(Context& ctx) {
  const TrainConfig tcfg = train_config(ctx.config);
  const AdapterStack model = load_checkpoint(checkpoint_path(ctx, "eval.checkpoint"));
  const DataSplit data = load_data(ctx.config);
  const EmbeddingBatch& split = has_val(data) ? data.val : data.train;
  AdapterConfig identity_cfg = model.config();
  identity_cfg.init = InitSpec{};
  const AdapterStack identity = AdapterStack::create(identity_cfg, model.mode);
  const Evaluation trained = evaluate(model, split, tcfg);
  const Evaluation baseline = evaluate(identity, split, tcfg);
  write_json(ctx.out / "eval.json", json{{"split", has_val(data) ? "val" : "train"},
                                         {"composition", std::string(to_string(model.mode))},
                                         {"adapter", eval_json(trained)},
                                         {"identity", eval_json(baseline)}});
  ctx.cout << std::setprecision(5) << "loss " << trained.loss << " (identity " << baseline.loss << "), I2T R@1 "
           << trained.metrics.i2t.r1 << " (identity " << baseline.metrics.i2t.r1 << ")\n";
  return kExitOk;
}

int cmd_compare(Context& ctx) {
  const json& cfg = ctx.config;
  BenchmarkSpec spec;
  spec.freq_config = adapter_config(cfg);
  json spatial = cfg.at("adapter");
  merge_known(spatial, get<json>(cfg, "compare.spatial_adapter"), "compare.spatial_adapter");
  try {
    spec.spatial_config = spatial.get<AdapterConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("compare.spatial_adapter: ") + e.what());
  }
  spec.spatial_config.validate();
  spec.train = train_config(cfg);
  spec.learning_rates = get<std::vector<double>>(cfg, "compare.learning_rates");
  spec.checkpoints = get<std::vector<std::size_t>>(cfg, "compare.checkpoints");
  const DataSplit data = load_data(cfg);
  if (!has_val(data)) throw ConfigError("compare needs a validation split");
  const BenchmarkResult result = freq_vs_spatial_benchmark(spec, data.train, data.val);

  write_text(ctx.out / "benchmark.csv", benchmark_csv(result.rows));
  fs::create_directories(ctx.out / "curves");
  json runs = json::array();
  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    const auto& r = result.runs[i];
    const std::string name = r.method + "_lr" + fmt(r.lr, 6) + ".csv";
    write_text(ctx.out / "curves" / name, loss_curve_csv(r.report));
    runs.push_back({{"method", r.method}, {"lr", r.lr}, {"curve", "curves/" + name}, {"report", to_json(r.report)}});
  }
  write_json(ctx.out / "benchmark_runs.json", runs);
  ctx.cout << result.rows.size() << " benchmark rows written\n";
  return kExitOk;
}

int cmd_delta_map(Context& ctx) {
  const TrainConfig tcfg = train_config(ctx.config);
  const std::string ck = get<std::string>(ctx.config, "delta_map.checkpoint");
  const AdapterStack model =
      ck.empty() ? AdapterStack::create(adapter_config(ctx.config), tcfg.mode()) : load_checkpoint(ck);
  const DataSplit data = load_data(ctx.config);
  const std::string which = get<std::string>(ctx.config, "delta_map.split");
  if (which != "train" && which != "val") throw ConfigError("delta_map.split must be 'train' or 'val'");
  if (which == "val" && !has_val(data)) throw ConfigError("delta_map.split=val but no validation data");
  const EmbeddingBatch& split = which == "val" ? data.val : data.train;
  const auto sample = get<std::size_t>(ctx.config, "delta_map.sample");
  if (sample >= split.images()) {
    throw ConfigError("delta_map.sample " + std::to_string(sample) + " out of range (" +
                      std::to_string(split.images()) + " images)");
  }
  const AdapterConfig& cfg = model.config();
  if (split.d_v() != cfg.d_v || split.d_t() != cfg.d_t || split.visual_tokens() != cfg.token_count()) {
    throw DimensionError("sample dimensions do not match the checkpoint configuration");
  }
  const Tensor condition =
      text_conditions(split.pooled_images().slice0(sample, 1), split.pooled_captions(), tcfg.top_k).front();
  const Tensor tokens = split.image_tokens(sample);

  std::size_t files = 0;
  auto emit = [&](const Adapter& a, const std::string& domain) {
    const auto maps = scale_delta_maps(a, tokens, condition);
    for (std::size_t n = 0; n < maps.size(); ++n) {
      std::string csv;
      for (std::size_t r = 0; r < cfg.grid_h; ++r) {
        for (std::size_t c = 0; c < cfg.grid_w; ++c) {
          csv += (c ? "," : "") + fmt(maps[n][r * cfg.grid_w + c]);
        }
        csv += "\n";
      }
      write_text(ctx.out / ("delta_" + domain + "_scale" + std::to_string(n + 1) + ".csv"), csv);
      ++files;
    }
  };
  if (model.freq) emit(*model.freq, "freq");
  if (model.spatial) emit(*model.spatial, "spatial");
  ctx.cout << files << " delta maps written\n";
  return kExitOk;
}

int cmd_gen_data(Context& ctx) {
  const DataSplit data = load_data(ctx.config);
  save_embeddings(data.train, ctx.out / "train.fqa");
  if (has_val(data)) save_embeddings(data.val, ctx.out / "val.fqa");
  ctx.cout << data.train.images() << " train pairs" << (has_val(data) ? ", " + std::to_string(data.val.images()) + " val pairs" : "")
           << " written\n";
  return kExitOk;
}

// "--a.b=v" or "--a.b v" tokens left over after option parsing.
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() <= 2) throw ConfigError("unexpected argument '" + tok + "'");
    std::string key = tok.substr(2), value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for --" + key);
      value = extras[++i];
    }
    if (key.find('.') == std::string::npos && key != "seed") throw ConfigError("unknown option --" + key);
    out.emplace_back(key, value);
  }
  return out;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frequency-domain multi-scale adapters: property checks, training and benchmarks"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;

  using Handler = int (*)(Context&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
      {"verify-props", "check the DCT properties and write the concentration curve", cmd_verify_props},
      {"param-count", "print and cross-check adapter parameter counts", cmd_param_count},
      {"train", "train an adapter with the contrastive objective", cmd_train},
      {"eval", "evaluate a checkpoint against the identity baseline", cmd_eval},
      {"compare", "frequency vs spatial benchmark over learning rates and checkpoints", cmd_compare},
      {"delta-map", "per-scale per-patch adapter deltas for one sample", cmd_delta_map},
      {"gen-data", "write synthetic train/val embedding files", cmd_gen_data},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "base random seed");
    sub->add_option("--out", out_dir, "output directory (default: $FQA_OUT or ./fqa_out)");
    sub->allow_extras();
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::size_t which = 0;
  while (!subs[which]->parsed()) ++which;
  const std::string& name = std::get<0>(commands[which]);

  try {
    const auto overrides = dotted_overrides(subs[which]->remaining());
    std::optional<std::uint64_t> seed_flag = seed;
    std::vector<std::pair<std::string, std::string>> dotted;
    for (const auto& [k, v] : overrides) {
      if (k == "seed") {
        seed_flag = std::stoull(v);
      } else {
        dotted.emplace_back(k, v);
      }
    }
    json cfg = resolve_config(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path), seed_flag,
                              dotted);
    fs::path dir = out_dir;
    if (dir.empty()) {
      const char* env = std::getenv("FQA_OUT");
      dir = env && *env ? fs::path(env) : fs::path("fqa_out");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    write_json(dir / "config.json", json{{"command", name}, {"config", cfg}});
    Context ctx{cfg, dir, out, err};
    return std::get<2>(commands[which])(ctx);
  } catch (const VerifyFailure& e) {
    err << name << ": " << e.what() << "\n";
    return kExitVerify;
  } catch (const NonFiniteLossError& e) {
    err << name << ": " << e.what() << " (step " << e.step() << ")\n";
    return kExitVerify;
  } catch (const IoError& e) {
    err << name << ": " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << name << ": " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << name << ": " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << name << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    err << name << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    err << name << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << name << ": internal error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace fqa::cli
