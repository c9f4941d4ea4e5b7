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

#include "fqa/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "fqa/errors.hpp"
#include "fqa/optim.hpp"
#include "fqa/random.hpp"
#include "fqa/tensor_file.hpp"

namespace fqa {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) throw ConfigError("learning_rate must be finite and >= 0");
  if (!std::isfinite(weight_decay) || weight_decay < 0.0) throw ConfigError("weight_decay must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
}

CompositionMode TrainConfig::mode() const {
  if (composition) return *composition;
  return domain == Domain::kFrequency ? CompositionMode::kFreqOnly : CompositionMode::kSpatialOnly;
}

std::size_t TrainConfig::total_steps(std::size_t n_images) const {
  if (epochs == 0) return steps;
  return epochs * std::max<std::size_t>(1, n_images / std::min(batch_size, std::max<std::size_t>(n_images, 1)));
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},
           {"steps", c.steps},
           {"epochs", c.epochs},
           {"learning_rate", c.learning_rate},
           {"weight_decay", c.weight_decay},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"epsilon", c.epsilon},
           {"temperature", c.temperature},
           {"top_k", c.top_k},
           {"seed", c.seed},
           {"domain", std::string(to_string(c.domain))},
           {"composition", c.composition ? json(std::string(to_string(*c.composition))) : json(nullptr)},
           {"eval_every", c.eval_every},
           {"eval_at", c.eval_at}};
}

void from_json(const json& j, TrainConfig& c) {
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.steps = j.at("steps").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.top_k = j.at("top_k").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const std::string domain = j.at("domain").get<std::string>();
  if (domain == "frequency") {
    c.domain = Domain::kFrequency;
  } else if (domain == "spatial") {
    c.domain = Domain::kSpatial;
  } else {
    throw ConfigError("unknown domain '" + domain + "'");
  }
  const json& comp = j.at("composition");
  if (comp.is_null()) {
    c.composition.reset();
  } else {
    c.composition = composition_from_string(comp.get<std::string>());
  }
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.eval_at = j.at("eval_at").get<std::vector<std::size_t>>();
}

namespace {

json metrics_json(const RetrievalMetrics& m) {
  auto one = [](const RetrievalResult& r) { return json{{"r1", r.r1}, {"r5", r.r5}, {"r10", r.r10}}; };
  return json{{"i2t", one(m.i2t)}, {"t2i", one(m.t2i)}};
}

std::string checksum_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void check_data(const AdapterConfig& cfg, const EmbeddingBatch& data, const char* what) {
  data.validate();
  if (data.d_v() != cfg.d_v || data.d_t() != cfg.d_t || data.visual_tokens() != cfg.token_count()) {
    throw DimensionError(std::string(what) + " data (S_v=" + std::to_string(data.visual_tokens()) +
                         ", d_v=" + std::to_string(data.d_v()) + ", d_t=" + std::to_string(data.d_t()) +
                         ") does not match the adapter (S_v=" + std::to_string(cfg.token_count()) +
                         ", d_v=" + std::to_string(cfg.d_v) + ", d_t=" + std::to_string(cfg.d_t) + ")");
  }
  if (cfg.d_v != cfg.d_t) {
    throw DimensionError("retrieval training scores visual against text features and needs d_v == d_t (got " +
                         std::to_string(cfg.d_v) + " and " + std::to_string(cfg.d_t) + ")");
  }
}

// Rows `rows` of a [N x C] matrix, in order.
Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
  const std::size_t c = m.numel() / m.dim(0);
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    const auto src = m.data().subspan(r * c, c);
    out.insert(out.end(), src.begin(), src.end());
  }
  Shape shape = m.shape();
  shape[0] = rows.size();
  return Tensor(std::move(shape), std::move(out));
}

Tensor flatten_tokens(const Tensor& visual) {
  return visual.reshaped({visual.dim(0) * visual.dim(1), visual.dim(2)});
}

}  // namespace

json to_json(const RunReport& r) {
  json steps = json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"step", s.step}, {"train_loss", s.train_loss}, {"grad_norm", s.grad_norm}});
  }
  json evals = json::array();
  for (const auto& e : r.evals) {
    evals.push_back({{"step", e.step}, {"eval_loss", e.eval_loss}, {"retrieval", metrics_json(e.metrics)}});
  }
  return json{{"config", r.config},
              {"steps", steps},
              {"evals", evals},
              {"param_checksum", checksum_hex(r.param_checksum)}};
}

std::string loss_curve_csv(const RunReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "step,train_loss,grad_norm\n";
  for (const auto& s : r.steps) os << s.step << ',' << s.train_loss << ',' << s.grad_norm << '\n';
  return os.str();
}

std::vector<Tensor> text_conditions(const Tensor& pooled_images, const Tensor& candidates, std::size_t top_k) {
  const std::size_t k = std::min(top_k, candidates.dim(0));
  const std::size_t d = pooled_images.dim(1);
  std::vector<Tensor> out;
  out.reserve(pooled_images.dim(0));
  for (std::size_t i = 0; i < pooled_images.dim(0); ++i) {
    out.push_back(topk_select(pooled_images.slice0(i, 1).reshaped({d}), candidates, k));
  }
  return out;
}

Var batch_loss(const BoundStack& model, const Var& visual, std::size_t images, const std::vector<Tensor>& conditions,
               const Tensor& text_feats, double temperature) {
  Tape& tape = *visual.tape();
  if (images == 0 || conditions.size() != images || text_feats.rank() != 2 || text_feats.dim(0) != images) {
    throw DimensionError("batch_loss: " + std::to_string(images) + " images, " + std::to_string(conditions.size()) +
                         " conditions, text features " + shape_string(text_feats.shape()));
  }
  const std::size_t s = visual.shape()[0] / images;
  std::vector<Var> feats;
  feats.reserve(images);
  for (std::size_t i = 0; i < images; ++i) {
    Var tokens = slice_rows(visual, i * s, s);
    Var out = stack_forward(model, tokens, tape.constant(conditions[i]));
    feats.push_back(mean_axis(out, 0));
  }
  return contrastive_loss(stack(feats), tape.constant(text_feats), temperature);
}

Evaluation evaluate(const AdapterStack& model, const EmbeddingBatch& data, const TrainConfig& config) {
  check_data(model.config(), data, "evaluation");
  const Tensor captions = data.pooled_captions();
  const std::vector<Tensor> conditions = text_conditions(data.pooled_images(), captions, config.top_k);
  std::vector<std::size_t> first;
  for (const auto& g : data.caption_groups) first.push_back(g.front());

  Tape tape;
  const BoundStack bound = bind(tape, model, false);
  const Tensor visual = flatten_tokens(data.visual);
  const std::size_t s = data.visual_tokens();
  Evaluation ev;
  std::vector<Var> feats;
  for (std::size_t i = 0; i < data.images(); ++i) {
    Var out = stack_forward(bound, tape.constant(visual.slice0(i * s, s)), tape.constant(conditions[i]));
    feats.push_back(mean_axis(out, 0));
  }
  Var v = stack(feats);
  ev.image_features = v.value();
  ev.loss = contrastive_loss(v, tape.constant(gather_rows(captions, first)), config.temperature).value().item();
  ev.metrics = evaluate_retrieval(ev.image_features, captions, data.caption_groups);
  return ev;
}

RunReport train(AdapterStack& model, const EmbeddingBatch& train_data, const std::optional<EmbeddingBatch>& val,
                const TrainConfig& config) {
  config.validate();
  if (model.mode != config.mode()) {
    throw ConfigError("adapter stack is built for " + std::string(to_string(model.mode)) + " but training asks for " +
                      std::string(to_string(config.mode())));
  }
  const AdapterConfig& cfg = model.config();
  check_data(cfg, train_data, "training");
  if (val) check_data(cfg, *val, "validation");

  RunReport report;
  report.config = json{{"train", config}, {"adapter", cfg}, {"composition", std::string(to_string(model.mode))}};

  const std::size_t n = train_data.images();
  const std::size_t b = std::min(config.batch_size, n);
  const std::size_t total = config.total_steps(n);
  const std::size_t s_v = train_data.visual_tokens();

  std::set<std::size_t> schedule;
  if (val) {
    schedule.insert(0);
    schedule.insert(total);
    if (config.eval_every > 0)
      for (std::size_t k = config.eval_every; k < total; k += config.eval_every) schedule.insert(k);
    for (std::size_t k : config.eval_at)
      if (k <= total) schedule.insert(k);
  }
  auto maybe_eval = [&](std::size_t step) {
    if (!schedule.count(step)) return;
    const Evaluation ev = evaluate(model, *val, config);
    if (!std::isfinite(ev.loss)) throw NonFiniteLossError(step, "non-finite eval loss at step " + std::to_string(step));
    report.evals.push_back({step, ev.loss, ev.metrics});
  };

  const Tensor pooled_images = train_data.pooled_images();
  const Tensor pooled_captions = train_data.pooled_captions();
  const Tensor visual = flatten_tokens(train_data.visual);

  Rng shuffle(derive_seed(config.seed, SeedTag::kShuffle));
  Rng caption_rng(derive_seed(config.seed, SeedTag::kCaptions));
  AdamW opt(AdamWOptions{config.learning_rate, config.beta1, config.beta2, config.epsilon, config.weight_decay});
  std::vector<Tensor*> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);

  std::vector<std::size_t> order;
  std::size_t cursor = n;
  for (std::size_t step = 0; step < total; ++step) {
    maybe_eval(step);
    if (cursor + b > n) {
      order = shuffle.permutation(n);
      cursor = 0;
    }
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 order.begin() + static_cast<std::ptrdiff_t>(cursor + b));
    cursor += b;
    std::sort(idx.begin(), idx.end());

    std::vector<std::size_t> positives, candidates;
    for (std::size_t i : idx) {
      const auto& g = train_data.caption_groups[i];
      positives.push_back(g[caption_rng.below(g.size())]);
      candidates.insert(candidates.end(), g.begin(), g.end());
    }
    const std::vector<Tensor> conditions =
        text_conditions(gather_rows(pooled_images, idx), gather_rows(pooled_captions, candidates), config.top_k);

    std::vector<std::size_t> token_rows;
    token_rows.reserve(b * s_v);
    for (std::size_t i : idx)
      for (std::size_t r = 0; r < s_v; ++r) token_rows.push_back(i * s_v + r);

    Tape tape;
    const BoundStack bound = bind(tape, model, true);
    Var loss = batch_loss(bound, tape.constant(gather_rows(visual, token_rows)), b, conditions,
                          gather_rows(pooled_captions, positives), config.temperature);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw NonFiniteLossError(step, "non-finite training loss at step " + std::to_string(step));
    }
    tape.backward(loss);

    std::vector<Tensor> grads;
    double sq = 0.0;
    for (const Var& v : bound.parameters()) {
      grads.push_back(tape.grad(v));
      for (double g : grads.back().data()) sq += g * g;
    }
    const double grad_norm = std::sqrt(sq);
    if (!std::isfinite(grad_norm)) {
      throw NonFiniteLossError(step, "non-finite gradient at step " + std::to_string(step));
    }
    opt.step(params, grads);
    report.steps.push_back({step, value, grad_norm});
  }
  maybe_eval(total);
  report.param_checksum = parameter_checksum(model);
  return report;
}

BenchmarkResult freq_vs_spatial_benchmark(const BenchmarkSpec& spec, const EmbeddingBatch& train_data,
                                          const EmbeddingBatch& val) {
  AdapterConfig a = spec.freq_config, b = spec.spatial_config;
  const std::size_t pf = param_count(a).total, ps = param_count(b).total;
  const std::size_t af = Adapter(a, Domain::kFrequency).parameter_count();
  const std::size_t as = Adapter(b, Domain::kSpatial).parameter_count();
  if (pf != ps || af != as || pf != af) {
    throw ParityError("parameter parity violated: frequency adapter has " + std::to_string(af) + " (formula " +
                      std::to_string(pf) + "), spatial adapter has " + std::to_string(as) + " (formula " +
                      std::to_string(ps) + ")");
  }
  a.init = b.init;
  if (!(a == b)) throw ParityError("frequency and spatial adapters must share one configuration");
  if (spec.learning_rates.empty() || spec.checkpoints.empty()) {
    throw ConfigError("benchmark grid needs at least one learning rate and one checkpoint");
  }
  for (std::size_t i = 0; i < spec.checkpoints.size(); ++i) {
    if (spec.checkpoints[i] == 0 || (i > 0 && spec.checkpoints[i] <= spec.checkpoints[i - 1])) {
      throw ConfigError("benchmark checkpoints must be positive and strictly increasing");
    }
  }

  BenchmarkResult result;
  for (double lr : spec.learning_rates) {
    for (Domain d : {Domain::kSpatial, Domain::kFrequency}) {
      TrainConfig tc = spec.train;
      tc.learning_rate = lr;
      tc.domain = d;
      tc.composition.reset();
      tc.epochs = 0;
      tc.steps = spec.checkpoints.back();
      tc.eval_every = 0;
      tc.eval_at = spec.checkpoints;
      const std::string method = d == Domain::kSpatial ? "Spatial" : "Freq";
      AdapterStack model =
          AdapterStack::create(d == Domain::kSpatial ? spec.spatial_config : spec.freq_config, tc.mode());
      RunReport report = train(model, train_data, val, tc);

      std::size_t prev = 0;
      for (std::size_t ck : spec.checkpoints) {
        BenchmarkRow row;
        row.step = ck;
        row.lr = lr;
        row.method = method;
        double sum = 0.0;
        for (std::size_t k = prev; k < ck; ++k) sum += report.steps[k].train_loss;
        row.train_loss = sum / static_cast<double>(ck - prev);
        prev = ck;
        const auto it = std::find_if(report.evals.begin(), report.evals.end(),
                                     [&](const EvalRecord& e) { return e.step == ck; });
        row.eval_loss = it->eval_loss;
        row.i2t_r1 = it->metrics.i2t.r1;
        row.i2t_r5 = it->metrics.i2t.r5;
        row.t2i_r1 = it->metrics.t2i.r1;
        row.t2i_r5 = it->metrics.t2i.r5;
        result.rows.push_back(row);
      }
      result.runs.push_back({lr, method, std::move(report)});
    }
  }
  return result;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(10) << "step,lr,method,train_loss,eval_loss,i2t_r1,i2t_r5,t2i_r1,t2i_r5\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.lr << ',' << r.method << ',' << r.train_loss << ',' << r.eval_loss << ',' << r.i2t_r1
       << ',' << r.i2t_r5 << ',' << r.t2i_r1 << ',' << r.t2i_r5 << '\n';
  }
  return os.str();
}

}  // namespace fqa
