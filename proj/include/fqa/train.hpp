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

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fqa/adapter.hpp"
#include "fqa/data.hpp"
#include "fqa/json.hpp"
#include "fqa/retrieval.hpp"

namespace fqa {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t steps = 200;
  std::size_t epochs = 0;  // when > 0, overrides steps with epochs * (images / batch)
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double temperature = 0.07;
  std::size_t top_k = 5;
  std::uint64_t seed = 42;
  Domain domain = Domain::kFrequency;
  // Overrides `domain` when set.
  std::optional<CompositionMode> composition;
  // Evaluate every this many steps (0: only before training and after the
  // last step). Explicit steps in `eval_at` are added to the schedule.
  std::size_t eval_every = 0;
  std::vector<std::size_t> eval_at;

  // learning_rate >= 0 (0 is allowed for frozen baselines), temperature > 0,
  // top_k >= 1, batch_size >= 1.
  void validate() const;
  CompositionMode mode() const;
  std::size_t total_steps(std::size_t n_images) const;

  bool operator==(const TrainConfig&) const = default;
};

void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);

struct StepRecord {
  std::size_t step = 0;  // updates applied before this loss was measured
  double train_loss = 0.0;
  double grad_norm = 0.0;
};

struct EvalRecord {
  std::size_t step = 0;
  double eval_loss = 0.0;
  RetrievalMetrics metrics;
};

struct RunReport {
  json config;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::uint64_t param_checksum = 0;
};

json to_json(const RunReport& r);
// step,train_loss,grad_norm
std::string loss_curve_csv(const RunReport& r);

// Features the loss and retrieval see for one split: pooled caption features,
// the top-K text condition for each image, and the image token tensors.
struct Evaluation {
  double loss = 0.0;
  RetrievalMetrics metrics;
  Tensor image_features;  // [B x d_v]
};

// Adapted, mean-pooled retrieval features of `data` scored against every
// caption. The loss pairs each image with its first caption. Top-K draws from
// all captions of `data`.
Evaluation evaluate(const AdapterStack& stack, const EmbeddingBatch& data, const TrainConfig& config);

// Contrastive loss of a batch whose visual tokens are given as one
// [B*S_v x d_v] variable. `conditions` holds one [d_t] text condition per
// image and `text_feats` the [B x d_t] positive caption features.
Var batch_loss(const BoundStack& stack, const Var& visual, std::size_t images, const std::vector<Tensor>& conditions,
               const Tensor& text_feats, double temperature);

// Top-K condition for each image against a candidate caption set.
std::vector<Tensor> text_conditions(const Tensor& pooled_images, const Tensor& candidates, std::size_t top_k);

// Trains `stack` in place. `val` may be empty (no eval records). Throws
// NonFiniteLossError on a NaN/inf loss and DimensionError when the data does
// not fit the adapter config or d_v != d_t.
RunReport train(AdapterStack& stack, const EmbeddingBatch& train_data, const std::optional<EmbeddingBatch>& val,
                const TrainConfig& config);

struct BenchmarkRow {
  std::size_t step = 0;
  double lr = 0.0;
  std::string method;  // "Spatial" or "Freq"
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double i2t_r1 = 0.0;
  double i2t_r5 = 0.0;
  double t2i_r1 = 0.0;
  double t2i_r5 = 0.0;
};

struct BenchmarkSpec {
  AdapterConfig freq_config;
  AdapterConfig spatial_config;
  TrainConfig train;  // learning_rate, steps, domain and eval schedule are set per run
  std::vector<double> learning_rates;
  std::vector<std::size_t> checkpoints;
};

struct BenchmarkRun {
  double lr = 0.0;
  std::string method;
  RunReport report;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;  // per lr: Spatial checkpoints, then Freq
  std::vector<BenchmarkRun> runs;
};

// Throws ParityError when the two configs differ in parameter count (or in
// anything but the init), ConfigError on an empty or non-increasing grid.
// Train loss at a checkpoint is the mean over the steps since the previous one.
BenchmarkResult freq_vs_spatial_benchmark(const BenchmarkSpec& spec, const EmbeddingBatch& train_data,
                                          const EmbeddingBatch& val);

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);

}  // namespace fqa
