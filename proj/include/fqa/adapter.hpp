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
#include <string_view>
#include <vector>

#include "fqa/autodiff.hpp"
#include "fqa/tensor.hpp"

namespace fqa {

enum class InitKind { kZeroResidual, kSmallRandom };

// zero_residual: input layers ~ N(0, sigma^2), output layers and all biases
// zero, so a fresh adapter is an exact identity map. small_random: every
// parameter ~ N(0, sigma^2).
struct InitSpec {
  InitKind kind = InitKind::kZeroResidual;
  std::uint64_t seed = 0;
  double sigma = 0.02;

  friend bool operator==(const InitSpec&, const InitSpec&) = default;
};

struct AdapterConfig {
  std::size_t d_v = 64;
  std::size_t d_t = 64;
  std::size_t h = 8;
  std::size_t n_scales = 2;
  double w = 0.01;
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  bool has_cls = true;
  InitSpec init;
  // Residual adapters (identity at zero init). false selects the literal
  // G = f(X), gamma = raw form.
  bool residual = true;

  // Throws ConfigError / GridError describing the first violated constraint.
  void validate() const;

  std::size_t patch_count() const noexcept { return grid_h * grid_w; }
  std::size_t token_count() const noexcept { return patch_count() + (has_cls ? 1 : 0); }

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

// Largest scale count whose pooling factor 2^(N-1) divides both grid sides.
std::size_t max_scales(std::size_t grid_h, std::size_t grid_w);

// Global frequency adapter: two-layer ReLU bottleneck d_v -> h -> d_v.
struct MgfaParams {
  Tensor w1;  // [d_v x h]
  Tensor b1;  // [h]
  Tensor w2;  // [h x d_v]
  Tensor b2;  // [d_v]

  std::size_t count() const { return w1.numel() + b1.numel() + w2.numel() + b2.numel(); }
};

// Cross-modal modulator: d_t -> h -> 2 d_v, split into gamma and beta.
struct McfaParams {
  Tensor w1;  // [d_t x h]
  Tensor b1;  // [h]
  Tensor w2;  // [h x 2 d_v]
  Tensor b2;  // [2 d_v]

  std::size_t count() const { return w1.numel() + b1.numel() + w2.numel() + b2.numel(); }
};

struct ScaleParams {
  MgfaParams mgfa;
  McfaParams mcfa;
};

enum class Domain { kFrequency, kSpatial };

std::string_view to_string(Domain d);

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

// One MGFA/MCFA pair per scale, no sharing across scales. The frequency
// adapter wraps the pipeline in DCT/IDCT; the spatial adapter runs the same
// pipeline on raw embeddings.
class Adapter {
 public:
  Adapter(AdapterConfig config, Domain domain);

  const AdapterConfig& config() const noexcept { return config_; }
  Domain domain() const noexcept { return domain_; }

  std::vector<ScaleParams>& scales() noexcept { return scales_; }
  const std::vector<ScaleParams>& scales() const noexcept { return scales_; }

  // Fixed order: scale-major, then mgfa.{w1,b1,w2,b2}, mcfa.{w1,b1,w2,b2}.
  std::vector<NamedTensor> parameters();
  std::vector<ConstNamedTensor> parameters() const;

  // Number of allocated trainable scalars.
  std::size_t parameter_count() const;

 private:
  AdapterConfig config_;
  Domain domain_;
  std::vector<ScaleParams> scales_;
};

struct ParamCount {
  std::size_t per_mgfa = 0;
  std::size_t per_mcfa = 0;
  std::size_t total = 0;
};

// Closed form: per_mgfa = 2 d_v h + h + d_v,
// per_mcfa = d_t h + 2 d_v h + h + 2 d_v, total = N (per_mgfa + per_mcfa).
ParamCount param_count(const AdapterConfig& config);

// ---------------------------------------------------------------------------
// Differentiable forward pass

struct MgfaVars {
  Var w1, b1, w2, b2;
};

struct McfaVars {
  Var w1, b1, w2, b2;
};

struct ScaleVars {
  MgfaVars mgfa;
  McfaVars mcfa;
};

// An adapter's parameters placed on a tape, as leaves (trainable) or
// constants. Members are public so callers may substitute individual
// variables, e.g. to differentiate with respect to one weight.
struct BoundAdapter {
  const Adapter* adapter = nullptr;
  std::vector<ScaleVars> scales;

  const AdapterConfig& config() const { return adapter->config(); }
  // Same order as Adapter::parameters().
  std::vector<Var> parameters() const;
};

BoundAdapter bind(Tape& tape, const Adapter& adapter, bool trainable);

// x + relu(x w1 + b1) w2 + b2 (residual) or relu(x w1 + b1) w2 + b2.
Var mgfa_forward(const MgfaVars& p, const Var& x, bool residual = true);

struct Modulation {
  Var gamma;  // [d_v]
  Var beta;   // [d_v]
};

// hidden = relu(x_t w1 + b1), raw = hidden w2 + b2; gamma = 1 + raw[:d_v]
// (raw[:d_v] when not residual), beta = raw[d_v:].
Modulation mcfa_modulator(const McfaVars& p, const Var& x_t, bool residual = true);

// gamma ⊙ x_v + beta, broadcast over token positions.
Var mcfa_forward(const McfaVars& p, const Var& x_v, const Var& x_t, bool residual = true);
Var mcfa_apply(const Modulation& m, const Var& x_v);

// Residual: g + w (c - x). Literal: g + w c.
Var fuse(const Var& g, const Var& c, const Var& x, double w, bool residual);

struct MultiScaleTrace {
  // Per-scale outputs restored to the full token layout [S_v x d_v].
  std::vector<Var> per_scale;
  Var output;
};

// Multi-scale strategy on frequency (or, for the spatial adapter, raw)
// features. x_v is [S_v x d_v]; x_t is the text condition, [d_t].
// Scale n pools the patch grid by 2^n and fuses X~ = G + w C. In residual
// mode its result is x + IR(X~ - Down(x)); in literal mode it is IR(X~).
// The output is the mean of the per-scale results.
MultiScaleTrace multiscale_forward_traced(const BoundAdapter& adapter, const Var& x_v, const Var& x_t);
Var multiscale_forward(const BoundAdapter& adapter, const Var& x_v, const Var& x_t);

// e_v: [S_v x d_v]; e_t: [S_t x d_t] text tokens (or one pooled [d_t]
// vector), mean-pooled into the condition.
Var freq_adapter_forward(const BoundAdapter& adapter, const Var& e_v, const Var& e_t);
Var spatial_adapter_forward(const BoundAdapter& adapter, const Var& e_v, const Var& e_t);
// Dispatches on the adapter's domain.
Var adapter_forward(const BoundAdapter& adapter, const Var& e_v, const Var& e_t);

enum class CompositionMode { kFreqOnly, kSpatialOnly, kFuseFreqFirst, kFuseSpatialFirst, kFuseParallel };

std::string_view to_string(CompositionMode m);
CompositionMode composition_from_string(std::string_view s);
bool uses_freq(CompositionMode m);
bool uses_spatial(CompositionMode m);

// freq_first = spatial(freq(e)); spatial_first = freq(spatial(e));
// parallel = e + (freq(e) - e) + (spatial(e) - e). Adapters not used by the
// mode may be null.
Var compose_forward(CompositionMode mode, const BoundAdapter* freq, const BoundAdapter* spatial, const Var& e_v,
                    const Var& e_t);

// The adapters a composition mode needs, trained and checkpointed together.
struct AdapterStack {
  CompositionMode mode = CompositionMode::kFreqOnly;
  std::optional<Adapter> freq;
  std::optional<Adapter> spatial;

  // Both adapters, when present, are built from `config` (and its init seed),
  // so they start from identical parameters.
  static AdapterStack create(const AdapterConfig& config, CompositionMode mode);

  const AdapterConfig& config() const { return freq ? freq->config() : spatial->config(); }
  // Names prefixed "freq." / "spatial.".
  std::vector<NamedTensor> parameters();
  std::vector<ConstNamedTensor> parameters() const;
  std::size_t parameter_count() const;
};

struct BoundStack {
  CompositionMode mode = CompositionMode::kFreqOnly;
  std::optional<BoundAdapter> freq;
  std::optional<BoundAdapter> spatial;

  std::vector<Var> parameters() const;
};

BoundStack bind(Tape& tape, const AdapterStack& stack, bool trainable);
Var stack_forward(const BoundStack& stack, const Var& e_v, const Var& e_t);

// Per-scale share of the adapter's change to the patch tokens: for scale n,
// the [grid_h x grid_w] map of || (hat_n - x) / N || per patch, measured in the
// spatial domain.
std::vector<Tensor> scale_delta_maps(const Adapter& adapter, const Tensor& e_v, const Tensor& e_t);

// Inference conveniences on plain tensors.
Tensor adapter_forward(const Adapter& adapter, const Tensor& e_v, const Tensor& e_t);
Tensor compose_forward(CompositionMode mode, const Adapter* freq, const Adapter* spatial, const Tensor& e_v,
                       const Tensor& e_t);
Tensor stack_forward(const AdapterStack& stack, const Tensor& e_v, const Tensor& e_t);

}  // namespace fqa
