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

#include "fqa/adapter.hpp"

#include <bit>
#include <cmath>

#include "fqa/errors.hpp"
#include "fqa/random.hpp"
#include "fqa/spectral.hpp"

namespace fqa {

std::size_t max_scales(std::size_t grid_h, std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0) return 0;
  return 1 + static_cast<std::size_t>(std::min(std::countr_zero(grid_h), std::countr_zero(grid_w)));
}

void AdapterConfig::validate() const {
  if (d_v == 0 || d_t == 0) throw ConfigError("d_v and d_t must be positive");
  if (h < 1) throw ConfigError("bottleneck width h must be >= 1");
  if (n_scales < 1) throw ConfigError("n_scales must be >= 1");
  if (!std::isfinite(w) || w < 0.0) throw ConfigError("fusion weight w must be finite and >= 0");
  if (grid_h == 0 || grid_w == 0) throw GridError("grid dimensions must be positive");
  if (!(init.sigma >= 0.0) || !std::isfinite(init.sigma)) throw ConfigError("init sigma must be finite and >= 0");
  if (n_scales > 63) throw GridError("n_scales too large");
  const std::size_t factor = std::size_t{1} << (n_scales - 1);
  if (grid_h % factor != 0 || grid_w % factor != 0) {
    throw GridError("grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " is not divisible by 2^(N-1)=" +
                    std::to_string(factor) + " for N=" + std::to_string(n_scales) + "; maximum legal N is " +
                    std::to_string(max_scales(grid_h, grid_w)));
  }
}

std::string_view to_string(Domain d) { return d == Domain::kFrequency ? "frequency" : "spatial"; }

Adapter::Adapter(AdapterConfig config, Domain domain) : config_(config), domain_(domain) {
  config_.validate();
  Rng rng(derive_seed(config_.init.seed, SeedTag::kInit));
  const double s = config_.init.sigma;
  const bool all_random = config_.init.kind == InitKind::kSmallRandom;
  auto input_layer = [&](Shape shape) { return rng.normal_tensor(std::move(shape), s); };
  auto other = [&](Shape shape) { return all_random ? rng.normal_tensor(std::move(shape), s) : Tensor(std::move(shape)); };

  const std::size_t dv = config_.d_v, dt = config_.d_t, h = config_.h;
  scales_.reserve(config_.n_scales);
  for (std::size_t n = 0; n < config_.n_scales; ++n) {
    ScaleParams p;
    p.mgfa.w1 = input_layer({dv, h});
    p.mgfa.b1 = other({h});
    p.mgfa.w2 = other({h, dv});
    p.mgfa.b2 = other({dv});
    p.mcfa.w1 = input_layer({dt, h});
    p.mcfa.b1 = other({h});
    p.mcfa.w2 = other({h, 2 * dv});
    p.mcfa.b2 = other({2 * dv});
    scales_.push_back(std::move(p));
  }
}

std::vector<NamedTensor> Adapter::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t n = 0; n < scales_.size(); ++n) {
    const std::string pre = "scale" + std::to_string(n) + ".";
    auto& s = scales_[n];
    out.push_back({pre + "mgfa.w1", &s.mgfa.w1});
    out.push_back({pre + "mgfa.b1", &s.mgfa.b1});
    out.push_back({pre + "mgfa.w2", &s.mgfa.w2});
    out.push_back({pre + "mgfa.b2", &s.mgfa.b2});
    out.push_back({pre + "mcfa.w1", &s.mcfa.w1});
    out.push_back({pre + "mcfa.b1", &s.mcfa.b1});
    out.push_back({pre + "mcfa.w2", &s.mcfa.w2});
    out.push_back({pre + "mcfa.b2", &s.mcfa.b2});
  }
  return out;
}

std::vector<ConstNamedTensor> Adapter::parameters() const {
  std::vector<ConstNamedTensor> out;
  for (auto& p : const_cast<Adapter*>(this)->parameters()) out.push_back({std::move(p.name), p.tensor});
  return out;
}

std::size_t Adapter::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : scales_) n += s.mgfa.count() + s.mcfa.count();
  return n;
}

ParamCount param_count(const AdapterConfig& config) {
  config.validate();
  const std::size_t dv = config.d_v, dt = config.d_t, h = config.h;
  ParamCount c;
  c.per_mgfa = 2 * dv * h + (h + dv);
  c.per_mcfa = dt * h + 2 * dv * h + (h + 2 * dv);
  c.total = config.n_scales * (c.per_mgfa + c.per_mcfa);
  return c;
}

// ---------------------------------------------------------------------------

std::vector<Var> BoundAdapter::parameters() const {
  std::vector<Var> out;
  for (const auto& s : scales) {
    for (const Var& v : {s.mgfa.w1, s.mgfa.b1, s.mgfa.w2, s.mgfa.b2, s.mcfa.w1, s.mcfa.b1, s.mcfa.w2, s.mcfa.b2}) {
      out.push_back(v);
    }
  }
  return out;
}

BoundAdapter bind(Tape& tape, const Adapter& adapter, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  BoundAdapter b;
  b.adapter = &adapter;
  for (const auto& s : adapter.scales()) {
    ScaleVars v;
    v.mgfa = {put(s.mgfa.w1), put(s.mgfa.b1), put(s.mgfa.w2), put(s.mgfa.b2)};
    v.mcfa = {put(s.mcfa.w1), put(s.mcfa.b1), put(s.mcfa.w2), put(s.mcfa.b2)};
    b.scales.push_back(v);
  }
  return b;
}

Var mgfa_forward(const MgfaVars& p, const Var& x, bool residual) {
  if (x.shape().size() != 2 || x.shape()[1] != p.w1.shape()[0]) {
    throw DimensionError("mgfa_forward: input " + shape_string(x.shape()) + " does not match d_v=" +
                         std::to_string(p.w1.shape()[0]));
  }
  Var hidden = relu(add(matmul(x, p.w1), p.b1));
  Var out = add(matmul(hidden, p.w2), p.b2);
  return residual ? add(x, out) : out;
}

Modulation mcfa_modulator(const McfaVars& p, const Var& x_t, bool residual) {
  const std::size_t dt = p.w1.shape()[0];
  if (x_t.value().numel() != dt || x_t.shape().size() > 2) {
    throw DimensionError("mcfa_modulator: text condition " + shape_string(x_t.shape()) + " does not match d_t=" +
                         std::to_string(dt));
  }
  const std::size_t dv = p.w2.shape()[1] / 2;
  Var row = reshape(x_t, {1, dt});
  Var hidden = relu(add(matmul(row, p.w1), p.b1));
  Var raw = reshape(add(matmul(hidden, p.w2), p.b2), {2 * dv});
  Var gamma = slice_last(raw, 0, dv);
  if (residual) gamma = shift(gamma, 1.0);
  return {gamma, slice_last(raw, dv, dv)};
}

Var mcfa_apply(const Modulation& m, const Var& x_v) { return affine(m.gamma, m.beta, x_v); }

Var mcfa_forward(const McfaVars& p, const Var& x_v, const Var& x_t, bool residual) {
  const std::size_t dv = p.w2.shape()[1] / 2;
  if (x_v.shape().size() != 2 || x_v.shape()[1] != dv) {
    throw DimensionError("mcfa_forward: input " + shape_string(x_v.shape()) + " does not match d_v=" +
                         std::to_string(dv));
  }
  return mcfa_apply(mcfa_modulator(p, x_t, residual), x_v);
}

Var fuse(const Var& g, const Var& c, const Var& x, double w, bool residual) {
  return residual ? add(g, scale(sub(c, x), w)) : add(g, scale(c, w));
}

MultiScaleTrace multiscale_forward_traced(const BoundAdapter& adapter, const Var& x_v, const Var& x_t) {
  const AdapterConfig& cfg = adapter.config();
  const std::size_t d = cfg.d_v, gh = cfg.grid_h, gw = cfg.grid_w;
  if (x_v.shape().size() != 2 || x_v.shape()[1] != d) {
    throw DimensionError("multiscale_forward: visual input " + shape_string(x_v.shape()) + " does not match d_v=" +
                         std::to_string(d));
  }
  if (x_v.shape()[0] != cfg.token_count()) {
    throw GridError("multiscale_forward: " + std::to_string(x_v.shape()[0]) + " tokens, expected " +
                    std::to_string(cfg.token_count()) + " (" + std::to_string(gh) + "x" + std::to_string(gw) +
                    " patches" + (cfg.has_cls ? " + CLS)" : ")"));
  }
  const std::size_t off = cfg.has_cls ? 1 : 0;
  Var patches = cfg.has_cls ? slice_rows(x_v, 1, cfg.patch_count()) : x_v;
  Var grid = reshape(patches, {gh, gw, d});
  Var patches_flat = reshape(patches, {gh * gw, d});

  MultiScaleTrace trace;
  for (std::size_t n = 0; n < cfg.n_scales; ++n) {
    const ScaleVars& sv = adapter.scales[n];
    const std::size_t f = std::size_t{1} << n;
    const std::size_t ph = gh / f, pw = gw / f;
    Var seq = reshape(avg_pool_2d(grid, f), {ph * pw, d});
    const Modulation mod = mcfa_modulator(sv.mcfa, x_t, cfg.residual);
    Var fused = fuse(mgfa_forward(sv.mgfa, seq, cfg.residual), mcfa_apply(mod, seq), seq, cfg.w, cfg.residual);
    // Residual form: the scale contributes its upsampled change on top of the
    // full-resolution input, so pooling alone never blurs the output.
    Var restored = cfg.residual
                       ? add(patches_flat, reshape(repeat_interleave_2d(reshape(sub(fused, seq), {ph, pw, d}), f),
                                                   {gh * gw, d}))
                       : reshape(repeat_interleave_2d(reshape(fused, {ph, pw, d}), f), {gh * gw, d});
    if (cfg.has_cls) {
      Var cls = slice_rows(x_v, 0, off);
      Var cls_out =
          n == 0 ? fuse(mgfa_forward(sv.mgfa, cls, cfg.residual), mcfa_apply(mod, cls), cls, cfg.w, cfg.residual) : cls;
      restored = concat_rows({cls_out, restored});
    }
    trace.per_scale.push_back(restored);
  }
  trace.output = mean_axis(stack(trace.per_scale), 0);
  return trace;
}

Var multiscale_forward(const BoundAdapter& adapter, const Var& x_v, const Var& x_t) {
  return multiscale_forward_traced(adapter, x_v, x_t).output;
}

namespace {

Var pooled_text(const Var& e_t, std::size_t d_t) {
  const Shape& s = e_t.shape();
  if (s.size() == 1 && s[0] == d_t) return e_t;
  if (s.size() == 2 && s[1] == d_t) return mean_axis(e_t, 0);
  throw DimensionError("text embeddings " + shape_string(s) + " do not match d_t=" + std::to_string(d_t));
}

void check_visual(const Var& e_v, const AdapterConfig& cfg) {
  if (e_v.shape().size() != 2 || e_v.shape()[1] != cfg.d_v) {
    throw DimensionError("visual embeddings " + shape_string(e_v.shape()) + " do not match d_v=" +
                         std::to_string(cfg.d_v));
  }
}

}  // namespace

Var freq_adapter_forward(const BoundAdapter& adapter, const Var& e_v, const Var& e_t) {
  const AdapterConfig& cfg = adapter.config();
  if (adapter.adapter->domain() != Domain::kFrequency) throw ConfigError("freq_adapter_forward on a spatial adapter");
  check_visual(e_v, cfg);
  const auto vbasis = dct_basis(cfg.d_v);
  const auto tbasis = dct_basis(cfg.d_t);
  Var x_v = dct(e_v, *vbasis);
  Var x_t = dct(pooled_text(e_t, cfg.d_t), *tbasis);
  return idct(multiscale_forward(adapter, x_v, x_t), *vbasis);
}

Var spatial_adapter_forward(const BoundAdapter& adapter, const Var& e_v, const Var& e_t) {
  const AdapterConfig& cfg = adapter.config();
  if (adapter.adapter->domain() != Domain::kSpatial) throw ConfigError("spatial_adapter_forward on a frequency adapter");
  check_visual(e_v, cfg);
  return multiscale_forward(adapter, e_v, pooled_text(e_t, cfg.d_t));
}

Var adapter_forward(const BoundAdapter& adapter, const Var& e_v, const Var& e_t) {
  return adapter.adapter->domain() == Domain::kFrequency ? freq_adapter_forward(adapter, e_v, e_t)
                                                         : spatial_adapter_forward(adapter, e_v, e_t);
}

std::string_view to_string(CompositionMode m) {
  switch (m) {
    case CompositionMode::kFreqOnly: return "freq_only";
    case CompositionMode::kSpatialOnly: return "spatial_only";
    case CompositionMode::kFuseFreqFirst: return "fuse_freq_first";
    case CompositionMode::kFuseSpatialFirst: return "fuse_spatial_first";
    case CompositionMode::kFuseParallel: return "fuse_parallel";
  }
  return "unknown";
}

CompositionMode composition_from_string(std::string_view s) {
  for (auto m : {CompositionMode::kFreqOnly, CompositionMode::kSpatialOnly, CompositionMode::kFuseFreqFirst,
                 CompositionMode::kFuseSpatialFirst, CompositionMode::kFuseParallel}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown composition mode '" + std::string(s) + "'");
}

bool uses_freq(CompositionMode m) { return m != CompositionMode::kSpatialOnly; }
bool uses_spatial(CompositionMode m) { return m != CompositionMode::kFreqOnly; }

Var compose_forward(CompositionMode mode, const BoundAdapter* freq, const BoundAdapter* spatial, const Var& e_v,
                    const Var& e_t) {
  if (uses_freq(mode) && (!freq || freq->adapter->domain() != Domain::kFrequency)) {
    throw ConfigError(std::string(to_string(mode)) + " requires a frequency adapter");
  }
  if (uses_spatial(mode) && (!spatial || spatial->adapter->domain() != Domain::kSpatial)) {
    throw ConfigError(std::string(to_string(mode)) + " requires a spatial adapter");
  }
  if (uses_freq(mode) && uses_spatial(mode)) {
    AdapterConfig a = freq->config(), b = spatial->config();
    a.init = b.init;
    if (!(a == b)) throw ConfigError("composed adapters must share one configuration");
  }
  switch (mode) {
    case CompositionMode::kFreqOnly: return freq_adapter_forward(*freq, e_v, e_t);
    case CompositionMode::kSpatialOnly: return spatial_adapter_forward(*spatial, e_v, e_t);
    case CompositionMode::kFuseFreqFirst:
      return spatial_adapter_forward(*spatial, freq_adapter_forward(*freq, e_v, e_t), e_t);
    case CompositionMode::kFuseSpatialFirst:
      return freq_adapter_forward(*freq, spatial_adapter_forward(*spatial, e_v, e_t), e_t);
    case CompositionMode::kFuseParallel: {
      Var df = sub(freq_adapter_forward(*freq, e_v, e_t), e_v);
      Var ds = sub(spatial_adapter_forward(*spatial, e_v, e_t), e_v);
      return add(add(e_v, df), ds);
    }
  }
  throw ConfigError("unknown composition mode");
}

Tensor adapter_forward(const Adapter& adapter, const Tensor& e_v, const Tensor& e_t) {
  Tape tape;
  BoundAdapter b = bind(tape, adapter, false);
  return adapter_forward(b, tape.constant(e_v), tape.constant(e_t)).value();
}

Tensor compose_forward(CompositionMode mode, const Adapter* freq, const Adapter* spatial, const Tensor& e_v,
                       const Tensor& e_t) {
  Tape tape;
  BoundAdapter fb, sb;
  if (freq) fb = bind(tape, *freq, false);
  if (spatial) sb = bind(tape, *spatial, false);
  return compose_forward(mode, freq ? &fb : nullptr, spatial ? &sb : nullptr, tape.constant(e_v), tape.constant(e_t))
      .value();
}

AdapterStack AdapterStack::create(const AdapterConfig& config, CompositionMode mode) {
  AdapterStack s;
  s.mode = mode;
  if (uses_freq(mode)) s.freq.emplace(config, Domain::kFrequency);
  if (uses_spatial(mode)) s.spatial.emplace(config, Domain::kSpatial);
  return s;
}

std::vector<NamedTensor> AdapterStack::parameters() {
  std::vector<NamedTensor> out;
  if (freq)
    for (auto& p : freq->parameters()) out.push_back({"freq." + p.name, p.tensor});
  if (spatial)
    for (auto& p : spatial->parameters()) out.push_back({"spatial." + p.name, p.tensor});
  return out;
}

std::vector<ConstNamedTensor> AdapterStack::parameters() const {
  std::vector<ConstNamedTensor> out;
  for (auto& p : const_cast<AdapterStack*>(this)->parameters()) out.push_back({std::move(p.name), p.tensor});
  return out;
}

std::size_t AdapterStack::parameter_count() const {
  return (freq ? freq->parameter_count() : 0) + (spatial ? spatial->parameter_count() : 0);
}

std::vector<Var> BoundStack::parameters() const {
  std::vector<Var> out;
  if (freq) out = freq->parameters();
  if (spatial) {
    auto s = spatial->parameters();
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

BoundStack bind(Tape& tape, const AdapterStack& stack, bool trainable) {
  BoundStack b;
  b.mode = stack.mode;
  if (stack.freq) b.freq = bind(tape, *stack.freq, trainable);
  if (stack.spatial) b.spatial = bind(tape, *stack.spatial, trainable);
  return b;
}

Var stack_forward(const BoundStack& stack, const Var& e_v, const Var& e_t) {
  return compose_forward(stack.mode, stack.freq ? &*stack.freq : nullptr, stack.spatial ? &*stack.spatial : nullptr,
                         e_v, e_t);
}

Tensor stack_forward(const AdapterStack& stack, const Tensor& e_v, const Tensor& e_t) {
  Tape tape;
  BoundStack b = bind(tape, stack, false);
  return stack_forward(b, tape.constant(e_v), tape.constant(e_t)).value();
}

std::vector<Tensor> scale_delta_maps(const Adapter& adapter, const Tensor& e_v, const Tensor& e_t) {
  const AdapterConfig& cfg = adapter.config();
  Tape tape;
  BoundAdapter b = bind(tape, adapter, false);
  Var ev = tape.constant(e_v);
  check_visual(ev, cfg);
  Var et = pooled_text(tape.constant(e_t), cfg.d_t);
  const bool freq = adapter.domain() == Domain::kFrequency;
  const auto vbasis = dct_basis(cfg.d_v);
  Var x_v = freq ? dct(ev, *vbasis) : ev;
  Var x_t = freq ? dct(et, *dct_basis(cfg.d_t)) : et;
  const MultiScaleTrace trace = multiscale_forward_traced(b, x_v, x_t);

  const std::size_t off = cfg.has_cls ? 1 : 0;
  const double inv_n = 1.0 / static_cast<double>(cfg.n_scales);
  std::vector<Tensor> maps;
  for (const Var& hat : trace.per_scale) {
    Tensor delta = kernels::scale(kernels::sub(hat.value(), x_v.value()), inv_n);
    if (freq) delta = idct(delta, *vbasis);
    Tensor map(Shape{cfg.grid_h, cfg.grid_w});
    for (std::size_t p = 0; p < cfg.patch_count(); ++p) {
      map[p] = l2_norm(delta.data().subspan((p + off) * cfg.d_v, cfg.d_v));
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

}  // namespace fqa
