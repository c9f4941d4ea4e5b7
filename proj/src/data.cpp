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

#include "fqa/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fqa/autodiff.hpp"
#include "fqa/errors.hpp"
#include "fqa/random.hpp"
#include "fqa/spectral.hpp"

namespace fqa {

void EmbeddingBatch::validate() const {
  if (visual.rank() != 3) throw DimensionError("visual embeddings must be [B x S_v x d_v], got " + shape_string(visual.shape()));
  if (textual.rank() != 3) throw DimensionError("textual embeddings must be [B_t x S_t x d_t], got " + shape_string(textual.shape()));
  if (caption_groups.size() != images()) {
    throw ConfigError("caption_groups has " + std::to_string(caption_groups.size()) + " entries for " +
                      std::to_string(images()) + " images");
  }
  std::vector<int> seen(captions(), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < caption_groups.size(); ++i) {
    if (caption_groups[i].empty()) throw ConfigError("image " + std::to_string(i) + " has no captions");
    for (std::size_t c : caption_groups[i]) {
      if (c >= captions()) throw ConfigError("caption index " + std::to_string(c) + " out of range");
      if (seen[c]++) throw ConfigError("caption " + std::to_string(c) + " belongs to more than one image");
      ++total;
    }
  }
  if (total != captions()) {
    throw ConfigError("caption groups cover " + std::to_string(total) + " of " + std::to_string(captions()) +
                      " captions");
  }
}

std::vector<std::size_t> EmbeddingBatch::caption_owner() const {
  std::vector<std::size_t> owner(captions(), 0);
  for (std::size_t i = 0; i < caption_groups.size(); ++i)
    for (std::size_t c : caption_groups[i]) owner[c] = i;
  return owner;
}

Tensor EmbeddingBatch::image_tokens(std::size_t image) const {
  return visual.slice0(image, 1).reshaped({visual_tokens(), d_v()});
}

Tensor EmbeddingBatch::caption_tokens(std::size_t caption) const {
  return textual.slice0(caption, 1).reshaped({text_tokens(), d_t()});
}

Tensor EmbeddingBatch::pooled_images() const { return kernels::mean_axis(visual, 1); }

Tensor EmbeddingBatch::pooled_captions() const { return kernels::mean_axis(textual, 1); }

EmbeddingBatch subset(const EmbeddingBatch& batch, std::span<const std::size_t> images) {
  if (images.empty()) throw ConfigError("subset of zero images");
  const std::size_t sv = batch.visual_tokens(), dv = batch.d_v();
  const std::size_t st = batch.text_tokens(), dt = batch.d_t();
  std::size_t ncap = 0;
  for (std::size_t i : images) {
    if (i >= batch.images()) throw ConfigError("image index " + std::to_string(i) + " out of range");
    ncap += batch.caption_groups[i].size();
  }
  EmbeddingBatch out;
  out.visual = Tensor(Shape{images.size(), sv, dv});
  out.textual = Tensor(Shape{ncap, st, dt});
  std::size_t next = 0;
  for (std::size_t k = 0; k < images.size(); ++k) {
    const std::size_t i = images[k];
    std::copy_n(batch.visual.data().begin() + static_cast<std::ptrdiff_t>(i * sv * dv), sv * dv,
                out.visual.data().begin() + static_cast<std::ptrdiff_t>(k * sv * dv));
    std::vector<std::size_t> group;
    for (std::size_t c : batch.caption_groups[i]) {
      std::copy_n(batch.textual.data().begin() + static_cast<std::ptrdiff_t>(c * st * dt), st * dt,
                  out.textual.data().begin() + static_cast<std::ptrdiff_t>(next * st * dt));
      group.push_back(next++);
    }
    out.caption_groups.push_back(std::move(group));
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (n_pairs < 1 || grid_h < 1 || grid_w < 1 || d_v < 1 || d_t < 1 || s_t < 1 || captions_per_image < 1) {
    throw ConfigError("synthetic spec sizes must all be >= 1");
  }
  for (double v : {spectrum, noise, shared_norm, field_norm, text_mix}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("synthetic spec scalars must be finite and >= 0");
  }
}

namespace {

void scale_to_norm(Tensor& v, double norm) {
  const double n = l2_norm(v.data());
  if (n == 0.0) return;
  for (double& x : v.data()) x *= norm / n;
}

}  // namespace

EmbeddingBatch generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t dv = spec.d_v, dt = spec.d_t;
  const std::size_t patches = spec.grid_h * spec.grid_w;
  const std::size_t sv = patches + (spec.has_cls ? 1 : 0);
  const std::size_t ncap = spec.n_pairs * spec.captions_per_image;

  Rng world(derive_seed(spec.seed, SeedTag::kDataWorld));
  Tensor shared = power_law_signal(world, dv, spec.spectrum);
  scale_to_norm(shared, spec.shared_norm);
  const double shared_n = l2_norm(shared.data());

  Tensor mix(Shape{dt, dv});
  {
    const double s = 1.0 / std::sqrt(static_cast<double>(dv));
    for (std::size_t r = 0; r < dt; ++r)
      for (std::size_t c = 0; c < dv; ++c) {
        const double g = world.normal() * s;
        mix.at(r, c) = dt == dv ? (r == c ? 1.0 : 0.0) + spec.text_mix * g : g;
      }
  }

  EmbeddingBatch batch;
  batch.visual = Tensor(Shape{spec.n_pairs, sv, dv});
  batch.textual = Tensor(Shape{ncap, spec.s_t, dt});
  batch.caption_groups.resize(spec.n_pairs);

  Rng rng(derive_seed(spec.seed, SeedTag::kDataSamples));
  std::vector<Tensor> fields(patches);
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    Tensor z = rng.normal_tensor({dv}, 1.0);
    if (shared_n > 0.0) {
      double dot = 0.0;
      for (std::size_t k = 0; k < dv; ++k) dot += z[k] * shared[k];
      for (std::size_t k = 0; k < dv; ++k) z[k] -= dot * shared[k] / (shared_n * shared_n);
    }
    scale_to_norm(z, 1.0);

    std::vector<double> field_mean(dv, 0.0);
    for (auto& f : fields) {
      f = power_law_signal(rng, dv, spec.spectrum);
      scale_to_norm(f, spec.field_norm);
      for (std::size_t k = 0; k < dv; ++k) field_mean[k] += f[k] / static_cast<double>(patches);
    }

    double* img = batch.visual.data().data() + i * sv * dv;
    for (std::size_t t = 0; t < sv; ++t) {
      const bool cls = spec.has_cls && t == 0;
      const Tensor* f = cls ? nullptr : &fields[t - (spec.has_cls ? 1 : 0)];
      for (std::size_t k = 0; k < dv; ++k) {
        double v = z[k] + shared[k] + spec.noise * rng.normal();
        if (f) v += (*f)[k] - field_mean[k];
        img[t * dv + k] = v;
      }
    }

    const Tensor projected = kernels::apply_last_axis(mix, z);
    for (std::size_t c = 0; c < spec.captions_per_image; ++c) {
      const std::size_t cap = i * spec.captions_per_image + c;
      batch.caption_groups[i].push_back(cap);
      const Tensor caption_noise = rng.normal_tensor({dt}, spec.noise);
      double* txt = batch.textual.data().data() + cap * spec.s_t * dt;
      for (std::size_t s = 0; s < spec.s_t; ++s)
        for (std::size_t k = 0; k < dt; ++k) txt[s * dt + k] = projected[k] + caption_noise[k] + spec.noise * rng.normal();
    }
  }
  return batch;
}

DataSplit generate_split(const SyntheticSpec& spec, std::size_t n_val) {
  SyntheticSpec all = spec;
  all.n_pairs = spec.n_pairs + n_val;
  EmbeddingBatch batch = generate_synthetic(all);
  if (n_val == 0) return {std::move(batch), {}};
  std::vector<std::size_t> a(spec.n_pairs), b(n_val);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), spec.n_pairs);
  return {subset(batch, a), subset(batch, b)};
}

}  // namespace fqa
