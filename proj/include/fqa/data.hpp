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
#include <span>
#include <vector>

#include "fqa/tensor.hpp"

namespace fqa {

// Paired visual/textual token embeddings. Each image owns one or more
// captions; every caption belongs to exactly one image.
struct EmbeddingBatch {
  Tensor visual;   // [B x S_v x d_v]
  Tensor textual;  // [B_t x S_t x d_t]
  std::vector<std::vector<std::size_t>> caption_groups;

  std::size_t images() const { return visual.dim(0); }
  std::size_t captions() const { return textual.dim(0); }
  std::size_t visual_tokens() const { return visual.dim(1); }
  std::size_t text_tokens() const { return textual.dim(1); }
  std::size_t d_v() const { return visual.dim(2); }
  std::size_t d_t() const { return textual.dim(2); }

  // Throws DimensionError / ConfigError when shapes or groups are inconsistent.
  void validate() const;

  // Image index owning each caption.
  std::vector<std::size_t> caption_owner() const;

  Tensor image_tokens(std::size_t image) const;     // [S_v x d_v]
  Tensor caption_tokens(std::size_t caption) const;  // [S_t x d_t]
  // Token means: [B x d_v] and [B_t x d_t].
  Tensor pooled_images() const;
  Tensor pooled_captions() const;
};

// Selects images (in the given order) together with all their captions.
EmbeddingBatch subset(const EmbeddingBatch& batch, std::span<const std::size_t> images);

// Synthetic stand-in for encoder embeddings.
//
// Each pair draws an isotropic unit latent z. Visual tokens are
//   z + shared + field_p + noise
// where `shared` is one power-law signal common to all images (norm
// `shared_norm`) and field_p is a per-patch power-law signal of norm
// `field_norm`, centred so the patch fields average to zero. The CLS token,
// when present, is z + shared + noise. Latents are drawn orthogonal to the
// shared signal. Caption tokens are A z + noise, where A mixes the latent into
// d_t dimensions (identity plus a `text_mix`-scaled random matrix when
// d_t == d_v) and each caption adds its own noise draw on top of per-token
// noise. Everything is a deterministic function of `seed`; the first k pairs
// do not depend on n_pairs.
struct SyntheticSpec {
  std::size_t n_pairs = 512;
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  bool has_cls = true;
  std::size_t d_v = 64;
  std::size_t d_t = 64;
  std::size_t s_t = 4;
  std::size_t captions_per_image = 5;
  double spectrum = 1.0;  // power-law exponent of the structured signals
  double noise = 0.1;     // per-element noise standard deviation
  double shared_norm = 3.0;
  double field_norm = 1.0;
  double text_mix = 0.5;
  std::uint64_t seed = 42;

  void validate() const;
};

EmbeddingBatch generate_synthetic(const SyntheticSpec& spec);

struct DataSplit {
  EmbeddingBatch train;
  EmbeddingBatch val;
};

// One draw of n_pairs + n_val pairs from the same synthetic world: the first
// n_pairs train, the rest validate. n_val may be 0 (val is then empty).
DataSplit generate_split(const SyntheticSpec& spec, std::size_t n_val);

}  // namespace fqa
