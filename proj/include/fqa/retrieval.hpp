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
#include <vector>

#include "fqa/autodiff.hpp"
#include "fqa/tensor.hpp"

namespace fqa {

// Symmetric InfoNCE over l2-normalised rows with diagonal targets:
// logits = v t^T / temperature, loss = (CE(logits) + CE(logits^T)) / 2.
Var contrastive_loss(const Var& v_feats, const Var& t_feats, double temperature);
double contrastive_loss(const Tensor& v_feats, const Tensor& t_feats, double temperature);

// Mean of the k rows of `text_feats` most cosine-similar to `image_feat`.
// Ties go to the lower row index.
Tensor topk_select(const Tensor& image_feat, const Tensor& text_feats, std::size_t k);

enum class Direction { kI2T, kT2I };

struct RetrievalResult {
  Direction direction = Direction::kI2T;
  double r1 = 0.0;  // percentages
  double r5 = 0.0;
  double r10 = 0.0;
};

struct RetrievalMetrics {
  RetrievalResult i2t{Direction::kI2T};
  RetrievalResult t2i{Direction::kT2I};
};

// Cosine score matrix between B images and B_t captions, then recall@{1,5,10}
// in both directions. An image query hits when any of its captions ranks
// within the top k; a caption query hits when its image does.
RetrievalMetrics evaluate_retrieval(const Tensor& v_feats, const Tensor& t_feats,
                                    const std::vector<std::vector<std::size_t>>& groups);
// Same, from a precomputed [B x B_t] score matrix.
RetrievalMetrics evaluate_retrieval_scores(const Tensor& scores, const std::vector<std::vector<std::size_t>>& groups);

// Row-normalised copy; rows with norm below 1e-12 are left unscaled.
Tensor normalize_rows(const Tensor& x);

}  // namespace fqa
