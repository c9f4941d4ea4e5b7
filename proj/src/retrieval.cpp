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

#include "fqa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fqa/errors.hpp"

namespace fqa {

Var contrastive_loss(const Var& v_feats, const Var& t_feats, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (v_feats.shape().size() != 2 || v_feats.shape() != t_feats.shape()) {
    throw DimensionError("contrastive_loss: feature shapes " + shape_string(v_feats.shape()) + " and " +
                         shape_string(t_feats.shape()) + " must be equal [B x d]");
  }
  Var v = l2_normalize_rows(v_feats);
  Var t = l2_normalize_rows(t_feats);
  Var logits = scale(matmul(v, transpose(t)), 1.0 / temperature);
  Var i2t = cross_entropy_diagonal(logits);
  Var t2i = cross_entropy_diagonal(transpose(logits));
  return scale(add(i2t, t2i), 0.5);
}

double contrastive_loss(const Tensor& v_feats, const Tensor& t_feats, double temperature) {
  Tape tape;
  return contrastive_loss(tape.constant(v_feats), tape.constant(t_feats), temperature).value().item();
}

Tensor normalize_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("normalize_rows expects rank 2, got " + shape_string(x.shape()));
  Tensor out = x;
  const std::size_t c = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    const double n = l2_norm(x.data().subspan(i * c, c));
    if (n < 1e-12) continue;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= n;
  }
  return out;
}

Tensor topk_select(const Tensor& image_feat, const Tensor& text_feats, std::size_t k) {
  if (image_feat.rank() != 1 || text_feats.rank() != 2 || text_feats.dim(1) != image_feat.dim(0)) {
    throw DimensionError("topk_select: image " + shape_string(image_feat.shape()) + " and texts " +
                         shape_string(text_feats.shape()) + " are incompatible");
  }
  const std::size_t m = text_feats.dim(0), d = text_feats.dim(1);
  if (k < 1 || k > m) {
    throw ConfigError("topk_select: k=" + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
  }
  const double inorm = std::max(l2_norm(image_feat.data()), 1e-12);
  std::vector<double> score(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto row = text_feats.data().subspan(j * d, d);
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += row[c] * image_feat[c];
    score[j] = dot / std::max(inorm * l2_norm(row), 1e-12);
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  Tensor out(Shape{d});
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += text_feats[order[r] * d + c];
  for (double& v : out.data()) v /= static_cast<double>(k);
  return out;
}

namespace {

// Position of `target` when candidates are ordered by descending score with
// ties to the lower index.
std::size_t rank_of(std::span<const double> scores, std::size_t target) {
  std::size_t rank = 0;
  const double s = scores[target];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && j < target)) ++rank;
  }
  return rank;
}

void tally(RetrievalResult& r, std::size_t rank) {
  if (rank < 1) r.r1 += 1.0;
  if (rank < 5) r.r5 += 1.0;
  if (rank < 10) r.r10 += 1.0;
}

void to_percent(RetrievalResult& r, std::size_t n) {
  const double s = 100.0 / static_cast<double>(n);
  r.r1 *= s;
  r.r5 *= s;
  r.r10 *= s;
}

}  // namespace

RetrievalMetrics evaluate_retrieval_scores(const Tensor& scores, const std::vector<std::vector<std::size_t>>& groups) {
  if (scores.rank() != 2) throw DimensionError("score matrix must be rank 2");
  const std::size_t b = scores.dim(0), bt = scores.dim(1);
  if (groups.empty() || groups.size() != b) throw ConfigError("caption groups must list every image");
  std::vector<std::size_t> owner(bt, b);
  for (std::size_t i = 0; i < b; ++i) {
    if (groups[i].empty()) throw ConfigError("image " + std::to_string(i) + " has no captions");
    for (std::size_t c : groups[i]) {
      if (c >= bt || owner[c] != b) throw ConfigError("caption groups are not a partition of the captions");
      owner[c] = i;
    }
  }
  if (std::find(owner.begin(), owner.end(), b) != owner.end()) {
    throw ConfigError("caption groups are not a partition of the captions");
  }

  RetrievalMetrics m;
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = scores.data().subspan(i * bt, bt);
    std::size_t best = bt;
    for (std::size_t c : groups[i]) best = std::min(best, rank_of(row, c));
    tally(m.i2t, best);
  }
  std::vector<double> column(b);
  for (std::size_t c = 0; c < bt; ++c) {
    for (std::size_t i = 0; i < b; ++i) column[i] = scores[i * bt + c];
    tally(m.t2i, rank_of(column, owner[c]));
  }
  to_percent(m.i2t, b);
  to_percent(m.t2i, bt);
  return m;
}

RetrievalMetrics evaluate_retrieval(const Tensor& v_feats, const Tensor& t_feats,
                                    const std::vector<std::vector<std::size_t>>& groups) {
  if (v_feats.rank() != 2 || t_feats.rank() != 2 || v_feats.dim(1) != t_feats.dim(1)) {
    throw DimensionError("evaluate_retrieval: features " + shape_string(v_feats.shape()) + " and " +
                         shape_string(t_feats.shape()) + " are incompatible");
  }
  const Tensor v = normalize_rows(v_feats);
  const Tensor t = normalize_rows(t_feats);
  return evaluate_retrieval_scores(kernels::matmul(v, kernels::transpose(t)), groups);
}

}  // namespace fqa
