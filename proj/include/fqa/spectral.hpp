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
#include <memory>
#include <span>
#include <vector>

#include "fqa/autodiff.hpp"
#include "fqa/gradcheck.hpp"
#include "fqa/random.hpp"
#include "fqa/tensor.hpp"

namespace fqa {

// alpha(0) = sqrt(1/D), alpha(k) = sqrt(2/D) otherwise.
double dct_alpha(std::size_t k, std::size_t dim);

// Orthonormal DCT-II matrix T of size D x D:
//   T[k, n] = alpha(k) * cos(pi * (2n + 1) * k / (2D)).
// The forward transform is x = T e, the inverse is e = T^T x.
class DctBasis {
 public:
  explicit DctBasis(std::size_t dim);

  // Wraps an arbitrary square matrix as a basis. Used to inject faults into
  // verification runs; no orthonormality is enforced.
  static DctBasis from_matrix(Tensor matrix);

  std::size_t dim() const noexcept { return dim_; }
  const Tensor& matrix() const noexcept { return *forward_; }
  const std::shared_ptr<const Tensor>& forward_matrix() const noexcept { return forward_; }
  const std::shared_ptr<const Tensor>& inverse_matrix() const noexcept { return inverse_; }

  // max |T T^T - I| over all entries.
  double orthonormality_error() const;

 private:
  DctBasis(std::size_t dim, Tensor matrix);

  std::size_t dim_;
  std::shared_ptr<const Tensor> forward_;
  std::shared_ptr<const Tensor> inverse_;
};

// Process-wide cache, one basis per dimension, built on first request.
std::shared_ptr<const DctBasis> dct_basis(std::size_t dim);

// Transforms along the last axis of every token independently.
Tensor dct(const Tensor& e, const DctBasis& basis);
Tensor idct(const Tensor& x, const DctBasis& basis);
Tensor dct(const Tensor& e);
Tensor idct(const Tensor& x);
Var dct(const Var& e, const DctBasis& basis);
Var idct(const Var& x, const DctBasis& basis);

// Keeps the first k DCT coefficients of a length-D signal and inverts.
Tensor lowpass_reconstruct(const Tensor& e, std::size_t k);

// a.b / max(|a||b|, 1e-12); throws ValueError when either vector is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Cosine similarity between a signal and its k-coefficient low-pass
// reconstruction, for k = 1..D.
struct ConcentrationCurve {
  std::size_t dim = 0;
  std::vector<double> similarity;  // similarity[k - 1]

  double at(std::size_t k) const { return similarity.at(k - 1); }
  // Smallest k whose similarity reaches `threshold`.
  std::size_t first_k_reaching(double threshold) const;
};

ConcentrationCurve concentration_curve(const Tensor& e);

// Mean of the per-token DCTs of a [W x D] token block.
Tensor aggregate_frequency(const Tensor& tokens);

struct GradientNormReport {
  double spatial_norm = 0.0;
  double frequency_norm = 0.0;
  Tensor spatial_grad;
  Tensor frequency_grad;
};

// Differentiates the same loss once with respect to the spatial input e and
// once with respect to its DCT image x = dct(e), where the loss sees idct(x).
GradientNormReport gradient_norm_check(const ScalarFn& loss_fn, const Tensor& e);

// Random length-D signal whose DCT coefficients are N(0, 1) scaled by
// (k + 1)^-exponent, returned in the spatial domain.
Tensor power_law_signal(Rng& rng, std::size_t dim, double exponent);

}  // namespace fqa
