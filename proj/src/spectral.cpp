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

#include "fqa/spectral.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "fqa/errors.hpp"

namespace fqa {

double dct_alpha(std::size_t k, std::size_t dim) {
  return k == 0 ? std::sqrt(1.0 / static_cast<double>(dim)) : std::sqrt(2.0 / static_cast<double>(dim));
}

namespace {

Tensor build_dct_matrix(std::size_t dim) {
  if (dim == 0) throw DimensionError("DCT dimension must be positive");
  Tensor t(Shape{dim, dim});
  const std::size_t period = 4 * dim;
  for (std::size_t k = 0; k < dim; ++k) {
    const double a = dct_alpha(k, dim);
    for (std::size_t n = 0; n < dim; ++n) {
      // cos is 4D-periodic in the integer (2n+1)k; reducing first keeps the
      // argument small and the entries accurate for large D.
      const std::size_t phase = ((2 * n + 1) * k) % period;
      t.at(k, n) = a * std::cos(std::numbers::pi * static_cast<double>(phase) / (2.0 * static_cast<double>(dim)));
    }
  }
  return t;
}

void check_last_axis(const Shape& shape, std::size_t dim, const char* op) {
  if (shape.empty() || shape.back() != dim) {
    throw DimensionError(std::string(op) + ": last axis of " + shape_string(shape) + " does not match basis dim " +
                         std::to_string(dim));
  }
}

}  // namespace

DctBasis::DctBasis(std::size_t dim) : DctBasis(dim, build_dct_matrix(dim)) {}

DctBasis::DctBasis(std::size_t dim, Tensor matrix)
    : dim_(dim),
      forward_(std::make_shared<const Tensor>(matrix)),
      inverse_(std::make_shared<const Tensor>(kernels::transpose(matrix))) {}

DctBasis DctBasis::from_matrix(Tensor matrix) {
  if (matrix.rank() != 2 || matrix.dim(0) != matrix.dim(1)) {
    throw DimensionError("basis matrix must be square, got " + shape_string(matrix.shape()));
  }
  const std::size_t d = matrix.dim(0);
  return DctBasis(d, std::move(matrix));
}

double DctBasis::orthonormality_error() const {
  const Tensor prod = kernels::matmul(*forward_, *inverse_);
  double err = 0.0;
  for (std::size_t i = 0; i < dim_; ++i)
    for (std::size_t j = 0; j < dim_; ++j) err = std::max(err, std::abs(prod.at(i, j) - (i == j ? 1.0 : 0.0)));
  return err;
}

std::shared_ptr<const DctBasis> dct_basis(std::size_t dim) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<const DctBasis>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(dim);
  if (it == cache.end()) it = cache.emplace(dim, std::make_shared<const DctBasis>(dim)).first;
  return it->second;
}

Tensor dct(const Tensor& e, const DctBasis& basis) {
  check_last_axis(e.shape(), basis.dim(), "dct");
  return kernels::apply_last_axis(*basis.forward_matrix(), e);
}

Tensor idct(const Tensor& x, const DctBasis& basis) {
  check_last_axis(x.shape(), basis.dim(), "idct");
  return kernels::apply_last_axis(*basis.inverse_matrix(), x);
}

Tensor dct(const Tensor& e) {
  if (e.rank() == 0) throw DimensionError("dct of a scalar");
  return dct(e, *dct_basis(e.shape().back()));
}

Tensor idct(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("idct of a scalar");
  return idct(x, *dct_basis(x.shape().back()));
}

Var dct(const Var& e, const DctBasis& basis) {
  check_last_axis(e.shape(), basis.dim(), "dct");
  return apply_last_axis(basis.forward_matrix(), e);
}

Var idct(const Var& x, const DctBasis& basis) {
  check_last_axis(x.shape(), basis.dim(), "idct");
  return apply_last_axis(basis.inverse_matrix(), x);
}

Tensor lowpass_reconstruct(const Tensor& e, std::size_t k) {
  if (e.rank() != 1) throw DimensionError("lowpass_reconstruct expects a vector, got " + shape_string(e.shape()));
  const std::size_t d = e.dim(0);
  if (k < 1 || k > d) {
    throw DimensionError("lowpass_reconstruct: k=" + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
  }
  const auto basis = dct_basis(d);
  Tensor x = dct(e, *basis);
  for (std::size_t i = k; i < d; ++i) x[i] = 0.0;
  return idct(x, *basis);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: length mismatch");
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw ValueError("cosine similarity undefined for a zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / std::max(na * nb, 1e-12);
}

std::size_t ConcentrationCurve::first_k_reaching(double threshold) const {
  for (std::size_t i = 0; i < similarity.size(); ++i) {
    if (similarity[i] >= threshold) return i + 1;
  }
  return dim + 1;
}

ConcentrationCurve concentration_curve(const Tensor& e) {
  if (e.rank() != 1) throw DimensionError("concentration_curve expects a vector, got " + shape_string(e.shape()));
  if (l2_norm(e.data()) == 0.0) throw ValueError("concentration curve undefined for a zero vector");
  const std::size_t d = e.dim(0);
  const auto basis = dct_basis(d);
  const Tensor x = dct(e, *basis);
  const Tensor& t = basis->matrix();

  // The k-term reconstruction is the sum of the first k rows of T weighted by
  // their coefficients, so it can be grown one row at a time.
  ConcentrationCurve curve;
  curve.dim = d;
  curve.similarity.reserve(d);
  std::vector<double> recon(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double c = x[k];
    for (std::size_t n = 0; n < d; ++n) recon[n] += c * t.at(k, n);
    const bool zero = l2_norm(recon) == 0.0;
    curve.similarity.push_back(zero ? 0.0 : cosine_similarity(e.data(), recon));
  }
  return curve;
}

Tensor aggregate_frequency(const Tensor& tokens) {
  if (tokens.rank() != 2) throw DimensionError("aggregate_frequency expects [W x D], got " + shape_string(tokens.shape()));
  return kernels::mean_axis(dct(tokens), 0);
}

GradientNormReport gradient_norm_check(const ScalarFn& loss_fn, const Tensor& e) {
  if (e.rank() == 0) throw DimensionError("gradient_norm_check needs at least one axis");
  const auto basis = dct_basis(e.shape().back());
  GradientNormReport report;
  {
    Tape tape;
    Var ev = tape.leaf(e);
    Var loss = loss_fn(tape, ev);
    tape.backward(loss);
    report.spatial_grad = tape.grad(ev);
  }
  {
    Tape tape;
    Var xv = tape.leaf(dct(e, *basis));
    Var loss = loss_fn(tape, idct(xv, *basis));
    tape.backward(loss);
    report.frequency_grad = tape.grad(xv);
  }
  report.spatial_norm = l2_norm(report.spatial_grad.data());
  report.frequency_norm = l2_norm(report.frequency_grad.data());
  return report;
}

Tensor power_law_signal(Rng& rng, std::size_t dim, double exponent) {
  Tensor coeffs(Shape{dim});
  for (std::size_t k = 0; k < dim; ++k) {
    coeffs[k] = rng.normal() * std::pow(static_cast<double>(k + 1), -exponent);
  }
  return idct(coeffs);
}

}  // namespace fqa
