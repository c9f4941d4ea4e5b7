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
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "fqa/tensor.hpp"

namespace fqa {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives and has not been reset.
class Var {
 public:
  Var() = default;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording of tensor operations.
//
// Operations are appended in evaluation order, so the recording is already
// topologically sorted. `backward` walks it once in reverse; afterwards the
// tape is consumed and must be `reset` before recording a new forward pass.
// A tape is confined to one thread.
class Tape {
 public:
  // Accumulates the gradient of node `self` into the gradients of its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Tracked input: backward populates its gradient.
  Var leaf(Tensor value);
  // Untracked input.
  Var constant(Tensor value);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;

  // Gradient of the last backward pass with respect to `v`; zeros when no
  // gradient reached it.
  Tensor grad(const Var& v) const;

  void backward(const Var& loss);

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void reset();

  // Smallest |pre-activation| observed by any ReLU recorded since the last
  // reset. Infinity when no ReLU ran.
  double relu_margin() const noexcept { return relu_margin_; }
  void note_relu_margin(double m) noexcept {
    if (m < relu_margin_) relu_margin_ = m;
  }

  // Used by operation implementations.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
  void check_owned(const Var& v) const;
  // Mutable gradient buffer for node `id`, allocated (zeroed) on first use.
  std::vector<double>& grad_buffer(std::size_t id);
  const std::vector<double>& grad_of(std::size_t id) const { return grads_[id]; }
  bool node_requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn);

  std::deque<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool consumed_ = false;
  double relu_margin_ = std::numeric_limits<double>::infinity();
};

// Forward kernels on plain tensors. The differentiable operations below are
// built from these.
namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor affine(const Tensor& gamma, const Tensor& beta, const Tensor& x);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor avg_pool_2d(const Tensor& grid, std::size_t factor);
Tensor repeat_interleave_2d(const Tensor& grid, std::size_t factor);
Tensor transpose(const Tensor& x);
// out[..., k] = sum_n m[k, n] * x[..., n]
Tensor apply_last_axis(const Tensor& m, const Tensor& x);

}  // namespace kernels

Var matmul(const Var& a, const Var& b);

// Elementwise arithmetic. Operands have equal shapes, or one is a vector
// whose length equals the other's last dimension and broadcasts across it.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

// Subgradient at exactly zero is zero.
Var relu(const Var& x);
Var scale(const Var& x, double factor);
Var shift(const Var& x, double offset);
// gamma ⊙ x + beta with gamma, beta broadcast over the last axis of x.
Var affine(const Var& gamma, const Var& beta, const Var& x);

Var sum(const Var& x);
Var mean_axis(const Var& x, std::size_t axis);

// [H x W x D] grid, non-overlapping factor x factor windows.
Var avg_pool_2d(const Var& grid, std::size_t factor);
Var repeat_interleave_2d(const Var& grid, std::size_t factor);

Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);
// Rows [begin, begin + count) along axis 0.
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
// Columns [begin, begin + count) along the last axis.
Var slice_last(const Var& x, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
// Stacks equal-shape values along a new leading axis.
Var stack(const std::vector<Var>& parts);

// Applies a fixed matrix along the last axis: out[..., k] = sum_n m[k,n] x[..., n].
// The matrix is shared, not copied onto the tape, and receives no gradient.
Var apply_last_axis(std::shared_ptr<const Tensor> m, const Var& x);

// Rows scaled to unit l2 norm. A zero row raises ValueError naming the row.
Var l2_normalize_rows(const Var& x);
// Mean over rows i of logsumexp(logits[i, :]) - logits[i, i].
Var cross_entropy_diagonal(const Var& logits);

}  // namespace fqa
