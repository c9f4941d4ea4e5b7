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

#include "fqa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fqa/errors.hpp"

namespace fqa {

const Tensor& Var::value() const {
  if (!tape_) throw TapeError("value() on an unbound variable");
  return tape_->value(*this);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  if (consumed_) throw TapeError("tape already consumed by backward; reset before recording a new forward pass");
  nodes_.push_back(Node{std::move(value), requires_grad, requires_grad ? std::move(fn) : BackwardFn{}});
  grads_.emplace_back();
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) { return push(std::move(value), true, {}); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, {}); }

void Tape::check_owned(const Var& v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw TapeError("variable does not belong to this tape");
  }
}

const Tensor& Tape::value(const Var& v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(const Var& v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool rg = false;
  for (const Var& in : inputs) {
    check_owned(in);
    rg = rg || nodes_[in.id()].requires_grad;
  }
  return push(std::move(value), rg, std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool rg = false;
  for (const Var& in : inputs) {
    check_owned(in);
    rg = rg || nodes_[in.id()].requires_grad;
  }
  return push(std::move(value), rg, std::move(fn));
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].value.numel(), 0.0);
  return g;
}

void Tape::backward(const Var& loss) {
  check_owned(loss);
  if (consumed_) throw TapeError("stale tape: backward already ran for this forward pass");
  if (nodes_[loss.id()].value.numel() != 1) {
    throw TapeError("backward requires a scalar loss, got shape " + shape_string(nodes_[loss.id()].value.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || grads_[id].empty()) continue;
    node.backward(*this, id);
  }
}

Tensor Tape::grad(const Var& v) const {
  check_owned(v);
  if (!consumed_) throw TapeError("grad() requested before backward");
  const auto& g = grads_[v.id()];
  const Shape& s = nodes_[v.id()].value.shape();
  if (g.empty()) return Tensor(s);
  Tensor out(s);
  std::copy(g.begin(), g.end(), out.data().begin());
  return out;
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  consumed_ = false;
  relu_margin_ = std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

enum class Bcast { kNone, kA, kB };

struct BinaryLayout {
  Bcast mode;
  Shape out_shape;
  std::size_t inner;
};

BinaryLayout binary_layout(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return {Bcast::kNone, a.shape(), a.numel()};
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) return {Bcast::kB, a.shape(), b.numel()};
  if (a.rank() == 1 && b.rank() >= 1 && b.shape().back() == a.dim(0)) return {Bcast::kA, b.shape(), a.numel()};
  throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                       " are not broadcast-compatible");
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, const BinaryLayout& l, F f) {
  Tensor out(l.out_shape);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[l.mode == Bcast::kA ? i % l.inner : i];
    const double y = b[l.mode == Bcast::kB ? i % l.inner : i];
    out[i] = f(x, y);
  }
  return out;
}

bool is_power_of_two(std::size_t f) { return f != 0 && (f & (f - 1)) == 0; }

void check_grid(const Tensor& grid, const char* op) {
  if (grid.rank() != 3) throw GridError(std::string(op) + ": expected [H x W x D] grid, got " + shape_string(grid.shape()));
}

void check_factor(std::size_t factor, const char* op) {
  if (!is_power_of_two(factor)) {
    throw GridError(std::string(op) + ": factor must be a positive power of two, got " + std::to_string(factor));
  }
}

}  // namespace

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, binary_layout(a, b, "add"), [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, binary_layout(a, b, "sub"), [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, binary_layout(a, b, "mul"), [](double x, double y) { return x * y; });
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * factor;
  return out;
}

Tensor affine(const Tensor& gamma, const Tensor& beta, const Tensor& x) {
  if (x.rank() < 1 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.shape().back() ||
      beta.dim(0) != x.shape().back()) {
    throw DimensionError("affine: gamma " + shape_string(gamma.shape()) + " and beta " + shape_string(beta.shape()) +
                         " must match the last axis of " + shape_string(x.shape()));
  }
  const std::size_t d = gamma.numel();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = gamma[i % d] * x[i] + beta[i % d];
  return out;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const double* src = x.data().data() + (o * len + a) * inner;
      double* dst = out.data().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(len);
  for (double& v : out.data()) v *= inv;
  return out;
}

Tensor avg_pool_2d(const Tensor& grid, std::size_t factor) {
  check_grid(grid, "avg_pool_2d");
  check_factor(factor, "avg_pool_2d");
  const std::size_t h = grid.dim(0), w = grid.dim(1), d = grid.dim(2);
  if (h % factor != 0 || w % factor != 0) {
    throw GridError("avg_pool_2d: grid H=" + std::to_string(h) + ", W=" + std::to_string(w) +
                    " not divisible by factor " + std::to_string(factor));
  }
  const std::size_t oh = h / factor, ow = w / factor;
  Tensor out(Shape{oh, ow, d});
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double* src = grid.data().data() + (i * w + j) * d;
      double* dst = out.data().data() + ((i / factor) * ow + j / factor) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  }
  for (double& v : out.data()) v *= inv;
  return out;
}

Tensor repeat_interleave_2d(const Tensor& grid, std::size_t factor) {
  check_grid(grid, "repeat_interleave_2d");
  check_factor(factor, "repeat_interleave_2d");
  const std::size_t h = grid.dim(0), w = grid.dim(1), d = grid.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  Tensor out(Shape{oh, ow, d});
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      const double* src = grid.data().data() + ((i / factor) * w + j / factor) * d;
      std::copy_n(src, d, out.data().data() + (i * ow + j) * d);
    }
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  return out;
}

Tensor apply_last_axis(const Tensor& m, const Tensor& x) {
  if (m.rank() != 2 || x.rank() < 1 || x.shape().back() != m.dim(1)) {
    throw DimensionError("apply_last_axis: matrix " + shape_string(m.shape()) + " does not match last axis of " +
                         shape_string(x.shape()));
  }
  const std::size_t kdim = m.dim(0), ndim = m.dim(1);
  const std::size_t rows = x.numel() / ndim;
  Shape s = x.shape();
  s.back() = kdim;
  Tensor out(s);
  const double* pm = m.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * ndim;
    double* orow = out.data().data() + r * kdim;
    for (std::size_t k = 0; k < kdim; ++k) {
      const double* mk = pm + k * ndim;
      double acc = 0.0;
      for (std::size_t n = 0; n < ndim; ++n) acc += mk[n] * xr[n];
      orow[k] = acc;
    }
  }
  return out;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Differentiable operations

namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw TapeError("operation on an unbound variable");
  return *v.tape();
}

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw TapeError("operands recorded on different tapes");
  return t;
}

// Accumulates `g` (shaped like the broadcast output) into the gradient of an
// operand that was either full-shaped or broadcast along the last axis.
void accumulate_broadcast(Tape& t, std::size_t id, const std::vector<double>& g, bool broadcast, std::size_t inner) {
  if (!t.node_requires_grad(id)) return;
  auto& dst = t.grad_buffer(id);
  if (!broadcast) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i % inner] += g[i];
  }
}

void accumulate(Tape& t, std::size_t id, const std::vector<double>& g) {
  if (!t.node_requires_grad(id)) return;
  auto& dst = t.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  Tensor out = kernels::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    const auto& g = tp.grad_of(self);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (tp.node_requires_grad(ia)) {
      auto& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (tp.node_requires_grad(ib)) {
      auto& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = av[i * k + p];
          if (av_ip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av_ip * g[i * n + j];
        }
    }
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const BinaryLayout l = binary_layout(a.value(), b.value(), "add");
  Tensor out = kernels::add(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, l](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    accumulate_broadcast(tp, ia, g, l.mode == Bcast::kA, l.inner);
    accumulate_broadcast(tp, ib, g, l.mode == Bcast::kB, l.inner);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const BinaryLayout l = binary_layout(a.value(), b.value(), "sub");
  Tensor out = kernels::sub(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, l](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    accumulate_broadcast(tp, ia, g, l.mode == Bcast::kA, l.inner);
    std::vector<double> neg(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    accumulate_broadcast(tp, ib, neg, l.mode == Bcast::kB, l.inner);
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const BinaryLayout l = binary_layout(a.value(), b.value(), "mul");
  Tensor out = kernels::mul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, l](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    std::vector<double> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[l.mode == Bcast::kA ? i % l.inner : i];
      const double y = bv[l.mode == Bcast::kB ? i % l.inner : i];
      ga[i] = g[i] * y;
      gb[i] = g[i] * x;
    }
    accumulate_broadcast(tp, ia, ga, l.mode == Bcast::kA, l.inner);
    accumulate_broadcast(tp, ib, gb, l.mode == Bcast::kB, l.inner);
  });
}

Var relu(const Var& x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  double margin = std::numeric_limits<double>::infinity();
  for (double v : xv.data()) margin = std::min(margin, std::abs(v));
  t.note_relu_margin(margin);
  Tensor out = kernels::relu(xv);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const Tensor& xv = tp.value(ix);
    auto& dst = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) dst[i] += g[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tape& t = tape_of(x);
  Tensor out = kernels::scale(x.value(), factor);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, factor](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

Var shift(const Var& x, double offset) {
  Tape& t = tape_of(x);
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] + offset;
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) { accumulate(tp, ix, tp.grad_of(self)); });
}

Var affine(const Var& gamma, const Var& beta, const Var& x) {
  Tape& t = common_tape(gamma, x);
  if (beta.tape() != &t) throw TapeError("operands recorded on different tapes");
  Tensor out = kernels::affine(gamma.value(), beta.value(), x.value());
  const std::size_t ig = gamma.id(), ib = beta.id(), ix = x.id();
  return t.record(std::move(out), {gamma, beta, x}, [ig, ib, ix](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const Tensor& gv = tp.value(ig);
    const Tensor& xv = tp.value(ix);
    const std::size_t d = gv.numel();
    if (tp.node_requires_grad(ix)) {
      auto& gx = tp.grad_buffer(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gv[i % d];
    }
    if (tp.node_requires_grad(ig)) {
      auto& gg = tp.grad_buffer(ig);
      for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xv[i];
    }
    if (tp.node_requires_grad(ib)) {
      auto& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
    }
  });
}

Var sum(const Var& x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  Tensor out(Shape{});
  out[0] = s;
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    for (double& v : tp.grad_buffer(ix)) v += g;
  });
}

Var mean_axis(const Var& x, std::size_t axis) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out = kernels::mean_axis(xv, axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  const std::size_t len = xv.dim(axis);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, outer, inner, len](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    const double inv = 1.0 / static_cast<double>(len);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < len; ++a)
        for (std::size_t i = 0; i < inner; ++i) dst[(o * len + a) * inner + i] += g[o * inner + i] * inv;
  });
}

Var avg_pool_2d(const Var& grid, std::size_t factor) {
  Tape& t = tape_of(grid);
  Tensor out = kernels::avg_pool_2d(grid.value(), factor);
  const std::size_t ix = grid.id();
  return t.record(std::move(out), {grid}, [ix, factor](Tape& tp, std::size_t self) {
    const Shape& s = tp.value(ix).shape();
    const std::size_t h = s[0], w = s[1], d = s[2], ow = w / factor;
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double* src = g.data() + ((i / factor) * ow + j / factor) * d;
        double* out = dst.data() + (i * w + j) * d;
        for (std::size_t c = 0; c < d; ++c) out[c] += src[c] * inv;
      }
  });
}

Var repeat_interleave_2d(const Var& grid, std::size_t factor) {
  Tape& t = tape_of(grid);
  Tensor out = kernels::repeat_interleave_2d(grid.value(), factor);
  const std::size_t ix = grid.id();
  return t.record(std::move(out), {grid}, [ix, factor](Tape& tp, std::size_t self) {
    const Shape& s = tp.value(ix).shape();
    const std::size_t w = s[1], d = s[2];
    const std::size_t oh = s[0] * factor, ow = w * factor;
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const double* src = g.data() + (i * ow + j) * d;
        double* out = dst.data() + ((i / factor) * w + j / factor) * d;
        for (std::size_t c = 0; c < d; ++c) out[c] += src[c];
      }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tape& t = tape_of(x);
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) { accumulate(tp, ix, tp.grad_of(self)); });
}

Var transpose(const Var& x) {
  Tape& t = tape_of(x);
  Tensor out = kernels::transpose(x.value());
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
    const Tensor& xv = tp.value(ix);
    const std::size_t r = xv.dim(0), c = xv.dim(1);
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x);
  Tensor out = x.value().slice0(begin, count);
  const std::size_t stride = x.value().numel() / x.value().dim(0);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, begin, stride](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) dst[begin * stride + i] += g[i];
  });
}

Var slice_last(const Var& x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || count == 0 || begin + count > xv.shape().back()) {
    throw DimensionError("slice_last [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of range for " + shape_string(xv.shape()));
  }
  const std::size_t d = xv.shape().back();
  const std::size_t rows = xv.numel() / d;
  Shape s = xv.shape();
  s.back() = count;
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = xv[r * d + begin + c];
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, begin, count, d, rows](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) dst[r * d + begin + c] += g[r * count + c];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of zero parts");
  Tape& t = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat_rows requires rank >= 1");
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw TapeError("operands recorded on different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw DimensionError("concat_rows: " + shape_string(s) + " incompatible with " + shape_string(first));
    }
    rows += s[0];
  }
  Shape s = first;
  s[0] = rows;
  Tensor out(s);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.numel();
  }
  return t.record(std::move(out), parts, [ids, offsets](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.node_requires_grad(ids[k])) continue;
      auto& dst = tp.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[k] + i];
    }
  });
}

Var stack(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("stack of zero parts");
  std::vector<Var> lifted;
  lifted.reserve(parts.size());
  Shape s = parts.front().shape();
  s.insert(s.begin(), 1);
  for (const Var& p : parts) {
    if (p.shape() != parts.front().shape()) {
      throw DimensionError("stack: " + shape_string(p.shape()) + " differs from " + shape_string(parts.front().shape()));
    }
    lifted.push_back(reshape(p, s));
  }
  return concat_rows(lifted);
}

Var apply_last_axis(std::shared_ptr<const Tensor> m, const Var& x) {
  Tape& t = tape_of(x);
  Tensor out = kernels::apply_last_axis(*m, x.value());
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, m = std::move(m)](Tape& tp, std::size_t self) {
    const std::size_t kdim = m->dim(0), ndim = m->dim(1);
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    const std::size_t rows = dst.size() / ndim;
    const double* pm = m->data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * kdim;
      double* dr = dst.data() + r * ndim;
      for (std::size_t k = 0; k < kdim; ++k) {
        const double gk = gr[k];
        if (gk == 0.0) continue;
        const double* mk = pm + k * ndim;
        for (std::size_t n = 0; n < ndim; ++n) dr[n] += gk * mk[n];
      }
    }
  });
}

Var l2_normalize_rows(const Var& x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("l2_normalize_rows expects rank 2, got " + shape_string(xv.shape()));
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor out(xv.shape());
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    norms[i] = l2_norm(xv.data().subspan(i * c, c));
    if (norms[i] == 0.0) throw ValueError("cannot normalize zero-norm row " + std::to_string(i));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / norms[i];
  }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {x}, [ix, norms, c](Tape& tp, std::size_t self) {
    const Tensor& y = tp.value(self);
    const auto& g = tp.grad_of(self);
    auto& dst = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < norms.size(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / norms[i];
    }
  });
}

Var cross_entropy_diagonal(const Var& logits) {
  Tape& t = tape_of(logits);
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != lv.dim(1)) {
    throw DimensionError("cross_entropy_diagonal expects a square matrix, got " + shape_string(lv.shape()));
  }
  const std::size_t b = lv.dim(0);
  Tensor softmax(lv.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = lv.at(i, 0);
    for (std::size_t j = 1; j < b; ++j) mx = std::max(mx, lv.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < b; ++j) z += std::exp(lv.at(i, j) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < b; ++j) softmax.at(i, j) = std::exp(lv.at(i, j) - lse);
    total += lse - lv.at(i, i);
  }
  Tensor out(Shape{});
  out[0] = total / static_cast<double>(b);
  const std::size_t ix = logits.id();
  return t.record(std::move(out), {logits}, [ix, softmax = std::move(softmax), b](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0] / static_cast<double>(b);
    auto& dst = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) dst[i * b + j] += g * (softmax.at(i, j) - (i == j ? 1.0 : 0.0));
  });
}

}  // namespace fqa
