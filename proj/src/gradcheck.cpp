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

#include "fqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fqa/errors.hpp"

namespace fqa {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  Var out = f(tape, tape.constant(x));
  if (out.value().numel() != 1) {
    throw TapeError("finite_difference_check: function output has shape " + shape_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckResult finite_difference_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_difference_check: eps must be positive");

  GradCheckResult result;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var out = f(tape, xv);
    if (out.value().numel() != 1) {
      throw TapeError("finite_difference_check: function output has shape " + shape_string(out.shape()));
    }
    tape.backward(out);
    result.analytic = tape.grad(xv);
  }

  result.numeric = Tensor(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + eps;
    const double up = evaluate(f, probe);
    probe[i] = x[i] - eps;
    const double down = evaluate(f, probe);
    probe[i] = x[i];
    result.numeric[i] = (up - down) / (2.0 * eps);

    const double a = result.analytic[i], n = result.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    const double rel = std::abs(a - n) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace fqa
