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

#include <functional>

#include "fqa/autodiff.hpp"

namespace fqa {

// Builds a scalar on `tape` from the tracked input `x`.
using ScalarFn = std::function<Var(Tape& tape, const Var& x)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  Tensor analytic;
  Tensor numeric;
};

// Compares the reverse-mode gradient of `f` at `x` with central differences
// of step `eps`. Relative error per element uses the denominator
// max(|analytic|, |numeric|, 1e-8).
GradCheckResult finite_difference_check(const ScalarFn& f, const Tensor& x, double eps);

}  // namespace fqa
