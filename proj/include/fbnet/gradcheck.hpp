// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "fbnet/tensor.hpp"

namespace fbnet {

// Compares tape gradients against central finite differences.
//
// For every coordinate i of every tensor in `wrt`, the numeric derivative
// (f(x + eps e_i) - f(x - eps e_i)) / 2 eps is compared with the tape
// gradient. The returned error is the maximum over coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, floor)
// where floor = 1e-3 * (largest numeric derivative magnitude, or 1 if that
// is zero). The floor keeps coordinates whose true derivative is ~0 from
// dominating through cancellation noise.
//
// `loss` must return a scalar and be deterministic across calls (re-seed any
// dropout RNG inside it). Must be called in 64-bit precision.
struct GradCheckReport {
  double max_relative_error = 0;
  double max_abs_error = 0;
  std::size_t coordinates = 0;
};

GradCheckReport gradient_check(const std::function<Tensor<double>()>& loss,
                               std::vector<Tensor<double>> wrt, double eps = 1e-6);

// Single-input form: error of d f(x) / d x.
double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         Tensor<double> x, double eps = 1e-6);

}  // namespace fbnet
