// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "eclip/tensor.hpp"

namespace eclip {

/// Result of differentiating a scalar function: its value and one gradient
/// buffer per parameter, in parameter order.
struct ValueAndGrad {
  double value = 0.0;
  std::vector<std::vector<double>> grads;
};

/// Evaluates `f` once with graph recording and returns exact reverse-mode
/// gradients with respect to `params` (which must be leaves).
ValueAndGrad value_and_grad(const std::function<Tensor()>& f, const std::vector<Tensor>& params);

/// Central differences (f(x+eps) - f(x-eps)) / (2 eps) per coordinate.
/// Parameters are perturbed in place and restored bit-exactly.
std::vector<std::vector<double>> finite_diff_grad(const std::function<double()>& f, std::vector<Tensor> params,
                                                  double eps);

/// Same as finite_diff_grad restricted to the listed flat coordinates of each
/// parameter; other entries of the result are left at zero.
std::vector<std::vector<double>> finite_diff_grad(const std::function<double()>& f, std::vector<Tensor> params,
                                                  const std::vector<std::vector<std::size_t>>& coords, double eps);

/// ||a - b|| / max(||a||, ||b||, floor). The floor keeps gradients that are
/// zero up to rounding from being judged on noise alone.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6);

}  // namespace eclip
