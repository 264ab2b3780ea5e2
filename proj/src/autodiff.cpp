// SPDX-License-Identifier: Apache-2.0

#include "eclip/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "eclip/errors.hpp"

namespace eclip {

ValueAndGrad value_and_grad(const std::function<Tensor()>& f, const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw InputError("value_and_grad: parameters must be leaves that require gradients");
    }
  }
  const Tensor out = f();
  if (out.numel() != 1) throw DimensionError("value_and_grad: function must return a scalar");
  const Gradients g = backward(out);
  ValueAndGrad r;
  r.value = out.item();
  r.grads.reserve(params.size());
  for (const auto& p : params) r.grads.push_back(g.of(p));
  return r;
}

std::vector<std::vector<double>> finite_diff_grad(const std::function<double()>& f, std::vector<Tensor> params,
                                                  double eps) {
  std::vector<std::vector<std::size_t>> coords;
  coords.reserve(params.size());
  for (const auto& p : params) {
    std::vector<std::size_t> all(p.numel());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords.push_back(std::move(all));
  }
  return finite_diff_grad(f, std::move(params), coords, eps);
}

std::vector<std::vector<double>> finite_diff_grad(const std::function<double()>& f, std::vector<Tensor> params,
                                                  const std::vector<std::vector<std::size_t>>& coords, double eps) {
  if (!(eps > 0.0)) throw InputError("finite_diff_grad: eps must be positive");
  if (coords.size() != params.size()) throw InputError("finite_diff_grad: one coordinate list per parameter");
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    std::vector<double> g(data.size(), 0.0);
    for (auto i : coords[k]) {
      if (i >= data.size()) throw InputError("finite_diff_grad: coordinate out of range");
      const double orig = data[i];
      data[i] = orig + eps;
      const double fp = f();
      data[i] = orig - eps;
      const double fm = f();
      data[i] = orig;
      g[i] = (fp - fm) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw DimensionError("relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nb)), floor);
  if (denom == 0.0) return std::sqrt(diff) == 0.0 ? 0.0 : INFINITY;
  return std::sqrt(diff) / denom;
}

}  // namespace eclip
