// SPDX-License-Identifier: Apache-2.0

#include "eclip/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eclip/errors.hpp"
#include "eclip/layers.hpp"

namespace eclip {

Temperature Temperature::create(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  return {Tensor::scalar(std::log(std::clamp(tau, kMin, kMax)), true)};
}

double Temperature::value() const { return std::exp(log_tau.item()); }

Tensor Temperature::inverse() const { return exp(neg(log_tau)); }

void Temperature::clamp() {
  auto d = log_tau.mutable_data();
  d[0] = std::clamp(d[0], std::log(kMin), std::log(kMax));
}

MatchHead MatchHead::create(Rng& rng, std::size_t embed_dim) {
  return {init_weight(rng, {embed_dim, 2}), Tensor::zeros({2}, true)};
}

namespace {

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void require_batch(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 2 || t.dim(0) < 1) {
    throw InputError(std::string(what) + ": expected a non-empty [B, D] batch");
  }
}

}  // namespace

Tensor itc_loss(const Tensor& image_cls, const Tensor& text_cls, const Tensor& inv_tau) {
  require_batch(image_cls, "itc_loss");
  require_batch(text_cls, "itc_loss");
  if (image_cls.shape() != text_cls.shape()) throw DimensionError("itc_loss: image/text batch shapes differ");
  const auto b = image_cls.dim(0);
  const auto diag = iota(b);
  const Tensor logits = mul_scalar(matmul(image_cls, transpose(text_cls)), inv_tau);  // [i, j] = s(I_i, T_j)
  const Tensor i2t = neg(sum(pick(log_softmax(logits, 1), diag)));
  const Tensor t2i = neg(sum(pick(log_softmax(transpose(logits), 1), diag)));
  return scale(add(i2t, t2i), 0.5);
}

Tensor inter_product_loss(const Tensor& h_base, const Tensor& h_momentum_pos, const Tensor& queue,
                          const Tensor& inv_tau) {
  require_batch(h_base, "inter_product_loss");
  require_batch(h_momentum_pos, "inter_product_loss");
  if (h_base.shape() != h_momentum_pos.shape()) throw DimensionError("inter_product_loss: base/momentum shapes differ");
  const auto b = h_base.dim(0);
  Tensor logits = reshape(rowwise_dot(h_base, h_momentum_pos), {b, 1});
  if (queue.defined()) {
    if (queue.rank() != 2 || queue.dim(1) != h_base.dim(1)) throw DimensionError("inter_product_loss: queue width");
    logits = concat_cols({logits, matmul(h_base, transpose(queue))});
  }
  logits = mul_scalar(logits, inv_tau);
  const std::vector<std::size_t> first(b, 0);
  return neg(sum(pick(log_softmax(logits, 1), first)));
}

Tensor itm_loss(const Tensor& instances, const Tensor& texts, std::span<const MatchLabel> labels,
                const MatchHead& head) {
  require_batch(instances, "itm_loss");
  if (instances.shape() != texts.shape()) throw DimensionError("itm_loss: instance/text shapes differ");
  if (labels.size() != instances.dim(0)) throw InputError("itm_loss: one label per pair required");
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) idx[i] = static_cast<std::size_t>(labels[i]);
  const Tensor logits = add_bias(matmul(mul(instances, texts), head.weight), head.bias);
  return neg(sum(pick(log_softmax(logits, 1), idx)));
}

Tensor itm_loss(const Tensor& instance, const Tensor& text, MatchLabel label, const MatchHead& head) {
  if (instance.rank() != 1 || text.rank() != 1) throw DimensionError("itm_loss: expected D-vectors");
  const MatchLabel labels[] = {label};
  return itm_loss(reshape(instance, {1, instance.dim(0)}), reshape(text, {1, text.dim(0)}), labels, head);
}

Tensor intra_product_loss(const Tensor& instances, const Tensor& text_cls, std::size_t positive,
                          const Tensor& inv_tau) {
  require_batch(instances, "intra_product_loss");
  const auto t = instances.dim(0);
  if (positive >= t) {
    throw InputError("intra_product_loss: positive index " + std::to_string(positive) + " >= T=" + std::to_string(t));
  }
  if (text_cls.rank() != 1 || text_cls.dim(0) != instances.dim(1)) throw DimensionError("intra_product_loss: text width");
  const Tensor sims = matmul(instances, reshape(text_cls, {text_cls.dim(0), 1}));  // [T, 1]
  const Tensor logits = reshape(mul_scalar(sims, inv_tau), {1, t});
  const std::size_t idx[] = {positive};
  return neg(sum(pick(log_softmax(logits, 1), idx)));
}

Tensor entropy_reg(const Tensor& assignment, std::size_t positive) {
  if (!assignment.defined() || assignment.rank() != 2) throw DimensionError("entropy_reg: expected [N, T]");
  const auto n = assignment.dim(0), t = assignment.dim(1);
  if (positive >= t) throw InputError("entropy_reg: positive index out of range");
  // Column entropies sum_i M_ij ln(1/M_ij).
  const Tensor entropies = neg(sum_axis(xlogx(assignment), 0));
  std::vector<double> sign(t, -1.0);
  sign[positive] = 1.0;
  const double offset = static_cast<double>(t - 1) * std::log(static_cast<double>(n));
  return add_scalar(sum(mul(entropies, Tensor::vector(sign))), offset);
}

LossBreakdown total_loss(const std::array<double, 5>& c, const LossWeights& weights) {
  const auto w = weights.as_array();
  std::array<double, 5> v{};
  for (std::size_t k = 0; k < 5; ++k) {
    if (!std::isfinite(c[k])) {
      throw TrainingError(kLossNames[k], std::string("non-finite loss component '") + kLossNames[k] + "'");
    }
    v[k] = w[k] == 0.0 ? 0.0 : w[k] * c[k];
  }
  LossBreakdown b{v[0], v[1], v[2], v[3], v[4], 0.0};
  b.total = v[0] + v[1] + v[2] + v[3] + v[4];
  return b;
}

CombinedLoss combine(const LossTerms& terms, const LossWeights& weights, std::size_t batch_size) {
  if (batch_size == 0) throw InputError("combine: empty batch");
  const auto w = weights.as_array();
  const double inv_b = 1.0 / static_cast<double>(batch_size);
  std::array<double, 5> values{};
  Tensor total;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& t = terms.terms[k];
    if (!t.defined() || w[k] == 0.0) continue;
    values[k] = t.item() * inv_b;
    const Tensor weighted = scale(t, w[k] * inv_b);
    total = total.defined() ? add(total, weighted) : weighted;
  }
  CombinedLoss out;
  out.breakdown = total_loss(values, weights);
  out.total = total.defined() ? total : Tensor::scalar(0.0);
  return out;
}

}  // namespace eclip
