// SPDX-License-Identifier: Apache-2.0

#include "eclip/layers.hpp"

#include <cmath>

#include "eclip/errors.hpp"

namespace eclip {

Tensor init_weight(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.truncated_normal(kInitStd);
  return Tensor::from(std::move(shape), std::move(v), true);
}

LayerNormParams LayerNormParams::create(std::size_t width) {
  return {Tensor::full({width}, 1.0, true), Tensor::zeros({width}, true)};
}

AttentionParams AttentionParams::create(Rng& rng, std::size_t width) {
  AttentionParams p;
  p.wq = init_weight(rng, {width, width});
  p.bq = Tensor::zeros({width}, true);
  p.wk = init_weight(rng, {width, width});
  p.bk = Tensor::zeros({width}, true);
  p.wv = init_weight(rng, {width, width});
  p.bv = Tensor::zeros({width}, true);
  p.wo = init_weight(rng, {width, width});
  p.bo = Tensor::zeros({width}, true);
  return p;
}

FeedForwardParams FeedForwardParams::create(Rng& rng, std::size_t width, std::size_t hidden) {
  FeedForwardParams p;
  p.w1 = init_weight(rng, {width, hidden});
  p.b1 = Tensor::zeros({hidden}, true);
  p.w2 = init_weight(rng, {hidden, width});
  p.b2 = Tensor::zeros({width}, true);
  return p;
}

TransformerBlockParams TransformerBlockParams::create(Rng& rng, std::size_t width, std::size_t hidden) {
  TransformerBlockParams p;
  p.ln1 = LayerNormParams::create(width);
  p.attn = AttentionParams::create(rng, width);
  p.ln2 = LayerNormParams::create(width);
  p.ffn = FeedForwardParams::create(rng, width, hidden);
  return p;
}

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, std::size_t heads) {
  const auto width = x.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const auto hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const Tensor q = add_bias(matmul(x, p.wq), p.bq);
  const Tensor k = add_bias(matmul(x, p.wk), p.bk);
  const Tensor v = add_bias(matmul(x, p.wv), p.bv);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * hd, hd);
    const Tensor kh = slice_cols(k, h * hd, hd);
    const Tensor vh = slice_cols(v, h * hd, hd);
    const Tensor att = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    outs.push_back(matmul(att, vh));
  }
  const Tensor merged = heads == 1 ? outs[0] : concat_cols(outs);
  return add_bias(matmul(merged, p.wo), p.bo);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  return add_bias(matmul(gelu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p, std::size_t heads) {
  const Tensor h = add(x, multi_head_attention(layer_norm(x, p.ln1.gain, p.ln1.bias), p.attn, heads));
  return add(h, feed_forward(layer_norm(h, p.ln2.gain, p.ln2.bias), p.ffn));
}

}  // namespace eclip
