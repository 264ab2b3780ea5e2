// SPDX-License-Identifier: Apache-2.0
//
// Transformer building blocks shared by the encoders and the instance decoder.
// Every parameter struct exposes `visit(prefix, f)` which calls
// `f(name, Tensor&)` for each parameter in a fixed order.
#pragma once

#include <cstddef>
#include <string>

#include "eclip/rng.hpp"
#include "eclip/tensor.hpp"

namespace eclip {

inline constexpr double kInitStd = 0.02;

/// Truncated normal (std 0.02) leaf of the given shape.
Tensor init_weight(Rng& rng, Shape shape);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams create(std::size_t width);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams create(Rng& rng, std::size_t width);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".bq", bq);
    f(prefix + ".wk", wk);
    f(prefix + ".bk", bk);
    f(prefix + ".wv", wv);
    f(prefix + ".bv", bv);
    f(prefix + ".wo", wo);
    f(prefix + ".bo", bo);
  }
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;

  static FeedForwardParams create(Rng& rng, std::size_t width, std::size_t hidden);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
  }
};

/// Pre-norm block: x + MSA(LN(x)), then + FFN(LN(.)).
struct TransformerBlockParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  FeedForwardParams ffn;

  static TransformerBlockParams create(Rng& rng, std::size_t width, std::size_t hidden);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    attn.visit(prefix + ".attn", f);
    ln2.visit(prefix + ".ln2", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

/// Scaled dot-product self-attention over the rows of x [S x width].
Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, std::size_t heads);
Tensor feed_forward(const Tensor& x, const FeedForwardParams& p);
Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p, std::size_t heads);

}  // namespace eclip
