// SPDX-License-Identifier: Apache-2.0
//
// Image and text transformer encoders with their projections into the
// joint embedding space.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eclip/layers.hpp"
#include "eclip/tensor.hpp"

namespace eclip {

enum class SourceTag { detail_page, comment, video_frame };

std::string to_string(SourceTag tag);
SourceTag parse_source_tag(const std::string& s);

/// A product image as a grid of pre-extracted patch features.
struct ImageSample {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  Tensor patch_features;  // [grid_h * grid_w, input_dim], row-major over the grid
  SourceTag source_tag = SourceTag::detail_page;

  std::size_t num_tokens() const { return grid_h * grid_w; }
};

struct TextSample {
  std::vector<std::uint32_t> token_ids;
  std::size_t vocab_size = 0;
};

struct ImageEncoderConfig {
  std::size_t input_dim = 16;
  std::size_t max_grid_h = 8;
  std::size_t max_grid_w = 8;
  std::size_t width = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 256;
  std::size_t embed_dim = 64;
};

struct TextEncoderConfig {
  std::size_t vocab_size = 256;
  std::size_t max_len = 16;
  std::size_t width = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 256;
  std::size_t embed_dim = 64;
};

struct ImageEncoderParams {
  Tensor patch_w;  // [input_dim, width]
  Tensor patch_b;
  Tensor cls;  // [width]
  Tensor pos;  // [1 + max_grid_h * max_grid_w, width]; row 0 belongs to CLS
  std::vector<TransformerBlockParams> blocks;
  LayerNormParams ln_final;
  Tensor proj;  // [width, embed_dim]

  static ImageEncoderParams create(Rng& rng, const ImageEncoderConfig& cfg);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".patch_w", patch_w);
    f(prefix + ".patch_b", patch_b);
    f(prefix + ".cls", cls);
    f(prefix + ".pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), f);
    ln_final.visit(prefix + ".ln_final", f);
    f(prefix + ".proj", proj);
  }
};

struct TextEncoderParams {
  Tensor token_emb;  // [vocab, width]; row 0 doubles as the CLS embedding
  Tensor pos;        // [1 + max_len, width]
  std::vector<TransformerBlockParams> blocks;
  LayerNormParams ln_final;
  Tensor proj;  // [width, embed_dim]

  static TextEncoderParams create(Rng& rng, const TextEncoderConfig& cfg);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".token_emb", token_emb);
    f(prefix + ".pos", pos);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), f);
    ln_final.visit(prefix + ".ln_final", f);
    f(prefix + ".proj", proj);
  }
};

struct EncodedImage {
  Tensor v_cls;             // [width]
  Tensor tokens;            // [N, width]
  Tensor projected_cls;     // [D], unit norm
  Tensor projected_tokens;  // Z: [N, D]
};

struct EncodedText {
  Tensor w_cls;          // [width]
  Tensor tokens;         // [M, width]
  Tensor projected_cls;  // [D], unit norm
};

/// Validates grid size, feature width and finiteness. Throws ConfigError when
/// the grid exceeds the configured maximum and InputError otherwise.
void validate(const ImageSample& sample, const ImageEncoderConfig& cfg);
void validate(const TextSample& sample, const TextEncoderConfig& cfg);

EncodedImage encode_image(const ImageSample& sample, const ImageEncoderParams& params, const ImageEncoderConfig& cfg);
EncodedText encode_text(const TextSample& sample, const TextEncoderParams& params, const TextEncoderConfig& cfg);

/// s(x_I, x_T): dot product of the two normalized projected CLS vectors.
double pair_similarity(const EncodedImage& img, const EncodedText& txt);

}  // namespace eclip
