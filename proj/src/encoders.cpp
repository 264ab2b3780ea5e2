// SPDX-License-Identifier: Apache-2.0

#include "eclip/encoders.hpp"

#include <cmath>

#include "eclip/errors.hpp"

namespace eclip {

std::string to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::detail_page:
      return "detail_page";
    case SourceTag::comment:
      return "comment";
    case SourceTag::video_frame:
      return "video_frame";
  }
  return "unknown";
}

SourceTag parse_source_tag(const std::string& s) {
  if (s == "detail_page") return SourceTag::detail_page;
  if (s == "comment") return SourceTag::comment;
  if (s == "video_frame") return SourceTag::video_frame;
  throw InputError("unknown source tag '" + s + "'");
}

ImageEncoderParams ImageEncoderParams::create(Rng& rng, const ImageEncoderConfig& cfg) {
  ImageEncoderParams p;
  p.patch_w = init_weight(rng, {cfg.input_dim, cfg.width});
  p.patch_b = Tensor::zeros({cfg.width}, true);
  p.cls = init_weight(rng, {cfg.width});
  p.pos = init_weight(rng, {1 + cfg.max_grid_h * cfg.max_grid_w, cfg.width});
  for (std::size_t i = 0; i < cfg.blocks; ++i) p.blocks.push_back(TransformerBlockParams::create(rng, cfg.width, cfg.ffn_hidden));
  p.ln_final = LayerNormParams::create(cfg.width);
  p.proj = init_weight(rng, {cfg.width, cfg.embed_dim});
  return p;
}

TextEncoderParams TextEncoderParams::create(Rng& rng, const TextEncoderConfig& cfg) {
  TextEncoderParams p;
  p.token_emb = init_weight(rng, {cfg.vocab_size, cfg.width});
  p.pos = init_weight(rng, {1 + cfg.max_len, cfg.width});
  for (std::size_t i = 0; i < cfg.blocks; ++i) p.blocks.push_back(TransformerBlockParams::create(rng, cfg.width, cfg.ffn_hidden));
  p.ln_final = LayerNormParams::create(cfg.width);
  p.proj = init_weight(rng, {cfg.width, cfg.embed_dim});
  return p;
}

void validate(const ImageSample& sample, const ImageEncoderConfig& cfg) {
  if (sample.grid_h == 0 || sample.grid_w == 0) throw InputError("image grid must be non-empty");
  if (sample.grid_h > cfg.max_grid_h || sample.grid_w > cfg.max_grid_w) {
    throw ConfigError("image grid " + std::to_string(sample.grid_h) + "x" + std::to_string(sample.grid_w) +
                      " exceeds configured maximum " + std::to_string(cfg.max_grid_h) + "x" +
                      std::to_string(cfg.max_grid_w));
  }
  const auto& f = sample.patch_features;
  if (!f.defined() || f.rank() != 2 || f.dim(0) != sample.num_tokens() || f.dim(1) != cfg.input_dim) {
    throw InputError("patch features must have shape [" + std::to_string(sample.num_tokens()) + "x" +
                     std::to_string(cfg.input_dim) + "]");
  }
  for (double v : f.data()) {
    if (!std::isfinite(v)) throw InputError("patch features contain non-finite values");
  }
}

void validate(const TextSample& sample, const TextEncoderConfig& cfg) {
  if (sample.token_ids.empty() || sample.token_ids.size() > cfg.max_len) {
    throw InputError("text length " + std::to_string(sample.token_ids.size()) + " outside [1, " +
                     std::to_string(cfg.max_len) + "]");
  }
  const auto vocab = sample.vocab_size ? std::min(sample.vocab_size, cfg.vocab_size) : cfg.vocab_size;
  for (auto id : sample.token_ids) {
    if (id >= vocab) throw InputError("token id " + std::to_string(id) + " out of vocabulary of " + std::to_string(vocab));
  }
}

namespace {

template <class Params>
Tensor run_blocks(Tensor x, const Params& p, std::size_t heads) {
  for (const auto& b : p.blocks) x = transformer_block(x, b, heads);
  return layer_norm(x, p.ln_final.gain, p.ln_final.bias);
}

}  // namespace

EncodedImage encode_image(const ImageSample& sample, const ImageEncoderParams& p, const ImageEncoderConfig& cfg) {
  validate(sample, cfg);
  const auto n = sample.num_tokens();
  std::vector<std::size_t> pos_ids(n + 1);
  pos_ids[0] = 0;
  for (std::size_t r = 0; r < sample.grid_h; ++r)
    for (std::size_t c = 0; c < sample.grid_w; ++c) pos_ids[1 + r * sample.grid_w + c] = 1 + r * cfg.max_grid_w + c;

  const Tensor patches = add_bias(matmul(sample.patch_features, p.patch_w), p.patch_b);
  Tensor x = concat({reshape(p.cls, {1, cfg.width}), patches});
  x = add(x, gather_rows(p.pos, pos_ids));
  x = run_blocks(x, p, cfg.heads);

  EncodedImage out;
  out.v_cls = row(x, 0);
  out.tokens = slice_rows(x, 1, n);
  out.projected_cls = normalize(reshape(matmul(reshape(out.v_cls, {1, cfg.width}), p.proj), {cfg.embed_dim}));
  out.projected_tokens = matmul(out.tokens, p.proj);
  return out;
}

EncodedText encode_text(const TextSample& sample, const TextEncoderParams& p, const TextEncoderConfig& cfg) {
  validate(sample, cfg);
  const auto m = sample.token_ids.size();
  std::vector<std::size_t> ids(m + 1), pos_ids(m + 1);
  ids[0] = 0;
  for (std::size_t i = 0; i < m; ++i) ids[i + 1] = sample.token_ids[i];
  for (std::size_t i = 0; i <= m; ++i) pos_ids[i] = i;

  Tensor x = add(gather_rows(p.token_emb, ids), gather_rows(p.pos, pos_ids));
  x = run_blocks(x, p, cfg.heads);

  EncodedText out;
  out.w_cls = row(x, 0);
  out.tokens = slice_rows(x, 1, m);
  out.projected_cls = normalize(reshape(matmul(reshape(out.w_cls, {1, cfg.width}), p.proj), {cfg.embed_dim}));
  return out;
}

double pair_similarity(const EncodedImage& img, const EncodedText& txt) {
  auto a = img.projected_cls.data();
  auto b = txt.projected_cls.data();
  if (a.size() != b.size()) throw DimensionError("pair_similarity: embedding sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace eclip
