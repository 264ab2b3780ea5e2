// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "eclip/encoders.hpp"
#include "eclip/errors.hpp"
#include "support.hpp"

namespace eclip {
namespace {

ImageSample random_image(Rng& rng, const ImageEncoderConfig& cfg, std::size_t h, std::size_t w) {
  ImageSample s;
  s.grid_h = h;
  s.grid_w = w;
  s.patch_features = test::random_tensor(rng, {h * w, cfg.input_dim}, 1.0, false);
  return s;
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

TEST(ImageEncoder, ShapesAndUnitProjection) {
  ImageEncoderConfig cfg;
  Rng rng(1);
  const auto p = ImageEncoderParams::create(rng, cfg);
  const auto e = encode_image(random_image(rng, cfg, 8, 8), p, cfg);
  EXPECT_EQ(e.v_cls.shape(), (Shape{cfg.width}));
  EXPECT_EQ(e.tokens.shape(), (Shape{64, cfg.width}));
  EXPECT_EQ(e.projected_cls.shape(), (Shape{cfg.embed_dim}));
  EXPECT_EQ(e.projected_tokens.shape(), (Shape{64, cfg.embed_dim}));
  EXPECT_NEAR(norm(e.projected_cls), 1.0, 1e-9);
}

TEST(ImageEncoder, SmallerGridIsAccepted) {
  ImageEncoderConfig cfg;
  Rng rng(2);
  const auto p = ImageEncoderParams::create(rng, cfg);
  EXPECT_EQ(encode_image(random_image(rng, cfg, 3, 5), p, cfg).projected_tokens.dim(0), 15u);
}

TEST(ImageEncoder, SourceTagIsMetadataOnly) {
  ImageEncoderConfig cfg;
  Rng rng(3);
  const auto p = ImageEncoderParams::create(rng, cfg);
  auto a = random_image(rng, cfg, 8, 8);
  auto b = a;
  b.source_tag = SourceTag::video_frame;
  test::expect_bitwise_equal(encode_image(a, p, cfg).projected_cls, encode_image(b, p, cfg).projected_cls);
}

TEST(ImageEncoder, DeterministicForFixedSeed) {
  ImageEncoderConfig cfg;
  Rng r1(4), r2(4), data(5);
  const auto img = random_image(data, cfg, 8, 8);
  const auto a = encode_image(img, ImageEncoderParams::create(r1, cfg), cfg);
  const auto b = encode_image(img, ImageEncoderParams::create(r2, cfg), cfg);
  test::expect_bitwise_equal(a.projected_tokens, b.projected_tokens);
}

TEST(ImageEncoder, PatchPermutationWithPositionsKeepsCls) {
  ImageEncoderConfig cfg;
  Rng rng(6);
  auto p = ImageEncoderParams::create(rng, cfg);
  // Larger weights so attention is far from uniform.
  for (auto& b : p.blocks) {
    for (Tensor* w : {&b.attn.wq, &b.attn.wk}) {
      for (auto& v : w->mutable_data()) v *= 20.0;
    }
  }
  const auto img = random_image(rng, cfg, 8, 8);
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);

  std::vector<double> feats, pos = p.pos.to_vector();
  const auto w = cfg.width;
  for (std::size_t k = 0; k < 64; ++k) {
    for (std::size_t j = 0; j < cfg.input_dim; ++j) feats.push_back(img.patch_features.at(perm[k], j));
    for (std::size_t j = 0; j < w; ++j) pos[(1 + k) * w + j] = p.pos.at(1 + perm[k], j);
  }
  auto permuted = img;
  permuted.patch_features = Tensor::from({64, cfg.input_dim}, feats);
  auto q = p;
  q.pos = Tensor::from(p.pos.shape(), pos, true);

  const auto a = encode_image(img, p, cfg).v_cls;
  const auto b = encode_image(permuted, q, cfg).v_cls;
  for (std::size_t j = 0; j < w; ++j) EXPECT_NEAR(a[j], b[j], 1e-9);
}

TEST(ImageEncoder, RejectsBadInputs) {
  ImageEncoderConfig cfg;
  Rng rng(7);
  const auto p = ImageEncoderParams::create(rng, cfg);
  EXPECT_THROW(encode_image(random_image(rng, cfg, 9, 8), p, cfg), ConfigError);
  auto wrong_width = random_image(rng, cfg, 2, 2);
  wrong_width.patch_features = Tensor::zeros({4, cfg.input_dim + 1});
  EXPECT_THROW(encode_image(wrong_width, p, cfg), InputError);
  auto nan = random_image(rng, cfg, 2, 2);
  auto v = nan.patch_features.to_vector();
  v[3] = std::nan("");
  nan.patch_features = Tensor::from({4, cfg.input_dim}, v);
  EXPECT_THROW(encode_image(nan, p, cfg), InputError);
}

TEST(TextEncoder, ShapesUnitNormAndDeterminism) {
  TextEncoderConfig cfg;
  Rng r1(8), r2(8);
  const auto p1 = TextEncoderParams::create(r1, cfg);
  const auto p2 = TextEncoderParams::create(r2, cfg);
  const TextSample t{{5, 17, 200}, cfg.vocab_size};
  const auto a = encode_text(t, p1, cfg);
  EXPECT_EQ(a.tokens.shape(), (Shape{3, cfg.width}));
  EXPECT_NEAR(norm(a.projected_cls), 1.0, 1e-9);
  test::expect_bitwise_equal(a.projected_cls, encode_text(t, p2, cfg).projected_cls);
}

TEST(TextEncoder, TokenPermutationWithPositionsKeepsCls) {
  TextEncoderConfig cfg;
  Rng rng(9);
  auto p = TextEncoderParams::create(rng, cfg);
  for (auto& b : p.blocks) {
    for (Tensor* w : {&b.attn.wq, &b.attn.wk}) {
      for (auto& v : w->mutable_data()) v *= 20.0;
    }
  }
  const std::vector<std::uint32_t> ids = {3, 40, 41, 99, 7};
  const std::vector<std::size_t> perm = {2, 0, 4, 1, 3};
  std::vector<std::uint32_t> permuted_ids;
  auto pos = p.pos.to_vector();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    permuted_ids.push_back(ids[perm[k]]);
    for (std::size_t j = 0; j < cfg.width; ++j) pos[(1 + k) * cfg.width + j] = p.pos.at(1 + perm[k], j);
  }
  auto q = p;
  q.pos = Tensor::from(p.pos.shape(), pos, true);
  const auto a = encode_text({ids, cfg.vocab_size}, p, cfg).w_cls;
  const auto b = encode_text({permuted_ids, cfg.vocab_size}, q, cfg).w_cls;
  for (std::size_t j = 0; j < cfg.width; ++j) EXPECT_NEAR(a[j], b[j], 1e-9);
}

TEST(TextEncoder, RejectsBadTokens) {
  TextEncoderConfig cfg;
  Rng rng(10);
  const auto p = TextEncoderParams::create(rng, cfg);
  EXPECT_THROW(encode_text({{256}, 256}, p, cfg), InputError);
  EXPECT_THROW(encode_text({{}, 256}, p, cfg), InputError);
  EXPECT_THROW(encode_text({std::vector<std::uint32_t>(cfg.max_len + 1, 1), 256}, p, cfg), InputError);
}

TEST(PairSimilarity, UnitAndOrthogonalAndLoop) {
  EncodedImage img;
  EncodedText txt;
  img.projected_cls = Tensor::vector({1, 0, 0});
  txt.projected_cls = Tensor::vector({1, 0, 0});
  EXPECT_EQ(pair_similarity(img, txt), 1.0);
  txt.projected_cls = Tensor::vector({0, 1, 0});
  EXPECT_EQ(pair_similarity(img, txt), 0.0);

  Rng rng(11);
  const auto a = normalize(test::random_tensor(rng, {16}, 1.0, false));
  const auto b = normalize(test::random_tensor(rng, {16}, 1.0, false));
  img.projected_cls = a;
  txt.projected_cls = b;
  double s = 0.0;
  for (std::size_t d = 0; d < 16; ++d) s += a[d] * b[d];
  EXPECT_NEAR(pair_similarity(img, txt), s, 1e-15);
  EXPECT_LE(std::abs(s), 1.0);
  img.projected_cls = b;
  txt.projected_cls = a;
  EXPECT_EQ(pair_similarity(img, txt), s);
}

TEST(Init, WeightsTruncatedNormalBiasesZero) {
  ImageEncoderConfig cfg;
  Rng rng(12);
  const auto p = ImageEncoderParams::create(rng, cfg);
  double sq = 0.0;
  for (double v : p.patch_w.data()) {
    EXPECT_LE(std::abs(v), 2 * 0.02 + 1e-15);
    sq += v * v;
  }
  const double std_est = std::sqrt(sq / static_cast<double>(p.patch_w.numel()));
  EXPECT_NEAR(std_est, 0.02 * 0.88, 0.003);  // std of N(0, s) truncated at 2s is 0.88 s
  for (double v : p.patch_b.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.blocks[0].attn.bq.data()) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace eclip
