// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "eclip/decoder.hpp"
#include "eclip/errors.hpp"
#include "support.hpp"

namespace eclip {
namespace {

using test::random_tensor;

DecoderConfig small_config(std::size_t t = 4) {
  DecoderConfig c;
  c.embed_dim = 8;
  c.blocks = 2;
  c.num_queries = t;
  c.heads = 2;
  c.ffn_hidden = 16;
  return c;
}

// Attention at the stock init scale is nearly uniform, which would make
// several of the symmetry checks below trivially true.
void sharpen(DecoderParams& p, double factor) {
  p.visit("d", [&](const std::string& name, Tensor& t) {
    if (t.rank() == 2 && name.find("emb") == std::string::npos) {
      for (auto& v : t.mutable_data()) v *= factor;
    }
  });
}

std::vector<Prompt> random_prompts(Rng& rng, std::size_t t, std::size_t d) {
  std::vector<Prompt> ps;
  for (std::size_t i = 0; i < t; ++i) {
    ps.push_back({normalize(random_tensor(rng, {d}, 1.0, false)), i % 2 ? Modality::image : Modality::text, i == 0});
  }
  return ps;
}

TEST(BuildQueries, PromptOnlyWhenEmbeddingsAreZero) {
  Rng rng(1);
  auto cfg = small_config();
  auto p = DecoderParams::create(rng, cfg);
  p.pos_emb = Tensor::zeros(p.pos_emb.shape(), true);
  p.type_emb = Tensor::zeros(p.type_emb.shape(), true);
  const auto prompts = random_prompts(rng, 4, 8);
  const auto q = build_queries(prompts, p);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(q.queries.at(t, j), prompts[t].embedding[j]);
  }
  for (double v : q.initial_state.data()) EXPECT_EQ(v, 0.0);
}

TEST(BuildQueries, MatchesElementwiseOracle) {
  Rng rng(2);
  auto cfg = small_config();
  const auto p = DecoderParams::create(rng, cfg);
  const auto prompts = random_prompts(rng, 3, 8);
  const auto q = build_queries(prompts, p);
  ASSERT_EQ(q.queries.shape(), (Shape{3, 8}));
  for (std::size_t t = 0; t < 3; ++t) {
    const auto type = static_cast<std::size_t>(prompts[t].modality);
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_EQ(q.queries.at(t, j), prompts[t].embedding[j] + p.pos_emb.at(t, j) + p.type_emb.at(type, j));
    }
  }
}

TEST(BuildQueries, SwappingPromptsWithPositionsSwapsRows) {
  Rng rng(3);
  auto cfg = small_config(2);
  auto p = DecoderParams::create(rng, cfg);
  auto prompts = random_prompts(rng, 2, 8);
  const auto a = build_queries(prompts, p).queries;
  std::swap(prompts[0], prompts[1]);
  auto swapped = p;
  swapped.pos_emb = concat({slice_rows(p.pos_emb, 1, 1), slice_rows(p.pos_emb, 0, 1)}).clone_leaf(true);
  const auto b = build_queries(prompts, swapped).queries;
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_EQ(a.at(0, j), b.at(1, j));
    EXPECT_EQ(a.at(1, j), b.at(0, j));
  }
}

TEST(BuildQueries, RejectsBadPrompts) {
  Rng rng(4);
  const auto p = DecoderParams::create(rng, small_config());
  EXPECT_THROW(build_queries({}, p), InputError);
  EXPECT_THROW(build_queries({{Tensor::zeros({7}), Modality::text}}, p), InputError);
  EXPECT_THROW(build_queries(random_prompts(rng, 5, 8), p), InputError);
}

TEST(SlotAttention, MatchesDoubleLoopReference) {
  Rng rng(5);
  const std::size_t n = 6, t = 3, d = 4;
  SlotAttentionParams p{random_tensor(rng, {d, d}), random_tensor(rng, {d, d}), random_tensor(rng, {d, d}),
                        random_tensor(rng, {d, d})};
  const auto z = random_tensor(rng, {n, d}, 1.0, false);
  const auto q = random_tensor(rng, {t, d}, 1.0, false);
  const auto h = random_tensor(rng, {t, d}, 1.0, false);
  const auto out = slot_attention_step(z, q, h, p);

  auto mv = [&](const Tensor& x, std::size_t r, const Tensor& w, std::size_t c) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += x.at(r, k) * w.at(k, c);
    return s;
  };
  std::vector<std::vector<double>> logits(n, std::vector<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t tt = 0; tt < t; ++tt) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double probe = 0.0;
        for (std::size_t k = 0; k < d; ++k) probe += (q.at(tt, k) + h.at(tt, k)) * p.w_q.at(k, c);
        s += mv(z, i, p.w_z, c) * probe;
      }
      logits[i][tt] = s / std::sqrt(static_cast<double>(d));
    }
  }
  std::vector<std::vector<double>> m(n, std::vector<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    double den = 0.0;
    for (std::size_t tt = 0; tt < t; ++tt) den += std::exp(logits[i][tt]);
    for (std::size_t tt = 0; tt < t; ++tt) {
      m[i][tt] = std::exp(logits[i][tt]) / den;
      EXPECT_NEAR(out.assignment.at(i, tt), m[i][tt], 1e-12);
    }
  }
  for (std::size_t tt = 0; tt < t; ++tt) {
    double col = 0.0;
    for (std::size_t i = 0; i < n; ++i) col += m[i][tt];
    for (std::size_t c = 0; c < d; ++c) {
      double dh = 0.0;
      for (std::size_t i = 0; i < n; ++i) dh += m[i][tt] * mv(z, i, p.w_v, c);
      dh /= col;
      EXPECT_NEAR(out.update.at(tt, c), dh, 1e-12);
    }
    for (std::size_t c = 0; c < d; ++c) {
      double mid = h.at(tt, c);
      for (std::size_t k = 0; k < d; ++k) mid += out.update.at(tt, k) * p.w_o.at(k, c);
      EXPECT_NEAR(out.state.at(tt, c), mid, 1e-12);
    }
  }
}

TEST(SlotAttention, SingleTokenUpdateIsProjectedToken) {
  Rng rng(6);
  const std::size_t d = 5;
  SlotAttentionParams p{random_tensor(rng, {d, d}), random_tensor(rng, {d, d}), random_tensor(rng, {d, d}),
                        random_tensor(rng, {d, d})};
  const auto z = random_tensor(rng, {1, d}, 1.0, false);
  const auto out = slot_attention_step(z, random_tensor(rng, {3, d}, 1.0, false), Tensor::zeros({3, d}), p);
  const auto expected = matmul(z, p.w_v);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out.update.at(t, c), expected.at(0, c), 1e-12);
  }
}

TEST(SlotAttention, ZeroTokensLeaveStateUnchanged) {
  Rng rng(7);
  const std::size_t d = 4;
  SlotAttentionParams p{random_tensor(rng, {d, d}), random_tensor(rng, {d, d}), random_tensor(rng, {d, d}),
                        random_tensor(rng, {d, d})};
  const auto h = random_tensor(rng, {2, d}, 1.0, false);
  const auto out = slot_attention_step(Tensor::zeros({5, d}), random_tensor(rng, {2, d}, 1.0, false), h, p);
  for (double v : out.update.to_vector()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(out.state.to_vector(), h.to_vector());
}

TEST(SlotAttention, ShapeMismatchThrows) {
  Rng rng(8);
  SlotAttentionParams p{random_tensor(rng, {4, 4}), random_tensor(rng, {4, 4}), random_tensor(rng, {4, 4}),
                        random_tensor(rng, {4, 4})};
  EXPECT_THROW(slot_attention_step(Tensor::zeros({3, 4}), Tensor::zeros({2, 4}), Tensor::zeros({3, 4}), p),
               DimensionError);
}

TEST(DecoderBlock, SingleQuerySelfAttentionIsIdentityAttention) {
  Rng rng(9);
  auto cfg = small_config(1);
  auto p = DecoderParams::create(rng, cfg);
  sharpen(p, 10.0);
  const auto& b = p.blocks[0];
  const auto z = random_tensor(rng, {5, 8}, 1.0, false);
  const auto q = random_tensor(rng, {1, 8}, 1.0, false);
  const auto out = decoder_block(z, q, Tensor::zeros({1, 8}), b, cfg.heads);
  const auto mid = slot_attention_step(z, q, Tensor::zeros({1, 8}), b.slot).state;
  // A single slot attends only to itself: MSA reduces to the value/output maps.
  const auto x = layer_norm(mid, b.ln1.gain, b.ln1.bias);
  const auto attn = add_bias(matmul(add_bias(matmul(x, b.msa.wv), b.msa.bv), b.msa.wo), b.msa.bo);
  const auto h = add(mid, attn);
  const auto expected = add(h, feed_forward(layer_norm(h, b.ln2.gain, b.ln2.bias), b.ffn));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.state.at(0, j), expected.at(0, j), 1e-12);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(out.assignment.at(i, 0), 1.0);
}

TEST(Decode, SingleBlockIsOneDecoderBlockFromZero) {
  Rng rng(10);
  auto cfg = small_config();
  cfg.blocks = 1;
  auto p = DecoderParams::create(rng, cfg);
  sharpen(p, 10.0);
  const auto z = random_tensor(rng, {6, 8}, 1.0, false);
  const auto qs = build_queries(random_prompts(rng, 4, 8), p);
  const auto r = decode(z, qs, p, cfg);
  const auto blk = decoder_block(z, qs.queries, Tensor::zeros({4, 8}), p.blocks[0], cfg.heads);
  test::expect_bitwise_equal(r.raw_state, blk.state);
  test::expect_bitwise_equal(r.assignment, blk.assignment);
}

TEST(Decode, RowsSumToOneAtEveryBlockAndOutputsAreUnit) {
  Rng rng(11);
  auto cfg = small_config(5);
  cfg.blocks = 3;
  auto p = DecoderParams::create(rng, cfg);
  sharpen(p, 10.0);
  for (int rep = 0; rep < 20; ++rep) {
    const auto r = decode(random_tensor(rng, {7, 8}, 2.0, false), build_queries(random_prompts(rng, 5, 8), p), p, cfg);
    ASSERT_EQ(r.assignments.size(), 3u);
    for (const auto& m : r.assignments) {
      for (std::size_t i = 0; i < 7; ++i) {
        double s = 0.0;
        for (std::size_t t = 0; t < 5; ++t) {
          EXPECT_GT(m.at(i, t), 0.0);
          EXPECT_LT(m.at(i, t), 1.0);
          s += m.at(i, t);
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
    for (std::size_t t = 0; t < 5; ++t) {
      double n = 0.0;
      for (std::size_t j = 0; j < 8; ++j) n += r.instances.at(t, j) * r.instances.at(t, j);
      EXPECT_NEAR(n, 1.0, 1e-12);
    }
  }
}

TEST(Decode, TokenPermutationInvariance) {
  Rng rng(12);
  auto cfg = small_config();
  auto p = DecoderParams::create(rng, cfg);
  sharpen(p, 10.0);
  const std::size_t n = 9;
  const auto z = random_tensor(rng, {n, 8}, 1.0, false);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  const auto zp = gather_rows(z, perm);
  const auto qs = build_queries(random_prompts(rng, 4, 8), p);
  const auto a = decode(z, qs, p, cfg);
  const auto b = decode(zp, qs, p, cfg);
  for (std::size_t k = 0; k < a.raw_state.numel(); ++k) EXPECT_NEAR(a.raw_state.data()[k], b.raw_state.data()[k], 1e-9);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(b.assignment.at(i, t), a.assignment.at(perm[i], t), 1e-12);
  }
}

TEST(Decode, QueryPermutationEquivariance) {
  Rng rng(13);
  auto cfg = small_config(5);
  auto p = DecoderParams::create(rng, cfg);
  sharpen(p, 10.0);
  const auto z = random_tensor(rng, {6, 8}, 1.0, false);
  auto prompts = random_prompts(rng, 5, 8);
  const auto a = decode(z, build_queries(prompts, p), p, cfg);

  const std::vector<std::size_t> perm = {3, 0, 4, 2, 1};
  std::vector<Prompt> permuted;
  for (auto k : perm) permuted.push_back(prompts[k]);
  auto q = p;
  q.pos_emb = gather_rows(p.pos_emb, perm).clone_leaf(true);
  const auto b = decode(z, build_queries(permuted, q), q, cfg);
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(b.raw_state.at(t, j), a.raw_state.at(perm[t], j), 1e-9);
  }
}

TEST(Decode, IdenticalQueriesGiveIdenticalRows) {
  Rng rng(14);
  auto cfg = small_config();
  auto p = DecoderParams::create(rng, cfg);
  sharpen(p, 10.0);
  const auto row0 = slice_rows(p.pos_emb, 0, 1);
  p.pos_emb = concat({row0, row0, row0, row0}).clone_leaf(true);
  const Prompt same{normalize(random_tensor(rng, {8}, 1.0, false)), Modality::text};
  const auto r = decode(random_tensor(rng, {6, 8}, 1.0, false), build_queries({same, same, same, same}, p), p, cfg);
  for (std::size_t t = 1; t < 4; ++t) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(r.raw_state.at(t, j), r.raw_state.at(0, j));
  }
}

TEST(Decode, GradientOfScalarReadoutMatchesFiniteDifferences) {
  Rng rng(15);
  auto cfg = small_config(3);
  auto p = DecoderParams::create(rng, cfg);
  sharpen(p, 10.0);
  const auto z = random_tensor(rng, {5, 8}, 1.0, false);
  const auto prompts = random_prompts(rng, 3, 8);
  const auto w = random_tensor(rng, {3, 8}, 1.0, false);
  std::vector<Tensor> params;
  p.visit("d", [&](const std::string&, Tensor& t) { params.push_back(t); });
  auto f = [&] { return sum(mul(decode(z, build_queries(prompts, p), p, cfg).instances, w)); };
  EXPECT_LE(test::grad_error(f, params, 1e-5), 1e-4);
}

TEST(Decode, DeterministicAcrossRuns) {
  Rng r1(16), r2(16);
  auto cfg = small_config();
  const auto p1 = DecoderParams::create(r1, cfg);
  const auto p2 = DecoderParams::create(r2, cfg);
  Rng data(17);
  const auto z = random_tensor(data, {6, 8}, 1.0, false);
  const auto prompts = random_prompts(data, 4, 8);
  test::expect_bitwise_equal(decode(z, build_queries(prompts, p1), p1, cfg).instances,
                             decode(z, build_queries(prompts, p2), p2, cfg).instances);
}

}  // namespace
}  // namespace eclip
