// SPDX-License-Identifier: Apache-2.0

#include "eclip/decoder.hpp"

#include <cmath>

#include "eclip/errors.hpp"

namespace eclip {

DecoderParams DecoderParams::create(Rng& rng, const DecoderConfig& cfg) {
  const auto d = cfg.embed_dim;
  DecoderParams p;
  p.pos_emb = init_weight(rng, {cfg.num_queries, d});
  p.type_emb = init_weight(rng, {2, d});
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    DecoderBlockParams b;
    b.slot.w_z = init_weight(rng, {d, d});
    b.slot.w_q = init_weight(rng, {d, d});
    b.slot.w_v = init_weight(rng, {d, d});
    b.slot.w_o = init_weight(rng, {d, d});
    b.ln1 = LayerNormParams::create(d);
    b.msa = AttentionParams::create(rng, d);
    b.ln2 = LayerNormParams::create(d);
    b.ffn = FeedForwardParams::create(rng, d, cfg.ffn_hidden);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

InstanceQuerySet build_queries(const std::vector<Prompt>& prompts, const DecoderParams& params) {
  if (prompts.empty()) throw InputError("build_queries: no prompts");
  const auto t = prompts.size();
  const auto d = params.pos_emb.dim(1);
  if (t > params.pos_emb.dim(0)) {
    throw InputError("build_queries: " + std::to_string(t) + " prompts but only " +
                     std::to_string(params.pos_emb.dim(0)) + " query positions");
  }
  std::vector<Tensor> rows;
  std::vector<std::size_t> pos_ids(t), type_ids(t);
  rows.reserve(t);
  for (std::size_t i = 0; i < t; ++i) {
    const auto& e = prompts[i].embedding;
    if (!e.defined() || e.rank() != 1 || e.dim(0) != d) {
      throw InputError("build_queries: prompt " + std::to_string(i) + " must be a " + std::to_string(d) + "-vector");
    }
    rows.push_back(e);
    pos_ids[i] = i;
    type_ids[i] = static_cast<std::size_t>(prompts[i].modality);
  }
  InstanceQuerySet q;
  q.prompts = prompts;
  q.queries = add(add(stack(rows), gather_rows(params.pos_emb, pos_ids)), gather_rows(params.type_emb, type_ids));
  q.initial_state = Tensor::zeros({t, d});
  return q;
}

SlotAttentionOutput slot_attention_step(const Tensor& tokens, const Tensor& queries, const Tensor& prev_state,
                                        const SlotAttentionParams& p) {
  const auto d = tokens.dim(1);
  if (queries.shape() != prev_state.shape() || queries.dim(1) != d) {
    throw DimensionError("slot_attention_step: tokens " + shape_str(tokens.shape()) + ", queries " +
                         shape_str(queries.shape()) + ", state " + shape_str(prev_state.shape()));
  }
  const Tensor keys = matmul(tokens, p.w_z);                       // [N, D]
  const Tensor probes = matmul(add(queries, prev_state), p.w_q);  // [T, D]
  const Tensor logits = scale(matmul(keys, transpose(probes)), 1.0 / std::sqrt(static_cast<double>(d)));
  SlotAttentionOutput out;
  out.assignment = softmax(logits, 1);  // normalized over queries
  const Tensor values = matmul(tokens, p.w_v);
  const Tensor pooled = matmul(transpose(out.assignment), values);  // [T, D]
  out.update = div_rows(pooled, sum_axis(out.assignment, 0));
  out.state = add(prev_state, matmul(out.update, p.w_o));
  return out;
}

DecoderBlockOutput decoder_block(const Tensor& tokens, const Tensor& queries, const Tensor& prev_state,
                                 const DecoderBlockParams& p, std::size_t heads) {
  auto slot = slot_attention_step(tokens, queries, prev_state, p.slot);
  Tensor h = slot.state;
  h = add(h, multi_head_attention(layer_norm(h, p.ln1.gain, p.ln1.bias), p.msa, heads));
  h = add(h, feed_forward(layer_norm(h, p.ln2.gain, p.ln2.bias), p.ffn));
  return {slot.assignment, h};
}

DecodeResult decode(const Tensor& tokens, const InstanceQuerySet& queries, const DecoderParams& params,
                    const DecoderConfig& cfg) {
  if (params.blocks.empty()) throw ConfigError("decoder needs at least one block");
  DecodeResult r;
  Tensor h = queries.initial_state;
  for (const auto& block : params.blocks) {
    auto out = decoder_block(tokens, queries.queries, h, block, cfg.heads);
    r.assignments.push_back(out.assignment);
    h = out.state;
  }
  r.assignment = r.assignments.back();
  r.raw_state = h;
  r.instances = normalize(h);
  return r;
}

DecodeResult decode(const EncodedImage& encoded, const InstanceQuerySet& queries, const DecoderParams& params,
                    const DecoderConfig& cfg) {
  return decode(encoded.projected_tokens, queries, params, cfg);
}

}  // namespace eclip
