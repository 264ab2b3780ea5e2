// SPDX-License-Identifier: Apache-2.0
//
// Instance decoder: prompt-conditioned instance queries that gather
// instance-level representations from projected visual tokens through
// stacked slot-attention and query self-attention blocks.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eclip/encoders.hpp"
#include "eclip/layers.hpp"

namespace eclip {

enum class Modality : std::uint8_t { image = 0, text = 1 };

/// A multi-modal prompt: the joint-space embedding of an image or a text.
struct Prompt {
  Tensor embedding;  // [D]
  Modality modality = Modality::text;
  bool is_positive = false;
};

struct DecoderConfig {
  std::size_t embed_dim = 64;
  std::size_t blocks = 2;
  std::size_t num_queries = 6;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 256;
};

/// Single-head slot attention projections, applied as row vectors (x W).
struct SlotAttentionParams {
  Tensor w_z, w_q, w_v, w_o;  // [D, D] each

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_z", w_z);
    f(prefix + ".w_q", w_q);
    f(prefix + ".w_v", w_v);
    f(prefix + ".w_o", w_o);
  }
};

struct DecoderBlockParams {
  SlotAttentionParams slot;
  LayerNormParams ln1;
  AttentionParams msa;
  LayerNormParams ln2;
  FeedForwardParams ffn;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    slot.visit(prefix + ".slot", f);
    ln1.visit(prefix + ".ln1", f);
    msa.visit(prefix + ".msa", f);
    ln2.visit(prefix + ".ln2", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

struct DecoderParams {
  Tensor pos_emb;   // [T, D]
  Tensor type_emb;  // [2, D], indexed by Modality
  std::vector<DecoderBlockParams> blocks;

  static DecoderParams create(Rng& rng, const DecoderConfig& cfg);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".pos_emb", pos_emb);
    f(prefix + ".type_emb", type_emb);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".blocks." + std::to_string(i), f);
  }
};

/// Q[t] = prompt_t + pos_emb[t] + type_emb[modality_t], and H^0 = 0.
struct InstanceQuerySet {
  std::vector<Prompt> prompts;
  Tensor queries;        // [T, D]
  Tensor initial_state;  // [T, D] zeros

  std::size_t size() const { return prompts.size(); }
};

struct SlotAttentionOutput {
  Tensor assignment;  // M: [N, T], rows sum to one
  Tensor update;      // delta h: [T, D]
  Tensor state;       // H_mid = H_prev + delta h W_o
};

struct DecoderBlockOutput {
  Tensor assignment;
  Tensor state;
};

struct DecodeResult {
  Tensor instances;                 // L2-normalized rows of H^L: [T, D]
  Tensor raw_state;                 // H^L before normalization
  Tensor assignment;                // final block's M
  std::vector<Tensor> assignments;  // M of every block, in order
};

InstanceQuerySet build_queries(const std::vector<Prompt>& prompts, const DecoderParams& params);

SlotAttentionOutput slot_attention_step(const Tensor& tokens, const Tensor& queries, const Tensor& prev_state,
                                        const SlotAttentionParams& params);

DecoderBlockOutput decoder_block(const Tensor& tokens, const Tensor& queries, const Tensor& prev_state,
                                 const DecoderBlockParams& params, std::size_t heads);

/// Runs every block from H^0 = 0 over the projected visual tokens Z [N, D].
DecodeResult decode(const Tensor& tokens, const InstanceQuerySet& queries, const DecoderParams& params,
                    const DecoderConfig& cfg);
DecodeResult decode(const EncodedImage& encoded, const InstanceQuerySet& queries, const DecoderParams& params,
                    const DecoderConfig& cfg);

}  // namespace eclip
