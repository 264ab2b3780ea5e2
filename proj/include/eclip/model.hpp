// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eclip/decoder.hpp"
#include "eclip/encoders.hpp"
#include "eclip/objectives.hpp"
#include "json.hpp"

namespace eclip {

struct ModelConfig {
  ImageEncoderConfig image;
  TextEncoderConfig text;
  DecoderConfig decoder;

  /// Desk-scale defaults (width 64, D = 64, 8x8 grid, L = 2, T = 6).
  static ModelConfig desk();
  /// Dimensions used by the larger reference setup: D = 512, 8 heads,
  /// FFN 2048, 6 decoder blocks and 20 instance queries.
  static ModelConfig full_scale();
  std::size_t embed_dim() const { return decoder.embed_dim; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Strict: unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class ParamGroup { encoder, rest };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamGroup group;
  bool decoder = false;  // instance decoder parameters (frozen in stage 1)
};

/// Base model: both encoders with projections, the instance decoder, the
/// match head and the shared temperature.
class EclipModel {
 public:
  EclipModel() = default;
  EclipModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  ImageEncoderParams image;
  TextEncoderParams text;
  DecoderParams decoder;
  MatchHead match_head;
  Temperature temperature;

  /// Every parameter in a fixed order with a stable dotted name.
  std::vector<NamedParam> parameters();
  std::vector<NamedParam> parameters() const { return const_cast<EclipModel*>(this)->parameters(); }

  /// Deep copy; the copy's leaves require gradients only if `trainable`.
  EclipModel clone(bool trainable = true) const;

  EncodedImage encode_image(const ImageSample& s) const { return eclip::encode_image(s, image, cfg_.image); }
  EncodedText encode_text(const TextSample& s) const { return eclip::encode_text(s, text, cfg_.text); }
  DecodeResult decode(const Tensor& tokens, const InstanceQuerySet& q) const {
    return eclip::decode(tokens, q, decoder, cfg_.decoder);
  }
  InstanceQuerySet build_queries(const std::vector<Prompt>& prompts) const {
    return eclip::build_queries(prompts, decoder);
  }

  /// FNV-1a hash over the bytes of the selected parameters.
  std::uint64_t hash(bool decoder_only = false) const;

 private:
  ModelConfig cfg_;
};

}  // namespace eclip
