// SPDX-License-Identifier: Apache-2.0

#include "eclip/model.hpp"

#include <bit>

#include "eclip/errors.hpp"

namespace eclip {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.image.embed_dim = c.text.embed_dim = c.decoder.embed_dim = 512;
  c.decoder.heads = 8;
  c.decoder.ffn_hidden = 2048;
  c.decoder.blocks = 6;
  c.decoder.num_queries = 20;
  return c;
}

void ModelConfig::validate() const {
  if (image.embed_dim != decoder.embed_dim || text.embed_dim != decoder.embed_dim) {
    throw ConfigError("image, text and decoder embed_dim must agree");
  }
  auto check_heads = [](std::size_t width, std::size_t heads, const char* what) {
    if (heads == 0 || width % heads != 0) throw ConfigError(std::string(what) + ": width not divisible by heads");
  };
  check_heads(image.width, image.heads, "image encoder");
  check_heads(text.width, text.heads, "text encoder");
  check_heads(decoder.embed_dim, decoder.heads, "decoder");
  if (decoder.blocks < 1) throw ConfigError("decoder needs at least one block");
  if (decoder.num_queries < 1) throw ConfigError("decoder needs at least one query");
  if (image.input_dim == 0 || image.max_grid_h == 0 || image.max_grid_w == 0) throw ConfigError("empty image grid");
  if (text.vocab_size < 2 || text.max_len == 0) throw ConfigError("text vocabulary/length too small");
}

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = json{{"image",
            {{"input_dim", c.image.input_dim},
             {"max_grid_h", c.image.max_grid_h},
             {"max_grid_w", c.image.max_grid_w},
             {"width", c.image.width},
             {"blocks", c.image.blocks},
             {"heads", c.image.heads},
             {"ffn_hidden", c.image.ffn_hidden}}},
           {"text",
            {{"vocab_size", c.text.vocab_size},
             {"max_len", c.text.max_len},
             {"width", c.text.width},
             {"blocks", c.text.blocks},
             {"heads", c.text.heads},
             {"ffn_hidden", c.text.ffn_hidden}}},
           {"embed_dim", c.decoder.embed_dim},
           {"decoder",
            {{"blocks", c.decoder.blocks},
             {"num_queries", c.decoder.num_queries},
             {"heads", c.decoder.heads},
             {"ffn_hidden", c.decoder.ffn_hidden}}}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  reject_unknown(j, {"image", "text", "embed_dim", "decoder"}, "model");
  if (j.contains("image")) {
    const auto& i = j.at("image");
    reject_unknown(i, {"input_dim", "max_grid_h", "max_grid_w", "width", "blocks", "heads", "ffn_hidden"},
                   "model.image");
    read(i, "input_dim", c.image.input_dim);
    read(i, "max_grid_h", c.image.max_grid_h);
    read(i, "max_grid_w", c.image.max_grid_w);
    read(i, "width", c.image.width);
    read(i, "blocks", c.image.blocks);
    read(i, "heads", c.image.heads);
    read(i, "ffn_hidden", c.image.ffn_hidden);
  }
  if (j.contains("text")) {
    const auto& t = j.at("text");
    reject_unknown(t, {"vocab_size", "max_len", "width", "blocks", "heads", "ffn_hidden"}, "model.text");
    read(t, "vocab_size", c.text.vocab_size);
    read(t, "max_len", c.text.max_len);
    read(t, "width", c.text.width);
    read(t, "blocks", c.text.blocks);
    read(t, "heads", c.text.heads);
    read(t, "ffn_hidden", c.text.ffn_hidden);
  }
  if (j.contains("embed_dim")) {
    std::size_t d = 0;
    read(j, "embed_dim", d);
    c.image.embed_dim = c.text.embed_dim = c.decoder.embed_dim = d;
  }
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    reject_unknown(d, {"blocks", "num_queries", "heads", "ffn_hidden"}, "model.decoder");
    read(d, "blocks", c.decoder.blocks);
    read(d, "num_queries", c.decoder.num_queries);
    read(d, "heads", c.decoder.heads);
    read(d, "ffn_hidden", c.decoder.ffn_hidden);
  }
  c.validate();
}

EclipModel::EclipModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::derive(seed, {0x6d6f64656cULL});
  image = ImageEncoderParams::create(rng, cfg_.image);
  text = TextEncoderParams::create(rng, cfg_.text);
  decoder = DecoderParams::create(rng, cfg_.decoder);
  match_head = MatchHead::create(rng, cfg_.decoder.embed_dim);
  temperature = Temperature::create();
}

std::vector<NamedParam> EclipModel::parameters() {
  std::vector<NamedParam> out;
  auto add_group = [&](ParamGroup g, bool dec) {
    return [&out, g, dec](const std::string& name, Tensor& t) { out.push_back({name, t, g, dec}); };
  };
  image.visit("image", add_group(ParamGroup::encoder, false));
  text.visit("text", add_group(ParamGroup::encoder, false));
  decoder.visit("decoder", add_group(ParamGroup::rest, true));
  match_head.visit("itm_head", add_group(ParamGroup::rest, false));
  out.push_back({"log_tau", temperature.log_tau, ParamGroup::rest, false});
  return out;
}

EclipModel EclipModel::clone(bool trainable) const {
  EclipModel copy = *this;
  auto relink = [trainable](const std::string&, Tensor& t) { t = t.clone_leaf(trainable); };
  copy.image.visit("image", relink);
  copy.text.visit("text", relink);
  copy.decoder.visit("decoder", relink);
  copy.match_head.visit("itm_head", relink);
  copy.temperature.log_tau = copy.temperature.log_tau.clone_leaf(trainable);
  return copy;
}

std::uint64_t EclipModel::hash(bool decoder_only) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : parameters()) {
    if (decoder_only && !p.decoder) continue;
    for (char c : p.name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    for (double v : p.tensor.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int k = 0; k < 8; ++k) h = (h ^ ((bits >> (8 * k)) & 0xff)) * 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace eclip
