// SPDX-License-Identifier: Apache-2.0

#include "eclip/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eclip/errors.hpp"

namespace eclip {

using nlohmann::json;

// ---------------------------------------------------------------- config

ModelConfig TrainConfig::resolved_model() const {
  ModelConfig m = model;
  m.decoder.num_queries = num_queries;
  return m;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (in-batch negatives are required)");
  if (num_queries < 1) throw ConfigError("num_queries must be >= 1");
  if (!(lr_encoder >= 0.0) || !(lr_rest >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
  if (queue_size == 0) throw ConfigError("queue_size must be positive");
  if (!(text_prompt_prob >= 0.0 && text_prompt_prob <= 1.0)) throw ConfigError("text_prompt_prob must lie in [0, 1]");
  if (!(query_ema_decay >= 0.0 && query_ema_decay <= 1.0)) throw ConfigError("query_ema_decay must lie in [0, 1]");
  for (double w : weights.as_array()) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
  resolved_model().validate();
}

void to_json(json& j, const TrainConfig& c) {
  json model;
  to_json(model, c.model);
  j = json{{"batch_size", c.batch_size},
           {"stage1_epochs", c.stage1_epochs},
           {"stage2_epochs", c.stage2_epochs},
           {"lr_encoder", c.lr_encoder},
           {"lr_rest", c.lr_rest},
           {"weight_decay", c.weight_decay},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"warmup_steps", c.warmup_steps},
           {"lr_decay", c.lr_decay},
           {"loss_weights",
            {{"itc", c.weights.itc},
             {"inter", c.weights.inter},
             {"itm", c.weights.itm},
             {"intra", c.weights.intra},
             {"reg", c.weights.reg}}},
           {"num_queries", c.num_queries},
           {"seed", c.seed},
           {"momentum", c.momentum},
           {"queue_size", c.queue_size},
           {"queue_min_fill", c.queue_min_fill},
           {"text_prompt_prob", c.text_prompt_prob},
           {"hard_negatives", c.hard_negatives},
           {"query_ema_decay", c.query_ema_decay},
           {"model", model}};
}

namespace {

template <class T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  json known;
  to_json(known, c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("train config: unknown key '" + it.key() + "'");
  }
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "stage1_epochs", c.stage1_epochs);
  read_key(j, "stage2_epochs", c.stage2_epochs);
  read_key(j, "lr_encoder", c.lr_encoder);
  read_key(j, "lr_rest", c.lr_rest);
  read_key(j, "weight_decay", c.weight_decay);
  read_key(j, "beta1", c.beta1);
  read_key(j, "beta2", c.beta2);
  read_key(j, "adam_eps", c.adam_eps);
  read_key(j, "warmup_steps", c.warmup_steps);
  read_key(j, "lr_decay", c.lr_decay);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    if (!w.is_object()) throw ConfigError("loss_weights must be an object");
    for (auto it = w.begin(); it != w.end(); ++it) {
      const auto& k = it.key();
      if (k != "itc" && k != "inter" && k != "itm" && k != "intra" && k != "reg") {
        throw ConfigError("loss_weights: unknown key '" + k + "'");
      }
    }
    read_key(w, "itc", c.weights.itc);
    read_key(w, "inter", c.weights.inter);
    read_key(w, "itm", c.weights.itm);
    read_key(w, "intra", c.weights.intra);
    read_key(w, "reg", c.weights.reg);
  }
  read_key(j, "num_queries", c.num_queries);
  read_key(j, "seed", c.seed);
  read_key(j, "momentum", c.momentum);
  read_key(j, "queue_size", c.queue_size);
  read_key(j, "queue_min_fill", c.queue_min_fill);
  read_key(j, "text_prompt_prob", c.text_prompt_prob);
  read_key(j, "hard_negatives", c.hard_negatives);
  read_key(j, "query_ema_decay", c.query_ema_decay);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  c.validate();
}

// ---------------------------------------------------------------- batches

ImageSample augment(const ImageSample& img, Rng& rng, double noise) {
  const auto h = img.grid_h, w = img.grid_w, d = img.patch_features.dim(1);
  auto src = img.patch_features.data();
  std::vector<double> out(src.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double* a = &src[(y * w + (w - 1 - x)) * d];
      double* b = &out[(y * w + x) * d];
      for (std::size_t k = 0; k < d; ++k) b[k] = a[k] + noise * rng.normal();
    }
  }
  ImageSample res = img;
  res.patch_features = Tensor::from({h * w, d}, std::move(out));
  return res;
}

TrainBatch build_batch(const Dataset& ds, const std::vector<EpochEntry>& entries, Rng& rng, const TrainConfig& cfg) {
  if (entries.size() < 2) throw InputError("a batch needs at least two products");
  TrainBatch batch;
  const auto t = cfg.num_queries;
  for (const auto& e : entries) {
    const auto p = e.product;
    for (const auto& prev : batch.samples) {
      if (prev.product == p) throw InputError("batch lists product " + std::to_string(p) + " twice");
    }
    TrainSample s;
    s.product = p;
    s.product_id = ds.record(p).product_id;
    const auto n = ds.num_sources(p);
    if (e.anchor_source >= n) throw InputError("anchor source out of range for product " + std::to_string(p));
    s.anchor_source = e.anchor_source;
    if (n >= 2) {
      const auto tag = ds.record(p).sources[s.anchor_source].tag;
      std::vector<std::size_t> other_tag, other_index;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == s.anchor_source) continue;
        other_index.push_back(k);
        if (ds.record(p).sources[k].tag != tag) other_tag.push_back(k);
      }
      const auto& pool = other_tag.empty() ? other_index : other_tag;
      s.partner_source = pool[rng.below(pool.size())];
      s.anchor = ds.image(p, s.anchor_source);
      s.partner = ds.image(p, s.partner_source);
    } else {
      s.partner_source = s.anchor_source;
      s.anchor = ds.image(p, s.anchor_source);
      s.partner = augment(s.anchor, rng);
      s.augmented = true;
    }
    s.text = ds.text(p);
    s.text.vocab_size = cfg.model.text.vocab_size;
    s.positive = rng.below(t);
    s.positive_modality = rng.bernoulli(cfg.text_prompt_prob) ? Modality::text : Modality::image;
    for (std::size_t k = 0; k + 1 < t; ++k) {
      s.negative_modalities.push_back(rng.bernoulli(cfg.text_prompt_prob) ? Modality::text : Modality::image);
    }
    batch.samples.push_back(std::move(s));
  }
  assign_negatives(batch, rng, t, {}, 1.0);
  return batch;
}

std::vector<double> hard_negative_distribution(std::span<const double> sims, std::size_t batch, std::size_t b,
                                               double inv_tau) {
  if (sims.size() != batch * batch) throw DimensionError("hard negatives: expected a [B, B] similarity matrix");
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < batch; ++j) {
    if (j != b) top = std::max(top, sims[b * batch + j] * inv_tau);
  }
  std::vector<double> p(batch, 0.0);
  double z = 0.0;
  for (std::size_t j = 0; j < batch; ++j) {
    if (j == b) continue;
    p[j] = std::exp(sims[b * batch + j] * inv_tau - top);
    z += p[j];
  }
  for (auto& v : p) v /= z;
  return p;
}

namespace {

std::size_t draw(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  std::size_t last = 0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (weights[j] <= 0.0) continue;
    last = j;
    if (u < weights[j]) return j;
    u -= weights[j];
  }
  return last;
}

}  // namespace

void assign_negatives(TrainBatch& batch, Rng& rng, std::size_t num_queries, std::span<const double> sims,
                      double inv_tau) {
  const auto bsz = batch.size();
  if (bsz < 2) throw InputError("negative prompts need at least two products in the batch");
  const auto need = num_queries - 1;
  const bool with_replacement = need > bsz - 1;
  for (std::size_t b = 0; b < bsz; ++b) {
    std::vector<double> w;
    if (sims.empty()) {
      w.assign(bsz, 1.0);
      w[b] = 0.0;
    } else {
      w = hard_negative_distribution(sims, bsz, b, inv_tau);
    }
    auto& s = batch.samples[b];
    s.negatives.clear();
    for (std::size_t k = 0; k < need; ++k) {
      const auto j = draw(w, rng);
      s.negatives.push_back(j);
      if (!with_replacement) w[j] = 0.0;
    }
  }
}

// ---------------------------------------------------------------- optimizer

void AdamW::step(const std::string& name, Tensor& param, std::span<const double> grad, double lr) {
  auto w = param.mutable_data();
  if (grad.size() != w.size()) throw DimensionError("AdamW: gradient size mismatch for " + name);
  auto& s = slots_[name];
  if (s.m.empty()) {
    s.m.assign(w.size(), 0.0);
    s.v.assign(w.size(), 0.0);
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
  const double decay = param.rank() == 2 ? weight_decay_ : 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * grad[i];
    s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + decay * w[i]);
  }
}

double scheduled_lr(double base, std::size_t stage_step, std::size_t epoch, std::size_t warmup, double decay) {
  double lr = base * std::pow(decay, static_cast<double>(epoch));
  if (warmup > 0 && stage_step < warmup) lr *= static_cast<double>(stage_step + 1) / static_cast<double>(warmup);
  return lr;
}

// ---------------------------------------------------------------- losses

namespace {

struct View {
  std::vector<Tensor> tokens;        // Z per sample
  std::vector<Tensor> image_prompt;  // g_I of the other image per sample
  std::vector<Tensor> text_prompt;   // g_T per sample
};

Tensor prompt_matrix(const std::vector<Prompt>& prompts) {
  std::vector<Tensor> rows;
  for (const auto& p : prompts) rows.push_back(p.embedding);
  return stack(rows);
}

std::vector<Prompt> make_prompts(const TrainSample& s, const View& v, std::size_t b, std::size_t t) {
  auto embed = [&](std::size_t j, Modality m) { return m == Modality::text ? v.text_prompt[j] : v.image_prompt[j]; };
  std::vector<Prompt> prompts(t);
  std::size_t next = 0;
  for (std::size_t slot = 0; slot < t; ++slot) {
    if (slot == s.positive) {
      prompts[slot] = {embed(b, s.positive_modality), s.positive_modality, true};
    } else {
      const auto j = s.negatives.at(next);
      const auto m = s.negative_modalities.at(next);
      ++next;
      prompts[slot] = {embed(j, m), m, false};
    }
  }
  return prompts;
}

Tensor add_all(const std::vector<Tensor>& parts) {
  Tensor acc = parts.at(0);
  for (std::size_t k = 1; k < parts.size(); ++k) acc = add(acc, parts[k]);
  return acc;
}

}  // namespace

BatchLoss batch_loss(const EclipModel& model, const MomentumModel* momentum, const RepresentationQueue* queue,
                     TrainBatch& batch, Rng& rng, const TrainConfig& cfg, int stage) {
  const auto bsz = batch.size();
  const auto t = cfg.num_queries;
  if (model.config().decoder.num_queries != t) throw ConfigError("model T differs from the training config");
  const Tensor inv_tau = model.temperature.inverse();

  std::vector<EncodedImage> anchors(bsz);
  std::vector<Tensor> img_rows(bsz), txt_rows(bsz);
  for (std::size_t b = 0; b < bsz; ++b) {
    anchors[b] = model.encode_image(batch.samples[b].anchor);
    img_rows[b] = anchors[b].projected_cls;
    txt_rows[b] = model.encode_text(batch.samples[b].text).projected_cls;
  }
  const Tensor img = stack(img_rows);
  const Tensor txt = stack(txt_rows);

  LossTerms terms;
  terms.terms[0] = itc_loss(img, txt, inv_tau);
  BatchLoss out;
  if (stage == 1) {
    LossWeights w;
    w.itc = cfg.weights.itc;
    w.inter = w.itm = w.intra = w.reg = 0.0;
    out.loss = combine(terms, w, bsz);
    return out;
  }

  // Everything on the decoder path sees detached encoder outputs.
  View base;
  {
    NoGradGuard ng;
    for (std::size_t b = 0; b < bsz; ++b) {
      base.image_prompt.push_back(model.encode_image(batch.samples[b].partner).projected_cls);
    }
  }
  for (std::size_t b = 0; b < bsz; ++b) {
    base.tokens.push_back(anchors[b].projected_tokens.detach());
    base.text_prompt.push_back(txt_rows[b].detach());
  }

  std::vector<double> sims;
  if (cfg.hard_negatives) {
    const auto s = matmul(img.detach(), transpose(txt.detach()));
    sims.assign(s.data().begin(), s.data().end());
  }
  assign_negatives(batch, rng, t, sims, 1.0 / model.temperature.value());

  std::vector<Tensor> h_pos(bsz), intra_terms, reg_terms, itm_inst, itm_text;
  std::vector<MatchLabel> itm_labels;
  for (std::size_t b = 0; b < bsz; ++b) {
    const auto& s = batch.samples[b];
    const auto prompts = make_prompts(s, base, b, t);
    out.prompts.push_back(prompt_matrix(prompts));
    const auto res = model.decode(base.tokens[b], model.build_queries(prompts));
    h_pos[b] = row(res.instances, s.positive);
    intra_terms.push_back(intra_product_loss(res.instances, base.text_prompt[b], s.positive, inv_tau));
    reg_terms.push_back(entropy_reg(res.assignment, s.positive));
    if (!s.negatives.empty()) {
      itm_inst.push_back(h_pos[b]);
      itm_text.push_back(base.text_prompt[b]);
      itm_labels.push_back(MatchLabel::match);
      itm_inst.push_back(h_pos[b]);
      itm_text.push_back(base.text_prompt[s.negatives[0]]);
      itm_labels.push_back(MatchLabel::no_match);
    }
  }
  terms.terms[3] = add_all(intra_terms);
  terms.terms[4] = add_all(reg_terms);
  if (!itm_inst.empty()) terms.terms[2] = itm_loss(stack(itm_inst), stack(itm_text), itm_labels, model.match_head);

  if (momentum != nullptr) {
    const EclipModel& mm = momentum->model();
    std::vector<Tensor> h_mom(bsz);
    {
      NoGradGuard ng;
      View mv;
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto& s = batch.samples[b];
        mv.tokens.push_back(mm.encode_image(s.partner).projected_tokens);
        mv.image_prompt.push_back(mm.encode_image(s.anchor).projected_cls);
        mv.text_prompt.push_back(mm.encode_text(s.text).projected_cls);
      }
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto& s = batch.samples[b];
        const auto res = mm.decode(mv.tokens[b], mm.build_queries(make_prompts(s, mv, b, t)));
        h_mom[b] = row(res.instances, s.positive);
      }
      out.momentum_reps = stack(h_mom);
    }
    if (queue != nullptr && queue->size() >= cfg.inter_min_fill()) {
      terms.terms[1] = inter_product_loss(stack(h_pos), out.momentum_reps, queue->contents(), inv_tau);
    }
  }
  out.loss = combine(terms, cfg.weights, bsz);
  return out;
}

// ---------------------------------------------------------------- trainer

TrainState TrainState::fresh(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  s.model = EclipModel(cfg.resolved_model(), cfg.seed);
  s.queue = RepresentationQueue(cfg.queue_size, cfg.model.decoder.embed_dim);
  s.optimizer = AdamW(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  s.query_ema.assign(cfg.num_queries * cfg.model.decoder.embed_dim, 0.0);
  s.rng = Rng::derive(cfg.seed, {0x747261696eULL});
  return s;
}

Trainer::Trainer(TrainState state, const Dataset& ds) : state_(std::move(state)), ds_(ds) {
  if (ds_.size() < state_.config.batch_size) {
    throw InputError("dataset has " + std::to_string(ds_.size()) + " products but batch_size is " +
                     std::to_string(state_.config.batch_size));
  }
}

std::size_t Trainer::batches_per_epoch() const {
  const auto bsz = state_.config.batch_size;
  std::size_t total = 0;
  for (std::size_t k = 0;; ++k) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < ds_.size(); ++i) count += ds_.num_sources(i) > k ? 1 : 0;
    if (count == 0) return total;
    total += count / bsz;
  }
}

std::vector<std::vector<EpochEntry>> Trainer::epoch_batches(int stage, std::size_t epoch) const {
  Rng rng = Rng::derive(state_.config.seed, {0x65706f6368ULL, static_cast<std::uint64_t>(stage), epoch});
  std::vector<std::vector<std::size_t>> anchors(ds_.size());
  std::size_t passes = 0;
  for (std::size_t i = 0; i < ds_.size(); ++i) {
    anchors[i].resize(ds_.num_sources(i));
    std::iota(anchors[i].begin(), anchors[i].end(), std::size_t{0});
    rng.shuffle(anchors[i]);
    passes = std::max(passes, anchors[i].size());
  }
  const auto bsz = state_.config.batch_size;
  std::vector<std::vector<EpochEntry>> batches;
  for (std::size_t k = 0; k < passes; ++k) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < ds_.size(); ++i) {
      if (anchors[i].size() > k) order.push_back(i);
    }
    rng.shuffle(order);
    for (std::size_t start = 0; start + bsz <= order.size(); start += bsz) {
      std::vector<EpochEntry> batch;
      for (std::size_t j = start; j < start + bsz; ++j) batch.push_back({order[j], anchors[order[j]][k]});
      batches.push_back(std::move(batch));
    }
  }
  return batches;
}

void Trainer::enter_stage_if_needed() {
  auto& p = state_.progress;
  const auto& cfg = state_.config;
  if (p.stage == 1 && cfg.stage1_epochs == 0) {
    p = Progress{2, 0, 0, 0, p.global_step, p.momentum_ready};
  }
  if (p.stage == 2 && !p.momentum_ready) {
    state_.momentum = MomentumModel(state_.model, cfg.momentum);
    p.momentum_ready = true;
  }
  if (p.stage == 2 && cfg.stage2_epochs == 0) p.stage = 3;
}

void Trainer::advance() {
  auto& p = state_.progress;
  ++p.batch;
  ++p.stage_step;
  ++p.global_step;
  if (p.batch < batches_per_epoch()) return;
  p.batch = 0;
  ++p.epoch;
  const auto epochs = p.stage == 1 ? state_.config.stage1_epochs : state_.config.stage2_epochs;
  if (p.epoch >= epochs) {
    ++p.stage;
    p.epoch = 0;
    p.stage_step = 0;
  }
}

StepRecord Trainer::step() {
  enter_stage_if_needed();
  auto& st = state_;
  auto& p = st.progress;
  const auto& cfg = st.config;
  if (p.stage > 2) throw InputError("training is already complete");

  const auto batches = epoch_batches(p.stage, p.epoch);
  if (p.batch >= batches.size()) throw InputError("progress points past the last batch of the epoch");
  TrainBatch batch = build_batch(ds_, batches[p.batch], st.rng, cfg);

  auto describe = [&](const TrainBatch& b) {
    json samples = json::array();
    for (const auto& s : b.samples) {
      samples.push_back({{"product_id", s.product_id},
                         {"anchor_source", s.anchor_source},
                         {"partner_source", s.partner_source},
                         {"augmented", s.augmented},
                         {"positive", s.positive},
                         {"negatives", s.negatives}});
    }
    return json{{"stage", p.stage},
                {"epoch", p.epoch},
                {"batch", p.batch},
                {"global_step", p.global_step},
                {"tau", st.model.temperature.value()},
                {"samples", samples}};
  };
  dump_ = describe(batch);

  const int stage = p.stage;
  BatchLoss bl;
  try {
    bl = batch_loss(st.model, stage == 2 ? &st.momentum : nullptr, &st.queue, batch, st.rng, cfg, stage);
  } catch (const TrainingError& e) {
    dump_ = describe(batch);
    dump_["component"] = e.component();
    dump_["error"] = e.what();
    throw;
  }
  dump_ = describe(batch);
  const auto grads = backward(bl.loss.total);

  auto params = st.model.parameters();
  for (auto& prm : params) {
    if (stage == 1 && prm.group != ParamGroup::encoder && prm.name != "log_tau") continue;
    const auto g = grads.of(prm.tensor);
    for (double v : g) {
      if (!std::isfinite(v)) {
        dump_["component"] = "gradient";
        dump_["parameter"] = prm.name;
        throw TrainingError("gradient", "non-finite gradient for parameter '" + prm.name + "'");
      }
    }
    const double base_lr = prm.group == ParamGroup::encoder ? cfg.lr_encoder : cfg.lr_rest;
    const double lr = scheduled_lr(base_lr, p.stage_step, p.epoch, cfg.warmup_steps, cfg.lr_decay);
    st.optimizer.step(prm.name, prm.tensor, g, lr);
  }
  st.model.temperature.clamp();

  if (stage == 2) {
    st.momentum.update(st.model);
    if (bl.momentum_reps.defined()) st.queue.enqueue(bl.momentum_reps);
    const double a = cfg.query_ema_decay;
    const auto d = cfg.model.decoder.embed_dim;
    for (const auto& pm : bl.prompts) {
      auto v = pm.data();
      const double keep = st.query_ema_updates == 0 ? 0.0 : a;
      for (std::size_t i = 0; i < cfg.num_queries * d; ++i) st.query_ema[i] = keep * st.query_ema[i] + (1.0 - keep) * v[i];
      ++st.query_ema_updates;
    }
  }

  StepRecord rec;
  rec.stage = stage;
  rec.epoch = p.epoch;
  rec.loss = bl.loss.breakdown;
  rec.tau = st.model.temperature.value();
  advance();
  rec.step = p.global_step;
  return rec;
}

bool Trainer::run(int last_stage, std::size_t max_steps, const std::function<void(const StepRecord&)>& on_step) {
  std::size_t taken = 0;
  enter_stage_if_needed();
  while (!finished(last_stage)) {
    if (max_steps != 0 && taken >= max_steps) return false;
    const auto rec = step();
    ++taken;
    if (on_step) on_step(rec);
    enter_stage_if_needed();
  }
  return true;
}

}  // namespace eclip
