// SPDX-License-Identifier: Apache-2.0

#include "eclip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "eclip/errors.hpp"
#include "eclip/tensor_io.hpp"

namespace eclip {

using nlohmann::json;

std::string to_string(NegativeMode m) {
  switch (m) {
    case NegativeMode::random: return "random";
    case NegativeMode::text: return "text";
    case NegativeMode::ema: return "ema";
  }
  return "random";
}

NegativeMode parse_negative_mode(const std::string& s) {
  if (s == "random") return NegativeMode::random;
  if (s == "text") return NegativeMode::text;
  if (s == "ema") return NegativeMode::ema;
  throw InputError("unknown negative mode '" + s + "' (expected random, text or ema)");
}

std::string to_string(MatchRule r) { return r == MatchRule::same_category ? "category" : "product"; }

MatchRule parse_match_rule(const std::string& s) {
  if (s == "category" || s == "same_category") return MatchRule::same_category;
  if (s == "product" || s == "same_product") return MatchRule::same_product;
  throw InputError("unknown match rule '" + s + "' (expected category or product)");
}

// ---------------------------------------------------------------- representations

InstanceReadout instance_readout(const EclipModel& model, const ImageSample& image, const TextSample& text, Rng& rng,
                                 const NegativeQueries& negatives, std::optional<std::size_t> exclude) {
  NoGradGuard ng;
  const auto t = model.config().decoder.num_queries;
  const auto d = model.config().embed_dim();
  const auto enc = model.encode_image(image);
  std::vector<Prompt> prompts;
  prompts.push_back({model.encode_text(text).projected_cls, Modality::text, true});
  for (std::size_t k = 1; k < t; ++k) {
    Tensor e;
    switch (negatives.mode) {
      case NegativeMode::random: {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.normal();
        e = Tensor::vector(std::move(v));
        break;
      }
      case NegativeMode::text: {
        const auto& pool = negatives.text_pool;
        const std::size_t usable = pool.size() - (exclude && *exclude < pool.size() ? 1 : 0);
        if (usable == 0) throw InputError("text negative mode needs texts of other products");
        std::size_t j = rng.below(usable);
        if (exclude && *exclude < pool.size() && j >= *exclude) ++j;
        e = pool[j];
        break;
      }
      case NegativeMode::ema: {
        if (negatives.query_ema.size() != t * d) throw InputError("ema negative mode needs a [T, D] query average");
        e = Tensor::vector(std::vector<double>(negatives.query_ema.begin() + static_cast<std::ptrdiff_t>(k * d),
                                               negatives.query_ema.begin() + static_cast<std::ptrdiff_t>((k + 1) * d)));
        break;
      }
    }
    prompts.push_back({e, Modality::text, false});
  }
  const auto res = model.decode(enc.projected_tokens, model.build_queries(prompts));
  return {row(res.instances, 0), res.assignment};
}

Tensor instance_representation(const EclipModel& model, const ImageSample& image, const TextSample& text, Rng& rng,
                               const NegativeQueries& negatives, std::optional<std::size_t> exclude) {
  return instance_readout(model, image, text, rng, negatives, exclude).representation;
}

std::size_t classify_representation(std::span<const double> rep, const std::vector<Tensor>& categories) {
  if (categories.size() < 2) throw InputError("classification needs at least two categories");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < categories.size(); ++c) {
    auto v = categories[c].data();
    if (v.size() != rep.size()) throw DimensionError("category embedding width differs from the representation");
    double s = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) s += rep[k] * v[k];
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

std::size_t zero_shot_classify(const EclipModel& model, const ImageSample& image, const TextSample& text,
                               const std::vector<TextSample>& category_texts, Rng& rng,
                               const NegativeQueries& negatives) {
  NoGradGuard ng;
  std::vector<Tensor> cats;
  for (const auto& c : category_texts) cats.push_back(model.encode_text(c).projected_cls);
  const auto rep = instance_representation(model, image, text, rng, negatives);
  return classify_representation(rep.data(), cats);
}

// ---------------------------------------------------------------- retrieval

RetrievalResult rank_scores(std::span<const double> scores, std::size_t queries, std::size_t gallery) {
  if (scores.size() != queries * gallery) throw DimensionError("rank_scores: score matrix size mismatch");
  RetrievalResult r;
  for (std::size_t q = 0; q < queries; ++q) {
    std::vector<std::size_t> idx(gallery);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const double* row_scores = &scores[q * gallery];
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row_scores[a] > row_scores[b]; });
    std::vector<double> s;
    for (auto i : idx) s.push_back(row_scores[i]);
    r.ranking.push_back(std::move(idx));
    r.scores.push_back(std::move(s));
  }
  return r;
}

BidirectionalResult image_text_retrieval(const EclipModel& model, const std::vector<ImageSample>& images,
                                         const std::vector<TextSample>& texts) {
  NoGradGuard ng;
  std::vector<EncodedImage> ei;
  std::vector<EncodedText> et;
  for (const auto& i : images) ei.push_back(model.encode_image(i));
  for (const auto& t : texts) et.push_back(model.encode_text(t));
  const auto ni = ei.size(), nt = et.size();
  std::vector<double> i2t(ni * nt), t2i(nt * ni);
  for (std::size_t a = 0; a < ni; ++a) {
    for (std::size_t b = 0; b < nt; ++b) {
      const double s = pair_similarity(ei[a], et[b]);
      i2t[a * nt + b] = s;
      t2i[b * ni + a] = s;
    }
  }
  return {rank_scores(i2t, ni, nt), rank_scores(t2i, nt, ni)};
}

std::vector<std::vector<std::size_t>> relevance_sets(const std::vector<EvalItem>& queries,
                                                     const std::vector<EvalItem>& gallery, MatchRule rule) {
  std::vector<std::vector<std::size_t>> rel(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const bool hit = rule == MatchRule::same_product ? queries[q].product_id == gallery[g].product_id
                                                       : queries[q].category_id == gallery[g].category_id;
      if (hit) rel[q].push_back(g);
    }
  }
  return rel;
}

ProductRetrieval product_retrieval(const EclipModel& model, const std::vector<EvalItem>& queries,
                                   const std::vector<EvalItem>& gallery, MatchRule rule, std::uint64_t seed,
                                   const NegativeQueries& negatives) {
  auto embed = [&](const std::vector<EvalItem>& items) {
    std::vector<Tensor> out;
    for (const auto& item : items) {
      Rng rng = Rng::derive(seed, {0x72657472ULL});
      out.push_back(instance_representation(model, item.image, item.text, rng, negatives));
    }
    return out;
  };
  const auto qe = embed(queries);
  const auto ge = embed(gallery);
  std::vector<double> s(qe.size() * ge.size());
  for (std::size_t q = 0; q < qe.size(); ++q) {
    auto a = qe[q].data();
    for (std::size_t g = 0; g < ge.size(); ++g) {
      auto b = ge[g].data();
      double dot = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
      s[q * ge.size() + g] = dot;
    }
  }
  return {rank_scores(s, qe.size(), ge.size()), relevance_sets(queries, gallery, rule)};
}

MetricReport retrieval_metrics(const RetrievalResult& result, const std::vector<std::vector<std::size_t>>& relevant,
                               const std::vector<std::size_t>& ks) {
  if (relevant.size() != result.ranking.size()) throw InputError("one relevance set per query is required");
  MetricReport m;
  m.ks = ks;
  for (auto k : ks) {
    if (k == 0) throw InputError("K must be positive");
    m.recall[k] = m.map[k] = m.mar[k] = 0.0;
  }
  for (std::size_t q = 0; q < relevant.size(); ++q) {
    if (relevant[q].empty()) {
      ++m.skipped;
      continue;
    }
    ++m.evaluated;
    std::vector<char> is_rel;
    const auto& rank = result.ranking[q];
    std::vector<std::size_t> sorted_rel = relevant[q];
    std::sort(sorted_rel.begin(), sorted_rel.end());
    for (auto g : rank) is_rel.push_back(std::binary_search(sorted_rel.begin(), sorted_rel.end(), g) ? 1 : 0);
    for (auto k : ks) {
      const auto depth = std::min(k, rank.size());
      std::size_t hits = 0;
      double ap = 0.0;
      for (std::size_t i = 0; i < depth; ++i) {
        if (!is_rel[i]) continue;
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(i + 1);
      }
      const auto nrel = sorted_rel.size();
      m.recall[k] += hits > 0 ? 1.0 : 0.0;
      m.map[k] += ap / static_cast<double>(std::min(k, nrel));
      m.mar[k] += static_cast<double>(hits) / static_cast<double>(nrel);
    }
  }
  if (m.evaluated > 0) {
    const double n = static_cast<double>(m.evaluated);
    for (auto k : ks) {
      m.recall[k] /= n;
      m.map[k] /= n;
      m.mar[k] /= n;
    }
  }
  return m;
}

json metrics_json(const MetricReport& m) {
  json j;
  for (auto k : m.ks) {
    j["recall@" + std::to_string(k)] = m.recall.at(k);
    j["map@" + std::to_string(k)] = m.map.at(k);
    j["mar@" + std::to_string(k)] = m.mar.at(k);
  }
  return j;
}

// ---------------------------------------------------------------- grounding

double sample_bilinear(std::span<const double> s, std::size_t gh, std::size_t gw, double gy, double gx) {
  gy = std::clamp(gy, 0.0, static_cast<double>(gh - 1));
  gx = std::clamp(gx, 0.0, static_cast<double>(gw - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(gy));
  const auto x0 = static_cast<std::size_t>(std::floor(gx));
  const auto y1 = std::min(y0 + 1, gh - 1);
  const auto x1 = std::min(x0 + 1, gw - 1);
  const double fy = gy - static_cast<double>(y0);
  const double fx = gx - static_cast<double>(x0);
  const double top = (1.0 - fx) * s[y0 * gw + x0] + fx * s[y0 * gw + x1];
  const double bottom = (1.0 - fx) * s[y1 * gw + x0] + fx * s[y1 * gw + x1];
  return (1.0 - fy) * top + fy * bottom;
}

ScoreMap upsample_scores(std::span<const double> token_scores, std::size_t grid_h, std::size_t grid_w,
                         std::size_t scale) {
  if (grid_h == 0 || grid_w == 0 || token_scores.size() != grid_h * grid_w) {
    throw DimensionError("upsample_scores: expected grid_h * grid_w scores");
  }
  if (scale == 0) throw InputError("score map scale must be positive");
  ScoreMap m;
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  m.height = grid_h * scale;
  m.width = grid_w * scale;
  m.values.resize(m.height * m.width);
  const double s = static_cast<double>(scale);
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      const double gy = (static_cast<double>(y) + 0.5) / s - 0.5;
      const double gx = (static_cast<double>(x) + 0.5) / s - 0.5;
      m.values[y * m.width + x] = sample_bilinear(token_scores, grid_h, grid_w, gy, gx);
    }
  }
  return m;
}

std::vector<double> token_scores(const EncodedImage& encoded, const Tensor& prompt) {
  const auto& z = encoded.projected_tokens;
  const auto n = z.dim(0), d = z.dim(1);
  if (prompt.numel() != d) throw DimensionError("prompt width differs from the projected tokens");
  auto zv = z.data();
  auto pv = prompt.data();
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) s[i] += zv[i * d + k] * pv[k];
  }
  return s;
}

Tensor text_prompt(const EclipModel& model, const TextSample& text) {
  NoGradGuard ng;
  return model.encode_text(text).projected_cls;
}

Tensor image_prompt(const EclipModel& model, const ImageSample& image) {
  NoGradGuard ng;
  return model.encode_image(image).projected_cls;
}

ScoreMap grounding_score_map(const EclipModel& model, const ImageSample& image, const Tensor& prompt,
                             std::size_t scale) {
  NoGradGuard ng;
  const auto enc = model.encode_image(image);
  return upsample_scores(token_scores(enc, prompt), image.grid_h, image.grid_w, scale);
}

double box_score(const ScoreMap& map, const BoxProposal& b) {
  if (!(b.x2 > b.x1) || !(b.y2 > b.y1)) throw InputError("degenerate box proposal");
  if (b.x1 < 0 || b.y1 < 0 || b.x2 > static_cast<double>(map.width) || b.y2 > static_cast<double>(map.height)) {
    throw InputError("box proposal outside the score map");
  }
  double total = 0.0;
  for (std::size_t y = 0; y < map.height; ++y) {
    const double cy = static_cast<double>(y) + 0.5;
    if (cy < b.y1 || cy >= b.y2) continue;
    for (std::size_t x = 0; x < map.width; ++x) {
      const double cx = static_cast<double>(x) + 0.5;
      if (cx >= b.x1 && cx < b.x2) total += map.at(y, x);
    }
  }
  return total / std::sqrt(b.area());
}

std::vector<RankedBox> rank_boxes(const ScoreMap& map, const std::vector<BoxProposal>& proposals) {
  if (proposals.empty()) throw InputError("rank_boxes needs at least one proposal");
  std::vector<RankedBox> out;
  for (std::size_t i = 0; i < proposals.size(); ++i) out.push_back({proposals[i], box_score(map, proposals[i]), i});
  std::stable_sort(out.begin(), out.end(), [](const RankedBox& a, const RankedBox& b) { return a.score > b.score; });
  return out;
}

double iou(const BoxProposal& a, const BoxProposal& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<double> grounding_accuracy(const std::vector<BoxProposal>& predictions,
                                       const std::vector<BoxProposal>& truths, const std::vector<double>& thresholds) {
  if (predictions.size() != truths.size()) throw InputError("one ground-truth box per prediction is required");
  std::vector<double> acc(thresholds.size(), 0.0);
  if (predictions.empty()) return acc;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double v = iou(predictions[i], truths[i]);
    for (std::size_t k = 0; k < thresholds.size(); ++k) acc[k] += v >= thresholds[k] ? 1.0 : 0.0;
  }
  for (auto& a : acc) a /= static_cast<double>(predictions.size());
  return acc;
}

std::vector<BoxProposal> grid_proposals(std::size_t grid_h, std::size_t grid_w, std::size_t scale) {
  std::vector<BoxProposal> out;
  const double s = static_cast<double>(scale);
  for (std::size_t y1 = 0; y1 < grid_h; ++y1)
    for (std::size_t y2 = y1 + 1; y2 <= grid_h; ++y2)
      for (std::size_t x1 = 0; x1 < grid_w; ++x1)
        for (std::size_t x2 = x1 + 1; x2 <= grid_w; ++x2) {
          out.push_back({static_cast<double>(x1) * s, static_cast<double>(y1) * s, static_cast<double>(x2) * s,
                         static_cast<double>(y2) * s});
        }
  return out;
}

BoxProposal to_output_box(const Box& b, std::size_t scale) {
  const double s = static_cast<double>(scale);
  return {static_cast<double>(b.x1) * s, static_cast<double>(b.y1) * s, static_cast<double>(b.x2) * s,
          static_cast<double>(b.y2) * s};
}

void write_pgm(const std::filesystem::path& path, const ScoreMap& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double range = *hi - *lo;
  for (double v : map.values) {
    const double u = range > 0.0 ? (v - *lo) / range : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0))));
  }
  if (!out) throw InputError("write failed for " + path.string());
}

void save_score_map(const std::filesystem::path& path, const ScoreMap& map) {
  save_tensor(path, Tensor::from({map.height, map.width}, map.values));
}

std::vector<BoxProposal> parse_proposals(const json& j) {
  const json& list = j.is_object() && j.contains("proposals") ? j.at("proposals") : j;
  if (!list.is_array()) throw InputError("proposals must be a JSON array of [x1, y1, x2, y2]");
  std::vector<BoxProposal> out;
  for (const auto& e : list) {
    std::vector<double> v;
    try {
      v = e.is_object() ? std::vector<double>{e.at("x1").get<double>(), e.at("y1").get<double>(),
                                              e.at("x2").get<double>(), e.at("y2").get<double>()}
                        : e.get<std::vector<double>>();
    } catch (const json::exception& ex) {
      throw InputError(std::string("bad proposal: ") + ex.what());
    }
    if (v.size() != 4) throw InputError("a proposal has exactly four coordinates");
    out.push_back({v[0], v[1], v[2], v[3]});
  }
  return out;
}

json ranked_boxes_json(const std::vector<RankedBox>& ranked) {
  json arr = json::array();
  for (const auto& r : ranked) {
    arr.push_back({{"index", r.index}, {"box", {r.box.x1, r.box.y1, r.box.x2, r.box.y2}}, {"score", r.score}});
  }
  return arr;
}

// ---------------------------------------------------------------- dataset tasks

TextSample category_text(std::size_t category, std::size_t vocab_size) {
  return {{static_cast<std::uint32_t>(1 + category)}, vocab_size};
}

namespace {

TextSample text_of(const EclipModel& model, const Dataset& ds, std::size_t i) {
  auto t = ds.text(i);
  t.vocab_size = model.config().text.vocab_size;
  return t;
}

json options_json(const EvalOptions& o) {
  return {{"neg_mode", to_string(o.neg_mode)},
          {"match_rule", to_string(o.match_rule)},
          {"ks", o.ks},
          {"iou_thresholds", o.iou_thresholds},
          {"map_scale", o.map_scale},
          {"seed", o.seed}};
}

}  // namespace

NegativeQueries negatives_for(const EclipModel& model, const Dataset& ds, NegativeMode mode,
                              const std::vector<double>& query_ema) {
  NegativeQueries n;
  n.mode = mode;
  if (mode == NegativeMode::text) {
    NoGradGuard ng;
    for (std::size_t i = 0; i < ds.size(); ++i) n.text_pool.push_back(model.encode_text(text_of(model, ds, i)).projected_cls);
  } else if (mode == NegativeMode::ema) {
    n.query_ema = query_ema;
  }
  return n;
}

json evaluate_classification(const EclipModel& model, const Dataset& ds, const EvalOptions& opt,
                             const std::vector<double>& query_ema) {
  NoGradGuard ng;
  const auto negs = negatives_for(model, ds, opt.neg_mode, query_ema);
  const auto c = std::max<std::size_t>(ds.num_categories(), 2);
  std::vector<Tensor> cats;
  for (std::size_t k = 0; k < c; ++k) cats.push_back(model.encode_text(category_text(k, model.config().text.vocab_size)).projected_cls);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t s = 0; s < ds.num_sources(i); ++s) {
      Rng rng = Rng::derive(opt.seed, {0x636c73ULL, i, s});
      const auto rep = instance_representation(model, ds.image(i, s), text_of(model, ds, i), rng, negs, i);
      correct += classify_representation(rep.data(), cats) == ds.record(i).category_id ? 1 : 0;
      ++total;
    }
  }
  const double acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return {{"task", "classify"},
          {"options", options_json(opt)},
          {"counts", {{"samples", total}, {"categories", c}, {"correct", correct}}},
          {"metrics", {{"accuracy", acc}, {"chance", 1.0 / static_cast<double>(c)}}}};
}

json evaluate_itc_retrieval(const EclipModel& model, const Dataset& ds, const EvalOptions& opt) {
  std::vector<ImageSample> images;
  std::vector<TextSample> texts;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    images.push_back(ds.image(i, 0));
    texts.push_back(text_of(model, ds, i));
  }
  const auto res = image_text_retrieval(model, images, texts);
  std::vector<std::vector<std::size_t>> rel(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) rel[i] = {i};
  return {{"task", "itc-retrieval"},
          {"options", options_json(opt)},
          {"counts", {{"images", images.size()}, {"texts", texts.size()}}},
          {"metrics",
           {{"image_to_text", metrics_json(retrieval_metrics(res.image_to_text, rel, opt.ks))},
            {"text_to_image", metrics_json(retrieval_metrics(res.text_to_image, rel, opt.ks))}}}};
}

json evaluate_product_retrieval(const EclipModel& model, const Dataset& ds, const EvalOptions& opt,
                                const std::vector<double>& query_ema) {
  std::vector<EvalItem> queries, gallery;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.record(i);
    const auto text = text_of(model, ds, i);
    queries.push_back({ds.image(i, 0), text, r.product_id, r.category_id});
    const auto g = ds.num_sources(i) > 1 ? 1 : 0;
    gallery.push_back({ds.image(i, g), text, r.product_id, r.category_id});
  }
  const auto negs = negatives_for(model, ds, opt.neg_mode, query_ema);
  const auto pr = product_retrieval(model, queries, gallery, opt.match_rule, opt.seed, negs);
  const auto m = retrieval_metrics(pr.result, pr.relevant, opt.ks);
  return {{"task", "product-retrieval"},
          {"options", options_json(opt)},
          {"counts", {{"queries", queries.size()}, {"gallery", gallery.size()}, {"evaluated", m.evaluated},
                      {"skipped", m.skipped}}},
          {"metrics", metrics_json(m)}};
}

json evaluate_grounding(const EclipModel& model, const Dataset& ds, const EvalOptions& opt) {
  std::vector<BoxProposal> preds, truths;
  std::size_t inside_wins = 0;
  std::vector<BoxProposal> proposals;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto prompt = text_prompt(model, text_of(model, ds, i));
    for (std::size_t s = 0; s < ds.num_sources(i); ++s) {
      const auto& img = ds.image(i, s);
      const auto map = grounding_score_map(model, img, prompt, opt.map_scale);
      if (proposals.empty() || map.grid_h * opt.map_scale != map.height) {
        proposals = grid_proposals(img.grid_h, img.grid_w, opt.map_scale);
      }
      preds.push_back(rank_boxes(map, proposals).front().box);
      const auto& box = ds.box(i, s);
      truths.push_back(to_output_box(box, opt.map_scale));
      double in = 0, out = 0;
      std::size_t nin = 0, nout = 0;
      NoGradGuard ng;
      const auto ts = token_scores(model.encode_image(img), prompt);
      for (std::size_t y = 0; y < img.grid_h; ++y)
        for (std::size_t x = 0; x < img.grid_w; ++x) {
          const double v = ts[y * img.grid_w + x];
          if (box.contains(x, y)) {
            in += v;
            ++nin;
          } else {
            out += v;
            ++nout;
          }
        }
      if (nin && nout && in / static_cast<double>(nin) > out / static_cast<double>(nout)) ++inside_wins;
    }
  }
  const auto acc = grounding_accuracy(preds, truths, opt.iou_thresholds);
  json metrics;
  for (std::size_t k = 0; k < acc.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "acc@%.2g", opt.iou_thresholds[k]);
    metrics[name] = acc[k];
  }
  metrics["inside_mean_wins"] = preds.empty() ? 0.0 : static_cast<double>(inside_wins) / static_cast<double>(preds.size());
  return {{"task", "grounding"},
          {"options", options_json(opt)},
          {"counts", {{"samples", preds.size()}, {"proposals_per_sample", proposals.size()}}},
          {"metrics", metrics}};
}

}  // namespace eclip
