// SPDX-License-Identifier: Apache-2.0
//
// Zero-shot transfer: instance representations, classification, retrieval,
// grounding score maps with box ranking, and retrieval metrics.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eclip/model.hpp"
#include "eclip/rng.hpp"
#include "eclip/synthdata.hpp"
#include "json.hpp"

namespace eclip {

enum class NegativeMode { random, text, ema };
std::string to_string(NegativeMode m);
NegativeMode parse_negative_mode(const std::string& s);

/// How the T-1 negative queries are filled at inference time.
struct NegativeQueries {
  NegativeMode mode = NegativeMode::random;
  /// text mode: projected text embeddings of other products to draw from.
  std::vector<Tensor> text_pool;
  /// ema mode: per-slot prompt averages [T * D] recorded during training.
  std::vector<double> query_ema;
};

struct InstanceReadout {
  Tensor representation;  // h_0 of the positive query, unit norm [D]
  Tensor assignment;      // final-block M [N, T]; the positive query is column 0
};

/// Runs the decoder with g_T(text) as the positive query in slot 0.
/// `exclude` removes one entry of a text pool (the sample's own text).
InstanceReadout instance_readout(const EclipModel& model, const ImageSample& image, const TextSample& text, Rng& rng,
                                 const NegativeQueries& negatives = {}, std::optional<std::size_t> exclude = {});
Tensor instance_representation(const EclipModel& model, const ImageSample& image, const TextSample& text, Rng& rng,
                               const NegativeQueries& negatives = {}, std::optional<std::size_t> exclude = {});

/// argmax_c rep . categories[c], lowest index on ties.
std::size_t classify_representation(std::span<const double> representation, const std::vector<Tensor>& categories);
std::size_t zero_shot_classify(const EclipModel& model, const ImageSample& image, const TextSample& text,
                               const std::vector<TextSample>& category_texts, Rng& rng,
                               const NegativeQueries& negatives = {});

struct RetrievalResult {
  std::vector<std::vector<std::size_t>> ranking;  // per query, gallery indices best first
  std::vector<std::vector<double>> scores;        // matching scores, non-increasing
};

/// Ranks every row of a [Q, G] score matrix; ties go to the lower index.
RetrievalResult rank_scores(std::span<const double> scores, std::size_t queries, std::size_t gallery);

struct BidirectionalResult {
  RetrievalResult image_to_text;
  RetrievalResult text_to_image;
};

BidirectionalResult image_text_retrieval(const EclipModel& model, const std::vector<ImageSample>& images,
                                         const std::vector<TextSample>& texts);

enum class MatchRule { same_category, same_product };
std::string to_string(MatchRule r);
MatchRule parse_match_rule(const std::string& s);

struct EvalItem {
  ImageSample image;
  TextSample text;
  std::uint64_t product_id = 0;
  std::uint32_t category_id = 0;
};

struct ProductRetrieval {
  RetrievalResult result;
  std::vector<std::vector<std::size_t>> relevant;  // per query
};

/// Relevant gallery indices for each query under a match rule.
std::vector<std::vector<std::size_t>> relevance_sets(const std::vector<EvalItem>& queries,
                                                     const std::vector<EvalItem>& gallery, MatchRule rule);

/// Embeds every item through instance_representation and ranks by cosine.
/// Every item draws its negative queries from the same generator state
/// (derived from `seed`), so identical items get identical representations.
ProductRetrieval product_retrieval(const EclipModel& model, const std::vector<EvalItem>& queries,
                                   const std::vector<EvalItem>& gallery, MatchRule rule, std::uint64_t seed,
                                   const NegativeQueries& negatives = {});

struct MetricReport {
  std::vector<std::size_t> ks;
  std::map<std::size_t, double> recall, map, mar;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // queries with no relevant item
};

/// Recall@K, mAP@K and mAR@K over queries with a non-empty relevance set.
MetricReport retrieval_metrics(const RetrievalResult& result, const std::vector<std::vector<std::size_t>>& relevant,
                               const std::vector<std::size_t>& ks);

// ---------------------------------------------------------------- grounding

struct ScoreMap {
  std::size_t height = 0, width = 0;  // output resolution
  std::size_t grid_h = 0, grid_w = 0; // source token grid
  std::vector<double> values;         // row-major [height, width]

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// Bilinear upsampling of per-token scores [grid_h * grid_w] by an integer
/// factor. Output pixel (y, x) samples the token grid at ((y + 0.5) / s - 0.5,
/// (x + 0.5) / s - 0.5), clamped to the grid.
ScoreMap upsample_scores(std::span<const double> token_scores, std::size_t grid_h, std::size_t grid_w,
                         std::size_t scale);
/// Bilinear value of the token grid at continuous token coordinates.
double sample_bilinear(std::span<const double> token_scores, std::size_t grid_h, std::size_t grid_w, double gy,
                       double gx);

/// z_i . prompt for each projected visual token.
std::vector<double> token_scores(const EncodedImage& encoded, const Tensor& prompt);
Tensor text_prompt(const EclipModel& model, const TextSample& text);
Tensor image_prompt(const EclipModel& model, const ImageSample& image);
ScoreMap grounding_score_map(const EclipModel& model, const ImageSample& image, const Tensor& prompt,
                             std::size_t scale = 4);

/// Output-resolution box covering columns [x1, x2) and rows [y1, y2).
struct BoxProposal {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double area() const { return (x2 - x1) * (y2 - y1); }
};

struct RankedBox {
  BoxProposal box;
  double score = 0.0;
  std::size_t index = 0;  // position in the proposal list
};

/// Scores each proposal by (sum of S over the pixels whose centers lie inside)
/// / sqrt(area) and sorts descending (ties keep input order).
std::vector<RankedBox> rank_boxes(const ScoreMap& map, const std::vector<BoxProposal>& proposals);
double box_score(const ScoreMap& map, const BoxProposal& box);
double iou(const BoxProposal& a, const BoxProposal& b);
/// Fraction of predictions whose IoU with the ground truth reaches each threshold.
std::vector<double> grounding_accuracy(const std::vector<BoxProposal>& predictions,
                                       const std::vector<BoxProposal>& truths, const std::vector<double>& thresholds);

/// Every grid-aligned rectangle of the token grid, in output coordinates.
std::vector<BoxProposal> grid_proposals(std::size_t grid_h, std::size_t grid_w, std::size_t scale);
BoxProposal to_output_box(const Box& b, std::size_t scale);

void write_pgm(const std::filesystem::path& path, const ScoreMap& map);
void save_score_map(const std::filesystem::path& path, const ScoreMap& map);

std::vector<BoxProposal> parse_proposals(const nlohmann::json& j);
nlohmann::json ranked_boxes_json(const std::vector<RankedBox>& ranked);

// ---------------------------------------------------------------- dataset-level tasks

struct EvalOptions {
  NegativeMode neg_mode = NegativeMode::random;
  MatchRule match_rule = MatchRule::same_product;
  std::vector<std::size_t> ks = {1, 5, 10};
  std::vector<double> iou_thresholds = {0.5, 0.7};
  std::size_t map_scale = 4;
  std::uint64_t seed = 0;
};

/// Text of a bare category name: the category token alone.
TextSample category_text(std::size_t category, std::size_t vocab_size);

/// Negative-query source for a dataset (text pool or EMA averages as needed).
NegativeQueries negatives_for(const EclipModel& model, const Dataset& ds, NegativeMode mode,
                              const std::vector<double>& query_ema);

nlohmann::json evaluate_classification(const EclipModel& model, const Dataset& ds, const EvalOptions& opt,
                                       const std::vector<double>& query_ema = {});
nlohmann::json evaluate_itc_retrieval(const EclipModel& model, const Dataset& ds, const EvalOptions& opt);
/// Queries use each product's first source, the gallery its second.
nlohmann::json evaluate_product_retrieval(const EclipModel& model, const Dataset& ds, const EvalOptions& opt,
                                          const std::vector<double>& query_ema = {});
nlohmann::json evaluate_grounding(const EclipModel& model, const Dataset& ds, const EvalOptions& opt);

nlohmann::json metrics_json(const MetricReport& m);

}  // namespace eclip
