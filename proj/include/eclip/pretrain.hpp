// SPDX-License-Identifier: Apache-2.0
//
// Two-stage pretraining: stage 1 trains the encoders with ITC only while the
// decoder stays frozen; stage 2 trains everything with all five terms, with
// the decoder path cut off from the encoders so they only see ITC gradients.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eclip/model.hpp"
#include "eclip/momentum.hpp"
#include "eclip/objectives.hpp"
#include "eclip/rng.hpp"
#include "eclip/synthdata.hpp"
#include "json.hpp"

namespace eclip {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t stage1_epochs = 10;
  std::size_t stage2_epochs = 5;
  double lr_encoder = 5e-4;
  double lr_rest = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t warmup_steps = 50;
  double lr_decay = 0.85;  // per epoch
  LossWeights weights;
  std::size_t num_queries = 6;  // T; overrides model.decoder.num_queries
  std::uint64_t seed = 0;
  double momentum = kDefaultMomentum;
  std::size_t queue_size = 512;
  /// Queue entries required before L_inter activates; 0 means one batch.
  std::size_t queue_min_fill = 0;
  double text_prompt_prob = 0.5;
  /// Stage-2 negatives follow in-batch similarity instead of a uniform draw.
  bool hard_negatives = true;
  /// Decay of the per-slot prompt average kept for EMA negative queries.
  double query_ema_decay = 0.99;
  ModelConfig model = ModelConfig::desk();

  /// Model config with T applied.
  ModelConfig resolved_model() const;
  std::size_t inter_min_fill() const { return queue_min_fill ? queue_min_fill : batch_size; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Strict: unknown keys raise ConfigError. Missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainSample {
  std::size_t product = 0;  // dataset index
  std::uint64_t product_id = 0;
  std::size_t anchor_source = 0;
  /// Source index of the partner; equals anchor_source for an augmented copy.
  std::size_t partner_source = 0;
  bool augmented = false;
  ImageSample anchor;
  ImageSample partner;
  TextSample text;
  std::size_t positive = 0;  // r
  Modality positive_modality = Modality::text;
  /// T-1 batch indices of the products supplying negative prompts.
  std::vector<std::size_t> negatives;
  std::vector<Modality> negative_modalities;
};

struct TrainBatch {
  std::vector<TrainSample> samples;
  std::size_t size() const { return samples.size(); }
};

/// Horizontal flip of the token grid plus Gaussian noise of the given std.
ImageSample augment(const ImageSample& img, Rng& rng, double noise = 0.05);

/// One batch slot: a product and the source used as its anchor image.
struct EpochEntry {
  std::size_t product = 0;
  std::size_t anchor_source = 0;
  bool operator==(const EpochEntry&) const = default;
};

/// Anchor/partner pairs, positive slot and prompt modalities for each entry,
/// with uniformly drawn negatives. Products must be distinct.
TrainBatch build_batch(const Dataset& ds, const std::vector<EpochEntry>& entries, Rng& rng, const TrainConfig& cfg);

/// Probability of picking product j (j != b) as a negative for sample b:
/// softmax over j != b of sims[b * B + j] * inv_tau.
std::vector<double> hard_negative_distribution(std::span<const double> sims, std::size_t batch, std::size_t b,
                                               double inv_tau);

/// Redraws every sample's negatives. With `sims` (row-major [B, B] image-text
/// similarities) draws follow hard_negative_distribution, otherwise uniform
/// over the other products. Draws are without replacement when T-1 <= B-1.
void assign_negatives(TrainBatch& batch, Rng& rng, std::size_t num_queries, std::span<const double> sims,
                      double inv_tau);

/// Decoupled-weight-decay Adam. Weight decay applies to matrices only.
class AdamW {
 public:
  struct Slot {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };

  AdamW() = default;
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  /// Updates one leaf in place with learning rate `lr`.
  void step(const std::string& name, Tensor& param, std::span<const double> grad, double lr);

  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 0.01;
  std::map<std::string, Slot> slots_;
};

/// Warmup then per-epoch exponential decay.
double scheduled_lr(double base, std::size_t stage_step, std::size_t epoch, std::size_t warmup, double decay);

struct Progress {
  int stage = 1;               // 1, 2, or 3 once everything is done
  std::size_t epoch = 0;       // within the stage
  std::size_t batch = 0;       // next batch within the epoch
  std::size_t stage_step = 0;  // steps taken in the current stage
  std::uint64_t global_step = 0;
  bool momentum_ready = false;
};

struct TrainState {
  TrainConfig config;
  EclipModel model;
  MomentumModel momentum;
  RepresentationQueue queue;
  AdamW optimizer;
  /// Running average of the prompt embedding seen in each query slot [T, D].
  std::vector<double> query_ema;
  std::size_t query_ema_updates = 0;
  Progress progress;
  Rng rng;

  static TrainState fresh(const TrainConfig& cfg);
};

struct StepRecord {
  int stage = 1;
  std::size_t epoch = 0;
  std::uint64_t step = 0;  // global step after this update
  LossBreakdown loss;
  double tau = 0.0;
};

/// Losses of one batch plus what the step needs afterwards.
struct BatchLoss {
  CombinedLoss loss;
  Tensor momentum_reps;          // [B, D] h_xi of each positive, to enqueue
  std::vector<Tensor> prompts;   // per sample, [T, D] prompt embeddings
};

/// Builds the loss graph for one batch. Stage 1 uses ITC only. Stage 2 draws
/// negatives (hard when configured), runs the decoder on detached encoder
/// outputs, and evaluates the momentum view when `momentum` is given.
BatchLoss batch_loss(const EclipModel& model, const MomentumModel* momentum, const RepresentationQueue* queue,
                     TrainBatch& batch, Rng& rng, const TrainConfig& cfg, int stage);

class Trainer {
 public:
  Trainer(TrainState state, const Dataset& ds);

  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

  bool finished(int last_stage) const { return state_.progress.stage > last_stage; }
  /// Batches of an epoch; a pure function of (seed, stage, epoch). An epoch
  /// makes one pass per source index: pass k visits, in shuffled order, every
  /// product with more than k sources, anchored on a per-product shuffled
  /// source, so each image is an anchor exactly once. Incomplete trailing
  /// batches of a pass are dropped.
  std::vector<std::vector<EpochEntry>> epoch_batches(int stage, std::size_t epoch) const;
  std::size_t batches_per_epoch() const;

  /// Runs one optimization step at the current progress position.
  StepRecord step();
  /// Steps until `last_stage` is complete or `max_steps` steps were taken
  /// (0 means unlimited). Returns true when the requested stages are done.
  bool run(int last_stage, std::size_t max_steps, const std::function<void(const StepRecord&)>& on_step = {});

  /// Description of the batch being processed when the last step failed.
  const nlohmann::json& failure_dump() const { return dump_; }

 private:
  void advance();
  void enter_stage_if_needed();

  TrainState state_;
  const Dataset& ds_;
  nlohmann::json dump_;
};

}  // namespace eclip
