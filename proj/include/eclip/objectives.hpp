// SPDX-License-Identifier: Apache-2.0
//
// Pretraining losses. Contrastive terms are summed over the batch exactly as
// written; `combine` divides by the batch size once so magnitudes do not
// depend on B.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "eclip/rng.hpp"
#include "eclip/tensor.hpp"

namespace eclip {

/// Learnable temperature stored as log(tau), clamped to [5e-3, 1].
struct Temperature {
  static constexpr double kMin = 5e-3;
  static constexpr double kMax = 1.0;
  static constexpr double kInit = 0.07;

  Tensor log_tau;

  static Temperature create(double tau = kInit);
  double value() const;
  /// 1 / tau as a differentiable scalar.
  Tensor inverse() const;
  void clamp();
};

/// Linear map D -> 2 producing (no_match, match) logits.
struct MatchHead {
  Tensor weight;  // [D, 2]
  Tensor bias;    // [2]

  static MatchHead create(Rng& rng, std::size_t embed_dim);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

enum class MatchLabel : std::size_t { no_match = 0, match = 1 };

/// Image-text contrastive loss: (L_i2t + L_t2i) / 2 over a [B, D] pair of
/// normalized embeddings matched by row.
Tensor itc_loss(const Tensor& image_cls, const Tensor& text_cls, const Tensor& inv_tau);

/// Inter-product loss against a queue of momentum negatives. `queue` may be
/// undefined (empty), in which case every term is exactly zero.
Tensor inter_product_loss(const Tensor& h_base, const Tensor& h_momentum_pos, const Tensor& queue,
                          const Tensor& inv_tau);

/// Instance-text matching cross-entropy for a batch of pairs [P, D].
Tensor itm_loss(const Tensor& instances, const Tensor& texts, std::span<const MatchLabel> labels,
                const MatchHead& head);
Tensor itm_loss(const Tensor& instance, const Tensor& text, MatchLabel label, const MatchHead& head);

/// Intra-product loss of one sample: H [T, D] against its text [D], positive index r.
Tensor intra_product_loss(const Tensor& instances, const Tensor& text_cls, std::size_t positive,
                          const Tensor& inv_tau);

/// Entropy regularizer on an assignment matrix M [N, T] with positive column r.
Tensor entropy_reg(const Tensor& assignment, std::size_t positive);

struct LossWeights {
  double itc = 1.0;
  double inter = 1.0;
  double itm = 1.0;
  double intra = 1.0;
  double reg = 1.0;

  std::array<double, 5> as_array() const { return {itc, inter, itm, intra, reg}; }
};

/// Weighted per-term contributions; `total` is their sum.
struct LossBreakdown {
  double itc = 0.0;
  double inter = 0.0;
  double itm = 0.0;
  double intra = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

inline constexpr std::array<const char*, 5> kLossNames = {"itc", "inter", "itm", "intra", "reg"};

/// Weighted sum of plain component values. Throws TrainingError naming the
/// first non-finite component.
LossBreakdown total_loss(const std::array<double, 5>& components, const LossWeights& weights);

/// Batch-summed loss terms as graph tensors; undefined entries are inactive.
struct LossTerms {
  std::array<Tensor, 5> terms;
};

struct CombinedLoss {
  Tensor total;
  LossBreakdown breakdown;
};

/// Divides each term by `batch_size`, weights it, and sums. Inactive terms
/// and zero-weight terms contribute exactly 0.
CombinedLoss combine(const LossTerms& terms, const LossWeights& weights, std::size_t batch_size);

}  // namespace eclip
