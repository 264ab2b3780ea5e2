// SPDX-License-Identifier: Apache-2.0
//
// Exponential-moving-average shadow model and the FIFO queue of momentum
// instance representations used as inter-product negatives.
#pragma once

#include <cstddef>
#include <vector>

#include "eclip/model.hpp"
#include "eclip/tensor.hpp"

namespace eclip {

inline constexpr double kDefaultMomentum = 0.998;

/// xi <- m * xi + (1 - m) * theta for each pair of tensors.
/// Shape drift between the two lists is fatal (DimensionError).
void ema_update(const std::vector<Tensor>& base, std::vector<Tensor>& shadow, double momentum);

/// Momentum copy of a base model. Never receives gradients.
class MomentumModel {
 public:
  MomentumModel() = default;
  MomentumModel(const EclipModel& base, double momentum);

  void update(const EclipModel& base);
  const EclipModel& model() const { return shadow_; }
  EclipModel& model() { return shadow_; }
  double momentum() const { return momentum_; }

 private:
  EclipModel shadow_;
  double momentum_ = kDefaultMomentum;
};

/// Fixed-capacity ring buffer of unit-norm D-vectors; oldest entries are
/// evicted first.
class RepresentationQueue {
 public:
  RepresentationQueue() = default;
  RepresentationQueue(std::size_t capacity, std::size_t dim);

  /// Appends each row of `reps` [k, D] in order. Rows must be unit norm.
  void enqueue(const Tensor& reps);
  void clear();

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return size_ == 0; }

  /// Contents oldest-first as a [size, D] tensor; undefined when empty.
  Tensor contents() const;

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  std::size_t head_ = 0;  // next write slot
  std::vector<double> storage_;
};

}  // namespace eclip
