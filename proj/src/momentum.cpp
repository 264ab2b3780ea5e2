// SPDX-License-Identifier: Apache-2.0

#include "eclip/momentum.hpp"

#include <cmath>

#include "eclip/errors.hpp"

namespace eclip {

void ema_update(const std::vector<Tensor>& base, std::vector<Tensor>& shadow, double momentum) {
  if (base.size() != shadow.size()) throw DimensionError("ema_update: parameter count drift");
  for (std::size_t k = 0; k < base.size(); ++k) {
    if (base[k].shape() != shadow[k].shape()) {
      throw DimensionError("ema_update: shape drift " + shape_str(base[k].shape()) + " vs " +
                           shape_str(shadow[k].shape()));
    }
  }
  const double keep = momentum;
  const double take = 1.0 - momentum;
  for (std::size_t k = 0; k < base.size(); ++k) {
    auto src = base[k].data();
    auto dst = shadow[k].mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = keep * dst[i] + take * src[i];
  }
}

MomentumModel::MomentumModel(const EclipModel& base, double momentum)
    : shadow_(base.clone(false)), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
}

void MomentumModel::update(const EclipModel& base) {
  std::vector<Tensor> src, dst;
  for (auto& p : base.parameters()) src.push_back(p.tensor);
  for (auto& p : shadow_.parameters()) dst.push_back(p.tensor);
  ema_update(src, dst, momentum_);
}

RepresentationQueue::RepresentationQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), storage_(capacity * dim, 0.0) {
  if (capacity == 0 || dim == 0) throw ConfigError("queue capacity and width must be positive");
}

void RepresentationQueue::enqueue(const Tensor& reps) {
  if (reps.rank() != 2 || reps.dim(1) != dim_) {
    throw DimensionError("enqueue: expected [k, " + std::to_string(dim_) + "], got " + shape_str(reps.shape()));
  }
  auto v = reps.data();
  const auto k = reps.dim(0);
  for (std::size_t r = 0; r < k; ++r) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) n2 += v[r * dim_ + j] * v[r * dim_ + j];
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) throw InputError("enqueue: representations must be unit norm");
  }
  for (std::size_t r = 0; r < k; ++r) {
    std::copy_n(&v[r * dim_], dim_, &storage_[head_ * dim_]);
    head_ = (head_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
  }
}

void RepresentationQueue::clear() {
  size_ = 0;
  head_ = 0;
  std::fill(storage_.begin(), storage_.end(), 0.0);
}

Tensor RepresentationQueue::contents() const {
  if (size_ == 0) return {};
  std::vector<double> out(size_ * dim_);
  const std::size_t start = (head_ + capacity_ - size_) % capacity_;
  for (std::size_t i = 0; i < size_; ++i) {
    std::copy_n(&storage_[((start + i) % capacity_) * dim_], dim_, &out[i * dim_]);
  }
  return Tensor::from({size_, dim_}, std::move(out));
}

}  // namespace eclip
