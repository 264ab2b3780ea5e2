// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <deque>

#include "eclip/errors.hpp"
#include "eclip/momentum.hpp"
#include "support.hpp"

namespace eclip {
namespace {

TEST(Ema, ClosedFormAfterKSteps) {
  const std::vector<Tensor> base = {Tensor::vector({2.0, -1.0}, true)};
  std::vector<Tensor> shadow = {Tensor::vector({0.0, 3.0})};
  const double m = 0.9;
  for (int k = 0; k < 10; ++k) ema_update(base, shadow, m);
  const double mk = std::pow(m, 10);
  EXPECT_NEAR(shadow[0][0], 2.0 * (1 - mk), 1e-12);
  EXPECT_NEAR(shadow[0][1], mk * 3.0 - (1 - mk), 1e-12);
}

TEST(Ema, MomentumZeroCopiesAndOneFreezes) {
  const std::vector<Tensor> base = {Tensor::vector({5.0}, true)};
  std::vector<Tensor> shadow = {Tensor::vector({1.0})};
  ema_update(base, shadow, 1.0);
  EXPECT_EQ(shadow[0][0], 1.0);
  ema_update(base, shadow, 0.0);
  EXPECT_EQ(shadow[0][0], 5.0);
}

TEST(Ema, ShapeDriftIsFatal) {
  const std::vector<Tensor> base = {Tensor::zeros({2, 2}, true)};
  std::vector<Tensor> shadow = {Tensor::zeros({4})};
  EXPECT_THROW(ema_update(base, shadow, 0.5), DimensionError);
  std::vector<Tensor> fewer;
  EXPECT_THROW(ema_update(base, fewer, 0.5), DimensionError);
}

TEST(MomentumModel, StartsAsFrozenCopyAndTracksBase) {
  EclipModel base(test::tiny_model(), 3);
  MomentumModel mom(base, 0.5);
  EXPECT_EQ(mom.model().hash(), base.hash());
  for (const auto& p : mom.model().parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;

  const auto before = mom.model().parameters()[0].tensor.to_vector();
  auto target = base.parameters()[0].tensor;
  for (auto& v : target.mutable_data()) v += 1.0;
  mom.update(base);
  const auto after = mom.model().parameters()[0].tensor.to_vector();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_NEAR(after[i], before[i] + 0.5, 1e-12);
  EXPECT_THROW(MomentumModel(base, 1.5), ConfigError);
}

Tensor unit_row(std::size_t dim, std::size_t hot, double sign = 1.0) {
  std::vector<double> v(dim, 0.0);
  v[hot] = sign;
  return Tensor::from({1, dim}, v);
}

TEST(Queue, MatchesDequeOracle) {
  Rng rng(4);
  const std::size_t cap = 7, dim = 5;
  RepresentationQueue q(cap, dim);
  std::deque<std::vector<double>> oracle;
  EXPECT_FALSE(q.contents().defined());
  for (int step = 0; step < 30; ++step) {
    const std::size_t k = 1 + rng.below(4);
    const auto batch = test::unit_rows(rng, k, dim);
    q.enqueue(batch);
    for (std::size_t r = 0; r < k; ++r) {
      oracle.push_back(row(batch, r).to_vector());
      if (oracle.size() > cap) oracle.pop_front();
    }
    ASSERT_EQ(q.size(), oracle.size());
    const auto c = q.contents();
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      for (std::size_t j = 0; j < dim; ++j) EXPECT_EQ(c.at(i, j), oracle[i][j]);
    }
  }
}

TEST(Queue, EvictsOldestFirst) {
  RepresentationQueue q(2, 3);
  q.enqueue(unit_row(3, 0));
  q.enqueue(unit_row(3, 1));
  q.enqueue(unit_row(3, 2));
  const auto c = q.contents();
  EXPECT_EQ(c.at(0, 1), 1.0);
  EXPECT_EQ(c.at(1, 2), 1.0);
  q.clear();
  EXPECT_TRUE(q.empty());
}

TEST(Queue, RejectsBadRows) {
  RepresentationQueue q(4, 3);
  EXPECT_THROW(q.enqueue(Tensor::zeros({1, 4})), DimensionError);
  EXPECT_THROW(q.enqueue(Tensor::from({1, 3}, {0.5, 0.5, 0.0})), InputError);
  EXPECT_THROW(RepresentationQueue(0, 3), ConfigError);
}

}  // namespace
}  // namespace eclip
