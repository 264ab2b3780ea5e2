// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "eclip/errors.hpp"
#include "eclip/objectives.hpp"
#include "support.hpp"

namespace eclip {
namespace {

const double kLog1pExpNeg1 = std::log(1.0 + std::exp(-1.0));  // 0.31326...

Tensor one() { return Tensor::scalar(1.0); }

TEST(Itc, OrthonormalPairsClosedForm) {
  const auto img = Tensor::matrix({{1, 0}, {0, 1}});
  const auto loss = itc_loss(img, img, one()).item();
  EXPECT_NEAR(loss, 2 * kLog1pExpNeg1, 1e-12);
  EXPECT_NEAR(loss, 0.62652, 1e-5);
}

TEST(Itc, MatchesLoopReference) {
  Rng rng(1);
  const auto a = test::unit_rows(rng, 5, 6);
  const auto b = test::unit_rows(rng, 5, 6);
  const double inv_tau = 1.0 / 0.07;
  double i2t = 0.0, t2i = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      double sij = 0.0, sji = 0.0;
      for (std::size_t k = 0; k < 6; ++k) {
        sij += a.at(i, k) * b.at(j, k);
        sji += a.at(j, k) * b.at(i, k);
      }
      row += std::exp(sij * inv_tau);
      col += std::exp(sji * inv_tau);
    }
    double sii = 0.0;
    for (std::size_t k = 0; k < 6; ++k) sii += a.at(i, k) * b.at(i, k);
    i2t -= sii * inv_tau - std::log(row);
    t2i -= sii * inv_tau - std::log(col);
  }
  EXPECT_NEAR(itc_loss(a, b, Tensor::scalar(inv_tau)).item(), 0.5 * (i2t + t2i), 1e-10);
}

TEST(Itc, DecreasesAsPositiveSimilarityGrows) {
  // Image i is e_i and text i is cos(a) e_i + sin(a) e_{4+i}: negatives stay
  // at similarity 0 while the positive similarity is cos(a).
  double prev = 1e300;
  for (double c : {0.0, 0.3, 0.6, 0.9, 1.0}) {
    std::vector<double> img(32, 0.0), txt(32, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      img[i * 8 + i] = 1.0;
      txt[i * 8 + i] = c;
      txt[i * 8 + 4 + i] = std::sqrt(1.0 - c * c);
    }
    const double l = itc_loss(Tensor::from({4, 8}, img), Tensor::from({4, 8}, txt), Tensor::scalar(10.0)).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(Itc, InvariantToJointRowPermutation) {
  Rng rng(3);
  const auto a = test::unit_rows(rng, 4, 8);
  const auto b = test::unit_rows(rng, 4, 8);
  const std::vector<std::size_t> perm = {2, 3, 0, 1};
  EXPECT_NEAR(itc_loss(a, b, one()).item(), itc_loss(gather_rows(a, perm), gather_rows(b, perm), one()).item(),
              1e-12);
}

TEST(Itc, ShapeErrors) {
  EXPECT_THROW(itc_loss(Tensor::zeros({2, 3}), Tensor::zeros({3, 3}), one()), DimensionError);
  EXPECT_THROW(itc_loss(Tensor{}, Tensor::zeros({3, 3}), one()), InputError);
}

TEST(Inter, ClosedFormWithOneOrthogonalNegative) {
  const auto h = Tensor::matrix({{1, 0}});
  const auto queue = Tensor::matrix({{0, 1}});
  const double l = inter_product_loss(h, h, queue, one()).item();
  EXPECT_NEAR(l, kLog1pExpNeg1, 1e-12);
  EXPECT_NEAR(l, 0.31326, 1e-5);
}

TEST(Inter, EmptyQueueGivesExactZero) {
  Rng rng(4);
  const auto h = test::unit_rows(rng, 3, 5);
  const auto m = test::unit_rows(rng, 3, 5);
  EXPECT_EQ(inter_product_loss(h, m, Tensor{}, Tensor::scalar(14.0)).item(), 0.0);
}

TEST(Inter, GrowsWithHarderNegatives) {
  const auto h = Tensor::matrix({{1, 0}});
  double prev = -1.0;
  for (double c : {-1.0, -0.5, 0.0, 0.5, 0.9}) {
    const auto q = Tensor::matrix({{c, std::sqrt(1 - c * c)}});
    const double l = inter_product_loss(h, h, q, Tensor::scalar(5.0)).item();
    EXPECT_GT(l, prev);
    prev = l;
  }
}

TEST(Inter, QueueOrderDoesNotMatter) {
  Rng rng(5);
  const auto h = test::unit_rows(rng, 2, 4);
  const auto m = test::unit_rows(rng, 2, 4);
  const auto q = test::unit_rows(rng, 6, 4);
  const std::vector<std::size_t> perm = {5, 1, 3, 0, 2, 4};
  EXPECT_NEAR(inter_product_loss(h, m, q, one()).item(), inter_product_loss(h, m, gather_rows(q, perm), one()).item(),
              1e-12);
}

TEST(Itm, ZeroHeadIsLogTwoPerPair) {
  MatchHead head{Tensor::zeros({3, 2}, true), Tensor::zeros({2}, true)};
  const auto x = Tensor::matrix({{1, 0, 0}, {0, 1, 0}});
  const MatchLabel labels[] = {MatchLabel::match, MatchLabel::no_match};
  EXPECT_NEAR(itm_loss(x, x, labels, head).item(), 2 * std::log(2.0), 1e-12);
}

TEST(Itm, SingleAndBatchedAgree) {
  Rng rng(6);
  const auto head = MatchHead::create(rng, 4);
  const auto a = test::unit_rows(rng, 3, 4);
  const auto b = test::unit_rows(rng, 3, 4);
  const MatchLabel labels[] = {MatchLabel::match, MatchLabel::no_match, MatchLabel::match};
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) sum += itm_loss(row(a, i), row(b, i), labels[i], head).item();
  EXPECT_NEAR(itm_loss(a, b, labels, head).item(), sum, 1e-12);
}

TEST(Itm, LabelCountMustMatch) {
  Rng rng(7);
  const auto head = MatchHead::create(rng, 4);
  const auto a = test::unit_rows(rng, 2, 4);
  const MatchLabel labels[] = {MatchLabel::match};
  EXPECT_THROW(itm_loss(a, a, labels, head), InputError);
}

TEST(Intra, ClosedFormAndZeroGapCase) {
  const auto h = Tensor::matrix({{1, 0}, {0, 1}});
  const auto text = Tensor::vector({1, 0});
  EXPECT_NEAR(intra_product_loss(h, text, 0, one()).item(), 0.31326, 1e-5);
  // Every instance equally similar: log T.
  const auto same = Tensor::matrix({{1, 0}, {1, 0}, {1, 0}});
  EXPECT_NEAR(intra_product_loss(same, text, 1, Tensor::scalar(20.0)).item(), std::log(3.0), 1e-12);
}

TEST(Intra, InvariantToReorderingNegatives) {
  Rng rng(8);
  const auto h = test::unit_rows(rng, 4, 6);
  const auto text = normalize(test::random_tensor(rng, {6}, 1.0, false));
  const std::vector<std::size_t> perm = {0, 3, 1, 2};
  EXPECT_NEAR(intra_product_loss(h, text, 0, one()).item(),
              intra_product_loss(gather_rows(h, perm), text, 0, one()).item(), 1e-12);
}

TEST(Intra, BadPositiveIndex) {
  EXPECT_THROW(intra_product_loss(Tensor::zeros({2, 3}), Tensor::zeros({3}), 2, one()), InputError);
}

TEST(EntropyReg, UniformAssignmentClosedForm) {
  const std::size_t n = 64, t = 6;
  const auto m = Tensor::full({n, t}, 1.0 / t);
  const double expected =
      (static_cast<double>(n) / t) * std::log(static_cast<double>(t)) * (2.0 - t) + (t - 1) * std::log(64.0);
  EXPECT_NEAR(entropy_reg(m, 0).item(), expected, 1e-10);
  EXPECT_NEAR(entropy_reg(m, 0).item(), -55.65, 5e-3);
}

TEST(EntropyReg, UniformFourByTwoIsTwoLogTwo) {
  EXPECT_NEAR(entropy_reg(Tensor::full({4, 2}, 0.5), 1).item(), 2 * std::log(2.0), 1e-9);
}

TEST(EntropyReg, MatchesLoopReference) {
  Rng rng(9);
  const auto m = softmax(test::random_tensor(rng, {7, 3}, 2.0, false), 1);
  const std::size_t r = 2;
  double expected = 2 * std::log(7.0);
  for (std::size_t j = 0; j < 3; ++j) {
    double h = 0.0;
    for (std::size_t i = 0; i < 7; ++i) h -= m.at(i, j) * std::log(m.at(i, j));
    expected += (j == r ? 1.0 : -1.0) * h;
  }
  EXPECT_NEAR(entropy_reg(m, r).item(), expected, 1e-12);
}

TEST(EntropyReg, OneHotColumnsGiveOffset) {
  // Every token fully assigned to the positive query: all column entropies vanish.
  const auto m = Tensor::matrix({{1, 0, 0}, {1, 0, 0}, {1, 0, 0}, {1, 0, 0}});
  EXPECT_NEAR(entropy_reg(m, 0).item(), 2 * std::log(4.0), 1e-12);
}

TEST(EntropyReg, BadInputs) {
  EXPECT_THROW(entropy_reg(Tensor::zeros({3}), 0), DimensionError);
  EXPECT_THROW(entropy_reg(Tensor::full({3, 2}, 0.5), 2), InputError);
}

TEST(Temperature, ClampsToRange) {
  auto t = Temperature::create();
  EXPECT_NEAR(t.value(), 0.07, 1e-12);
  EXPECT_NEAR(t.inverse().item(), 1.0 / 0.07, 1e-9);
  t.log_tau.mutable_data()[0] = 5.0;
  t.clamp();
  EXPECT_NEAR(t.value(), 1.0, 1e-12);
  t.log_tau.mutable_data()[0] = -20.0;
  t.clamp();
  EXPECT_NEAR(t.value(), 5e-3, 1e-12);
  EXPECT_THROW(Temperature::create(0.0), ConfigError);
}

TEST(TotalLoss, WeightedSumAndNonFiniteNaming) {
  LossWeights w;
  w.itm = 0.5;
  w.reg = 0.0;
  const auto b = total_loss({1.0, 2.0, 3.0, 4.0, -50.0}, w);
  EXPECT_EQ(b.itm, 1.5);
  EXPECT_EQ(b.reg, 0.0);
  EXPECT_EQ(b.total, 1.0 + 2.0 + 1.5 + 4.0);
  try {
    total_loss({1.0, 2.0, std::nan(""), 4.0, 5.0}, LossWeights{});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("itm"), std::string::npos);
  }
  EXPECT_THROW(total_loss({1.0, 2.0, 3.0, 4.0, INFINITY}, LossWeights{}), TrainingError);
}

TEST(Combine, DividesByBatchAndSkipsInactiveTerms) {
  LossTerms terms;
  terms.terms[0] = Tensor::scalar(8.0, true);
  terms.terms[3] = Tensor::scalar(4.0, true);
  terms.terms[4] = Tensor::scalar(-100.0, true);
  LossWeights w;
  w.reg = 0.0;
  const auto c = combine(terms, w, 4);
  EXPECT_EQ(c.total.item(), 3.0);
  EXPECT_EQ(c.breakdown.itc, 2.0);
  EXPECT_EQ(c.breakdown.inter, 0.0);
  EXPECT_EQ(c.breakdown.intra, 1.0);
  EXPECT_EQ(c.breakdown.reg, 0.0);
  EXPECT_THROW(combine(terms, w, 0), InputError);
}

TEST(Combine, GradientFlowsWithWeights) {
  const auto x = Tensor::scalar(2.0, true);
  LossTerms terms;
  terms.terms[1] = mul(x, x);
  LossWeights w;
  w.inter = 3.0;
  const auto g = value_and_grad([&] { return combine(LossTerms{terms}, w, 2).total; }, {x});
  EXPECT_EQ(g.value, 6.0);
  EXPECT_EQ(g.grads[0][0], 6.0);
}

TEST(ObjectiveGradients, AllTermsMatchFiniteDifferences) {
  Rng rng(10);
  const auto head = MatchHead::create(rng, 4);
  auto a = test::random_tensor(rng, {3, 4});
  auto b = test::random_tensor(rng, {3, 4});
  auto q = test::random_tensor(rng, {5, 4});
  auto logits = test::random_tensor(rng, {6, 3});
  auto log_inv = Tensor::scalar(std::log(3.0), true);
  const MatchLabel labels[] = {MatchLabel::match, MatchLabel::no_match, MatchLabel::no_match};
  auto f = [&] {
    const auto inv = exp(log_inv);
    const auto na = normalize(a), nb = normalize(b);
    Tensor total = itc_loss(na, nb, inv);
    total = add(total, inter_product_loss(na, nb, normalize(q), inv));
    total = add(total, itm_loss(na, nb, labels, head));
    total = add(total, intra_product_loss(na, row(nb, 0), 1, inv));
    total = add(total, entropy_reg(softmax(logits, 1), 2));
    return total;
  };
  EXPECT_LE(test::grad_error(f, {a, b, q, logits, log_inv, head.weight, head.bias}), 1e-4);
}

}  // namespace
}  // namespace eclip
