#include <gtest/gtest.h>

#include <cmath>

#include "bevkit/error.hpp"
#include "bevkit/losses.hpp"
#include "bevkit/predictor.hpp"

using namespace bevkit;

namespace {

Tensor flat_heatmap(std::size_t n, std::size_t c, double v) { return Tensor({n, n, c}, v); }

}  // namespace

TEST(SelectCandidates, SinglePeak) {
  Tensor h = flat_heatmap(8, 3, 0.1);
  h[(3 * 8 + 5) * 3 + 2] = 0.9;
  const CandidateSet cs = select_candidates(h, 1);
  ASSERT_EQ(cs.items.size(), 1u);
  EXPECT_EQ(cs.items[0].gx, 3u);
  EXPECT_EQ(cs.items[0].gy, 5u);
  EXPECT_EQ(cs.items[0].cls, 2u);
  EXPECT_DOUBLE_EQ(cs.items[0].score, 0.9);
}

TEST(SelectCandidates, ConstantHeatmapTakesFirstCells) {
  const CandidateSet cs = select_candidates(flat_heatmap(4, 2, 0.5), 3);
  ASSERT_EQ(cs.items.size(), 3u);
  EXPECT_EQ(cs.cells(4), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SelectCandidates, FewerEligibleThanK) {
  // Strictly increasing along the flat index: only the last cell is a local max.
  Tensor h = flat_heatmap(4, 1, 0.0);
  for (std::size_t i = 0; i < 16; ++i) h[i] = 0.01 * static_cast<double>(i);
  const CandidateSet cs = select_candidates(h, 8);
  ASSERT_EQ(cs.items.size(), 1u);
  EXPECT_EQ(cs.items[0].gx, 3u);
  EXPECT_EQ(cs.items[0].gy, 3u);
}

TEST(SelectCandidates, ZeroKIsRejected) {
  EXPECT_THROW(select_candidates(flat_heatmap(4, 2, 0.5), 0), Error);
}

TEST(Attention, WeightsSumToOne) {
  Tape t(false);
  Tensor q({2, 4}), k({5, 4}), v({5, 3});
  for (std::size_t i = 0; i < q.numel(); ++i) q[i] = std::sin(1.0 + i);
  for (std::size_t i = 0; i < k.numel(); ++i) k[i] = std::cos(2.0 * i);
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = 0.1 * i;
  const Attention a = attention(t, t.constant(q), t.constant(k), t.constant(v), 0.5);
  const Tensor& w = t.value(a.weights);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += w[r * 5 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, PeakedLogitsSelectValue) {
  Tape t(false);
  // One query, three keys; the logit gap to the middle key is 50.
  const Tensor q({1, 1}, {1.0});
  const Tensor k({3, 1}, {0.0, 50.0, 0.0});
  const Tensor v({3, 2}, {1, 2, 3, 4, 5, 6});
  const Attention a = attention(t, t.constant(q), t.constant(k), t.constant(v), 1.0);
  EXPECT_NEAR(t.value(a.out)[0], 3.0, 1e-12);
  EXPECT_NEAR(t.value(a.out)[1], 4.0, 1e-12);
}

TEST(Hungarian, SingleEntry) {
  Eigen::MatrixXd c(1, 1);
  c << 7;
  const MatchResult m = hungarian_match(c);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(m.cost, 7.0);
}

TEST(Hungarian, TwoByTwo) {
  Eigen::MatrixXd c(2, 2);
  c << 1, 2, 2, 1;
  const MatchResult m = hungarian_match(c);
  EXPECT_EQ(m.cost, 2.0);
  EXPECT_EQ(m.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
}

TEST(Hungarian, RectangularLeavesUnmatched) {
  Eigen::MatrixXd c(3, 2);
  c << 5, 9, 1, 8, 7, 2;
  const MatchResult m = hungarian_match(c);
  EXPECT_EQ(m.cost, 3.0);
  EXPECT_EQ(m.unmatched_predictions, (std::vector<std::size_t>{0}));
  EXPECT_TRUE(m.unmatched_truths.empty());
}

TEST(Hungarian, NanCostIsNumericError) {
  Eigen::MatrixXd c(2, 2);
  c << 1, std::nan(""), 2, 3;
  try {
    hungarian_match(c);
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

TEST(Focal, PositiveAtHalf) {
  EXPECT_NEAR(focal_term(0.5, 1.0), 0.043322, 5e-7);
  EXPECT_NEAR(focal_term(0.5, 1.0), 0.25 * 0.25 * std::log(2.0), 1e-15);
}

TEST(Focal, VanishesAtCertainty) {
  EXPECT_LT(focal_term(1.0 - 1e-9, 1.0), 1e-12);
}

TEST(Focal, ReducesToHalfBce) {
  const FocalParams fp{0.5, 0.0};
  for (double p : {0.1, 0.4, 0.8}) {
    EXPECT_NEAR(focal_term(p, 1.0, fp), -0.5 * std::log(p), 1e-12);
    EXPECT_NEAR(focal_term(p, 0.0, fp), -0.5 * std::log(1.0 - p), 1e-12);
  }
}

TEST(Focal, BceOfSigmoidAtZeroHasSlopeMinusHalf) {
  // Half-BCE through a sigmoid: d/dz = 0.5 (sigmoid(z) - 1) = -0.25 at z = 0.
  Tape t;
  const Var z = t.input(Tensor({1}, {0.0}));
  const Var loss = focal_loss(t, ad::sigmoid(t, z), Tensor({1}, {1.0}), FocalParams{0.5, 0.0});
  EXPECT_NEAR(2.0 * t.backward(loss)[z][0], -0.5, 1e-12);
}

TEST(Focal, MeanOverElements) {
  Tape t;
  const Var loss = focal_loss(t, t.constant(Tensor({2}, {0.5, 0.5})), Tensor({2}, {1.0, 0.0}));
  EXPECT_NEAR(t.value(loss).item(), 0.5 * (focal_term(0.5, 1.0) + focal_term(0.5, 0.0)), 1e-15);
}

TEST(L1, Examples) {
  Tape t;
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.value(l1_loss(t, t.constant(a), a)).item(), 0.0);
  Tensor b = a;
  for (double& v : b.data()) v += 1.0;
  EXPECT_DOUBLE_EQ(t.value(l1_loss(t, t.constant(b), a)).item(), 1.0);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  const Tensor target({2, 2}, {1, 0, 0, 1});
  EXPECT_LT(finite_diff_check(
                [&](Tape& t, Var z) { return focal_loss(t, ad::sigmoid(t, z), target); },
                Tensor({2, 2}, {0.3, -0.7, 1.2, 0.1})),
            1e-4);
  const Tensor box({1, 3}, {0.5, -0.5, 2.0});
  EXPECT_LT(finite_diff_check([&](Tape& t, Var x) { return l1_loss(t, x, box); },
                              Tensor({1, 3}, {0.1, 0.2, 0.3})),
            1e-4);
}

TEST(HeatmapTarget, PeakAtObjectCell) {
  const BEVConfig bev;
  ObjectBox b;
  b.center = Vec3(bev.cell_center(10, 20).x(), bev.cell_center(10, 20).y(), 0.5);
  b.size = Vec3(0.4, 0.4, 1.0);
  b.class_id = 1;
  const Tensor h = heatmap_target({b}, bev, 3);
  const std::size_t n = bev.n;
  EXPECT_EQ(h[(10 * n + 20) * 3 + 1], 1.0);
  EXPECT_EQ(h[(10 * n + 20) * 3 + 0], 0.0);
  // Minimum radius of one cell reaches the 4-neighbours.
  EXPECT_GT(h[(11 * n + 20) * 3 + 1], 0.0);
  EXPECT_LT(h[(11 * n + 20) * 3 + 1], 1.0);
}

TEST(HeatmapTarget, EmptyIsZero) {
  const Tensor h = heatmap_target({}, BEVConfig{}, 3);
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
}
