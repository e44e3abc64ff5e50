#include <gtest/gtest.h>

#include <cmath>

#include "bevkit/config.hpp"
#include "bevkit/error.hpp"
#include "bevkit/metrics.hpp"
#include "bevkit/training.hpp"

using namespace bevkit;

namespace {

ObjectBox box_at(double x, double y, std::size_t cls = 0) {
  ObjectBox b;
  b.center = Vec3(x, y, 0.5);
  b.size = Vec3(2, 1, 1);
  b.class_id = cls;
  return b;
}

Detection det_on(const ObjectBox& b, double score, double dx = 0.0) {
  Detection d;
  d.class_id = b.class_id;
  d.score = score;
  d.center = b.center + Vec3(dx, 0, 0);
  d.size = b.size;
  d.yaw = b.yaw;
  d.velocity = b.velocity;
  return d;
}

}  // namespace

TEST(MatchDetections, ExactHitIsTpEverywhere) {
  const ObjectBox gt = box_at(1, 2);
  for (double th : {0.5, 1.0, 2.0, 4.0}) EXPECT_TRUE(match_detections({det_on(gt, 0.9)}, {gt}, th).tp[0]);
}

TEST(MatchDetections, OffsetOfOneAndAHalfMetres) {
  const ObjectBox gt = box_at(1, 2);
  const Detection d = det_on(gt, 0.9, 1.5);
  EXPECT_FALSE(match_detections({d}, {gt}, 0.5).tp[0]);
  EXPECT_FALSE(match_detections({d}, {gt}, 1.0).tp[0]);
  EXPECT_TRUE(match_detections({d}, {gt}, 2.0).tp[0]);
  EXPECT_TRUE(match_detections({d}, {gt}, 4.0).tp[0]);
}

TEST(MatchDetections, HigherScoreWins) {
  const ObjectBox gt = box_at(0, 0);
  // The lower-scored detection sits exactly on the truth but comes second.
  const MatchLabels m = match_detections({det_on(gt, 0.8, 0.1), det_on(gt, 0.3)}, {gt}, 2.0);
  EXPECT_TRUE(m.tp[0]);
  EXPECT_FALSE(m.tp[1]);
}

TEST(MatchDetections, UnsortedInputIsContractError) {
  const ObjectBox gt = box_at(0, 0);
  try {
    match_detections({det_on(gt, 0.3), det_on(gt, 0.8)}, {gt}, 2.0);
    FAIL() << "expected a contract error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
}

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(average_precision({true, true}, 2), 1.0);
  EXPECT_EQ(average_precision({}, 2), 0.0);
  EXPECT_NEAR(average_precision({true, false}, 1), 80.5 / 81.0, 1e-12);
  EXPECT_NEAR(average_precision({false, true}, 1), 0.2, 1e-12);
}

TEST(AveragePrecision, TpAddsAndLowFpDoesNotHelp) {
  const std::vector<bool> base{true, false, true, false};
  const double ap = average_precision(base, 4);
  std::vector<bool> more_tp = base;
  more_tp.push_back(true);
  EXPECT_GE(average_precision(more_tp, 4), ap);
  std::vector<bool> more_fp = base;
  more_fp.push_back(false);
  EXPECT_LE(average_precision(more_fp, 4), ap);
}

TEST(TpErrors, PerfectAndRotated) {
  const ObjectBox gt = box_at(3, 1);
  const TpErrors perfect = tp_error_stats({det_on(gt, 1)}, {gt}, {{0, 0}});
  EXPECT_EQ(perfect.ate, 0.0);
  EXPECT_EQ(perfect.ase, 0.0);
  EXPECT_EQ(perfect.aoe, 0.0);
  EXPECT_EQ(perfect.ave, 0.0);
  Detection turned = det_on(gt, 1);
  turned.yaw += M_PI / 2;
  EXPECT_NEAR(tp_error_stats({turned}, {gt}, {{0, 0}}).aoe, M_PI / 2, 1e-12);
}

TEST(TpErrors, NoMatchesAreMaximal) {
  const TpErrors e = tp_error_stats({}, {box_at(0, 0)}, {});
  EXPECT_EQ(e.ate, 1.0);
  EXPECT_EQ(e.ase, 1.0);
  EXPECT_EQ(e.aoe, 1.0);
  EXPECT_EQ(e.ave, 1.0);
}

TEST(TpErrors, DoubledLengthScaleError) {
  EXPECT_NEAR(aligned_scale_error(Vec3(4, 1, 1), Vec3(2, 1, 1)), 0.5, 1e-15);
}

TEST(Nds, Examples) {
  TpErrors zero;
  zero.ate = zero.ase = zero.aoe = zero.ave = 0.0;
  EXPECT_EQ(nds(1.0, zero), 1.0);
  TpErrors bad;
  bad.ate = bad.ase = bad.aoe = bad.ave = 1.5;
  EXPECT_EQ(nds(0.0, bad), 0.0);
  TpErrors half;
  half.ate = half.ase = half.aoe = half.ave = 0.5;
  EXPECT_NEAR(nds(0.5, half), 0.5, 1e-15);
}

TEST(Evaluate, PerfectAndEmpty) {
  FrameDetections f;
  f.truths = {box_at(1, 1, 0), box_at(-3, 2, 1), box_at(4, -4, 2)};
  for (std::size_t i = 0; i < f.truths.size(); ++i) f.detections.push_back(det_on(f.truths[i], 0.9 - 0.1 * i));
  const EvalResult perfect = evaluate({f}, 3);
  EXPECT_EQ(perfect.map, 1.0);
  EXPECT_EQ(perfect.nds, 1.0);
  f.detections.clear();
  EXPECT_EQ(evaluate({f}, 3).map, 0.0);
}

TEST(Sgd, Examples) {
  ParamStore p;
  p.add("w", Tensor({2}, {1.0, -2.0}), "g");
  sgd_step(p, {{"w", Tensor({2}, {0.0, 0.0})}}, 0.1);
  EXPECT_EQ(p.get("w"), Tensor({2}, {1.0, -2.0}));
  sgd_step(p, {{"w", Tensor({2}, {10.0, -20.0})}}, 0.1);
  EXPECT_EQ(p.get("w"), Tensor({2}, {0.0, 0.0}));
}

TEST(Sgd, QuadraticConverges) {
  ParamStore p;
  p.add("x", Tensor({1}, {1.0}), "g");
  for (int i = 0; i < 100; ++i) {
    const double x = p.get("x")[0];
    sgd_step(p, {{"x", Tensor({1}, {2.0 * x})}}, 0.1);
  }
  EXPECT_LT(std::abs(p.get("x")[0]), 1e-3);
}

TEST(Sgd, ShapeMismatchIsDimensionError) {
  ParamStore p;
  p.add("w", Tensor({2}), "g");
  try {
    sgd_step(p, {{"w", Tensor({3})}}, 0.1);
    FAIL() << "expected a dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(Train, OneStepChangesParams) {
  TrainConfig cfg = desk_config();
  cfg.steps = 1;
  cfg.depth_pretrain_steps = 0;
  cfg.data.train_scenes = 1;
  cfg.data.heldout_scenes = 1;
  const ParamStore before = init_params(cfg.model, cfg.seed);
  const RunReport r = train(cfg);
  ASSERT_EQ(r.loss_curve.size(), 1u);
  bool changed = false;
  for (const auto& name : before.names()) changed |= !(before.get(name) == r.params.get(name));
  EXPECT_TRUE(changed);
}

TEST(Ablation, GridHasSixSettings) {
  const auto grid = ablation_grid();
  ASSERT_EQ(grid.size(), 6u);
  EXPECT_EQ(grid.front().name, "baseline");
  EXPECT_EQ(grid.back().name, "+DST+TSP");
}

TEST(Config, MalformedValueNamesKey) {
  try {
    parse_config("[train]\nsteps = many\n", "bad.ini");
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("train.steps"), std::string::npos);
  }
}

TEST(Config, UnknownSectionRejected) {
  EXPECT_THROW(parse_config("[nope]\nx = 1\n", "bad.ini"), Error);
}

TEST(Config, IniRoundTrip) {
  const AppConfig a = parse_config("[general]\nseed = 99\n[scene]\nboxes = 6\n[train]\nsteps = 12\n", "t");
  const AppConfig b = parse_config(config_to_ini(a), "t2");
  EXPECT_EQ(b.seed, 99u);
  EXPECT_EQ(b.boxes, 6u);
  EXPECT_EQ(config_to_ini(a), config_to_ini(b));
}
