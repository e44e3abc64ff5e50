#include <gtest/gtest.h>

#include <cmath>

#include "bevkit/error.hpp"
#include "bevkit/lidar_pipeline.hpp"
#include "bevkit/model.hpp"
#include "bevkit/nn.hpp"
#include "bevkit/view_transform.hpp"

using namespace bevkit;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.classes = 3;
  m.bev.n = 16;
  m.sync();
  return m;
}

bool all_zero(const Tensor& t) {
  for (double v : t.data()) {
    if (v != 0.0) return false;
  }
  return true;
}

CameraParams axis_camera() {
  CameraParams cam;
  cam.fx = cam.fy = 8;
  cam.cx = cam.cy = 8;
  cam.width = cam.height = 16;
  return cam;
}

DepthBins bins_1_5_4() {
  DepthBins b;
  b.d_min = 1;
  b.d_max = 5;
  b.count = 4;
  return b;
}

}  // namespace

TEST(Voxelize, CornerPoint) {
  VoxelConfig cfg;
  PointCloud pc;
  pc.points.push_back({cfg.range_min.x(), cfg.range_min.y(), cfg.range_min.z(), 0.7, 0.2});
  const VoxelGrid vg = voxelize(pc, cfg);
  ASSERT_EQ(vg.voxels.size(), 1u);
  const Voxel& v = vg.voxels[0];
  EXPECT_EQ(v.ix, 0u);
  EXPECT_EQ(v.iy, 0u);
  EXPECT_EQ(v.iz, 0u);
  EXPECT_EQ(v.count, 1u);
  EXPECT_EQ(v.mean, pc.points[0]);
}

TEST(Voxelize, MeanOfTwo) {
  const VoxelConfig cfg;
  PointCloud pc;
  pc.points.push_back({0.1, 0.1, 0.1, 1.0, 0.0});
  pc.points.push_back({0.3, 0.2, 0.4, 0.0, 1.0});
  const VoxelGrid vg = voxelize(pc, cfg);
  ASSERT_EQ(vg.voxels.size(), 1u);
  EXPECT_EQ(vg.voxels[0].count, 2u);
  EXPECT_DOUBLE_EQ(vg.voxels[0].mean[0], 0.2);
  EXPECT_DOUBLE_EQ(vg.voxels[0].mean[3], 0.5);
  EXPECT_DOUBLE_EQ(vg.voxels[0].mean[4], 0.5);
}

TEST(Voxelize, LargeScaleIndex) {
  const VoxelConfig cfg = VoxelConfig::full_scale();
  PointCloud pc;
  pc.points.push_back({cfg.range_min.x() + 0.1, 0.0, 0.0, 0.0, 0.0});
  const VoxelGrid vg = voxelize(pc, cfg);
  ASSERT_EQ(vg.voxels.size(), 1u);
  EXPECT_EQ(vg.voxels[0].ix, 1u);
}

TEST(Voxelize, OutOfRangePointsDropped) {
  const VoxelConfig cfg;
  PointCloud pc;
  pc.points.push_back({cfg.range_max.x(), 0.0, 0.0, 0.0, 0.0});
  pc.points.push_back({0.0, 0.0, cfg.range_min.z() - 0.01, 0.0, 0.0});
  EXPECT_TRUE(voxelize(pc, cfg).voxels.empty());
}

TEST(LidarBranch, EmptyGridGivesZeroBev) {
  const ModelConfig m = small_model();
  const ParamStore params = init_params(m, 3);
  const VoxelGrid vg = voxelize(PointCloud{}, m.voxel_config());
  const Tensor mid = encode_voxels(vg, params);
  EXPECT_TRUE(all_zero(mid));
  EXPECT_TRUE(all_zero(compress_z(mid, params)));
}

TEST(LidarBranch, SingleVoxelTouchesOneCell) {
  const ModelConfig m = small_model();
  const ParamStore params = init_params(m, 3);
  PointCloud pc;
  pc.points.push_back({1.1, -2.3, 0.4, 0.5, 0.0});
  const Tensor bev = compress_z(encode_voxels(voxelize(pc, m.voxel_config()), params), params);
  const std::size_t n = bev.shape()[0] * bev.shape()[1], c = bev.shape()[2];
  std::size_t touched = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t k = 0; k < c; ++k) any |= bev[i * c + k] != 0.0;
    touched += any;
  }
  EXPECT_LE(touched, 1u);
}

TEST(CameraEncode, ZeroImageShapeAndValue) {
  const ModelConfig m = small_model();
  const ParamStore params = init_params(m, 3);
  Tape t(false);
  BoundParams p(t, params, false);
  const Var lr = camera_encode(t, p, t.constant(Tensor({64, 64, m.camera.image_channels})), 2);
  EXPECT_EQ(t.shape(lr), (Shape{32, 32, m.camera.lr_channels}));
  EXPECT_TRUE(all_zero(t.value(lr)));
  const Var hr = upsample_hr(t, p, lr, 2);
  EXPECT_EQ(t.shape(hr), (Shape{64, 64, m.camera.hr_channels}));
  EXPECT_TRUE(all_zero(t.value(hr)));
}

TEST(CameraEncode, IndivisibleShapeIsDimensionError) {
  const ModelConfig m = small_model();
  const ParamStore params = init_params(m, 3);
  Tape t(false);
  BoundParams p(t, params, false);
  try {
    camera_encode(t, p, t.constant(Tensor({63, 64, m.camera.image_channels})), 2);
    FAIL() << "expected a dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(DepthGroundTruth, SinglePoint) {
  PointCloud pc;
  pc.points.push_back({0.0, 0.0, 2.5, 0.0, 0.0});
  const DepthGroundTruth gt = depth_ground_truth(pc, axis_camera(), bins_1_5_4(), 2);
  EXPECT_EQ(gt.valid(), 1u);
  const std::size_t pix = 4 * 8 + 4;  // u = v = 8 -> feature pixel (4, 4)
  EXPECT_EQ(gt.mask[pix], 1.0);
  EXPECT_EQ(gt.onehot[pix * 4 + 1], 1.0);
}

TEST(DepthGroundTruth, NearestPointWins) {
  PointCloud pc;
  pc.points.push_back({0.0, 0.0, 6.0, 0.0, 0.0});
  pc.points.push_back({0.0, 0.0, 2.0, 0.0, 0.0});
  DepthBins b = bins_1_5_4();
  b.d_max = 9;
  b.count = 4;  // 2 m bins: depth 2 -> bin 0, depth 6 -> bin 2
  const DepthGroundTruth gt = depth_ground_truth(pc, axis_camera(), b, 2);
  const std::size_t pix = 4 * 8 + 4;
  EXPECT_EQ(gt.onehot[pix * 4 + 0], 1.0);
  EXPECT_EQ(gt.onehot[pix * 4 + 2], 0.0);
}

TEST(DepthGroundTruth, EmptyCloud) {
  const DepthGroundTruth gt = depth_ground_truth(PointCloud{}, axis_camera(), bins_1_5_4(), 2);
  EXPECT_EQ(gt.valid(), 0u);
}

TEST(DepthLoss, UniformAgainstOneHot) {
  DepthGroundTruth gt{Tensor({1, 2}, {1.0, 0.0}), Tensor({1}, {1.0})};
  Tape t;
  const Var loss = depth_loss(t, t.constant(Tensor({1, 2}, {0.5, 0.5})), gt);
  EXPECT_NEAR(t.value(loss).item(), 1.3863, 5e-5);
  EXPECT_NEAR(t.value(loss).item(), 2.0 * std::log(2.0), 1e-12);
}

TEST(DepthLoss, PerfectPredictionNearZero) {
  DepthGroundTruth gt{Tensor({2, 4}, {0, 1, 0, 0, 0, 0, 0, 1}), Tensor({2}, {1.0, 1.0})};
  Tape t;
  const Var loss = depth_loss(t, t.constant(gt.onehot), gt);
  EXPECT_LE(t.value(loss).item(), 4 * 1e-6);
}

TEST(DepthLoss, AllInvalidIsZero) {
  DepthGroundTruth gt{Tensor({3, 4}), Tensor({3})};
  Tape t;
  EXPECT_EQ(t.value(depth_loss(t, t.constant(Tensor({3, 4}, 0.25)), gt)).item(), 0.0);
}

TEST(DepthLoss, GradientMatchesFiniteDifferences) {
  DepthGroundTruth gt{Tensor({2, 3}, {0, 1, 0, 1, 0, 0}), Tensor({2}, {1.0, 1.0})};
  const double err = finite_diff_check(
      [&](Tape& t, Var logits) { return depth_loss(t, ad::softmax(t, logits, 1), gt); },
      Tensor({2, 3}, {0.3, -0.2, 0.9, -1.1, 0.4, 0.0}));
  EXPECT_LT(err, 1e-4);
}
