#include <gtest/gtest.h>

#include "bevkit/error.hpp"
#include "bevkit/geometry.hpp"
#include "bevkit/rng.hpp"

using namespace bevkit;

namespace {

CameraParams axis_camera(double f, double c) {
  CameraParams cam;
  cam.fx = cam.fy = f;
  cam.cx = cam.cy = c;
  cam.width = cam.height = 64;
  return cam;
}

}  // namespace

TEST(Project, OpticalAxis) {
  const auto p = project(Vec3(0, 0, 5), axis_camera(1, 0));
  ASSERT_TRUE(p);
  EXPECT_DOUBLE_EQ(p->u, 0.0);
  EXPECT_DOUBLE_EQ(p->v, 0.0);
  EXPECT_DOUBLE_EQ(p->depth, 5.0);
}

TEST(Project, ScaledOffset) {
  const auto p = project(Vec3(1, 1, 2), axis_camera(2, 10));
  ASSERT_TRUE(p);
  EXPECT_DOUBLE_EQ(p->u, 11.0);
  EXPECT_DOUBLE_EQ(p->v, 11.0);
  EXPECT_DOUBLE_EQ(p->depth, 2.0);
}

TEST(Project, BehindCameraIsOutOfView) {
  EXPECT_FALSE(project(Vec3(0, 0, -1), axis_camera(1, 0)));
}

TEST(Unproject, PrincipalPoint) {
  const Vec3 p = unproject(10, 10, 4, axis_camera(2, 10));
  EXPECT_EQ(p, Vec3(0, 0, 4));
}

TEST(Unproject, SimilarTriangles) {
  const Vec3 p = unproject(2, 0, 3, axis_camera(1, 0));
  EXPECT_DOUBLE_EQ(p.x(), 6.0);
  EXPECT_DOUBLE_EQ(p.y(), 0.0);
  EXPECT_DOUBLE_EQ(p.z(), 3.0);
}

TEST(Unproject, NonPositiveDepthIsDomainError) {
  try {
    unproject(1, 1, 0.0, axis_camera(1, 0));
    FAIL() << "expected a domain error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDomain);
  }
}

TEST(Unproject, RoundtripUnderPosedCameras) {
  Rng rng(3);
  const Vec3 world(3, 4, 7);
  int seen = 0;
  for (int i = 0; i < 200; ++i) {
    const Vec3 pos(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 2));
    const CameraParams cam = make_camera(rng.uniform(20, 60), rng.uniform(20, 60), 32, 32, 64, 64, pos,
                                         rng.uniform(-M_PI, M_PI), rng.uniform(-0.5, 0.5));
    const auto p = project(world, cam);
    if (!p) continue;
    ++seen;
    EXPECT_LT((unproject(p->u, p->v, p->depth, cam) - world).norm(), 1e-9);
  }
  EXPECT_GT(seen, 0);
}

TEST(DepthToBin, Examples) {
  DepthBins bins;
  bins.d_min = 1;
  bins.d_max = 5;
  bins.count = 4;
  EXPECT_EQ(depth_to_bin(2.5, bins), 1u);
  EXPECT_EQ(depth_to_bin(1.0, bins), 0u);
  EXPECT_EQ(depth_to_bin(5.0 - 1e-9, bins), 3u);
  EXPECT_FALSE(depth_to_bin(5.0, bins));
  EXPECT_FALSE(depth_to_bin(0.5, bins));
}

TEST(BevIndex, LargeGridCentre) {
  BEVConfig cfg;
  cfg.x_min = cfg.y_min = -54;
  cfg.x_max = cfg.y_max = 54;
  cfg.n = 180;
  const auto c = bev_index(0, 0, cfg);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->gx, 90u);
  EXPECT_EQ(c->gy, 90u);
  EXPECT_NEAR(cfg.cell_center(90, 90).x(), 0.3, 1e-12);
}

TEST(BevIndex, HalfOpenRange) {
  const BEVConfig cfg;
  const auto lo = bev_index(cfg.x_min, 0, cfg);
  ASSERT_TRUE(lo);
  EXPECT_EQ(lo->gx, 0u);
  EXPECT_FALSE(bev_index(cfg.x_max, 0, cfg));
  EXPECT_FALSE(bev_index(0, cfg.y_max, cfg));
}
