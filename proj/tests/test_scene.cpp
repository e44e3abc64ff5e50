#include <gtest/gtest.h>

#include <cmath>

#include "bevkit/error.hpp"
#include "bevkit/scene.hpp"

using namespace bevkit;

namespace {

CameraParams ground_camera() {
  return make_camera(20, 20, 16, 16, 32, 32, Vec3(0, 0, 2), 0.0, 0.6);
}

}  // namespace

TEST(GenerateScene, ZeroBoxesIsEmpty) {
  EXPECT_TRUE(generate_scene(0, BEVConfig{}, 3, 1).boxes.empty());
}

TEST(GenerateScene, SameSeedSameScene) {
  const Scene a = generate_scene(6, BEVConfig{}, 3, 42);
  const Scene b = generate_scene(6, BEVConfig{}, 3, 42);
  ASSERT_EQ(a.boxes.size(), b.boxes.size());
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    EXPECT_EQ(a.boxes[i].center, b.boxes[i].center);
    EXPECT_EQ(a.boxes[i].size, b.boxes[i].size);
    EXPECT_EQ(a.boxes[i].yaw, b.boxes[i].yaw);
    EXPECT_EQ(a.boxes[i].class_id, b.boxes[i].class_id);
  }
}

TEST(GenerateScene, FiveBoxesSeedSevenDoNotOverlap) {
  const Scene s = generate_scene(5, BEVConfig{}, 3, 7);
  ASSERT_EQ(s.boxes.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = i + 1; j < 5; ++j) EXPECT_FALSE(footprints_overlap(s.boxes[i], s.boxes[j]));
  }
}

TEST(GenerateScene, OvercrowdedIsPlacementError) {
  BEVConfig tiny;
  tiny.x_min = tiny.y_min = -1;
  tiny.x_max = tiny.y_max = 1;
  tiny.n = 4;
  try {
    generate_scene(50, tiny, 3, 1);
    FAIL() << "expected a placement error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPlacement);
  }
}

TEST(FootprintsOverlap, SeparatingAxis) {
  ObjectBox a, b;
  a.size = b.size = Vec3(2, 1, 1);
  b.center = Vec3(1.5, 0, 0.5);
  EXPECT_TRUE(footprints_overlap(a, b));
  b.center = Vec3(0, 1.2, 0.5);
  EXPECT_FALSE(footprints_overlap(a, b));
  b.yaw = M_PI / 2;
  EXPECT_TRUE(footprints_overlap(a, b));
}

TEST(LidarScan, EmptySceneHitsGroundPlane) {
  const PointCloud pc = lidar_scan(Scene{}, Vec3(0, 0, 1.8), 64, {-0.3, -0.2, -0.1});
  ASSERT_EQ(pc.points.size(), 3u * 64u);
  for (const auto& p : pc.points) EXPECT_NEAR(p[2], 0.0, 1e-12);
}

TEST(LidarScan, HorizontalRayInEmptySceneHasNoReturn) {
  EXPECT_TRUE(lidar_scan(Scene{}, Vec3(0, 0, 1.8), 32, {0.0}).points.empty());
}

TEST(LidarScan, FirstHitOnNearerBox) {
  Scene s;
  ObjectBox near, far;
  near.center = Vec3(3, 0, 1);
  near.size = Vec3(1, 1, 2);
  far.center = Vec3(6, 0, 1);
  far.size = Vec3(1, 1, 2);
  s.boxes = {near, far};
  // One azimuth pointing along +x, level with the box centres.
  const PointCloud pc = lidar_scan(s, Vec3(0, 0, 1), 1, {0.0});
  ASSERT_EQ(pc.points.size(), 1u);
  EXPECT_NEAR(pc.points[0][0], 2.5, 1e-12);
}

TEST(RenderCamera, GroundPlaneDepthIsClosedForm) {
  const CameraParams cam = ground_camera();
  const CameraImage img = render_camera(Scene{}, cam, 5);
  for (std::size_t r = 0; r < cam.height; ++r) {
    for (std::size_t c = 0; c < cam.width; ++c) {
      const double d = img.depth[r * cam.width + c];
      // Ray-plane intersection with z = 0, reported as camera-frame z.
      const Vec3 dir = pixel_ray(c + 0.5, r + 0.5, cam);
      if (dir.z() >= 0) {
        EXPECT_TRUE(std::isinf(d));
        continue;
      }
      const Vec3 centre = -cam.rotation.transpose() * cam.translation;
      const Vec3 hit = centre + dir * (-centre.z() / dir.z());
      const double z_cam = (cam.rotation * hit + cam.translation).z();
      EXPECT_NEAR(d, z_cam, 1e-9);
    }
  }
}

TEST(RenderCamera, MissIsInfiniteWithZeroFeature) {
  const CameraParams cam = make_camera(20, 20, 16, 16, 32, 32, Vec3(0, 0, 2), 0.0, -0.6);
  const CameraImage img = render_camera(Scene{}, cam, 5);
  EXPECT_TRUE(std::isinf(img.depth[0]));
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(img.features[c], 0.0);
}

TEST(RenderCamera, BoxFillingViewBoundsDepth) {
  Scene s;
  ObjectBox wall;
  wall.center = Vec3(3, 0, 2);
  wall.size = Vec3(1, 20, 6);
  s.boxes = {wall};
  const CameraParams cam = make_camera(10, 10, 8, 8, 16, 16, Vec3(0, 0, 2), 0.0, 0.0);
  const CameraImage img = render_camera(s, cam, 5);
  for (double d : img.depth.data()) EXPECT_LE(d, 3.5 + 1e-12);
}

TEST(Simulate, Deterministic) {
  const Scene s = generate_scene(4, BEVConfig{}, 3, 9);
  const SensorRig rig = default_rig(3, 32, 2);
  const SensorFrame a = simulate(s, rig), b = simulate(s, rig);
  EXPECT_EQ(a.cloud.points, b.cloud.points);
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].features, b.images[i].features);
  }
}
