#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "bevkit/geometry.hpp"
#include "bevkit/tensor.hpp"

namespace bevkit {

inline constexpr std::size_t kDefaultClassCount = 10;

// Yawed cuboid standing on the ground plane. size = (length along heading,
// width, height).
struct ObjectBox {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;
  Vec2 velocity = Vec2::Zero();
  std::size_t class_id = 0;

  // Footprint corners in world x/y, counter-clockwise.
  std::array<Vec2, 4> footprint() const;
};

struct Scene {
  std::vector<ObjectBox> boxes;
  std::uint64_t seed = 0;
  std::size_t class_count = kDefaultClassCount;
};

struct PointCloud {
  // (x, y, z, intensity, dt) per return.
  std::vector<std::array<double, 5>> points;
  std::size_t size() const { return points.size(); }
};

// Minimum clearance between a generated box center and the sensor mast at
// the origin, so no sensor sits inside an object.
inline constexpr double kSensorClearance = 3.0;

// Rejection-samples `num_boxes` boxes with pairwise disjoint footprints fully
// inside the BEV range. Throws a placement error after 10 * num_boxes failed
// attempts.
Scene generate_scene(std::size_t num_boxes, const BEVConfig& bev,
                     std::size_t class_count, std::uint64_t seed);

// Separating-axis test on the BEV footprints (touching counts as overlap).
bool footprints_overlap(const ObjectBox& a, const ObjectBox& b);

struct RayHit {
  double t = 0.0;
  // Index into Scene::boxes, or -1 for the ground plane.
  int box = -1;
  Vec3 normal = Vec3::UnitZ();
};

// First intersection with any box surface or the z = 0 ground plane for the
// ray origin + t * dir, t > 0. `dir` need not be unit length; t is in units
// of |dir|.
std::optional<RayHit> cast_ray(const Scene& scene, const Vec3& origin, const Vec3& dir);

// Slab test against one box; entry distance and outward face normal.
std::optional<RayHit> intersect_box(const ObjectBox& box, const Vec3& origin, const Vec3& dir);

struct LidarConfig {
  Vec3 origin{0.0, 0.0, 1.8};
  std::size_t azimuths = 256;
  // Elevation angles in radians, negative looking down.
  std::vector<double> elevations;
};

LidarConfig default_lidar();

// One return per ray at the first hit; rays hitting nothing produce none.
// Points are ordered elevation-major, then by azimuth.
PointCloud lidar_scan(const Scene& scene, const Vec3& sensor_origin,
                      std::size_t azimuth_count, const std::vector<double>& elevations);

struct CameraImage {
  Tensor features;  // [H, W, C]
  Tensor depth;     // [H, W]; +inf where the ray hits nothing
};

// Pixel (col, row) samples the ray through (col + 0.5, row + 0.5); depth is
// the camera-frame z of the first hit.
CameraImage render_camera(const Scene& scene, const CameraParams& cam, std::size_t channels);

// Camera-frame depth of the first hit along the ray through the sub-pixel
// position (u, v), +inf when nothing is hit.
double camera_depth_at(const Scene& scene, const CameraParams& cam, double u, double v);

// Feature vector for a hit (class-coded one-hot, normal-dependent shade and
// a constant "surface" channel); all zeros for misses.
std::vector<double> hit_feature(const Scene& scene, const std::optional<RayHit>& hit,
                                std::size_t channels);

struct SensorRig {
  std::vector<CameraParams> cameras;
  LidarConfig lidar;
  std::size_t image_channels = kDefaultClassCount + 2;
};

// Square cameras (default 64x64, 70 degree field of view) spaced 60 degrees
// apart starting at the front, and a 256 x 16 LiDAR. Two cameras cover the
// front and front-left; six give a surround view.
SensorRig default_rig(std::size_t class_count = kDefaultClassCount, std::size_t image_size = 64,
                      std::size_t camera_count = 2);

struct SensorFrame {
  PointCloud cloud;
  std::vector<CameraImage> images;
};

SensorFrame simulate(const Scene& scene, const SensorRig& rig);

}  // namespace bevkit
