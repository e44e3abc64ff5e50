#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <optional>

namespace bevkit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pinhole camera. The pose maps world points into the camera frame
// (x right, y down, z forward): p_cam = rotation * p_world + translation.
struct CameraParams {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t width = 1;
  std::size_t height = 1;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  // Throws a domain error unless fx, fy > 0, the image is non-empty and the
  // rotation is orthonormal with det +1 (within 1e-9).
  void validate() const;
  Vec3 center_world() const { return -rotation.transpose() * translation; }
};

// Camera looking along world heading `yaw` (radians, about +z), tilted down
// by `pitch`, placed at `position`. World frame is x forward, y left, z up.
CameraParams make_camera(double fx, double fy, double cx, double cy,
                         std::size_t width, std::size_t height,
                         const Vec3& position, double yaw, double pitch);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

// Empty when the point is behind the camera (z <= 1e-6) or lands outside
// [0, width) x [0, height).
std::optional<Projection> project(const Vec3& point, const CameraParams& cam);

// World point at camera-frame depth `depth` along the ray through (u, v).
Vec3 unproject(double u, double v, double depth, const CameraParams& cam);

// Unit world-frame direction of the ray through (u, v).
Vec3 pixel_ray(double u, double v, const CameraParams& cam);

struct DepthBins {
  double d_min = 0.5;
  double d_max = 8.5;
  std::size_t count = 16;

  void validate() const;
  double width() const { return (d_max - d_min) / static_cast<double>(count); }
  double center(std::size_t bin) const {
    return d_min + (static_cast<double>(bin) + 0.5) * width();
  }
};

// Half-open bins: [d_min, d_max) splits into `count` equal cells.
std::optional<std::size_t> depth_to_bin(double depth, const DepthBins& bins);

struct BevCell {
  std::size_t gx = 0;
  std::size_t gy = 0;
  friend bool operator==(const BevCell&, const BevCell&) = default;
};

struct BEVConfig {
  double x_min = -8.0;
  double x_max = 8.0;
  double y_min = -8.0;
  double y_max = 8.0;
  std::size_t n = 32;

  void validate() const;
  std::size_t cells() const { return n * n; }
  double cell_size_x() const { return (x_max - x_min) / static_cast<double>(n); }
  double cell_size_y() const { return (y_max - y_min) / static_cast<double>(n); }
  Vec2 cell_center(std::size_t gx, std::size_t gy) const;
  // Row-major flat index used by every BEV tensor: gx * n + gy.
  std::size_t flat(const BevCell& c) const { return c.gx * n + c.gy; }
};

std::optional<BevCell> bev_index(double x, double y, const BEVConfig& cfg);

// Half-open uniform partition of [lo, hi) into n cells.
std::optional<std::size_t> uniform_cell(double x, double lo, double hi, std::size_t n);

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

}  // namespace bevkit
