#include "bevkit/geometry.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "bevkit/error.hpp"

namespace bevkit {

void CameraParams::validate() const {
  require(fx > 0.0 && fy > 0.0, ErrorKind::kDomain, "camera focal lengths must be positive");
  require(width > 0 && height > 0, ErrorKind::kDomain, "camera image must be non-empty");
  const double orth = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  require(orth <= 1e-9, ErrorKind::kDomain, "camera rotation is not orthonormal");
  require(std::abs(rotation.determinant() - 1.0) <= 1e-9, ErrorKind::kDomain,
          "camera rotation must have determinant +1");
}

CameraParams make_camera(double fx, double fy, double cx, double cy,
                         std::size_t width, std::size_t height,
                         const Vec3& position, double yaw, double pitch) {
  // Camera axes expressed in the world frame.
  const Vec3 forward(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
                     -std::sin(pitch));
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down = forward.cross(right);
  CameraParams cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * position;
  cam.validate();
  return cam;
}

std::optional<Projection> project(const Vec3& point, const CameraParams& cam) {
  const Vec3 pc = cam.rotation * point + cam.translation;
  if (pc.z() <= 1e-6) return std::nullopt;
  Projection p;
  p.depth = pc.z();
  p.u = cam.fx * pc.x() / pc.z() + cam.cx;
  p.v = cam.fy * pc.y() / pc.z() + cam.cy;
  if (!(p.u >= 0.0 && p.u < static_cast<double>(cam.width) && p.v >= 0.0 &&
        p.v < static_cast<double>(cam.height))) {
    return std::nullopt;
  }
  return p;
}

Vec3 unproject(double u, double v, double depth, const CameraParams& cam) {
  require(depth > 0.0, ErrorKind::kDomain, "unproject: depth must be positive");
  const Vec3 pc((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
  return cam.rotation.transpose() * (pc - cam.translation);
}

Vec3 pixel_ray(double u, double v, const CameraParams& cam) {
  const Vec3 dc((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  return (cam.rotation.transpose() * dc).normalized();
}

void DepthBins::validate() const {
  require(d_min > 0.0 && d_max > d_min && count > 0, ErrorKind::kDomain,
          "depth bins need 0 < d_min < d_max and count > 0");
}

std::optional<std::size_t> uniform_cell(double x, double lo, double hi, std::size_t n) {
  if (!(x >= lo && x < hi)) return std::nullopt;
  const auto idx = static_cast<std::size_t>(std::floor((x - lo) * static_cast<double>(n) / (hi - lo)));
  // (x - lo) * n / (hi - lo) can round up to n just below hi.
  return idx < n ? idx : n - 1;
}

std::optional<std::size_t> depth_to_bin(double depth, const DepthBins& bins) {
  return uniform_cell(depth, bins.d_min, bins.d_max, bins.count);
}

void BEVConfig::validate() const {
  require(x_max > x_min && y_max > y_min && n >= 1, ErrorKind::kDomain,
          "BEV config needs x_max > x_min, y_max > y_min, n >= 1");
}

Vec2 BEVConfig::cell_center(std::size_t gx, std::size_t gy) const {
  return {x_min + (static_cast<double>(gx) + 0.5) * cell_size_x(),
          y_min + (static_cast<double>(gy) + 0.5) * cell_size_y()};
}

std::optional<BevCell> bev_index(double x, double y, const BEVConfig& cfg) {
  const auto gx = uniform_cell(x, cfg.x_min, cfg.x_max, cfg.n);
  const auto gy = uniform_cell(y, cfg.y_min, cfg.y_max, cfg.n);
  if (!gx || !gy) return std::nullopt;
  return BevCell{*gx, *gy};
}

double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

}  // namespace bevkit
