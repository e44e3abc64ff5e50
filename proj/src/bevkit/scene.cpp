#include "bevkit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bevkit/error.hpp"
#include "bevkit/parallel.hpp"
#include "bevkit/rng.hpp"

namespace bevkit {

namespace {

constexpr double kPi = std::numbers::pi;

// Projection interval of a convex polygon onto an axis.
std::pair<double, double> project_onto(const std::array<Vec2, 4>& poly, const Vec2& axis) {
  double lo = poly[0].dot(axis), hi = lo;
  for (const auto& p : poly) {
    lo = std::min(lo, p.dot(axis));
    hi = std::max(hi, p.dot(axis));
  }
  return {lo, hi};
}

}  // namespace

std::array<Vec2, 4> ObjectBox::footprint() const {
  const Vec2 fwd(std::cos(yaw), std::sin(yaw));
  const Vec2 left(-std::sin(yaw), std::cos(yaw));
  const Vec2 c = center.head<2>();
  const double hl = 0.5 * size.x(), hw = 0.5 * size.y();
  return {c + hl * fwd - hw * left, c + hl * fwd + hw * left,
          c - hl * fwd + hw * left, c - hl * fwd - hw * left};
}

bool footprints_overlap(const ObjectBox& a, const ObjectBox& b) {
  const auto pa = a.footprint();
  const auto pb = b.footprint();
  for (const auto* poly : {&pa, &pb}) {
    for (std::size_t i = 0; i < 4; ++i) {
      const Vec2 edge = (*poly)[(i + 1) % 4] - (*poly)[i];
      const Vec2 axis(-edge.y(), edge.x());
      const auto [alo, ahi] = project_onto(pa, axis);
      const auto [blo, bhi] = project_onto(pb, axis);
      if (ahi < blo || bhi < alo) return false;
    }
  }
  return true;
}

Scene generate_scene(std::size_t num_boxes, const BEVConfig& bev,
                     std::size_t class_count, std::uint64_t seed) {
  bev.validate();
  require(class_count >= 1, ErrorKind::kDomain, "class_count must be at least 1");
  Scene scene;
  scene.seed = seed;
  scene.class_count = class_count;
  Rng rng(seed);
  const std::size_t budget = 10 * num_boxes;
  std::size_t attempts = 0;
  while (scene.boxes.size() < num_boxes) {
    if (attempts++ >= budget) {
      fail(ErrorKind::kPlacement, "could only place " + std::to_string(scene.boxes.size()) +
                                      " of " + std::to_string(num_boxes) + " boxes in " +
                                      std::to_string(budget) + " attempts");
    }
    ObjectBox box;
    box.class_id = rng.index(class_count);
    box.size = Vec3(rng.uniform(1.2, 3.0), rng.uniform(0.8, 2.0), rng.uniform(0.8, 2.0));
    box.yaw = rng.uniform(-kPi, kPi);
    box.velocity = Vec2(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
    box.center = Vec3(rng.uniform(bev.x_min, bev.x_max), rng.uniform(bev.y_min, bev.y_max),
                      0.5 * box.size.z());
    if (box.center.head<2>().norm() < kSensorClearance) continue;
    bool inside = true;
    for (const auto& c : box.footprint()) {
      inside = inside && c.x() >= bev.x_min && c.x() < bev.x_max && c.y() >= bev.y_min &&
               c.y() < bev.y_max;
    }
    if (!inside) continue;
    const bool clash = std::any_of(scene.boxes.begin(), scene.boxes.end(),
                                   [&](const ObjectBox& o) { return footprints_overlap(box, o); });
    if (clash) continue;
    scene.boxes.push_back(box);
  }
  return scene;
}

std::optional<RayHit> intersect_box(const ObjectBox& box, const Vec3& origin, const Vec3& dir) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  // World -> box frame (rotate by -yaw about z).
  const Vec3 rel = origin - box.center;
  const Vec3 o(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
  const Vec3 d(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
  const Vec3 half = 0.5 * box.size;
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis_near = -1;
  double sign_near = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < -half[a] || o[a] > half[a]) return std::nullopt;
      continue;
    }
    double t1 = (-half[a] - o[a]) / d[a];
    double t2 = (half[a] - o[a]) / d[a];
    double sign = -1.0;
    if (t1 > t2) {
      std::swap(t1, t2);
      sign = 1.0;
    }
    if (t1 > t_near) {
      t_near = t1;
      axis_near = a;
      sign_near = sign;
    }
    t_far = std::min(t_far, t2);
  }
  // Rays starting inside a box are not reported.
  if (axis_near < 0 || t_near > t_far || t_near <= 1e-12) return std::nullopt;
  Vec3 n_box = Vec3::Zero();
  n_box[axis_near] = sign_near;
  RayHit hit;
  hit.t = t_near;
  hit.normal = Vec3(c * n_box.x() - s * n_box.y(), s * n_box.x() + c * n_box.y(), n_box.z());
  return hit;
}

std::optional<RayHit> cast_ray(const Scene& scene, const Vec3& origin, const Vec3& dir) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    auto h = intersect_box(scene.boxes[i], origin, dir);
    if (h && (!best || h->t < best->t)) {
      h->box = static_cast<int>(i);
      best = h;
    }
  }
  if (dir.z() < -1e-12 && origin.z() > 0.0) {
    const double t = -origin.z() / dir.z();
    if (!best || t < best->t) {
      RayHit g;
      g.t = t;
      g.box = -1;
      g.normal = Vec3::UnitZ();
      best = g;
    }
  }
  return best;
}

LidarConfig default_lidar() {
  LidarConfig cfg;
  const std::size_t rows = 16;
  const double lo = -30.0 * kPi / 180.0, hi = 2.0 * kPi / 180.0;
  for (std::size_t i = 0; i < rows; ++i) {
    cfg.elevations.push_back(lo + (hi - lo) * static_cast<double>(i) / (rows - 1));
  }
  return cfg;
}

PointCloud lidar_scan(const Scene& scene, const Vec3& sensor_origin,
                      std::size_t azimuth_count, const std::vector<double>& elevations) {
  require(sensor_origin.z() > 0.0, ErrorKind::kDomain, "LiDAR origin must be above ground");
  const std::size_t rays = azimuth_count * elevations.size();
  std::vector<std::optional<std::array<double, 5>>> slots(rays);
  parallel_for(elevations.size(), [&](std::size_t e) {
    const double el = elevations[e];
    for (std::size_t a = 0; a < azimuth_count; ++a) {
      const double az = 2.0 * kPi * static_cast<double>(a) / static_cast<double>(azimuth_count);
      const Vec3 dir(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const auto hit = cast_ray(scene, sensor_origin, dir);
      if (!hit) continue;
      const Vec3 p = sensor_origin + hit->t * dir;
      slots[e * azimuth_count + a] = std::array<double, 5>{p.x(), p.y(), p.z(), 1.0, 0.0};
    }
  });
  PointCloud pc;
  for (const auto& s : slots) {
    if (s) pc.points.push_back(*s);
  }
  return pc;
}

std::vector<double> hit_feature(const Scene& scene, const std::optional<RayHit>& hit,
                                std::size_t channels) {
  std::vector<double> f(channels, 0.0);
  if (!hit || channels == 0) return f;
  const std::size_t n = scene.class_count;
  const bool on_box = hit->box >= 0;
  const double shade = 0.5 + 0.5 * std::abs(hit->normal.z());
  if (channels == 1) {
    f[0] = on_box ? shade : 0.5;
    return f;
  }
  if (channels >= n + 2) {
    if (on_box) {
      f[scene.boxes[static_cast<std::size_t>(hit->box)].class_id] = 1.0;
      f[n] = shade;
    }
    f[n + 1] = 1.0;
    return f;
  }
  // Narrow images fold classes into the first channels - 1 slots.
  if (on_box) {
    f[scene.boxes[static_cast<std::size_t>(hit->box)].class_id % (channels - 1)] = shade;
  }
  f[channels - 1] = 1.0;
  return f;
}

double camera_depth_at(const Scene& scene, const CameraParams& cam, double u, double v) {
  // Unnormalized direction with unit camera-frame z, so t is the depth.
  const Vec3 dir = cam.rotation.transpose() * Vec3((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  const auto hit = cast_ray(scene, cam.center_world(), dir);
  return hit ? hit->t : std::numeric_limits<double>::infinity();
}

CameraImage render_camera(const Scene& scene, const CameraParams& cam, std::size_t channels) {
  require(channels >= 1, ErrorKind::kDomain, "render_camera needs at least one channel");
  cam.validate();
  const std::size_t h = cam.height, w = cam.width;
  CameraImage img{Tensor({h, w, channels}), Tensor({h, w})};
  const Vec3 origin = cam.center_world();
  const Mat3 rt = cam.rotation.transpose();
  parallel_for(h, [&](std::size_t row) {
    for (std::size_t col = 0; col < w; ++col) {
      const double u = static_cast<double>(col) + 0.5;
      const double v = static_cast<double>(row) + 0.5;
      const Vec3 dir = rt * Vec3((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      const auto hit = cast_ray(scene, origin, dir);
      img.depth[row * w + col] = hit ? hit->t : std::numeric_limits<double>::infinity();
      const auto f = hit_feature(scene, hit, channels);
      std::copy(f.begin(), f.end(), img.features.ptr() + (row * w + col) * channels);
    }
  });
  return img;
}

SensorRig default_rig(std::size_t class_count, std::size_t size, std::size_t camera_count) {
  require(size >= 1, ErrorKind::kDomain, "camera image size must be positive");
  require(camera_count >= 1 && camera_count <= 6, ErrorKind::kDomain,
          "camera count must be between 1 and 6");
  SensorRig rig;
  const double fov = 70.0 * kPi / 180.0;
  const double f = 0.5 * static_cast<double>(size) / std::tan(0.5 * fov);
  const double pitch = 12.0 * kPi / 180.0;
  for (std::size_t i = 0; i < camera_count; ++i) {
    const double yaw = 60.0 * static_cast<double>(i) * kPi / 180.0;
    rig.cameras.push_back(make_camera(f, f, 0.5 * size, 0.5 * size, size, size,
                                      Vec3(0.0, 0.0, 1.5), yaw, pitch));
  }
  rig.lidar = default_lidar();
  rig.image_channels = class_count + 2;
  return rig;
}

SensorFrame simulate(const Scene& scene, const SensorRig& rig) {
  SensorFrame frame;
  frame.cloud = lidar_scan(scene, rig.lidar.origin, rig.lidar.azimuths, rig.lidar.elevations);
  for (const auto& cam : rig.cameras) {
    frame.images.push_back(render_camera(scene, cam, rig.image_channels));
  }
  return frame;
}

}  // namespace bevkit
