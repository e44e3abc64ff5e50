#include "bevkit/lidar_pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "bevkit/error.hpp"

namespace bevkit {

std::array<std::size_t, 3> VoxelConfig::counts() const {
  std::array<std::size_t, 3> out{};
  std::size_t total = 1;
  for (int a = 0; a < 3; ++a) {
    require(voxel_size[a] > 0.0, ErrorKind::kDomain, "voxel size must be positive");
    const double extent = range_max[a] - range_min[a];
    require(extent > 0.0, ErrorKind::kDomain, "voxel range must be non-empty");
    const double n = std::round(extent / voxel_size[a]);
    require(n >= 1.0 && std::abs(n * voxel_size[a] - extent) <= 1e-6 * extent,
            ErrorKind::kDomain, "voxel range is not a whole number of voxels");
    out[a] = static_cast<std::size_t>(n);
    total *= out[a];
  }
  require(total <= memory_cap, ErrorKind::kDomain,
          "voxel grid of " + std::to_string(total) + " cells exceeds the memory cap");
  return out;
}

VoxelConfig VoxelConfig::full_scale() {
  VoxelConfig cfg;
  cfg.voxel_size = Vec3(0.075, 0.075, 0.2);
  cfg.range_min = Vec3(-54.0, -54.0, -5.0);
  cfg.range_max = Vec3(54.0, 54.0, 3.0);
  return cfg;
}

VoxelConfig VoxelConfig::for_bev(const BEVConfig& bev, std::size_t z_slices, double z_min,
                                 double z_max) {
  VoxelConfig cfg;
  cfg.voxel_size = Vec3(bev.cell_size_x(), bev.cell_size_y(),
                        (z_max - z_min) / static_cast<double>(z_slices));
  cfg.range_min = Vec3(bev.x_min, bev.y_min, z_min);
  cfg.range_max = Vec3(bev.x_max, bev.y_max, z_max);
  return cfg;
}

std::size_t VoxelGrid::total_points() const {
  std::size_t n = 0;
  for (const auto& v : voxels) n += v.count;
  return n;
}

VoxelGrid voxelize(const PointCloud& pc, const VoxelConfig& cfg) {
  VoxelGrid vg;
  vg.config = cfg;
  vg.dims = cfg.counts();
  struct Entry {
    std::size_t key;
    std::array<std::size_t, 3> idx;
    std::array<double, 5> f;
  };
  std::vector<Entry> entries;
  entries.reserve(pc.size());
  for (const auto& p : pc.points) {
    std::array<std::size_t, 3> idx{};
    bool inside = true;
    for (int a = 0; a < 3 && inside; ++a) {
      const auto c = uniform_cell(p[a], cfg.range_min[a], cfg.range_max[a], vg.dims[a]);
      inside = c.has_value();
      if (c) idx[a] = *c;
    }
    if (!inside) continue;
    const std::size_t key = (idx[0] * vg.dims[1] + idx[1]) * vg.dims[2] + idx[2];
    entries.push_back({key, idx, p});
  }
  // Sorting by (voxel, values) fixes the summation order.
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.key != b.key) return a.key < b.key;
    return a.f < b.f;
  });
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    Voxel v;
    v.ix = entries[i].idx[0];
    v.iy = entries[i].idx[1];
    v.iz = entries[i].idx[2];
    std::array<double, 5> sum{};
    while (j < entries.size() && entries[j].key == entries[i].key) {
      for (int c = 0; c < 5; ++c) sum[c] += entries[j].f[c];
      ++j;
    }
    v.count = j - i;
    for (int c = 0; c < 5; ++c) v.mean[c] = sum[c] / static_cast<double>(v.count);
    vg.voxels.push_back(v);
    i = j;
  }
  return vg;
}

void add_lidar_params(ParamStore& store, Rng& rng, const LidarEncoderConfig& cfg,
                      std::size_t z_slices) {
  store.add_linear(rng, "lidar.vfe.l1", 5, cfg.hidden, "lidar");
  store.add_linear(rng, "lidar.vfe.l2", cfg.hidden, cfg.middle_channels, "lidar");
  store.add_linear(rng, "lidar.compress", z_slices * cfg.middle_channels, cfg.bev_channels,
                   "lidar", /*bias=*/false);
}

Var encode_voxels(Tape& t, const BoundParams& p, const VoxelGrid& vg) {
  const auto [nx, ny, nz] = vg.dims;
  const std::size_t cm = t.shape(p["lidar.vfe.l2.w"])[0];
  const std::size_t nvox = vg.voxels.size();
  if (nvox == 0) return t.constant(Tensor({nx, ny, nz, cm}));
  Tensor feats({nvox, 5});
  std::vector<std::int64_t> target(nvox);
  for (std::size_t i = 0; i < nvox; ++i) {
    std::copy(vg.voxels[i].mean.begin(), vg.voxels[i].mean.end(), feats.ptr() + i * 5);
    // Coordinates mapped to [-1, 1] over the voxel range.
    for (int a = 0; a < 3; ++a) {
      const double lo = vg.config.range_min[a], hi = vg.config.range_max[a];
      feats[i * 5 + a] = 2.0 * (feats[i * 5 + a] - lo) / (hi - lo) - 1.0;
    }
    target[i] = static_cast<std::int64_t>(vg.linear(vg.voxels[i]));
  }
  Var per_voxel = nn::mlp2(t, p, "lidar.vfe", t.constant(std::move(feats)));
  Var dense = ad::scatter_add(t, per_voxel, std::move(target), nx * ny * nz);
  return ad::reshape(t, dense, {nx, ny, nz, cm});
}

Tensor encode_voxels(const VoxelGrid& vg, const ParamStore& params) {
  Tape t(false);
  BoundParams p(t, params, false);
  return t.value(encode_voxels(t, p, vg));
}

Var compress_z(Tape& t, const BoundParams& p, Var middle) {
  const Shape& s = t.shape(middle);
  require(s.size() == 4, ErrorKind::kDimension, "compress_z expects [X, Y, Z, C]");
  Var flat = ad::reshape(t, middle, {s[0] * s[1], s[2] * s[3]});
  Var bev = ad::linear(t, flat, p["lidar.compress.w"]);
  return ad::reshape(t, bev, {s[0], s[1], t.shape(bev).back()});
}

Tensor compress_z(const Tensor& middle, const ParamStore& params) {
  Tape t(false);
  BoundParams p(t, params, false);
  return t.value(compress_z(t, p, t.constant(middle)));
}

Var lidar_bev(Tape& t, const BoundParams& p, const VoxelGrid& vg) {
  return compress_z(t, p, encode_voxels(t, p, vg));
}

}  // namespace bevkit
