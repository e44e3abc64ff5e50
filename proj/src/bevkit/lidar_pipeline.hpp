#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bevkit/geometry.hpp"
#include "bevkit/nn.hpp"
#include "bevkit/scene.hpp"
#include "bevkit/tape.hpp"

namespace bevkit {

struct VoxelConfig {
  Vec3 voxel_size{0.5, 0.5, 0.5};
  Vec3 range_min{-8.0, -8.0, -1.0};
  Vec3 range_max{8.0, 8.0, 3.0};
  std::size_t memory_cap = std::size_t{1} << 28;

  // Voxel counts (X, Y, Z); throws a domain error for non-positive sizes, an
  // empty range or a grid above memory_cap.
  std::array<std::size_t, 3> counts() const;
  void validate() const { (void)counts(); }

  static VoxelConfig full_scale();
  // Voxel columns matching a BEV grid, with `z_slices` slices over [z_min, z_max).
  static VoxelConfig for_bev(const BEVConfig& bev, std::size_t z_slices, double z_min,
                             double z_max);
};

struct Voxel {
  std::size_t ix = 0, iy = 0, iz = 0;
  std::array<double, 5> mean{};
  std::size_t count = 0;
};

struct VoxelGrid {
  VoxelConfig config;
  std::array<std::size_t, 3> dims{};
  // Occupied voxels in ascending linear index (ix * Y + iy) * Z + iz.
  std::vector<Voxel> voxels;

  std::size_t linear(const Voxel& v) const { return (v.ix * dims[1] + v.iy) * dims[2] + v.iz; }
  std::size_t total_points() const;
};

// Drops out-of-range points; per-voxel mean of the member 5-vectors, summed
// in a canonical order so the result does not depend on input order.
VoxelGrid voxelize(const PointCloud& pc, const VoxelConfig& cfg);

struct LidarEncoderConfig {
  std::size_t hidden = 16;
  std::size_t middle_channels = 16;  // C_m
  std::size_t bev_channels = 32;     // C_l
};

// Registers "lidar.vfe.l1/l2" (5 -> hidden -> C_m) and the bias-free
// "lidar.compress" map (Z * C_m -> C_l).
void add_lidar_params(ParamStore& store, Rng& rng, const LidarEncoderConfig& cfg,
                      std::size_t z_slices);

// Dense middle feature M [X, Y, Z, C_m]; empty voxels stay zero. The
// encoder sees voxel-mean coordinates rescaled to [-1, 1] over the range.
Var encode_voxels(Tape& t, const BoundParams& p, const VoxelGrid& vg);
Tensor encode_voxels(const VoxelGrid& vg, const ParamStore& params);

// Z slices concatenated along channels, then projected: [X, Y, C_l].
Var compress_z(Tape& t, const BoundParams& p, Var middle);
Tensor compress_z(const Tensor& middle, const ParamStore& params);

// encode_voxels followed by compress_z.
Var lidar_bev(Tape& t, const BoundParams& p, const VoxelGrid& vg);

}  // namespace bevkit
