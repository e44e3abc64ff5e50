#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bevkit/geometry.hpp"
#include "bevkit/nn.hpp"
#include "bevkit/scene.hpp"
#include "bevkit/tape.hpp"

namespace bevkit {

struct CameraBranchConfig {
  std::size_t image_channels = kDefaultClassCount + 2;
  std::size_t stride = 2;            // s: image -> LR feature
  std::size_t lr_channels = 16;      // C_f
  std::size_t hr_channels = 8;       // C_hr
  std::size_t context_channels = 16; // C_t
  std::size_t camera_embed = 16;
  std::size_t depth_hidden = 32;
  std::size_t camera_bev_channels = 32;  // C_c
  DepthBins bins;
  bool point_stream = true;  // registers camera.upsample
};

// Registers camera.encoder, camera.upsample, depth.*, and camera.fuser.
void add_camera_params(ParamStore& store, Rng& rng, const CameraBranchConfig& cfg);

// Two bias-free 3x3 convolutions (stride s, then 1) with ReLU:
// [H, W, C] -> [H/s, W/s, C_f]. Throws a dimension error if H or W is not
// divisible by s.
Var camera_encode(Tape& t, const BoundParams& p, Var image, std::size_t stride);

// Non-overlapping s x s transposed convolution: [h, w, C_f] -> [h*s, w*s, C_hr].
Var upsample_hr(Tape& t, const BoundParams& p, Var lr, std::size_t stride);

inline constexpr std::size_t kDescriptorBase = 10;

// Per-pixel camera descriptor [h*w, 10 + 2D]: normalized intrinsics, the
// world ray through the LR pixel center and the camera center, then two
// flat-ground depth cues over the bins: the fraction of each bin covered by
// the ground depths the pixel spans, and a Gaussian bump at the nearest of
// them. Both are zero where the pixel does not see the ground.
Tensor camera_descriptor(const CameraParams& cam, std::size_t h, std::size_t w,
                         std::size_t stride, const DepthBins& bins);

struct DepthNetOutput {
  Var context;  // F_t [h*w, C_t]
  Var depth;    // D_p [h*w, D], softmax over D
};

// Context and depth logits from [F, relu(embed(descriptor))] through one
// hidden layer; a bias-free linear path from the descriptor adds to the depth
// logits.
DepthNetOutput depth_net(Tape& t, const BoundParams& p, Var lr, const CameraParams& cam,
                         std::size_t stride, const DepthBins& bins);

struct DepthGroundTruth {
  Tensor onehot;  // [h*w, D]
  Tensor mask;    // [h*w]
  std::size_t valid() const;
};

// Nearest LiDAR return per feature pixel (floor(u/s), floor(v/s)), one-hot
// at its depth bin; pixels with no return or an out-of-range depth are
// masked out.
DepthGroundTruth depth_ground_truth(const PointCloud& pc, const CameraParams& cam,
                                    const DepthBins& bins, std::size_t stride);

struct DepthTerm {
  Var probs;
  const DepthGroundTruth* truth;
};

// Bin-wise binary cross entropy summed over D, averaged over valid pixels of
// all cameras; probabilities clamped to [1e-7, 1 - 1e-7].
Var depth_loss(Tape& t, std::span<const DepthTerm> terms);
Var depth_loss(Tape& t, Var probs, const DepthGroundTruth& truth);

// (pixel, bin) -> BEV cell routing for one camera, sorted by cell so the
// scatter walks each cell's run contiguously.
struct FrustumIndex {
  struct Entry {
    std::uint32_t cell;
    std::uint32_t pixel;
    std::uint32_t bin;
  };
  std::vector<Entry> entries;
  std::size_t pixels = 0;
  std::size_t bins = 0;
};

// Feature pixel (i, j) is the image point ((i + 0.5) s, (j + 0.5) s); each
// bin is represented by its center depth.
FrustumIndex build_frustum(const CameraParams& cam, const DepthBins& bins,
                           const BEVConfig& bev, std::size_t stride);

// Sum over entries of F_t[pixel] * D_p[pixel, bin] into cell rows:
// [n*n, C_t].
Var ray_scatter(Tape& t, Var context, Var depth, const FrustumIndex& index,
                std::size_t cells);

// Ray BEV over all cameras: [n, n, C_t].
Var ray_stream(Tape& t, std::span<const Var> contexts, std::span<const Var> depths,
               std::span<const FrustumIndex> index, const BEVConfig& bev);

// Per-cell 1 / (number of camera rays whose frustum reaches the cell), 0 for
// untouched cells. Multiplying the ray BEV by it turns the sum pool into a
// mean over rays.
std::vector<double> ray_cell_weights(std::span<const FrustumIndex> index, std::size_t cells);

// Row r of x [rows, C] (or [X, Y, C]) scaled by weight[r].
Var scale_rows(Tape& t, Var x, const std::vector<double>& weight);

// LiDAR points bucketed by BEV cell.
struct BinPartition {
  std::vector<std::vector<std::uint32_t>> bins;  // per flat cell
  std::vector<std::int64_t> cell_of_point;       // -1 when outside the BEV
};

BinPartition partition_points(const PointCloud& pc, const BEVConfig& bev);

// Weighted gather plan from stacked HR features (cameras concatenated
// row-wise, H*W rows each) into BEV cells.
struct PointStreamIndex {
  std::vector<std::int64_t> source_row;
  std::vector<std::int64_t> target_cell;
  std::vector<double> weight;
  // Cell each point writes, or -1 when the point is outside the BEV or not
  // visible in any camera.
  std::vector<std::int64_t> point_cell;
  // Number of (point, camera) pixel reads per point.
  std::vector<std::uint32_t> reads;
};

// Per point: nearest-pixel HR feature averaged over the cameras seeing it;
// per bin: mean over its visible points.
PointStreamIndex build_point_stream(const PointCloud& pc, const std::vector<CameraParams>& cams,
                                    const BEVConfig& bev);

// Point BEV: [n, n, C_hr]. hr[i] must be [H_i, W_i, C_hr] for camera i.
Var point_stream(Tape& t, std::span<const Var> hr, const PointStreamIndex& index,
                 const BEVConfig& bev);

// Channel concat then two bias-free 3x3 convolutions (ReLU between):
// [n, n, C_t + C_hr] -> [n, n, C_c].
Var fuse_camera_bev(Tape& t, const BoundParams& p, Var ray_bev, Var point_bev);

// Test hook: corrupts ray_scatter routing so the property suite can prove it
// notices.
void set_ray_scatter_fault(bool enabled);
bool ray_scatter_fault();

}  // namespace bevkit
