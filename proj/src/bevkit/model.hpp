#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bevkit/lidar_pipeline.hpp"
#include "bevkit/losses.hpp"
#include "bevkit/predictor.hpp"
#include "bevkit/scene.hpp"
#include "bevkit/view_transform.hpp"

namespace bevkit {

enum class DualStream { kNone, kRay, kPoint, kBoth };

const char* to_string(DualStream d);
DualStream parse_dual_stream(const std::string& s);

// Which 2D-to-BEV paths are active. kNone is the baseline: the ray stream
// without depth supervision. kRay adds depth supervision, kPoint adds the
// point stream, kBoth adds both.
inline bool depth_supervised(DualStream d) { return d == DualStream::kRay || d == DualStream::kBoth; }
inline bool point_enabled(DualStream d) { return d == DualStream::kPoint || d == DualStream::kBoth; }

struct ModelConfig {
  std::size_t classes = kDefaultClassCount;
  BEVConfig bev;
  std::size_t z_slices = 4;
  double z_min = -1.0;
  double z_max = 3.0;
  LidarEncoderConfig lidar;
  CameraBranchConfig camera;
  PredictorConfig predictor;
  DualStream dual_stream = DualStream::kBoth;
  bool task_specific = true;
  // Auxiliary heads read detached task features when set.
  bool stop_aux_gradient = false;

  VoxelConfig voxel_config() const { return VoxelConfig::for_bev(bev, z_slices, z_min, z_max); }
  // Copies the shared sizes (classes, channel counts, toggles) into the
  // sub-configs.
  void sync();
};

// Registers every parameter the configuration uses.
ParamStore init_params(ModelConfig cfg, std::uint64_t seed);

// Geometry and targets that depend only on the scene, built once.
struct SceneInputs {
  std::vector<CameraParams> cameras;
  std::vector<Tensor> images;
  std::vector<FrustumIndex> frusta;
  std::vector<double> ray_weight;
  PointStreamIndex point_index;
  VoxelGrid voxels;
  std::vector<DepthGroundTruth> depth_truth;
  std::vector<ObjectBox> truths;
  Tensor heatmap_truth;
};

SceneInputs prepare_inputs(const Scene& scene, const SensorFrame& frame, const SensorRig& rig,
                           const ModelConfig& cfg);

struct ForwardOptions {
  // Replaces the predicted heatmap for candidate selection.
  const Tensor* oracle_heatmap = nullptr;
  bool depth_only = false;
};

struct ForwardResult {
  std::vector<Var> depth_probs;
  Var ray_bev{}, point_bev{}, camera_bev{}, lidar_bev{}, fused{};
  Var heat_probs{};
  CandidateSet candidates;
  HeadOutput main{};
  std::optional<HeadOutput> aux;
};

// SceneInputs must outlive the tape: the scatter ops keep references.
ForwardResult forward(Tape& t, const BoundParams& p, const SceneInputs& in,
                      const ModelConfig& cfg, const ForwardOptions& opt = {});

struct LossBreakdown {
  Var total{};
  double heat = 0.0, main = 0.0, aux = 0.0, depth = 0.0;
};

// lambda_heat * heatmap + main set loss + L_aux (task-specific only) +
// lambda_depth * depth BCE (depth-supervised modes only).
LossBreakdown total_loss(Tape& t, const ForwardResult& f, const SceneInputs& in,
                         const ModelConfig& cfg, const LossWeights& w);

// Mean depth BCE over the scene's cameras.
Var scene_depth_loss(Tape& t, const ForwardResult& f, const SceneInputs& in);

struct Inference {
  std::vector<Detection> detections;
  Tensor ray_bev, point_bev, camera_bev, lidar_bev, fused;
};

// Inference: detections from the main heads plus every intermediate BEV. In
// oracle mode the candidates are the cells of `oracle_heatmap` at 1.0,
// detections sit at their cell centres and classes come from the heatmap.
Inference infer(const ParamStore& params, const SceneInputs& in, const ModelConfig& cfg,
                const Tensor* oracle_heatmap = nullptr);

std::vector<Detection> detect(const ParamStore& params, const SceneInputs& in,
                              const ModelConfig& cfg, const Tensor* oracle_heatmap = nullptr);

// Peak-only heatmap: 1.0 at each object's cell and class, 0 elsewhere.
Tensor oracle_heatmap(const std::vector<ObjectBox>& truths, const BEVConfig& bev,
                      std::size_t classes);

}  // namespace bevkit
