#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bevkit/metrics.hpp"
#include "bevkit/model.hpp"

namespace bevkit {

using GradMap = std::map<std::string, Tensor>;

// p <- p - lr * g for every entry of `grads`; names missing from `grads` are
// left alone. Throws a dimension error on shape mismatch.
void sgd_step(ParamStore& params, const GradMap& grads, double lr);

struct DataConfig {
  std::size_t train_scenes = 8;
  std::size_t heldout_scenes = 32;
  std::size_t boxes_per_scene = 4;
  std::size_t cameras = 6;      // surround rig so every object is seen
  std::size_t image_size = 32;
  std::uint64_t seed = 7;
};

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  DataConfig data;
  std::size_t steps = 300;
  std::size_t depth_pretrain_steps = 200;
  double lr = 0.1;
  double depth_lr = 0.5;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 2.0;
  std::uint64_t seed = 1;
};

// Small model sized for CPU training: 3 classes, 16 x 16 BEV, 16 channels,
// 16 candidates.
TrainConfig desk_config();

// desk_config with the shorter schedule used for every ablation run.
TrainConfig ablation_config();

// The rig the data config describes.
SensorRig data_rig(const DataConfig& data, std::size_t classes);

struct Example {
  Scene scene;
  SensorFrame frame;
  SceneInputs inputs;
};

// Scenes drawn from `seed`, simulated with `rig` and preprocessed for `cfg`.
std::vector<Example> make_examples(std::size_t count, std::size_t boxes, std::uint64_t seed,
                                   const SensorRig& rig, const ModelConfig& cfg);

struct BatchResult {
  double loss = 0.0;
  LossBreakdown parts;  // batch means; `total` is unset
  GradMap grads;        // batch means
};

// Forward + backward over every example; per-scene gradients are summed in
// example order, then averaged.
BatchResult batch_gradients(const ParamStore& params, const std::vector<Example>& batch,
                            const ModelConfig& cfg, const LossWeights& w);

// Depth-net only (camera encoder + depth groups) against the depth truth.
BatchResult depth_gradients(const ParamStore& params, const std::vector<Example>& batch,
                            const ModelConfig& cfg);

// Gradient map restricted to these parameter groups.
GradMap select_groups(const ParamStore& params, const GradMap& grads,
                      const std::vector<std::string>& groups);

// Scales all gradients so their global L2 norm is at most `max_norm`;
// returns the pre-clip norm.
double clip_gradients(GradMap& grads, double max_norm);

struct RunReport {
  std::string name;
  std::vector<double> depth_curve;  // per pretrain step, before the update
  std::vector<double> loss_curve;   // per joint step, before the update
  EvalResult eval;                  // on held-out scenes
  double wall_seconds = 0.0;
  ParamStore params;
};

// Depth-net pretraining: `steps` SGD updates of the camera and depth groups
// against the depth truth. Returns the per-step loss before each update.
std::vector<double> pretrain_depth(ParamStore& params, const std::vector<Example>& batch,
                                   const ModelConfig& model, std::size_t steps, double lr,
                                   double clip_norm);

// Depth pretrain then joint training. Throws a numeric error naming the
// step when a loss turns non-finite.
RunReport train(const TrainConfig& cfg, const std::vector<Example>& batch,
                const std::vector<Example>& heldout);

// Convenience: generates train/held-out scenes from cfg.data and trains.
RunReport train(const TrainConfig& cfg);

std::vector<FrameDetections> run_detections(const ParamStore& params,
                                            const std::vector<Example>& scenes,
                                            const ModelConfig& cfg);

struct AblationRow {
  std::string name;
  DualStream dual_stream = DualStream::kNone;
  bool task_specific = false;
  std::vector<double> map;         // per seed
  std::vector<double> final_loss;  // per seed
  double mean_map = 0.0;
  double mean_nds = 0.0;
  double mean_final_loss = 0.0;
};

struct AblationSetting {
  std::string name;
  DualStream dual_stream;
  bool task_specific;
};

// baseline, +DST(ray), +DST(point), +DST(both), +TSP, +both.
std::vector<AblationSetting> ablation_grid();

// Called after each finished run with (setting, seed, held-out mAP).
using AblationProgress = std::function<void(const AblationRow&, std::uint64_t, double)>;

// Every setting on the same seeds; seed s drives data and initialization.
std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                const std::vector<AblationSetting>& grid = ablation_grid(),
                                const AblationProgress& progress = {});

struct OrderingVerdict {
  bool holds = false;
  std::string detail;
};

// Mean held-out mAP ordering: "+DST+TSP" >= "+DST(both)" and "+TSP", each
// of which >= "baseline". Fails when a row is missing.
OrderingVerdict ablation_ordering(const std::vector<AblationRow>& rows);

}  // namespace bevkit
