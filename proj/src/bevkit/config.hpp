#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevkit/training.hpp"

namespace bevkit {

// Everything one invocation needs, read from an INI file. Sections and keys:
//   [general] seed
//   [scene]   boxes, classes
//   [bev]     x_min, x_max, y_min, y_max, n
//   [rig]     cameras, image_size            (gen)
//   [model]   dual_stream, task_specific, stop_aux_gradient, channels,
//             candidates, depth_bins, d_min, d_max
//   [loss]    cls_aux, box_aux, depth, heat, box
//   [train]   steps, pretrain_steps, lr, depth_lr, clip_norm, train_scenes,
//             heldout_scenes, boxes, cameras, image_size
//   [ablate]  steps, pretrain_steps, seeds (comma separated)
// Unknown sections or keys are errors, so typos never pass silently.
struct AppConfig {
  std::string source = "<defaults>";
  std::uint64_t seed = 7;
  std::size_t boxes = 4;
  std::size_t rig_cameras = 2;
  std::size_t rig_image_size = 64;
  TrainConfig train = desk_config();
  TrainConfig ablation = ablation_config();
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3};

  const ModelConfig& model() const { return train.model; }
  SensorRig rig() const;
  // Applies the global seed to both training configs.
  void set_seed(std::uint64_t s);
};

AppConfig parse_config(const std::string& text, const std::string& source);
AppConfig load_config(const std::string& path);

// The effective configuration as INI text; parse_config reads it back to an
// equivalent AppConfig.
std::string config_to_ini(const AppConfig& c);

// Model section round trip, used to embed the architecture in parameter
// files.
std::string model_to_ini(const ModelConfig& m);
ModelConfig model_from_ini(const std::string& text, const std::string& source);

}  // namespace bevkit
