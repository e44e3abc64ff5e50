#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "bevkit/predictor.hpp"
#include "bevkit/scene.hpp"

namespace bevkit {

inline constexpr std::array<double, 4> kDistanceThresholds = {0.5, 1.0, 2.0, 4.0};
inline constexpr double kTpThreshold = 2.0;

struct MatchLabels {
  std::vector<bool> tp;  // per detection, in input order
  // (detection, ground truth) for each true positive.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

// Greedy matching of score-sorted detections: each takes the nearest
// unmatched same-class ground truth strictly closer than `threshold` (BEV
// center distance), else it is a false positive. Ties in distance go to the
// lower ground-truth index.
MatchLabels match_detections(const std::vector<Detection>& dets,
                             const std::vector<ObjectBox>& truths, double threshold);

// 101-point interpolated AP over labels sorted by descending score, with
// recall and precision below 0.1 discarded and the rest renormalized by 0.9.
double average_precision(const std::vector<bool>& labels, std::size_t num_truths);

struct TpErrors {
  double ate = 1.0;
  double ase = 1.0;
  double aoe = 1.0;
  double ave = 1.0;
  std::size_t matches = 0;
};

// Mean errors over matched pairs; each is 1.0 without matches.
TpErrors tp_error_stats(const std::vector<Detection>& dets, const std::vector<ObjectBox>& truths,
                        const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

// 1 - IoU of two boxes sharing center and yaw.
double aligned_scale_error(const Vec3& a, const Vec3& b);

double nds(double map, const TpErrors& e);

struct ClassAp {
  std::size_t class_id = 0;
  std::array<double, 4> ap{};  // per distance threshold
  double mean = 0.0;
};

struct EvalResult {
  std::vector<ClassAp> classes;  // classes with ground truth or detections
  double map = 0.0;
  TpErrors errors;
  double nds = 0.0;
};

// One frame or several: detections and truths are tagged with a frame id so
// matching never crosses frames.
struct FrameDetections {
  std::vector<Detection> detections;
  std::vector<ObjectBox> truths;
};

EvalResult evaluate(const std::vector<FrameDetections>& frames, std::size_t class_count);

}  // namespace bevkit
