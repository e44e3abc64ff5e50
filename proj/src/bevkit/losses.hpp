#pragma once

#include <array>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "bevkit/geometry.hpp"
#include "bevkit/predictor.hpp"
#include "bevkit/scene.hpp"
#include "bevkit/tape.hpp"

namespace bevkit {

struct MatchResult {
  // (prediction, ground truth), ascending by prediction.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unmatched_predictions;
  std::vector<std::size_t> unmatched_truths;
  double cost = 0.0;
};

// Minimum-cost assignment of min(m, n) pairs. Among optimal assignments the
// lexicographically smallest sorted pair list is returned. Throws a numeric
// error on non-finite costs.
MatchResult hungarian_match(const Eigen::MatrixXd& cost);

struct LossWeights {
  double cls_aux = 1.0;   // lambda_1
  double box_aux = 0.25;  // lambda_2
  double depth = 0.05;
  double heat = 1.0;
  double box = 0.25;

  void validate() const;
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

inline constexpr double kLossProbFloor = 1e-7;

// Per-element focal term on a probability (clamped to [1e-7, 1 - 1e-7]).
double focal_term(double p, double target, const FocalParams& fp = {});

// Sum (mean=false) or mean of focal_term over all elements of `probs`.
Var focal_loss(Tape& t, Var probs, const Tensor& targets, const FocalParams& fp = {},
               bool mean = true);

// Mean absolute difference.
Var l1_loss(Tape& t, Var pred, const Tensor& target);

// Box in the 10-dim head encoding relative to BEV cell (gx, gy).
std::array<double, kBoxDims> encode_box(const ObjectBox& box, std::size_t gx, std::size_t gy,
                                        const BEVConfig& bev);

struct SetLoss {
  Var cls;    // focal sum over [K, N] / max(1, #gt)
  Var box;    // mean L1 over matched pairs (0 without pairs)
  MatchResult match;
};

// Matching cost (focal_pos - focal_neg at the gt class) + L1 box, Hungarian
// match, then focal class targets (unmatched predictions are background) and
// L1 on matched boxes.
SetLoss set_prediction_loss(Tape& t, Var logits, Var boxes, const CandidateSet& cands,
                            const std::vector<ObjectBox>& truths, const BEVConfig& bev,
                            const FocalParams& fp = {});

// weights.cls_aux * cls + weights.box_aux * box.
Var aux_loss(Tape& t, const SetLoss& s, const LossWeights& w);

// Gaussian-splatted class heatmap [X, Y, N]: peak 1 at each object's cell,
// radius from the footprint in cells (minimum 1).
Tensor heatmap_target(const std::vector<ObjectBox>& truths, const BEVConfig& bev,
                      std::size_t classes);

// Gaussian radius in cells for a footprint of (l, w) cells.
double gaussian_radius(double length_cells, double width_cells, double min_overlap = 0.1);

// Penalty-reduced focal loss (alpha 2, beta 4) against a Gaussian target,
// normalized by the number of peak cells (at least 1).
Var heatmap_loss(Tape& t, Var probs, const Tensor& target);

}  // namespace bevkit
