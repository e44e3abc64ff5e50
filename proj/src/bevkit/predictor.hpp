#pragma once

#include <cstdint>
#include <vector>

#include "bevkit/geometry.hpp"
#include "bevkit/nn.hpp"
#include "bevkit/tape.hpp"

namespace bevkit {

inline constexpr std::size_t kBoxDims = 10;
// Heatmap and class-logit bias init: sigmoid(-2.19) ~ 0.1.
inline constexpr double kPriorBias = -2.19;

struct PredictorConfig {
  std::size_t classes = 10;            // N
  std::size_t camera_channels = 32;    // C_c
  std::size_t lidar_channels = 32;     // C_l
  std::size_t channels = 32;           // C (B_f, f_g, f_c, f_b, Q_s)
  std::size_t ffn_hidden = 32;
  std::size_t head_hidden = 32;
  std::size_t max_candidates = 32;     // K
  bool task_specific = true;           // registers tsp.* and aux.*
};

// Registers fuser.*, heatmap.*, decoder.*, tsp.*, head.* and aux.* tensors.
void add_predictor_params(ParamStore& store, Rng& rng, const PredictorConfig& cfg);

// concat(B_c, B_l) -> two 3x3 convolutions with ReLU: [X, Y, C].
Var fuse_bev(Tape& t, const BoundParams& p, Var camera_bev, Var lidar_bev);

// 3x3 conv + ReLU, 1x1 conv to N logits: [X, Y, N] (pre-sigmoid).
Var heatmap_logits(Tape& t, const BoundParams& p, Var fused);
Var heatmap_head(Tape& t, const BoundParams& p, Var fused);

struct Candidate {
  std::size_t gx = 0;
  std::size_t gy = 0;
  std::size_t cls = 0;
  double score = 0.0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct CandidateSet {
  std::vector<Candidate> items;
  std::size_t size() const { return items.size(); }
  // Flat BEV cell index per candidate (gx * Y + gy).
  std::vector<std::size_t> cells(std::size_t grid_y) const;
};

// Local maxima of the per-cell class max over the 8-neighbourhood (>=),
// top-K by score with ties broken by (gx, gy). heatmap: [X, Y, N].
CandidateSet select_candidates(const Tensor& heatmap, std::size_t k);

// Sinusoidal encoding of (gx, gy): first half of the channels for gx, second
// half for gy, alternating sin/cos. channels must be a multiple of 4.
Tensor grid_posenc(const std::vector<std::size_t>& cells, std::size_t grid_y,
                   std::size_t channels);

struct Attention {
  Var out;      // [Q, C_v]
  Var weights;  // [Q, T], rows sum to 1
};

// softmax(q k^T * scale) v for q [Q, C], k [T, C], v [T, C_v].
Attention attention(Tape& t, Var q, Var k, Var v, double scale);

struct DecoderOutput {
  Var features;  // f_g [K, C]
  Var weights;   // cross-attention weights [K, X*Y]
};

// Query = B_f[cell] + class embedding + posenc; one single-head
// cross-attention over every BEV cell, output projection, then
// f_g = a + FFN(a).
DecoderOutput decode_general(Tape& t, const BoundParams& p, Var fused,
                             const CandidateSet& cands);

struct TaskFeatures {
  Var cls;  // f_c [K, C]
  Var box;  // f_b [K, C]
};

// Unshared conv encoders on B_c and B_l read at the candidate cells, joint
// self-attention over the 2K tokens, then one FFN per sub-task on the
// concatenated pair.
TaskFeatures task_specific_features(Tape& t, const BoundParams& p, Var camera_bev,
                                    Var lidar_bev, const CandidateSet& cands);

// Q_s = psi([gamma_s * f_s + beta_s, gamma_g * f_g + beta_g]) with the four
// modulation maps reading [f_g, f_s]. Uses "<prefix>.gamma_s", ".beta_s",
// ".gamma_g", ".beta_g" and ".psi".
Var task_specific_fuse(Tape& t, const BoundParams& p, const std::string& prefix, Var f_g,
                       Var f_s);

struct HeadOutput {
  Var logits;  // [K, N]
  Var boxes;   // [K, 10]
};

// "<prefix>.cls" and "<prefix>.box" two-layer MLPs ("head" or "aux").
HeadOutput subtask_heads(Tape& t, const BoundParams& p, const std::string& prefix, Var q_cls,
                         Var q_box);

struct Detection {
  std::size_t class_id = 0;
  double score = 0.0;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;
  Vec2 velocity = Vec2::Zero();
};

// Box rows -> world boxes: cell center + (dx, dy) * cell size, exp sizes,
// atan2(sin, cos) yaw. Score is sigmoid of the max logit and the class its
// argmax (lowest index on ties).
std::vector<Detection> decode_detections(const Tensor& logits, const Tensor& boxes,
                                         const CandidateSet& cands, const BEVConfig& bev);

}  // namespace bevkit
