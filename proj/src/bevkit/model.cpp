#include "bevkit/model.hpp"

#include "bevkit/error.hpp"

namespace bevkit {

const char* to_string(DualStream d) {
  switch (d) {
    case DualStream::kNone: return "none";
    case DualStream::kRay: return "ray";
    case DualStream::kPoint: return "point";
    case DualStream::kBoth: return "both";
  }
  return "?";
}

DualStream parse_dual_stream(const std::string& s) {
  if (s == "none") return DualStream::kNone;
  if (s == "ray") return DualStream::kRay;
  if (s == "point") return DualStream::kPoint;
  if (s == "both") return DualStream::kBoth;
  fail(ErrorKind::kParse, "dual_stream must be none, ray, point or both (got '" + s + "')");
}

void ModelConfig::sync() {
  camera.image_channels = classes + 2;
  camera.point_stream = point_enabled(dual_stream);
  predictor.classes = classes;
  predictor.camera_channels = camera.camera_bev_channels;
  predictor.lidar_channels = lidar.bev_channels;
  predictor.task_specific = task_specific;
}

namespace {

ParamStore register_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  add_lidar_params(store, rng, cfg.lidar, cfg.z_slices);
  add_camera_params(store, rng, cfg.camera);
  add_predictor_params(store, rng, cfg.predictor);
  return store;
}

}  // namespace

ParamStore init_params(ModelConfig cfg, std::uint64_t seed) {
  cfg.sync();
  // Values come from the all-modules layout so shared tensors are identical
  // whichever toggles are on.
  ModelConfig full = cfg;
  full.dual_stream = DualStream::kBoth;
  full.task_specific = true;
  full.sync();
  const ParamStore all = register_params(full, seed);
  ParamStore store = register_params(cfg, seed);
  for (const auto& name : store.names()) store.get(name) = all.get(name);
  return store;
}

SceneInputs prepare_inputs(const Scene& scene, const SensorFrame& frame, const SensorRig& rig,
                           const ModelConfig& cfg) {
  require(frame.images.size() == rig.cameras.size(), ErrorKind::kDimension,
          "prepare_inputs: image count does not match the camera rig");
  SceneInputs in;
  in.cameras = rig.cameras;
  for (std::size_t i = 0; i < rig.cameras.size(); ++i) {
    const Tensor& img = frame.images[i].features;
    require(img.rank() == 3 && img.dim(0) == rig.cameras[i].height &&
                img.dim(1) == rig.cameras[i].width && img.dim(2) == cfg.classes + 2,
            ErrorKind::kDimension,
            "prepare_inputs: image " + std::to_string(i) + " has shape " +
                shape_string(img.shape()) + ", expected [H, W, classes + 2]");
    in.images.push_back(img);
    in.frusta.push_back(build_frustum(rig.cameras[i], cfg.camera.bins, cfg.bev, cfg.camera.stride));
    in.depth_truth.push_back(
        depth_ground_truth(frame.cloud, rig.cameras[i], cfg.camera.bins, cfg.camera.stride));
  }
  in.ray_weight = ray_cell_weights(in.frusta, cfg.bev.cells());
  in.point_index = build_point_stream(frame.cloud, rig.cameras, cfg.bev);
  in.voxels = voxelize(frame.cloud, cfg.voxel_config());
  in.truths = scene.boxes;
  in.heatmap_truth = heatmap_target(scene.boxes, cfg.bev, cfg.classes);
  return in;
}

ForwardResult forward(Tape& t, const BoundParams& p, const SceneInputs& in,
                      const ModelConfig& cfg, const ForwardOptions& opt) {
  ForwardResult f;
  const std::size_t s = cfg.camera.stride;
  std::vector<Var> contexts, hrs;
  for (std::size_t i = 0; i < in.cameras.size(); ++i) {
    Var lr = camera_encode(t, p, t.constant(in.images[i]), s);
    DepthNetOutput d = depth_net(t, p, lr, in.cameras[i], s, cfg.camera.bins);
    contexts.push_back(d.context);
    f.depth_probs.push_back(d.depth);
    if (!opt.depth_only && point_enabled(cfg.dual_stream)) hrs.push_back(upsample_hr(t, p, lr, s));
  }
  if (opt.depth_only) return f;

  f.ray_bev = scale_rows(t, ray_stream(t, contexts, f.depth_probs, in.frusta, cfg.bev),
                         in.ray_weight);
  if (point_enabled(cfg.dual_stream)) {
    f.point_bev = point_stream(t, hrs, in.point_index, cfg.bev);
  } else {
    f.point_bev = t.constant(Tensor({cfg.bev.n, cfg.bev.n, cfg.camera.hr_channels}));
  }
  f.camera_bev = fuse_camera_bev(t, p, f.ray_bev, f.point_bev);
  f.lidar_bev = lidar_bev(t, p, in.voxels);
  f.fused = fuse_bev(t, p, f.camera_bev, f.lidar_bev);
  f.heat_probs = heatmap_head(t, p, f.fused);

  const std::size_t k = cfg.predictor.max_candidates;
  if (opt.oracle_heatmap) {
    f.candidates = select_candidates(*opt.oracle_heatmap, k);
    std::erase_if(f.candidates.items, [](const Candidate& c) { return c.score <= 0.5; });
  } else {
    f.candidates = select_candidates(t.value(f.heat_probs), k);
  }
  if (f.candidates.size() == 0) return f;

  Var f_g = decode_general(t, p, f.fused, f.candidates).features;
  if (cfg.task_specific) {
    TaskFeatures tf = task_specific_features(t, p, f.camera_bev, f.lidar_bev, f.candidates);
    Var q_cls = task_specific_fuse(t, p, "tsp.fuse_cls", f_g, tf.cls);
    Var q_box = task_specific_fuse(t, p, "tsp.fuse_box", f_g, tf.box);
    f.main = subtask_heads(t, p, "head", q_cls, q_box);
    if (cfg.stop_aux_gradient) {
      f.aux = subtask_heads(t, p, "aux", t.constant(t.value(tf.cls)), t.constant(t.value(tf.box)));
    } else {
      f.aux = subtask_heads(t, p, "aux", tf.cls, tf.box);
    }
  } else {
    f.main = subtask_heads(t, p, "head", f_g, f_g);
  }
  return f;
}

Var scene_depth_loss(Tape& t, const ForwardResult& f, const SceneInputs& in) {
  std::vector<DepthTerm> terms;
  for (std::size_t i = 0; i < f.depth_probs.size(); ++i) {
    terms.push_back({f.depth_probs[i], &in.depth_truth[i]});
  }
  return depth_loss(t, terms);
}

LossBreakdown total_loss(Tape& t, const ForwardResult& f, const SceneInputs& in,
                         const ModelConfig& cfg, const LossWeights& w) {
  w.validate();
  LossBreakdown out;
  Var heat = heatmap_loss(t, f.heat_probs, in.heatmap_truth);
  out.heat = t.value(heat).item();
  Var total = ad::scale(t, heat, w.heat);
  if (f.candidates.size() > 0) {
    SetLoss main = set_prediction_loss(t, f.main.logits, f.main.boxes, f.candidates, in.truths,
                                       cfg.bev);
    Var m = ad::add(t, ad::scale(t, main.cls, w.cls_aux), ad::scale(t, main.box, w.box));
    out.main = t.value(m).item();
    total = ad::add(t, total, m);
    if (f.aux) {
      SetLoss aux = set_prediction_loss(t, f.aux->logits, f.aux->boxes, f.candidates, in.truths,
                                        cfg.bev);
      Var a = aux_loss(t, aux, w);
      out.aux = t.value(a).item();
      total = ad::add(t, total, a);
    }
  }
  if (depth_supervised(cfg.dual_stream)) {
    Var d = scene_depth_loss(t, f, in);
    out.depth = t.value(d).item();
    total = ad::add(t, total, ad::scale(t, d, w.depth));
  }
  out.total = total;
  return out;
}

Inference infer(const ParamStore& params, const SceneInputs& in, const ModelConfig& cfg,
                const Tensor* oracle) {
  Tape t(false);
  BoundParams p(t, params, false);
  ForwardOptions opt;
  opt.oracle_heatmap = oracle;
  ForwardResult f = forward(t, p, in, cfg, opt);
  Inference out;
  out.ray_bev = t.value(f.ray_bev);
  out.point_bev = t.value(f.point_bev);
  out.camera_bev = t.value(f.camera_bev);
  out.lidar_bev = t.value(f.lidar_bev);
  out.fused = t.value(f.fused);
  if (f.candidates.size() == 0) return out;
  std::vector<Detection> dets =
      decode_detections(t.value(f.main.logits), t.value(f.main.boxes), f.candidates, cfg.bev);
  if (!oracle) {
    out.detections = std::move(dets);
    return out;
  }
  // Zero cells of the oracle map form a plateau of eligible candidates;
  // only the object cells are kept.
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Candidate& c = f.candidates.items[i];
    if (!(c.score > 0.0)) continue;
    const Vec2 cc = cfg.bev.cell_center(c.gx, c.gy);
    Detection d = dets[i];
    d.center.x() = cc.x();
    d.center.y() = cc.y();
    d.class_id = c.cls;
    d.score = c.score;
    out.detections.push_back(d);
  }
  return out;
}

std::vector<Detection> detect(const ParamStore& params, const SceneInputs& in,
                              const ModelConfig& cfg, const Tensor* oracle) {
  return infer(params, in, cfg, oracle).detections;
}

Tensor oracle_heatmap(const std::vector<ObjectBox>& truths, const BEVConfig& bev,
                      std::size_t classes) {
  Tensor hm({bev.n, bev.n, classes});
  for (const auto& b : truths) {
    require(b.class_id < classes, ErrorKind::kDomain, "oracle_heatmap: class id out of range");
    const auto cell = bev_index(b.center.x(), b.center.y(), bev);
    if (cell) hm[bev.flat(*cell) * classes + b.class_id] = 1.0;
  }
  return hm;
}

}  // namespace bevkit
