#include "bevkit/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "bevkit/error.hpp"
#include "bevkit/parallel.hpp"

namespace bevkit {

void sgd_step(ParamStore& params, const GradMap& grads, double lr) {
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::kDomain, "learning rate must be positive");
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get(name);
    require(p.shape() == g.shape(), ErrorKind::kDimension,
            "sgd_step: gradient for " + name + " has shape " + shape_string(g.shape()) +
                ", parameter has " + shape_string(p.shape()));
    for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= lr * g[i];
  }
}

TrainConfig desk_config() {
  TrainConfig cfg;
  ModelConfig& m = cfg.model;
  m.classes = 3;
  m.bev.n = 16;
  m.lidar.bev_channels = 16;
  m.camera.camera_bev_channels = 16;
  m.predictor.channels = 16;
  m.predictor.ffn_hidden = 16;
  m.predictor.head_hidden = 16;
  m.predictor.max_candidates = 16;
  m.sync();
  return cfg;
}

TrainConfig ablation_config() {
  TrainConfig cfg = desk_config();
  cfg.steps = 150;
  cfg.depth_pretrain_steps = 100;
  return cfg;
}

SensorRig data_rig(const DataConfig& data, std::size_t classes) {
  return default_rig(classes, data.image_size, data.cameras);
}

std::vector<Example> make_examples(std::size_t count, std::size_t boxes, std::uint64_t seed,
                                   const SensorRig& rig, const ModelConfig& cfg) {
  std::vector<Example> out(count);
  Rng rng(seed);
  std::vector<std::uint64_t> seeds(count);
  for (auto& s : seeds) s = rng.next();
  parallel_for(count, [&](std::size_t i) {
    out[i].scene = generate_scene(boxes, cfg.bev, cfg.classes, seeds[i]);
    out[i].frame = simulate(out[i].scene, rig);
    out[i].inputs = prepare_inputs(out[i].scene, out[i].frame, rig, cfg);
  });
  return out;
}

namespace {

struct SceneGrad {
  double loss = 0.0;
  LossBreakdown parts;
  GradMap grads;
};

BatchResult reduce(std::vector<SceneGrad>& per_scene) {
  BatchResult r;
  const double inv = 1.0 / static_cast<double>(per_scene.size());
  for (auto& s : per_scene) {
    r.loss += s.loss * inv;
    r.parts.heat += s.parts.heat * inv;
    r.parts.main += s.parts.main * inv;
    r.parts.aux += s.parts.aux * inv;
    r.parts.depth += s.parts.depth * inv;
    for (auto& [name, g] : s.grads) {
      auto it = r.grads.find(name);
      if (it == r.grads.end()) it = r.grads.emplace(name, Tensor(g.shape())).first;
      for (std::size_t i = 0; i < g.numel(); ++i) it->second[i] += g[i] * inv;
    }
  }
  return r;
}

template <typename Fn>
BatchResult run_batch(const ParamStore& params, const std::vector<Example>& batch, Fn&& loss_fn) {
  require(!batch.empty(), ErrorKind::kContract, "empty training batch");
  std::vector<SceneGrad> per_scene(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    Tape t;
    BoundParams p(t, params, true);
    LossBreakdown parts = loss_fn(t, p, batch[i].inputs);
    const Gradients g = t.backward(parts.total);
    per_scene[i].loss = t.value(parts.total).item();
    per_scene[i].parts = parts;
    for (const auto& [name, v] : p.vars()) per_scene[i].grads.emplace(name, g[v]);
  });
  return reduce(per_scene);
}

}  // namespace

BatchResult batch_gradients(const ParamStore& params, const std::vector<Example>& batch,
                            const ModelConfig& cfg, const LossWeights& w) {
  return run_batch(params, batch, [&](Tape& t, const BoundParams& p, const SceneInputs& in) {
    const ForwardResult f = forward(t, p, in, cfg);
    return total_loss(t, f, in, cfg, w);
  });
}

BatchResult depth_gradients(const ParamStore& params, const std::vector<Example>& batch,
                            const ModelConfig& cfg) {
  BatchResult r = run_batch(params, batch, [&](Tape& t, const BoundParams& p,
                                               const SceneInputs& in) {
    ForwardOptions opt;
    opt.depth_only = true;
    const ForwardResult f = forward(t, p, in, cfg, opt);
    LossBreakdown parts;
    parts.total = scene_depth_loss(t, f, in);
    parts.depth = t.value(parts.total).item();
    return parts;
  });
  r.grads = select_groups(params, r.grads, {"camera", "depth"});
  return r;
}

GradMap select_groups(const ParamStore& params, const GradMap& grads,
                      const std::vector<std::string>& groups) {
  const std::set<std::string> keep(groups.begin(), groups.end());
  GradMap out;
  for (const auto& [name, g] : grads) {
    if (keep.count(params.group(name))) out.emplace(name, g);
  }
  return out;
}

double clip_gradients(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& v : g.data()) v *= s;
    }
  }
  return norm;
}

std::vector<FrameDetections> run_detections(const ParamStore& params,
                                            const std::vector<Example>& scenes,
                                            const ModelConfig& cfg) {
  std::vector<FrameDetections> frames(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    frames[i].detections = detect(params, scenes[i].inputs, cfg);
    frames[i].truths = scenes[i].scene.boxes;
  });
  return frames;
}

namespace {

// Rethrows numeric errors with the phase and step that produced them.
template <typename Fn>
BatchResult guarded_step(const char* phase, std::size_t step, Fn&& fn) {
  BatchResult r;
  try {
    r = fn();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumeric) throw;
    fail(ErrorKind::kNumeric, std::string(phase) + " step " + std::to_string(step) + ": " + e.what());
  }
  require(std::isfinite(r.loss), ErrorKind::kNumeric,
          std::string(phase) + " loss is not finite at step " + std::to_string(step));
  return r;
}

}  // namespace

std::vector<double> pretrain_depth(ParamStore& params, const std::vector<Example>& batch,
                                   const ModelConfig& model, std::size_t steps, double lr,
                                   double clip_norm) {
  std::vector<double> curve;
  for (std::size_t s = 0; s < steps; ++s) {
    BatchResult r =
        guarded_step("depth pretrain", s, [&] { return depth_gradients(params, batch, model); });
    curve.push_back(r.loss);
    if (clip_norm > 0.0) clip_gradients(r.grads, clip_norm);
    sgd_step(params, r.grads, lr);
  }
  return curve;
}

RunReport train(const TrainConfig& cfg, const std::vector<Example>& batch,
                const std::vector<Example>& heldout) {
  require(cfg.steps >= 1, ErrorKind::kDomain, "train: steps must be at least 1");
  require(cfg.lr > 0.0, ErrorKind::kDomain, "train: learning rate must be positive");
  const auto start = std::chrono::steady_clock::now();
  ModelConfig model = cfg.model;
  model.sync();
  RunReport rep;
  rep.params = init_params(model, cfg.seed);
  if (depth_supervised(model.dual_stream)) {
    rep.depth_curve = pretrain_depth(rep.params, batch, model, cfg.depth_pretrain_steps,
                                     cfg.depth_lr, cfg.clip_norm);
  }
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    BatchResult r = guarded_step(
        "joint", s, [&] { return batch_gradients(rep.params, batch, model, cfg.weights); });
    rep.loss_curve.push_back(r.loss);
    if (cfg.clip_norm > 0.0) clip_gradients(r.grads, cfg.clip_norm);
    sgd_step(rep.params, r.grads, cfg.lr);
  }
  if (!heldout.empty()) rep.eval = evaluate(run_detections(rep.params, heldout, model), model.classes);
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

RunReport train(const TrainConfig& cfg) {
  ModelConfig model = cfg.model;
  model.sync();
  const SensorRig rig = data_rig(cfg.data, model.classes);
  const auto batch = make_examples(cfg.data.train_scenes, cfg.data.boxes_per_scene,
                                   cfg.data.seed, rig, model);
  const auto heldout = make_examples(cfg.data.heldout_scenes, cfg.data.boxes_per_scene,
                                     cfg.data.seed ^ 0x9e3779b97f4a7c15ULL, rig, model);
  return train(cfg, batch, heldout);
}

std::vector<AblationSetting> ablation_grid() {
  return {{"baseline", DualStream::kNone, false},   {"+DST(ray)", DualStream::kRay, false},
          {"+DST(point)", DualStream::kPoint, false}, {"+DST(both)", DualStream::kBoth, false},
          {"+TSP", DualStream::kNone, true},         {"+DST+TSP", DualStream::kBoth, true}};
}

std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                                const std::vector<AblationSetting>& grid,
                                const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  for (const auto& setting : grid) {
    AblationRow row;
    row.name = setting.name;
    row.dual_stream = setting.dual_stream;
    row.task_specific = setting.task_specific;
    rows.push_back(row);
  }
  for (std::uint64_t seed : seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    cfg.data.seed = base.data.seed + seed;
    ModelConfig model = cfg.model;
    model.sync();
    // Scene inputs do not depend on the toggles, so one set serves the grid.
    const SensorRig rig = data_rig(cfg.data, model.classes);
    const auto batch = make_examples(cfg.data.train_scenes, cfg.data.boxes_per_scene,
                                     cfg.data.seed, rig, model);
    const auto heldout = make_examples(cfg.data.heldout_scenes, cfg.data.boxes_per_scene,
                                       cfg.data.seed ^ 0x9e3779b97f4a7c15ULL, rig, model);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      TrainConfig run = cfg;
      run.model.dual_stream = grid[i].dual_stream;
      run.model.task_specific = grid[i].task_specific;
      const RunReport rep = train(run, batch, heldout);
      rows[i].map.push_back(rep.eval.map);
      rows[i].final_loss.push_back(rep.loss_curve.back());
      rows[i].mean_nds += rep.eval.nds / static_cast<double>(seeds.size());
      if (progress) progress(rows[i], seed, rep.eval.map);
    }
  }
  for (auto& row : rows) {
    for (double m : row.map) row.mean_map += m / static_cast<double>(row.map.size());
    for (double l : row.final_loss) {
      row.mean_final_loss += l / static_cast<double>(row.final_loss.size());
    }
  }
  return rows;
}

OrderingVerdict ablation_ordering(const std::vector<AblationRow>& rows) {
  auto find = [&](const std::string& name) -> const AblationRow* {
    for (const auto& r : rows) {
      if (r.name == name) return &r;
    }
    return nullptr;
  };
  const AblationRow* base = find("baseline");
  const AblationRow* dst = find("+DST(both)");
  const AblationRow* tsp = find("+TSP");
  const AblationRow* all = find("+DST+TSP");
  OrderingVerdict v;
  if (!base || !dst || !tsp || !all) {
    v.detail = "ordering needs baseline, +DST(both), +TSP and +DST+TSP rows";
    return v;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "+DST+TSP %.4f >= +DST(both) %.4f, +TSP %.4f >= baseline %.4f", all->mean_map,
                dst->mean_map, tsp->mean_map, base->mean_map);
  v.detail = buf;
  v.holds = all->mean_map >= dst->mean_map && all->mean_map >= tsp->mean_map &&
            dst->mean_map >= base->mean_map && tsp->mean_map >= base->mean_map;
  return v;
}

}  // namespace bevkit
