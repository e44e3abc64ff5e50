#include "bevkit.h"

#include <chrono>
#include <filesystem>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "bevkit/check.hpp"
#include "bevkit/config.hpp"
#include "bevkit/error.hpp"
#include "bevkit/io.hpp"
#include "bevkit/model.hpp"
#include "bevkit/parallel.hpp"
#include "bevkit/training.hpp"

using namespace bevkit;

struct bk_config {
  AppConfig app;
  std::string ini;
};

struct bk_manifest {
  io::Manifest m;
};

struct bk_scene {
  io::SceneBundle bundle;
};

struct bk_model {
  ModelConfig cfg;
  ParamStore params;
};

struct bk_result {
  Inference inf;
};

struct bk_report {
  RunReport report;
  std::string config_ini;
  ModelConfig model;
};

struct bk_ablation {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
  OrderingVerdict verdict;
  std::vector<std::string> dual_names;
};

struct bk_eval {
  std::vector<FrameDetections> frames;
  std::size_t classes = 0;
  bool computed = false;
  EvalResult result;
};

namespace {

thread_local std::string g_last_error;

struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bk_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::kDimension: return BK_E_DIMENSION;
    case ErrorKind::kDomain: return BK_E_DOMAIN;
    case ErrorKind::kNumeric: return BK_E_NUMERIC;
    case ErrorKind::kContract: return BK_E_CONTRACT;
    case ErrorKind::kPlacement: return BK_E_PLACEMENT;
    case ErrorKind::kIo: return BK_E_IO;
    case ErrorKind::kParse: return BK_E_PARSE;
    case ErrorKind::kMissingInput: return BK_E_MISSING_INPUT;
    case ErrorKind::kPropertyFailure: return BK_E_PROPERTY;
  }
  return BK_E_INTERNAL;
}

template <class F>
bk_status guard(F&& body) {
  try {
    body();
    return BK_OK;
  } catch (const ArgumentError& e) {
    g_last_error = e.what();
    return BK_E_ARGUMENT;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return BK_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BK_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return BK_E_INTERNAL;
  }
}

template <class T>
T* need(T* p, const char* what) {
  if (!p) throw ArgumentError(std::string(what) + " is null");
  return p;
}

void check_index(std::size_t i, std::size_t n, const char* what) {
  if (i >= n) {
    throw ArgumentError(std::string(what) + " index " + std::to_string(i) + " out of range (" +
                        std::to_string(n) + ")");
  }
}

void record(bk_manifest* m, const std::string& path) {
  if (!m) return;
  const auto rel = std::filesystem::path(path).lexically_relative(m->m.output_dir);
  m->m.artifacts.push_back(rel.empty() ? path : rel.generic_string());
}

void record_all(bk_manifest* m, const std::string& dir, const std::vector<std::string>& names) {
  for (const auto& n : names) record(m, (std::filesystem::path(dir) / n).string());
}

const Tensor& bev_of(const bk_result* r, bk_bev_kind kind) {
  switch (kind) {
    case BK_BEV_RAY: return r->inf.ray_bev;
    case BK_BEV_POINT: return r->inf.point_bev;
    case BK_BEV_CAMERA: return r->inf.camera_bev;
    case BK_BEV_LIDAR: return r->inf.lidar_bev;
    case BK_BEV_FUSED: return r->inf.fused;
  }
  throw ArgumentError("unknown BEV kind " + std::to_string(static_cast<int>(kind)));
}

// Parameters must match the layout the config registers, name for name.
void validate_layout(const ModelConfig& cfg, const ParamStore& params, const std::string& source) {
  const ParamStore expect = init_params(cfg, 0);
  for (const auto& name : expect.names()) {
    require(params.contains(name), ErrorKind::kDimension,
            source + ": model parameter '" + name + "' is missing");
    require(params.get(name).shape() == expect.get(name).shape(), ErrorKind::kDimension,
            source + ": model parameter '" + name + "' has shape " +
                shape_string(params.get(name).shape()) + ", expected " +
                shape_string(expect.get(name).shape()));
  }
  require(params.size() == expect.size(), ErrorKind::kDimension,
          source + ": model has " + std::to_string(params.size()) + " parameters, expected " +
              std::to_string(expect.size()));
}

void fill_detection(const Detection& d, bk_detection* out) {
  out->class_id = d.class_id;
  out->score = d.score;
  for (int k = 0; k < 3; ++k) out->center[k] = d.center[k], out->size[k] = d.size[k];
  out->yaw = d.yaw;
  out->velocity[0] = d.velocity.x();
  out->velocity[1] = d.velocity.y();
}

}  // namespace

extern "C" {

const char* bk_status_name(bk_status s) {
  switch (s) {
    case BK_OK: return "ok";
    case BK_E_ARGUMENT: return "argument";
    case BK_E_DIMENSION: return "dimension";
    case BK_E_DOMAIN: return "domain";
    case BK_E_NUMERIC: return "numeric";
    case BK_E_CONTRACT: return "contract";
    case BK_E_PLACEMENT: return "placement";
    case BK_E_IO: return "io";
    case BK_E_PARSE: return "parse";
    case BK_E_MISSING_INPUT: return "missing-input";
    case BK_E_PROPERTY: return "property";
    case BK_E_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* bk_last_error(void) { return g_last_error.c_str(); }

int bk_exit_code(bk_status s) {
  switch (s) {
    case BK_OK: return 0;
    case BK_E_MISSING_INPUT: return 2;
    case BK_E_DIMENSION: return 3;
    default: return 1;
  }
}

const char* bk_version(void) { return "1.0.0"; }

void bk_set_threads(size_t n) { set_thread_count(n); }
size_t bk_threads(void) { return thread_count(); }

// ------------------------------------------------------------------ config

bk_status bk_config_default(bk_config** out) {
  return guard([&] {
    need(out, "out");
    auto c = std::make_unique<bk_config>();
    c->app = parse_config("", "<defaults>");
    *out = c.release();
  });
}

bk_status bk_config_load(const char* path, bk_config** out) {
  return guard([&] {
    need(out, "out");
    auto c = std::make_unique<bk_config>();
    c->app = load_config(need(path, "path"));
    *out = c.release();
  });
}

bk_status bk_config_parse(const char* text, bk_config** out) {
  return guard([&] {
    need(out, "out");
    auto c = std::make_unique<bk_config>();
    c->app = parse_config(need(text, "text"), "<text>");
    *out = c.release();
  });
}

bk_status bk_config_set_seed(bk_config* c, uint64_t seed) {
  return guard([&] { need(c, "config")->app.set_seed(seed); });
}

bk_status bk_config_seed(const bk_config* c, uint64_t* out) {
  return guard([&] { *need(out, "out") = need(c, "config")->app.seed; });
}

bk_status bk_config_ini(const bk_config* c, const char** out) {
  return guard([&] {
    need(out, "out");
    auto* cc = const_cast<bk_config*>(need(c, "config"));
    cc->ini = config_to_ini(cc->app);
    *out = cc->ini.c_str();
  });
}

void bk_config_free(bk_config* c) { delete c; }

// ---------------------------------------------------------------- manifest

bk_status bk_manifest_new(const char* subcommand, const char* config_path, uint64_t seed,
                          const char* out_dir, bk_manifest** out) {
  return guard([&] {
    need(out, "out");
    auto m = std::make_unique<bk_manifest>();
    m->m.subcommand = need(subcommand, "subcommand");
    m->m.config_path = config_path ? config_path : "";
    m->m.seed = seed;
    m->m.output_dir = need(out_dir, "out_dir");
    *out = m.release();
  });
}

bk_status bk_manifest_add(bk_manifest* m, const char* relative_path) {
  return guard([&] { need(m, "manifest")->m.artifacts.emplace_back(need(relative_path, "path")); });
}

bk_status bk_manifest_add_timing(bk_manifest* m, const char* name, double seconds) {
  return guard([&] { need(m, "manifest")->m.timings.emplace_back(need(name, "name"), seconds); });
}

bk_status bk_manifest_count(const bk_manifest* m, size_t* out) {
  return guard([&] { *need(out, "out") = need(m, "manifest")->m.artifacts.size(); });
}

bk_status bk_manifest_write(const bk_manifest* m) {
  return guard([&] { io::write_manifest(need(m, "manifest")->m); });
}

void bk_manifest_free(bk_manifest* m) { delete m; }

// ------------------------------------------------------------------- scene

bk_status bk_scene_generate(const bk_config* c, bk_scene** out) {
  return guard([&] {
    need(out, "out");
    const AppConfig& app = need(c, "config")->app;
    const ModelConfig& m = app.model();
    auto s = std::make_unique<bk_scene>();
    s->bundle.rig = app.rig();
    s->bundle.scene = generate_scene(app.boxes, m.bev, m.classes, app.seed);
    s->bundle.frame = simulate(s->bundle.scene, s->bundle.rig);
    *out = s.release();
  });
}

bk_status bk_scene_load(const char* dir, bk_scene** out) {
  return guard([&] {
    need(out, "out");
    auto s = std::make_unique<bk_scene>();
    s->bundle = io::load_bundle(need(dir, "dir"));
    *out = s.release();
  });
}

bk_status bk_scene_save(const bk_scene* s, const char* dir, bk_manifest* rec) {
  return guard([&] {
    need(dir, "dir");
    std::filesystem::create_directories(dir);
    record_all(rec, dir, io::save_bundle(dir, need(s, "scene")->bundle));
  });
}

bk_status bk_scene_box_count(const bk_scene* s, size_t* out) {
  return guard([&] { *need(out, "out") = need(s, "scene")->bundle.scene.boxes.size(); });
}

bk_status bk_scene_box(const bk_scene* s, size_t i, bk_box* out) {
  return guard([&] {
    need(out, "out");
    const auto& boxes = need(s, "scene")->bundle.scene.boxes;
    check_index(i, boxes.size(), "box");
    const ObjectBox& b = boxes[i];
    out->class_id = b.class_id;
    for (int k = 0; k < 3; ++k) out->center[k] = b.center[k], out->size[k] = b.size[k];
    out->yaw = b.yaw;
    out->velocity[0] = b.velocity.x();
    out->velocity[1] = b.velocity.y();
  });
}

bk_status bk_scene_camera_count(const bk_scene* s, size_t* out) {
  return guard([&] { *need(out, "out") = need(s, "scene")->bundle.rig.cameras.size(); });
}

bk_status bk_scene_point_count(const bk_scene* s, size_t* out) {
  return guard([&] { *need(out, "out") = need(s, "scene")->bundle.frame.cloud.size(); });
}

bk_status bk_scene_class_count(const bk_scene* s, size_t* out) {
  return guard([&] { *need(out, "out") = need(s, "scene")->bundle.scene.class_count; });
}

bk_status bk_scene_seed(const bk_scene* s, uint64_t* out) {
  return guard([&] { *need(out, "out") = need(s, "scene")->bundle.scene.seed; });
}

void bk_scene_free(bk_scene* s) { delete s; }

// ------------------------------------------------------------------- model

bk_status bk_model_init(const bk_config* c, bk_model** out) {
  return guard([&] {
    need(out, "out");
    const AppConfig& app = need(c, "config")->app;
    auto m = std::make_unique<bk_model>();
    m->cfg = app.model();
    m->cfg.sync();
    m->params = init_params(m->cfg, app.seed);
    *out = m.release();
  });
}

bk_status bk_model_load(const char* path, bk_model** out) {
  return guard([&] {
    need(out, "out");
    need(path, "path");
    io::ParamFile f = io::load_params(path);
    auto m = std::make_unique<bk_model>();
    m->cfg = model_from_ini(f.model_ini, std::string(path) + " (model section)");
    m->cfg.sync();
    validate_layout(m->cfg, f.params, path);
    m->params = std::move(f.params);
    *out = m.release();
  });
}

bk_status bk_model_save(const bk_model* m, const char* path, bk_manifest* rec) {
  return guard([&] {
    need(m, "model");
    io::save_params(need(path, "path"), m->params, model_to_ini(m->cfg));
    record(rec, path);
  });
}

bk_status bk_model_scalar_count(const bk_model* m, size_t* out) {
  return guard([&] { *need(out, "out") = need(m, "model")->params.scalar_count(); });
}

bk_status bk_model_class_count(const bk_model* m, size_t* out) {
  return guard([&] { *need(out, "out") = need(m, "model")->cfg.classes; });
}

void bk_model_free(bk_model* m) { delete m; }

// --------------------------------------------------------------- inference

bk_status bk_run(const bk_model* m, const bk_scene* s, int oracle, bk_result** out) {
  return guard([&] {
    need(out, "out");
    need(m, "model");
    const io::SceneBundle& b = need(s, "scene")->bundle;
    require(b.scene.class_count == m->cfg.classes, ErrorKind::kDimension,
            "run: scene has " + std::to_string(b.scene.class_count) + " classes, model expects " +
                std::to_string(m->cfg.classes));
    require(b.rig.image_channels == m->cfg.camera.image_channels, ErrorKind::kDimension,
            "run: camera images have " + std::to_string(b.rig.image_channels) +
                " channels, model expects " + std::to_string(m->cfg.camera.image_channels));
    const SceneInputs in = prepare_inputs(b.scene, b.frame, b.rig, m->cfg);
    Tensor hm;
    if (oracle) hm = oracle_heatmap(b.scene.boxes, m->cfg.bev, m->cfg.classes);
    auto r = std::make_unique<bk_result>();
    r->inf = infer(m->params, in, m->cfg, oracle ? &hm : nullptr);
    *out = r.release();
  });
}

bk_status bk_result_detection_count(const bk_result* r, size_t* out) {
  return guard([&] { *need(out, "out") = need(r, "result")->inf.detections.size(); });
}

bk_status bk_result_detection(const bk_result* r, size_t i, bk_detection* out) {
  return guard([&] {
    need(out, "out");
    const auto& dets = need(r, "result")->inf.detections;
    check_index(i, dets.size(), "detection");
    fill_detection(dets[i], out);
  });
}

bk_status bk_result_bev_shape(const bk_result* r, bk_bev_kind kind, size_t shape[3]) {
  return guard([&] {
    need(shape, "shape");
    const Tensor& t = bev_of(need(r, "result"), kind);
    for (std::size_t k = 0; k < 3; ++k) shape[k] = t.rank() > k ? t.dim(k) : 0;
  });
}

bk_status bk_result_bev_nonzero(const bk_result* r, bk_bev_kind kind, size_t* out) {
  return guard([&] {
    need(out, "out");
    const Tensor& t = bev_of(need(r, "result"), kind);
    std::size_t n = 0;
    for (std::size_t row = 0; row < t.rows(); ++row) {
      for (double v : t.row(row)) {
        if (v != 0.0) {
          ++n;
          break;
        }
      }
    }
    *out = n;
  });
}

bk_status bk_result_save_detections(const bk_result* r, const char* path, bk_manifest* rec) {
  return guard([&] {
    io::save_detections(need(path, "path"), need(r, "result")->inf.detections);
    record(rec, path);
  });
}

bk_status bk_result_save_bev(const bk_result* r, bk_bev_kind kind, const char* path,
                             bk_manifest* rec) {
  return guard([&] {
    io::save_bev_pgm(need(path, "path"), bev_of(need(r, "result"), kind));
    record(rec, path);
  });
}

const char* bk_bev_kind_name(bk_bev_kind kind) {
  switch (kind) {
    case BK_BEV_RAY: return "ray";
    case BK_BEV_POINT: return "point";
    case BK_BEV_CAMERA: return "camera";
    case BK_BEV_LIDAR: return "lidar";
    case BK_BEV_FUSED: return "fused";
  }
  return "unknown";
}

void bk_result_free(bk_result* r) { delete r; }

// ---------------------------------------------------------------- training

bk_status bk_train(const bk_config* c, bk_report** out) {
  return guard([&] {
    need(out, "out");
    const AppConfig& app = need(c, "config")->app;
    auto r = std::make_unique<bk_report>();
    r->report = train(app.train);
    r->config_ini = config_to_ini(app);
    r->model = app.train.model;
    r->model.sync();
    *out = r.release();
  });
}

bk_status bk_report_steps(const bk_report* r, size_t* out) {
  return guard([&] { *need(out, "out") = need(r, "report")->report.loss_curve.size(); });
}

bk_status bk_report_loss(const bk_report* r, size_t step, double* out) {
  return guard([&] {
    need(out, "out");
    const auto& curve = need(r, "report")->report.loss_curve;
    check_index(step, curve.size(), "step");
    *out = curve[step];
  });
}

bk_status bk_report_eval(const bk_report* r, double* map, double* nds) {
  return guard([&] {
    const EvalResult& e = need(r, "report")->report.eval;
    if (map) *map = e.map;
    if (nds) *nds = e.nds;
  });
}

bk_status bk_report_wall_seconds(const bk_report* r, double* out) {
  return guard([&] { *need(out, "out") = need(r, "report")->report.wall_seconds; });
}

bk_status bk_report_model(const bk_report* r, bk_model** out) {
  return guard([&] {
    need(out, "out");
    auto m = std::make_unique<bk_model>();
    m->cfg = need(r, "report")->model;
    m->params = r->report.params;
    *out = m.release();
  });
}

bk_status bk_report_save(const bk_report* r, const char* dir, bk_manifest* rec) {
  return guard([&] {
    need(dir, "dir");
    std::filesystem::create_directories(dir);
    record_all(rec, dir, io::save_run_report(dir, need(r, "report")->report, r->config_ini));
  });
}

void bk_report_free(bk_report* r) { delete r; }

bk_status bk_ablate(const bk_config* c, bk_ablation_progress progress, void* user,
                    bk_ablation** out) {
  return guard([&] {
    need(out, "out");
    const AppConfig& app = need(c, "config")->app;
    auto a = std::make_unique<bk_ablation>();
    a->seeds = app.ablation_seeds;
    AblationProgress cb;
    if (progress) {
      cb = [&](const AblationRow& row, std::uint64_t seed, double map) {
        progress(row.name.c_str(), seed, map, user);
      };
    }
    a->rows = ablate(app.ablation, a->seeds, ablation_grid(), cb);
    a->verdict = ablation_ordering(a->rows);
    for (const auto& row : a->rows) a->dual_names.emplace_back(to_string(row.dual_stream));
    *out = a.release();
  });
}

bk_status bk_ablation_row_count(const bk_ablation* a, size_t* out) {
  return guard([&] { *need(out, "out") = need(a, "ablation")->rows.size(); });
}

bk_status bk_ablation_get_row(const bk_ablation* a, size_t i, bk_ablation_row* out) {
  return guard([&] {
    need(out, "out");
    check_index(i, need(a, "ablation")->rows.size(), "row");
    const AblationRow& r = a->rows[i];
    out->name = r.name.c_str();
    out->dual_stream = a->dual_names[i].c_str();
    out->task_specific = r.task_specific ? 1 : 0;
    out->mean_map = r.mean_map;
    out->mean_nds = r.mean_nds;
    out->mean_final_loss = r.mean_final_loss;
  });
}

bk_status bk_ablation_ordering(const bk_ablation* a, int* holds, const char** detail) {
  return guard([&] {
    need(holds, "holds");
    *holds = need(a, "ablation")->verdict.holds ? 1 : 0;
    if (detail) *detail = a->verdict.detail.c_str();
  });
}

bk_status bk_ablation_save(const bk_ablation* a, const char* dir, bk_manifest* rec) {
  return guard([&] {
    need(dir, "dir");
    need(a, "ablation");
    std::filesystem::create_directories(dir);
    record_all(rec, dir, io::save_ablation_report(dir, a->rows, a->seeds, a->verdict));
  });
}

void bk_ablation_free(bk_ablation* a) { delete a; }

// -------------------------------------------------------------- evaluation

bk_status bk_eval_new(bk_eval** out) {
  return guard([&] { *need(out, "out") = new bk_eval(); });
}

bk_status bk_eval_add_frame(bk_eval* e, const char* detections_path, const char* scene_path) {
  return guard([&] {
    need(e, "eval");
    FrameDetections f;
    f.detections = io::load_detections(need(detections_path, "detections_path"));
    const Scene scene = io::load_scene(need(scene_path, "scene_path"));
    f.truths = scene.boxes;
    for (const auto& d : f.detections) {
      require(d.class_id < scene.class_count, ErrorKind::kDimension,
              std::string(detections_path) + ": class " + std::to_string(d.class_id) +
                  " outside the scene's " + std::to_string(scene.class_count) + " classes");
    }
    e->classes = std::max(e->classes, scene.class_count);
    e->frames.push_back(std::move(f));
    e->computed = false;
  });
}

bk_status bk_eval_compute(bk_eval* e, double* map, double* nds) {
  return guard([&] {
    need(e, "eval");
    if (!e->computed) {
      e->result = evaluate(e->frames, e->classes);
      e->computed = true;
    }
    if (map) *map = e->result.map;
    if (nds) *nds = e->result.nds;
  });
}

bk_status bk_eval_save(bk_eval* e, const char* dir, bk_manifest* rec) {
  const bk_status s = bk_eval_compute(e, nullptr, nullptr);
  if (s != BK_OK) return s;
  return guard([&] {
    need(dir, "dir");
    std::filesystem::create_directories(dir);
    record_all(rec, dir, io::save_eval_report(dir, e->result));
  });
}

void bk_eval_free(bk_eval* e) { delete e; }

// ------------------------------------------------------------ property suite

bk_status bk_check(int sabotage, const char* const* only, size_t n_only,
                   bk_suite_callback callback, void* user, size_t* failed) {
  return guard([&] {
    CheckOptions opt;
    opt.sabotage_ray_scatter = sabotage != 0;
    if (n_only) need(only, "only");
    for (std::size_t i = 0; i < n_only; ++i) opt.only.emplace_back(need(only[i], "only[i]"));
    std::size_t bad = 0;
    run_checks(opt, [&](const SuiteResult& r) {
      bad += r.passed() ? 0 : 1;
      if (!callback) return;
      bk_suite_result c{r.name.c_str(), r.invariant.c_str(), r.criterion, r.cases,
                        r.failures,     r.seconds,          r.time_limit, r.passed() ? 1 : 0,
                        r.detail.c_str()};
      callback(&c, user);
    });
    if (failed) *failed = bad;
  });
}

size_t bk_check_suite_count(void) { return check_suite_names().size(); }

const char* bk_check_suite_name(size_t i) {
  static const std::vector<std::string> names = check_suite_names();
  return i < names.size() ? names[i].c_str() : nullptr;
}

}  // extern "C"
