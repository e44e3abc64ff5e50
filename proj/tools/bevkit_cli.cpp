// bevkit command-line front end over the C API.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bevkit.h"

namespace {

// Carries a failed C call out to main, which turns it into the exit code.
struct Failure {
  bk_status status;
  std::string message;
};

void ok(bk_status s) {
  if (s != BK_OK) throw Failure{s, bk_last_error()};
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
  ~Handle() { Free(p); }
  T** out() { return &p; }
  operator T*() const { return p; }
};

using Config = Handle<bk_config, bk_config_free>;
using Manifest = Handle<bk_manifest, bk_manifest_free>;
using Scene = Handle<bk_scene, bk_scene_free>;
using Model = Handle<bk_model, bk_model_free>;
using Result = Handle<bk_result, bk_result_free>;
using Report = Handle<bk_report, bk_report_free>;
using Ablation = Handle<bk_ablation, bk_ablation_free>;
using Eval = Handle<bk_eval, bk_eval_free>;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "bevkit_out";
  std::size_t threads = 0;
};

struct Session {
  Config cfg;
  std::string config_label = "<defaults>";
  std::uint64_t seed = 0;
  std::string out;
};

Session open_session(const Globals& g) {
  Session s;
  if (g.config.empty()) {
    ok(bk_config_default(s.cfg.out()));
  } else {
    ok(bk_config_load(g.config.c_str(), s.cfg.out()));
    s.config_label = g.config;
  }
  if (g.seed) ok(bk_config_set_seed(s.cfg, *g.seed));
  ok(bk_config_seed(s.cfg, &s.seed));
  if (g.threads > 0) bk_set_threads(g.threads);
  s.out = g.out;
  std::filesystem::create_directories(s.out);
  return s;
}

void new_manifest(const Session& s, const char* subcommand, Manifest& m) {
  ok(bk_manifest_new(subcommand, s.config_label.c_str(), s.seed, s.out.c_str(), m.out()));
}

std::string in_out(const Session& s, const std::string& name) {
  return (std::filesystem::path(s.out) / name).string();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void finish(const Manifest& m, std::chrono::steady_clock::time_point t0) {
  ok(bk_manifest_add_timing(m, "wall", seconds_since(t0)));
  ok(bk_manifest_write(m));
}

void load_model(const Session& s, const std::string& params, Model& model) {
  if (params.empty()) {
    ok(bk_model_init(s.cfg, model.out()));
  } else {
    ok(bk_model_load(params.c_str(), model.out()));
  }
}

// ---------------------------------------------------------------- commands

int cmd_gen(const Globals& g) {
  const auto t0 = std::chrono::steady_clock::now();
  Session s = open_session(g);
  Manifest m;
  new_manifest(s, "gen", m);
  Scene scene;
  ok(bk_scene_generate(s.cfg, scene.out()));
  ok(bk_scene_save(scene, s.out.c_str(), m));
  finish(m, t0);
  std::size_t boxes = 0, cams = 0, points = 0;
  ok(bk_scene_box_count(scene, &boxes));
  ok(bk_scene_camera_count(scene, &cams));
  ok(bk_scene_point_count(scene, &points));
  std::printf("gen: %zu boxes, %zu cameras, 1 cloud (%zu points) -> %s\n", boxes, cams, points,
              s.out.c_str());
  return 0;
}

struct RunArgs {
  std::string scene;
  std::string params;
  bool oracle = false;
};

int cmd_run(const Globals& g, const RunArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  Session s = open_session(g);
  Manifest m;
  new_manifest(s, "run", m);
  Scene scene;
  ok(bk_scene_load(a.scene.c_str(), scene.out()));
  Model model;
  load_model(s, a.params, model);
  Result r;
  ok(bk_run(model, scene, a.oracle ? 1 : 0, r.out()));
  ok(bk_result_save_detections(r, in_out(s, "detections.csv").c_str(), m));
  for (bk_bev_kind k : {BK_BEV_RAY, BK_BEV_POINT, BK_BEV_FUSED}) {
    const std::string name = std::string("bev_") + bk_bev_kind_name(k) + ".pgm";
    ok(bk_result_save_bev(r, k, in_out(s, name).c_str(), m));
  }
  finish(m, t0);
  std::size_t n = 0;
  ok(bk_result_detection_count(r, &n));
  std::printf("run: %zu detections%s -> %s\n", n, a.oracle ? " (oracle heatmap)" : "", s.out.c_str());
  return 0;
}

int cmd_dump_bev(const Globals& g, const RunArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  Session s = open_session(g);
  Manifest m;
  new_manifest(s, "dump-bev", m);
  Scene scene;
  ok(bk_scene_load(a.scene.c_str(), scene.out()));
  Model model;
  load_model(s, a.params, model);
  Result r;
  ok(bk_run(model, scene, a.oracle ? 1 : 0, r.out()));
  for (bk_bev_kind k : {BK_BEV_RAY, BK_BEV_POINT, BK_BEV_CAMERA, BK_BEV_LIDAR, BK_BEV_FUSED}) {
    const std::string name = std::string("bev_") + bk_bev_kind_name(k) + ".pgm";
    ok(bk_result_save_bev(r, k, in_out(s, name).c_str(), m));
    std::size_t shape[3] = {0, 0, 0}, nz = 0;
    ok(bk_result_bev_shape(r, k, shape));
    ok(bk_result_bev_nonzero(r, k, &nz));
    std::printf("%-7s %zux%zu, %zu channels, %zu nonzero cells -> %s\n", bk_bev_kind_name(k), shape[0],
                shape[1], shape[2], nz, name.c_str());
  }
  finish(m, t0);
  return 0;
}

int cmd_train(const Globals& g) {
  const auto t0 = std::chrono::steady_clock::now();
  Session s = open_session(g);
  Manifest m;
  new_manifest(s, "train", m);
  Report rep;
  ok(bk_train(s.cfg, rep.out()));
  ok(bk_report_save(rep, s.out.c_str(), m));
  Model model;
  ok(bk_report_model(rep, model.out()));
  ok(bk_model_save(model, in_out(s, "model.bkm").c_str(), m));
  finish(m, t0);
  std::size_t steps = 0;
  double first = 0, last = 0, map = 0, nds = 0;
  ok(bk_report_steps(rep, &steps));
  if (steps > 0) {
    ok(bk_report_loss(rep, 0, &first));
    ok(bk_report_loss(rep, steps - 1, &last));
  }
  ok(bk_report_eval(rep, &map, &nds));
  std::printf("train: %zu steps, loss %.4f -> %.4f, held-out mAP %.4f NDS %.4f -> %s\n", steps,
              first, last, map, nds, s.out.c_str());
  return 0;
}

int cmd_ablate(const Globals& g) {
  const auto t0 = std::chrono::steady_clock::now();
  Session s = open_session(g);
  Manifest m;
  new_manifest(s, "ablate", m);
  Ablation a;
  auto progress = [](const char* setting, std::uint64_t seed, double map, void*) {
    std::printf("  seed %llu %-12s mAP %.4f\n", static_cast<unsigned long long>(seed), setting, map);
    std::fflush(stdout);
  };
  ok(bk_ablate(s.cfg, progress, nullptr, a.out()));
  ok(bk_ablation_save(a, s.out.c_str(), m));
  finish(m, t0);
  std::size_t rows = 0;
  ok(bk_ablation_row_count(a, &rows));
  std::printf("%-12s %-6s %-4s %9s %9s %10s\n", "setting", "dst", "tsp", "mean mAP", "mean NDS",
              "final loss");
  for (std::size_t i = 0; i < rows; ++i) {
    bk_ablation_row r{};
    ok(bk_ablation_get_row(a, i, &r));
    std::printf("%-12s %-6s %-4s %9.4f %9.4f %10.4f\n", r.name, r.dual_stream,
                r.task_specific ? "on" : "off", r.mean_map, r.mean_nds, r.mean_final_loss);
  }
  int holds = 0;
  const char* detail = nullptr;
  ok(bk_ablation_ordering(a, &holds, &detail));
  std::printf("ordering %s: %s\n", holds ? "holds" : "VIOLATED", detail);
  return holds ? 0 : 1;
}

struct EvalArgs {
  std::vector<std::string> scenes;
  std::vector<std::string> detections;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  if (a.scenes.size() != a.detections.size() || a.scenes.empty()) {
    throw Failure{BK_E_ARGUMENT, "eval needs matching --scene/--detections pairs"};
  }
  Session s = open_session(g);
  Manifest m;
  new_manifest(s, "eval", m);
  Eval e;
  ok(bk_eval_new(e.out()));
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    ok(bk_eval_add_frame(e, a.detections[i].c_str(), a.scenes[i].c_str()));
  }
  double map = 0, nds = 0;
  ok(bk_eval_compute(e, &map, &nds));
  ok(bk_eval_save(e, s.out.c_str(), m));
  finish(m, t0);
  std::printf("eval: %zu frames, mAP %.4f, NDS %.4f -> %s\n", a.scenes.size(), map, nds, s.out.c_str());
  return 0;
}

struct CheckArgs {
  std::string sabotage;
  std::vector<std::string> only;
};

std::string csv_quote(const std::string& s) {
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

int cmd_check(const Globals& g, const CheckArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!a.sabotage.empty() && a.sabotage != "ray-scatter") {
    throw Failure{BK_E_ARGUMENT, "unknown sabotage '" + a.sabotage + "' (known: ray-scatter)"};
  }
  Session s = open_session(g);
  Manifest m;
  new_manifest(s, "check", m);

  struct Collect {
    std::string csv = "suite,criterion,status,cases,failures,invariant,detail\n";
    std::vector<std::pair<std::string, double>> times;
  } col;
  auto cb = [](const bk_suite_result* r, void* user) {
    auto* c = static_cast<Collect*>(user);
    std::printf("%-4s %-24s c%-2d %5zu cases %4zu failed %7.2fs  %s\n", r->passed ? "PASS" : "FAIL",
                r->name, r->criterion, r->cases, r->failures, r->seconds, r->invariant);
    if (!r->passed || r->detail[0]) std::printf("       %s\n", r->detail);
    if (r->time_limit > 0 && r->seconds >= r->time_limit) {
      std::printf("       over the %.0f s time limit\n", r->time_limit);
    }
    std::fflush(stdout);
    c->csv += std::string(r->name) + "," + std::to_string(r->criterion) + "," +
              (r->passed ? "pass" : "fail") + "," + std::to_string(r->cases) + "," +
              std::to_string(r->failures) + "," + csv_quote(r->invariant) + "," +
              csv_quote(r->detail) + "\n";
    c->times.emplace_back(r->name, r->seconds);
  };
  std::vector<const char*> only;
  for (const auto& o : a.only) only.push_back(o.c_str());
  std::size_t failed = 0;
  ok(bk_check(a.sabotage.empty() ? 0 : 1, only.data(), only.size(), cb, &col, &failed));

  constexpr double kBudget = 300.0;
  const double total = seconds_since(t0);
  const std::string path = in_out(s, "check.csv");
  std::ofstream(path, std::ios::binary) << col.csv;
  ok(bk_manifest_add(m, "check.csv"));
  for (const auto& [name, sec] : col.times) ok(bk_manifest_add_timing(m, name.c_str(), sec));
  finish(m, t0);
  const bool in_budget = total < kBudget;
  std::printf("check: %zu of %zu suites failed, %.1f s total (budget %.0f s)%s\n", failed,
              col.times.size(), total, kBudget, in_budget ? "" : " OVER BUDGET");
  return failed == 0 && in_budget ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bevkit: camera/LiDAR bird's-eye-view detection toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "INI configuration file");
  app.add_option("--seed", g.seed, "Seed for every random stream (overrides the config)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (BEVKIT_THREADS overrides)");

  RunArgs run_args;
  EvalArgs eval_args;
  CheckArgs check_args;

  auto* gen = app.add_subcommand("gen", "Generate a scene with its sensor data");
  auto* run = app.add_subcommand("run", "Run the detection pipeline on a generated scene");
  run->add_option("--scene", run_args.scene, "Directory written by gen")->required();
  run->add_option("--params", run_args.params, "Model file from train (default: untrained)");
  run->add_flag("--oracle", run_args.oracle, "Use the ground-truth heatmap for candidates");
  auto* train = app.add_subcommand("train", "Train on synthetic scenes");
  auto* ablate = app.add_subcommand("ablate", "Run the module ablation grid");
  auto* eval = app.add_subcommand("eval", "Evaluate detections against scenes");
  eval->add_option("--scene", eval_args.scenes, "scene.csv (repeat, paired with --detections)")->required();
  eval->add_option("--detections", eval_args.detections, "detections.csv (repeat)")->required();
  auto* check = app.add_subcommand("check", "Run the property suites");
  check->add_option("--sabotage", check_args.sabotage, "Inject a fault: ray-scatter");
  check->add_option("--only", check_args.only, "Run suites with these name prefixes");
  auto* dump = app.add_subcommand("dump-bev", "Write every intermediate BEV as PGM");
  dump->add_option("--scene", run_args.scene, "Directory written by gen")->required();
  dump->add_option("--params", run_args.params, "Model file from train (default: untrained)");
  dump->add_flag("--oracle", run_args.oracle, "Use the ground-truth heatmap for candidates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen(g);
    if (*run) return cmd_run(g, run_args);
    if (*train) return cmd_train(g);
    if (*ablate) return cmd_ablate(g);
    if (*eval) return cmd_eval(g, eval_args);
    if (*check) return cmd_check(g, check_args);
    if (*dump) return cmd_dump_bev(g, run_args);
  } catch (const Failure& f) {
    std::fprintf(stderr, "bevkit: %s error: %s\n", bk_status_name(f.status), f.message.c_str());
    return bk_exit_code(f.status);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "bevkit: %s\n", e.what());
    return 1;
  }
  return 1;
}
