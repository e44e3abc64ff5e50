#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bevkit/metrics.hpp"
#include "bevkit/model.hpp"
#include "bevkit/nn.hpp"
#include "bevkit/scene.hpp"
#include "bevkit/training.hpp"

namespace bevkit::io {

// Boxes as CSV: a "# seed=<u64> classes=<n>" line, then a header row
// class_id,cx,cy,cz,length,width,height,yaw,vx,vy. Values are written with
// 17 significant digits so they round-trip exactly.
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

// Point cloud: "BKP1", u64 count, then 5 f32 per point (all LE).
void save_cloud(const std::string& path, const PointCloud& cloud);
PointCloud load_cloud(const std::string& path);

// Camera rig as INI: [rig] camera_count, channels; [camera.N] intrinsics,
// size, rotation (9 values row-major), translation; [lidar] origin,
// azimuths, elevations.
void save_rig(const std::string& path, const SensorRig& rig);
SensorRig load_rig(const std::string& path);

// Binary 16-bit PGM (P5, maxval 65535, big-endian samples).
void save_pgm16(const std::string& path, std::size_t width, std::size_t height,
                const std::vector<std::uint16_t>& pixels);
struct Pgm16 {
  std::size_t width = 0, height = 0;
  std::vector<std::uint16_t> pixels;
};
Pgm16 load_pgm16(const std::string& path);

// BEV tensor [n, n, C] as an n x n image of per-cell L2 norms scaled to the
// maximum. Nonzero cells map to at least 1, so the nonzero count is kept.
// Image rows run along +x descending, columns along +y descending (top =
// forward, left = left).
void save_bev_pgm(const std::string& path, const Tensor& bev);

// Depth image [H, W] scaled to `max_depth`; misses (inf) are 0.
void save_depth_pgm(const std::string& path, const Tensor& depth, double max_depth);

// Detections CSV: class_id,score,x,y,z,length,width,height,yaw,vx,vy.
void save_detections(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> load_detections(const std::string& path);

// Parameters: "BKM1", u32 length + model config INI text, u32 entry count,
// then per entry name, group (u32 length + bytes) and a BKT1 tensor.
void save_params(const std::string& path, const ParamStore& params, const std::string& model_ini);
struct ParamFile {
  ParamStore params;
  std::string model_ini;
};
ParamFile load_params(const std::string& path);

// Everything `gen` writes for one scene.
struct SceneBundle {
  Scene scene;
  SensorRig rig;
  SensorFrame frame;
};

// scene.csv, rig.ini, cloud.bkp, and per camera i: cam<i>_features.bkt,
// cam<i>_depth.bkt (lossless) and cam<i>_depth.pgm (preview). Returns the
// file names.
std::vector<std::string> save_bundle(const std::string& dir, const SceneBundle& b);
// Reads the files save_bundle writes; a missing file raises kMissingInput.
SceneBundle load_bundle(const std::string& dir);

// Report writers return the names of the files they wrote inside `dir`.

// run.json (config echo, curve summaries, held-out evaluation) and
// loss_curve.csv with columns phase,step,loss.
std::vector<std::string> save_run_report(const std::string& dir, const RunReport& r,
                                         const std::string& config_ini);

// eval.csv (per class AP at each distance threshold) and eval.json.
std::vector<std::string> save_eval_report(const std::string& dir, const EvalResult& e);

// ablation.csv (one row per setting) and ablation.json with the ordering
// verdict.
std::vector<std::string> save_ablation_report(const std::string& dir,
                                              const std::vector<AblationRow>& rows,
                                              const std::vector<std::uint64_t>& seeds,
                                              const OrderingVerdict& verdict);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

struct Manifest {
  std::string subcommand;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::vector<std::string> artifacts;  // file names relative to output_dir
  // Durations in seconds; like the timestamp they vary between reruns.
  std::vector<std::pair<std::string, double>> timings;
};

// Writes <output_dir>/manifest.json with checksums of every artifact and a
// UTC timestamp and the timings.
void write_manifest(const Manifest& m);

// Reads a whole text file; missing files raise kMissingInput.
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace bevkit::io
