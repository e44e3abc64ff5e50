#include "bevkit/io.hpp"

#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "bevkit/binary_io.hpp"

namespace bevkit::io {

namespace pt = boost::property_tree;

namespace {

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(ErrorKind::kMissingInput, "cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path + " for writing");
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const double* v, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += fmt(v[i]);
  }
  return s;
}

std::vector<double> parse_numbers(const std::string& text, const std::string& where) {
  std::vector<double> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) fail(ErrorKind::kParse, where + ": '" + tok + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// Numeric CSV rows below a fixed header; errors name the file and line.
// Leading '#' lines are returned through `comments`.
std::vector<std::vector<double>> read_csv(const std::string& path, const std::string& header,
                                          std::vector<std::string>* comments = nullptr) {
  std::ifstream in = open_in(path, false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] != '#') break;
    if (comments) comments->push_back(line.substr(1));
  }
  if (line != header) {
    fail(ErrorKind::kParse,
         path + ":" + std::to_string(lineno) + ": expected header '" + header + "'");
  }
  const std::size_t cols = split_csv(header).size();
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != cols) {
      fail(ErrorKind::kParse, where + ": expected " + std::to_string(cols) + " fields, got " +
                                  std::to_string(cells.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      const auto v = parse_numbers(c, where);
      if (v.size() != 1) fail(ErrorKind::kParse, where + ": bad field '" + c + "'");
      row.push_back(v[0]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::size_t as_index(double v, const std::string& where) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) {
    fail(ErrorKind::kParse, where + ": expected a non-negative integer, got " + fmt(v));
  }
  return static_cast<std::size_t>(v);
}

std::vector<double> get_numbers(const pt::ptree& tree, const std::string& key,
                                const std::string& path, std::size_t expected) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) fail(ErrorKind::kParse, path + ": missing key '" + key + "'");
  auto v = parse_numbers(*node, path + ": key '" + key + "'");
  if (expected && v.size() != expected) {
    fail(ErrorKind::kParse, path + ": key '" + key + "' needs " + std::to_string(expected) +
                                " values, got " + std::to_string(v.size()));
  }
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = binary::get<std::uint32_t>(in);
  require(n < (1u << 26), ErrorKind::kParse, "string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) fail(ErrorKind::kIo, "unexpected end of binary stream");
  return s;
}

std::uint16_t scale16(double v, double max) {
  if (!(v > 0.0) || !(max > 0.0)) return 0;
  const double s = std::round(v / max * 65535.0);
  return static_cast<std::uint16_t>(std::clamp(s, 1.0, 65535.0));
}

}  // namespace

void save_scene(const std::string& path, const Scene& scene) {
  std::ofstream out = open_out(path, false);
  out << "# seed=" << scene.seed << " classes=" << scene.class_count << "\n";
  out << "class_id,cx,cy,cz,length,width,height,yaw,vx,vy\n";
  for (const auto& b : scene.boxes) {
    out << b.class_id << ',' << fmt(b.center.x()) << ',' << fmt(b.center.y()) << ','
        << fmt(b.center.z()) << ',' << fmt(b.size.x()) << ',' << fmt(b.size.y()) << ','
        << fmt(b.size.z()) << ',' << fmt(b.yaw) << ',' << fmt(b.velocity.x()) << ','
        << fmt(b.velocity.y()) << '\n';
  }
}

Scene load_scene(const std::string& path) {
  Scene scene;
  std::vector<std::string> comments;
  const auto rows = read_csv(path, "class_id,cx,cy,cz,length,width,height,yaw,vx,vy", &comments);
  for (const auto& c : comments) {
    std::istringstream ss(c);
    std::string tok;
    while (ss >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
      const auto v = parse_numbers(value, path + ": header field '" + key + "'");
      if (v.size() != 1) fail(ErrorKind::kParse, path + ": header field '" + key + "' is empty");
      if (key == "seed") scene.seed = std::stoull(value);
      if (key == "classes") scene.class_count = as_index(v[0], path + ": classes");
    }
  }
  for (const auto& r : rows) {
    ObjectBox b;
    b.class_id = as_index(r[0], path + ": class_id");
    if (b.class_id >= scene.class_count) {
      fail(ErrorKind::kParse, path + ": class_id " + std::to_string(b.class_id) +
                                  " is not below classes=" + std::to_string(scene.class_count));
    }
    b.center = Vec3(r[1], r[2], r[3]);
    b.size = Vec3(r[4], r[5], r[6]);
    b.yaw = r[7];
    b.velocity = Vec2(r[8], r[9]);
    scene.boxes.push_back(b);
  }
  return scene;
}

void save_cloud(const std::string& path, const PointCloud& cloud) {
  std::ofstream out = open_out(path, true);
  out.write("BKP1", 4);
  binary::put<std::uint64_t>(out, cloud.size());
  for (const auto& p : cloud.points) {
    for (double v : p) binary::put<float>(out, static_cast<float>(v));
  }
}

PointCloud load_cloud(const std::string& path) {
  std::ifstream in = open_in(path, true);
  try {
    binary::expect_magic(in, "BKP1");
    const auto n = binary::get<std::uint64_t>(in);
    require(n < (1ull << 32), ErrorKind::kParse, "point count out of range");
    PointCloud cloud;
    cloud.points.resize(n);
    for (auto& p : cloud.points) {
      for (double& v : p) v = static_cast<double>(binary::get<float>(in));
    }
    return cloud;
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

void save_rig(const std::string& path, const SensorRig& rig) {
  pt::ptree tree;
  tree.put("rig.camera_count", rig.cameras.size());
  tree.put("rig.channels", rig.image_channels);
  for (std::size_t i = 0; i < rig.cameras.size(); ++i) {
    const CameraParams& c = rig.cameras[i];
    const std::string s = "camera." + std::to_string(i);
    pt::ptree cam;
    cam.put("fx", fmt(c.fx));
    cam.put("fy", fmt(c.fy));
    cam.put("cx", fmt(c.cx));
    cam.put("cy", fmt(c.cy));
    cam.put("width", c.width);
    cam.put("height", c.height);
    double r[9];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) r[a * 3 + b] = c.rotation(a, b);
    }
    cam.put("rotation", join(r, 9));
    cam.put("translation", join(c.translation.data(), 3));
    tree.add_child(pt::ptree::path_type(s, '/'), cam);
  }
  pt::ptree lidar;
  lidar.put("origin", join(rig.lidar.origin.data(), 3));
  lidar.put("azimuths", rig.lidar.azimuths);
  lidar.put("elevations", join(rig.lidar.elevations.data(), rig.lidar.elevations.size()));
  tree.add_child("lidar", lidar);
  std::ofstream out = open_out(path, false);
  pt::write_ini(out, tree);
}

SensorRig load_rig(const std::string& path) {
  std::ifstream in = open_in(path, false);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::kParse, path + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  auto section = [&](const std::string& name) -> const pt::ptree& {
    const auto child = tree.get_child_optional(pt::ptree::path_type(name, '/'));
    if (!child) fail(ErrorKind::kParse, path + ": missing section [" + name + "]");
    return *child;
  };
  SensorRig rig;
  const pt::ptree& r = section("rig");
  const std::size_t count = as_index(get_numbers(r, "camera_count", path, 1)[0], path);
  rig.image_channels = as_index(get_numbers(r, "channels", path, 1)[0], path);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = "camera." + std::to_string(i);
    const pt::ptree& c = section(name);
    const std::string where = path + " [" + name + "]";
    CameraParams cam;
    cam.fx = get_numbers(c, "fx", where, 1)[0];
    cam.fy = get_numbers(c, "fy", where, 1)[0];
    cam.cx = get_numbers(c, "cx", where, 1)[0];
    cam.cy = get_numbers(c, "cy", where, 1)[0];
    cam.width = as_index(get_numbers(c, "width", where, 1)[0], where);
    cam.height = as_index(get_numbers(c, "height", where, 1)[0], where);
    const auto rot = get_numbers(c, "rotation", where, 9);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) cam.rotation(a, b) = rot[a * 3 + b];
    }
    const auto tr = get_numbers(c, "translation", where, 3);
    cam.translation = Vec3(tr[0], tr[1], tr[2]);
    try {
      cam.validate();
    } catch (const Error& e) {
      fail(ErrorKind::kParse, where + ": " + e.what());
    }
    rig.cameras.push_back(cam);
  }
  const pt::ptree& l = section("lidar");
  const auto origin = get_numbers(l, "origin", path + " [lidar]", 3);
  rig.lidar.origin = Vec3(origin[0], origin[1], origin[2]);
  rig.lidar.azimuths = as_index(get_numbers(l, "azimuths", path + " [lidar]", 1)[0], path);
  rig.lidar.elevations = get_numbers(l, "elevations", path + " [lidar]", 0);
  return rig;
}

void save_pgm16(const std::string& path, std::size_t width, std::size_t height,
                const std::vector<std::uint16_t>& pixels) {
  require(pixels.size() == width * height && width > 0 && height > 0, ErrorKind::kDimension,
          "save_pgm16: pixel count does not match " + std::to_string(width) + "x" +
              std::to_string(height));
  std::ofstream out = open_out(path, true);
  out << "P5\n" << width << ' ' << height << "\n65535\n";
  for (std::uint16_t p : pixels) {
    const char bytes[2] = {static_cast<char>(p >> 8), static_cast<char>(p & 0xff)};
    out.write(bytes, 2);
  }
}

Pgm16 load_pgm16(const std::string& path) {
  std::ifstream in = open_in(path, true);
  std::string magic;
  Pgm16 img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (!in || magic != "P5" || maxval != 65535 || img.width == 0 || img.height == 0) {
    fail(ErrorKind::kParse, path + ": not a 16-bit binary PGM");
  }
  in.get();
  img.pixels.resize(img.width * img.height);
  for (auto& p : img.pixels) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) fail(ErrorKind::kParse, path + ": truncated pixel data");
    p = static_cast<std::uint16_t>((b[0] << 8) | b[1]);
  }
  return img;
}

void save_bev_pgm(const std::string& path, const Tensor& bev) {
  require(bev.rank() == 3 && bev.dim(0) == bev.dim(1), ErrorKind::kDimension,
          "save_bev_pgm expects [n, n, C], got " + shape_string(bev.shape()));
  const std::size_t n = bev.dim(0), c = bev.dim(2);
  std::vector<double> norm(n * n);
  double max = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += bev[i * c + k] * bev[i * c + k];
    norm[i] = std::sqrt(s);
    max = std::max(max, norm[i]);
  }
  std::vector<std::uint16_t> px(n * n);
  for (std::size_t row = 0; row < n; ++row) {
    for (std::size_t col = 0; col < n; ++col) {
      const std::size_t gx = n - 1 - row, gy = n - 1 - col;
      px[row * n + col] = scale16(norm[gx * n + gy], max);
    }
  }
  save_pgm16(path, n, n, px);
}

void save_depth_pgm(const std::string& path, const Tensor& depth, double max_depth) {
  require(depth.rank() == 2, ErrorKind::kDimension, "save_depth_pgm expects [H, W]");
  std::vector<std::uint16_t> px(depth.numel());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = std::isfinite(depth[i]) ? scale16(std::min(depth[i], max_depth), max_depth) : 0;
  }
  save_pgm16(path, depth.dim(1), depth.dim(0), px);
}

void save_detections(const std::string& path, const std::vector<Detection>& dets) {
  std::ofstream out = open_out(path, false);
  out << "class_id,score,x,y,z,length,width,height,yaw,vx,vy\n";
  for (const auto& d : dets) {
    out << d.class_id << ',' << fmt(d.score) << ',' << fmt(d.center.x()) << ','
        << fmt(d.center.y()) << ',' << fmt(d.center.z()) << ',' << fmt(d.size.x()) << ','
        << fmt(d.size.y()) << ',' << fmt(d.size.z()) << ',' << fmt(d.yaw) << ','
        << fmt(d.velocity.x()) << ',' << fmt(d.velocity.y()) << '\n';
  }
}

std::vector<Detection> load_detections(const std::string& path) {
  std::vector<Detection> out;
  for (const auto& r : read_csv(path, "class_id,score,x,y,z,length,width,height,yaw,vx,vy")) {
    Detection d;
    d.class_id = as_index(r[0], path + ": class_id");
    d.score = r[1];
    d.center = Vec3(r[2], r[3], r[4]);
    d.size = Vec3(r[5], r[6], r[7]);
    d.yaw = r[8];
    d.velocity = Vec2(r[9], r[10]);
    out.push_back(d);
  }
  return out;
}

void save_params(const std::string& path, const ParamStore& params, const std::string& model_ini) {
  std::ofstream out = open_out(path, true);
  out.write("BKM1", 4);
  write_string(out, model_ini);
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& name : params.names()) {
    write_string(out, name);
    write_string(out, params.group(name));
    write_tensor(out, params.get(name));
  }
}

ParamFile load_params(const std::string& path) {
  std::ifstream in = open_in(path, true);
  try {
    binary::expect_magic(in, "BKM1");
    ParamFile f;
    f.model_ini = read_string(in);
    const auto n = binary::get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = read_string(in);
      std::string group = read_string(in);
      f.params.add(name, read_tensor(in), group);
    }
    return f;
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

namespace {

using ojson = nlohmann::ordered_json;

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

ojson errors_json(const TpErrors& e) {
  ojson j;
  j["ate"] = e.ate;
  j["ase"] = e.ase;
  j["aoe"] = e.aoe;
  j["ave"] = e.ave;
  j["matches"] = e.matches;
  return j;
}

ojson eval_json(const EvalResult& e) {
  ojson j;
  j["map"] = e.map;
  j["nds"] = e.nds;
  j["errors"] = errors_json(e.errors);
  ojson classes = ojson::array();
  for (const auto& c : e.classes) {
    ojson cj;
    cj["class_id"] = c.class_id;
    ojson ap = ojson::object();
    for (std::size_t i = 0; i < kDistanceThresholds.size(); ++i) ap[fmt(kDistanceThresholds[i])] = c.ap[i];
    cj["ap"] = ap;
    cj["mean"] = c.mean;
    classes.push_back(cj);
  }
  j["classes"] = classes;
  return j;
}

}  // namespace

std::vector<std::string> save_bundle(const std::string& dir, const SceneBundle& b) {
  require(b.frame.images.size() == b.rig.cameras.size(), ErrorKind::kDimension,
          "save_bundle: " + std::to_string(b.frame.images.size()) + " images for " +
              std::to_string(b.rig.cameras.size()) + " cameras");
  std::vector<std::string> names = {"scene.csv", "rig.ini", "cloud.bkp"};
  save_scene(join_path(dir, names[0]), b.scene);
  save_rig(join_path(dir, names[1]), b.rig);
  save_cloud(join_path(dir, names[2]), b.frame.cloud);
  for (std::size_t i = 0; i < b.frame.images.size(); ++i) {
    const std::string stem = "cam" + std::to_string(i);
    const CameraImage& img = b.frame.images[i];
    save_tensor(join_path(dir, stem + "_features.bkt"), img.features);
    save_tensor(join_path(dir, stem + "_depth.bkt"), img.depth);
    double far = 0.0;
    for (double d : img.depth.data()) {
      if (std::isfinite(d)) far = std::max(far, d);
    }
    save_depth_pgm(join_path(dir, stem + "_depth.pgm"), img.depth, far > 0.0 ? far : 1.0);
    for (const char* suffix : {"_features.bkt", "_depth.bkt", "_depth.pgm"}) names.push_back(stem + suffix);
  }
  return names;
}

SceneBundle load_bundle(const std::string& dir) {
  SceneBundle b;
  b.scene = load_scene(join_path(dir, "scene.csv"));
  b.rig = load_rig(join_path(dir, "rig.ini"));
  b.frame.cloud = load_cloud(join_path(dir, "cloud.bkp"));
  for (std::size_t i = 0; i < b.rig.cameras.size(); ++i) {
    const std::string stem = join_path(dir, "cam" + std::to_string(i));
    const CameraParams& cam = b.rig.cameras[i];
    CameraImage img;
    img.features = load_tensor(stem + "_features.bkt");
    img.depth = load_tensor(stem + "_depth.bkt");
    require(img.features.rank() == 3 && img.features.dim(0) == cam.height &&
                img.features.dim(1) == cam.width && img.features.dim(2) == b.rig.image_channels,
            ErrorKind::kDimension,
            stem + "_features.bkt: shape " + shape_string(img.features.shape()) +
                " does not match the rig camera");
    b.frame.images.push_back(std::move(img));
  }
  return b;
}

std::vector<std::string> save_run_report(const std::string& dir, const RunReport& r,
                                         const std::string& config_ini) {
  std::ostringstream csv;
  csv << "phase,step,loss\n";
  for (std::size_t i = 0; i < r.depth_curve.size(); ++i) csv << "depth," << i + 1 << "," << fmt(r.depth_curve[i]) << "\n";
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) csv << "joint," << i + 1 << "," << fmt(r.loss_curve[i]) << "\n";
  write_text(join_path(dir, "loss_curve.csv"), csv.str());

  ojson j;
  j["name"] = r.name;
  j["config"] = config_ini;
  j["depth_steps"] = r.depth_curve.size();
  j["steps"] = r.loss_curve.size();
  if (!r.depth_curve.empty()) {
    j["depth_loss_first"] = r.depth_curve.front();
    j["depth_loss_last"] = r.depth_curve.back();
  }
  if (!r.loss_curve.empty()) {
    j["loss_first"] = r.loss_curve.front();
    j["loss_last"] = r.loss_curve.back();
  }
  j["heldout"] = eval_json(r.eval);
  write_text(join_path(dir, "run.json"), j.dump(2) + "\n");
  return {"run.json", "loss_curve.csv"};
}

std::vector<std::string> save_eval_report(const std::string& dir, const EvalResult& e) {
  std::ostringstream csv;
  csv << "class_id";
  for (double th : kDistanceThresholds) csv << ",ap@" << fmt(th);
  csv << ",mean\n";
  for (const auto& c : e.classes) {
    csv << c.class_id;
    for (double ap : c.ap) csv << "," << fmt(ap);
    csv << "," << fmt(c.mean) << "\n";
  }
  write_text(join_path(dir, "eval.csv"), csv.str());
  write_text(join_path(dir, "eval.json"), eval_json(e).dump(2) + "\n");
  return {"eval.csv", "eval.json"};
}

std::vector<std::string> save_ablation_report(const std::string& dir,
                                              const std::vector<AblationRow>& rows,
                                              const std::vector<std::uint64_t>& seeds,
                                              const OrderingVerdict& verdict) {
  std::ostringstream csv;
  csv << "setting,dual_stream,task_specific";
  for (auto s : seeds) csv << ",map_seed" << s;
  csv << ",mean_map,mean_nds,mean_final_loss\n";
  ojson jr = ojson::array();
  for (const auto& r : rows) {
    csv << r.name << "," << to_string(r.dual_stream) << "," << (r.task_specific ? "on" : "off");
    for (double m : r.map) csv << "," << fmt(m);
    csv << "," << fmt(r.mean_map) << "," << fmt(r.mean_nds) << "," << fmt(r.mean_final_loss) << "\n";
    ojson j;
    j["setting"] = r.name;
    j["dual_stream"] = to_string(r.dual_stream);
    j["task_specific"] = r.task_specific;
    j["map"] = r.map;
    j["final_loss"] = r.final_loss;
    j["mean_map"] = r.mean_map;
    j["mean_nds"] = r.mean_nds;
    j["mean_final_loss"] = r.mean_final_loss;
    jr.push_back(j);
  }
  write_text(join_path(dir, "ablation.csv"), csv.str());
  ojson j;
  j["seeds"] = seeds;
  j["rows"] = jr;
  j["ordering_holds"] = verdict.holds;
  j["ordering"] = verdict.detail;
  write_text(join_path(dir, "ablation.json"), j.dump(2) + "\n");
  return {"ablation.csv", "ablation.json"};
}

std::string sha256_file(const std::string& path) {
  std::ifstream in = open_in(path, true);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, ErrorKind::kIo, "sha256: cannot allocate digest context");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

void write_manifest(const Manifest& m) {
  nlohmann::ordered_json j;
  j["subcommand"] = m.subcommand;
  j["config"] = m.config_path;
  j["seed"] = m.seed;
  j["output_dir"] = m.output_dir;
  nlohmann::ordered_json sums = nlohmann::ordered_json::object();
  for (const auto& a : m.artifacts) {
    sums[a] = sha256_file((std::filesystem::path(m.output_dir) / a).string());
  }
  j["artifacts"] = sums;
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &utc);
  j["timestamp"] = stamp;
  if (!m.timings.empty()) {
    nlohmann::ordered_json t = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m.timings) t[k] = v;
    j["timings_seconds"] = t;
  }
  write_text((std::filesystem::path(m.output_dir) / "manifest.json").string(), j.dump(2) + "\n");
}

std::string read_text(const std::string& path) {
  std::ifstream in = open_in(path, false);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out = open_out(path, false);
  out << text;
}

}  // namespace bevkit::io
