#include "bevkit/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "bevkit/error.hpp"
#include "bevkit/io.hpp"

namespace bevkit {

namespace pt = boost::property_tree;

namespace {

struct Reader {
  std::string source;

  [[noreturn]] void bad(const std::string& key, const std::string& what) const {
    fail(ErrorKind::kParse, source + ": key '" + key + "': " + what);
  }

  std::uint64_t u64(const std::string& key, const std::string& v) const {
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
      bad(key, "expected a non-negative integer, got '" + v + "'");
    }
    return out;
  }

  std::size_t count(const std::string& key, const std::string& v) const {
    const auto out = u64(key, v);
    if (out == 0) bad(key, "must be at least 1");
    return static_cast<std::size_t>(out);
  }

  double real(const std::string& key, const std::string& v) const {
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty() || !std::isfinite(out)) {
      bad(key, "expected a finite number, got '" + v + "'");
    }
    return out;
  }

  double positive(const std::string& key, const std::string& v) const {
    const double out = real(key, v);
    if (!(out > 0.0)) bad(key, "must be positive");
    return out;
  }

  bool flag(const std::string& key, const std::string& v) const {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    bad(key, "expected true/false/on/off/1/0, got '" + v + "'");
  }
};

void apply_model_key(ModelConfig& m, const Reader& r, const std::string& key,
                     const std::string& name, const std::string& v) {
  if (name == "dual_stream") {
    try {
      m.dual_stream = parse_dual_stream(v);
    } catch (const Error& e) {
      r.bad(key, e.what());
    }
  } else if (name == "task_specific") {
    m.task_specific = r.flag(key, v);
  } else if (name == "stop_aux_gradient") {
    m.stop_aux_gradient = r.flag(key, v);
  } else if (name == "channels") {
    const std::size_t c = r.count(key, v);
    if (c % 4 != 0) r.bad(key, "must be a multiple of 4");
    m.lidar.bev_channels = c;
    m.camera.camera_bev_channels = c;
    m.predictor.channels = c;
    m.predictor.ffn_hidden = c;
    m.predictor.head_hidden = c;
  } else if (name == "candidates") {
    m.predictor.max_candidates = r.count(key, v);
  } else if (name == "depth_bins") {
    m.camera.bins.count = r.count(key, v);
  } else if (name == "d_min") {
    m.camera.bins.d_min = r.positive(key, v);
  } else if (name == "d_max") {
    m.camera.bins.d_max = r.positive(key, v);
  } else {
    r.bad(key, "unknown key");
  }
}

void apply_bev_key(BEVConfig& b, const Reader& r, const std::string& key, const std::string& name,
                   const std::string& v) {
  if (name == "x_min") b.x_min = r.real(key, v);
  else if (name == "x_max") b.x_max = r.real(key, v);
  else if (name == "y_min") b.y_min = r.real(key, v);
  else if (name == "y_max") b.y_max = r.real(key, v);
  else if (name == "n") b.n = r.count(key, v);
  else r.bad(key, "unknown key");
}

void for_each_model(AppConfig& c, const std::function<void(ModelConfig&)>& fn) {
  fn(c.train.model);
  fn(c.ablation.model);
}

void apply_schedule_key(TrainConfig& t, const Reader& r, const std::string& key,
                        const std::string& name, const std::string& v) {
  if (name == "steps") t.steps = r.count(key, v);
  else if (name == "pretrain_steps") t.depth_pretrain_steps = r.u64(key, v);
  else r.bad(key, "unknown key");
}

void apply_key(AppConfig& c, const Reader& r, const std::string& section, const std::string& name,
               const std::string& v) {
  const std::string key = section + "." + name;
  if (section == "general") {
    if (name == "seed") c.set_seed(r.u64(key, v));
    else r.bad(key, "unknown key");
  } else if (section == "scene") {
    if (name == "boxes") {
      c.boxes = r.u64(key, v);
    } else if (name == "classes") {
      const std::size_t k = r.count(key, v);
      for_each_model(c, [&](ModelConfig& m) { m.classes = k; });
    } else {
      r.bad(key, "unknown key");
    }
  } else if (section == "bev") {
    for_each_model(c, [&](ModelConfig& m) { apply_bev_key(m.bev, r, key, name, v); });
  } else if (section == "rig") {
    if (name == "cameras") c.rig_cameras = r.count(key, v);
    else if (name == "image_size") c.rig_image_size = r.count(key, v);
    else r.bad(key, "unknown key");
  } else if (section == "model") {
    for_each_model(c, [&](ModelConfig& m) { apply_model_key(m, r, key, name, v); });
  } else if (section == "loss") {
    for (TrainConfig* t : {&c.train, &c.ablation}) {
      LossWeights& w = t->weights;
      if (name == "cls_aux") w.cls_aux = r.real(key, v);
      else if (name == "box_aux") w.box_aux = r.real(key, v);
      else if (name == "depth") w.depth = r.real(key, v);
      else if (name == "heat") w.heat = r.real(key, v);
      else if (name == "box") w.box = r.real(key, v);
      else r.bad(key, "unknown key");
    }
  } else if (section == "train") {
    if (name == "steps" || name == "pretrain_steps") {
      apply_schedule_key(c.train, r, key, name, v);
      return;
    }
    for (TrainConfig* t : {&c.train, &c.ablation}) {
      if (name == "lr") t->lr = r.positive(key, v);
      else if (name == "depth_lr") t->depth_lr = r.positive(key, v);
      else if (name == "clip_norm") t->clip_norm = r.real(key, v);
      else if (name == "train_scenes") t->data.train_scenes = r.count(key, v);
      else if (name == "heldout_scenes") t->data.heldout_scenes = r.u64(key, v);
      else if (name == "boxes") t->data.boxes_per_scene = r.u64(key, v);
      else if (name == "cameras") t->data.cameras = r.count(key, v);
      else if (name == "image_size") t->data.image_size = r.count(key, v);
      else r.bad(key, "unknown key");
    }
  } else if (section == "ablate") {
    if (name == "seeds") {
      c.ablation_seeds.clear();
      std::stringstream ss(v);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        c.ablation_seeds.push_back(r.u64(key, tok));
      }
      if (c.ablation_seeds.empty()) r.bad(key, "needs at least one seed");
    } else {
      apply_schedule_key(c.ablation, r, key, name, v);
    }
  } else {
    fail(ErrorKind::kParse, r.source + ": unknown section [" + section + "]");
  }
}

pt::ptree read_tree(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::kParse, source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  return tree;
}

}  // namespace

SensorRig AppConfig::rig() const { return default_rig(model().classes, rig_image_size, rig_cameras); }

void AppConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  train.data.seed = s;
  ablation.data.seed = s;
}

AppConfig parse_config(const std::string& text, const std::string& source) {
  AppConfig c;
  c.source = source;
  c.set_seed(c.seed);
  const Reader r{source};
  for (const auto& [section, body] : read_tree(text, source)) {
    if (body.empty() && !body.data().empty()) {
      fail(ErrorKind::kParse, source + ": key '" + section + "' is outside any section");
    }
    static const std::set<std::string> known = {"general", "scene", "bev",   "rig",
                                                "model",   "loss",  "train", "ablate"};
    if (!known.count(section)) fail(ErrorKind::kParse, source + ": unknown section [" + section + "]");
    for (const auto& [name, value] : body) apply_key(c, r, section, name, value.data());
  }
  for (TrainConfig* t : {&c.train, &c.ablation}) {
    t->model.sync();
    try {
      t->model.bev.validate();
      t->model.camera.bins.validate();
      t->weights.validate();
    } catch (const Error& e) {
      fail(ErrorKind::kParse, source + ": " + e.what());
    }
  }
  return c;
}

AppConfig load_config(const std::string& path) { return parse_config(io::read_text(path), path); }

std::string model_to_ini(const ModelConfig& m) {
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "[scene]\nclasses=" << m.classes << "\n";
  out << "[bev]\nx_min=" << real(m.bev.x_min) << "\nx_max=" << real(m.bev.x_max)
      << "\ny_min=" << real(m.bev.y_min) << "\ny_max=" << real(m.bev.y_max) << "\nn=" << m.bev.n
      << "\n";
  out << "[model]\ndual_stream=" << to_string(m.dual_stream)
      << "\ntask_specific=" << (m.task_specific ? "true" : "false")
      << "\nstop_aux_gradient=" << (m.stop_aux_gradient ? "true" : "false")
      << "\nchannels=" << m.predictor.channels << "\ncandidates=" << m.predictor.max_candidates
      << "\ndepth_bins=" << m.camera.bins.count << "\nd_min=" << real(m.camera.bins.d_min)
      << "\nd_max=" << real(m.camera.bins.d_max) << "\n";
  return out.str();
}

std::string config_to_ini(const AppConfig& c) {
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  const TrainConfig& t = c.train;
  const TrainConfig& a = c.ablation;
  std::ostringstream out;
  out << "[general]\nseed=" << c.seed << "\n";
  out << "[rig]\ncameras=" << c.rig_cameras << "\nimage_size=" << c.rig_image_size << "\n";
  // model_to_ini opens [scene]; the box count joins that section.
  std::string model = model_to_ini(t.model);
  const std::string scene_head = "[scene]\n";
  model.insert(scene_head.size(), "boxes=" + std::to_string(c.boxes) + "\n");
  out << model;
  out << "[loss]\ncls_aux=" << real(t.weights.cls_aux) << "\nbox_aux=" << real(t.weights.box_aux)
      << "\ndepth=" << real(t.weights.depth) << "\nheat=" << real(t.weights.heat)
      << "\nbox=" << real(t.weights.box) << "\n";
  out << "[train]\nsteps=" << t.steps << "\npretrain_steps=" << t.depth_pretrain_steps
      << "\nlr=" << real(t.lr) << "\ndepth_lr=" << real(t.depth_lr)
      << "\nclip_norm=" << real(t.clip_norm) << "\ntrain_scenes=" << t.data.train_scenes
      << "\nheldout_scenes=" << t.data.heldout_scenes << "\nboxes=" << t.data.boxes_per_scene
      << "\ncameras=" << t.data.cameras << "\nimage_size=" << t.data.image_size << "\n";
  out << "[ablate]\nsteps=" << a.steps << "\npretrain_steps=" << a.depth_pretrain_steps << "\nseeds=";
  for (std::size_t i = 0; i < c.ablation_seeds.size(); ++i) {
    out << (i ? "," : "") << c.ablation_seeds[i];
  }
  out << "\n";
  return out.str();
}

ModelConfig model_from_ini(const std::string& text, const std::string& source) {
  return parse_config(text, source).train.model;
}

}  // namespace bevkit
