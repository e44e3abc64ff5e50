#include "bevkit/check.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "bevkit/config.hpp"
#include "bevkit/error.hpp"
#include "bevkit/io.hpp"
#include "bevkit/losses.hpp"
#include "bevkit/metrics.hpp"
#include "bevkit/model.hpp"
#include "bevkit/predictor.hpp"
#include "bevkit/rng.hpp"
#include "bevkit/scene.hpp"
#include "bevkit/training.hpp"
#include "bevkit/view_transform.hpp"

namespace bevkit {

namespace {

// Collects case outcomes for one suite; keeps the first failure message and
// the worst measured deviation.
class Suite {
 public:
  explicit Suite(SuiteResult& r) : r_(r) {}

  void pass() { ++r_.cases; }
  void check(bool ok, const std::string& what) {
    ++r_.cases;
    if (ok) return;
    if (r_.failures++ == 0) first_ = what;
  }
  void within(double dev, double tol, const std::string& what) {
    worst_ = std::max(worst_, std::isnan(dev) ? std::numeric_limits<double>::infinity() : dev);
    check(dev <= tol, what + ": deviation " + fmt(dev) + " > " + fmt(tol));
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  double worst() const { return worst_; }

  void finish(bool report_worst) {
    std::string d = notes_;
    if (report_worst) d = "max deviation " + fmt(worst_) + (d.empty() ? "" : "; " + d);
    if (!first_.empty()) d += (d.empty() ? "" : "; ") + std::string("first failure: ") + first_;
    r_.detail = d;
  }

  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
  }

 private:
  SuiteResult& r_;
  std::string first_;
  std::string notes_;
  double worst_ = 0.0;
};

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor x(std::move(shape));
  for (double& v : x.data()) v = rng.uniform(lo, hi);
  return x;
}

CameraParams random_camera(Rng& rng, std::size_t size) {
  const double f = rng.uniform(0.6, 1.4) * static_cast<double>(size);
  const double c = 0.5 * static_cast<double>(size);
  const Vec3 pos(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(0.5, 2.5));
  return make_camera(f, f * rng.uniform(0.9, 1.1), c + rng.uniform(-1.0, 1.0),
                     c + rng.uniform(-1.0, 1.0), size, size, pos, rng.uniform(-M_PI, M_PI),
                     rng.uniform(-0.1, 0.5));
}

// ---------------------------------------------------------------- geometry

void geometry_roundtrip(Suite& s) {
  Rng rng(101);
  for (int c = 0; c < 20; ++c) {
    const CameraParams cam = random_camera(rng, 32 + 16 * rng.index(4));
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      // Draw in image space so every point is in view.
      const double u = rng.uniform(0.0, static_cast<double>(cam.width));
      const double v = rng.uniform(0.0, static_cast<double>(cam.height));
      const double d = rng.uniform(0.2, 60.0);
      const Vec3 p = unproject(u, v, d, cam);
      const auto pr = project(p, cam);
      if (!pr) {
        s.check(false, "camera " + std::to_string(c) + ": in-view point reported out of view");
        continue;
      }
      const Vec3 back = unproject(pr->u, pr->v, pr->depth, cam);
      worst = std::max(worst, (back - p).norm());
    }
    s.within(worst, 1e-9, "camera " + std::to_string(c));
  }
}

void scene_first_hit(Suite& s) {
  const BEVConfig bev;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene scene = generate_scene(4, bev, 3, seed);
    Rng rng(seed + 500);
    bool ok = true;
    for (int i = 0; i < 200 && ok; ++i) {
      const Vec3 o(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 2.5));
      const Vec3 d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.6, 0.2));
      std::optional<RayHit> best;
      if (d.z() < 0.0) best = RayHit{-o.z() / d.z(), -1, Vec3::UnitZ()};
      for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
        const auto h = intersect_box(scene.boxes[b], o, d);
        if (h && h->t > 0.0 && (!best || h->t < best->t)) best = RayHit{h->t, int(b), h->normal};
      }
      const auto got = cast_ray(scene, o, d);
      ok = got.has_value() == best.has_value() &&
           (!got || (got->box == best->box && std::abs(got->t - best->t) <= 1e-12));
    }
    s.check(ok, "seed " + std::to_string(seed) + ": first hit differs from brute force");
  }
}

// -------------------------------------------------------------- ray stream

struct RayCase {
  BEVConfig bev;
  DepthBins bins;
  std::vector<CameraParams> cams;
  std::vector<FrustumIndex> index;
  std::vector<Tensor> context, depth;
  std::size_t stride = 2, fw = 8, fh = 8;
};

RayCase ray_case(std::uint64_t seed, std::size_t channels) {
  RayCase rc;
  rc.bev.n = 16;
  rc.bins = DepthBins{0.5, 8.5, 4};
  Rng rng(seed * 7919 + 3);
  for (int c = 0; c < 2; ++c) {
    rc.cams.push_back(random_camera(rng, rc.fw * rc.stride));
    rc.index.push_back(build_frustum(rc.cams.back(), rc.bins, rc.bev, rc.stride));
    rc.context.push_back(random_tensor(rng, {rc.fw * rc.fh, channels}));
    rc.depth.push_back(random_tensor(rng, {rc.fw * rc.fh, rc.bins.count}, 0.0, 1.0));
  }
  return rc;
}

Tensor run_ray_stream(const RayCase& rc) {
  Tape t(false);
  std::vector<Var> ctx, dep;
  for (std::size_t c = 0; c < rc.cams.size(); ++c) {
    ctx.push_back(t.constant(rc.context[c]));
    dep.push_back(t.constant(rc.depth[c]));
  }
  return t.value(ray_stream(t, ctx, dep, rc.index, rc.bev));
}

// Triple loop over camera, feature pixel and depth bin.
Tensor ray_oracle(const RayCase& rc) {
  const std::size_t ch = rc.context[0].cols();
  Tensor out({rc.bev.n, rc.bev.n, ch});
  for (std::size_t c = 0; c < rc.cams.size(); ++c) {
    for (std::size_t py = 0; py < rc.fh; ++py) {
      for (std::size_t px = 0; px < rc.fw; ++px) {
        const std::size_t pixel = py * rc.fw + px;
        const double u = (static_cast<double>(px) + 0.5) * static_cast<double>(rc.stride);
        const double v = (static_cast<double>(py) + 0.5) * static_cast<double>(rc.stride);
        for (std::size_t b = 0; b < rc.bins.count; ++b) {
          const Vec3 w = unproject(u, v, rc.bins.center(b), rc.cams[c]);
          const auto cell = bev_index(w.x(), w.y(), rc.bev);
          if (!cell) continue;
          const double d = rc.depth[c][pixel * rc.bins.count + b];
          for (std::size_t k = 0; k < ch; ++k) {
            out[rc.bev.flat(*cell) * ch + k] += rc.context[c][pixel * ch + k] * d;
          }
        }
      }
    }
  }
  return out;
}

void ray_stream_oracle(Suite& s) {
  std::size_t landed = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const RayCase rc = ray_case(seed, 3);
    for (const auto& ix : rc.index) landed += ix.entries.size();
    s.within(max_abs_diff(run_ray_stream(rc), ray_oracle(rc)), 1e-9, "seed " + std::to_string(seed));
  }
  s.note(std::to_string(landed) + " (pixel, bin) entries in range");
}

void ray_stream_one_hot(Suite& s) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RayCase rc = ray_case(seed, 1);
    rc.cams.resize(1);
    rc.index.resize(1);
    const std::size_t pixels = rc.fw * rc.fh;
    // Channel p carries only pixel p, so each channel shows that pixel's cells.
    Tensor identity({pixels, pixels});
    for (std::size_t p = 0; p < pixels; ++p) identity[p * pixels + p] = 1.0;
    Tensor onehot({pixels, rc.bins.count});
    Rng rng(seed + 11);
    for (std::size_t p = 0; p < pixels; ++p) onehot[p * rc.bins.count + rng.index(rc.bins.count)] = 1.0;
    rc.context = {identity};
    rc.depth = {onehot};
    const Tensor out = run_ray_stream(rc);
    std::size_t worst = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
      std::size_t touched = 0;
      for (std::size_t cell = 0; cell < rc.bev.cells(); ++cell) touched += out[cell * pixels + p] != 0.0;
      worst = std::max(worst, touched);
    }
    s.check(worst <= 1, "seed " + std::to_string(seed) + ": a pixel touched " + std::to_string(worst) + " cells");
  }
}

void ray_stream_linearity(Suite& s) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RayCase a = ray_case(seed, 3);
    RayCase b = a;
    Rng rng(seed + 77);
    for (auto& d : b.depth) d = random_tensor(rng, d.shape(), 0.0, 1.0);
    RayCase mix = a;
    for (std::size_t c = 0; c < a.depth.size(); ++c) {
      for (std::size_t i = 0; i < a.depth[c].numel(); ++i) {
        mix.depth[c][i] = 0.3 * a.depth[c][i] + 0.7 * b.depth[c][i];
      }
    }
    Tensor ra = run_ray_stream(a), rb = run_ray_stream(b), rm = run_ray_stream(mix);
    for (std::size_t i = 0; i < ra.numel(); ++i) ra[i] = 0.3 * ra[i] + 0.7 * rb[i];
    s.within(max_abs_diff(ra, rm), 1e-9, "seed " + std::to_string(seed));
  }
}

// ------------------------------------------------------------ point stream

struct PointCase {
  BEVConfig bev;
  SensorRig rig;
  PointCloud cloud;
};

PointCase point_case(std::uint64_t seed) {
  PointCase pc;
  pc.bev.n = 16;
  pc.rig = default_rig(3, 32, seed % 2 == 0 ? 6 : 2);
  const Scene scene = generate_scene(4, pc.bev, 3, seed);
  pc.cloud = lidar_scan(scene, pc.rig.lidar.origin, 128, pc.rig.lidar.elevations);
  // A few points outside the grid and behind every camera plane.
  Rng rng(seed + 9);
  for (int i = 0; i < 8; ++i) {
    pc.cloud.points.push_back({rng.uniform(-12, 12), rng.uniform(-12, 12), rng.uniform(-0.5, 3), 0.0, 0.0});
  }
  return pc;
}

void point_stream_partition(Suite& s) {
  std::size_t points = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PointCase pc = point_case(seed);
    const BinPartition part = partition_points(pc.cloud, pc.bev);
    std::vector<int> seen(pc.cloud.size(), 0);
    for (std::size_t cell = 0; cell < part.bins.size(); ++cell) {
      for (auto i : part.bins[cell]) {
        ++seen[i];
        if (part.cell_of_point[i] != static_cast<std::int64_t>(cell)) seen[i] = 99;
      }
    }
    bool ok = true;
    for (std::size_t i = 0; i < pc.cloud.size(); ++i) {
      const auto& p = pc.cloud.points[i];
      const auto cell = bev_index(p[0], p[1], pc.bev);
      const int expect = cell ? 1 : 0;
      ok = ok && seen[i] == expect &&
           part.cell_of_point[i] == (cell ? std::int64_t(pc.bev.flat(*cell)) : -1);
    }
    points += pc.cloud.size();
    s.check(ok, "seed " + std::to_string(seed) + ": a point is not in exactly one bin");
  }
  s.note(std::to_string(points) + " points");
}

// Per point: mean over in-view cameras of the nearest-pixel feature; per
// cell: mean over its visible points.
Tensor point_oracle(const PointCase& pc, const std::vector<Tensor>& hr) {
  const std::size_t ch = hr[0].cols();
  std::vector<std::vector<std::vector<double>>> per_cell(pc.bev.cells());
  for (const auto& p : pc.cloud.points) {
    const auto cell = bev_index(p[0], p[1], pc.bev);
    if (!cell) continue;
    std::vector<double> feat(ch, 0.0);
    int views = 0;
    for (std::size_t c = 0; c < pc.rig.cameras.size(); ++c) {
      const CameraParams& cam = pc.rig.cameras[c];
      const auto pr = project(Vec3(p[0], p[1], p[2]), cam);
      if (!pr) continue;
      const auto px = static_cast<std::size_t>(std::floor(pr->u));
      const auto py = static_cast<std::size_t>(std::floor(pr->v));
      for (std::size_t k = 0; k < ch; ++k) feat[k] += hr[c][(py * cam.width + px) * ch + k];
      ++views;
    }
    if (views == 0) continue;
    for (double& f : feat) f /= views;
    per_cell[pc.bev.flat(*cell)].push_back(feat);
  }
  Tensor out({pc.bev.n, pc.bev.n, ch});
  for (std::size_t cell = 0; cell < per_cell.size(); ++cell) {
    for (const auto& f : per_cell[cell]) {
      for (std::size_t k = 0; k < ch; ++k) out[cell * ch + k] += f[k] / per_cell[cell].size();
    }
  }
  return out;
}

void point_stream_oracle(Suite& s) {
  std::size_t multi = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const PointCase pc = point_case(seed);
    Rng rng(seed + 1234);
    std::vector<Tensor> hr;
    Tape t(false);
    std::vector<Var> vars;
    for (const auto& cam : pc.rig.cameras) {
      hr.push_back(random_tensor(rng, {cam.height, cam.width, 3}));
      vars.push_back(t.constant(hr.back()));
    }
    const PointStreamIndex index = build_point_stream(pc.cloud, pc.rig.cameras, pc.bev);
    for (auto r : index.reads) multi += r > 1;
    const Tensor got = t.value(point_stream(t, vars, index, pc.bev));
    s.within(max_abs_diff(got, point_oracle(pc, hr)), 1e-12, "seed " + std::to_string(seed));
  }
  s.note(std::to_string(multi) + " points seen by two cameras");
}

// -------------------------------------------------------------- candidates

CandidateSet candidates_oracle(const Tensor& hm, std::size_t k) {
  const std::size_t X = hm.dim(0), Y = hm.dim(1), N = hm.dim(2);
  std::vector<double> score(X * Y);
  std::vector<std::size_t> cls(X * Y);
  for (std::size_t i = 0; i < X * Y; ++i) {
    score[i] = hm[i * N];
    cls[i] = 0;
    for (std::size_t c = 1; c < N; ++c) {
      if (hm[i * N + c] > score[i]) score[i] = hm[i * N + c], cls[i] = c;
    }
  }
  std::vector<Candidate> all;
  for (std::size_t gx = 0; gx < X; ++gx) {
    for (std::size_t gy = 0; gy < Y; ++gy) {
      bool peak = true;
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          const long nx = long(gx) + dx, ny = long(gy) + dy;
          if ((dx || dy) && nx >= 0 && ny >= 0 && nx < long(X) && ny < long(Y)) {
            peak = peak && score[gx * Y + gy] >= score[nx * Y + ny];
          }
        }
      }
      if (peak) all.push_back({gx, gy, cls[gx * Y + gy], score[gx * Y + gy]});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  if (all.size() > k) all.resize(k);
  return {all};
}

void candidates_oracle_suite(Suite& s) {
  Rng rng(404);
  for (int i = 0; i < 200; ++i) {
    Tensor hm({16, 16, 3});
    const int kind = i % 4;
    for (double& v : hm.data()) {
      if (kind == 0) v = rng.uniform();
      else if (kind == 1) v = 0.25 * static_cast<double>(rng.index(3));  // plateaus
      else if (kind == 2) v = 0.5;                                       // constant
      else v = rng.uniform() < 0.9 ? 0.1 : rng.uniform();                // sparse peaks
    }
    const std::size_t k = i % 3 == 0 ? 10 : 1 + rng.index(40);
    const CandidateSet got = select_candidates(hm, k);
    const CandidateSet want = candidates_oracle(hm, k);
    s.check(got.items == want.items, "heatmap " + std::to_string(i) + " (K=" + std::to_string(k) +
                                         "): selected set differs");
  }
}

// ---------------------------------------------------------------- hungarian

struct Assignment {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

// Depth-first over rows; taking a column (ascending) precedes skipping the
// row, so the first optimum reached is the lexicographically smallest.
void enumerate(const Eigen::MatrixXd& c, std::size_t row, std::vector<bool>& used,
               std::vector<std::pair<std::size_t, std::size_t>>& cur, double cost,
               std::size_t need, Assignment& best) {
  const std::size_t m = c.rows(), n = c.cols();
  if (cur.size() == need) {
    if (cost < best.cost) best = {cost, cur};
    return;
  }
  if (row == m || m - row < need - cur.size()) return;
  for (std::size_t j = 0; j < n; ++j) {
    if (used[j]) continue;
    used[j] = true;
    cur.emplace_back(row, j);
    enumerate(c, row + 1, used, cur, cost + c(row, j), need, best);
    cur.pop_back();
    used[j] = false;
  }
  enumerate(c, row + 1, used, cur, cost, need, best);
}

Assignment hungarian_oracle(const Eigen::MatrixXd& c) {
  Assignment best;
  std::vector<bool> used(c.cols(), false);
  std::vector<std::pair<std::size_t, std::size_t>> cur;
  enumerate(c, 0, used, cur, 0.0, std::min<std::size_t>(c.rows(), c.cols()), best);
  return best;
}

void hungarian_oracle_suite(Suite& s) {
  Rng rng(606);
  for (std::size_t m = 1; m <= 6; ++m) {
    for (std::size_t n = 1; n <= 6; ++n) {
      bool cost_ok = true, pairs_ok = true;
      double worst = 0.0;
      for (int i = 0; i < 100; ++i) {
        Eigen::MatrixXd c(m, n);
        // Small integers: exact sums and plenty of tied optima.
        for (Eigen::Index r = 0; r < c.rows(); ++r) {
          for (Eigen::Index q = 0; q < c.cols(); ++q) c(r, q) = static_cast<double>(rng.index(6));
        }
        const MatchResult got = hungarian_match(c);
        const Assignment want = hungarian_oracle(c);
        cost_ok = cost_ok && got.cost == want.cost;
        pairs_ok = pairs_ok && got.pairs == want.pairs;
        // Real-valued costs as well.
        for (Eigen::Index r = 0; r < c.rows(); ++r) {
          for (Eigen::Index q = 0; q < c.cols(); ++q) c(r, q) = rng.uniform(-5.0, 5.0);
        }
        worst = std::max(worst, std::abs(hungarian_match(c).cost - hungarian_oracle(c).cost));
      }
      const std::string size = std::to_string(m) + "x" + std::to_string(n);
      s.check(cost_ok, size + ": cost differs from enumeration");
      s.check(pairs_ok, size + ": pairs differ from the lexicographically smallest optimum");
      s.within(worst, 1e-12, size + " real-valued");
    }
  }
}

// ---------------------------------------------------------------- gradients

constexpr double kGradTol = 1e-4;

void gradients_focal(Suite& s) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 1);
    const Tensor x = random_tensor(rng, {6, 3}, -3.0, 3.0);
    Tensor targets({6, 3});
    for (double& v : targets.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const bool mean = seed % 2 == 0;
    const ScalarGraph f = [&](Tape& t, Var v) {
      return focal_loss(t, ad::sigmoid(t, v), targets, {}, mean);
    };
    s.within(finite_diff_check(f, x), kGradTol, "seed " + std::to_string(seed));
  }
}

void gradients_depth_bce(Suite& s) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 2);
    const std::size_t pixels = 12, bins = 4;
    const Tensor x = random_tensor(rng, {pixels, bins}, -2.0, 2.0);
    DepthGroundTruth gt{Tensor({pixels, bins}), Tensor({pixels})};
    for (std::size_t p = 0; p < pixels; ++p) {
      if (rng.uniform() < 0.25) continue;
      gt.mask[p] = 1.0;
      gt.onehot[p * bins + rng.index(bins)] = 1.0;
    }
    const ScalarGraph f = [&](Tape& t, Var v) { return depth_loss(t, ad::softmax(t, v, 1), gt); };
    s.within(finite_diff_check(f, x), kGradTol, "seed " + std::to_string(seed));
  }
}

void gradients_l1(Suite& s) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 3);
    const Tensor x = random_tensor(rng, {4, kBoxDims});
    const Tensor target = random_tensor(rng, {4, kBoxDims});
    const ScalarGraph f = [&](Tape& t, Var v) { return l1_loss(t, v, target); };
    s.within(finite_diff_check(f, x), kGradTol, "seed " + std::to_string(seed));
  }
}

ParamStore fuser_store(Rng& rng, const std::string& prefix, std::size_t c, std::size_t out) {
  ParamStore p;
  for (const char* m : {".gamma_s", ".beta_s", ".gamma_g", ".beta_g"}) {
    p.add_linear(rng, prefix + m, 2 * c, c, "tsp");
  }
  p.add_linear(rng, prefix + ".psi", 2 * c, out, "tsp");
  for (const auto& name : p.names()) {
    for (double& v : p.get(name).data()) v = rng.uniform(-1.0, 1.0);
  }
  return p;
}

// Gradient of a fixed random projection of Q_s with respect to every fuser
// parameter and both inputs.
void gradients_fuser(Suite& s) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 4);
    const std::size_t k = 3, c = 4;
    const ParamStore store = fuser_store(rng, "f", c, c);
    const Tensor fg = random_tensor(rng, {k, c}), fs = random_tensor(rng, {k, c});
    const Tensor proj = random_tensor(rng, {k, c});
    auto objective = [&](Tape& t, const BoundParams& p, Var g, Var sv) {
      return ad::sum(t, ad::mul(t, task_specific_fuse(t, p, "f", g, sv), t.constant(proj)));
    };
    double worst = 0.0;
    for (const auto& name : store.names()) {
      const ScalarGraph f = [&](Tape& t, Var v) {
        BoundParams p(t, store, false);
        p.rebind(name, v);
        return objective(t, p, t.constant(fg), t.constant(fs));
      };
      worst = std::max(worst, finite_diff_check(f, store.get(name)));
    }
    const ScalarGraph wrt_g = [&](Tape& t, Var v) {
      return objective(t, BoundParams(t, store, false), v, t.constant(fs));
    };
    const ScalarGraph wrt_s = [&](Tape& t, Var v) {
      return objective(t, BoundParams(t, store, false), t.constant(fg), v);
    };
    worst = std::max({worst, finite_diff_check(wrt_g, fg), finite_diff_check(wrt_s, fs)});
    s.within(worst, kGradTol, "seed " + std::to_string(seed));
  }
}

// One coordinate per group (the largest-gradient one) of the full joint
// loss against central differences of the same loss.
void gradients_pipeline(Suite& s) {
  TrainConfig cfg = desk_config();
  cfg.model.sync();
  const SensorRig rig = data_rig(cfg.data, cfg.model.classes);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto batch = make_examples(1, 4, 40 + seed, rig, cfg.model);
    ParamStore params = init_params(cfg.model, seed + 1);
    const BatchResult base = batch_gradients(params, batch, cfg.model, cfg.weights);
    for (const std::string group : {"depth", "lidar", "decoder", "tsp"}) {
      std::string best_name;
      std::size_t best_i = 0;
      double best_g = -1.0;
      for (const auto& name : params.names()) {
        if (params.group(name) != group || !base.grads.count(name)) continue;
        const Tensor& g = base.grads.at(name);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (std::abs(g[i]) > best_g) best_g = std::abs(g[i]), best_name = name, best_i = i;
        }
      }
      if (best_name.empty()) {
        s.check(false, group + ": no gradient");
        continue;
      }
      const double eps = 1e-6;
      double& x = params.get(best_name)[best_i];
      const double x0 = x;
      x = x0 + eps;
      const double lp = batch_gradients(params, batch, cfg.model, cfg.weights).loss;
      x = x0 - eps;
      const double lm = batch_gradients(params, batch, cfg.model, cfg.weights).loss;
      x = x0;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = base.grads.at(best_name)[best_i];
      s.within(std::abs(a - numeric) / std::max(1e-8, std::abs(a)), 1e-3,
               "seed " + std::to_string(seed) + " " + best_name + "[" + std::to_string(best_i) + "]");
    }
  }
}

// ------------------------------------------------------------------ fuser

void fuser_identities(Suite& s) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 8);
    const std::size_t k = 5, c = 6;
    const Tensor fg = random_tensor(rng, {k, c}, -10.0, 10.0);
    const Tensor fs = random_tensor(rng, {k, c}, -10.0, 10.0);
    auto run = [&](const ParamStore& store) {
      Tape t(false);
      BoundParams p(t, store, false);
      return t.value(task_specific_fuse(t, p, "f", t.constant(fg), t.constant(fs)));
    };

    // gamma = 1, beta = 0, psi = identity on the 2C concat.
    ParamStore id = fuser_store(rng, "f", c, 2 * c);
    for (const char* m : {"f.gamma_s", "f.gamma_g", "f.beta_s", "f.beta_g"}) {
      id.get(std::string(m) + ".w").fill(0.0);
      id.get(std::string(m) + ".b").fill(m[2] == 'g' ? 1.0 : 0.0);
    }
    Tensor& psi = id.get("f.psi.w");
    psi.fill(0.0);
    for (std::size_t i = 0; i < 2 * c; ++i) psi[i * 2 * c + i] = 1.0;
    id.get("f.psi.b").fill(0.0);
    const Tensor q = run(id);
    Tensor want({k, 2 * c});
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        want[r * 2 * c + j] = fs[r * c + j];
        want[r * 2 * c + c + j] = fg[r * c + j];
      }
    }
    s.check(q == want, "seed " + std::to_string(seed) + ": modulation identity is not [f_s, f_g]");

    // gamma = beta = 0 with a zero psi bias collapses to zero.
    ParamStore zero = fuser_store(rng, "f", c, c);
    for (const char* m : {"f.gamma_s", "f.gamma_g", "f.beta_s", "f.beta_g"}) {
      zero.get(std::string(m) + ".w").fill(0.0);
      zero.get(std::string(m) + ".b").fill(0.0);
    }
    zero.get("f.psi.b").fill(0.0);
    const Tensor z = run(zero);
    s.check(std::all_of(z.data().begin(), z.data().end(), [](double v) { return v == 0.0; }),
            "seed " + std::to_string(seed) + ": zero modulation did not collapse to 0");
  }
}

// ---------------------------------------------------------------- training

struct TrainingFixture {
  TrainConfig cfg = desk_config();
  SensorRig rig;
  TrainingFixture() {
    cfg.model.sync();
    rig = data_rig(cfg.data, cfg.model.classes);
  }
};

void training_depth_pretrain(Suite& s) {
  TrainingFixture fx;
  const auto one = make_examples(1, 4, fx.cfg.data.seed, fx.rig, fx.cfg.model);
  ParamStore p = init_params(fx.cfg.model, fx.cfg.seed);
  const auto curve = pretrain_depth(p, one, fx.cfg.model, 200, fx.cfg.depth_lr, fx.cfg.clip_norm);
  const double ratio = curve.back() / curve.front();
  s.note("BCE " + Suite::fmt(curve.front()) + " -> " + Suite::fmt(curve.back()) + " (ratio " +
         Suite::fmt(ratio) + ")");
  s.check(curve.size() == 200, "curve length");
  s.check(ratio < 0.2, "BCE ratio " + Suite::fmt(ratio) + " is not below 0.2");
}

RunReport joint_run(const TrainingFixture& fx) {
  const auto four = make_examples(4, 4, fx.cfg.data.seed, fx.rig, fx.cfg.model);
  TrainConfig c = fx.cfg;
  c.steps = 300;
  return train(c, four, {});
}

void training_joint(Suite& s, RunReport& out) {
  TrainingFixture fx;
  out = joint_run(fx);
  const auto& c = out.loss_curve;
  const double ratio = c.back() / c.front();
  s.note("loss " + Suite::fmt(c.front()) + " -> " + Suite::fmt(c.back()) + " (ratio " +
         Suite::fmt(ratio) + ")");
  s.check(c.size() == 300, "curve length");
  s.check(std::all_of(c.begin(), c.end(), [](double v) { return std::isfinite(v); }), "non-finite loss");
  s.check(ratio <= 0.5, "loss fell only to " + Suite::fmt(ratio) + " of its first value");
}

void training_determinism(Suite& s, const RunReport& first) {
  TrainingFixture fx;
  const RunReport again = joint_run(fx);
  s.check(again.depth_curve == first.depth_curve, "depth pretrain curves differ");
  s.check(again.loss_curve == first.loss_curve, "joint loss curves differ");
  bool same = true;
  for (const auto& name : first.params.names()) same = same && first.params.get(name) == again.params.get(name);
  s.check(same, "final parameters differ");
}

void training_gradient_flow(Suite& s) {
  TrainingFixture fx;
  for (const bool tsp : {true, false}) {
    ModelConfig m = fx.cfg.model;
    m.task_specific = tsp;
    m.sync();
    const auto batch = make_examples(1, 4, fx.cfg.data.seed, fx.rig, m);
    ParamStore p = init_params(m, fx.cfg.seed);
    const ParamStore before = p;
    const BatchResult r = batch_gradients(p, batch, m, fx.cfg.weights);
    s.check(r.loss > 0.0, "loss is zero");
    sgd_step(p, r.grads, fx.cfg.lr);
    for (const auto& group : p.groups()) {
      bool changed = false;
      for (const auto& name : p.names()) {
        if (p.group(name) == group) changed = changed || !(p.get(name) == before.get(name));
      }
      s.check(changed, std::string(tsp ? "tsp on" : "tsp off") + ": group '" + group + "' did not change");
    }
  }
}

// ----------------------------------------------------------------- metrics

Detection det_at(const ObjectBox& b, double score, double dx = 0.0) {
  Detection d;
  d.class_id = b.class_id;
  d.score = score;
  d.center = b.center + Vec3(dx, 0.0, 0.0);
  d.size = b.size;
  d.yaw = b.yaw;
  d.velocity = b.velocity;
  return d;
}

void metrics_sanity(Suite& s) {
  const BEVConfig bev;
  std::vector<FrameDetections> frames;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene sc = generate_scene(4, bev, 3, seed);
    FrameDetections f;
    f.truths = sc.boxes;
    for (std::size_t i = 0; i < sc.boxes.size(); ++i) f.detections.push_back(det_at(sc.boxes[i], 0.9 - 0.1 * i));
    frames.push_back(f);
  }
  const EvalResult perfect = evaluate(frames, 3);
  s.check(perfect.map == 1.0, "perfect mAP " + Suite::fmt(perfect.map));
  s.check(perfect.nds == 1.0, "perfect NDS " + Suite::fmt(perfect.nds));

  ObjectBox gt;
  gt.center = Vec3(2.0, 1.0, 0.5);
  for (double th : kDistanceThresholds) {
    const MatchLabels far = match_detections({det_at(gt, 0.8, 4.1)}, {gt}, th);
    s.check(!far.tp[0], "4.1 m offset matched at threshold " + Suite::fmt(th));
  }
  const MatchLabels mid2 = match_detections({det_at(gt, 0.8, 1.5)}, {gt}, 2.0);
  const MatchLabels mid1 = match_detections({det_at(gt, 0.8, 1.5)}, {gt}, 1.0);
  s.check(mid2.tp[0] && !mid1.tp[0], "1.5 m offset must be TP at 2 m only");

  // Hand integration over recalls 0.11..1.00 of raw interpolated precision,
  // clipped at 0.1 and renormalized: the last point reads the final
  // precision 0.5, so one TP then one FP gives (89 * 0.9 + 0.4) / 81.
  s.within(std::abs(average_precision({true, false}, 1) - 80.5 / 81.0), 1e-12, "TP then FP");
  // Precision 0.5 r between (0, 0) and (1, 0.5): sum_{i=21..100} (0.005 i - 0.1) / 81.
  s.within(std::abs(average_precision({false, true}, 1) - 0.2), 1e-12, "FP then TP");
  s.within(std::abs(average_precision({}, 3)), 0.0, "no detections");
  TpErrors half;
  half.ate = half.ase = half.aoe = half.ave = 0.5;
  s.within(std::abs(nds(0.5, half) - 0.5), 1e-15, "nds(0.5, 0.5)");
  s.within(std::abs(aligned_scale_error(Vec3(2, 1, 1), Vec3(1, 1, 1)) - 0.5), 1e-15, "ASE x2");
}

// Greedy matching re-derived: score order, nearest same-class unmatched
// truth strictly inside the threshold.
void metrics_match_oracle(Suite& s) {
  Rng rng(808);
  for (int i = 0; i < 200; ++i) {
    std::vector<ObjectBox> truths(1 + rng.index(6));
    for (auto& t : truths) {
      t.center = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), 0.5);
      t.class_id = rng.index(2);
    }
    std::vector<Detection> dets(rng.index(8));
    for (std::size_t j = 0; j < dets.size(); ++j) {
      dets[j].center = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), 0.5);
      dets[j].class_id = rng.index(2);
      dets[j].score = 1.0 - 0.1 * static_cast<double>(j);
    }
    const double th = kDistanceThresholds[rng.index(4)];
    std::vector<bool> used(truths.size(), false), tp;
    for (const auto& d : dets) {
      long best = -1;
      double bd = th;
      for (std::size_t g = 0; g < truths.size(); ++g) {
        if (used[g] || truths[g].class_id != d.class_id) continue;
        const double dist = (truths[g].center.head<2>() - d.center.head<2>()).norm();
        if (dist < bd) bd = dist, best = long(g);
      }
      if (best >= 0) used[best] = true;
      tp.push_back(best >= 0);
    }
    s.check(match_detections(dets, truths, th).tp == tp, "case " + std::to_string(i));
  }
}

// --------------------------------------------------------------------- BEV

std::size_t nonzero_cells(const Tensor& bev) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < bev.rows(); ++r) {
    const auto row = bev.row(r);
    n += std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; });
  }
  return n;
}

struct BevDump {
  Tensor ray, point;
};

BevDump default_bevs(const AppConfig& app, const ParamStore& params, std::uint64_t seed) {
  const ModelConfig& m = app.model();
  const SensorRig rig = app.rig();
  const Scene scene = generate_scene(app.boxes, m.bev, m.classes, seed);
  const SensorFrame frame = simulate(scene, rig);
  const SceneInputs in = prepare_inputs(scene, frame, rig, m);
  Tape t(false);
  BoundParams p(t, params, false);
  const ForwardResult f = forward(t, p, in, m);
  return {t.value(f.ray_bev), t.value(f.point_bev)};
}

void bev_sparsity(Suite& s) {
  const AppConfig app;
  const ParamStore params = init_params(app.model(), app.seed);
  std::size_t ray_total = 0, point_total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const BevDump b = default_bevs(app, params, app.seed + seed);
    const std::size_t r = nonzero_cells(b.ray), p = nonzero_cells(b.point);
    ray_total += r;
    point_total += p;
    s.check(p <= r, "scene " + std::to_string(seed) + ": point " + std::to_string(p) + " > ray " +
                        std::to_string(r) + " nonzero cells");
  }
  s.note("mean nonzero cells point " + Suite::fmt(point_total / 20.0) + ", ray " +
         Suite::fmt(ray_total / 20.0));
}

void bev_pgm(Suite& s) {
  const AppConfig app;
  const ParamStore params = init_params(app.model(), app.seed);
  const BevDump b = default_bevs(app, params, app.seed);
  const auto dir = std::filesystem::temp_directory_path() /
                   ("bevkit_check_" + std::to_string(std::hash<std::string>{}(app.source)));
  std::filesystem::create_directories(dir);
  for (const auto& [name, bev] : {std::pair{"ray", &b.ray}, std::pair{"point", &b.point}}) {
    const std::string path = (dir / (std::string(name) + ".pgm")).string();
    io::save_bev_pgm(path, *bev);
    const io::Pgm16 img = io::load_pgm16(path);
    const std::size_t n = bev->dim(0);
    s.check(img.width == n && img.height == n && img.pixels.size() == n * n,
            std::string(name) + ": wrong image size");
    const std::size_t lit = std::count_if(img.pixels.begin(), img.pixels.end(), [](auto v) { return v != 0; });
    s.check(lit == nonzero_cells(*bev), std::string(name) + ": nonzero pixels differ from nonzero cells");
  }
  std::filesystem::remove_all(dir);
}

void predictor_oracle_decode(Suite& s) {
  const AppConfig app;
  const ModelConfig& m = app.model();
  const ParamStore params = init_params(m, app.seed);
  const SensorRig rig = app.rig();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene scene = generate_scene(app.boxes, m.bev, m.classes, seed);
    const SceneInputs in = prepare_inputs(scene, simulate(scene, rig), rig, m);
    const Tensor hm = oracle_heatmap(scene.boxes, m.bev, m.classes);
    const auto dets = detect(params, in, m, &hm);
    std::size_t hits = 0;
    for (const auto& b : scene.boxes) {
      const auto cell = bev_index(b.center.x(), b.center.y(), m.bev);
      const Vec2 cc = m.bev.cell_center(cell->gx, cell->gy);
      hits += std::any_of(dets.begin(), dets.end(), [&](const Detection& d) {
        return d.score == 1.0 && d.class_id == b.class_id && d.center.x() == cc.x() &&
               d.center.y() == cc.y();
      });
    }
    s.check(hits == scene.boxes.size(), "scene " + std::to_string(seed) + ": " + std::to_string(hits) +
                                            " of " + std::to_string(scene.boxes.size()) +
                                            " objects decoded at their cell centers");
  }
}

// ------------------------------------------------------------------ driver

struct SuiteDef {
  const char* name;
  const char* invariant;
  int criterion;
  double time_limit;
  bool report_worst;
  std::function<void(Suite&)> run;
};

}  // namespace

std::vector<SuiteResult> run_checks(const CheckOptions& opt,
                                    const std::function<void(const SuiteResult&)>& on_result) {
  RunReport joint;
  bool joint_ran = false;
  const std::vector<SuiteDef> suite_defs = {
      {"geometry.roundtrip", "unproject(project(p)) == p", 1, 1.0, true, geometry_roundtrip},
      {"scene.first_hit", "cast_ray returns the nearest surface", 0, 0.0, false, scene_first_hit},
      {"ray_stream.oracle", "ray BEV equals the exhaustive (pixel, bin) scatter", 2, 5.0, true,
       ray_stream_oracle},
      {"ray_stream.one_hot", "one-hot depth sends each pixel to at most one cell", 3, 0.0, false,
       ray_stream_one_hot},
      {"ray_stream.linearity", "ray BEV is linear in the depth distribution", 0, 0.0, true,
       ray_stream_linearity},
      {"point_stream.partition", "every in-range LiDAR point lies in exactly one bin", 3, 0.0, false,
       point_stream_partition},
      {"point_stream.oracle", "point BEV equals the per-point gather oracle", 4, 0.0, true,
       point_stream_oracle},
      {"candidates.oracle", "selected candidates equal the brute-force peak scan", 5, 0.0, false,
       candidates_oracle_suite},
      {"hungarian.oracle", "assignment cost equals permutation enumeration", 6, 10.0, true,
       hungarian_oracle_suite},
      {"gradients.focal", "focal loss gradient matches central differences", 7, 0.0, true, gradients_focal},
      {"gradients.depth_bce", "depth BCE gradient matches central differences", 7, 0.0, true,
       gradients_depth_bce},
      {"gradients.l1", "L1 gradient matches central differences", 7, 0.0, true, gradients_l1},
      {"gradients.fuser", "task-specific fuser gradient matches central differences", 7, 0.0, true,
       gradients_fuser},
      {"gradients.pipeline", "full-pipeline gradient matches central differences", 7, 0.0, true,
       gradients_pipeline},
      {"fuser.identities", "modulation identity and zero collapse hold bit-exactly", 8, 0.0, false,
       fuser_identities},
      {"training.depth_pretrain", "200 depth steps cut BCE below 20%", 9, 0.0, false,
       training_depth_pretrain},
      {"training.joint", "300 joint steps cut the total loss by half", 9, 0.0, false,
       [&](Suite& s) {
         training_joint(s, joint);
         joint_ran = true;
       }},
      {"training.determinism", "identical configs give identical runs", 9, 0.0, false,
       [&](Suite& s) {
         if (!joint_ran) {
           TrainingFixture fx;
           joint = joint_run(fx);
           joint_ran = true;
         }
         training_determinism(s, joint);
       }},
      {"training.gradient_flow", "one step changes every parameter group", 0, 0.0, false,
       training_gradient_flow},
      {"metrics.sanity", "perfect detections score 1; far detections are false positives", 11, 0.0,
       false, metrics_sanity},
      {"metrics.match_oracle", "greedy matching equals the re-derived greedy loop", 0, 0.0, false,
       metrics_match_oracle},
      {"bev.sparsity", "point BEV has no more nonzero cells than ray BEV", 12, 0.0, false, bev_sparsity},
      {"bev.pgm", "BEV dumps are valid PGM files", 12, 0.0, false, bev_pgm},
      {"predictor.oracle_decode", "oracle heatmap decodes at ground-truth cells", 0, 0.0, false,
       predictor_oracle_decode},
  };

  const bool saved_fault = ray_scatter_fault();
  set_ray_scatter_fault(opt.sabotage_ray_scatter);
  std::vector<SuiteResult> results;
  for (const SuiteDef& def : suite_defs) {
    if (!opt.only.empty() &&
        std::none_of(opt.only.begin(), opt.only.end(), [&](const std::string& p) {
          return std::string_view(def.name).starts_with(p);
        })) {
      continue;
    }
    SuiteResult r;
    r.name = def.name;
    r.invariant = def.invariant;
    r.criterion = def.criterion;
    r.time_limit = def.time_limit;
    Suite s(r);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      def.run(s);
      s.finish(def.report_worst);
    } catch (const std::exception& e) {
      ++r.failures;
      s.finish(false);
      r.detail += (r.detail.empty() ? "" : "; ") + std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  }
  set_ray_scatter_fault(saved_fault);
  return results;
}

std::vector<std::string> check_suite_names() {
  return {
      "geometry.roundtrip",     "scene.first_hit",       "ray_stream.oracle",
      "ray_stream.one_hot",     "ray_stream.linearity",  "point_stream.partition",
      "point_stream.oracle",    "candidates.oracle",     "hungarian.oracle",
      "gradients.focal",        "gradients.depth_bce",   "gradients.l1",
      "gradients.fuser",        "gradients.pipeline",    "fuser.identities",
      "training.depth_pretrain", "training.joint",       "training.determinism",
      "training.gradient_flow", "metrics.sanity",        "metrics.match_oracle",
      "bev.sparsity",           "bev.pgm",               "predictor.oracle_decode"};
}

}  // namespace bevkit
