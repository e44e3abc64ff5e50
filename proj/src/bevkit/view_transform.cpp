#include "bevkit/view_transform.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "bevkit/error.hpp"

namespace bevkit {

namespace {

std::atomic<bool> g_ray_fault{false};

constexpr double kProbFloor = 1e-7;

}  // namespace

void set_ray_scatter_fault(bool enabled) { g_ray_fault = enabled; }
bool ray_scatter_fault() { return g_ray_fault.load(); }

void add_camera_params(ParamStore& store, Rng& rng, const CameraBranchConfig& cfg) {
  const std::size_t s = cfg.stride;
  store.add_conv(rng, "camera.encoder.c1", cfg.image_channels, cfg.lr_channels, 3, "camera", false);
  store.add_conv(rng, "camera.encoder.c2", cfg.lr_channels, cfg.lr_channels, 3, "camera", false);
  if (cfg.point_stream) {
    store.add_linear(rng, "camera.upsample", cfg.lr_channels, s * s * cfg.hr_channels, "camera",
                     false);
  }
  const std::size_t desc = kDescriptorBase + 2 * cfg.bins.count;
  store.add_linear(rng, "depth.embed", desc, cfg.camera_embed, "depth");
  store.add_linear(rng, "depth.hidden", cfg.lr_channels + cfg.camera_embed, cfg.depth_hidden, "depth");
  store.add_linear(rng, "depth.context", cfg.depth_hidden, cfg.context_channels, "depth");
  store.add_linear(rng, "depth.logits", cfg.depth_hidden, cfg.bins.count, "depth");
  store.add_linear(rng, "depth.prior", desc, cfg.bins.count, "depth", false);
  store.add_conv(rng, "camera.fuser.c1", cfg.context_channels + cfg.hr_channels,
                 cfg.camera_bev_channels, 3, "camera_fuser", false);
  store.add_conv(rng, "camera.fuser.c2", cfg.camera_bev_channels, cfg.camera_bev_channels, 3,
                 "camera_fuser", false);
}

Var camera_encode(Tape& t, const BoundParams& p, Var image, std::size_t stride) {
  const Shape& s = t.shape(image);
  require(s.size() == 3, ErrorKind::kDimension, "camera_encode expects [H, W, C]");
  require(stride >= 1 && s[0] % stride == 0 && s[1] % stride == 0, ErrorKind::kDimension,
          "camera_encode: image " + shape_string(s) + " not divisible by stride " +
              std::to_string(stride));
  Var x = ad::relu(t, nn::conv2d(t, image, p["camera.encoder.c1.w"], std::nullopt, 3, stride, 1));
  return ad::relu(t, nn::conv2d(t, x, p["camera.encoder.c2.w"], std::nullopt, 3, 1, 1));
}

Var upsample_hr(Tape& t, const BoundParams& p, Var lr, std::size_t stride) {
  const Shape& s = t.shape(lr);
  require(s.size() == 3, ErrorKind::kDimension, "upsample_hr expects [h, w, C]");
  const std::size_t h = s[0], w = s[1];
  Var expanded = ad::linear(t, ad::reshape(t, lr, {h * w, s[2]}), p["camera.upsample.w"]);
  const std::size_t width = t.shape(expanded).back();
  require(width % (stride * stride) == 0, ErrorKind::kDimension,
          "upsample_hr: output width not divisible by s*s");
  const std::size_t c_hr = width / (stride * stride);
  Var sub = ad::reshape(t, expanded, {h * w * stride * stride, c_hr});
  // Pixel shuffle: HR (y, x) reads LR (y/s, x/s), sub-position (y%s, x%s).
  const std::size_t hh = h * stride, ww = w * stride;
  std::vector<std::int64_t> src(hh * ww);
  for (std::size_t y = 0; y < hh; ++y) {
    for (std::size_t x = 0; x < ww; ++x) {
      const std::size_t lr_pix = (y / stride) * w + x / stride;
      const std::size_t pos = (y % stride) * stride + x % stride;
      src[y * ww + x] = static_cast<std::int64_t>(lr_pix * stride * stride + pos);
    }
  }
  return ad::reshape(t, ad::gather_rows(t, sub, std::move(src)), {hh, ww, c_hr});
}

Tensor camera_descriptor(const CameraParams& cam, std::size_t h, std::size_t w,
                         std::size_t stride, const DepthBins& bins) {
  const std::size_t width = kDescriptorBase + 2 * bins.count;
  Tensor d({h * w, width});
  const Vec3 center = cam.center_world();
  const double W = static_cast<double>(cam.width), H = static_cast<double>(cam.height);
  const double sw = bins.width();
  for (std::size_t py = 0; py < h; ++py) {
    for (std::size_t px = 0; px < w; ++px) {
      const double u = (static_cast<double>(px) + 0.5) * static_cast<double>(stride);
      const double v = (static_cast<double>(py) + 0.5) * static_cast<double>(stride);
      const Vec3 ray = pixel_ray(u, v, cam);
      double* row = d.ptr() + (py * w + px) * width;
      row[0] = cam.fx / W;
      row[1] = cam.fy / H;
      row[2] = cam.cx / W;
      row[3] = cam.cy / H;
      for (int k = 0; k < 3; ++k) row[4 + k] = ray[k];
      for (int k = 0; k < 3; ++k) row[7 + k] = center[k];
      // Ground-plane depth along the pixel's vertical extent: the world
      // point at depth 1 lies on the ray, so depth = height / drop.
      auto ground_depth = [&](double row_v) {
        const double drop = center.z() - unproject(u, row_v, 1.0, cam).z();
        return drop > 1e-9 ? center.z() / drop : std::numeric_limits<double>::infinity();
      };
      const double sv = static_cast<double>(stride);
      const double near = ground_depth(v + 0.5 * sv);
      const double far = ground_depth(v - 0.5 * sv);
      if (!std::isfinite(near)) continue;
      for (std::size_t b = 0; b < bins.count; ++b) {
        const double lo = bins.d_min + static_cast<double>(b) * sw;
        const double overlap = std::min(far, lo + sw) - std::max(near, lo);
        row[kDescriptorBase + b] = std::clamp(overlap / sw, 0.0, 1.0);
        const double z = 2.0 * (near - bins.center(b)) / sw;
        row[kDescriptorBase + bins.count + b] = std::exp(-0.5 * z * z);
      }
    }
  }
  return d;
}

DepthNetOutput depth_net(Tape& t, const BoundParams& p, Var lr, const CameraParams& cam,
                         std::size_t stride, const DepthBins& bins) {
  const Shape& s = t.shape(lr);
  require(s.size() == 3, ErrorKind::kDimension, "depth_net expects [h, w, C_f]");
  const std::size_t h = s[0], w = s[1];
  Var feat = ad::reshape(t, lr, {h * w, s[2]});
  Var desc = t.constant(camera_descriptor(cam, h, w, stride, bins));
  Var embed = ad::relu(t, ad::linear(t, desc, p["depth.embed.w"], p.maybe("depth.embed.b")));
  Var joint = ad::concat(t, {feat, embed});
  Var hidden = ad::relu(t, ad::linear(t, joint, p["depth.hidden.w"], p.maybe("depth.hidden.b")));
  DepthNetOutput out;
  out.context = ad::linear(t, hidden, p["depth.context.w"], p.maybe("depth.context.b"));
  Var logits = ad::add(t, ad::linear(t, hidden, p["depth.logits.w"], p.maybe("depth.logits.b")),
                       ad::linear(t, desc, p["depth.prior.w"]));
  out.depth = ad::softmax(t, logits, 1);
  return out;
}

std::size_t DepthGroundTruth::valid() const {
  std::size_t n = 0;
  for (double m : mask.data()) n += m > 0.5 ? 1 : 0;
  return n;
}

DepthGroundTruth depth_ground_truth(const PointCloud& pc, const CameraParams& cam,
                                    const DepthBins& bins, std::size_t stride) {
  bins.validate();
  require(stride >= 1 && cam.width % stride == 0 && cam.height % stride == 0,
          ErrorKind::kDimension, "depth_ground_truth: image not divisible by stride");
  const std::size_t w = cam.width / stride, h = cam.height / stride;
  std::vector<double> nearest(h * w, std::numeric_limits<double>::infinity());
  for (const auto& pt : pc.points) {
    const auto proj = project(Vec3(pt[0], pt[1], pt[2]), cam);
    if (!proj) continue;
    const auto px = static_cast<std::size_t>(std::floor(proj->u / static_cast<double>(stride)));
    const auto py = static_cast<std::size_t>(std::floor(proj->v / static_cast<double>(stride)));
    double& slot = nearest[py * w + px];
    slot = std::min(slot, proj->depth);
  }
  DepthGroundTruth gt{Tensor({h * w, bins.count}), Tensor({h * w})};
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!std::isfinite(nearest[i])) continue;
    const auto bin = depth_to_bin(nearest[i], bins);
    if (!bin) continue;
    gt.onehot[i * bins.count + *bin] = 1.0;
    gt.mask[i] = 1.0;
  }
  return gt;
}

Var depth_loss(Tape& t, std::span<const DepthTerm> terms) {
  std::size_t valid = 0;
  for (const auto& term : terms) {
    require(t.shape(term.probs) == term.truth->onehot.shape(), ErrorKind::kDimension,
            "depth_loss: prediction and ground truth shapes differ");
    valid += term.truth->valid();
  }
  if (valid == 0) return t.constant(Tensor::scalar(0.0));
  const double norm = 1.0 / static_cast<double>(valid);
  double total = 0.0;
  std::vector<Var> inputs;
  for (const auto& term : terms) {
    inputs.push_back(term.probs);
    const Tensor& p = t.value(term.probs);
    const Tensor& g = term.truth->onehot;
    const std::size_t d = p.cols();
    for (std::size_t r = 0; r < p.rows(); ++r) {
      if (term.truth->mask[r] < 0.5) continue;
      for (std::size_t k = 0; k < d; ++k) {
        const double q = std::clamp(p[r * d + k], kProbFloor, 1.0 - kProbFloor);
        const double y = g[r * d + k];
        total -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
      }
    }
  }
  std::vector<const DepthGroundTruth*> truths;
  for (const auto& term : terms) truths.push_back(term.truth);
  return t.record(
      Tensor::scalar(total * norm), inputs,
      [&t, inputs, truths, norm](const Tensor& grad, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (!gi[i]) continue;
          const Tensor& p = t.value(inputs[i]);
          const Tensor& g = truths[i]->onehot;
          const std::size_t d = p.cols();
          for (std::size_t r = 0; r < p.rows(); ++r) {
            if (truths[i]->mask[r] < 0.5) continue;
            for (std::size_t k = 0; k < d; ++k) {
              const double q = p[r * d + k];
              if (q < kProbFloor || q > 1.0 - kProbFloor) continue;
              const double y = g[r * d + k];
              (*gi[i])[r * d + k] += grad[0] * norm * (-y / q + (1.0 - y) / (1.0 - q));
            }
          }
        }
      },
      "depth_loss");
}

Var depth_loss(Tape& t, Var probs, const DepthGroundTruth& truth) {
  const DepthTerm term{probs, &truth};
  return depth_loss(t, std::span<const DepthTerm>(&term, 1));
}

FrustumIndex build_frustum(const CameraParams& cam, const DepthBins& bins,
                           const BEVConfig& bev, std::size_t stride) {
  bins.validate();
  bev.validate();
  require(stride >= 1 && cam.width % stride == 0 && cam.height % stride == 0,
          ErrorKind::kDimension, "build_frustum: image not divisible by stride");
  const std::size_t w = cam.width / stride, h = cam.height / stride;
  FrustumIndex index;
  index.pixels = h * w;
  index.bins = bins.count;
  for (std::size_t py = 0; py < h; ++py) {
    for (std::size_t px = 0; px < w; ++px) {
      const double u = (static_cast<double>(px) + 0.5) * static_cast<double>(stride);
      const double v = (static_cast<double>(py) + 0.5) * static_cast<double>(stride);
      for (std::size_t b = 0; b < bins.count; ++b) {
        const Vec3 p = unproject(u, v, bins.center(b), cam);
        const auto cell = bev_index(p.x(), p.y(), bev);
        if (!cell) continue;
        index.entries.push_back({static_cast<std::uint32_t>(bev.flat(*cell)),
                                 static_cast<std::uint32_t>(py * w + px),
                                 static_cast<std::uint32_t>(b)});
      }
    }
  }
  std::sort(index.entries.begin(), index.entries.end(), [](const auto& a, const auto& b) {
    if (a.cell != b.cell) return a.cell < b.cell;
    if (a.pixel != b.pixel) return a.pixel < b.pixel;
    return a.bin < b.bin;
  });
  return index;
}

Var ray_scatter(Tape& t, Var context, Var depth, const FrustumIndex& index, std::size_t cells) {
  const Tensor& f = t.value(context);
  const Tensor& d = t.value(depth);
  require(f.rank() == 2 && d.rank() == 2 && f.dim(0) == index.pixels &&
              d.dim(0) == index.pixels && d.dim(1) == index.bins,
          ErrorKind::kDimension, "ray_scatter: context/depth do not match the frustum index");
  const std::size_t c = f.dim(1), nb = index.bins;
  const bool fault = ray_scatter_fault();
  auto route = [&](const FrustumIndex::Entry& e) -> std::size_t {
    if (fault && (e.bin % 2 == 1) && e.cell + 1 < cells) return e.cell + 1;
    return e.cell;
  };
  Tensor out({cells, c});
  for (const auto& e : index.entries) {
    const double wgt = d[e.pixel * nb + e.bin];
    const double* src = f.ptr() + e.pixel * c;
    double* dst = out.ptr() + route(e) * c;
    for (std::size_t k = 0; k < c; ++k) dst[k] += wgt * src[k];
  }
  return t.record(
      std::move(out), {context, depth},
      [&t, context, depth, &index, c, nb, fault, cells](const Tensor& g,
                                                        std::span<Tensor* const> gi) {
        const Tensor& f = t.value(context);
        const Tensor& d = t.value(depth);
        for (const auto& e : index.entries) {
          std::size_t cell = e.cell;
          if (fault && (e.bin % 2 == 1) && e.cell + 1 < cells) cell = e.cell + 1;
          const double* gr = g.ptr() + cell * c;
          if (gi[0]) {
            const double wgt = d[e.pixel * nb + e.bin];
            double* df = gi[0]->ptr() + e.pixel * c;
            for (std::size_t k = 0; k < c; ++k) df[k] += wgt * gr[k];
          }
          if (gi[1]) {
            const double* src = f.ptr() + e.pixel * c;
            double dot = 0.0;
            for (std::size_t k = 0; k < c; ++k) dot += src[k] * gr[k];
            (*gi[1])[e.pixel * nb + e.bin] += dot;
          }
        }
      },
      "ray_scatter");
}

Var ray_stream(Tape& t, std::span<const Var> contexts, std::span<const Var> depths,
               std::span<const FrustumIndex> index, const BEVConfig& bev) {
  require(contexts.size() == depths.size() && contexts.size() == index.size() &&
              !contexts.empty(),
          ErrorKind::kDimension, "ray_stream: per-camera inputs disagree in count");
  Var total = ray_scatter(t, contexts[0], depths[0], index[0], bev.cells());
  for (std::size_t i = 1; i < contexts.size(); ++i) {
    total = ad::add(t, total, ray_scatter(t, contexts[i], depths[i], index[i], bev.cells()));
  }
  return ad::reshape(t, total, {bev.n, bev.n, t.shape(total).back()});
}

std::vector<double> ray_cell_weights(std::span<const FrustumIndex> index, std::size_t cells) {
  std::vector<std::size_t> rays(cells, 0);
  for (const auto& fi : index) {
    for (std::size_t e = 0; e < fi.entries.size(); ++e) {
      const auto& cur = fi.entries[e];
      require(cur.cell < cells, ErrorKind::kDimension, "ray_cell_weights: cell out of range");
      // Entries are sorted by (cell, pixel), so a new pixel starts a new ray.
      if (e == 0 || fi.entries[e - 1].cell != cur.cell || fi.entries[e - 1].pixel != cur.pixel) {
        ++rays[cur.cell];
      }
    }
  }
  std::vector<double> w(cells, 0.0);
  for (std::size_t c = 0; c < cells; ++c) {
    if (rays[c] > 0) w[c] = 1.0 / static_cast<double>(rays[c]);
  }
  return w;
}

Var scale_rows(Tape& t, Var x, const std::vector<double>& weight) {
  const Shape shape = t.shape(x);
  const std::size_t rows = t.value(x).numel() / std::max<std::size_t>(1, shape.back());
  require(rows == weight.size(), ErrorKind::kDimension, "scale_rows: weight count mismatch");
  std::vector<std::int64_t> idx(rows);
  for (std::size_t r = 0; r < rows; ++r) idx[r] = static_cast<std::int64_t>(r);
  Var flat = ad::reshape(t, x, {rows, shape.back()});
  return ad::reshape(t, ad::scatter_add(t, flat, std::move(idx), rows, weight), shape);
}

BinPartition partition_points(const PointCloud& pc, const BEVConfig& bev) {
  BinPartition part;
  part.bins.resize(bev.cells());
  part.cell_of_point.assign(pc.size(), -1);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const auto cell = bev_index(pc.points[i][0], pc.points[i][1], bev);
    if (!cell) continue;
    const std::size_t flat = bev.flat(*cell);
    part.bins[flat].push_back(static_cast<std::uint32_t>(i));
    part.cell_of_point[i] = static_cast<std::int64_t>(flat);
  }
  return part;
}

PointStreamIndex build_point_stream(const PointCloud& pc, const std::vector<CameraParams>& cams,
                                    const BEVConfig& bev) {
  const BinPartition part = partition_points(pc, bev);
  PointStreamIndex index;
  index.point_cell.assign(pc.size(), -1);
  index.reads.assign(pc.size(), 0);
  std::vector<std::vector<std::int64_t>> rows(pc.size());
  std::vector<std::size_t> visible_in_cell(bev.cells(), 0);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    if (part.cell_of_point[i] < 0) continue;
    const Vec3 p(pc.points[i][0], pc.points[i][1], pc.points[i][2]);
    std::size_t offset = 0;
    for (const auto& cam : cams) {
      const auto proj = project(p, cam);
      if (proj) {
        const auto px = static_cast<std::size_t>(std::floor(proj->u));
        const auto py = static_cast<std::size_t>(std::floor(proj->v));
        rows[i].push_back(static_cast<std::int64_t>(offset + py * cam.width + px));
      }
      offset += cam.width * cam.height;
    }
    index.reads[i] = static_cast<std::uint32_t>(rows[i].size());
    if (rows[i].empty()) continue;
    index.point_cell[i] = part.cell_of_point[i];
    ++visible_in_cell[static_cast<std::size_t>(part.cell_of_point[i])];
  }
  for (std::size_t i = 0; i < pc.size(); ++i) {
    if (index.point_cell[i] < 0) continue;
    const auto cell = static_cast<std::size_t>(index.point_cell[i]);
    const double wgt = 1.0 / (static_cast<double>(rows[i].size()) *
                              static_cast<double>(visible_in_cell[cell]));
    for (std::int64_t r : rows[i]) {
      index.source_row.push_back(r);
      index.target_cell.push_back(index.point_cell[i]);
      index.weight.push_back(wgt);
    }
  }
  return index;
}

Var point_stream(Tape& t, std::span<const Var> hr, const PointStreamIndex& index,
                 const BEVConfig& bev) {
  require(!hr.empty(), ErrorKind::kDimension, "point_stream needs at least one camera");
  const std::size_t c = t.shape(hr[0]).back();
  std::vector<Var> cols;
  for (Var v : hr) {
    const Shape& s = t.shape(v);
    require(s.size() == 3 && s[2] == c, ErrorKind::kDimension,
            "point_stream: HR features must be [H, W, C_hr] with equal channels");
    cols.push_back(ad::transpose(t, ad::reshape(t, v, {s[0] * s[1], c})));
  }
  if (index.source_row.empty()) return t.constant(Tensor({bev.n, bev.n, c}));
  Var stacked = ad::transpose(t, ad::concat(t, cols));
  Var picked = ad::gather_rows(t, stacked, index.source_row);
  Var bev_rows = ad::scatter_add(t, picked, index.target_cell, bev.cells(), index.weight);
  return ad::reshape(t, bev_rows, {bev.n, bev.n, c});
}

Var fuse_camera_bev(Tape& t, const BoundParams& p, Var ray_bev, Var point_bev) {
  const Shape& a = t.shape(ray_bev);
  const Shape& b = t.shape(point_bev);
  require(a.size() == 3 && b.size() == 3 && a[0] == b[0] && a[1] == b[1],
          ErrorKind::kDimension,
          "fuse_camera_bev: spatial shapes differ " + shape_string(a) + " vs " + shape_string(b));
  Var x = ad::concat(t, {ray_bev, point_bev});
  x = ad::relu(t, nn::conv2d(t, x, p["camera.fuser.c1.w"], std::nullopt, 3, 1, 1));
  return nn::conv2d(t, x, p["camera.fuser.c2.w"], std::nullopt, 3, 1, 1);
}

}  // namespace bevkit
