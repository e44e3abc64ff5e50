#include "bevkit/predictor.hpp"

#include <algorithm>
#include <cmath>

#include "bevkit/error.hpp"

namespace bevkit {

namespace {

void add_mlp2(ParamStore& s, Rng& rng, const std::string& prefix, std::size_t in,
              std::size_t hidden, std::size_t out, const std::string& group) {
  s.add_linear(rng, prefix + ".l1", in, hidden, group);
  s.add_linear(rng, prefix + ".l2", hidden, out, group);
}

void add_fuser(ParamStore& s, Rng& rng, const std::string& prefix, std::size_t c) {
  for (const char* m : {".gamma_s", ".beta_s", ".gamma_g", ".beta_g"}) {
    s.add_linear(rng, prefix + m, 2 * c, c, "tsp");
  }
  // Start near the identity modulation gamma = 1, beta = 0.
  for (const char* m : {".gamma_s", ".gamma_g"}) s.get(prefix + m + std::string(".b")).fill(1.0);
  s.add_linear(rng, prefix + ".psi", 2 * c, c, "tsp");
}

Var flat_rows(Tape& t, Var x) {
  const Shape& s = t.shape(x);
  require(s.size() == 3, ErrorKind::kDimension, "expected a [X, Y, C] BEV tensor, got " +
                                                    shape_string(s));
  return ad::reshape(t, x, {s[0] * s[1], s[2]});
}

std::vector<std::int64_t> as_index(const std::vector<std::size_t>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

void add_predictor_params(ParamStore& store, Rng& rng, const PredictorConfig& cfg) {
  const std::size_t c = cfg.channels, n = cfg.classes;
  require(c % 4 == 0, ErrorKind::kDimension, "predictor channels must be a multiple of 4");
  store.add_conv(rng, "fuser.c1", cfg.camera_channels + cfg.lidar_channels, c, 3, "fuser");
  store.add_conv(rng, "fuser.c2", c, c, 3, "fuser");

  store.add_conv(rng, "heatmap.c1", c, c, 3, "heatmap");
  store.add_linear(rng, "heatmap.c2", c, n, "heatmap");
  store.get("heatmap.c2.b").fill(kPriorBias);

  Tensor embed({n, c});
  for (double& v : embed.data()) v = rng.normal(1.0 / std::sqrt(static_cast<double>(c)));
  store.add("decoder.class_embed", std::move(embed), "decoder");
  store.add_linear(rng, "decoder.q", c, c, "decoder", false);
  store.add_linear(rng, "decoder.k", c, c, "decoder", false);
  store.add_linear(rng, "decoder.v", c, c, "decoder", false);
  store.add_linear(rng, "decoder.o", c, c, "decoder");
  add_mlp2(store, rng, "decoder.ffn", c, cfg.ffn_hidden, c, "decoder");

  if (cfg.task_specific) {
    store.add_conv(rng, "tsp.enc_c.c1", cfg.camera_channels, c, 3, "tsp");
    store.add_linear(rng, "tsp.enc_c.c2", c, c, "tsp");
    store.add_conv(rng, "tsp.enc_l.c1", cfg.lidar_channels, c, 3, "tsp");
    store.add_linear(rng, "tsp.enc_l.c2", c, c, "tsp");
    store.add_linear(rng, "tsp.attn.q", c, c, "tsp", false);
    store.add_linear(rng, "tsp.attn.k", c, c, "tsp", false);
    store.add_linear(rng, "tsp.attn.v", c, c, "tsp", false);
    store.add_linear(rng, "tsp.attn.o", c, c, "tsp");
    add_mlp2(store, rng, "tsp.ffn_c", 2 * c, cfg.ffn_hidden, c, "tsp");
    add_mlp2(store, rng, "tsp.ffn_b", 2 * c, cfg.ffn_hidden, c, "tsp");
    add_fuser(store, rng, "tsp.fuse_cls", c);
    add_fuser(store, rng, "tsp.fuse_box", c);
  }

  for (const std::string head : {"head", "aux"}) {
    if (head == "aux" && !cfg.task_specific) continue;
    const std::string group = head;
    add_mlp2(store, rng, head + ".cls", c, cfg.head_hidden, n, group);
    store.get(head + ".cls.l2.b").fill(kPriorBias);
    add_mlp2(store, rng, head + ".box", c, cfg.head_hidden, kBoxDims, group);
  }
}

Var fuse_bev(Tape& t, const BoundParams& p, Var camera_bev, Var lidar_bev) {
  const Shape& a = t.shape(camera_bev);
  const Shape& b = t.shape(lidar_bev);
  require(a.size() == 3 && b.size() == 3 && a[0] == b[0] && a[1] == b[1], ErrorKind::kDimension,
          "fuse_bev: camera BEV " + shape_string(a) + " and LiDAR BEV " + shape_string(b) +
              " differ spatially");
  Var x = ad::concat(t, {camera_bev, lidar_bev});
  x = ad::relu(t, nn::conv2d(t, x, p["fuser.c1.w"], p.maybe("fuser.c1.b"), 3, 1, 1));
  return ad::relu(t, nn::conv2d(t, x, p["fuser.c2.w"], p.maybe("fuser.c2.b"), 3, 1, 1));
}

Var heatmap_logits(Tape& t, const BoundParams& p, Var fused) {
  Var x = ad::relu(t, nn::conv2d(t, fused, p["heatmap.c1.w"], p.maybe("heatmap.c1.b"), 3, 1, 1));
  return ad::linear(t, x, p["heatmap.c2.w"], p.maybe("heatmap.c2.b"));
}

Var heatmap_head(Tape& t, const BoundParams& p, Var fused) {
  return ad::sigmoid(t, heatmap_logits(t, p, fused));
}

std::vector<std::size_t> CandidateSet::cells(std::size_t grid_y) const {
  std::vector<std::size_t> out;
  out.reserve(items.size());
  for (const auto& c : items) out.push_back(c.gx * grid_y + c.gy);
  return out;
}

CandidateSet select_candidates(const Tensor& heatmap, std::size_t k) {
  require(heatmap.rank() == 3, ErrorKind::kDimension, "select_candidates expects [X, Y, N]");
  require(k >= 1, ErrorKind::kContract, "select_candidates: K must be at least 1");
  const std::size_t nx = heatmap.dim(0), ny = heatmap.dim(1), nc = heatmap.dim(2);
  require(nc >= 1, ErrorKind::kDimension, "select_candidates: heatmap has no classes");
  std::vector<double> score(nx * ny);
  std::vector<std::size_t> cls(nx * ny);
  for (std::size_t i = 0; i < nx * ny; ++i) {
    const double* row = heatmap.ptr() + i * nc;
    const auto it = std::max_element(row, row + nc);
    score[i] = *it;
    cls[i] = static_cast<std::size_t>(it - row);
  }
  CandidateSet out;
  for (std::size_t gx = 0; gx < nx; ++gx) {
    for (std::size_t gy = 0; gy < ny; ++gy) {
      const double s = score[gx * ny + gy];
      bool peak = true;
      for (int dx = -1; dx <= 1 && peak; ++dx) {
        for (int dy = -1; dy <= 1 && peak; ++dy) {
          if (dx == 0 && dy == 0) continue;
          const auto x = static_cast<std::int64_t>(gx) + dx;
          const auto y = static_cast<std::int64_t>(gy) + dy;
          if (x < 0 || y < 0 || x >= static_cast<std::int64_t>(nx) ||
              y >= static_cast<std::int64_t>(ny)) {
            continue;
          }
          peak = s >= score[static_cast<std::size_t>(x) * ny + static_cast<std::size_t>(y)];
        }
      }
      if (peak) out.items.push_back({gx, gy, cls[gx * ny + gy], s});
    }
  }
  // Cells were pushed in (gx, gy) order, so a stable sort keeps that order
  // among equal scores.
  std::stable_sort(out.items.begin(), out.items.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  if (out.items.size() > k) out.items.resize(k);
  return out;
}

Tensor grid_posenc(const std::vector<std::size_t>& cells, std::size_t grid_y,
                   std::size_t channels) {
  require(channels % 4 == 0, ErrorKind::kDimension, "posenc channels must be a multiple of 4");
  const std::size_t half = channels / 2;
  Tensor pe({cells.size(), channels});
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const double coord[2] = {static_cast<double>(cells[r] / grid_y),
                             static_cast<double>(cells[r] % grid_y)};
    double* row = pe.ptr() + r * channels;
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t j = 0; j < half / 2; ++j) {
        const double freq = std::pow(100.0, -2.0 * static_cast<double>(j) /
                                                static_cast<double>(half));
        row[a * half + 2 * j] = std::sin(coord[a] * freq);
        row[a * half + 2 * j + 1] = std::cos(coord[a] * freq);
      }
    }
  }
  return pe;
}

Attention attention(Tape& t, Var q, Var k, Var v, double scale) {
  Var logits = ad::scale(t, ad::linear(t, q, k), scale);
  Var weights = ad::softmax(t, logits, 1);
  return {ad::linear(t, weights, ad::transpose(t, v)), weights};
}

DecoderOutput decode_general(Tape& t, const BoundParams& p, Var fused,
                             const CandidateSet& cands) {
  require(cands.size() >= 1, ErrorKind::kContract, "decode_general needs at least one candidate");
  const Shape& s = t.shape(fused);
  require(s.size() == 3, ErrorKind::kDimension, "decode_general expects B_f [X, Y, C]");
  const std::size_t cells = s[0] * s[1], c = s[2];
  Var rows = flat_rows(t, fused);
  const std::vector<std::size_t> cand_cells = cands.cells(s[1]);
  std::vector<std::int64_t> classes;
  for (const auto& cd : cands.items) classes.push_back(static_cast<std::int64_t>(cd.cls));

  Var query = ad::add(t, ad::gather_rows(t, rows, as_index(cand_cells)),
                      ad::gather_rows(t, p["decoder.class_embed"], std::move(classes)));
  query = ad::add(t, query, t.constant(grid_posenc(cand_cells, s[1], c)));

  std::vector<std::size_t> all(cells);
  for (std::size_t i = 0; i < cells; ++i) all[i] = i;
  Var keyed = ad::add(t, rows, t.constant(grid_posenc(all, s[1], c)));

  Var q = ad::linear(t, query, p["decoder.q.w"]);
  Var k = ad::linear(t, keyed, p["decoder.k.w"]);
  Var v = ad::linear(t, rows, p["decoder.v.w"]);
  Attention att = attention(t, q, k, v, 1.0 / std::sqrt(static_cast<double>(c)));
  Var a = ad::linear(t, att.out, p["decoder.o.w"], p.maybe("decoder.o.b"));
  return {ad::add(t, a, nn::mlp2(t, p, "decoder.ffn", a)), att.weights};
}

TaskFeatures task_specific_features(Tape& t, const BoundParams& p, Var camera_bev,
                                    Var lidar_bev, const CandidateSet& cands) {
  const Shape& sc = t.shape(camera_bev);
  const Shape& sl = t.shape(lidar_bev);
  require(sc.size() == 3 && sl.size() == 3 && sc[0] == sl[0] && sc[1] == sl[1],
          ErrorKind::kDimension, "task_specific_features: B_c and B_l differ spatially");
  const std::size_t k = cands.size();
  require(k >= 1, ErrorKind::kContract, "task_specific_features needs at least one candidate");
  const std::vector<std::size_t> cells = cands.cells(sc[1]);
  auto encode = [&](Var bev, const std::string& prefix) {
    Var h = ad::relu(t, nn::conv2d_at(t, bev, cells, p[prefix + ".c1.w"],
                                      p.maybe(prefix + ".c1.b"), 3));
    return ad::linear(t, h, p[prefix + ".c2.w"], p.maybe(prefix + ".c2.b"));
  };
  Var qc = encode(camera_bev, "tsp.enc_c");
  Var ql = encode(lidar_bev, "tsp.enc_l");
  Var tokens = nn::stack_rows(t, qc, ql);
  const double scale = 1.0 / std::sqrt(static_cast<double>(t.shape(qc).back()));
  Attention att = attention(t, ad::linear(t, tokens, p["tsp.attn.q.w"]),
                            ad::linear(t, tokens, p["tsp.attn.k.w"]),
                            ad::linear(t, tokens, p["tsp.attn.v.w"]), scale);
  Var mixed = ad::add(t, tokens,
                      ad::linear(t, att.out, p["tsp.attn.o.w"], p.maybe("tsp.attn.o.b")));
  Var pair = ad::concat(t, {nn::slice_rows(t, mixed, 0, k), nn::slice_rows(t, mixed, k, 2 * k)});
  return {nn::mlp2(t, p, "tsp.ffn_c", pair), nn::mlp2(t, p, "tsp.ffn_b", pair)};
}

Var task_specific_fuse(Tape& t, const BoundParams& p, const std::string& prefix, Var f_g,
                       Var f_s) {
  require(t.shape(f_g).size() == 2 && t.shape(f_s).size() == 2 &&
              t.shape(f_g)[0] == t.shape(f_s)[0],
          ErrorKind::kDimension, "task_specific_fuse: f_g and f_s must be [K, C] with equal K");
  Var both = ad::concat(t, {f_g, f_s});
  auto map = [&](const char* m) {
    return ad::linear(t, both, p[prefix + m + ".w"], p.maybe(prefix + m + ".b"));
  };
  Var mod_s = ad::add(t, ad::mul(t, map(".gamma_s"), f_s), map(".beta_s"));
  Var mod_g = ad::add(t, ad::mul(t, map(".gamma_g"), f_g), map(".beta_g"));
  return ad::linear(t, ad::concat(t, {mod_s, mod_g}), p[prefix + ".psi.w"],
                    p.maybe(prefix + ".psi.b"));
}

HeadOutput subtask_heads(Tape& t, const BoundParams& p, const std::string& prefix, Var q_cls,
                         Var q_box) {
  require(t.shape(q_cls)[0] == t.shape(q_box)[0], ErrorKind::kDimension,
          "subtask_heads: class and box queries differ in row count");
  return {nn::mlp2(t, p, prefix + ".cls", q_cls), nn::mlp2(t, p, prefix + ".box", q_box)};
}

std::vector<Detection> decode_detections(const Tensor& logits, const Tensor& boxes,
                                         const CandidateSet& cands, const BEVConfig& bev) {
  const std::size_t k = cands.size();
  require(logits.rank() == 2 && boxes.rank() == 2 && logits.dim(0) == k && boxes.dim(0) == k &&
              boxes.dim(1) == kBoxDims,
          ErrorKind::kDimension, "decode_detections: head outputs do not match candidates");
  std::vector<Detection> out;
  out.reserve(k);
  const std::size_t n = logits.dim(1);
  for (std::size_t i = 0; i < k; ++i) {
    const double* lg = logits.ptr() + i * n;
    const double* b = boxes.ptr() + i * kBoxDims;
    Detection d;
    const auto best = std::max_element(lg, lg + n);
    d.class_id = static_cast<std::size_t>(best - lg);
    d.score = kernels::sigmoid(*best);
    const Vec2 cc = bev.cell_center(cands.items[i].gx, cands.items[i].gy);
    d.center = Vec3(cc.x() + b[0] * bev.cell_size_x(), cc.y() + b[1] * bev.cell_size_y(), b[2]);
    d.size = Vec3(std::exp(b[3]), std::exp(b[4]), std::exp(b[5]));
    d.yaw = (b[6] == 0.0 && b[7] == 0.0) ? 0.0 : std::atan2(b[6], b[7]);
    d.velocity = Vec2(b[8], b[9]);
    out.push_back(d);
  }
  return out;
}

}  // namespace bevkit
