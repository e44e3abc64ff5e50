#include "bevkit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bevkit/error.hpp"

namespace bevkit {

namespace {

struct SquareSolution {
  std::vector<std::size_t> col_of_row;
  std::vector<double> u, v;
  double cost = 0.0;
};

// Shortest augmenting path Hungarian method with potentials on a square
// matrix (1-based internally).
SquareSolution solve_square(const Eigen::MatrixXd& a) {
  const std::size_t n = static_cast<std::size_t>(a.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) -
                           u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  SquareSolution s;
  s.col_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] != 0) s.col_of_row[p[j] - 1] = j - 1;
  }
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  for (std::size_t i = 0; i < n; ++i) {
    s.cost += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s.col_of_row[i]));
  }
  return s;
}

// Optimal cost over the rows/columns not yet fixed.
double residual_optimum(const Eigen::MatrixXd& sq, const std::vector<char>& row_free,
                        const std::vector<char>& col_free) {
  std::vector<Eigen::Index> rows, cols;
  for (std::size_t i = 0; i < row_free.size(); ++i) {
    if (row_free[i]) rows.push_back(static_cast<Eigen::Index>(i));
  }
  for (std::size_t j = 0; j < col_free.size(); ++j) {
    if (col_free[j]) cols.push_back(static_cast<Eigen::Index>(j));
  }
  if (rows.empty()) return 0.0;
  Eigen::MatrixXd sub(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      sub(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sq(rows[i], cols[j]);
    }
  }
  return solve_square(sub).cost;
}

}  // namespace

MatchResult hungarian_match(const Eigen::MatrixXd& cost) {
  const auto m = static_cast<std::size_t>(cost.rows());
  const auto n = static_cast<std::size_t>(cost.cols());
  require(cost.allFinite(), ErrorKind::kNumeric, "hungarian_match: non-finite cost");
  MatchResult res;
  if (m == 0 || n == 0) {
    for (std::size_t i = 0; i < m; ++i) res.unmatched_predictions.push_back(i);
    for (std::size_t j = 0; j < n; ++j) res.unmatched_truths.push_back(j);
    return res;
  }
  // Zero-padded square extension; padded pairs are never reported.
  const std::size_t s = std::max(m, n);
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s),
                                             static_cast<Eigen::Index>(s));
  sq.topLeftCorner(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) = cost;
  SquareSolution sol = solve_square(sq);
  const double opt = sol.cost;
  const double tol = 1e-9 * (1.0 + std::abs(opt)) + 1e-12 * static_cast<double>(s);

  // Greedy lexicographic refinement: take the smallest real pair that still
  // belongs to some optimal assignment. Only zero-reduced-cost pairs can.
  std::vector<char> row_free(s, 1), col_free(s, 1);
  double fixed_cost = 0.0;
  const std::size_t target = std::min(m, n);
  while (res.pairs.size() < target) {
    bool found = false;
    for (std::size_t i = 0; i < m && !found; ++i) {
      if (!row_free[i]) continue;
      for (std::size_t j = 0; j < n && !found; ++j) {
        if (!col_free[j]) continue;
        const double c = cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        const double reduced = c - sol.u[i] - sol.v[j];
        if (std::abs(reduced) > tol * 10.0) continue;
        bool feasible = sol.col_of_row[i] == j;
        if (!feasible) {
          row_free[i] = col_free[j] = 0;
          const double rest = residual_optimum(sq, row_free, col_free);
          row_free[i] = col_free[j] = 1;
          feasible = std::abs(fixed_cost + c + rest - opt) <= tol;
        }
        if (!feasible) continue;
        found = true;
        row_free[i] = col_free[j] = 0;
        fixed_cost += c;
        res.pairs.emplace_back(i, j);
        if (sol.col_of_row[i] != j) {
          // Re-anchor the reference solution on the new partial assignment.
          std::vector<Eigen::Index> rows, cols;
          for (std::size_t r = 0; r < s; ++r) {
            if (row_free[r]) rows.push_back(static_cast<Eigen::Index>(r));
            if (col_free[r]) cols.push_back(static_cast<Eigen::Index>(r));
          }
          Eigen::MatrixXd sub(rows.size(), cols.size());
          for (std::size_t a = 0; a < rows.size(); ++a) {
            for (std::size_t b = 0; b < cols.size(); ++b) {
              sub(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                  sq(rows[a], cols[b]);
            }
          }
          const SquareSolution part = solve_square(sub);
          for (std::size_t a = 0; a < rows.size(); ++a) {
            sol.col_of_row[static_cast<std::size_t>(rows[a])] =
                static_cast<std::size_t>(cols[part.col_of_row[a]]);
            sol.u[static_cast<std::size_t>(rows[a])] = part.u[a];
          }
          for (std::size_t b = 0; b < cols.size(); ++b) {
            sol.v[static_cast<std::size_t>(cols[b])] = part.v[b];
          }
        }
      }
    }
    require(found, ErrorKind::kNumeric, "hungarian_match: refinement lost optimality");
  }
  std::sort(res.pairs.begin(), res.pairs.end());
  res.cost = fixed_cost;
  std::vector<char> pm(m, 0), gm(n, 0);
  for (const auto& [i, j] : res.pairs) pm[i] = gm[j] = 1;
  for (std::size_t i = 0; i < m; ++i) {
    if (!pm[i]) res.unmatched_predictions.push_back(i);
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!gm[j]) res.unmatched_truths.push_back(j);
  }
  return res;
}

void LossWeights::validate() const {
  for (double w : {cls_aux, box_aux, depth, heat, box}) {
    require(w >= 0.0 && std::isfinite(w), ErrorKind::kDomain, "loss weights must be >= 0");
  }
}

double focal_term(double p, double target, const FocalParams& fp) {
  const double q = std::clamp(p, kLossProbFloor, 1.0 - kLossProbFloor);
  const double pos = -fp.alpha * std::pow(1.0 - q, fp.gamma) * std::log(q);
  const double neg = -(1.0 - fp.alpha) * std::pow(q, fp.gamma) * std::log(1.0 - q);
  return target * pos + (1.0 - target) * neg;
}

namespace {

double focal_grad(double p, double target, const FocalParams& fp) {
  if (p < kLossProbFloor || p > 1.0 - kLossProbFloor) return 0.0;
  const double a = fp.alpha, g = fp.gamma;
  // d/dp of -a (1-p)^g ln p and -(1-a) p^g ln(1-p).
  const double dpos =
      a * g * std::pow(1.0 - p, g - 1.0) * std::log(p) - a * std::pow(1.0 - p, g) / p;
  const double dneg = -(1.0 - a) * g * std::pow(p, g - 1.0) * std::log(1.0 - p) +
                      (1.0 - a) * std::pow(p, g) / (1.0 - p);
  return target * dpos + (1.0 - target) * dneg;
}

}  // namespace

Var focal_loss(Tape& t, Var probs, const Tensor& targets, const FocalParams& fp, bool mean) {
  const Tensor& p = t.value(probs);
  require(p.shape() == targets.shape(), ErrorKind::kDimension,
          "focal_loss: prediction " + shape_string(p.shape()) + " vs target " +
              shape_string(targets.shape()));
  const double norm = mean && p.numel() > 0 ? 1.0 / static_cast<double>(p.numel()) : 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) total += focal_term(p[i], targets[i], fp);
  return t.record(
      Tensor::scalar(total * norm), {probs},
      [&t, probs, targets, fp, norm](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& p = t.value(probs);
        Tensor& gp = *gi[0];
        for (std::size_t i = 0; i < p.numel(); ++i) {
          gp[i] += g[0] * norm * focal_grad(p[i], targets[i], fp);
        }
      },
      "focal_loss");
}

Var l1_loss(Tape& t, Var pred, const Tensor& target) {
  const Tensor& p = t.value(pred);
  require(p.shape() == target.shape(), ErrorKind::kDimension,
          "l1_loss: prediction " + shape_string(p.shape()) + " vs target " +
              shape_string(target.shape()));
  if (p.numel() == 0) return t.constant(Tensor::scalar(0.0));
  const double norm = 1.0 / static_cast<double>(p.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) total += std::abs(p[i] - target[i]);
  return t.record(
      Tensor::scalar(total * norm), {pred},
      [&t, pred, target, norm](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& p = t.value(pred);
        Tensor& gp = *gi[0];
        for (std::size_t i = 0; i < p.numel(); ++i) {
          const double d = p[i] - target[i];
          gp[i] += g[0] * norm * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
      },
      "l1_loss");
}

std::array<double, kBoxDims> encode_box(const ObjectBox& box, std::size_t gx, std::size_t gy,
                                        const BEVConfig& bev) {
  const Vec2 cc = bev.cell_center(gx, gy);
  return {(box.center.x() - cc.x()) / bev.cell_size_x(),
          (box.center.y() - cc.y()) / bev.cell_size_y(),
          box.center.z(),
          std::log(box.size.x()),
          std::log(box.size.y()),
          std::log(box.size.z()),
          std::sin(box.yaw),
          std::cos(box.yaw),
          box.velocity.x(),
          box.velocity.y()};
}

SetLoss set_prediction_loss(Tape& t, Var logits, Var boxes, const CandidateSet& cands,
                            const std::vector<ObjectBox>& truths, const BEVConfig& bev,
                            const FocalParams& fp) {
  const std::size_t k = cands.size();
  const Shape& ls = t.shape(logits);
  require(ls.size() == 2 && ls[0] == k && t.shape(boxes) == Shape{k, kBoxDims},
          ErrorKind::kDimension, "set_prediction_loss: head outputs do not match candidates");
  const std::size_t nc = ls[1];
  for (const auto& b : truths) {
    require(b.class_id < nc, ErrorKind::kDomain, "set_prediction_loss: class id out of range");
  }
  Var probs = ad::sigmoid(t, logits);
  const Tensor& p = t.value(probs);
  const Tensor& bx = t.value(boxes);

  Eigen::MatrixXd cost(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(truths.size()));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < truths.size(); ++j) {
      const double q = p[i * nc + truths[j].class_id];
      const double cls = focal_term(q, 1.0, fp) - focal_term(q, 0.0, fp);
      const auto enc = encode_box(truths[j], cands.items[i].gx, cands.items[i].gy, bev);
      double l1 = 0.0;
      for (std::size_t d = 0; d < kBoxDims; ++d) l1 += std::abs(bx[i * kBoxDims + d] - enc[d]);
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          cls + l1 / static_cast<double>(kBoxDims);
    }
  }
  SetLoss out;
  out.match = hungarian_match(cost);

  Tensor cls_target({k, nc});
  for (const auto& [i, j] : out.match.pairs) cls_target[i * nc + truths[j].class_id] = 1.0;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, truths.size()));
  out.cls = ad::scale(t, focal_loss(t, probs, cls_target, fp, false), norm);

  if (out.match.pairs.empty()) {
    out.box = t.constant(Tensor::scalar(0.0));
  } else {
    std::vector<std::int64_t> rows;
    Tensor box_target({out.match.pairs.size(), kBoxDims});
    for (std::size_t r = 0; r < out.match.pairs.size(); ++r) {
      const auto [i, j] = out.match.pairs[r];
      rows.push_back(static_cast<std::int64_t>(i));
      const auto enc = encode_box(truths[j], cands.items[i].gx, cands.items[i].gy, bev);
      std::copy(enc.begin(), enc.end(), box_target.ptr() + r * kBoxDims);
    }
    out.box = l1_loss(t, ad::gather_rows(t, boxes, std::move(rows)), box_target);
  }
  return out;
}

Var aux_loss(Tape& t, const SetLoss& s, const LossWeights& w) {
  return ad::add(t, ad::scale(t, s.cls, w.cls_aux), ad::scale(t, s.box, w.box_aux));
}

double gaussian_radius(double height, double width, double min_overlap) {
  const double b1 = height + width;
  const double c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4.0 * c1)) / 2.0;
  const double b2 = 2.0 * (height + width);
  const double c2 = (1.0 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16.0 * c2)) / 2.0;
  const double a3 = 4.0 * min_overlap;
  const double b3 = -2.0 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1.0) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4.0 * a3 * c3)) / 2.0;
  return std::min({r1, r2, r3});
}

Tensor heatmap_target(const std::vector<ObjectBox>& truths, const BEVConfig& bev,
                      std::size_t classes) {
  const std::size_t n = bev.n;
  Tensor hm({n, n, classes});
  for (const auto& b : truths) {
    require(b.class_id < classes, ErrorKind::kDomain, "heatmap_target: class id out of range");
    const auto cell = bev_index(b.center.x(), b.center.y(), bev);
    if (!cell) continue;
    const double r = gaussian_radius(b.size.x() / bev.cell_size_x(), b.size.y() / bev.cell_size_y());
    const auto radius = std::max<std::int64_t>(1, static_cast<std::int64_t>(r));
    const double sigma = static_cast<double>(2 * radius + 1) / 6.0;
    for (std::int64_t dx = -radius; dx <= radius; ++dx) {
      for (std::int64_t dy = -radius; dy <= radius; ++dy) {
        const std::int64_t x = static_cast<std::int64_t>(cell->gx) + dx;
        const std::int64_t y = static_cast<std::int64_t>(cell->gy) + dy;
        if (x < 0 || y < 0 || x >= static_cast<std::int64_t>(n) ||
            y >= static_cast<std::int64_t>(n)) {
          continue;
        }
        const double g =
            std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        double& slot = hm[(static_cast<std::size_t>(x) * n + static_cast<std::size_t>(y)) *
                              classes + b.class_id];
        slot = std::max(slot, g);
      }
    }
  }
  return hm;
}

Var heatmap_loss(Tape& t, Var probs, const Tensor& target) {
  const Tensor& p = t.value(probs);
  require(p.shape() == target.shape(), ErrorKind::kDimension,
          "heatmap_loss: prediction " + shape_string(p.shape()) + " vs target " +
              shape_string(target.shape()));
  std::size_t peaks = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double q = std::clamp(p[i], kLossProbFloor, 1.0 - kLossProbFloor);
    if (target[i] == 1.0) {
      ++peaks;
      total -= (1.0 - q) * (1.0 - q) * std::log(q);
    } else {
      total -= std::pow(1.0 - target[i], 4.0) * q * q * std::log(1.0 - q);
    }
  }
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, peaks));
  return t.record(
      Tensor::scalar(total * norm), {probs},
      [&t, probs, target, norm](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& p = t.value(probs);
        Tensor& gp = *gi[0];
        for (std::size_t i = 0; i < p.numel(); ++i) {
          const double q = p[i];
          if (q < kLossProbFloor || q > 1.0 - kLossProbFloor) continue;
          double d;
          if (target[i] == 1.0) {
            d = 2.0 * (1.0 - q) * std::log(q) - (1.0 - q) * (1.0 - q) / q;
          } else {
            const double w = std::pow(1.0 - target[i], 4.0);
            d = -w * (2.0 * q * std::log(1.0 - q) - q * q / (1.0 - q));
          }
          gp[i] += g[0] * norm * d;
        }
      },
      "heatmap_loss");
}

}  // namespace bevkit
