#include "bevkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bevkit/error.hpp"

namespace bevkit {

namespace {

double center_distance(const Detection& d, const ObjectBox& g) {
  return std::hypot(d.center.x() - g.center.x(), d.center.y() - g.center.y());
}

// np.interp(x, xp, fp, right=0) for non-decreasing xp.
double interp(double x, const std::vector<double>& xp, const std::vector<double>& fp) {
  if (xp.empty()) return 0.0;
  if (x < xp.front()) return fp.front();
  if (x > xp.back()) return 0.0;
  if (x == xp.back()) return fp.back();
  // Last j with xp[j] <= x.
  const auto it = std::upper_bound(xp.begin(), xp.end(), x);
  const auto j = static_cast<std::size_t>(it - xp.begin()) - 1;
  const double slope = (fp[j + 1] - fp[j]) / (xp[j + 1] - xp[j]);
  return fp[j] + slope * (x - xp[j]);
}

}  // namespace

MatchLabels match_detections(const std::vector<Detection>& dets,
                             const std::vector<ObjectBox>& truths, double threshold) {
  for (std::size_t i = 1; i < dets.size(); ++i) {
    require(dets[i].score <= dets[i - 1].score, ErrorKind::kContract,
            "match_detections: detections must be sorted by descending score");
  }
  MatchLabels out;
  out.tp.assign(dets.size(), false);
  std::vector<char> taken(truths.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::optional<std::size_t> best;
    double best_d = threshold;
    for (std::size_t j = 0; j < truths.size(); ++j) {
      if (taken[j] || truths[j].class_id != dets[i].class_id) continue;
      const double d = center_distance(dets[i], truths[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best) {
      taken[*best] = 1;
      out.tp[i] = true;
      out.pairs.emplace_back(i, *best);
    }
  }
  return out;
}

double average_precision(const std::vector<bool>& labels, std::size_t num_truths) {
  if (num_truths == 0 || labels.empty()) return 0.0;
  std::vector<double> rec, prec;
  std::size_t tp = 0, fp = 0;
  for (bool l : labels) {
    (l ? tp : fp) += 1;
    rec.push_back(static_cast<double>(tp) / static_cast<double>(num_truths));
    prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  constexpr double kMin = 0.1;
  long double num = 0.0L, den = 0.0L;
  for (int i = 11; i <= 100; ++i) {
    const double p = interp(static_cast<double>(i) / 100.0, rec, prec);
    num += std::max(0.0L, static_cast<long double>(p) - static_cast<long double>(kMin));
    den += 1.0L - static_cast<long double>(kMin);
  }
  return static_cast<double>(num / den);
}

double aligned_scale_error(const Vec3& a, const Vec3& b) {
  const double inter = std::min(a.x(), b.x()) * std::min(a.y(), b.y()) * std::min(a.z(), b.z());
  const double uni = a.prod() + b.prod() - inter;
  return uni > 0.0 ? 1.0 - inter / uni : 1.0;
}

TpErrors tp_error_stats(const std::vector<Detection>& dets, const std::vector<ObjectBox>& truths,
                        const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  TpErrors e;
  if (pairs.empty()) return e;
  double ate = 0.0, ase = 0.0, aoe = 0.0, ave = 0.0;
  for (const auto& [i, j] : pairs) {
    const Detection& d = dets.at(i);
    const ObjectBox& g = truths.at(j);
    ate += center_distance(d, g);
    ase += aligned_scale_error(d.size, g.size);
    aoe += std::abs(wrap_angle(d.yaw - g.yaw));
    ave += (d.velocity - g.velocity).norm();
  }
  const double n = static_cast<double>(pairs.size());
  e.ate = ate / n;
  e.ase = ase / n;
  e.aoe = aoe / n;
  e.ave = ave / n;
  e.matches = pairs.size();
  return e;
}

double nds(double map, const TpErrors& e) {
  double s = 5.0 * map;
  for (double err : {e.ate, e.ase, e.aoe, e.ave}) s += 1.0 - std::min(1.0, err);
  return s / 9.0;
}

EvalResult evaluate(const std::vector<FrameDetections>& frames, std::size_t class_count) {
  EvalResult res;
  // Flattened detections and truths keep their frame of origin.
  struct Ref {
    std::size_t frame, index;
  };
  std::vector<Detection> all_dets;
  std::vector<ObjectBox> all_truths;
  std::vector<std::pair<std::size_t, std::size_t>> tp_pairs;
  std::vector<std::size_t> det_offset, truth_offset;
  for (const auto& f : frames) {
    det_offset.push_back(all_dets.size());
    truth_offset.push_back(all_truths.size());
    all_dets.insert(all_dets.end(), f.detections.begin(), f.detections.end());
    all_truths.insert(all_truths.end(), f.truths.begin(), f.truths.end());
    for (const auto& d : f.detections) {
      require(d.class_id < class_count, ErrorKind::kDomain, "evaluate: detection class out of range");
    }
    for (const auto& g : f.truths) {
      require(g.class_id < class_count, ErrorKind::kDomain, "evaluate: truth class out of range");
    }
  }

  double ap_sum = 0.0;
  std::size_t ap_count = 0;
  for (std::size_t c = 0; c < class_count; ++c) {
    std::vector<Ref> dets;
    std::size_t num_truths = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (std::size_t i = 0; i < frames[f].detections.size(); ++i) {
        if (frames[f].detections[i].class_id == c) dets.push_back({f, i});
      }
      for (const auto& g : frames[f].truths) num_truths += g.class_id == c ? 1 : 0;
    }
    if (dets.empty() && num_truths == 0) continue;
    std::stable_sort(dets.begin(), dets.end(), [&](const Ref& a, const Ref& b) {
      return frames[a.frame].detections[a.index].score > frames[b.frame].detections[b.index].score;
    });
    ClassAp entry;
    entry.class_id = c;
    for (std::size_t ti = 0; ti < kDistanceThresholds.size(); ++ti) {
      const double thr = kDistanceThresholds[ti];
      std::vector<std::vector<char>> taken(frames.size());
      for (std::size_t f = 0; f < frames.size(); ++f) taken[f].assign(frames[f].truths.size(), 0);
      std::vector<bool> labels;
      for (const Ref& r : dets) {
        const Detection& d = frames[r.frame].detections[r.index];
        const auto& truths = frames[r.frame].truths;
        std::optional<std::size_t> best;
        double best_d = thr;
        for (std::size_t j = 0; j < truths.size(); ++j) {
          if (taken[r.frame][j] || truths[j].class_id != c) continue;
          const double dist = center_distance(d, truths[j]);
          if (dist < best_d) {
            best_d = dist;
            best = j;
          }
        }
        labels.push_back(best.has_value());
        if (best) {
          taken[r.frame][*best] = 1;
          if (thr == kTpThreshold) {
            tp_pairs.emplace_back(det_offset[r.frame] + r.index, truth_offset[r.frame] + *best);
          }
        }
      }
      entry.ap[ti] = average_precision(labels, num_truths);
    }
    entry.mean = std::accumulate(entry.ap.begin(), entry.ap.end(), 0.0) /
                 static_cast<double>(entry.ap.size());
    ap_sum += entry.mean;
    ++ap_count;
    res.classes.push_back(entry);
  }
  res.map = ap_count > 0 ? ap_sum / static_cast<double>(ap_count) : 0.0;
  res.errors = tp_error_stats(all_dets, all_truths, tp_pairs);
  res.nds = nds(res.map, res.errors);
  return res;
}

}  // namespace bevkit
