#include "ctdnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ctdnet::metrics {

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

SizeBucket size_bucket(const Box& b) {
  require_valid(b, "size_bucket");
  const double area = b.area();
  if (area < 32.0 * 32.0) return SizeBucket::kSmall;
  if (area < 96.0 * 96.0) return SizeBucket::kMedium;
  return SizeBucket::kLarge;
}

namespace {

// Ranks by descending score, stable on input order.
std::vector<size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&dets](size_t a, size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruthBox>& gts, double iou_thresh) {
  MatchResult res;
  res.tp.assign(dets.size(), false);
  res.matched_gt.assign(dets.size(), -1);
  std::vector<bool> gt_used(gts.size(), false);
  for (size_t rank : score_order(dets)) {
    const Detection& d = dets[rank];
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g]) continue;
      if (gts[g].image_id != d.image_id || gts[g].class_id != d.class_id) continue;
      const double v = iou(d.box, gts[g].box);
      if (v >= iou_thresh && v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      gt_used[static_cast<size_t>(best_gt)] = true;
      res.tp[rank] = true;
      res.matched_gt[rank] = best_gt;
    }
  }
  return res;
}

double average_precision(const std::vector<bool>& tp_flags, const std::vector<double>& scores,
                         int num_gt) {
  if (tp_flags.size() != scores.size()) {
    throw std::invalid_argument("average_precision: flags and scores disagree in length");
  }
  if (num_gt < 0) throw std::invalid_argument("average_precision: num_gt must be >= 0");
  if (num_gt == 0) return 0.0;

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<double> precision, recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  int tp = 0, fp = 0;
  for (size_t idx : order) {
    if (tp_flags[idx]) ++tp; else ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }
  // Monotone envelope from the right, then sum the recall steps.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[static_cast<size_t>(i)] =
        std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i) + 1]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

namespace {

double class_ap_in_bucket(const std::vector<Detection>& dets,
                          const std::vector<GroundTruthBox>& gts, const MatchResult& match,
                          int class_id, SizeBucket bucket) {
  int num_gt = 0;
  for (const auto& g : gts) {
    if (g.class_id == class_id && size_bucket(g.box) == bucket) ++num_gt;
  }
  std::vector<bool> flags;
  std::vector<double> scores;
  for (size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].class_id != class_id) continue;
    const int m = match.matched_gt[i];
    if (m >= 0) {
      if (size_bucket(gts[static_cast<size_t>(m)].box) != bucket) continue;  // out-of-bucket match
      flags.push_back(true);
    } else {
      flags.push_back(false);
    }
    scores.push_back(dets[i].score);
  }
  return average_precision(flags, scores, num_gt);
}

}  // namespace

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts) {
  if (gts.empty()) {
    throw std::invalid_argument("evaluate: no ground truths in any class");
  }
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);

  const MatchResult match = match_detections(dets, gts, 0.5);

  EvalReport report;
  double ap_sum = 0.0;
  for (int cls : classes) {
    std::vector<bool> flags;
    std::vector<double> scores;
    int num_gt = 0;
    for (const auto& g : gts) {
      if (g.class_id == cls) ++num_gt;
    }
    for (size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].class_id != cls) continue;
      flags.push_back(match.tp[i]);
      scores.push_back(dets[i].score);
    }
    const double ap = average_precision(flags, scores, num_gt);
    report.per_class.emplace_back(cls, ap);
    ap_sum += ap;
  }
  report.map = ap_sum / static_cast<double>(classes.size());

  const SizeBucket buckets[3] = {SizeBucket::kSmall, SizeBucket::kMedium, SizeBucket::kLarge};
  for (SizeBucket bucket : buckets) {
    double sum = 0.0;
    int populated = 0;
    for (int cls : classes) {
      int num_gt = 0;
      for (const auto& g : gts) {
        if (g.class_id == cls && size_bucket(g.box) == bucket) ++num_gt;
      }
      if (num_gt == 0) continue;
      ++populated;
      sum += class_ap_in_bucket(dets, gts, match, cls, bucket);
    }
    const double ap = populated > 0 ? sum / populated : 0.0;
    switch (bucket) {
      case SizeBucket::kSmall:
        report.ap_small = ap;
        report.small_populated = populated > 0;
        break;
      case SizeBucket::kMedium:
        report.ap_medium = ap;
        report.medium_populated = populated > 0;
        break;
      case SizeBucket::kLarge:
        report.ap_large = ap;
        report.large_populated = populated > 0;
        break;
    }
  }
  return report;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  char buf[64];
  auto line = [&](const char* name, double v, bool populated) {
    if (populated) {
      std::snprintf(buf, sizeof(buf), "%-5s = %.6f\n", name, v);
      os << buf;
    } else {
      std::snprintf(buf, sizeof(buf), "%-5s = n/a (no ground truths)\n", name);
      os << buf;
    }
  };
  line("mAP", r.map, true);
  line("AP_S", r.ap_small, r.small_populated);
  line("AP_M", r.ap_medium, r.medium_populated);
  line("AP_L", r.ap_large, r.large_populated);
  for (const auto& [cls, ap] : r.per_class) {
    std::snprintf(buf, sizeof(buf), "class %d AP = %.6f\n", cls, ap);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<double>> read_rows(const std::string& path, size_t fields,
                                           const char* what) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(std::string("cannot open ") + what + " file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (row.empty()) continue;  // blank line
    if (row.size() != fields) {
      throw std::runtime_error(std::string(what) + " file " + path + " line " +
                               std::to_string(line_no) + ": want " + std::to_string(fields) +
                               " fields, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::vector<GroundTruthBox> read_ground_truth(const std::string& path) {
  std::vector<GroundTruthBox> out;
  for (const auto& r : read_rows(path, 6, "ground-truth")) {
    GroundTruthBox g;
    g.image_id = static_cast<int>(r[0]);
    g.class_id = static_cast<int>(r[1]);
    g.box = Box{r[2], r[3], r[4], r[5]};
    require_valid(g.box, "ground-truth record");
    out.push_back(g);
  }
  return out;
}

void write_ground_truth(const std::string& path, const std::vector<GroundTruthBox>& gts) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open ground-truth file for writing: " + path);
  char buf[160];
  for (const auto& g : gts) {
    std::snprintf(buf, sizeof(buf), "%d %d %.4f %.4f %.4f %.4f\n", g.image_id, g.class_id,
                  g.box.x1, g.box.y1, g.box.x2, g.box.y2);
    os << buf;
  }
}

std::vector<Detection> read_detections(const std::string& path) {
  std::vector<Detection> out;
  for (const auto& r : read_rows(path, 7, "detection")) {
    Detection d;
    d.image_id = static_cast<int>(r[0]);
    d.class_id = static_cast<int>(r[1]);
    d.score = r[2];
    d.box = Box{r[3], r[4], r[5], r[6]};
    require_valid(d.box, "detection record");
    if (!std::isfinite(d.score)) throw std::runtime_error("non-finite detection score in " + path);
    out.push_back(d);
  }
  return out;
}

void write_detections(const std::string& path, const std::vector<Detection>& dets) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open detection file for writing: " + path);
  char buf[192];
  for (const auto& d : dets) {
    std::snprintf(buf, sizeof(buf), "%d %d %.6f %.4f %.4f %.4f %.4f\n", d.image_id, d.class_id,
                  d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2);
    os << buf;
  }
}

}  // namespace ctdnet::metrics
