#pragma once

#include <string>
#include <vector>

#include "ctdnet/box.hpp"

namespace ctdnet::metrics {

struct Detection {
  int image_id = 0;
  int class_id = 0;
  double score = 0.0;
  Box box;
};

struct GroundTruthBox {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

enum class SizeBucket { kSmall, kMedium, kLarge };

double iou(const Box& a, const Box& b);

/// Area thresholds 32^2 and 96^2 in input-image pixel units; the boundary is
/// closed on the lower edge of medium and large (area == 1024 is medium,
/// area == 9216 is large).
SizeBucket size_bucket(const Box& b);

struct MatchResult {
  std::vector<bool> tp;         // per detection, input order
  std::vector<int> matched_gt;  // index into the gts list, -1 when unmatched
};

/// VOC-style greedy matching: detections in descending score (ties by input
/// order) claim the unmatched same-class same-image ground truth of highest
/// IoU >= threshold; each ground truth matches at most once.
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<GroundTruthBox>& gts, double iou_thresh);

/// All-point interpolated AP: flags and scores in input order, ranked by
/// (score desc, input order), precision envelope made non-increasing from the
/// right, integrated over recall steps. 0 when num_gt == 0.
double average_precision(const std::vector<bool>& tp_flags, const std::vector<double>& scores,
                         int num_gt);

struct EvalReport {
  double map = 0.0;
  double ap_small = 0.0, ap_medium = 0.0, ap_large = 0.0;
  bool small_populated = false, medium_populated = false, large_populated = false;
  std::vector<std::pair<int, double>> per_class;  // (class id, AP), classes with >= 1 GT
};

/// mAP at IoU 0.5 over classes with at least one ground truth. Size-bucketed
/// AP restricts ground truths to the bucket; detections whose match is an
/// out-of-bucket ground truth are dropped from that bucket's tally.
EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts);

std::string format_report(const EvalReport& r);

// Whitespace-separated text files:
//   ground truth: image_id class_id x1 y1 x2 y2
//   detections:   image_id class_id score x1 y1 x2 y2
std::vector<GroundTruthBox> read_ground_truth(const std::string& path);
void write_ground_truth(const std::string& path, const std::vector<GroundTruthBox>& gts);
std::vector<Detection> read_detections(const std::string& path);
void write_detections(const std::string& path, const std::vector<Detection>& dets);

}  // namespace ctdnet::metrics
