// Detection-quality metrics: greedy TP/FP labeling against ground truth,
// all-points (precision envelope) average precision, recall at a proposal
// budget, and boxes-per-image at a precision operating point.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "storefront/geometry.hpp"

namespace storefront {

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
  double score_threshold = 0.0;
};

struct EvalCounts {
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;
  int images = 0;
};

struct EvalReport {
  std::vector<PrPoint> pr_points;
  double average_precision = 0.0;
  std::map<int, double> recall_at_budget;
  std::map<double, double> boxes_per_image_at_precision;
  EvalCounts counts;
};

// Greedy matching in score order: each detection claims the unclaimed ground
// truth with the highest overlap >= iou_threshold (smallest index on ties),
// otherwise it is a false positive. Detections must arrive sorted by
// descending final score. Overlap is seam-aware.
inline std::vector<bool> match_detections_to_gt(const std::vector<Detection>& dets,
                                                const std::vector<Box>& gts,
                                                double iou_threshold = 0.5) {
  for (std::size_t i = 1; i < dets.size(); ++i) {
    if (dets[i].final_score > dets[i - 1].final_score) {
      throw std::invalid_argument("match_detections_to_gt: detections must be sorted by score");
    }
  }
  std::vector<bool> labels(dets.size(), false);
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    double best = 0.0;
    int best_j = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (claimed[j]) continue;
      const double ov = jaccard_wrapped(dets[i].box, gts[j]);
      if (ov >= iou_threshold && ov > best) {
        best = ov;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) {
      labels[i] = true;
      claimed[best_j] = true;
    }
  }
  return labels;
}

// Area under the precision-recall step curve with the precision envelope
// (all-points interpolation). Labels must be in descending score order.
inline double average_precision(const std::vector<bool>& labels, int num_gts) {
  if (num_gts < 0) throw std::invalid_argument("average_precision: negative gt count");
  if (num_gts == 0) return labels.empty() ? 1.0 : 0.0;
  if (labels.empty()) return 0.0;

  const std::size_t n = labels.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / num_gts;
  }
  // Envelope: precision at recall r is the max precision at any recall >= r.
  std::vector<double> envelope(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    running = std::max(running, precision[i]);
    envelope[i] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

// Fraction of ground truths covered by at least one of the `budget` highest
// scoring proposals of their image.
inline double recall_at_budget(const std::map<std::string, std::vector<Detection>>& proposals_by_image,
                               const std::map<std::string, std::vector<Box>>& gts_by_image,
                               double iou_threshold, int budget) {
  if (budget < 0) throw std::invalid_argument("recall_at_budget: negative budget");
  int covered = 0;
  int total = 0;
  for (const auto& [image_id, gts] : gts_by_image) {
    total += static_cast<int>(gts.size());
    const auto it = proposals_by_image.find(image_id);
    if (it == proposals_by_image.end()) continue;
    std::vector<Detection> props = it->second;
    std::sort(props.begin(), props.end(), detection_score_order);
    const std::size_t take = std::min<std::size_t>(props.size(), static_cast<std::size_t>(budget));
    for (const Box& g : gts) {
      for (std::size_t k = 0; k < take; ++k) {
        if (jaccard_wrapped(props[k].box, g) >= iou_threshold) {
          ++covered;
          break;
        }
      }
    }
  }
  if (total == 0) return 1.0;
  return static_cast<double>(covered) / total;
}

struct OperatingPoint {
  double precision = 0.0;
  double boxes_per_image = 0.0;
  double score_threshold = 0.0;
};

// Finds the lowest score threshold whose running precision still meets
// target_precision and reports kept boxes per image there. Labels and scores
// in descending score order.
inline OperatingPoint boxes_per_image_at_precision(const std::vector<bool>& labels,
                                                   const std::vector<double>& scores,
                                                   int images, double target_precision) {
  if (labels.size() != scores.size()) {
    throw std::invalid_argument("boxes_per_image_at_precision: labels/scores size mismatch");
  }
  if (images <= 0) throw std::invalid_argument("boxes_per_image_at_precision: images must be positive");
  int tp = 0;
  bool found = false;
  OperatingPoint best;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) ++tp;
    // A threshold cut must not split equal scores.
    if (i + 1 < labels.size() && scores[i + 1] == scores[i]) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
    if (precision >= target_precision) {
      found = true;
      best.precision = precision;
      best.boxes_per_image = static_cast<double>(i + 1) / images;
      best.score_threshold = scores[i];
    }
  }
  if (!found) {
    throw std::runtime_error("boxes_per_image_at_precision: target precision unattainable");
  }
  return best;
}

// Full report over a labeled dataset (detections flattened across images,
// descending score).
inline EvalReport evaluate_detections(const std::vector<Detection>& dets_sorted,
                                      const std::vector<bool>& labels, int num_gts, int images) {
  if (dets_sorted.size() != labels.size()) {
    throw std::invalid_argument("evaluate_detections: labels size mismatch");
  }
  EvalReport report;
  report.counts.images = images;
  int tp = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) ++tp;
    PrPoint pt;
    pt.precision = static_cast<double>(tp) / static_cast<double>(i + 1);
    pt.recall = num_gts > 0 ? static_cast<double>(tp) / num_gts : 0.0;
    pt.score_threshold = dets_sorted[i].final_score;
    report.pr_points.push_back(pt);
  }
  report.counts.true_positives = tp;
  report.counts.false_positives = static_cast<int>(labels.size()) - tp;
  report.counts.false_negatives = num_gts - tp;
  report.average_precision = average_precision(labels, num_gts);
  return report;
}

}  // namespace storefront
