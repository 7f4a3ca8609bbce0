// Multi-crop panorama inference: per-crop detector evaluation, decoding,
// confidence thresholding, edge filtering, seam-aware merge, global NMS,
// optional postclassification with score fusion, and evaluation-cost
// accounting.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "storefront/geometry.hpp"
#include "storefront/image.hpp"
#include "storefront/multibox_loss.hpp"
#include "storefront/parallel.hpp"
#include "storefront/toy_model.hpp"

namespace storefront {

struct PipelineConfig {
  double proposal_threshold = 0.5;   // confidence cutoff before the edge filter
  double nms_threshold = 0.2;
  int target_proposals_per_pano = 37;
  double expansion_fraction = 0.166;  // proposal growth before postclassification
  bool postclassify = false;
  double edge_margin = 0.1;
  int baseline_proposals_per_pano = 4666;  // selective-search reference cost
};

struct CostReport {
  int crops_evaluated = 0;
  int proposals_postclassified = 0;
  int network_evals_total = 0;
  double relative_cost_vs_baseline = 0.0;
};

// Evaluation-cost accounting: one network evaluation per crop plus one per
// postclassified proposal, reported relative to the proposal-generation
// baseline (4666 selective-search proposals per panorama).
inline CostReport make_cost_report(int crops_evaluated, int proposals_postclassified,
                                   int baseline_proposals_per_pano) {
  CostReport cost;
  cost.crops_evaluated = crops_evaluated;
  cost.proposals_postclassified = proposals_postclassified;
  cost.network_evals_total = crops_evaluated + proposals_postclassified;
  cost.relative_cost_vs_baseline =
      static_cast<double>(cost.network_evals_total) / baseline_proposals_per_pano;
  return cost;
}

inline void validate_pipeline_config(const PipelineConfig& cfg) {
  if (cfg.proposal_threshold <= 0.0 || cfg.proposal_threshold >= 1.0) {
    throw std::invalid_argument("pipeline: proposal_threshold must be in (0, 1)");
  }
  if (cfg.nms_threshold < 0.0 || cfg.nms_threshold >= 1.0) {
    throw std::invalid_argument("pipeline: nms_threshold must be in [0, 1)");
  }
  if (cfg.expansion_fraction < 0.0) {
    throw std::invalid_argument("pipeline: expansion_fraction must be non-negative");
  }
}

// Grows a box about its center by (1 + fraction) per dimension, then clamps
// to the unit frame. Horizontal clamping is skipped on the panorama torus.
inline Box expand_box(const Box& box, double fraction, bool wrap_x = false) {
  require_valid_box(box, "expand_box");
  const double cx = box_center_x(box);
  const double cy = box_center_y(box);
  const double w = (box.x_max - box.x_min) * (1.0 + fraction);
  const double h = (box.y_max - box.y_min) * (1.0 + fraction);
  Box out{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  out.y_min = std::max(0.0, out.y_min);
  out.y_max = std::min(1.0, out.y_max);
  if (!wrap_x) {
    out.x_min = std::max(0.0, out.x_min);
    out.x_max = std::min(1.0, out.x_max);
  } else if (out.x_max - out.x_min >= 1.0) {
    out.x_min = 0.0;  // expansion swallowed the full circle
    out.x_max = 1.0;
  } else {
    while (out.x_min >= 1.0) {
      out.x_min -= 1.0;
      out.x_max -= 1.0;
    }
    while (out.x_min < 0.0) {
      out.x_min += 1.0;
      out.x_max += 1.0;
    }
  }
  return out;
}

// Final ranking score: the product of detector and postclassifier scores.
inline double fuse_scores(double detector_score, double post_score) {
  if (detector_score <= 0.0 || detector_score > 1.0 || post_score <= 0.0 || post_score > 1.0) {
    throw std::invalid_argument("fuse_scores: scores must be in (0, 1]");
  }
  return detector_score * post_score;
}

// Marginal probability that det's box covers a business: the sum of
// S_p(det) * S_d(b_i) over detections overlapping det by >= 0.5 Jaccard,
// clamped to 1. After NMS at 0.2 the overlapping set is the detection itself
// and this reduces to fuse_scores.
inline double marginal_probability(const Detection& det, const std::vector<Detection>& overlapping) {
  if (!det.has_post_score) {
    throw std::invalid_argument("marginal_probability: detection lacks a postclassifier score");
  }
  double sum = 0.0;
  for (const Detection& b : overlapping) {
    if (jaccard_wrapped(det.box, b.box) < 0.5) {
      throw std::invalid_argument("marginal_probability: overlapping set contains a box below 0.5 Jaccard");
    }
    sum += det.post_score * b.detector_score;
  }
  return std::min(1.0, sum);
}

// One raw proposal as it leaves a crop, before the global merge.
struct CropProposal {
  Box box_in_crop;
  double score = 0.0;
  int crop_index = -1;
};

namespace detail {

// Decode + threshold + clamp for a single crop's output. Edge filtering is
// applied here, in the crop frame.
inline std::vector<CropProposal> proposals_from_output(const DetectorOutput& out,
                                                       const PriorSet& priors,
                                                       const CropSpec& crop, int crop_index,
                                                       double threshold, double edge_margin) {
  std::vector<CropProposal> result;
  const std::vector<Box> decoded = decode_locations(out, priors);
  for (int i = 0; i < priors.size(); ++i) {
    if (out.confidences[i] < threshold) continue;
    Box b = decoded[i];
    if (!clamp_to_frame(b)) continue;
    if (!edge_filter(b, crop, edge_margin)) continue;
    result.push_back({b, out.confidences[i], crop_index});
  }
  return result;
}

}  // namespace detail

struct PanoramaDetections {
  std::vector<Detection> detections;
  CostReport cost;
};

// Runs the full multi-crop pipeline over one panorama. Crops may be evaluated
// concurrently; the merge, NMS and fusion phase is sequential and the output
// order is deterministic regardless of thread count.
inline PanoramaDetections detect_panorama(const ModelParams& model,
                                          const PostclassifierParams* postclassifier,
                                          const Image& pano, const std::string& pano_id,
                                          const PriorSet& priors, const PipelineConfig& cfg,
                                          const CropPlanConfig& plan_cfg, int threads = 1) {
  validate_pipeline_config(cfg);
  if (model.num_priors != priors.size() || model.prior_hash != prior_set_hash(priors)) {
    throw std::invalid_argument("detect_panorama: model and prior set do not match");
  }
  if (cfg.postclassify && postclassifier == nullptr) {
    throw std::invalid_argument("detect_panorama: postclassification enabled without a model");
  }

  const std::vector<CropSpec> crops = plan_crops(pano.width, pano.height, plan_cfg, pano_id);
  std::vector<std::vector<CropProposal>> per_crop(crops.size());
  parallel_for(crops.size(), threads, [&](std::size_t ci) {
    const Image patch = extract_crop(pano, crops[ci]);
    const DetectorOutput out = forward(model, patch);
    per_crop[ci] = detail::proposals_from_output(out, priors, crops[ci], static_cast<int>(ci),
                                                 cfg.proposal_threshold, cfg.edge_margin);
  });

  // Merge into panorama frame. Canonical sort makes the result independent of
  // crop evaluation order.
  std::vector<Detection> merged;
  for (const auto& plist : per_crop) {
    for (const CropProposal& p : plist) {
      const CropSpec& crop = crops[p.crop_index];
      Detection det = make_detection(crop_to_pano(p.box_in_crop, crop), p.score, pano_id, crop.id());
      merged.push_back(std::move(det));
    }
  }
  std::sort(merged.begin(), merged.end(), detection_score_order);

  std::vector<Detection> kept = nms(std::move(merged), cfg.nms_threshold);

  int postclassified = 0;
  if (cfg.postclassify) {
    parallel_for(kept.size(), threads, [&](std::size_t i) {
      const Box expanded = expand_box(kept[i].box, cfg.expansion_fraction, /*wrap_x=*/true);
      CropSpec patch_spec;
      patch_spec.panorama_id = pano_id;
      patch_spec.x_offset = expanded.x_min;
      patch_spec.y_offset = expanded.y_min;
      patch_spec.width = expanded.x_max - expanded.x_min;
      patch_spec.height = expanded.y_max - expanded.y_min;
      const Image patch = extract_crop(pano, patch_spec);
      const double sp = postclassifier_score(*postclassifier,
                                             gray_grid(patch, postclassifier->input_grid));
      set_post_score(kept[i], sp);
    });
    postclassified = static_cast<int>(kept.size());
    std::sort(kept.begin(), kept.end(), detection_score_order);
  }
  const CostReport cost = make_cost_report(static_cast<int>(crops.size()), postclassified,
                                           cfg.baseline_proposals_per_pano);

  return {std::move(kept), cost};
}

// Threshold calibration: picks the confidence threshold whose average
// post-NMS proposal count across the calibration panoramas is closest to the
// target (ties prefer the higher threshold). Candidate thresholds are the
// observed proposal scores.
inline double calibrate_proposal_threshold(const ModelParams& model,
                                           const std::vector<const Image*>& panos,
                                           const PriorSet& priors, const PipelineConfig& cfg,
                                           const CropPlanConfig& plan_cfg, int threads = 1) {
  if (panos.empty()) {
    throw std::invalid_argument("calibrate_proposal_threshold: no calibration panoramas");
  }
  // Gather every edge-filtered proposal at a floor threshold.
  const double floor = 1e-4;
  struct RawPano {
    std::vector<Detection> proposals;  // merged, pre-NMS
  };
  std::vector<RawPano> raw(panos.size());
  for (std::size_t pi = 0; pi < panos.size(); ++pi) {
    const Image& pano = *panos[pi];
    const std::vector<CropSpec> crops = plan_crops(pano.width, pano.height, plan_cfg, "");
    std::vector<std::vector<CropProposal>> per_crop(crops.size());
    parallel_for(crops.size(), threads, [&](std::size_t ci) {
      const Image patch = extract_crop(pano, crops[ci]);
      const DetectorOutput out = forward(model, patch);
      per_crop[ci] = detail::proposals_from_output(out, priors, crops[ci], static_cast<int>(ci),
                                                   floor, cfg.edge_margin);
    });
    for (std::size_t ci = 0; ci < crops.size(); ++ci) {
      for (const CropProposal& p : per_crop[ci]) {
        raw[pi].proposals.push_back(
            make_detection(crop_to_pano(p.box_in_crop, crops[ci]), p.score));
      }
    }
    std::sort(raw[pi].proposals.begin(), raw[pi].proposals.end(), detection_score_order);
  }

  std::vector<double> candidates{floor};
  for (const RawPano& rp : raw) {
    for (const Detection& d : rp.proposals) candidates.push_back(d.detector_score);
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  // Cap the sweep; an even subsample of score order is plenty for counting.
  const std::size_t max_candidates = 64;
  if (candidates.size() > max_candidates) {
    std::vector<double> sub;
    for (std::size_t k = 0; k < max_candidates; ++k) {
      sub.push_back(candidates[k * (candidates.size() - 1) / (max_candidates - 1)]);
    }
    sub.erase(std::unique(sub.begin(), sub.end()), sub.end());
    candidates.swap(sub);
  }

  double best_threshold = candidates.front();
  double best_gap = std::numeric_limits<double>::infinity();
  for (const double thr : candidates) {
    if (thr <= 0.0 || thr >= 1.0) continue;
    double total = 0.0;
    for (const RawPano& rp : raw) {
      std::vector<Detection> pass;
      for (const Detection& d : rp.proposals) {
        if (d.detector_score >= thr) pass.push_back(d);
      }
      total += static_cast<double>(nms(std::move(pass), cfg.nms_threshold).size());
    }
    const double avg = total / static_cast<double>(panos.size());
    const double gap = std::abs(avg - cfg.target_proposals_per_pano);
    if (gap < best_gap || (gap == best_gap && thr > best_threshold)) {
      best_gap = gap;
      best_threshold = thr;
    }
  }
  return best_threshold;
}

}  // namespace storefront
