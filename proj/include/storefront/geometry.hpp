// Boxes, Jaccard overlap, NMS, panorama crop planning and frame transforms.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace storefront {

// Axis-aligned rectangle in a normalized frame. Corners are (x_min, y_min)
// and (x_max, y_max). In the panorama frame x_min lives in [0, 1) and x_max
// may exceed 1 for boxes that straddle the 360 degree seam.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
};

inline bool box_is_valid(const Box& b) {
  return std::isfinite(b.x_min) && std::isfinite(b.y_min) &&
         std::isfinite(b.x_max) && std::isfinite(b.y_max) &&
         b.x_min < b.x_max && b.y_min < b.y_max;
}

inline void require_valid_box(const Box& b, const char* what) {
  if (!box_is_valid(b)) {
    throw std::invalid_argument(std::string(what) +
                                ": box must have finite coordinates and strictly positive area");
  }
}

inline double box_area(const Box& b) {
  return (b.x_max - b.x_min) * (b.y_max - b.y_min);
}

inline double box_center_x(const Box& b) { return 0.5 * (b.x_min + b.x_max); }
inline double box_center_y(const Box& b) { return 0.5 * (b.y_min + b.y_max); }

inline bool box_equal(const Box& a, const Box& b) {
  return a.x_min == b.x_min && a.y_min == b.y_min &&
         a.x_max == b.x_max && a.y_max == b.y_max;
}

// Lexicographic order on corner coordinates; used for deterministic tie-breaks.
inline bool box_less(const Box& a, const Box& b) {
  if (a.x_min != b.x_min) return a.x_min < b.x_min;
  if (a.y_min != b.y_min) return a.y_min < b.y_min;
  if (a.x_max != b.x_max) return a.x_max < b.x_max;
  return a.y_max < b.y_max;
}

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

// Intersection over union. Both boxes must be valid and in the same frame.
inline double jaccard(const Box& a, const Box& b) {
  require_valid_box(a, "jaccard");
  require_valid_box(b, "jaccard");
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (box_area(a) + box_area(b) - inter);
}

// Jaccard on the horizontal torus of a 360 degree panorama: overlap is
// evaluated at x shifts of -1, 0 and +1 so seam-straddling boxes compare
// correctly. Equal to plain jaccard when both boxes lie inside [0, 1].
inline double jaccard_wrapped(const Box& a, const Box& b) {
  require_valid_box(a, "jaccard_wrapped");
  require_valid_box(b, "jaccard_wrapped");
  double inter = 0.0;
  for (int shift = -1; shift <= 1; ++shift) {
    Box s = a;
    s.x_min += shift;
    s.x_max += shift;
    inter = std::max(inter, intersection_area(s, b));
  }
  if (inter <= 0.0) return 0.0;
  return inter / (box_area(a) + box_area(b) - inter);
}

// Splits a panorama-frame box at the 360 degree seam. Boxes with x_max <= 1
// come back unchanged; straddlers become two boxes inside [0, 1].
inline std::vector<Box> split_at_seam(const Box& b) {
  require_valid_box(b, "split_at_seam");
  if (b.x_max <= 1.0) return {b};
  Box left{b.x_min, b.y_min, 1.0, b.y_max};
  Box right{0.0, b.y_min, b.x_max - 1.0, b.y_max};
  return {left, right};
}

// One square tile of the multi-scale panorama evaluation grid. Offsets and
// sizes are normalized panorama coordinates; x_offset + width may exceed 1
// only when the tile wraps the seam.
struct CropSpec {
  std::string panorama_id;
  double x_offset = 0.0;
  double y_offset = 0.0;
  double width = 1.0;
  double height = 1.0;
  int scale_index = 0;
  bool wraps_seam = false;

  std::string id() const {
    return "s" + std::to_string(scale_index) + "_y" + std::to_string(y_offset) +
           "_x" + std::to_string(x_offset);
  }
};

// A scored box in the panorama frame. final_score is the detector score
// alone until a postclassifier score is fused in.
struct Detection {
  Box box;
  double detector_score = 0.0;
  bool has_post_score = false;
  double post_score = 0.0;
  double final_score = 0.0;
  std::string pano_id;
  std::string source_crop;
};

inline Detection make_detection(const Box& box, double detector_score,
                                std::string pano_id = "", std::string source_crop = "") {
  Detection d;
  d.box = box;
  d.detector_score = detector_score;
  d.final_score = detector_score;
  d.pano_id = std::move(pano_id);
  d.source_crop = std::move(source_crop);
  return d;
}

inline void set_post_score(Detection& d, double post_score) {
  d.has_post_score = true;
  d.post_score = post_score;
  d.final_score = d.detector_score * post_score;
}

inline bool detection_score_order(const Detection& a, const Detection& b) {
  if (a.final_score != b.final_score) return a.final_score > b.final_score;
  return box_less(a.box, b.box);
}

// Greedy non-maximum suppression: walk detections by descending final score
// and keep one iff its overlap with every kept detection is <= threshold.
// Output stays sorted by descending score. Overlap is seam-aware.
inline std::vector<Detection> nms(std::vector<Detection> detections, double overlap_threshold) {
  if (overlap_threshold < 0.0 || overlap_threshold >= 1.0) {
    throw std::invalid_argument("nms: overlap threshold must be in [0, 1)");
  }
  std::sort(detections.begin(), detections.end(), detection_score_order);
  std::vector<Detection> kept;
  for (const Detection& d : detections) {
    bool keep = true;
    for (const Detection& k : kept) {
      if (jaccard_wrapped(d.box, k.box) > overlap_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(d);
  }
  return kept;
}

// Multi-scale crop grid settings. Each scale is a square crop side expressed
// as a fraction of panorama height. Rows cover the vertical band
// [band_top, band_bottom]; a scale tall enough to cover the band in one row
// is placed as high as the band allows.
struct CropPlanConfig {
  std::vector<double> scales{1.0, 0.40, 0.19};
  double min_overlap = 0.2;
  double band_top = 0.225;
  double band_bottom = 0.875;
};

namespace detail {

inline int ceil_count(double x) {
  // Grid counts land exactly on integers for round configs; the epsilon keeps
  // floating point wobble from adding a spurious extra row or column.
  return static_cast<int>(std::ceil(x - 1e-9));
}

}  // namespace detail

// Lays square crops on a per-scale grid. Columns wrap the 360 degree seam and
// are evenly spaced so cyclically adjacent tiles overlap at least min_overlap
// of the crop side; rows cover the configured vertical band likewise. Crops
// are ordered by (scale, row, column).
inline std::vector<CropSpec> plan_crops(int pano_width_px, int pano_height_px,
                                        const CropPlanConfig& config,
                                        const std::string& panorama_id = "") {
  if (pano_width_px <= 0 || pano_height_px <= 0) {
    throw std::invalid_argument("plan_crops: panorama dimensions must be positive");
  }
  if (config.scales.empty()) {
    throw std::invalid_argument("plan_crops: need at least one scale");
  }
  if (config.min_overlap < 0.0 || config.min_overlap >= 1.0) {
    throw std::invalid_argument("plan_crops: min_overlap must be in [0, 1)");
  }
  if (!(config.band_top >= 0.0 && config.band_top < config.band_bottom && config.band_bottom <= 1.0)) {
    throw std::invalid_argument("plan_crops: vertical band must satisfy 0 <= top < bottom <= 1");
  }

  const double aspect = static_cast<double>(pano_height_px) / pano_width_px;
  std::vector<CropSpec> crops;
  for (size_t si = 0; si < config.scales.size(); ++si) {
    const double side = config.scales[si];
    if (side <= 0.0 || side > 1.0) {
      throw std::invalid_argument("plan_crops: crop side must be in (0, 1] of panorama height");
    }
    const double side_x = std::min(1.0, side * aspect);
    const double side_y = side;

    int cols = 1;
    if (side_x < 1.0) {
      cols = std::max(1, detail::ceil_count(1.0 / (side_x * (1.0 - config.min_overlap))));
    }

    const double top_first = std::max(0.0, std::min(config.band_top, 1.0 - side_y));
    const double top_last = std::max(0.0, std::min(config.band_bottom - side_y, 1.0 - side_y));
    int rows = 1;
    if (top_last > top_first + 1e-12) {
      rows = 1 + std::max(1, detail::ceil_count((top_last - top_first) / (side_y * (1.0 - config.min_overlap))));
    }

    for (int r = 0; r < rows; ++r) {
      const double y = rows == 1 ? top_first
                                 : top_first + (top_last - top_first) * r / (rows - 1);
      for (int c = 0; c < cols; ++c) {
        CropSpec crop;
        crop.panorama_id = panorama_id;
        crop.scale_index = static_cast<int>(si);
        crop.x_offset = static_cast<double>(c) / cols;
        crop.y_offset = y;
        crop.width = side_x;
        crop.height = side_y;
        crop.wraps_seam = crop.x_offset + crop.width > 1.0 + 1e-12;
        crops.push_back(crop);
      }
    }
  }
  return crops;
}

namespace detail {

// Chooses the integer x shift that brings the box into the crop's local
// horizontal range, maximizing overlap width. Returns false when disjoint.
inline bool crop_x_shift(const Box& box, const CropSpec& crop, double* shift) {
  double best_overlap = 0.0;
  for (int s = -1; s <= 1; ++s) {
    const double lo = std::max(box.x_min + s, crop.x_offset);
    const double hi = std::min(box.x_max + s, crop.x_offset + crop.width);
    if (hi - lo > best_overlap) {
      best_overlap = hi - lo;
      *shift = s;
    }
  }
  return best_overlap > 0.0;
}

}  // namespace detail

// Panorama frame -> crop frame. The box must intersect the crop.
inline Box pano_to_crop(const Box& box, const CropSpec& crop) {
  require_valid_box(box, "pano_to_crop");
  double shift = 0.0;
  if (!detail::crop_x_shift(box, crop, &shift)) {
    throw std::invalid_argument("pano_to_crop: box does not intersect the crop");
  }
  const double y_lo = std::max(box.y_min, crop.y_offset);
  const double y_hi = std::min(box.y_max, crop.y_offset + crop.height);
  if (y_hi <= y_lo) {
    throw std::invalid_argument("pano_to_crop: box does not intersect the crop");
  }
  Box out;
  out.x_min = (box.x_min + shift - crop.x_offset) / crop.width;
  out.x_max = (box.x_max + shift - crop.x_offset) / crop.width;
  out.y_min = (box.y_min - crop.y_offset) / crop.height;
  out.y_max = (box.y_max - crop.y_offset) / crop.height;
  return out;
}

// Crop frame -> panorama frame. Seam-wrapping crops renormalize x so that
// x_min lands in [0, 1) (x_max may exceed 1 for seam straddlers).
inline Box crop_to_pano(const Box& box, const CropSpec& crop) {
  require_valid_box(box, "crop_to_pano");
  Box out;
  out.x_min = crop.x_offset + box.x_min * crop.width;
  out.x_max = crop.x_offset + box.x_max * crop.width;
  out.y_min = crop.y_offset + box.y_min * crop.height;
  out.y_max = crop.y_offset + box.y_max * crop.height;
  while (out.x_min >= 1.0) {
    out.x_min -= 1.0;
    out.x_max -= 1.0;
  }
  while (out.x_min < 0.0) {
    out.x_min += 1.0;
    out.x_max += 1.0;
  }
  return out;
}

// Keeps a crop-frame detection box only if it respects the margin subwindow
// on every side. A violated top or bottom margin is excused when that crop
// edge coincides with the panorama boundary; left and right edges never
// qualify because a full 360 degree panorama has no horizontal boundary.
inline bool edge_filter(const Box& det_box_in_crop_frame, const CropSpec& crop,
                        double margin = 0.1) {
  const Box& b = det_box_in_crop_frame;
  const bool crop_at_pano_top = crop.y_offset <= 1e-9;
  const bool crop_at_pano_bottom = crop.y_offset + crop.height >= 1.0 - 1e-9;
  if (b.x_min < margin || b.x_max > 1.0 - margin) return false;
  if (b.y_min < margin && !crop_at_pano_top) return false;
  if (b.y_max > 1.0 - margin && !crop_at_pano_bottom) return false;
  return true;
}

}  // namespace storefront
