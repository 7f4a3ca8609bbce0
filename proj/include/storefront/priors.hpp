// Prior boxes: k-means clustering of ground-truth box shapes and a uniform
// grid baseline. Prior order is frozen once built; the set is content-hashed
// so checkpoints can refuse a mismatched prior file.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "storefront/geometry.hpp"
#include "storefront/rng.hpp"

namespace storefront {

struct PriorSet {
  std::vector<Box> priors;
  std::uint64_t seed = 0;
  std::string provenance;

  int size() const { return static_cast<int>(priors.size()); }
};

namespace detail {

inline double sq_dist(const Box& a, const Box& b) {
  const double d0 = a.x_min - b.x_min;
  const double d1 = a.y_min - b.y_min;
  const double d2 = a.x_max - b.x_max;
  const double d3 = a.y_max - b.y_max;
  return d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3;
}

inline void validate_prior_set(const PriorSet& set) {
  for (const Box& p : set.priors) require_valid_box(p, "prior");
  for (size_t i = 0; i < set.priors.size(); ++i) {
    for (size_t j = i + 1; j < set.priors.size(); ++j) {
      if (box_equal(set.priors[i], set.priors[j])) {
        throw std::logic_error("prior set contains two identical priors");
      }
    }
  }
}

}  // namespace detail

// FNV-1a over the fixed-format decimal rendering of the priors. Stable across
// platforms and used to bind model checkpoints to their prior file.
inline std::uint64_t prior_set_hash(const PriorSet& set) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const char* data, size_t len) {
    for (size_t i = 0; i < len; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 1099511628211ULL;
    }
  };
  char buf[160];
  for (const Box& p : set.priors) {
    const int len = std::snprintf(buf, sizeof(buf), "%.12e,%.12e,%.12e,%.12e;",
                                  p.x_min, p.y_min, p.x_max, p.y_max);
    mix(buf, static_cast<size_t>(len));
  }
  return h;
}

// Lloyd's k-means over corner 4-vectors with squared Euclidean distance.
// Deterministic per seed; empty clusters respawn at the point farthest from
// its assigned centroid. The objective never increases between iterations.
inline PriorSet cluster_priors(const std::vector<Box>& gt_boxes, int n,
                               std::uint64_t seed, int iters,
                               const std::string& source_id = "") {
  if (gt_boxes.empty()) throw std::invalid_argument("cluster_priors: empty input");
  if (n <= 0) throw std::invalid_argument("cluster_priors: n must be positive");
  if (iters <= 0) throw std::invalid_argument("cluster_priors: iters must be positive");
  for (const Box& b : gt_boxes) require_valid_box(b, "cluster_priors input");

  // Distinct boxes seed the initial centroids so duplicates in the data
  // cannot produce duplicate priors when n matches the distinct count.
  std::vector<Box> distinct;
  for (const Box& b : gt_boxes) {
    bool seen = false;
    for (const Box& d : distinct) {
      if (box_equal(b, d)) {
        seen = true;
        break;
      }
    }
    if (!seen) distinct.push_back(b);
  }
  const int k = std::min<int>(n, static_cast<int>(distinct.size()));

  Rng rng(seed);
  std::vector<size_t> order(distinct.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<Box> centroids;
  centroids.reserve(k);
  for (int i = 0; i < k; ++i) centroids.push_back(distinct[order[i]]);

  std::vector<int> assign(gt_boxes.size(), 0);
  double prev_objective = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < iters; ++iter) {
    double objective = 0.0;
    for (size_t i = 0; i < gt_boxes.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (int c = 0; c < k; ++c) {
        const double d = detail::sq_dist(gt_boxes[i], centroids[c]);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      assign[i] = best_c;
      objective += best;
    }
    if (objective > prev_objective + 1e-9) {
      throw std::logic_error("cluster_priors: objective increased");
    }
    prev_objective = objective;

    std::vector<Box> sums(k, Box{0, 0, 0, 0});
    std::vector<int> counts(k, 0);
    for (size_t i = 0; i < gt_boxes.size(); ++i) {
      const Box& b = gt_boxes[i];
      Box& s = sums[assign[i]];
      s.x_min += b.x_min;
      s.y_min += b.y_min;
      s.x_max += b.x_max;
      s.y_max += b.y_max;
      counts[assign[i]]++;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centroids[c] = Box{sums[c].x_min / counts[c], sums[c].y_min / counts[c],
                           sums[c].x_max / counts[c], sums[c].y_max / counts[c]};
      } else {
        // Respawn from the point farthest from its current centroid.
        double far_d = -1.0;
        size_t far_i = 0;
        for (size_t i = 0; i < gt_boxes.size(); ++i) {
          const double d = detail::sq_dist(gt_boxes[i], centroids[assign[i]]);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        centroids[c] = gt_boxes[far_i];
        assign[far_i] = c;
        prev_objective = std::numeric_limits<double>::infinity();
      }
    }
    // Identical centroids would freeze into duplicate priors; nudge the later
    // one to the farthest point instead.
    for (int c = 0; c < k; ++c) {
      for (int c2 = c + 1; c2 < k; ++c2) {
        if (box_equal(centroids[c], centroids[c2])) {
          double far_d = -1.0;
          size_t far_i = 0;
          for (size_t i = 0; i < gt_boxes.size(); ++i) {
            const double d = detail::sq_dist(gt_boxes[i], centroids[assign[i]]);
            if (d > far_d) {
              far_d = d;
              far_i = i;
            }
          }
          centroids[c2] = gt_boxes[far_i];
          assign[far_i] = c2;
          prev_objective = std::numeric_limits<double>::infinity();
        }
      }
    }
  }

  PriorSet set;
  set.priors = centroids;
  set.seed = seed;
  set.provenance = "kmeans(source=" + source_id + ", seed=" + std::to_string(seed) +
                   ", iters=" + std::to_string(iters) + ")";
  detail::validate_prior_set(set);
  return set;
}

inline double kmeans_objective(const std::vector<Box>& gt_boxes, const PriorSet& set) {
  double objective = 0.0;
  for (const Box& b : gt_boxes) {
    double best = std::numeric_limits<double>::infinity();
    for (const Box& c : set.priors) best = std::min(best, detail::sq_dist(b, c));
    objective += best;
  }
  return objective;
}

// Uniform-grid baseline: rows x cols cell centers, one prior per aspect
// ratio, clipped to the unit square. Width/height honor w/h = aspect before
// clipping.
inline PriorSet grid_priors(int rows, int cols, const std::vector<double>& aspect_ratios,
                            double scale = 1.0) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("grid_priors: rows and cols must be >= 1");
  if (aspect_ratios.empty()) throw std::invalid_argument("grid_priors: need at least one aspect ratio");
  for (double a : aspect_ratios) {
    if (a <= 0.0) throw std::invalid_argument("grid_priors: aspect ratios must be positive");
  }
  PriorSet set;
  const double base = scale * std::min(1.0 / cols, 1.0 / rows);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double cx = (c + 0.5) / cols;
      const double cy = (r + 0.5) / rows;
      for (double a : aspect_ratios) {
        const double w = base * std::sqrt(a);
        const double h = base / std::sqrt(a);
        Box p{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
        p.x_min = std::max(0.0, p.x_min);
        p.y_min = std::max(0.0, p.y_min);
        p.x_max = std::min(1.0, p.x_max);
        p.y_max = std::min(1.0, p.y_max);
        set.priors.push_back(p);
      }
    }
  }
  set.provenance = "grid(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
  detail::validate_prior_set(set);
  return set;
}

}  // namespace storefront
