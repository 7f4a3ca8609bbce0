// Independent oracles for the test suites. Everything here recomputes results
// by brute force (rasterization, exhaustive enumeration, explicit loops,
// finite differences) and deliberately avoids the library's own code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "storefront/geometry.hpp"
#include "storefront/multibox_loss.hpp"

namespace oracles {

// Pixel-counting Jaccard on a res x res raster of the unit square.
inline double rasterized_jaccard(const storefront::Box& a, const storefront::Box& b,
                                 int res = 1000) {
  auto covers = [res](const storefront::Box& box, int px, int py) {
    const double x = (px + 0.5) / res;
    const double y = (py + 0.5) / res;
    return x >= box.x_min && x < box.x_max && y >= box.y_min && y < box.y_max;
  };
  long long inter = 0, uni = 0;
  for (int py = 0; py < res; ++py) {
    for (int px = 0; px < res; ++px) {
      const bool in_a = covers(a, px, py);
      const bool in_b = covers(b, px, py);
      if (in_a && in_b) ++inter;
      if (in_a || in_b) ++uni;
    }
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Exhaustive maximum-weight matching: every gt either stays unmatched or
// takes an unused prior. Returns the optimal total; if pairs_out is given,
// also extracts the lexicographically smallest optimal pair list by
// (gt, prior), mirroring the library's canonical form, and sums the total in
// that order.
inline double brute_force_matching(const std::vector<std::vector<double>>& w,
                                   std::vector<std::pair<int, int>>* pairs_out = nullptr) {
  const int priors = static_cast<int>(w.size());
  const int gts = priors == 0 ? 0 : static_cast<int>(w[0].size());

  std::function<double(int, std::vector<char>&)> best = [&](int j, std::vector<char>& used) {
    if (j == gts) return 0.0;
    double best_total = best(j + 1, used);  // gt j unmatched
    for (int i = 0; i < priors; ++i) {
      if (used[i] || w[i][j] <= 0.0) continue;
      used[i] = 1;
      best_total = std::max(best_total, w[i][j] + best(j + 1, used));
      used[i] = 0;
    }
    return best_total;
  };
  std::vector<char> used(priors, 0);
  const double optimum = best(0, used);

  if (pairs_out) {
    pairs_out->clear();
    double fixed = 0.0;
    const double tol = 1e-12 * std::max(1.0, optimum);
    for (int j = 0; j < gts; ++j) {
      for (int i = 0; i < priors; ++i) {
        if (used[i] || w[i][j] <= 0.0) continue;
        used[i] = 1;
        // Optimum of the gts after j with this pair fixed; earlier gts are
        // already decided and their priors sit in `used`.
        std::function<double(int)> rest_after_j = [&](int jj) -> double {
          if (jj == gts) return 0.0;
          double t = rest_after_j(jj + 1);
          for (int ii = 0; ii < priors; ++ii) {
            if (used[ii] || w[ii][jj] <= 0.0) continue;
            used[ii] = 1;
            t = std::max(t, w[ii][jj] + rest_after_j(jj + 1));
            used[ii] = 0;
          }
          return t;
        };
        const double completion = fixed + w[i][j] + rest_after_j(j + 1);
        if (completion >= optimum - tol) {
          fixed += w[i][j];
          pairs_out->push_back({j, i});
          break;
        }
        used[i] = 0;
      }
    }
  }
  return optimum;
}

// NMS fixed point by subset enumeration: the unique subset S such that a
// detection is in S iff it overlaps no higher-scored member of S above the
// threshold. Input must be pre-sorted by descending score.
inline std::vector<int> brute_force_nms_subset(const std::vector<storefront::Box>& boxes,
                                               double threshold) {
  const int n = static_cast<int>(boxes.size());
  std::vector<int> result;
  for (int mask = 0; mask < (1 << n); ++mask) {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      bool suppressed = false;
      for (int j = 0; j < i && !suppressed; ++j) {
        if ((mask >> j) & 1) {
          if (storefront::jaccard_wrapped(boxes[i], boxes[j]) > threshold) suppressed = true;
        }
      }
      const bool in_set = (mask >> i) & 1;
      if (in_set == suppressed) ok = false;
    }
    if (ok) {
      result.clear();
      for (int i = 0; i < n; ++i) {
        if ((mask >> i) & 1) result.push_back(i);
      }
      return result;
    }
  }
  return result;
}

// Envelope average precision with explicit O(n^2) loops over TP/FP labels in
// descending score order.
inline double brute_force_average_precision(const std::vector<bool>& labels, int num_gts) {
  if (num_gts == 0) return labels.empty() ? 1.0 : 0.0;
  if (labels.empty()) return 0.0;
  const int n = static_cast<int>(labels.size());
  double ap = 0.0;
  double prev_recall = 0.0;
  for (int k = 0; k < n; ++k) {
    int tp = 0;
    for (int i = 0; i <= k; ++i) {
      if (labels[i]) ++tp;
    }
    const double recall = static_cast<double>(tp) / num_gts;
    if (recall <= prev_recall) continue;
    // Envelope precision at this recall: best precision over all cuts >= k.
    double envelope = 0.0;
    for (int m = k; m < n; ++m) {
      int tp_m = 0;
      for (int i = 0; i <= m; ++i) {
        if (labels[i]) ++tp_m;
      }
      envelope = std::max(envelope, static_cast<double>(tp_m) / (m + 1));
    }
    ap += (recall - prev_recall) * envelope;
    prev_recall = recall;
  }
  return ap;
}

// Central finite difference of a scalar function.
inline double central_difference(const std::function<double(double)>& f, double x,
                                 double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Gradient-check error metric: absolute when the values are small, relative
// when they are large.
inline double grad_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace oracles
