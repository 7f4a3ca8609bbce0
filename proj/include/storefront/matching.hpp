// Maximum-weight bipartite matching between priors and ground-truth boxes.
// Edge weights are Jaccard overlaps; the assignment feeds the loss targets
// and is computed from geometry alone, never from model output.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "storefront/geometry.hpp"
#include "storefront/priors.hpp"

namespace storefront {

struct MatchPair {
  int prior_index = -1;
  int gt_index = -1;
  double weight = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // sorted by (gt_index, prior_index)
  double total_weight = 0.0;

  bool prior_matched(int prior_index) const {
    for (const MatchPair& p : pairs) {
      if (p.prior_index == prior_index) return true;
    }
    return false;
  }

  // gt index matched to this prior, or -1.
  int gt_for_prior(int prior_index) const {
    for (const MatchPair& p : pairs) {
      if (p.prior_index == prior_index) return p.gt_index;
    }
    return -1;
  }
};

namespace detail {

// O(N^3) Hungarian method (shortest augmenting paths with potentials) on a
// square cost matrix, minimizing. Returns col_of_row assignments.
inline std::vector<int> hungarian_square(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = std::numeric_limits<double>::infinity();
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
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
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_of_row(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] > 0) col_of_row[p[j] - 1] = j - 1;
  }
  return col_of_row;
}

// Optimal total weight of a max-weight matching on a dense weight matrix
// (rows x cols), allowing vertices to stay unmatched. Solved as a square
// assignment problem padded with zero-weight dummies.
inline double max_matching_weight(const std::vector<std::vector<double>>& weight,
                                  std::vector<int>* col_of_row = nullptr) {
  const int rows = static_cast<int>(weight.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(weight[0].size());
  const int n = std::max(rows, cols);
  if (n == 0) {
    if (col_of_row) col_of_row->clear();
    return 0.0;
  }
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) cost[r][c] = -weight[r][c];
  }
  const std::vector<int> assign = hungarian_square(cost);
  double total = 0.0;
  if (col_of_row) col_of_row->assign(rows, -1);
  for (int r = 0; r < rows; ++r) {
    const int c = assign[r];
    if (c >= 0 && c < cols && weight[r][c] > 0.0) {
      total += weight[r][c];
      if (col_of_row) (*col_of_row)[r] = c;
    }
  }
  return total;
}

}  // namespace detail

// Maximum-weight matching of priors to ground-truth boxes with Jaccard edge
// weights. Zero-weight edges never enter the result. Among optimal matchings
// the lexicographically smallest pair list by (gt_index, prior_index) is
// returned, so equal-weight ties resolve deterministically.
inline MatchResult max_weight_match(const PriorSet& priors, const std::vector<Box>& gts) {
  if (priors.priors.empty()) throw std::invalid_argument("max_weight_match: empty prior set");
  MatchResult result;
  if (gts.empty()) return result;
  for (const Box& g : gts) require_valid_box(g, "max_weight_match gt");

  // Priors that overlap nothing can never be matched; dropping them keeps the
  // assignment problem small (typically a fraction of the prior set).
  const int m = static_cast<int>(gts.size());
  std::vector<int> candidates;
  std::vector<std::vector<double>> w;  // candidates x gts
  for (int i = 0; i < priors.size(); ++i) {
    std::vector<double> row(m, 0.0);
    bool any = false;
    for (int j = 0; j < m; ++j) {
      row[j] = jaccard(priors.priors[i], gts[j]);
      any = any || row[j] > 0.0;
    }
    if (any) {
      candidates.push_back(i);
      w.push_back(std::move(row));
    }
  }
  if (candidates.empty()) return result;

  const double optimum = detail::max_matching_weight(w);
  const double tol = 1e-9 * std::max(1.0, optimum);

  // Fix pairs in ascending (gt, prior) order, keeping each fix only if the
  // remaining problem can still reach the optimum. This realizes the
  // lexicographic tie-break without assuming any weight structure.
  std::vector<char> row_used(w.size(), 0);
  std::vector<char> col_used(m, 0);
  double fixed_weight = 0.0;
  for (int j = 0; j < m; ++j) {
    for (size_t r = 0; r < w.size(); ++r) {
      if (row_used[r] || w[r][j] <= 0.0) continue;
      // Residual problem: all unused rows x unused cols, minus row r / col j.
      std::vector<std::vector<double>> rest;
      for (size_t r2 = 0; r2 < w.size(); ++r2) {
        if (row_used[r2] || r2 == r) continue;
        std::vector<double> row;
        for (int j2 = 0; j2 < m; ++j2) {
          if (col_used[j2] || j2 == j) continue;
          row.push_back(w[r2][j2]);
        }
        rest.push_back(std::move(row));
      }
      const double rest_opt = rest.empty() ? 0.0 : detail::max_matching_weight(rest);
      if (fixed_weight + w[r][j] + rest_opt >= optimum - tol) {
        row_used[r] = 1;
        col_used[j] = 1;
        fixed_weight += w[r][j];
        result.pairs.push_back({candidates[r], j, w[r][j]});
        break;
      }
    }
  }

  for (const MatchPair& p : result.pairs) result.total_weight += p.weight;
  return result;
}

}  // namespace storefront
