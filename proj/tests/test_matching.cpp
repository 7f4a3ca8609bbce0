#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "storefront/matching.hpp"
#include "storefront/rng.hpp"
#include "oracles.hpp"

using namespace storefront;

namespace {

Box random_box(Rng& rng) {
  const double w = rng.uniform(0.05, 0.5);
  const double h = rng.uniform(0.05, 0.5);
  const double x = rng.uniform(0.0, 1.0 - w);
  const double y = rng.uniform(0.0, 1.0 - h);
  return Box{x, y, x + w, y + h};
}

PriorSet priors_from(std::vector<Box> boxes) {
  PriorSet set;
  set.priors = std::move(boxes);
  return set;
}

std::vector<std::vector<double>> weight_matrix(const PriorSet& priors,
                                               const std::vector<Box>& gts) {
  std::vector<std::vector<double>> w(priors.priors.size(),
                                     std::vector<double>(gts.size(), 0.0));
  for (size_t i = 0; i < priors.priors.size(); ++i) {
    for (size_t j = 0; j < gts.size(); ++j) w[i][j] = jaccard(priors.priors[i], gts[j]);
  }
  return w;
}

}  // namespace

TEST_CASE("single overlapping pair") {
  // Dyadic geometry: inter 0.5*0.375, union 0.3125, overlap exactly 0.6.
  const PriorSet priors = priors_from({Box{0.0, 0.0, 0.5, 0.5}});
  const std::vector<Box> gts{Box{0.0, 0.125, 0.5, 0.625}};
  const double expected = jaccard(priors.priors[0], gts[0]);
  REQUIRE(expected == Catch::Approx(0.6));

  const MatchResult m = max_weight_match(priors, gts);
  REQUIRE(m.pairs.size() == 1);
  CHECK(m.pairs[0].prior_index == 0);
  CHECK(m.pairs[0].gt_index == 0);
  CHECK(m.pairs[0].weight == expected);
  CHECK(m.total_weight == expected);
}

TEST_CASE("disjoint priors and gts produce an empty matching") {
  const PriorSet priors = priors_from({Box{0.0, 0.0, 0.1, 0.1}, Box{0.2, 0.2, 0.3, 0.3}});
  const std::vector<Box> gts{Box{0.6, 0.6, 0.7, 0.7}, Box{0.8, 0.8, 0.9, 0.9}};
  const MatchResult m = max_weight_match(priors, gts);
  CHECK(m.pairs.empty());
  CHECK(m.total_weight == 0.0);
}

TEST_CASE("empty gts give an empty matching") {
  const PriorSet priors = priors_from({Box{0.0, 0.0, 0.1, 0.1}});
  const MatchResult m = max_weight_match(priors, {});
  CHECK(m.pairs.empty());
  CHECK(m.total_weight == 0.0);
}

TEST_CASE("4x3 instance equals exhaustive enumeration") {
  Rng rng(42);
  std::vector<Box> pb, gb;
  for (int i = 0; i < 4; ++i) pb.push_back(random_box(rng));
  for (int j = 0; j < 3; ++j) gb.push_back(random_box(rng));
  const PriorSet priors = priors_from(pb);
  const MatchResult m = max_weight_match(priors, gb);
  const double oracle = oracles::brute_force_matching(weight_matrix(priors, gb));
  CHECK(m.total_weight == Catch::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("matching optimality and canonical form on random instances") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int np = 1 + static_cast<int>(rng.uniform_index(7));
    const int ng = 1 + static_cast<int>(rng.uniform_index(5));
    std::vector<Box> pb, gb;
    for (int i = 0; i < np; ++i) pb.push_back(random_box(rng));
    for (int j = 0; j < ng; ++j) gb.push_back(random_box(rng));
    const PriorSet priors = priors_from(pb);

    const MatchResult m = max_weight_match(priors, gb);
    std::vector<std::pair<int, int>> oracle_pairs;
    const double oracle = oracles::brute_force_matching(weight_matrix(priors, gb), &oracle_pairs);
    CHECK(m.total_weight == Catch::Approx(oracle).epsilon(1e-12));

    // Canonical pair list matches the oracle's lexicographic extraction.
    REQUIRE(m.pairs.size() == oracle_pairs.size());
    for (size_t k = 0; k < m.pairs.size(); ++k) {
      CHECK(m.pairs[k].gt_index == oracle_pairs[k].first);
      CHECK(m.pairs[k].prior_index == oracle_pairs[k].second);
    }

    // Matching properties.
    std::set<int> seen_priors, seen_gts;
    for (const MatchPair& p : m.pairs) {
      CHECK(p.weight > 0.0);
      CHECK(p.weight == jaccard(priors.priors[p.prior_index], gb[p.gt_index]));
      CHECK(seen_priors.insert(p.prior_index).second);
      CHECK(seen_gts.insert(p.gt_index).second);
    }
    double sum = 0.0;
    for (const MatchPair& p : m.pairs) sum += p.weight;
    CHECK(m.total_weight == sum);
  }
}

TEST_CASE("equal-weight tie resolves to the lexicographically smallest pair list") {
  // Dyadic coordinates make the mirror-symmetric overlaps bitwise equal.
  const Box gt{0.125, 0.125, 0.375, 0.375};
  const Box left{0.0625, 0.125, 0.3125, 0.375};
  const Box right{0.1875, 0.125, 0.4375, 0.375};
  REQUIRE(jaccard(left, gt) == jaccard(right, gt));
  const MatchResult m = max_weight_match(priors_from({left, right}), {gt});
  REQUIRE(m.pairs.size() == 1);
  CHECK(m.pairs[0].prior_index == 0);
  CHECK(m.pairs[0].gt_index == 0);

  // Symmetric 2x2: both perfect matchings share the same total; the canonical
  // optimum pairs gt 0 with prior 0.
  const std::vector<Box> gts{Box{0.125, 0.125, 0.375, 0.375}, Box{0.25, 0.125, 0.5, 0.375}};
  const Box mid_x{0.1875, 0.125, 0.4375, 0.375};
  const Box mid_xy{0.1875, 0.1875, 0.4375, 0.4375};
  REQUIRE(jaccard(mid_x, gts[0]) == jaccard(mid_x, gts[1]));
  REQUIRE(jaccard(mid_xy, gts[0]) == jaccard(mid_xy, gts[1]));
  const MatchResult mc = max_weight_match(priors_from({mid_x, mid_xy}), gts);
  REQUIRE(mc.pairs.size() == 2);
  CHECK(mc.pairs[0].gt_index == 0);
  CHECK(mc.pairs[0].prior_index == 0);
  CHECK(mc.pairs[1].gt_index == 1);
  CHECK(mc.pairs[1].prior_index == 1);
}

TEST_CASE("matching rejects invalid input") {
  CHECK_THROWS_AS(max_weight_match(PriorSet{}, {Box{0, 0, 1, 1}}), std::invalid_argument);
  const PriorSet priors = priors_from({Box{0, 0, 0.5, 0.5}});
  CHECK_THROWS_AS(max_weight_match(priors, {Box{0.4, 0.4, 0.2, 0.6}}), std::invalid_argument);
}
