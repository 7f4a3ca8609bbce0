#include <catch2/catch_amalgamated.hpp>

#include "storefront/multibox_loss.hpp"
#include "storefront/rng.hpp"
#include "oracles.hpp"

using namespace storefront;

namespace {

PriorSet priors_from(std::vector<Box> boxes) {
  PriorSet set;
  set.priors = std::move(boxes);
  return set;
}

Box random_box(Rng& rng) {
  const double w = rng.uniform(0.05, 0.5);
  const double h = rng.uniform(0.05, 0.5);
  const double x = rng.uniform(0.0, 1.0 - w);
  const double y = rng.uniform(0.0, 1.0 - h);
  return Box{x, y, x + w, y + h};
}

// Loss as a function of raw logits, the differentiable parameterization the
// gradient is expressed in.
double loss_from_logits(const std::vector<std::array<double, 4>>& residuals,
                        const std::vector<double>& logits, const PriorSet& priors,
                        const std::vector<Box>& gts, const MatchResult& match,
                        const LossConfig& cfg) {
  DetectorOutput out;
  out.loc_residuals = residuals;
  for (double l : logits) out.confidences.push_back(logistic(l));
  return multibox_loss(out, priors, gts, match, cfg);
}

}  // namespace

TEST_CASE("decode_locations adds residuals to priors") {
  const PriorSet priors = priors_from({Box{0.2, 0.2, 0.4, 0.4}});
  DetectorOutput out;
  out.loc_residuals = {{0.1, 0.1, 0.1, 0.1}};
  out.confidences = {0.5};
  const auto decoded = decode_locations(out, priors);
  REQUIRE(decoded.size() == 1);
  CHECK(decoded[0].x_min == Catch::Approx(0.3));
  CHECK(decoded[0].y_min == Catch::Approx(0.3));
  CHECK(decoded[0].x_max == Catch::Approx(0.5));
  CHECK(decoded[0].y_max == Catch::Approx(0.5));

  DetectorOutput zero;
  zero.loc_residuals = {{0, 0, 0, 0}};
  zero.confidences = {0.5};
  CHECK(box_equal(decode_locations(zero, priors)[0], priors.priors[0]));
}

TEST_CASE("decode then subtract priors recovers residuals") {
  Rng rng(31);
  std::vector<Box> pb;
  for (int i = 0; i < 8; ++i) pb.push_back(random_box(rng));
  const PriorSet priors = priors_from(pb);
  DetectorOutput out;
  for (int i = 0; i < 8; ++i) {
    out.loc_residuals.push_back({rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                                 rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)});
    out.confidences.push_back(0.5);
  }
  const auto decoded = decode_locations(out, priors);
  for (int i = 0; i < 8; ++i) {
    CHECK(std::abs(decoded[i].x_min - priors.priors[i].x_min - out.loc_residuals[i][0]) < 1e-15);
    CHECK(std::abs(decoded[i].y_max - priors.priors[i].y_max - out.loc_residuals[i][3]) < 1e-15);
  }
}

TEST_CASE("decode_locations rejects size mismatch") {
  const PriorSet priors = priors_from({Box{0.2, 0.2, 0.4, 0.4}});
  DetectorOutput out;
  out.loc_residuals = {{0, 0, 0, 0}, {0, 0, 0, 0}};
  out.confidences = {0.5, 0.5};
  CHECK_THROWS_AS(decode_locations(out, priors), std::invalid_argument);
}

TEST_CASE("loss values from the formula") {
  const Box g{0.2, 0.2, 0.5, 0.6};
  const PriorSet priors = priors_from({g});  // prior equals gt
  const std::vector<Box> gts{g};
  const MatchResult match = max_weight_match(priors, gts);
  REQUIRE(match.pairs.size() == 1);

  LossConfig cfg;
  const double eps = cfg.confidence_clamp;

  // Perfect prediction: zero residual, confidence at the clamp ceiling.
  DetectorOutput perfect;
  perfect.loc_residuals = {{0, 0, 0, 0}};
  perfect.confidences = {1.0 - eps};
  const double perfect_loss = multibox_loss(perfect, priors, gts, match, cfg);
  CHECK(perfect_loss == Catch::Approx(-std::log(1.0 - eps)).epsilon(1e-9));
  CHECK(perfect_loss <= 2 * eps);

  // Matched prior, exact location, confidence 0.5 -> -log(0.5).
  DetectorOutput half;
  half.loc_residuals = {{0, 0, 0, 0}};
  half.confidences = {0.5};
  CHECK(multibox_loss(half, priors, gts, match, cfg) ==
        Catch::Approx(0.693147180559945).epsilon(1e-12));

  // Unmatched prior with confidence 0.5 -> -log(0.5).
  const MatchResult empty_match;
  CHECK(multibox_loss(half, priors, {}, empty_match, cfg) ==
        Catch::Approx(0.693147180559945).epsilon(1e-12));
}

TEST_CASE("loss is non-negative and additive over unmatched permutations") {
  Rng rng(91);
  std::vector<Box> pb;
  for (int i = 0; i < 6; ++i) pb.push_back(random_box(rng));
  const PriorSet priors = priors_from(pb);
  const std::vector<Box> gts{random_box(rng)};
  const MatchResult match = max_weight_match(priors, gts);

  DetectorOutput out;
  for (int i = 0; i < 6; ++i) {
    out.loc_residuals.push_back({rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                                 rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)});
    out.confidences.push_back(rng.uniform(0.05, 0.95));
  }
  const double loss = multibox_loss(out, priors, gts, match);
  CHECK(loss >= 0.0);
  CHECK(std::isfinite(loss));
}

TEST_CASE("location gradient is alpha times the decode error") {
  const Box g{0.2, 0.2, 0.4, 0.4};
  const PriorSet priors = priors_from({g});
  const std::vector<Box> gts{g};
  const MatchResult match = max_weight_match(priors, gts);
  DetectorOutput out;
  out.loc_residuals = {{0.1, 0.0, 0.0, 0.0}};  // l - g = (0.1, 0, 0, 0)
  out.confidences = {0.5};
  LossConfig cfg;
  cfg.alpha = 0.3;
  const MultiboxGradient grad = multibox_grad(out, priors, gts, match, cfg);
  CHECK(grad.d_loc[0][0] == Catch::Approx(0.03).epsilon(1e-12));
  CHECK(grad.d_loc[0][1] == 0.0);
  CHECK(grad.d_loc[0][2] == 0.0);
  CHECK(grad.d_loc[0][3] == 0.0);
  CHECK(grad.d_logit[0] == Catch::Approx(0.5 - 1.0));
}

TEST_CASE("perfect prediction has near-zero gradients") {
  const Box g{0.25, 0.3, 0.5, 0.7};
  const PriorSet priors = priors_from({g, Box{0.6, 0.6, 0.9, 0.9}});
  const std::vector<Box> gts{g};
  const MatchResult match = max_weight_match(priors, gts);
  REQUIRE(match.pairs.size() == 1);
  REQUIRE(match.pairs[0].prior_index == 0);

  DetectorOutput out;
  out.loc_residuals = {{0, 0, 0, 0}, {0, 0, 0, 0}};
  out.confidences = {1.0 - 1e-7, 1e-7};
  const MultiboxGradient grad = multibox_grad(out, priors, gts, match);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(grad.d_loc[0][k]) <= 1e-7);
  CHECK(std::abs(grad.d_logit[0]) <= 1e-7);
  CHECK(std::abs(grad.d_logit[1]) <= 1e-7);
}

TEST_CASE("analytic gradient agrees with central finite differences") {
  Rng rng(555);
  double max_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_index(16));
    const int ng = static_cast<int>(rng.uniform_index(6));
    std::vector<Box> pb, gb;
    for (int i = 0; i < n; ++i) pb.push_back(random_box(rng));
    for (int j = 0; j < ng; ++j) gb.push_back(random_box(rng));
    const PriorSet priors = priors_from(pb);
    const MatchResult match = max_weight_match(priors, gb);

    std::vector<std::array<double, 4>> residuals(n);
    std::vector<double> logits(n);
    for (int i = 0; i < n; ++i) {
      residuals[i] = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                      rng.uniform(-0.3, 0.3)};
      logits[i] = rng.uniform(-4.0, 4.0);
    }
    DetectorOutput out;
    out.loc_residuals = residuals;
    for (double l : logits) out.confidences.push_back(logistic(l));
    const LossConfig cfg;
    const MultiboxGradient grad = multibox_grad(out, priors, gb, match, cfg);

    const double h = 1e-5;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < 4; ++k) {
        auto r_plus = residuals;
        auto r_minus = residuals;
        r_plus[i][k] += h;
        r_minus[i][k] -= h;
        const double fd = (loss_from_logits(r_plus, logits, priors, gb, match, cfg) -
                           loss_from_logits(r_minus, logits, priors, gb, match, cfg)) /
                          (2 * h);
        max_err = std::max(max_err, oracles::grad_error(grad.d_loc[i][k], fd));
      }
      auto l_plus = logits;
      auto l_minus = logits;
      l_plus[i] += h;
      l_minus[i] -= h;
      const double fd = (loss_from_logits(residuals, l_plus, priors, gb, match, cfg) -
                         loss_from_logits(residuals, l_minus, priors, gb, match, cfg)) /
                        (2 * h);
      max_err = std::max(max_err, oracles::grad_error(grad.d_logit[i], fd));
    }
  }
  CHECK(max_err <= 1e-6);
}

TEST_CASE("alpha to zero drives confidences to the clamp extremes") {
  const Box g{0.2, 0.2, 0.4, 0.4};
  const PriorSet priors = priors_from({g});
  const std::vector<Box> gts{g};
  const MatchResult match = max_weight_match(priors, gts);
  LossConfig cfg;
  cfg.alpha = 1e-12;
  const double eps = cfg.confidence_clamp;

  // Sweep confidences on a matched instance: the minimum sits at 1 - eps.
  double best_c = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (double c : {eps, 0.1, 0.5, 0.9, 1.0 - eps}) {
    DetectorOutput out;
    out.loc_residuals = {{0.05, 0.05, 0.05, 0.05}};
    out.confidences = {c};
    const double l = multibox_loss(out, priors, gts, match, cfg);
    if (l < best_loss) {
      best_loss = l;
      best_c = c;
    }
  }
  CHECK(best_c == 1.0 - eps);

  // Unmatched instance: the minimum sits at eps.
  best_loss = std::numeric_limits<double>::infinity();
  for (double c : {eps, 0.1, 0.5, 0.9, 1.0 - eps}) {
    DetectorOutput out;
    out.loc_residuals = {{0, 0, 0, 0}};
    out.confidences = {c};
    const double l = multibox_loss(out, priors, {}, MatchResult{}, cfg);
    if (l < best_loss) {
      best_loss = l;
      best_c = c;
    }
  }
  CHECK(best_c == eps);
}

TEST_CASE("loss validates match indices") {
  const PriorSet priors = priors_from({Box{0.1, 0.1, 0.3, 0.3}});
  DetectorOutput out;
  out.loc_residuals = {{0, 0, 0, 0}};
  out.confidences = {0.5};
  MatchResult bad;
  bad.pairs.push_back({0, 2, 0.5});
  CHECK_THROWS_AS(multibox_loss(out, priors, {Box{0.1, 0.1, 0.3, 0.3}}, bad),
                  std::invalid_argument);
}
