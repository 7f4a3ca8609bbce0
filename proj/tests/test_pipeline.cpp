#include <catch2/catch_amalgamated.hpp>

#include "storefront/pipeline.hpp"
#include "storefront/synth_data.hpp"

using namespace storefront;

namespace {

PriorSet two_priors() {
  PriorSet set;
  set.priors = {Box{0.2, 0.2, 0.5, 0.5}, Box{0.55, 0.3, 0.85, 0.7}};
  return set;
}

// A model with zeroed feature pathways whose output is exactly its output
// bias: full control over what every crop produces.
ModelParams bias_model(const PriorSet& priors, const std::vector<Box>& crop_boxes,
                       const std::vector<double>& confidences) {
  ModelConfig cfg;
  cfg.input_grid = 8;
  cfg.hidden_units = 4;
  ModelParams p = init_model(priors, 1, cfg);
  std::fill(p.w1.begin(), p.w1.end(), 0.0);
  std::fill(p.b1.begin(), p.b1.end(), 0.0);
  std::fill(p.w2.begin(), p.w2.end(), 0.0);
  std::fill(p.b2.begin(), p.b2.end(), 0.0);
  const int n = priors.size();
  for (int i = 0; i < n; ++i) {
    p.b2[4 * i + 0] = crop_boxes[i].x_min - priors.priors[i].x_min;
    p.b2[4 * i + 1] = crop_boxes[i].y_min - priors.priors[i].y_min;
    p.b2[4 * i + 2] = crop_boxes[i].x_max - priors.priors[i].x_max;
    p.b2[4 * i + 3] = crop_boxes[i].y_max - priors.priors[i].y_max;
    p.b2[4 * n + i] = logit(confidences[i]);
  }
  return p;
}

// Square panorama so a single 1.0-scale crop covers it exactly.
Image gray_pano(int w = 256, int h = 256) { return Image::filled(w, h, 128, 128, 128); }

CropPlanConfig single_scale_plan() {
  CropPlanConfig plan;
  plan.scales = {1.0};
  return plan;
}

}  // namespace

TEST_CASE("expand_box identity, arithmetic and clamping") {
  const Box b{0.4, 0.4, 0.6, 0.6};
  CHECK(box_equal(expand_box(b, 0.0), b));

  const Box e = expand_box(b, 0.166);
  CHECK(e.x_min == Catch::Approx(0.3834));
  CHECK(e.y_min == Catch::Approx(0.3834));
  CHECK(e.x_max == Catch::Approx(0.6166));
  CHECK(e.y_max == Catch::Approx(0.6166));

  const Box edge = expand_box(Box{0.0, 0.0, 0.2, 0.2}, 0.5);
  CHECK(edge.x_min == 0.0);
  CHECK(edge.y_min == 0.0);
  CHECK(edge.x_max == Catch::Approx(0.25));
  CHECK(edge.y_max == Catch::Approx(0.25));

  // On the torus the x coordinates wrap instead of clamping.
  const Box seam = expand_box(Box{0.98, 0.4, 1.06, 0.5}, 0.5, /*wrap_x=*/true);
  CHECK(seam.x_min == Catch::Approx(0.96));
  CHECK(seam.x_max == Catch::Approx(1.08));
}

TEST_CASE("fuse_scores multiplies and validates") {
  CHECK(fuse_scores(1.0, 0.8) == Catch::Approx(0.8));
  CHECK(fuse_scores(0.8, 1.0) == Catch::Approx(0.8));
  CHECK(fuse_scores(0.9, 0.8) == Catch::Approx(0.72));
  CHECK_THROWS_AS(fuse_scores(0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(fuse_scores(0.5, 1.2), std::invalid_argument);
}

TEST_CASE("marginal probability sums overlapping detector scores") {
  Detection det = make_detection(Box{0.2, 0.2, 0.4, 0.4}, 0.5);
  set_post_score(det, 0.9);

  CHECK(marginal_probability(det, {}) == 0.0);

  // Singleton: the detection itself.
  CHECK(marginal_probability(det, {det}) == Catch::Approx(fuse_scores(0.5, 0.9)));

  Detection other = make_detection(Box{0.21, 0.2, 0.41, 0.4}, 0.3);
  CHECK(marginal_probability(det, {det, other}) == Catch::Approx(0.9 * 0.5 + 0.9 * 0.3));

  // Two strong terms clamp at 1.
  Detection strong = make_detection(Box{0.2, 0.2, 0.4, 0.4}, 0.9);
  Detection strong2 = make_detection(Box{0.205, 0.2, 0.405, 0.4}, 0.9);
  Detection fused = strong;
  set_post_score(fused, 0.9);
  CHECK(marginal_probability(fused, {strong, strong2}) == 1.0);

  // Boxes below 0.5 overlap are rejected.
  Detection far = make_detection(Box{0.7, 0.7, 0.9, 0.9}, 0.5);
  CHECK_THROWS_AS(marginal_probability(det, {far}), std::invalid_argument);
}

TEST_CASE("blank panorama with prior-negative init yields nothing at 0.5") {
  PriorSet priors = two_priors();
  ModelConfig mcfg;
  mcfg.input_grid = 8;
  mcfg.hidden_units = 16;
  const ModelParams model = init_model(priors, 3, mcfg);
  PipelineConfig cfg;
  cfg.proposal_threshold = 0.5;
  const Image pano = gray_pano();
  const auto result = detect_panorama(model, nullptr, pano, "blank", priors, cfg,
                                      single_scale_plan());
  CHECK(result.detections.empty());
  CHECK(result.cost.crops_evaluated == 1);
  CHECK(result.cost.network_evals_total == 1);
}

TEST_CASE("bias model produces one detection through the full pipeline") {
  PriorSet priors = two_priors();
  // Prior 0 decodes to a clean interior box with high confidence; prior 1
  // stays at low confidence.
  const Box target{0.3, 0.3, 0.45, 0.5};
  const ModelParams model = bias_model(priors, {target, priors.priors[1]}, {0.95, 0.01});
  PipelineConfig cfg;
  cfg.proposal_threshold = 0.5;
  const auto result = detect_panorama(model, nullptr, gray_pano(), "p0", priors, cfg,
                                      single_scale_plan());
  REQUIRE(result.detections.size() == 1);
  const Detection& det = result.detections[0];
  CHECK(det.detector_score == Catch::Approx(0.95).epsilon(1e-9));
  CHECK(det.final_score == det.detector_score);
  CHECK_FALSE(det.has_post_score);
  CHECK(det.pano_id == "p0");
  CHECK(det.box.x_min == Catch::Approx(target.x_min).margin(1e-9));
  CHECK(det.box.y_max == Catch::Approx(target.y_max).margin(1e-9));
}

TEST_CASE("edge-violating boxes are dropped unless exempted") {
  PriorSet priors = two_priors();
  // Box crossing the right margin of the single full crop.
  const Box offender{0.5, 0.3, 0.95, 0.5};
  const ModelParams model = bias_model(priors, {offender, priors.priors[1]}, {0.95, 0.01});
  PipelineConfig cfg;
  cfg.proposal_threshold = 0.5;
  const auto result = detect_panorama(model, nullptr, gray_pano(), "p0", priors, cfg,
                                      single_scale_plan());
  CHECK(result.detections.empty());

  // The same box at the top margin of a full-height crop keeps the exemption.
  const Box top_box{0.3, 0.02, 0.5, 0.4};
  const ModelParams model2 = bias_model(priors, {top_box, priors.priors[1]}, {0.95, 0.01});
  const auto result2 = detect_panorama(model2, nullptr, gray_pano(), "p0", priors, cfg,
                                       single_scale_plan());
  REQUIRE(result2.detections.size() == 1);
}

TEST_CASE("postclassification fuses scores and counts evaluations") {
  PriorSet priors = two_priors();
  const Box target{0.3, 0.3, 0.45, 0.5};
  const ModelParams model = bias_model(priors, {target, priors.priors[1]}, {0.9, 0.01});
  ModelConfig mcfg;
  mcfg.input_grid = 8;
  mcfg.hidden_units = 4;
  PostclassifierParams post = init_postclassifier(3, mcfg);
  // Constant postclassifier: score is logistic(b2) regardless of pixels.
  std::fill(post.w1.begin(), post.w1.end(), 0.0);
  std::fill(post.b1.begin(), post.b1.end(), 0.0);
  std::fill(post.w2.begin(), post.w2.end(), 0.0);
  post.b2 = logit(0.8);

  PipelineConfig cfg;
  cfg.proposal_threshold = 0.5;
  cfg.postclassify = true;
  const auto result = detect_panorama(model, &post, gray_pano(), "p0", priors, cfg,
                                      single_scale_plan());
  REQUIRE(result.detections.size() == 1);
  const Detection& det = result.detections[0];
  REQUIRE(det.has_post_score);
  CHECK(det.post_score == Catch::Approx(0.8).epsilon(1e-9));
  CHECK(det.final_score == Catch::Approx(det.detector_score * 0.8).epsilon(1e-12));
  CHECK(result.cost.proposals_postclassified == 1);
  CHECK(result.cost.network_evals_total == result.cost.crops_evaluated + 1);
  CHECK(result.cost.relative_cost_vs_baseline ==
        Catch::Approx(result.cost.network_evals_total / 4666.0));

  // Requesting postclassification without a model is an error.
  CHECK_THROWS_AS(detect_panorama(model, nullptr, gray_pano(), "p0", priors, cfg,
                                  single_scale_plan()),
                  std::invalid_argument);
}

TEST_CASE("detector refuses mismatched priors") {
  PriorSet priors = two_priors();
  const ModelParams model = bias_model(priors, {priors.priors[0], priors.priors[1]}, {0.5, 0.5});
  PriorSet other = priors;
  other.priors[0].x_min += 0.01;
  PipelineConfig cfg;
  CHECK_THROWS_AS(detect_panorama(model, nullptr, gray_pano(), "p", other, cfg,
                                  single_scale_plan()),
                  std::invalid_argument);
}

TEST_CASE("multi-crop run is thread-count invariant and respects constraints") {
  // Real scene + multi-scale plan; detector biases fire on both priors.
  SceneSpec spec;
  spec.seed = 2;
  spec.pano_width_px = 512;
  spec.pano_height_px = 256;
  spec.camera.heading = 90.0;
  spec.street_bearing_deg = 180.0;
  spec.businesses.push_back({-8.0, 9.0, 5.0, 1});
  spec.businesses.push_back({1.0, 7.0, 4.0, 6});
  const Scene scene = gen_scene(spec);

  PriorSet priors = two_priors();
  const ModelParams model =
      bias_model(priors, {Box{0.35, 0.35, 0.55, 0.6}, Box{0.5, 0.3, 0.8, 0.7}}, {0.7, 0.6});
  PipelineConfig cfg;
  cfg.proposal_threshold = 0.5;
  CropPlanConfig plan;
  plan.scales = {1.0, 0.5};

  const auto a = detect_panorama(model, nullptr, scene.panorama, "s", priors, cfg, plan, 1);
  const auto b = detect_panorama(model, nullptr, scene.panorama, "s", priors, cfg, plan, 4);
  REQUIRE(a.detections.size() == b.detections.size());
  for (std::size_t i = 0; i < a.detections.size(); ++i) {
    CHECK(box_equal(a.detections[i].box, b.detections[i].box));
    CHECK(a.detections[i].final_score == b.detections[i].final_score);
    CHECK(a.detections[i].source_crop == b.detections[i].source_crop);
  }
  CHECK(a.cost.crops_evaluated == static_cast<int>(plan_crops(512, 256, plan).size()));

  // NMS constraint holds pairwise; scores descend.
  for (std::size_t i = 0; i < a.detections.size(); ++i) {
    if (i > 0) CHECK(a.detections[i].final_score <= a.detections[i - 1].final_score);
    for (std::size_t j = i + 1; j < a.detections.size(); ++j) {
      CHECK(jaccard_wrapped(a.detections[i].box, a.detections[j].box) <= cfg.nms_threshold);
    }
  }
}

TEST_CASE("lowering the threshold keeps the top detection") {
  PriorSet priors = two_priors();
  const ModelParams model =
      bias_model(priors, {Box{0.3, 0.3, 0.45, 0.5}, Box{0.6, 0.35, 0.8, 0.65}}, {0.9, 0.55});
  PipelineConfig high;
  high.proposal_threshold = 0.8;
  PipelineConfig low;
  low.proposal_threshold = 0.3;
  const Image pano = gray_pano();
  const auto at_high = detect_panorama(model, nullptr, pano, "p", priors, high,
                                       single_scale_plan());
  const auto at_low = detect_panorama(model, nullptr, pano, "p", priors, low,
                                      single_scale_plan());
  REQUIRE(at_high.detections.size() == 1);
  REQUIRE(at_low.detections.size() == 2);
  CHECK(box_equal(at_low.detections[0].box, at_high.detections[0].box));
  // Every high-threshold survivor persists at the lower threshold.
  for (const Detection& d : at_high.detections) {
    bool found = false;
    for (const Detection& e : at_low.detections) found = found || box_equal(d.box, e.box);
    CHECK(found);
  }
}

TEST_CASE("threshold calibration hits the proposal target") {
  PriorSet priors = two_priors();
  const ModelParams model =
      bias_model(priors, {Box{0.3, 0.3, 0.45, 0.5}, Box{0.6, 0.35, 0.8, 0.65}}, {0.9, 0.55});
  PipelineConfig cfg;
  cfg.target_proposals_per_pano = 1;
  const Image pano = gray_pano();
  const double thr = calibrate_proposal_threshold(model, {&pano}, priors, cfg,
                                                  single_scale_plan());
  // One proposal on average means the threshold must sit above 0.55.
  CHECK(thr > 0.55);
  CHECK(thr <= 0.9 + 1e-12);

  PipelineConfig two = cfg;
  two.target_proposals_per_pano = 2;
  const double thr2 = calibrate_proposal_threshold(model, {&pano}, priors, two,
                                                   single_scale_plan());
  CHECK(thr2 <= 0.55 + 1e-12);
}
