// Storefront detection CLI: dataset generation, prior building, training,
// multi-crop detection, evaluation, geo-clustering and cost benchmarking.
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime error. Errors
// are emitted as one JSON object on stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "storefront/config.hpp"
#include "storefront/workflows.hpp"

namespace fs = std::filesystem;
using namespace storefront;
using nlohmann::json;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  int threads = static_cast<int>(std::thread::hardware_concurrency());
};

std::string resolve(const GlobalArgs& args, const std::string& rel) {
  if (rel.empty()) return rel;
  fs::path p(rel);
  if (p.is_absolute()) return rel;
  return (fs::path(args.out_dir) / p).string();
}

RunConfig load_run_config(const GlobalArgs& args) {
  return make_run_config(args.config_path, args.overrides);
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const GlobalArgs& args) {
  const RunConfig cfg = load_run_config(args);
  fs::create_directories(args.out_dir);
  Dataset ds = build_dataset(cfg, args.threads);
  write_dataset(ds, resolve(args, cfg.path("dataset_dir")), resolve(args, cfg.path("manifest")),
                args.threads);
  int train = 0, test = 0;
  for (const auto& e : ds.entries) (e.split == "train" ? train : test)++;
  std::cout << "wrote " << ds.entries.size() << " scenes (" << train << " train, " << test
            << " test) to " << resolve(args, cfg.path("dataset_dir")) << "\n";
  return 0;
}

int cmd_make_priors(const GlobalArgs& args) {
  const RunConfig cfg = load_run_config(args);
  const Dataset ds = load_dataset(resolve(args, cfg.path("dataset_dir")),
                                  resolve(args, cfg.path("manifest")));
  // Priors cluster the training-split ground truth in crop frame: every
  // gt visible in a planned crop contributes its clamped crop-frame box.
  const CropPlanConfig plan = cfg.crop_plan();
  std::vector<Box> samples;
  for (const auto* e : ds.split("train")) {
    // Crop geometry does not depend on pixels; use configured dimensions.
    const auto crops =
        plan_crops(e->spec.pano_width_px > 0 ? e->spec.pano_width_px
                                             : cfg.raw.at("synth").at("pano_width_px").get<int>(),
                   e->spec.pano_height_px > 0 ? e->spec.pano_height_px
                                              : cfg.raw.at("synth").at("pano_height_px").get<int>(),
                   plan, e->id);
    for (const auto& crop : crops) {
      for (const Box& b : gts_in_crop(e->gts, crop)) samples.push_back(b);
    }
  }
  const auto& pj = cfg.raw.at("priors");
  const PriorSet priors = cluster_priors(samples, pj.at("n").get<int>(),
                                         pj.at("seed").get<std::uint64_t>(),
                                         pj.at("iters").get<int>(), "train_split");
  write_priors_json(priors, resolve(args, cfg.path("priors_file")));
  std::cout << "clustered " << samples.size() << " boxes into " << priors.size()
            << " priors (hash " << std::hex << prior_set_hash(priors) << std::dec << ")\n";
  return 0;
}

int cmd_train(const GlobalArgs& args) {
  const RunConfig cfg = load_run_config(args);
  const Dataset ds = load_dataset(resolve(args, cfg.path("dataset_dir")),
                                  resolve(args, cfg.path("manifest")));
  const PriorSet priors = read_priors_json(resolve(args, cfg.path("priors_file")));
  const CropPlanConfig plan = cfg.crop_plan();
  const ModelConfig model_cfg = cfg.model();
  const TrainConfig train_cfg = cfg.train();
  const LossConfig loss_cfg = cfg.loss();

  const auto dataset = build_train_examples(
      ds, plan, model_cfg.input_grid, cfg.raw.at("train").at("max_crops_per_scene").get<int>(),
      train_cfg.seed, args.threads);
  if (dataset.empty()) throw std::runtime_error("no training crops produced");

  const ModelParams init = init_model(priors, train_cfg.seed, model_cfg);
  const DetectorTraining trained = train_detector_with_backoff(
      init, dataset, priors, train_cfg, loss_cfg,
      cfg.raw.at("train").at("lr_backoff_attempts").get<int>());
  save_checkpoint(trained.params, resolve(args, cfg.path("detector_checkpoint")));

  {
    std::ofstream trace(resolve(args, cfg.path("loss_trace")));
    trace << "step,loss\n";
    for (std::size_t i = 0; i < trained.loss_trace.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%zu,%.9f\n", i, trained.loss_trace[i]);
      trace << buf;
    }
  }
  std::cout << "trained detector on " << dataset.size() << " crops, final loss "
            << trained.loss_trace.back() << " (lr " << trained.learning_rate_used << ")\n";

  if (cfg.pipeline().postclassify) {
    PipelineConfig pipe_cfg = cfg.pipeline();
    std::vector<LabeledPatch> positives, negatives;
    build_postclassifier_pool(ds, trained.params, priors, pipe_cfg, plan,
                              cfg.raw.at("postclassifier").at("low_threshold").get<double>(),
                              pipe_cfg.expansion_fraction, &positives, &negatives, args.threads);
    if (negatives.empty()) {
      // A confident early model may propose nothing spurious; fall back to
      // random background patches so the classifier still trains.
      Rng rng(Rng::derive_seed(cfg.seed(), 0xbac6));
      for (const auto* e : ds.split("train")) {
        const Image pano = load_scene_pixels(*e);
        for (int k = 0; k < 8; ++k) {
          const double w = rng.uniform(0.05, 0.2);
          const double h = rng.uniform(0.05, 0.2);
          const double x = rng.uniform(0.0, 1.0 - w);
          const double y = rng.uniform(0.0, 1.0 - h);
          const Box b{x, y, x + w, y + h};
          double best = 0.0;
          for (const Box& g : e->gts) best = std::max(best, jaccard_wrapped(b, g));
          if (best >= 0.5) continue;
          LabeledPatch p;
          p.positive = false;
          p.features = postclassifier_features(pano, b, pipe_cfg.expansion_fraction,
                                               trained.params.input_grid);
          negatives.push_back(std::move(p));
        }
        if (negatives.size() > 64) break;
      }
    }
    const TrainConfig post_cfg = cfg.postclassifier_train();
    const PostclassifierParams post = train_postclassifier(
        positives, negatives, post_cfg, cfg.raw.at("postclassifier").at("neg_per_pos").get<int>(),
        model_cfg);
    save_postclassifier(post, resolve(args, cfg.path("postclassifier_checkpoint")));
    std::cout << "trained postclassifier on " << positives.size() << " positives / "
              << negatives.size() << " negatives\n";
  }
  return 0;
}

PipelineConfig resolve_threshold(const RunConfig& cfg, const Dataset& ds,
                                 const ModelParams& detector, const PriorSet& priors,
                                 const CropPlanConfig& plan, int threads) {
  PipelineConfig pipe_cfg = cfg.pipeline();
  if (!cfg.auto_threshold()) return pipe_cfg;
  // Calibrate on the training split: pick the threshold whose average
  // post-NMS proposal count hits the target.
  std::vector<Image> pixels;
  const auto train_entries = ds.split("train");
  const std::size_t use = std::min<std::size_t>(train_entries.size(), 8);
  for (std::size_t i = 0; i < use; ++i) pixels.push_back(load_scene_pixels(*train_entries[i]));
  std::vector<const Image*> ptrs;
  for (const auto& img : pixels) ptrs.push_back(&img);
  pipe_cfg.proposal_threshold =
      calibrate_proposal_threshold(detector, ptrs, priors, pipe_cfg, plan, threads);
  return pipe_cfg;
}

int cmd_detect(const GlobalArgs& args) {
  const RunConfig cfg = load_run_config(args);
  const Dataset ds = load_dataset(resolve(args, cfg.path("dataset_dir")),
                                  resolve(args, cfg.path("manifest")));
  const PriorSet priors = read_priors_json(resolve(args, cfg.path("priors_file")));
  const ModelParams detector =
      load_checkpoint(resolve(args, cfg.path("detector_checkpoint")), priors);
  const CropPlanConfig plan = cfg.crop_plan();
  PipelineConfig pipe_cfg = resolve_threshold(cfg, ds, detector, priors, plan, args.threads);

  PostclassifierParams post;
  const PostclassifierParams* post_ptr = nullptr;
  if (pipe_cfg.postclassify) {
    post = load_postclassifier(resolve(args, cfg.path("postclassifier_checkpoint")));
    post_ptr = &post;
  }

  const SplitDetections dets =
      detect_split(ds, "test", detector, post_ptr, priors, pipe_cfg, plan, args.threads);
  write_detections_jsonl(dets.all, resolve(args, cfg.path("detections_file")));

  json cost;
  cost["proposal_threshold"] = pipe_cfg.proposal_threshold;
  long long evals = 0;
  json per_pano = json::object();
  for (const auto& [id, c] : dets.cost_by_pano) {
    per_pano[id] = {{"crops_evaluated", c.crops_evaluated},
                    {"proposals_postclassified", c.proposals_postclassified},
                    {"network_evals_total", c.network_evals_total},
                    {"relative_cost_vs_baseline", c.relative_cost_vs_baseline}};
    evals += c.network_evals_total;
  }
  cost["per_pano"] = per_pano;
  const int panos = std::max<std::size_t>(1, dets.cost_by_pano.size());
  cost["mean_evals_per_pano"] = static_cast<double>(evals) / panos;
  write_json_file(cost, resolve(args, cfg.path("cost_report")));

  if (cfg.raw.at("pipeline").at("write_overlays").get<bool>()) {
    for (const auto* e : ds.split("test")) {
      Image pano = load_scene_pixels(*e);
      for (const Box& g : e->gts) draw_box(pano, g, 40, 220, 40);
      for (const Detection& d : dets.by_pano.at(e->id)) draw_box(pano, d.box, 230, 30, 30);
      write_ppm(pano, resolve(args, e->id + ".overlay.ppm"));
    }
  }
  std::cout << "detected " << dets.all.size() << " boxes over " << dets.cost_by_pano.size()
            << " panoramas (threshold " << pipe_cfg.proposal_threshold << ")\n";
  return 0;
}

int cmd_eval(const GlobalArgs& args) {
  const RunConfig cfg = load_run_config(args);
  const Dataset ds = load_dataset(resolve(args, cfg.path("dataset_dir")),
                                  resolve(args, cfg.path("manifest")));
  const auto dets_list = read_detections_jsonl(resolve(args, cfg.path("detections_file")));

  SplitDetections dets;
  dets.all = dets_list;
  std::sort(dets.all.begin(), dets.all.end(), detection_score_order);
  for (const Detection& d : dets.all) dets.by_pano[d.pano_id].push_back(d);

  const auto gts = split_gts(ds, "test");
  const double iou = cfg.raw.at("eval").at("iou_threshold").get<double>();
  const SplitEvaluation ev = evaluate_split(dets, gts, iou);

  json report;
  report["average_precision"] = ev.average_precision;
  report["counts"] = {{"true_positives", ev.report.counts.true_positives},
                      {"false_positives", ev.report.counts.false_positives},
                      {"false_negatives", ev.report.counts.false_negatives},
                      {"images", ev.images},
                      {"ground_truths", ev.num_gts}};
  json budgets = json::object();
  for (int budget : cfg.raw.at("eval").at("budgets").get<std::vector<int>>()) {
    budgets[std::to_string(budget)] = recall_at_budget(dets.by_pano, gts, iou, budget);
  }
  report["recall_at_budget"] = budgets;

  const auto labels = label_split_detections(dets.all, gts, iou);
  std::vector<double> scores;
  for (const Detection& d : dets.all) scores.push_back(d.final_score);
  json bpi = json::object();
  for (double target : cfg.raw.at("eval").at("target_precisions").get<std::vector<double>>()) {
    try {
      const OperatingPoint op =
          boxes_per_image_at_precision(labels, scores, std::max(1, ev.images), target);
      bpi[std::to_string(target)] = {{"precision", op.precision},
                                     {"boxes_per_image", op.boxes_per_image},
                                     {"score_threshold", op.score_threshold}};
    } catch (const std::runtime_error&) {
      bpi[std::to_string(target)] = nullptr;  // unattainable
    }
  }
  report["boxes_per_image_at_precision"] = bpi;
  write_json_file(report, resolve(args, cfg.path("eval_report")));

  const std::string pr_path = cfg.path("pr_curve");
  if (!pr_path.empty()) {
    std::ofstream pr(resolve(args, pr_path));
    pr << "threshold,precision,recall\n";
    for (const auto& pt : ev.report.pr_points) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%.9f,%.9f,%.9f\n", pt.score_threshold, pt.precision,
                    pt.recall);
      pr << buf;
    }
  }
  char ap[32];
  std::snprintf(ap, sizeof(ap), "%.4f", ev.average_precision);
  std::cout << "AP@" << iou << " = " << ap << " over " << ev.images << " panoramas\n";
  return 0;
}

int cmd_geocluster(const GlobalArgs& args) {
  const RunConfig cfg = load_run_config(args);
  const Dataset ds = load_dataset(resolve(args, cfg.path("dataset_dir")),
                                  resolve(args, cfg.path("manifest")));
  const auto dets_list = read_detections_jsonl(resolve(args, cfg.path("detections_file")));
  const double facade_range = cfg.raw.at("geo").at("facade_range_meters").get<double>();
  const double epsilon = cfg.raw.at("geo").at("epsilon_meters").get<double>();

  std::map<std::string, const DatasetEntry*> by_id;
  for (const auto& e : ds.entries) by_id[e.id] = &e;

  std::vector<GeoDetection> located;
  for (const Detection& d : dets_list) {
    const auto it = by_id.find(d.pano_id);
    if (it == by_id.end()) throw std::runtime_error("detection references unknown pano " + d.pano_id);
    located.push_back(locate_detection(it->second->pose, d, facade_range));
  }
  const auto clusters = geo_cluster(located, epsilon);

  // Synthetic-truth confirmation stands in for the paper's human check: a
  // detection confirms when it lands within epsilon of a true business, and a
  // cluster claims the business nearest its centroid.
  std::vector<std::pair<double, double>> businesses;  // lat, lng
  for (const auto& e : ds.entries) {
    if (e.split != "test") continue;
    for (const auto& b : e.businesses) businesses.push_back({b.lat, b.lng});
  }
  int false_positives = 0;
  for (const auto& g : located) {
    double best = 1e18;
    for (const auto& [lat, lng] : businesses) {
      best = std::min(best, geo_distance_m(g.lat, g.lng, lat, lng));
    }
    if (best > epsilon) ++false_positives;
  }
  std::vector<bool> claimed(businesses.size(), false);
  for (const auto& c : clusters) {
    double best = 1e18;
    int best_b = -1;
    for (std::size_t b = 0; b < businesses.size(); ++b) {
      const double dist =
          geo_distance_m(c.centroid_lat, c.centroid_lng, businesses[b].first, businesses[b].second);
      if (dist <= epsilon && dist < best) {
        best = dist;
        best_b = static_cast<int>(b);
      }
    }
    if (best_b >= 0) claimed[best_b] = true;
  }
  const int unique_true = static_cast<int>(std::count(claimed.begin(), claimed.end(), true));

  json cj;
  cj["clusters"] = json::array();
  for (const auto& c : clusters) {
    json members = json::array();
    for (const auto& m : c.members) {
      members.push_back({{"lat", m.lat}, {"lng", m.lng}, {"bearing", m.bearing},
                         {"source_pano", m.source_pano}, {"score", m.score}});
    }
    cj["clusters"].push_back({{"centroid_lat", c.centroid_lat},
                              {"centroid_lng", c.centroid_lng},
                              {"score", c.score},
                              {"members", members}});
  }
  write_json_file(cj, resolve(args, cfg.path("clusters_file")));

  json report;
  report["detections"] = located.size();
  report["false_positives"] = false_positives;
  report["clusters"] = clusters.size();
  report["unique_businesses_found"] = unique_true;
  report["true_businesses"] = businesses.size();
  if (!located.empty() && !businesses.empty()) {
    const EndToEndReport r =
        end_to_end_report(static_cast<int>(located.size()), false_positives, unique_true,
                          static_cast<int>(businesses.size()));
    report["precision"] = r.precision;
    report["recall"] = r.recall;
  }
  write_json_file(report, resolve(args, cfg.path("end_to_end_report")));
  std::cout << "clustered " << located.size() << " detections into " << clusters.size()
            << " candidates (" << unique_true << "/" << businesses.size() << " businesses)\n";
  return 0;
}

int cmd_bench(const GlobalArgs& args) {
  const RunConfig cfg = load_run_config(args);
  const Dataset ds = load_dataset(resolve(args, cfg.path("dataset_dir")),
                                  resolve(args, cfg.path("manifest")));
  const PriorSet priors = read_priors_json(resolve(args, cfg.path("priors_file")));
  const ModelParams detector =
      load_checkpoint(resolve(args, cfg.path("detector_checkpoint")), priors);
  const CropPlanConfig full_plan = cfg.crop_plan();
  const auto gts = split_gts(ds, "test");
  const double iou = cfg.raw.at("eval").at("iou_threshold").get<double>();

  std::ofstream out(resolve(args, cfg.path("bench_file")));
  if (!out) throw std::runtime_error("cannot open bench output");
  out << "scales,crops,proposals,ap,evals_per_pano\n";
  std::cout << "scales crops proposals AP evals/pano\n";
  for (std::size_t nscales = 1; nscales <= full_plan.scales.size(); ++nscales) {
    CropPlanConfig plan = full_plan;
    plan.scales.assign(full_plan.scales.begin(), full_plan.scales.begin() + nscales);
    // The sweep measures the detector-side cost/quality tradeoff.
    PipelineConfig pipe_cfg = resolve_threshold(cfg, ds, detector, priors, plan, args.threads);
    pipe_cfg.postclassify = false;
    const SplitDetections dets =
        detect_split(ds, "test", detector, nullptr, priors, pipe_cfg, plan, args.threads);
    const SplitEvaluation ev = evaluate_split(dets, gts, iou);
    long long crops = 0, evals = 0, proposals = 0;
    for (const auto& [id, c] : dets.cost_by_pano) {
      crops += c.crops_evaluated;
      evals += c.network_evals_total;
    }
    proposals = static_cast<long long>(dets.all.size());
    const int panos = std::max<std::size_t>(1, dets.cost_by_pano.size());
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%lld,%.3f,%.6f,%.3f\n", nscales,
                  crops / panos, static_cast<double>(proposals) / panos, ev.average_precision,
                  static_cast<double>(evals) / panos);
    out << buf;
    std::snprintf(buf, sizeof(buf), "%zu %lld %.1f %.4f %.1f\n", nscales, crops / panos,
                  static_cast<double>(proposals) / panos, ev.average_precision,
                  static_cast<double>(evals) / panos);
    std::cout << buf;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Storefront detection pipeline"};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "JSON config file");
  app.add_option("--set", args.overrides, "Override a config key (key=value), repeatable");
  app.add_option("--threads", args.threads, "Worker threads (default: hardware concurrency)");
  app.add_option("--out", args.out_dir, "Output/workspace directory (default: out)");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  auto* priors = app.add_subcommand("make-priors", "Cluster training gt boxes into priors");
  auto* train = app.add_subcommand("train", "Train detector (and postclassifier)");
  auto* detect = app.add_subcommand("detect", "Run multi-crop detection on the test split");
  auto* eval = app.add_subcommand("eval", "Evaluate detections against ground truth");
  auto* geo = app.add_subcommand("geocluster", "Geo-cluster detections into businesses");
  auto* bench = app.add_subcommand("bench", "Sweep crop plans and report cost/AP");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (args.threads <= 0) args.threads = 1;
    if (gen->parsed()) return cmd_gen_data(args);
    if (priors->parsed()) return cmd_make_priors(args);
    if (train->parsed()) return cmd_train(args);
    if (detect->parsed()) return cmd_detect(args);
    if (eval->parsed()) return cmd_eval(args);
    if (geo->parsed()) return cmd_geocluster(args);
    if (bench->parsed()) return cmd_bench(args);
  } catch (const ConfigError& e) {
    std::cerr << json{{"error", {{"type", "config"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << json{{"error", {{"type", "validation"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"type", "runtime"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }
  return 0;
}
