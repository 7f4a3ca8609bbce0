// End-to-end workflows shared by the CLI and the acceptance harness: dataset
// generation and loading, training-crop extraction, detector/postclassifier
// training with a divergence-guard backoff, detection over a dataset, and
// evaluation assembly.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "storefront/config.hpp"
#include "storefront/evaluation.hpp"
#include "storefront/geo_discovery.hpp"
#include "storefront/parallel.hpp"
#include "storefront/pipeline.hpp"
#include "storefront/serialize.hpp"
#include "storefront/synth_data.hpp"
#include "storefront/toy_model.hpp"

namespace storefront {

struct DatasetEntry {
  std::string id;
  SceneSpec spec;
  std::string split;  // "train" or "test"
  GeoPose pose;
  std::vector<Box> gts;  // panorama frame
  std::vector<GeoPose> businesses;
  std::string ppm_path;  // empty for in-memory datasets
};

struct Dataset {
  std::vector<DatasetEntry> entries;

  std::vector<const DatasetEntry*> split(const std::string& which) const {
    std::vector<const DatasetEntry*> out;
    for (const auto& e : entries) {
      if (e.split == which) out.push_back(&e);
    }
    return out;
  }
};

inline Image load_scene_pixels(const DatasetEntry& entry) {
  if (!entry.ppm_path.empty()) return read_ppm(entry.ppm_path);
  return gen_scene(entry.spec).panorama;
}

// Builds the scene specs, renders ground truth, and assigns the
// location-aware split. Pixels are not kept; they re-render on demand.
inline Dataset build_dataset(const RunConfig& cfg, int threads = 1) {
  const auto& synth = cfg.raw.at("synth");
  const int num_scenes = synth.at("num_scenes").get<int>();
  const double test_fraction = synth.at("test_fraction").get<double>();
  const double keep_fraction = synth.at("keep_label_fraction").get<double>();
  const std::uint64_t seed = synth.at("seed").get<std::uint64_t>();
  const SceneSamplerConfig sampler = cfg.scene_sampler();

  Dataset ds;
  ds.entries.resize(num_scenes);
  parallel_for(num_scenes, threads, [&](std::size_t i) {
    DatasetEntry e;
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%04zu", i);
    e.id = id;
    e.spec = make_random_scene(Rng::derive_seed(seed, i), sampler, static_cast<int>(i));
    const Scene scene = gen_scene(e.spec);
    e.pose = scene.pose;
    e.gts = scene.gt_boxes;
    if (keep_fraction < 1.0) {
      e.gts = degrade_labels(e.gts, keep_fraction, Rng::derive_seed(seed, 0xde6 + i));
    }
    e.businesses = business_geo_positions(e.spec);
    ds.entries[i] = std::move(e);
  });

  std::vector<GeoPose> poses;
  for (const auto& e : ds.entries) poses.push_back(e.pose);
  std::vector<std::size_t> train, test;
  split_location_aware(poses, test_fraction, Rng::derive_seed(seed, 0x5197), &train, &test);
  for (std::size_t i : train) ds.entries[i].split = "train";
  for (std::size_t i : test) ds.entries[i].split = "test";
  return ds;
}

inline void write_dataset(Dataset& ds, const std::string& dataset_dir,
                          const std::string& manifest_path, int threads = 1) {
  std::filesystem::create_directories(dataset_dir);
  parallel_for(ds.entries.size(), threads, [&](std::size_t i) {
    DatasetEntry& e = ds.entries[i];
    const Scene scene = gen_scene(e.spec);
    const std::string base = dataset_dir + "/" + e.id;
    write_ppm(scene.panorama, base + ".ppm");
    write_boxes_jsonl(e.gts, e.id, base + ".gt.jsonl");
    write_pose_json(e.pose, base + ".pose.json");
    e.ppm_path = base + ".ppm";
  });

  nlohmann::json manifest;
  manifest["scenes"] = nlohmann::json::array();
  for (const auto& e : ds.entries) {
    nlohmann::json businesses = nlohmann::json::array();
    for (const auto& b : e.businesses) {
      businesses.push_back({{"lat", b.lat}, {"lng", b.lng}});
    }
    manifest["scenes"].push_back({{"id", e.id},
                                  {"seed", e.spec.seed},
                                  {"split", e.split},
                                  {"businesses", businesses}});
  }
  std::ofstream out(manifest_path);
  if (!out) throw std::runtime_error("cannot open " + manifest_path);
  out << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dataset_dir, const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open " + manifest_path);
  const nlohmann::json manifest = nlohmann::json::parse(in);
  Dataset ds;
  for (const auto& s : manifest.at("scenes")) {
    DatasetEntry e;
    e.id = s.at("id").get<std::string>();
    e.split = s.at("split").get<std::string>();
    const std::string base = dataset_dir + "/" + e.id;
    e.ppm_path = base + ".ppm";
    e.pose = read_pose_json(base + ".pose.json");
    for (const auto& lb : read_boxes_jsonl(base + ".gt.jsonl")) e.gts.push_back(lb.box);
    if (s.contains("businesses")) {
      for (const auto& b : s.at("businesses")) {
        e.businesses.push_back(GeoPose{b.at("lat").get<double>(), b.at("lng").get<double>(), 0.0});
      }
    }
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Training-crop extraction.

// Ground truth visible in a crop, clamped to the crop frame. A box counts as
// visible when at least min_visible_fraction of its area lies inside.
inline std::vector<Box> gts_in_crop(const std::vector<Box>& pano_gts, const CropSpec& crop,
                                    double min_visible_fraction = 0.25) {
  std::vector<Box> out;
  for (const Box& g : pano_gts) {
    Box local;
    try {
      local = pano_to_crop(g, crop);
    } catch (const std::invalid_argument&) {
      continue;
    }
    Box clamped = local;
    if (!clamp_to_frame(clamped)) continue;
    if (box_area(clamped) < min_visible_fraction * box_area(local)) continue;
    out.push_back(clamped);
  }
  return out;
}

// Featurized (crop, gts) training examples from the planned crops of the
// train split. Crops containing ground truth all stay; empty crops are
// subsampled to roughly a quarter of the kept set. A per-scene cap keeps the
// dataset bounded.
inline std::vector<TrainExample> build_train_examples(const Dataset& ds,
                                                      const CropPlanConfig& plan_cfg,
                                                      int input_grid, int max_crops_per_scene,
                                                      std::uint64_t seed, int threads = 1) {
  const auto train_entries = ds.split("train");
  std::vector<std::vector<TrainExample>> per_scene(train_entries.size());
  parallel_for(train_entries.size(), threads, [&](std::size_t si) {
    const DatasetEntry& entry = *train_entries[si];
    const Image pano = load_scene_pixels(entry);
    const auto crops = plan_crops(pano.width, pano.height, plan_cfg, entry.id);
    Rng rng(Rng::derive_seed(seed, 0xc209 + si));

    std::vector<TrainExample> with_gt, empty;
    for (const CropSpec& crop : crops) {
      TrainExample ex;
      ex.gts = gts_in_crop(entry.gts, crop);
      auto& bucket = ex.gts.empty() ? empty : with_gt;
      ex.features = gray_grid(extract_crop(pano, crop), input_grid);
      bucket.push_back(std::move(ex));
    }
    rng.shuffle(with_gt);
    rng.shuffle(empty);
    std::vector<TrainExample> keep;
    for (auto& ex : with_gt) {
      if (static_cast<int>(keep.size()) >= max_crops_per_scene) break;
      keep.push_back(std::move(ex));
    }
    const std::size_t empty_quota =
        std::min<std::size_t>(empty.size(), std::max<std::size_t>(1, keep.size() / 4));
    for (std::size_t k = 0; k < empty_quota && static_cast<int>(keep.size()) < max_crops_per_scene;
         ++k) {
      keep.push_back(std::move(empty[k]));
    }
    per_scene[si] = std::move(keep);
  });
  std::vector<TrainExample> dataset;
  for (auto& v : per_scene) {
    for (auto& ex : v) dataset.push_back(std::move(ex));
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// Training with the divergence-guard backoff.

struct DetectorTraining {
  ModelParams params;
  std::vector<double> loss_trace;
  double learning_rate_used = 0.0;
};

// Runs sgd_train, halving the learning rate after each divergence abort.
inline DetectorTraining train_detector_with_backoff(const ModelParams& init,
                                                    const std::vector<TrainExample>& dataset,
                                                    const PriorSet& priors, TrainConfig cfg,
                                                    const LossConfig& loss_cfg,
                                                    int backoff_attempts) {
  for (int attempt = 0;; ++attempt) {
    try {
      TrainResult r = sgd_train(init, dataset, priors, cfg, loss_cfg);
      return {std::move(r.params), std::move(r.loss_trace), cfg.learning_rate};
    } catch (const TrainingDiverged&) {
      if (attempt >= backoff_attempts) throw;
      cfg.learning_rate *= 0.5;
    }
  }
}

// Expanded-box patch features for the postclassifier (16.6% default growth).
inline std::vector<double> postclassifier_features(const Image& pano, const Box& pano_box,
                                                   double expansion, int input_grid) {
  const Box expanded = expand_box(pano_box, expansion, /*wrap_x=*/true);
  CropSpec patch_spec;
  patch_spec.x_offset = expanded.x_min;
  patch_spec.y_offset = expanded.y_min;
  patch_spec.width = std::max(1e-6, expanded.x_max - expanded.x_min);
  patch_spec.height = std::max(1e-6, expanded.y_max - expanded.y_min);
  return gray_grid(extract_crop(pano, patch_spec), input_grid);
}

// Builds the postclassifier training pool: positives from ground truth,
// negatives from low-threshold detector proposals that miss every gt at 0.5
// Jaccard.
inline void build_postclassifier_pool(const Dataset& ds, const ModelParams& detector,
                                      const PriorSet& priors, const PipelineConfig& pipe_cfg,
                                      const CropPlanConfig& plan_cfg, double low_threshold,
                                      double expansion, std::vector<LabeledPatch>* positives,
                                      std::vector<LabeledPatch>* negatives, int threads = 1) {
  const auto train_entries = ds.split("train");
  std::vector<std::vector<LabeledPatch>> pos(train_entries.size()), neg(train_entries.size());
  parallel_for(train_entries.size(), threads, [&](std::size_t si) {
    const DatasetEntry& entry = *train_entries[si];
    const Image pano = load_scene_pixels(entry);
    for (const Box& g : entry.gts) {
      LabeledPatch p;
      p.positive = true;
      p.features = postclassifier_features(pano, g, expansion, detector.input_grid);
      pos[si].push_back(std::move(p));
    }
    PipelineConfig low = pipe_cfg;
    low.proposal_threshold = low_threshold;
    low.postclassify = false;
    const auto result =
        detect_panorama(detector, nullptr, pano, entry.id, priors, low, plan_cfg, 1);
    for (const Detection& d : result.detections) {
      double best = 0.0;
      for (const Box& g : entry.gts) best = std::max(best, jaccard_wrapped(d.box, g));
      if (best >= 0.5) continue;
      LabeledPatch p;
      p.positive = false;
      p.features = postclassifier_features(pano, d.box, expansion, detector.input_grid);
      neg[si].push_back(std::move(p));
    }
  });
  for (auto& v : pos) {
    for (auto& p : v) positives->push_back(std::move(p));
  }
  for (auto& v : neg) {
    for (auto& p : v) negatives->push_back(std::move(p));
  }
}

// ---------------------------------------------------------------------------
// Detection + evaluation over a dataset split.

struct SplitDetections {
  std::vector<Detection> all;                       // sorted by descending score
  std::map<std::string, std::vector<Detection>> by_pano;
  std::map<std::string, CostReport> cost_by_pano;
};

inline SplitDetections detect_split(const Dataset& ds, const std::string& split,
                                    const ModelParams& detector,
                                    const PostclassifierParams* postclassifier,
                                    const PriorSet& priors, const PipelineConfig& pipe_cfg,
                                    const CropPlanConfig& plan_cfg, int threads = 1) {
  const auto entries = ds.split(split);
  std::vector<PanoramaDetections> results(entries.size());
  // Panorama-level parallelism: each worker renders and runs one scene.
  parallel_for(entries.size(), threads, [&](std::size_t i) {
    const Image pano = load_scene_pixels(*entries[i]);
    results[i] =
        detect_panorama(detector, postclassifier, pano, entries[i]->id, priors, pipe_cfg,
                        plan_cfg, 1);
  });
  SplitDetections out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out.by_pano[entries[i]->id] = results[i].detections;
    out.cost_by_pano[entries[i]->id] = results[i].cost;
    for (const Detection& d : results[i].detections) out.all.push_back(d);
  }
  std::sort(out.all.begin(), out.all.end(), detection_score_order);
  return out;
}

// Global TP/FP labeling across panoramas: per-image greedy claims, flattened
// in global descending score order.
inline std::vector<bool> label_split_detections(const std::vector<Detection>& sorted_all,
                                                const std::map<std::string, std::vector<Box>>& gts,
                                                double iou_threshold) {
  std::map<std::string, std::vector<bool>> claimed;
  for (const auto& [id, boxes] : gts) claimed[id].assign(boxes.size(), false);
  std::vector<bool> labels(sorted_all.size(), false);
  for (std::size_t i = 0; i < sorted_all.size(); ++i) {
    const Detection& d = sorted_all[i];
    const auto it = gts.find(d.pano_id);
    if (it == gts.end()) continue;
    auto& used = claimed[d.pano_id];
    double best = 0.0;
    int best_j = -1;
    for (std::size_t j = 0; j < it->second.size(); ++j) {
      if (used[j]) continue;
      const double ov = jaccard_wrapped(d.box, it->second[j]);
      if (ov >= iou_threshold && ov > best) {
        best = ov;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) {
      used[best_j] = true;
      labels[i] = true;
    }
  }
  return labels;
}

struct SplitEvaluation {
  double average_precision = 0.0;
  EvalReport report;
  int num_gts = 0;
  int images = 0;
};

inline SplitEvaluation evaluate_split(const SplitDetections& dets,
                                      const std::map<std::string, std::vector<Box>>& gts,
                                      double iou_threshold) {
  SplitEvaluation ev;
  for (const auto& [id, boxes] : gts) {
    ev.num_gts += static_cast<int>(boxes.size());
    ++ev.images;
  }
  const auto labels = label_split_detections(dets.all, gts, iou_threshold);
  ev.report = evaluate_detections(dets.all, labels, ev.num_gts, std::max(1, ev.images));
  ev.average_precision = ev.report.average_precision;
  return ev;
}

inline std::map<std::string, std::vector<Box>> split_gts(const Dataset& ds,
                                                         const std::string& split) {
  std::map<std::string, std::vector<Box>> out;
  for (const auto* e : ds.split(split)) out[e->id] = e->gts;
  return out;
}

}  // namespace storefront
