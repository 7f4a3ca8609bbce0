// Run configuration: one JSON document covering every command, validated
// strictly (unknown keys rejected, all seeds explicit) with dotted-path
// overrides for the CLI's --set flag.
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "storefront/geometry.hpp"
#include "storefront/multibox_loss.hpp"
#include "storefront/pipeline.hpp"
#include "storefront/synth_data.hpp"
#include "storefront/toy_model.hpp"

namespace storefront {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline const nlohmann::json& default_config() {
  static const nlohmann::json defaults = nlohmann::json::parse(R"JSON({
    "seed": 17,
    "paths": {
      "dataset_dir": "scenes",
      "manifest": "manifest.json",
      "priors_file": "priors.json",
      "detector_checkpoint": "detector.ckpt",
      "postclassifier_checkpoint": "postclassifier.ckpt",
      "loss_trace": "loss_trace.csv",
      "detections_file": "detections.jsonl",
      "cost_report": "cost_report.json",
      "eval_report": "eval_report.json",
      "pr_curve": "",
      "clusters_file": "clusters.json",
      "end_to_end_report": "end_to_end.json",
      "bench_file": "bench.csv"
    },
    "synth": {
      "num_scenes": 20,
      "test_fraction": 0.25,
      "pano_width_px": 1664,
      "pano_height_px": 832,
      "noise_amplitude": 0.02,
      "strip_half_length_m": 20.0,
      "min_width_m": 5.0,
      "max_width_m": 10.0,
      "min_height_m": 3.5,
      "max_height_m": 6.5,
      "facade_distance_m": 10.0,
      "base_lat": -23.55,
      "base_lng": -46.63,
      "keep_label_fraction": 1.0,
      "seed": 905
    },
    "priors": {"n": 64, "seed": 5, "iters": 40},
    "crop_plan": {
      "scales": [1.0, 0.40, 0.19],
      "min_overlap": 0.2,
      "band_top": 0.225,
      "band_bottom": 0.875
    },
    "loss": {"alpha": 0.3, "confidence_clamp": 1e-7},
    "model": {"input_grid": 32, "hidden_units": 256},
    "train": {
      "learning_rate": 0.2,
      "steps": 3000,
      "batch_size": 8,
      "seed": 123,
      "input_downsample_factor": 8,
      "cache_matchings": false,
      "max_crops_per_scene": 40,
      "lr_backoff_attempts": 4
    },
    "postclassifier": {
      "learning_rate": 0.1,
      "steps": 1500,
      "batch_size": 16,
      "seed": 321,
      "neg_per_pos": 7,
      "low_threshold": 0.05
    },
    "pipeline": {
      "proposal_threshold": "auto",
      "nms_threshold": 0.2,
      "target_proposals_per_pano": 37,
      "expansion_fraction": 0.166,
      "postclassify": true,
      "edge_margin": 0.1,
      "baseline_proposals_per_pano": 4666,
      "write_overlays": false
    },
    "eval": {
      "iou_threshold": 0.5,
      "budgets": [1, 5, 10, 20, 37],
      "target_precisions": []
    },
    "geo": {"epsilon_meters": 5.0, "facade_range_meters": 10.0}
  })JSON");
  return defaults;
}

namespace detail {

// proposal_threshold accepts either a number or the string "auto".
inline bool type_exempt(const std::string& path) {
  return path == "pipeline.proposal_threshold";
}

inline void validate_against_defaults(const nlohmann::json& user, const nlohmann::json& defaults,
                                      const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) {
      throw ConfigError("unknown config key: " + path);
    }
    const nlohmann::json& dv = defaults[it.key()];
    const nlohmann::json& uv = it.value();
    if (dv.is_object()) {
      if (!uv.is_object()) throw ConfigError("config key must be an object: " + path);
      validate_against_defaults(uv, dv, path);
    } else if (!type_exempt(path)) {
      const bool both_numeric = dv.is_number() && uv.is_number();
      if (!both_numeric && dv.type() != uv.type() &&
          !(dv.is_array() && uv.is_array())) {
        throw ConfigError("config key has wrong type: " + path);
      }
    }
  }
}

inline void merge_into(nlohmann::json& base, const nlohmann::json& user) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

}  // namespace detail

// Parses and merges a user config over the defaults, rejecting unknown keys.
inline nlohmann::json load_config_json(const std::string& path) {
  nlohmann::json merged = default_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json user;
    try {
      user = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
      throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    detail::validate_against_defaults(user, default_config(), "");
    detail::merge_into(merged, user);
  }
  return merged;
}

// Applies one `--set key=value` override; value parses as a JSON literal when
// possible, else as a string.
inline void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set expects key=value, got: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (...) {
    parsed = value;
  }

  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("--set has empty key");

  const nlohmann::json* defaults = &default_config();
  nlohmann::json* node = &config;
  std::string path;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    path = path.empty() ? parts[i] : path + "." + parts[i];
    if (!defaults->contains(parts[i])) throw ConfigError("unknown config key: " + path);
    if (i + 1 == parts.size()) {
      if ((*defaults)[parts[i]].is_object()) {
        throw ConfigError("--set cannot replace an object section: " + path);
      }
      (*node)[parts[i]] = parsed;
    } else {
      defaults = &(*defaults)[parts[i]];
      node = &(*node)[parts[i]];
    }
  }
}

// Typed view over the merged JSON.
struct RunConfig {
  nlohmann::json raw;

  std::uint64_t seed() const { return raw.at("seed").get<std::uint64_t>(); }

  CropPlanConfig crop_plan() const {
    CropPlanConfig c;
    const auto& j = raw.at("crop_plan");
    c.scales = j.at("scales").get<std::vector<double>>();
    c.min_overlap = j.at("min_overlap").get<double>();
    c.band_top = j.at("band_top").get<double>();
    c.band_bottom = j.at("band_bottom").get<double>();
    return c;
  }

  LossConfig loss() const {
    LossConfig c;
    c.alpha = raw.at("loss").at("alpha").get<double>();
    c.confidence_clamp = raw.at("loss").at("confidence_clamp").get<double>();
    return c;
  }

  ModelConfig model() const {
    ModelConfig c;
    c.input_grid = raw.at("model").at("input_grid").get<int>();
    c.hidden_units = raw.at("model").at("hidden_units").get<int>();
    return c;
  }

  TrainConfig train() const {
    TrainConfig c;
    const auto& j = raw.at("train");
    c.learning_rate = j.at("learning_rate").get<double>();
    c.steps = j.at("steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.input_downsample_factor = j.at("input_downsample_factor").get<int>();
    c.cache_matchings = j.at("cache_matchings").get<bool>();
    return c;
  }

  TrainConfig postclassifier_train() const {
    TrainConfig c;
    const auto& j = raw.at("postclassifier");
    c.learning_rate = j.at("learning_rate").get<double>();
    c.steps = j.at("steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }

  PipelineConfig pipeline() const {
    PipelineConfig c;
    const auto& j = raw.at("pipeline");
    if (j.at("proposal_threshold").is_number()) {
      c.proposal_threshold = j.at("proposal_threshold").get<double>();
    }
    c.nms_threshold = j.at("nms_threshold").get<double>();
    c.target_proposals_per_pano = j.at("target_proposals_per_pano").get<int>();
    c.expansion_fraction = j.at("expansion_fraction").get<double>();
    c.postclassify = j.at("postclassify").get<bool>();
    c.edge_margin = j.at("edge_margin").get<double>();
    c.baseline_proposals_per_pano = j.at("baseline_proposals_per_pano").get<int>();
    return c;
  }

  bool auto_threshold() const {
    const auto& t = raw.at("pipeline").at("proposal_threshold");
    return t.is_string() && t.get<std::string>() == "auto";
  }

  SceneSamplerConfig scene_sampler() const {
    SceneSamplerConfig c;
    const auto& j = raw.at("synth");
    c.pano_width_px = j.at("pano_width_px").get<int>();
    c.pano_height_px = j.at("pano_height_px").get<int>();
    c.noise_amplitude = j.at("noise_amplitude").get<double>();
    c.strip_half_length_m = j.at("strip_half_length_m").get<double>();
    c.min_width_m = j.at("min_width_m").get<double>();
    c.max_width_m = j.at("max_width_m").get<double>();
    c.min_height_m = j.at("min_height_m").get<double>();
    c.max_height_m = j.at("max_height_m").get<double>();
    c.facade_distance_m = j.at("facade_distance_m").get<double>();
    c.base_lat = j.at("base_lat").get<double>();
    c.base_lng = j.at("base_lng").get<double>();
    return c;
  }

  std::string path(const std::string& key) const {
    return raw.at("paths").at(key).get<std::string>();
  }
};

inline RunConfig make_run_config(const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
  RunConfig cfg;
  cfg.raw = load_config_json(config_path);
  for (const std::string& o : overrides) apply_override(cfg.raw, o);
  return cfg;
}

}  // namespace storefront
