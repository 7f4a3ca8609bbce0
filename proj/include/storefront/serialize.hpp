// File formats: JSON-lines boxes/detections, the priors JSON file, binary
// model checkpoints with a versioned header, and pose/manifest JSON.
#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "storefront/geo_discovery.hpp"
#include "storefront/geometry.hpp"
#include "storefront/priors.hpp"
#include "storefront/synth_data.hpp"
#include "storefront/toy_model.hpp"

namespace storefront {

using json = nlohmann::json;

namespace detail {

inline std::string fixed9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

}  // namespace detail

// One detection per line. Coordinates carry 9 decimal digits; post_score is
// omitted when absent.
inline std::string detection_to_jsonl(const Detection& d) {
  std::ostringstream out;
  out << "{\"pano_id\":" << json(d.pano_id).dump() << ",\"x_min\":" << detail::fixed9(d.box.x_min)
      << ",\"y_min\":" << detail::fixed9(d.box.y_min)
      << ",\"x_max\":" << detail::fixed9(d.box.x_max)
      << ",\"y_max\":" << detail::fixed9(d.box.y_max)
      << ",\"detector_score\":" << detail::fixed9(d.detector_score);
  if (d.has_post_score) out << ",\"post_score\":" << detail::fixed9(d.post_score);
  out << ",\"final_score\":" << detail::fixed9(d.final_score)
      << ",\"source_crop\":" << json(d.source_crop).dump() << "}";
  return out.str();
}

inline std::string box_to_jsonl(const Box& b, const std::string& pano_id) {
  std::ostringstream out;
  out << "{\"pano_id\":" << json(pano_id).dump() << ",\"x_min\":" << detail::fixed9(b.x_min)
      << ",\"y_min\":" << detail::fixed9(b.y_min) << ",\"x_max\":" << detail::fixed9(b.x_max)
      << ",\"y_max\":" << detail::fixed9(b.y_max) << "}";
  return out.str();
}

inline Detection detection_from_json(const json& j) {
  Detection d;
  d.pano_id = j.value("pano_id", std::string());
  d.box = Box{j.at("x_min").get<double>(), j.at("y_min").get<double>(),
              j.at("x_max").get<double>(), j.at("y_max").get<double>()};
  d.detector_score = j.value("detector_score", 0.0);
  if (j.contains("post_score") && !j["post_score"].is_null()) {
    d.has_post_score = true;
    d.post_score = j["post_score"].get<double>();
  }
  d.final_score = j.value("final_score", d.detector_score);
  d.source_crop = j.value("source_crop", std::string());
  return d;
}

inline void write_detections_jsonl(const std::vector<Detection>& dets, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const Detection& d : dets) out << detection_to_jsonl(d) << "\n";
}

inline std::vector<Detection> read_detections_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Detection> dets;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    dets.push_back(detection_from_json(json::parse(line)));
  }
  return dets;
}

inline void write_boxes_jsonl(const std::vector<Box>& boxes, const std::string& pano_id,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const Box& b : boxes) out << box_to_jsonl(b, pano_id) << "\n";
}

struct LabeledBox {
  Box box;
  std::string pano_id;
};

inline std::vector<LabeledBox> read_boxes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<LabeledBox> boxes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    boxes.push_back({Box{j.at("x_min").get<double>(), j.at("y_min").get<double>(),
                         j.at("x_max").get<double>(), j.at("y_max").get<double>()},
                     j.value("pano_id", std::string())});
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// PriorSet JSON: {n, seed, priors: [[x_min, y_min, x_max, y_max], ...]}.

inline void write_priors_json(const PriorSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "{\"n\":" << set.priors.size() << ",\"seed\":" << set.seed << ",\"provenance\":"
      << json(set.provenance).dump() << ",\"priors\":[";
  for (std::size_t i = 0; i < set.priors.size(); ++i) {
    const Box& p = set.priors[i];
    if (i) out << ",";
    out << "[" << detail::fixed9(p.x_min) << "," << detail::fixed9(p.y_min) << ","
        << detail::fixed9(p.x_max) << "," << detail::fixed9(p.y_max) << "]";
  }
  out << "]}\n";
}

inline PriorSet read_priors_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const json j = json::parse(in);
  PriorSet set;
  set.seed = j.value("seed", 0ULL);
  set.provenance = j.value("provenance", std::string());
  for (const auto& row : j.at("priors")) {
    set.priors.push_back(Box{row.at(0).get<double>(), row.at(1).get<double>(),
                             row.at(2).get<double>(), row.at(3).get<double>()});
  }
  if (j.contains("n") && j["n"].get<std::size_t>() != set.priors.size()) {
    throw std::runtime_error("priors file is inconsistent: n != priors length");
  }
  return set;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned header JSON line + little-endian float64 blocks.

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::ifstream& in, std::vector<double>& v, std::size_t count) {
  v.resize(count);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) {
    throw std::runtime_error("checkpoint truncated");
  }
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  json header{{"format_version", detail::kCheckpointVersion},
              {"kind", "detector"},
              {"prior_set_hash", p.prior_hash},
              {"input_grid", p.input_grid},
              {"hidden_units", p.hidden_units},
              {"num_priors", p.num_priors},
              {"seed", p.seed}};
  out << header.dump() << "\n";
  detail::write_doubles(out, p.w1);
  detail::write_doubles(out, p.b1);
  detail::write_doubles(out, p.w2);
  detail::write_doubles(out, p.b2);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

// Loads a detector checkpoint, refusing a prior-set mismatch.
inline ModelParams load_checkpoint(const std::string& path, const PriorSet& priors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header_line;
  std::getline(in, header_line);
  const json header = json::parse(header_line);
  if (header.at("format_version").get<std::uint32_t>() != detail::kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  if (header.value("kind", std::string()) != "detector") {
    throw std::runtime_error("not a detector checkpoint: " + path);
  }
  ModelParams p;
  p.prior_hash = header.at("prior_set_hash").get<std::uint64_t>();
  if (p.prior_hash != prior_set_hash(priors)) {
    throw std::runtime_error("checkpoint prior hash does not match the prior file");
  }
  p.input_grid = header.at("input_grid").get<int>();
  p.hidden_units = header.at("hidden_units").get<int>();
  p.num_priors = header.at("num_priors").get<int>();
  p.seed = header.at("seed").get<std::uint64_t>();
  if (p.num_priors != priors.size()) {
    throw std::runtime_error("checkpoint prior count does not match the prior file");
  }
  detail::read_doubles(in, p.w1, static_cast<std::size_t>(p.hidden_units) * p.input_dim());
  detail::read_doubles(in, p.b1, static_cast<std::size_t>(p.hidden_units));
  detail::read_doubles(in, p.w2, static_cast<std::size_t>(p.output_dim()) * p.hidden_units);
  detail::read_doubles(in, p.b2, static_cast<std::size_t>(p.output_dim()));
  return p;
}

inline void save_postclassifier(const PostclassifierParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  json header{{"format_version", detail::kCheckpointVersion},
              {"kind", "postclassifier"},
              {"input_grid", p.input_grid},
              {"hidden_units", p.hidden_units},
              {"seed", p.seed}};
  out << header.dump() << "\n";
  detail::write_doubles(out, p.w1);
  detail::write_doubles(out, p.b1);
  detail::write_doubles(out, p.w2);
  const std::vector<double> b2{p.b2};
  detail::write_doubles(out, b2);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline PostclassifierParams load_postclassifier(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header_line;
  std::getline(in, header_line);
  const json header = json::parse(header_line);
  if (header.at("format_version").get<std::uint32_t>() != detail::kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  if (header.value("kind", std::string()) != "postclassifier") {
    throw std::runtime_error("not a postclassifier checkpoint: " + path);
  }
  PostclassifierParams p;
  p.input_grid = header.at("input_grid").get<int>();
  p.hidden_units = header.at("hidden_units").get<int>();
  p.seed = header.at("seed").get<std::uint64_t>();
  detail::read_doubles(in, p.w1, static_cast<std::size_t>(p.hidden_units) * p.input_dim());
  detail::read_doubles(in, p.b1, static_cast<std::size_t>(p.hidden_units));
  detail::read_doubles(in, p.w2, static_cast<std::size_t>(p.hidden_units));
  std::vector<double> b2;
  detail::read_doubles(in, b2, 1);
  p.b2 = b2[0];
  return p;
}

// ---------------------------------------------------------------------------
// Pose JSON and dataset manifest.

inline void write_pose_json(const GeoPose& pose, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  json j{{"lat", pose.lat}, {"lng", pose.lng}, {"heading", pose.heading}};
  out << j.dump() << "\n";
}

inline GeoPose read_pose_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const json j = json::parse(in);
  return GeoPose{j.at("lat").get<double>(), j.at("lng").get<double>(),
                 j.at("heading").get<double>()};
}

}  // namespace storefront
