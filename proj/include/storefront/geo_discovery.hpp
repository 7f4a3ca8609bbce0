// Geo-located business discovery: project detections to map positions,
// deduplicate them with single-linkage geo-clustering, and compute the
// end-to-end precision/recall arithmetic.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "storefront/geometry.hpp"
#include "storefront/synth_data.hpp"

namespace storefront {

struct GeoDetection {
  double lat = 0.0;
  double lng = 0.0;
  double bearing = 0.0;  // degrees, [0, 360)
  std::string source_pano;
  double score = 0.0;
};

struct BusinessCluster {
  std::vector<GeoDetection> members;
  double centroid_lat = 0.0;
  double centroid_lng = 0.0;
  double score = 0.0;  // max member score
};

// Haversine great-circle distance in meters, on the same reference sphere the
// flat-earth displacement uses.
inline double geo_distance_m(double lat1, double lng1, double lat2, double lng2) {
  constexpr double kEarthRadiusM = detail::kEarthRadiusM;
  const double p1 = detail::deg2rad(lat1);
  const double p2 = detail::deg2rad(lat2);
  const double dp = detail::deg2rad(lat2 - lat1);
  const double dl = detail::deg2rad(lng2 - lng1);
  const double a = std::sin(dp / 2) * std::sin(dp / 2) +
                   std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusM * std::atan2(std::sqrt(a), std::sqrt(1.0 - a));
}

// Flat-earth displacement of a point by range meters along a compass bearing.
inline void geo_advance(double lat, double lng, double bearing_deg, double range_m,
                        double* out_lat, double* out_lng) {
  const double b = detail::deg2rad(bearing_deg);
  *out_lat = lat + range_m * std::cos(b) / detail::kMetersPerDegree;
  *out_lng = lng + range_m * std::sin(b) /
                       (detail::kMetersPerDegree * std::cos(detail::deg2rad(lat)));
}

// Projects a panorama-frame detection to a map position: the bearing follows
// the box center across the 360 degree panorama, and the position advances a
// fixed facade range along that bearing from the camera.
inline GeoDetection locate_detection(const GeoPose& pose, const Detection& det,
                                     double facade_range_m = 10.0) {
  double cx = box_center_x(det.box);
  cx = cx - std::floor(cx);  // seam straddlers have centers past 1
  GeoDetection g;
  g.bearing = detail::wrap_degrees(pose.heading + 360.0 * (cx - 0.5));
  geo_advance(pose.lat, pose.lng, g.bearing, facade_range_m, &g.lat, &g.lng);
  g.source_pano = det.pano_id;
  g.score = det.final_score;
  return g;
}

// Single-linkage clustering: connected components of the epsilon-neighborhood
// graph via union-find. Output order is canonical (clusters by centroid, then
// members by position/score), so it is invariant to input order.
inline std::vector<BusinessCluster> geo_cluster(const std::vector<GeoDetection>& points,
                                                double epsilon_meters) {
  if (epsilon_meters <= 0.0) throw std::invalid_argument("geo_cluster: epsilon must be positive");
  const std::size_t n = points.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (geo_distance_m(points[i].lat, points[i].lng, points[j].lat, points[j].lng) <=
          epsilon_meters) {
        parent[find(i)] = find(j);
      }
    }
  }
  std::vector<std::vector<std::size_t>> groups(n);
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);

  std::vector<BusinessCluster> clusters;
  for (const auto& members : groups) {
    if (members.empty()) continue;
    BusinessCluster c;
    for (std::size_t idx : members) {
      c.members.push_back(points[idx]);
      c.centroid_lat += points[idx].lat;
      c.centroid_lng += points[idx].lng;
      c.score = std::max(c.score, points[idx].score);
    }
    c.centroid_lat /= static_cast<double>(members.size());
    c.centroid_lng /= static_cast<double>(members.size());
    std::sort(c.members.begin(), c.members.end(), [](const GeoDetection& a, const GeoDetection& b) {
      if (a.lat != b.lat) return a.lat < b.lat;
      if (a.lng != b.lng) return a.lng < b.lng;
      return a.score > b.score;
    });
    clusters.push_back(std::move(c));
  }
  std::sort(clusters.begin(), clusters.end(), [](const BusinessCluster& a, const BusinessCluster& b) {
    if (a.centroid_lat != b.centroid_lat) return a.centroid_lat < b.centroid_lat;
    if (a.centroid_lng != b.centroid_lng) return a.centroid_lng < b.centroid_lng;
    return a.score > b.score;
  });
  return clusters;
}

struct EndToEndReport {
  double precision = 0.0;
  double recall = 0.0;
};

// The discovery arithmetic: precision over confirmed detections, recall of
// unique clusters against the true business count.
inline EndToEndReport end_to_end_report(int detections_confirmed, int false_positives,
                                        int unique_clusters, int true_businesses) {
  if (detections_confirmed < 0 || false_positives < 0 || unique_clusters < 0 ||
      true_businesses < 0) {
    throw std::invalid_argument("end_to_end_report: counts must be non-negative");
  }
  if (false_positives > detections_confirmed) {
    throw std::invalid_argument("end_to_end_report: false positives exceed detections");
  }
  if (detections_confirmed == 0 || true_businesses == 0) {
    throw std::invalid_argument("end_to_end_report: zero denominator");
  }
  EndToEndReport r;
  r.precision = static_cast<double>(detections_confirmed - false_positives) /
                static_cast<double>(detections_confirmed);
  r.recall = static_cast<double>(unique_clusters) / static_cast<double>(true_businesses);
  return r;
}

}  // namespace storefront
