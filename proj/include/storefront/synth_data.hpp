// Synthetic equirectangular street scenes: a flat facade of abutting
// storefront rectangles viewed through a spherical panorama projection, with
// exact projected ground-truth boxes, geo poses for end-to-end evaluation,
// and annotation-incompleteness simulation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "storefront/geometry.hpp"
#include "storefront/image.hpp"
#include "storefront/rng.hpp"

namespace storefront {

struct GeoPose {
  double lat = 0.0;      // degrees, [-90, 90]
  double lng = 0.0;      // degrees, [-180, 180)
  double heading = 0.0;  // degrees, [0, 360)
};

struct BusinessSpec {
  double position_m = 0.0;  // facade start along the street axis
  double width_m = 6.0;
  double height_m = 4.0;
  int style_id = 0;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int pano_width_px = 1664;  // paper resolution / 8
  int pano_height_px = 832;
  std::vector<BusinessSpec> businesses;
  GeoPose camera;
  double camera_street_offset_m = 0.0;  // camera position along the street axis
  double street_bearing_deg = 0.0;      // compass bearing of the street axis
  double facade_distance_m = 10.0;      // perpendicular camera-to-facade distance
  double noise_amplitude = 0.02;        // additive pixel noise, [0, 1] scale
};

namespace detail {

constexpr double kPi = 3.14159265358979323846;
constexpr double kCameraHeightM = 2.5;
constexpr double kWallTopM = 9.0;
constexpr double kEarthRadiusM = 6371000.0;
// One degree of latitude on the reference sphere.
constexpr double kMetersPerDegree = kPi * kEarthRadiusM / 180.0;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

inline double wrap_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d < 0.0) d += 360.0;
  return d;
}

// Signed wrap to [-180, 180).
inline double wrap_degrees_signed(double d) {
  d = std::fmod(d + 180.0, 360.0);
  if (d < 0.0) d += 360.0;
  return d - 180.0;
}

inline double wrap_unit(double x) {
  x = std::fmod(x, 1.0);
  if (x < 0.0) x += 1.0;
  return x;
}

struct StyleColor {
  std::uint8_t r, g, b;
};

// Storefront base palette; entries are chosen by style id. Luminance spread
// keeps neighbors separable after gray conversion.
inline StyleColor style_base(int style_id) {
  static const StyleColor palette[] = {
      {52, 42, 48},    {150, 50, 40},  {60, 90, 150},  {180, 120, 40},
      {40, 100, 90},   {120, 60, 130}, {200, 170, 60}, {70, 130, 60},
      {160, 160, 170}, {90, 60, 30},   {30, 60, 110},  {210, 120, 120},
  };
  const int k = static_cast<int>(sizeof(palette) / sizeof(palette[0]));
  int idx = style_id % k;
  if (idx < 0) idx += k;
  return palette[idx];
}

inline double style_luminance(int style_id) {
  const StyleColor c = style_base(style_id);
  return (c.r + c.g + c.b) / (3.0 * 255.0);
}

}  // namespace detail

// True geo location of each business facade center (on the facade line).
inline std::vector<GeoPose> business_geo_positions(const SceneSpec& spec) {
  std::vector<GeoPose> out;
  const double street_rad = detail::deg2rad(spec.street_bearing_deg);
  const double normal_rad = detail::deg2rad(spec.street_bearing_deg - 90.0);
  for (const BusinessSpec& b : spec.businesses) {
    const double along = b.position_m + 0.5 * b.width_m - spec.camera_street_offset_m;
    const double north = along * std::cos(street_rad) + spec.facade_distance_m * std::cos(normal_rad);
    const double east = along * std::sin(street_rad) + spec.facade_distance_m * std::sin(normal_rad);
    GeoPose g;
    g.lat = spec.camera.lat + north / detail::kMetersPerDegree;
    g.lng = spec.camera.lng +
            east / (detail::kMetersPerDegree * std::cos(detail::deg2rad(spec.camera.lat)));
    g.heading = 0.0;
    out.push_back(g);
  }
  return out;
}

struct Scene {
  Image panorama;
  std::vector<Box> gt_boxes;  // panorama frame, same order as spec.businesses entries kept
  GeoPose pose;
};

// Renders the scene. Pure in the spec: identical specs produce bit-identical
// pixels and ground truth.
inline Scene gen_scene(const SceneSpec& spec) {
  using namespace detail;
  if (spec.pano_width_px <= 0 || spec.pano_height_px <= 0) {
    throw std::invalid_argument("gen_scene: panorama dimensions must be positive");
  }
  if (spec.facade_distance_m <= 0.0) {
    throw std::invalid_argument("gen_scene: facade distance must be positive");
  }
  for (const BusinessSpec& b : spec.businesses) {
    if (b.width_m <= 0.0 || b.height_m <= 0.0) {
      throw std::invalid_argument("gen_scene: business dimensions must be positive");
    }
  }

  const int W = spec.pano_width_px;
  const int H = spec.pano_height_px;
  const double d = spec.facade_distance_m;
  const double normal_bearing = spec.street_bearing_deg - 90.0;
  const double s_cam = spec.camera_street_offset_m;

  double strip_lo = 0.0, strip_hi = 0.0;
  if (!spec.businesses.empty()) {
    strip_lo = spec.businesses.front().position_m;
    strip_hi = spec.businesses.front().position_m;
    for (const BusinessSpec& b : spec.businesses) {
      strip_lo = std::min(strip_lo, b.position_m);
      strip_hi = std::max(strip_hi, b.position_m + b.width_m);
    }
  }

  Scene scene;
  scene.pose = spec.camera;
  scene.panorama.width = W;
  scene.panorama.height = H;
  scene.panorama.pixels.resize(static_cast<std::size_t>(W) * H * 3);

  // Per-column facade geometry (bearing depends only on x).
  std::vector<double> col_t(W, -1.0);  // horizontal range to facade, <0 if none
  std::vector<double> col_s(W, 0.0);   // street coordinate of the facade hit
  for (int x = 0; x < W; ++x) {
    const double bearing = spec.camera.heading + ((x + 0.5) / W - 0.5) * 360.0;
    const double psi = deg2rad(wrap_degrees_signed(bearing - normal_bearing));
    if (std::cos(psi) > 1e-6) {
      col_t[x] = d / std::cos(psi);
      col_s[x] = s_cam + d * std::tan(psi);
    }
  }
  std::vector<double> row_tan(H);
  for (int y = 0; y < H; ++y) {
    const double elev = (0.5 - (y + 0.5) / H) * 180.0;
    row_tan[y] = std::tan(deg2rad(elev));
  }

  Rng noise(spec.seed);
  auto put = [&](int x, int y, int r, int g, int b) {
    const double amp = spec.noise_amplitude * 255.0;
    const double n = amp > 0.0 ? noise.uniform(-amp, amp) : 0.0;
    std::uint8_t* px = scene.panorama.at(x, y);
    px[0] = static_cast<std::uint8_t>(std::clamp(r + n, 0.0, 255.0));
    px[1] = static_cast<std::uint8_t>(std::clamp(g + n, 0.0, 255.0));
    px[2] = static_cast<std::uint8_t>(std::clamp(b + n, 0.0, 255.0));
  };

  for (int y = 0; y < H; ++y) {
    const double tan_e = row_tan[y];
    for (int x = 0; x < W; ++x) {
      const double t = col_t[x];
      const double s = col_s[x];
      bool facade_hit = false;
      if (t > 0.0 && s >= strip_lo && s <= strip_hi) {
        const double z = kCameraHeightM + t * tan_e;
        if (z >= 0.0 && z <= kWallTopM) {
          facade_hit = true;
          const BusinessSpec* biz = nullptr;
          for (const BusinessSpec& b : spec.businesses) {
            if (s >= b.position_m && s < b.position_m + b.width_m) {
              biz = &b;
              break;
            }
          }
          if (biz != nullptr && z <= biz->height_m) {
            const StyleColor base = style_base(biz->style_id);
            const double rel = (s - biz->position_m) / biz->width_m;
            int r = base.r, g = base.g, b = base.b;
            if (s - biz->position_m < 0.15 || biz->position_m + biz->width_m - s < 0.15) {
              r = g = b = 18;  // facade boundary line
            } else if (z > 0.82 * biz->height_m) {
              r = std::min(255, r + 70);  // sign band
              g = std::min(255, g + 70);
              b = std::min(255, b + 70);
            } else if (rel > 0.40 && rel < 0.60 && z < 0.45 * biz->height_m) {
              r = r / 2;  // door
              g = g / 2;
              b = b / 2;
            }
            put(x, y, r, g, b);
          } else {
            put(x, y, 208, 205, 198);  // upper wall
          }
        }
      }
      if (!facade_hit) {
        const bool ground = tan_e < 0.0 && (t <= 0.0 || s < strip_lo || s > strip_hi ||
                                            kCameraHeightM + t * tan_e < 0.0);
        if (ground) {
          put(x, y, 99, 95, 90);
        } else {
          // Sky, lighter toward the horizon.
          const int lift = static_cast<int>(40.0 * (static_cast<double>(y) / H) * 2.0);
          put(x, y, std::min(255, 140 + lift), std::min(255, 175 + lift),
              std::min(255, 220 + lift));
        }
      }
    }
  }

  // Projected ground truth: one axis-aligned box per business within the
  // +-45 degree elevation band.
  for (const BusinessSpec& b : spec.businesses) {
    const double ds0 = b.position_m - s_cam;
    const double ds1 = b.position_m + b.width_m - s_cam;
    const double psi0 = std::atan2(ds0, d);
    const double psi1 = std::atan2(ds1, d);
    const double bearing0 = normal_bearing + rad2deg(psi0);
    const double bearing1 = normal_bearing + rad2deg(psi1);
    const double width = (bearing1 - bearing0) / 360.0;
    if (width <= 0.0) continue;
    const double x_min = wrap_unit(0.5 + (bearing0 - spec.camera.heading) / 360.0);

    const double ds_near = std::clamp(0.0, std::min(ds0, ds1), std::max(ds0, ds1));
    const double range_near = std::sqrt(d * d + ds_near * ds_near);
    const double range_far = std::sqrt(d * d + std::max(ds0 * ds0, ds1 * ds1));
    const double top_rel = b.height_m - kCameraHeightM;
    const double elev_top =
        rad2deg(std::atan2(top_rel, top_rel >= 0.0 ? range_near : range_far));
    const double elev_bot = rad2deg(std::atan2(-kCameraHeightM, range_near));

    const double e_top = std::min(45.0, elev_top);
    const double e_bot = std::max(-45.0, elev_bot);
    if (e_top <= e_bot) continue;

    Box gt;
    gt.x_min = x_min;
    gt.x_max = x_min + width;
    gt.y_min = 0.5 - e_top / 180.0;
    gt.y_max = 0.5 - e_bot / 180.0;
    scene.gt_boxes.push_back(gt);
  }

  return scene;
}

// ---------------------------------------------------------------------------
// Random scene construction for dataset generation.

struct SceneSamplerConfig {
  int pano_width_px = 1664;
  int pano_height_px = 832;
  double strip_half_length_m = 20.0;  // businesses fill [-L, L] along the street
  double min_width_m = 5.0;
  double max_width_m = 10.0;
  double min_height_m = 3.5;
  double max_height_m = 6.5;
  double facade_distance_m = 10.0;
  double noise_amplitude = 0.02;
  double base_lat = -23.55;
  double base_lng = -46.63;
  double min_luminance_gap = 0.10;  // between abutting neighbors
};

// Builds a randomized SceneSpec: one run of abutting storefronts filling the
// strip, neighbor styles forced apart in luminance, camera pose on a coarse
// street grid so the location-aware split has many geographic cells.
inline SceneSpec make_random_scene(std::uint64_t seed, const SceneSamplerConfig& cfg = {},
                                   int scene_index = 0) {
  SceneSpec spec;
  spec.seed = seed;
  spec.pano_width_px = cfg.pano_width_px;
  spec.pano_height_px = cfg.pano_height_px;
  spec.facade_distance_m = cfg.facade_distance_m;
  spec.noise_amplitude = cfg.noise_amplitude;

  Rng rng(Rng::derive_seed(seed, 0x5ce9e));
  spec.street_bearing_deg = 90.0 * static_cast<double>(rng.uniform_index(4)) +
                            rng.uniform(-20.0, 20.0);
  spec.camera.heading = detail::wrap_degrees(spec.street_bearing_deg + rng.uniform(-30.0, 30.0));
  // One street per scene index; 0.003 degrees keeps distinct scenes in
  // distinct 0.001-degree split cells.
  spec.camera.lat = cfg.base_lat + 0.003 * (scene_index % 100);
  spec.camera.lng = cfg.base_lng + 0.003 * (scene_index / 100);
  spec.camera_street_offset_m = rng.uniform(-3.0, 3.0);

  double pos = -cfg.strip_half_length_m;
  int last_style = -1;
  while (pos < cfg.strip_half_length_m) {
    BusinessSpec b;
    b.position_m = pos;
    b.width_m = rng.uniform(cfg.min_width_m, cfg.max_width_m);
    b.height_m = rng.uniform(cfg.min_height_m, cfg.max_height_m);
    b.style_id = static_cast<int>(rng.uniform_index(12));
    while (last_style >= 0 &&
           std::abs(detail::style_luminance(b.style_id) - detail::style_luminance(last_style)) <
               cfg.min_luminance_gap) {
      b.style_id = static_cast<int>(rng.uniform_index(12));
    }
    if (b.position_m + b.width_m > cfg.strip_half_length_m) {
      b.width_m = cfg.strip_half_length_m - b.position_m;
      if (b.width_m < cfg.min_width_m) break;
    }
    last_style = b.style_id;
    pos += b.width_m;
    spec.businesses.push_back(b);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Location-aware split and label degradation.

// Groups poses into 0.001-degree grid cells and assigns whole cells to one
// side, so nothing in test shares a cell with training data.
inline void split_location_aware(const std::vector<GeoPose>& poses, double test_fraction,
                                 std::uint64_t seed, std::vector<std::size_t>* train_indices,
                                 std::vector<std::size_t>* test_indices) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0) {
    throw std::invalid_argument("split_location_aware: test fraction must be in (0, 1)");
  }
  std::map<std::pair<long long, long long>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const long long cl = static_cast<long long>(std::floor(poses[i].lat / 0.001));
    const long long cg = static_cast<long long>(std::floor(poses[i].lng / 0.001));
    cells[{cl, cg}].push_back(i);
  }
  if (cells.size() < 2) {
    throw std::invalid_argument("split_location_aware: need at least two geographic cells");
  }
  std::vector<std::vector<std::size_t>> cell_list;
  for (auto& kv : cells) cell_list.push_back(kv.second);
  Rng rng(seed);
  rng.shuffle(cell_list);

  train_indices->clear();
  test_indices->clear();
  const double target = test_fraction * static_cast<double>(poses.size());
  for (const auto& members : cell_list) {
    if (static_cast<double>(test_indices->size()) < target &&
        test_indices->size() + members.size() < poses.size()) {
      test_indices->insert(test_indices->end(), members.begin(), members.end());
    } else {
      train_indices->insert(train_indices->end(), members.begin(), members.end());
    }
  }
  std::sort(train_indices->begin(), train_indices->end());
  std::sort(test_indices->begin(), test_indices->end());
}

// Independent Bernoulli keep per box; models incomplete annotation (the paper
// found roughly 2934 of ~11000 true boxes labeled, hence default 0.27).
inline std::vector<Box> degrade_labels(const std::vector<Box>& gts, double keep_fraction,
                                       std::uint64_t seed) {
  if (keep_fraction <= 0.0 || keep_fraction > 1.0) {
    throw std::invalid_argument("degrade_labels: keep fraction must be in (0, 1]");
  }
  std::vector<Box> kept;
  Rng rng(seed);
  for (const Box& b : gts) {
    if (rng.uniform() < keep_fraction) kept.push_back(b);
  }
  return kept;
}

}  // namespace storefront
