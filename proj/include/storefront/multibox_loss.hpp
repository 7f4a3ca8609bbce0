// The MultiBox objective: squared-L2 localization loss on matched priors
// plus logistic confidence loss over all priors, with analytic gradients.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "storefront/geometry.hpp"
#include "storefront/matching.hpp"
#include "storefront/priors.hpp"

namespace storefront {

// Raw per-crop network output: one 4-vector of corner offsets relative to
// each prior, and one confidence per prior (strictly inside (0, 1)).
struct DetectorOutput {
  std::vector<std::array<double, 4>> loc_residuals;
  std::vector<double> confidences;

  int size() const { return static_cast<int>(confidences.size()); }
};

struct LossConfig {
  double alpha = 0.3;
  double confidence_clamp = 1e-7;
};

inline void validate_loss_inputs(const DetectorOutput& output, const PriorSet& priors,
                                 const std::vector<Box>& gts, const MatchResult& match) {
  if (output.size() != priors.size() ||
      static_cast<int>(output.loc_residuals.size()) != priors.size()) {
    throw std::invalid_argument("detector output size does not match prior set");
  }
  for (const MatchPair& p : match.pairs) {
    if (p.prior_index < 0 || p.prior_index >= priors.size() || p.gt_index < 0 ||
        p.gt_index >= static_cast<int>(gts.size())) {
      throw std::invalid_argument("match references out-of-range indices");
    }
  }
}

// l_i = l_i' + p_i, componentwise on corners. No clamping here: the loss must
// see the raw decode, and only inference clamps boxes into the frame.
inline std::vector<Box> decode_locations(const DetectorOutput& output, const PriorSet& priors) {
  if (output.size() != priors.size() ||
      static_cast<int>(output.loc_residuals.size()) != priors.size()) {
    throw std::invalid_argument("decode_locations: output size does not match prior set");
  }
  std::vector<Box> decoded(priors.priors.size());
  for (int i = 0; i < priors.size(); ++i) {
    const Box& p = priors.priors[i];
    const std::array<double, 4>& r = output.loc_residuals[i];
    decoded[i] = Box{p.x_min + r[0], p.y_min + r[1], p.x_max + r[2], p.y_max + r[3]};
  }
  return decoded;
}

// Inference-side cleanup of a decoded crop-frame box; returns false when the
// clamped box degenerates.
inline bool clamp_to_frame(Box& b) {
  b.x_min = std::max(0.0, std::min(1.0, b.x_min));
  b.y_min = std::max(0.0, std::min(1.0, b.y_min));
  b.x_max = std::max(0.0, std::min(1.0, b.x_max));
  b.y_max = std::max(0.0, std::min(1.0, b.y_max));
  return box_is_valid(b);
}

inline double clamp_confidence(double c, double eps) {
  return std::max(eps, std::min(1.0 - eps, c));
}

// Matched priors contribute (alpha/2) * ||l_i - g_j||^2 - log(c_i); priors
// left unmatched contribute -log(1 - c_i).
inline double multibox_loss(const DetectorOutput& output, const PriorSet& priors,
                            const std::vector<Box>& gts, const MatchResult& match,
                            const LossConfig& cfg = {}) {
  validate_loss_inputs(output, priors, gts, match);
  const std::vector<Box> decoded = decode_locations(output, priors);
  std::vector<int> gt_of_prior(priors.size(), -1);
  for (const MatchPair& p : match.pairs) gt_of_prior[p.prior_index] = p.gt_index;

  double loss = 0.0;
  for (int i = 0; i < priors.size(); ++i) {
    const double c = clamp_confidence(output.confidences[i], cfg.confidence_clamp);
    const int j = gt_of_prior[i];
    if (j >= 0) {
      const Box& l = decoded[i];
      const Box& g = gts[j];
      const double d0 = l.x_min - g.x_min;
      const double d1 = l.y_min - g.y_min;
      const double d2 = l.x_max - g.x_max;
      const double d3 = l.y_max - g.y_max;
      loss += 0.5 * cfg.alpha * (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3);
      loss -= std::log(c);
    } else {
      loss -= std::log(1.0 - c);
    }
  }
  return loss;
}

struct MultiboxGradient {
  std::vector<std::array<double, 4>> d_loc;  // d loss / d loc_residuals
  std::vector<double> d_logit;               // d loss / d confidence logits
};

// Analytic gradient of multibox_loss: alpha * (l_i - g_j) on matched location
// rows, zero elsewhere; c_i - t_i on confidence logits.
inline MultiboxGradient multibox_grad(const DetectorOutput& output, const PriorSet& priors,
                                      const std::vector<Box>& gts, const MatchResult& match,
                                      const LossConfig& cfg = {}) {
  validate_loss_inputs(output, priors, gts, match);
  const std::vector<Box> decoded = decode_locations(output, priors);
  std::vector<int> gt_of_prior(priors.size(), -1);
  for (const MatchPair& p : match.pairs) gt_of_prior[p.prior_index] = p.gt_index;

  MultiboxGradient grad;
  grad.d_loc.assign(priors.size(), {0.0, 0.0, 0.0, 0.0});
  grad.d_logit.assign(priors.size(), 0.0);
  for (int i = 0; i < priors.size(); ++i) {
    const double c = clamp_confidence(output.confidences[i], cfg.confidence_clamp);
    const int j = gt_of_prior[i];
    if (j >= 0) {
      const Box& l = decoded[i];
      const Box& g = gts[j];
      grad.d_loc[i] = {cfg.alpha * (l.x_min - g.x_min), cfg.alpha * (l.y_min - g.y_min),
                       cfg.alpha * (l.x_max - g.x_max), cfg.alpha * (l.y_max - g.y_max)};
      grad.d_logit[i] = c - 1.0;
    } else {
      grad.d_logit[i] = c;
    }
  }
  return grad;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace storefront
