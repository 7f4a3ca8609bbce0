// Desk-scale detector head: a fixed gray-grid featurizer, one hidden ReLU
// layer and a linear output of 5n numbers (4n corner offsets + n confidence
// logits). Stands in for the full convolutional network so the loss,
// matching and pipeline can be exercised end to end on a CPU.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "storefront/image.hpp"
#include "storefront/multibox_loss.hpp"
#include "storefront/rng.hpp"

namespace storefront {

struct ModelConfig {
  int input_grid = 32;
  int hidden_units = 256;
};

struct ModelParams {
  int input_grid = 32;
  int hidden_units = 256;
  int num_priors = 0;
  std::uint64_t prior_hash = 0;
  std::uint64_t seed = 0;
  std::vector<double> w1;  // hidden x (grid*grid), row-major
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // (5n) x hidden, row-major
  std::vector<double> b2;  // 5n

  int input_dim() const { return input_grid * input_grid; }
  int output_dim() const { return 5 * num_priors; }
};

struct TrainConfig {
  double learning_rate = 0.05;
  int steps = 2000;
  int batch_size = 8;
  std::uint64_t seed = 1;
  int input_downsample_factor = 8;
  bool cache_matchings = false;
};

struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic init: uniform +-1/sqrt(fan_in) weights; confidence output
// biases start at logit(0.01) so a fresh model predicts near-background
// everywhere (prior-negative initialization).
inline ModelParams init_model(const PriorSet& priors, std::uint64_t seed,
                              const ModelConfig& cfg = {}) {
  if (priors.priors.empty()) throw std::invalid_argument("init_model: empty prior set");
  ModelParams p;
  p.input_grid = cfg.input_grid;
  p.hidden_units = cfg.hidden_units;
  p.num_priors = priors.size();
  p.prior_hash = prior_set_hash(priors);
  p.seed = seed;

  Rng rng(seed);
  const int d = p.input_dim();
  const int h = p.hidden_units;
  const int out = p.output_dim();
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
  p.w1.resize(static_cast<std::size_t>(h) * d);
  for (double& w : p.w1) w = rng.uniform(-s1, s1);
  p.b1.resize(h);
  for (double& w : p.b1) w = rng.uniform(-s1, s1);
  p.w2.resize(static_cast<std::size_t>(out) * h);
  for (double& w : p.w2) w = rng.uniform(-s2, s2);
  p.b2.assign(out, 0.0);
  const double conf_bias = logit(0.01);
  for (int i = 0; i < p.num_priors; ++i) p.b2[4 * p.num_priors + i] = conf_bias;
  return p;
}

namespace detail {

struct ForwardTrace {
  std::vector<double> x;   // input features
  std::vector<double> z1;  // pre-activation hidden
  std::vector<double> h;   // ReLU hidden
  std::vector<double> y;   // linear output, 5n
};

inline void forward_trace(const ModelParams& p, const std::vector<double>& features,
                          ForwardTrace& t) {
  if (static_cast<int>(features.size()) != p.input_dim()) {
    throw std::invalid_argument("forward: feature size does not match model input grid");
  }
  const int d = p.input_dim();
  const int hn = p.hidden_units;
  const int out = p.output_dim();
  t.x = features;
  t.z1.assign(hn, 0.0);
  for (int i = 0; i < hn; ++i) {
    double acc = p.b1[i];
    const double* row = p.w1.data() + static_cast<std::size_t>(i) * d;
    for (int k = 0; k < d; ++k) acc += row[k] * features[k];
    t.z1[i] = acc;
  }
  t.h = t.z1;
  for (double& v : t.h) v = v > 0.0 ? v : 0.0;
  t.y.assign(out, 0.0);
  for (int i = 0; i < out; ++i) {
    double acc = p.b2[i];
    const double* row = p.w2.data() + static_cast<std::size_t>(i) * hn;
    for (int k = 0; k < hn; ++k) acc += row[k] * t.h[k];
    t.y[i] = acc;
  }
}

inline DetectorOutput output_from_linear(const ModelParams& p, const std::vector<double>& y) {
  DetectorOutput out;
  const int n = p.num_priors;
  out.loc_residuals.resize(n);
  out.confidences.resize(n);
  for (int i = 0; i < n; ++i) {
    out.loc_residuals[i] = {y[4 * i], y[4 * i + 1], y[4 * i + 2], y[4 * i + 3]};
    // Keep confidences strictly inside (0, 1) even at extreme logits.
    out.confidences[i] = std::min(1.0 - 1e-12, std::max(1e-12, logistic(y[4 * n + i])));
  }
  return out;
}

}  // namespace detail

inline DetectorOutput forward_features(const ModelParams& p, const std::vector<double>& features) {
  detail::ForwardTrace t;
  detail::forward_trace(p, features, t);
  return detail::output_from_linear(p, t.y);
}

inline DetectorOutput forward(const ModelParams& p, const Image& crop_pixels) {
  if (crop_pixels.width <= 0 || crop_pixels.height <= 0 ||
      crop_pixels.pixels.size() !=
          static_cast<std::size_t>(crop_pixels.width) * crop_pixels.height * 3) {
    throw std::invalid_argument("forward: malformed image");
  }
  return forward_features(p, gray_grid(crop_pixels, p.input_grid));
}

struct ParamGrad {
  std::vector<double> w1, b1, w2, b2;

  void init_like(const ModelParams& p) {
    w1.assign(p.w1.size(), 0.0);
    b1.assign(p.b1.size(), 0.0);
    w2.assign(p.w2.size(), 0.0);
    b2.assign(p.b2.size(), 0.0);
  }
};

namespace detail {

// Backprop of (d loss / d y) through the two affine layers, accumulating
// into grad.
inline void backward_accumulate(const ModelParams& p, const ForwardTrace& t,
                                const std::vector<double>& dy, ParamGrad& grad) {
  const int d = p.input_dim();
  const int hn = p.hidden_units;
  const int out = p.output_dim();
  std::vector<double> dh(hn, 0.0);
  for (int i = 0; i < out; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    double* wrow = grad.w2.data() + static_cast<std::size_t>(i) * hn;
    const double* prow = p.w2.data() + static_cast<std::size_t>(i) * hn;
    for (int k = 0; k < hn; ++k) {
      wrow[k] += g * t.h[k];
      dh[k] += g * prow[k];
    }
    grad.b2[i] += g;
  }
  for (int k = 0; k < hn; ++k) {
    if (t.z1[k] <= 0.0 || dh[k] == 0.0) continue;
    const double g = dh[k];
    double* wrow = grad.w1.data() + static_cast<std::size_t>(k) * d;
    for (int j = 0; j < d; ++j) wrow[j] += g * t.x[j];
    grad.b1[k] += g;
  }
}

inline std::vector<double> linear_grad_from_loss(const ModelParams& p,
                                                 const MultiboxGradient& mg) {
  const int n = p.num_priors;
  std::vector<double> dy(p.output_dim(), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 4; ++k) dy[4 * i + k] = mg.d_loc[i][k];
    dy[4 * n + i] = mg.d_logit[i];
  }
  return dy;
}

}  // namespace detail

// One training example: featurized crop pixels plus the ground-truth boxes
// visible in that crop (crop frame).
struct TrainExample {
  std::vector<double> features;
  std::vector<Box> gts;
};

inline TrainExample make_train_example(const ModelParams& p, const Image& crop,
                                       std::vector<Box> gts) {
  return TrainExample{gray_grid(crop, p.input_grid), std::move(gts)};
}

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_trace;  // mean batch loss per step
};

// Plain SGD over the MultiBox loss. Matching is recomputed per step from the
// example's ground truth (pure function of geometry); cache_matchings reuses
// the per-example result, which cannot change the outcome.
inline TrainResult sgd_train(ModelParams params, const std::vector<TrainExample>& dataset,
                             const PriorSet& priors, const TrainConfig& cfg,
                             const LossConfig& loss_cfg = {}) {
  if (dataset.empty()) throw std::invalid_argument("sgd_train: empty dataset");
  if (params.num_priors != priors.size() || params.prior_hash != prior_set_hash(priors)) {
    throw std::invalid_argument("sgd_train: model and prior set do not match");
  }
  Rng rng(cfg.seed);
  std::unordered_map<std::size_t, MatchResult> match_cache;
  TrainResult result;
  result.loss_trace.reserve(cfg.steps);

  ParamGrad grad;
  detail::ForwardTrace trace;
  for (int step = 0; step < cfg.steps; ++step) {
    grad.init_like(params);
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = rng.uniform_index(dataset.size());
      const TrainExample& ex = dataset[idx];

      MatchResult match;
      if (cfg.cache_matchings) {
        auto it = match_cache.find(idx);
        if (it == match_cache.end()) {
          it = match_cache.emplace(idx, max_weight_match(priors, ex.gts)).first;
        }
        match = it->second;
      } else {
        match = max_weight_match(priors, ex.gts);
      }

      detail::forward_trace(params, ex.features, trace);
      const DetectorOutput out = detail::output_from_linear(params, trace.y);
      batch_loss += multibox_loss(out, priors, ex.gts, match, loss_cfg);
      const MultiboxGradient mg = multibox_grad(out, priors, ex.gts, match, loss_cfg);
      detail::backward_accumulate(params, trace, detail::linear_grad_from_loss(params, mg), grad);
    }
    batch_loss /= cfg.batch_size;
    if (!std::isfinite(batch_loss)) {
      throw TrainingDiverged("loss became non-finite at step " + std::to_string(step));
    }
    result.loss_trace.push_back(batch_loss);

    const double scale = cfg.learning_rate / cfg.batch_size;
    for (std::size_t i = 0; i < params.w1.size(); ++i) params.w1[i] -= scale * grad.w1[i];
    for (std::size_t i = 0; i < params.b1.size(); ++i) params.b1[i] -= scale * grad.b1[i];
    for (std::size_t i = 0; i < params.w2.size(); ++i) params.w2[i] -= scale * grad.w2[i];
    for (std::size_t i = 0; i < params.b2.size(); ++i) params.b2[i] -= scale * grad.b2[i];
  }
  result.params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// Postclassifier: same featurizer and hidden layer, single logistic output.

struct PostclassifierParams {
  int input_grid = 32;
  int hidden_units = 256;
  std::uint64_t seed = 0;
  std::vector<double> w1;
  std::vector<double> b1;
  std::vector<double> w2;  // hidden
  double b2 = 0.0;

  int input_dim() const { return input_grid * input_grid; }
};

inline PostclassifierParams init_postclassifier(std::uint64_t seed, const ModelConfig& cfg = {}) {
  PostclassifierParams p;
  p.input_grid = cfg.input_grid;
  p.hidden_units = cfg.hidden_units;
  p.seed = seed;
  Rng rng(seed);
  const int d = p.input_dim();
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(p.hidden_units));
  p.w1.resize(static_cast<std::size_t>(p.hidden_units) * d);
  for (double& w : p.w1) w = rng.uniform(-s1, s1);
  p.b1.resize(p.hidden_units);
  for (double& w : p.b1) w = rng.uniform(-s1, s1);
  p.w2.resize(p.hidden_units);
  for (double& w : p.w2) w = rng.uniform(-s2, s2);
  p.b2 = 0.0;
  return p;
}

// S_p in (0, 1) for a featurized box crop.
inline double postclassifier_score(const PostclassifierParams& p,
                                   const std::vector<double>& features) {
  if (static_cast<int>(features.size()) != p.input_dim()) {
    throw std::invalid_argument("postclassifier_score: feature size mismatch");
  }
  const int d = p.input_dim();
  double logit_acc = p.b2;
  for (int i = 0; i < p.hidden_units; ++i) {
    double acc = p.b1[i];
    const double* row = p.w1.data() + static_cast<std::size_t>(i) * d;
    for (int k = 0; k < d; ++k) acc += row[k] * features[k];
    if (acc > 0.0) logit_acc += p.w2[i] * acc;
  }
  return std::min(1.0 - 1e-12, std::max(1e-12, logistic(logit_acc)));
}

struct LabeledPatch {
  std::vector<double> features;
  bool positive = false;
};

// Epoch schedule with the fixed positive:negative mixture. Every positive
// appears once per epoch; negatives are drawn neg_per_pos per positive from
// a shuffled pool, cycling when the pool is short.
inline std::vector<std::size_t> ratio_epoch_schedule(std::size_t num_positives,
                                                     std::size_t num_negatives,
                                                     int neg_per_pos, Rng& rng) {
  if (num_positives == 0) throw std::invalid_argument("ratio schedule: no positives available");
  if (num_negatives == 0) throw std::invalid_argument("ratio schedule: no negatives available");
  // Returned indices: [0, num_positives) are positives, the rest negatives.
  std::vector<std::size_t> pos(num_positives), neg(num_negatives);
  for (std::size_t i = 0; i < num_positives; ++i) pos[i] = i;
  for (std::size_t i = 0; i < num_negatives; ++i) neg[i] = num_positives + i;
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::size_t> schedule;
  std::size_t neg_cursor = 0;
  for (std::size_t k = 0; k < num_positives; ++k) {
    schedule.push_back(pos[k]);
    for (int r = 0; r < neg_per_pos; ++r) {
      schedule.push_back(neg[neg_cursor % num_negatives]);
      ++neg_cursor;
    }
  }
  rng.shuffle(schedule);
  return schedule;
}

// Logistic-loss SGD over 1:neg_per_pos mixed epochs.
inline PostclassifierParams train_postclassifier(const std::vector<LabeledPatch>& positives,
                                                 const std::vector<LabeledPatch>& negatives,
                                                 const TrainConfig& cfg, int neg_per_pos = 7,
                                                 const ModelConfig& model_cfg = {}) {
  if (positives.empty()) throw std::invalid_argument("train_postclassifier: no positives available");
  if (negatives.empty()) throw std::invalid_argument("train_postclassifier: no negatives available");
  PostclassifierParams p = init_postclassifier(cfg.seed, model_cfg);
  Rng rng(Rng::derive_seed(cfg.seed, 0x70737463));

  const int d = p.input_dim();
  const int hn = p.hidden_units;
  std::vector<double> z1(hn), dh(hn);
  std::vector<std::size_t> schedule;
  std::size_t cursor = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    double grad_b2 = 0.0;
    std::vector<double> grad_w2(hn, 0.0);
    std::vector<double> grad_w1(p.w1.size(), 0.0);
    std::vector<double> grad_b1(hn, 0.0);
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= schedule.size()) {
        schedule = ratio_epoch_schedule(positives.size(), negatives.size(), neg_per_pos, rng);
        cursor = 0;
      }
      const std::size_t idx = schedule[cursor++];
      const LabeledPatch& ex =
          idx < positives.size() ? positives[idx] : negatives[idx - positives.size()];

      double logit_acc = p.b2;
      for (int i = 0; i < hn; ++i) {
        double acc = p.b1[i];
        const double* row = p.w1.data() + static_cast<std::size_t>(i) * d;
        for (int k = 0; k < d; ++k) acc += row[k] * ex.features[k];
        z1[i] = acc;
        if (acc > 0.0) logit_acc += p.w2[i] * acc;
      }
      const double c = logistic(logit_acc);
      const double g = c - (ex.positive ? 1.0 : 0.0);  // d loss / d logit
      grad_b2 += g;
      for (int i = 0; i < hn; ++i) {
        if (z1[i] <= 0.0) continue;
        grad_w2[i] += g * z1[i];
        const double gh = g * p.w2[i];
        double* wrow = grad_w1.data() + static_cast<std::size_t>(i) * d;
        for (int k = 0; k < d; ++k) wrow[k] += gh * ex.features[k];
        grad_b1[i] += gh;
      }
    }
    const double scale = cfg.learning_rate / cfg.batch_size;
    p.b2 -= scale * grad_b2;
    for (int i = 0; i < hn; ++i) p.w2[i] -= scale * grad_w2[i];
    for (std::size_t i = 0; i < p.w1.size(); ++i) p.w1[i] -= scale * grad_w1[i];
    for (int i = 0; i < hn; ++i) p.b1[i] -= scale * grad_b1[i];
  }
  return p;
}

}  // namespace storefront
