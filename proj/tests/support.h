#pragma once

// Small fixtures shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "tstereo/finetuner.h"
#include "tstereo/scenegen.h"
#include "tstereo/stereomodel.h"

namespace tstereo::testing {

// Random-texture pair where the right view is the left shifted by `shift`
// (wrapping in from a second random strip). Every pixel is diffuse.
inline SceneSample shifted_pair(std::uint64_t seed, int w, int h, int shift) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneSample s;
  s.left = Image(w, h);
  s.right = Image(w, h);
  for (auto& v : s.left.values()) v = u(rng);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      s.right.at(x, y) = x + shift < w ? s.left.at(x + shift, y) : u(rng);
  s.gt_disparity = Image(w, h, static_cast<double>(shift));
  s.material = Mask(w, h, static_cast<unsigned char>(Material::kDiffuse));
  s.object_id = Grid<int>(w, h, 1);
  s.rig = CameraRig{320.0, 0.05, w, h, 1.0, static_cast<double>(std::max(shift, 2))};
  return s;
}

// Left and right views filled with unrelated noise.
inline SceneSample noise_pair(std::uint64_t seed, int w, int h) {
  SceneSample s = shifted_pair(seed, w, h, 0);
  std::mt19937_64 rng(seed ^ 0x5a5a);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : s.right.values()) v = u(rng);
  return s;
}

// Relative error between two gradient vectors, measured in the 2-norm.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / scale;
}

// Central differences of the objective over every weight and the
// temperature, in that order.
inline std::vector<double> numeric_gradient(const ModelState& state,
                                            const StereoFeatures& features,
                                            const DisparityHypotheses& hyps,
                                            const Objective& objective, double h) {
  std::vector<double> out;
  ModelState probe = state;
  for (std::size_t i = 0; i < state.weights.size(); ++i) {
    probe.weights[i] = state.weights[i] + h;
    const double up = evaluate_loss(probe, features, hyps, objective);
    probe.weights[i] = state.weights[i] - h;
    const double down = evaluate_loss(probe, features, hyps, objective);
    probe.weights[i] = state.weights[i];
    out.push_back((up - down) / (2.0 * h));
  }
  const double tau = state.temperature();
  probe.set_temperature(tau + h);
  const double up = evaluate_loss(probe, features, hyps, objective);
  probe.set_temperature(tau - h);
  const double down = evaluate_loss(probe, features, hyps, objective);
  out.push_back((up - down) / (2.0 * h));
  return out;
}

inline std::vector<double> analytic_gradient(const ModelState& state,
                                             const StereoFeatures& features,
                                             const DisparityHypotheses& hyps,
                                             const Objective& objective) {
  const LossGradient g = loss_gradients(state, features, hyps, objective);
  std::vector<double> out = g.grad_weights;
  out.push_back(g.grad_temperature);
  return out;
}

enum class LossKind { kEntropy, kTactile, kRegularization, kDense };
inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::kEntropy: return "entropy";
    case LossKind::kTactile: return "tactile";
    case LossKind::kRegularization: return "regularization";
    case LossKind::kDense: return "dense";
  }
  return "?";
}

struct GradientInstance {
  ModelState state;
  StereoFeatures features;
  DisparityHypotheses hyps;
  Objective objective;
};

// Random 16x16 instance with eight hypotheses for one of the losses.
inline GradientInstance gradient_instance(std::uint64_t seed, LossKind kind) {
  constexpr int kSize = 16;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GradientInstance g;
  const int shift = 1 + static_cast<int>(seed % 6);
  const SceneSample s = shifted_pair(seed, kSize, kSize, shift);
  g.hyps = DisparityHypotheses::uniform(1.0, 8.0);
  g.state = random_state(4, DescriptorConfig{}, seed + 17, 0.8, 0.4 + 0.6 * u(rng));
  g.features = compute_features(s, g.state.descriptor);
  const Image pred = infer(g.features, g.state, g.hyps).disparity;

  switch (kind) {
    case LossKind::kEntropy: {
      std::vector<int> pixels;
      for (int i = 0; i < 5; ++i) pixels.push_back(static_cast<int>(u(rng) * kSize * kSize));
      Image anchor = pred;
      for (auto& v : anchor.values()) v += 2.0 * u(rng) - 1.0;
      g.objective = entropy_objective(pixels, anchor, 0.5);
      break;
    }
    case LossKind::kTactile: {
      FinetuneConfig fc;
      fc.patch_radius = 3;
      fc.patch_sigma = 2.0;
      std::vector<TactileLabel> labels;
      for (int i = 0; i < 3; ++i) {
        ProbeResult p;
        p.touch.u = static_cast<int>(u(rng) * kSize);
        p.touch.v = static_cast<int>(u(rng) * kSize);
        p.derived_disparity_px = 1.0 + 7.0 * u(rng);
        p.success = true;
        labels.push_back(build_tactile_label(p, pred, fc));
      }
      g.objective = tactile_objective(kSize, kSize, labels, fc);
      break;
    }
    case LossKind::kRegularization: {
      Image prior = pred;
      for (auto& v : prior.values()) v += 3.0 * (2.0 * u(rng) - 1.0);
      Mask mask(kSize, kSize);
      for (auto& m : mask.values()) m = u(rng) < 0.5 ? 1 : 0;
      g.objective = regularization_objective(prior, mask, 1.0);
      break;
    }
    case LossKind::kDense: {
      Image target(kSize, kSize);
      for (auto& v : target.values()) v = u(rng) < 0.1 ? kInvalidDisparity : 1.0 + 7.0 * u(rng);
      g.objective = dense_smooth_l1_objective(target, 1.0);
      break;
    }
  }
  return g;
}

}  // namespace tstereo::testing
