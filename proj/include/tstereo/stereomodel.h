#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tstereo/image.h"
#include "tstereo/scenegen.h"

namespace tstereo {

// Score given to hypotheses whose matching position falls left of the
// right image.
inline constexpr double kInvalidShiftScore = -1e6;

struct DisparityHypotheses {
  std::vector<double> values;

  static DisparityHypotheses uniform(double min, double max, double step = 1.0);
  static DisparityHypotheses for_rig(const CameraRig& rig);

  // Strictly increasing, at least two entries.
  void validate() const;
  int size() const { return static_cast<int>(values.size()); }
  double min() const { return values.front(); }
  double max() const { return values.back(); }
};

enum class ModelRole : std::uint8_t {
  kUntrained = 0,
  kPretrained = 1,
  kSurrogate = 2,
  kFinetuned = 3,
};
const char* role_name(ModelRole role);

struct DescriptorConfig {
  int patch_radius = 2;
  bool normalize = true;
  int dim() const { return (2 * patch_radius + 1) * (2 * patch_radius + 1); }
  bool operator==(const DescriptorConfig&) const = default;
};

// Shared linear embedding W (embed_dim x feature_dim, row-major) applied to
// normalized patch descriptors, plus a softmax temperature stored as its log.
struct ModelState {
  int embed_dim = 8;
  int feature_dim = 25;
  std::vector<double> weights;
  double log_temperature = 0.0;
  ModelRole role = ModelRole::kUntrained;
  DescriptorConfig descriptor;

  double temperature() const;
  void set_temperature(double tau);
  double weight(int e, int f) const { return weights[e * feature_dim + f]; }
  // Number of optimized parameters: weights plus log temperature.
  std::size_t parameter_count() const { return weights.size() + 1; }
  void validate() const;
  bool operator==(const ModelState&) const = default;
};

ModelState random_state(int embed_dim, const DescriptorConfig& descriptor,
                        std::uint64_t seed, double scale, double temperature);

// Rows of W are the leading principal directions of the descriptors sampled
// from `samples` (both views), scaled by `scale`.
ModelState pca_state(std::span<const SceneSample> samples, int embed_dim,
                     const DescriptorConfig& descriptor, double scale,
                     double temperature);

// Edge-clamped (2r+1)^2 patch, mean-subtracted and (optionally)
// L2-normalized. Constant patches give the zero vector.
std::vector<double> extract_descriptor(const Image& image, int u, int v,
                                       int patch_radius, bool normalize = true);

struct DescriptorField {
  int width = 0;
  int height = 0;
  int dim = 0;
  std::vector<double> values;

  std::span<const double> at(int x, int y) const {
    return {values.data() + (static_cast<std::size_t>(y) * width + x) * dim,
            static_cast<std::size_t>(dim)};
  }
};

DescriptorField compute_descriptors(const Image& image,
                                    const DescriptorConfig& cfg);

// Descriptors of both views. Independent of W, so they are computed once per
// sample and reused across optimization steps.
struct StereoFeatures {
  DescriptorField left;
  DescriptorField right;
  int width() const { return left.width; }
  int height() const { return left.height; }
};

StereoFeatures compute_features(const SceneSample& sample,
                                const DescriptorConfig& cfg);

// S(u, v, d) = <W phi_L(u, v), W phi_R(u - d, v)> / tau, with phi_R linearly
// interpolated for fractional shifts.
Volume score_volume(const StereoFeatures& features, const ModelState& state,
                    const DisparityHypotheses& hyps);
Volume score_volume(const SceneSample& sample, const ModelState& state,
                    const DisparityHypotheses& hyps);

Volume softmax_over_hypotheses(const Volume& scores);

// Expected disparity under the per-pixel distribution.
Image predict_disparity(const Volume& probability,
                        const DisparityHypotheses& hyps);

struct Inference {
  Volume probability;
  Image disparity;
};
Inference infer(const StereoFeatures& features, const ModelState& state,
                const DisparityHypotheses& hyps);

// Per-pixel entropy -sum p log p of a probability volume.
Image entropy_map(const Volume& probability);

double smooth_l1(double residual, double beta);
double smooth_l1_derivative(double residual, double beta);

enum class Penalty : std::uint8_t { kSmoothL1, kSquared };

// weight * penalty(f(pixel) - target)
struct DisparityTerm {
  int pixel = 0;
  double target = 0.0;
  double weight = 0.0;
  Penalty penalty = Penalty::kSmoothL1;
};

// A loss over predicted disparities and entropies, expressed as a weighted
// sum of per-pixel terms. Averaging is folded into the weights.
struct Objective {
  int width = 0;
  int height = 0;
  double smooth_l1_beta = 1.0;
  std::vector<DisparityTerm> terms;
  std::vector<std::pair<int, double>> entropy_terms;  // (pixel, weight)

  // Adds every term of `other`, scaled by `scale`.
  void append(const Objective& other, double scale);
  bool empty() const { return terms.empty() && entropy_terms.empty(); }
};

// Mean smooth-L1 against `target` over its finite pixels.
Objective dense_smooth_l1_objective(const Image& target, double beta = 1.0);
// Mean entropy over `pixels` plus lambda * mean over all pixels of
// (f - anchor)^2.
Objective entropy_objective(std::span<const int> pixels, const Image& anchor,
                            double lambda_l2);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad_weights;  // dL/dW, row-major like ModelState
  double grad_temperature = 0.0;     // dL/dtau
};

struct EvalOptions {
  int threads = 1;
};

LossGradient loss_gradients(const ModelState& state,
                            const StereoFeatures& features,
                            const DisparityHypotheses& hyps,
                            const Objective& objective,
                            const EvalOptions& options = {});
double evaluate_loss(const ModelState& state, const StereoFeatures& features,
                     const DisparityHypotheses& hyps,
                     const Objective& objective,
                     const EvalOptions& options = {});

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

// Bias-corrected Adam update in place. Moments are sized on first use.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamMoments& moments, const AdamConfig& cfg);

// Applies one Adam step to W and log(tau), converting dL/dtau to
// dL/dlog(tau).
void apply_adam(ModelState& state, const LossGradient& grad,
                AdamMoments& moments, const AdamConfig& cfg);

struct PretrainConfig {
  AdamConfig adam{3e-3};
  int max_epochs = 40;
  double target_epe = 0.5;
  double smooth_l1_beta = 1.0;
  int threads = 1;
};

struct PretrainResult {
  ModelState state;
  bool reached_target = false;
  int epochs_run = 0;
  double validation_epe = 0.0;
  std::vector<double> epoch_loss;
};

// Mean absolute disparity error over diffuse-surface pixels.
double diffuse_epe(const SceneSample& sample, const Image& disparity);

// Dense smooth-L1 supervision on GT disparity, one Adam step per training
// sample in a fixed order, until validation diffuse EPE drops below the
// target or max_epochs is reached.
PretrainResult pretrain(ModelState init, std::span<const SceneSample> train,
                        std::span<const SceneSample> validation,
                        const DisparityHypotheses& hyps,
                        const PretrainConfig& cfg);

// Versioned little-endian binary plus a "<path>.txt" sidecar.
void save_model(const std::filesystem::path& path, const ModelState& state);
ModelState load_model(const std::filesystem::path& path);
std::string encode_model(const ModelState& state);
ModelState decode_model(std::string_view bytes);

}  // namespace tstereo
