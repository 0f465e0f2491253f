#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tstereo/image.h"
#include "tstereo/probesim.h"
#include "tstereo/scenegen.h"
#include "tstereo/stereomodel.h"

namespace tstereo {

enum class TactileMode : std::uint8_t { kPatch, kPixel };
const char* tactile_mode_name(TactileMode m);
TactileMode tactile_mode_from_name(const std::string& name);

struct FinetuneConfig {
  double tactile_weight = 1.0;
  double regularization_weight = 100.0;
  int patch_radius = 7;
  double patch_sigma = 12.0;
  double pseudo_threshold = 0.9999;  // pseudo labels where confidence >= this
  double confidence_radius = 5.0;
  AdamConfig adam{2e-5};
  int epochs = 10;
  double smooth_l1_beta = 1.0;
  TactileMode mode = TactileMode::kPatch;
  double divergence_factor = 10.0;
  int threads = 1;

  void validate() const;
};

struct PatchTarget {
  int x = 0;
  int y = 0;
  double weight = 1.0;  // Gaussian blend weight of the measured label
  double target = 0.0;  // blended disparity
};

struct TactileLabel {
  Touch touch;
  double label_disparity = 0.0;
  std::vector<PatchTarget> patch;  // clipped to the image; center first
};

// Blends the measured disparity into the prior prediction over a square
// patch: target = g * label + (1 - g) * prior, g = exp(-r^2 / (2 sigma^2)).
// Throws for failed probes.
TactileLabel build_tactile_label(const ProbeResult& probe, const Image& prior,
                                 const FinetuneConfig& cfg);

// Mean smooth-L1 over every contributing patch pixel (centers only in
// pixel mode). Throws on an empty label list.
double tactile_loss(const Image& prediction, std::span<const TactileLabel> labels,
                    const FinetuneConfig& cfg);
Objective tactile_objective(int width, int height, std::span<const TactileLabel> labels,
                            const FinetuneConfig& cfg);

Mask pseudo_mask(const Image& confidence, double threshold);

// Mean smooth-L1 between prediction and prior over the mask; 0 when empty.
double regularization_loss(const Image& prediction, const Image& prior,
                           const Mask& mask, double beta);
Objective regularization_objective(const Image& prior, const Mask& mask, double beta);

struct FinetuneLogEntry {
  int epoch = 0;
  double tactile = 0.0;
  double regularization = 0.0;
  double combined = 0.0;
};

struct FinetuneResult {
  ModelState state;
  std::vector<FinetuneLogEntry> log;
  bool diverged = false;
  std::string diagnostic;
  int labels_used = 0;
  long pseudo_pixels = 0;
};

// One Adam step per probed view per epoch, views in the given order. The
// prior prediction and pseudo mask come from `pretrained` once at entry.
FinetuneResult finetune(const ModelState& pretrained, std::span<const SceneSample> views,
                        std::span<const ProbeResult> probes,
                        const DisparityHypotheses& hyps, const FinetuneConfig& cfg);

std::string encode_finetune_log_csv(const std::vector<FinetuneLogEntry>& log);

}  // namespace tstereo
