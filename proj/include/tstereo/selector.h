#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tstereo/image.h"
#include "tstereo/scenegen.h"
#include "tstereo/stereomodel.h"

namespace tstereo {

struct SelectionConfig {
  double confidence_radius = 5.0;        // hypotheses within this many px count
  double unconfident_threshold = 0.999;  // mask = confidence <= threshold
  double smoothing_sigma = 6.5;
  double anchor_weight = 0.01;           // L2 pull toward the entry prediction
  AdamConfig surrogate_adam{1e-5};
  double surrogate_tolerance = 1e-6;     // stop when |loss change| drops below
  int surrogate_max_steps = 200;
  int touches_per_view = 5;
  double min_spacing = 20.0;             // confidence baseline only
  bool exclude_boundary = true;
  // Columns left of this are outside the stereo overlap for the largest
  // hypothesis and are never probed. Negative means "use the rig's
  // disparity_max".
  double min_probe_column = -1.0;
  int threads = 1;

  void validate() const;
};

enum class Strategy : std::uint8_t { kUtility, kRandom, kConfidence, kOracleCenter };
const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct Touch {
  int scene_id = 0;
  int view_id = 0;
  int u = 0;
  int v = 0;
  int step = 0;  // position within its view's selection order
  Strategy strategy = Strategy::kUtility;
  bool operator==(const Touch&) const = default;
};

using TouchSet = std::vector<Touch>;

// CSV with header scene_id,view_id,u,v,selection_step,strategy.
std::string encode_touches_csv(const TouchSet& touches);
TouchSet decode_touches_csv(std::string_view text);
void save_touches(const std::filesystem::path& path, const TouchSet& touches);
TouchSet load_touches(const std::filesystem::path& path);

// Probability mass within (pred - radius, pred + radius), per pixel.
Image confidence_map(const Volume& probability, const Image& prediction,
                     const DisparityHypotheses& hyps, double radius);

// 1 where confidence <= threshold.
Mask unconfident_mask(const Image& confidence, double threshold);

// Separable convolution with a unit-sum Gaussian truncated at 3 sigma, zero
// padding at the borders.
Image smooth_mask(const Mask& mask, double sigma);

// Smoothed unconfident mask of one view under `state`.
Image view_utility_map(const ModelState& state, const StereoFeatures& features,
                       const DisparityHypotheses& hyps, const SelectionConfig& cfg);

// Negated sum of the smoothed unconfident mask over every pixel of every view.
double surrogate_utility(const ModelState& state,
                         std::span<const StereoFeatures> views,
                         const DisparityHypotheses& hyps,
                         const SelectionConfig& cfg);

// Pixels that may be probed: valid GT, inside the stereo overlap, and not
// boundary when exclusion is on.
Mask probe_candidates(const SceneSample& sample, const SelectionConfig& cfg);

struct TuneResult {
  ModelState state;
  int steps = 0;
  bool converged = false;
  double entry_loss = 0.0;
  double exit_loss = 0.0;
  double entry_entropy = 0.0;  // mean over the tuned pixels
  double exit_entropy = 0.0;
};

// Entropy minimization at `pixels` with an L2 anchor to the entering
// prediction. Returns the lowest-loss state seen.
TuneResult entropy_tune(const ModelState& state, const StereoFeatures& features,
                        const DisparityHypotheses& hyps,
                        std::span<const int> pixels, const SelectionConfig& cfg);

// One greedy pick, recorded so the choice can be replayed.
struct SelectionStep {
  int view_index = 0;
  Touch touch;
  ModelState state;      // model whose smoothed mask produced the pick
  double utility = 0.0;  // smoothed mask value at the pick
  bool fallback = false; // mask was zero on every candidate
  int tune_steps = 0;
  bool tune_converged = false;
  double entropy_before = 0.0;
  double entropy_after = 0.0;
};

struct SelectionResult {
  TouchSet touches;
  std::vector<SelectionStep> trace;
  int fallbacks = 0;
  int unconverged_tunes = 0;
};

// Greedy pixel choosing: within each view pick the argmax of the current
// smoothed mask, then entropy-tune on every touch chosen so far in that
// view. The tuned model carries into the next view and is discarded at the
// end.
SelectionResult greedy_select(const ModelState& pretrained,
                              std::span<const SceneSample> views,
                              const DisparityHypotheses& hyps,
                              const SelectionConfig& cfg);

// Argmax over candidate pixels, ties to the first in row-major order.
// Returns -1 if there is no candidate.
int masked_argmax(const Image& values, const Mask& candidates);

TouchSet select_random(std::span<const SceneSample> views,
                       const SelectionConfig& cfg, std::uint64_t seed);
TouchSet select_lowest_confidence(const ModelState& pretrained,
                                  std::span<const SceneSample> views,
                                  const DisparityHypotheses& hyps,
                                  const SelectionConfig& cfg);
TouchSet select_object_centers(std::span<const SceneSample> views,
                               const SelectionConfig& cfg);

}  // namespace tstereo
