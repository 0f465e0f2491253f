#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tstereo/config.h"
#include "tstereo/evaluator.h"
#include "tstereo/finetuner.h"
#include "tstereo/probesim.h"
#include "tstereo/selector.h"
#include "tstereo/stereomodel.h"

namespace tstereo {

struct Dataset {
  std::vector<SceneSample> pretrain;    // diffuse only
  std::vector<SceneSample> validation;  // diffuse only
  std::vector<SceneSample> probing;     // probe_scenes x views_per_scene
  std::vector<SceneSample> eval;        // held-out transparent instances
};

// Scene ids are 1000 * split + index (split 1..4 in the order above), so
// touches and reports name scenes unambiguously.
Dataset generate_dataset(const ExperimentConfig& cfg);

DisparityHypotheses hypotheses_for(const ExperimentConfig& cfg);

// PCA-initialized state followed by dense supervised training.
PretrainResult pretrain_model(const ExperimentConfig& cfg, const Dataset& data);

// Quantile of diffuse-surface confidence over `scenes` under `state`.
double diffuse_confidence_quantile(const ModelState& state,
                                   std::span<const SceneSample> scenes,
                                   const DisparityHypotheses& hyps, double radius,
                                   double quantile);

// Selection settings with the unconfident threshold calibrated when asked.
SelectionConfig resolve_selection(const ExperimentConfig& cfg, const ModelState& pretrained,
                                  std::span<const SceneSample> validation);

struct SelectionOutcome {
  TouchSet touches;
  SelectionResult greedy;  // populated for the utility strategy only
};

SelectionOutcome select_touches(Strategy strategy, const ModelState& pretrained,
                                std::span<const SceneSample> probing,
                                const DisparityHypotheses& hyps, const SelectionConfig& sel,
                                std::uint64_t seed);

MetricReport evaluate_model(const ModelState& state, std::span<const SceneSample> scenes,
                            const DisparityHypotheses& hyps, bool include_boundary);

// One finetuned variant of the benchmark grid.
struct Variant {
  std::string label;
  Strategy strategy = Strategy::kUtility;
  TactileMode mode = TactileMode::kPatch;
  bool regularize = true;
};

// Strategy comparison rows plus the two utility ablations.
std::vector<Variant> benchmark_variants();
std::string variant_label(Strategy strategy, TactileMode mode, bool regularize);

struct SeedRun {
  std::uint64_t seed = 0;
  PretrainResult pretrain;
  MetricReport pretrained;
  ReportRows variants;  // in benchmark_variants() order
  SelectionResult greedy;
  double unconfident_threshold = 0.0;
  long probes_issued = 0;
  std::vector<std::string> diagnostics;
  double seconds = 0.0;
};

// Runs the whole pipeline in memory for one seed and every variant.
SeedRun run_benchmark_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                           const std::vector<Variant>& variants);

}  // namespace tstereo
