#include "tstereo/experiment.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>

#include "tstereo/rng.h"

namespace tstereo {

namespace {

enum Split : int { kPretrainSplit = 1, kValidationSplit = 2, kProbeSplit = 3, kEvalSplit = 4 };

SceneSample make_scene(std::uint64_t seed, Split split, int index, const SceneConfig& cfg) {
  SceneSample s = generate_scene(mix_seed(seed, split, index), cfg);
  s.scene_id = 1000 * split + index;
  return s;
}

}  // namespace

DisparityHypotheses hypotheses_for(const ExperimentConfig& cfg) {
  return DisparityHypotheses::for_rig(cfg.scene.rig);
}

Dataset generate_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset d;
  SceneConfig diffuse = cfg.scene;
  diffuse.num_diffuse = cfg.pretrain_diffuse_objects;
  diffuse.num_transparent = 0;
  for (int i = 0; i < cfg.pretrain_scenes; ++i)
    d.pretrain.push_back(make_scene(cfg.seed, kPretrainSplit, i, diffuse));
  for (int i = 0; i < cfg.validation_scenes; ++i)
    d.validation.push_back(make_scene(cfg.seed, kValidationSplit, i, diffuse));

  SceneConfig probing = cfg.scene;
  probing.transparent_classes = cfg.probe_transparent_classes;
  for (int i = 0; i < cfg.probe_scenes; ++i) {
    for (int v = 0; v < cfg.views_per_scene; ++v) {
      probing.view_id = v;
      d.probing.push_back(make_scene(cfg.seed, kProbeSplit, i, probing));
    }
  }
  for (int i = 0; i < cfg.eval_scenes; ++i)
    d.eval.push_back(make_scene(cfg.seed, kEvalSplit, i, cfg.scene));
  return d;
}

PretrainResult pretrain_model(const ExperimentConfig& cfg, const Dataset& data) {
  ModelState init = pca_state(data.pretrain, cfg.embed_dim, cfg.descriptor, cfg.init_scale,
                              cfg.init_temperature);
  PretrainConfig pc = cfg.pretrain;
  pc.threads = cfg.threads;
  return pretrain(std::move(init), data.pretrain, data.validation, hypotheses_for(cfg), pc);
}

double diffuse_confidence_quantile(const ModelState& state,
                                   std::span<const SceneSample> scenes,
                                   const DisparityHypotheses& hyps, double radius,
                                   double quantile) {
  std::vector<double> values;
  for (const auto& s : scenes) {
    const Inference inf = infer(compute_features(s, state.descriptor), state, hyps);
    const Image c = confidence_map(inf.probability, inf.disparity, hyps, radius);
    for (int y = 0; y < s.height(); ++y)
      for (int x = 0; x < s.width(); ++x)
        if (s.label(x, y) == Material::kDiffuse) values.push_back(c.at(x, y));
  }
  if (values.empty()) throw std::runtime_error("no diffuse pixels to calibrate on");
  std::sort(values.begin(), values.end());
  const auto k = static_cast<std::size_t>(
      std::floor(quantile * static_cast<double>(values.size() - 1)));
  return values[k];
}

SelectionConfig resolve_selection(const ExperimentConfig& cfg, const ModelState& pretrained,
                                  std::span<const SceneSample> validation) {
  SelectionConfig sel = cfg.selection;
  sel.threads = cfg.threads;
  if (cfg.calibrate_unconfident_threshold) {
    const double q = diffuse_confidence_quantile(pretrained, validation, hypotheses_for(cfg),
                                                 sel.confidence_radius,
                                                 cfg.unconfident_quantile);
    // The mask needs a threshold strictly inside (0, 1).
    sel.unconfident_threshold = std::clamp(q, 1e-12, std::nextafter(1.0, 0.0));
  }
  return sel;
}

SelectionOutcome select_touches(Strategy strategy, const ModelState& pretrained,
                                std::span<const SceneSample> probing,
                                const DisparityHypotheses& hyps, const SelectionConfig& sel,
                                std::uint64_t seed) {
  SelectionOutcome out;
  switch (strategy) {
    case Strategy::kUtility:
      out.greedy = greedy_select(pretrained, probing, hyps, sel);
      out.touches = out.greedy.touches;
      break;
    case Strategy::kRandom:
      out.touches = select_random(probing, sel, seed);
      break;
    case Strategy::kConfidence:
      out.touches = select_lowest_confidence(pretrained, probing, hyps, sel);
      break;
    case Strategy::kOracleCenter:
      out.touches = select_object_centers(probing, sel);
      break;
  }
  return out;
}

MetricReport evaluate_model(const ModelState& state, std::span<const SceneSample> scenes,
                            const DisparityHypotheses& hyps, bool include_boundary) {
  MetricAccumulator acc(include_boundary);
  for (const auto& s : scenes)
    acc.add(infer(compute_features(s, state.descriptor), state, hyps).disparity, s);
  return acc.report();
}

std::string variant_label(Strategy strategy, TactileMode mode, bool regularize) {
  std::string label = strategy_name(strategy);
  if (mode == TactileMode::kPixel) label += "-pixel";
  if (!regularize) label += "-noreg";
  return label;
}

std::vector<Variant> benchmark_variants() {
  std::vector<Variant> out;
  for (Strategy s : {Strategy::kUtility, Strategy::kRandom, Strategy::kConfidence,
                     Strategy::kOracleCenter})
    out.push_back({variant_label(s, TactileMode::kPatch, true), s, TactileMode::kPatch, true});
  out.push_back({variant_label(Strategy::kUtility, TactileMode::kPixel, true),
                 Strategy::kUtility, TactileMode::kPixel, true});
  out.push_back({variant_label(Strategy::kUtility, TactileMode::kPatch, false),
                 Strategy::kUtility, TactileMode::kPatch, false});
  return out;
}

SeedRun run_benchmark_seed(const ExperimentConfig& base, std::uint64_t seed,
                           const std::vector<Variant>& variants) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = base;
  cfg.seed = seed;
  cfg.probe.seed = mix_seed(seed, 0x9b0be);
  const DisparityHypotheses hyps = hypotheses_for(cfg);
  const Dataset data = generate_dataset(cfg);

  SeedRun run;
  run.seed = seed;
  run.pretrain = pretrain_model(cfg, data);
  if (!run.pretrain.reached_target)
    run.diagnostics.push_back("pretraining stopped at validation EPE " +
                              std::to_string(run.pretrain.validation_epe) + " above target " +
                              std::to_string(cfg.pretrain.target_epe));
  const ModelState& pretrained = run.pretrain.state;
  run.pretrained = evaluate_model(pretrained, data.eval, hyps, cfg.include_boundary);

  const SelectionConfig sel = resolve_selection(cfg, pretrained, data.validation);
  run.unconfident_threshold = sel.unconfident_threshold;

  std::map<Strategy, std::vector<ProbeResult>> probes;
  ProbeCounter counter;
  for (const Variant& v : variants) {
    if (!probes.count(v.strategy)) {
      SelectionOutcome chosen =
          select_touches(v.strategy, pretrained, data.probing, hyps, sel, mix_seed(seed, 0x5e1));
      if (v.strategy == Strategy::kUtility) run.greedy = std::move(chosen.greedy);
      probes[v.strategy] = probe_batch(data.probing, chosen.touches, cfg.probe, &counter);
    }
    FinetuneConfig fc = cfg.finetune;
    fc.mode = v.mode;
    fc.threads = cfg.threads;
    if (!v.regularize) fc.regularization_weight = 0.0;
    const FinetuneResult ft = finetune(pretrained, data.probing, probes[v.strategy], hyps, fc);
    if (ft.diverged) run.diagnostics.push_back(v.label + ": " + ft.diagnostic);
    run.variants.emplace_back(v.label,
                              evaluate_model(ft.state, data.eval, hyps, cfg.include_boundary));
  }
  run.probes_issued = counter.count();
  run.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

}  // namespace tstereo
