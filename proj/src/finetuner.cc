#include "tstereo/finetuner.h"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "tstereo/selector.h"

namespace tstereo {

const char* tactile_mode_name(TactileMode m) {
  return m == TactileMode::kPatch ? "patch" : "pixel";
}

TactileMode tactile_mode_from_name(const std::string& name) {
  if (name == "patch") return TactileMode::kPatch;
  if (name == "pixel") return TactileMode::kPixel;
  throw std::invalid_argument("unknown tactile mode '" + name + "'");
}

void FinetuneConfig::validate() const {
  if (patch_radius < 0) throw std::invalid_argument("patch radius must be >= 0");
  if (!(patch_sigma > 0.0)) throw std::invalid_argument("patch sigma must be positive");
  if (!(pseudo_threshold > 0.0 && pseudo_threshold < 1.0))
    throw std::invalid_argument("pseudo-label threshold must be in (0, 1)");
  if (tactile_weight < 0.0 || regularization_weight < 0.0)
    throw std::invalid_argument("loss weights must be >= 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(divergence_factor > 1.0)) throw std::invalid_argument("divergence factor must be > 1");
}

TactileLabel build_tactile_label(const ProbeResult& probe, const Image& prior,
                                 const FinetuneConfig& cfg) {
  if (!probe.success) throw std::invalid_argument("cannot label a failed probe");
  const int u = probe.touch.u, v = probe.touch.v;
  if (!prior.contains(u, v)) throw std::out_of_range("touch outside the prior map");
  TactileLabel label;
  label.touch = probe.touch;
  label.label_disparity = probe.derived_disparity_px;
  const double d = label.label_disparity;
  const double inv = 1.0 / (2.0 * cfg.patch_sigma * cfg.patch_sigma);
  label.patch.push_back({u, v, 1.0, d});
  const int p = cfg.patch_radius;
  for (int y = v - p; y <= v + p; ++y) {
    for (int x = u - p; x <= u + p; ++x) {
      if ((x == u && y == v) || !prior.contains(x, y)) continue;
      const double r2 = static_cast<double>((x - u) * (x - u) + (y - v) * (y - v));
      const double g = std::exp(-r2 * inv);
      label.patch.push_back({x, y, g, g * d + (1.0 - g) * prior.at(x, y)});
    }
  }
  return label;
}

namespace {

template <typename Fn>
void for_each_target(std::span<const TactileLabel> labels, TactileMode mode, Fn&& fn) {
  for (const auto& l : labels) {
    if (mode == TactileMode::kPixel) {
      fn(l.patch.front());
    } else {
      for (const auto& t : l.patch) fn(t);
    }
  }
}

}  // namespace

double tactile_loss(const Image& prediction, std::span<const TactileLabel> labels,
                    const FinetuneConfig& cfg) {
  if (labels.empty()) throw std::invalid_argument("tactile loss needs at least one label");
  double sum = 0.0;
  long n = 0;
  for_each_target(labels, cfg.mode, [&](const PatchTarget& t) {
    sum += smooth_l1(prediction.at(t.x, t.y) - t.target, cfg.smooth_l1_beta);
    ++n;
  });
  return sum / static_cast<double>(n);
}

Objective tactile_objective(int width, int height, std::span<const TactileLabel> labels,
                            const FinetuneConfig& cfg) {
  if (labels.empty()) throw std::invalid_argument("tactile loss needs at least one label");
  Objective obj;
  obj.width = width;
  obj.height = height;
  obj.smooth_l1_beta = cfg.smooth_l1_beta;
  for_each_target(labels, cfg.mode, [&](const PatchTarget& t) {
    obj.terms.push_back({t.y * width + t.x, t.target, 1.0, Penalty::kSmoothL1});
  });
  const double w = 1.0 / static_cast<double>(obj.terms.size());
  for (auto& t : obj.terms) t.weight = w;
  return obj;
}

Mask pseudo_mask(const Image& confidence, double threshold) {
  Mask out(confidence.width(), confidence.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = confidence[i] >= threshold ? 1 : 0;
  return out;
}

double regularization_loss(const Image& prediction, const Image& prior, const Mask& mask,
                           double beta) {
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    sum += smooth_l1(prediction[i] - prior[i], beta);
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

Objective regularization_objective(const Image& prior, const Mask& mask, double beta) {
  Image target(prior.width(), prior.height(), kInvalidDisparity);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) target[i] = prior[i];
  return dense_smooth_l1_objective(target, beta);
}

FinetuneResult finetune(const ModelState& pretrained, std::span<const SceneSample> views,
                        std::span<const ProbeResult> probes,
                        const DisparityHypotheses& hyps, const FinetuneConfig& cfg) {
  cfg.validate();
  pretrained.validate();
  if (pretrained.role != ModelRole::kPretrained)
    throw std::invalid_argument(std::string("finetune expects a pretrained model, got ") +
                                role_name(pretrained.role));

  struct ViewData {
    StereoFeatures features;
    Objective tactile;   // unweighted, empty when the view has no labels
    Objective regular;   // unweighted
    Objective combined;
  };
  FinetuneResult result;
  result.state = pretrained;
  result.state.role = ModelRole::kFinetuned;

  std::vector<ViewData> data;
  for (const SceneSample& view : views) {
    ViewData vd;
    vd.features = compute_features(view, pretrained.descriptor);
    const Inference prior = infer(vd.features, pretrained, hyps);
    const Image conf =
        confidence_map(prior.probability, prior.disparity, hyps, cfg.confidence_radius);
    const Mask mp = pseudo_mask(conf, cfg.pseudo_threshold);
    for (unsigned char m : mp.values()) result.pseudo_pixels += m;
    std::vector<TactileLabel> labels;
    for (const ProbeResult& p : probes)
      if (p.success && p.touch.scene_id == view.scene_id && p.touch.view_id == view.view_id)
        labels.push_back(build_tactile_label(p, prior.disparity, cfg));
    result.labels_used += static_cast<int>(labels.size());
    vd.regular = regularization_objective(prior.disparity, mp, cfg.smooth_l1_beta);
    vd.combined.width = view.width();
    vd.combined.height = view.height();
    vd.combined.smooth_l1_beta = cfg.smooth_l1_beta;
    if (!labels.empty()) {
      vd.tactile = tactile_objective(view.width(), view.height(), labels, cfg);
      if (cfg.tactile_weight > 0.0) vd.combined.append(vd.tactile, cfg.tactile_weight);
    }
    if (cfg.regularization_weight > 0.0)
      vd.combined.append(vd.regular, cfg.regularization_weight);
    data.push_back(std::move(vd));
  }
  if (result.labels_used == 0)
    throw std::invalid_argument("finetune needs at least one successful probe on the given views");

  const EvalOptions options{cfg.threads};
  AdamMoments moments;
  double initial = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    FinetuneLogEntry entry;
    entry.epoch = epoch;
    for (const ViewData& vd : data) {
      if (vd.combined.empty()) continue;
      const double tac =
          vd.tactile.empty() ? 0.0
                             : evaluate_loss(result.state, vd.features, hyps, vd.tactile, options);
      entry.tactile += tac;
      const LossGradient g =
          loss_gradients(result.state, vd.features, hyps, vd.combined, options);
      entry.combined += g.loss;
      // The regularization part is recovered from the combined loss rather
      // than paying for a second dense pass.
      if (cfg.regularization_weight > 0.0) {
        entry.regularization += (g.loss - cfg.tactile_weight * tac) / cfg.regularization_weight;
      } else if (!vd.regular.empty()) {
        entry.regularization += evaluate_loss(result.state, vd.features, hyps, vd.regular, options);
      }
      if (!std::isfinite(g.loss)) break;
      apply_adam(result.state, g, moments, cfg.adam);
    }
    const double n = static_cast<double>(data.size());
    entry.tactile /= n;
    entry.regularization /= n;
    entry.combined /= n;
    result.log.push_back(entry);
    if (initial < 0.0) initial = entry.combined;
    if (!std::isfinite(entry.combined) ||
        (initial > 0.0 && entry.combined > cfg.divergence_factor * initial)) {
      result.diverged = true;
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "finetune diverged at epoch %d: loss %.6g exceeds %.3g x initial %.6g",
                    epoch, entry.combined, cfg.divergence_factor, initial);
      result.diagnostic = buf;
      break;
    }
  }
  return result;
}

std::string encode_finetune_log_csv(const std::vector<FinetuneLogEntry>& log) {
  std::ostringstream out;
  out << "epoch,tactile_loss,regularization_loss,combined_loss\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.tactile,
                  e.regularization, e.combined);
    out << buf;
  }
  return out.str();
}

}  // namespace tstereo
