#include "tstereo/selector.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tstereo/io.h"
#include "tstereo/rng.h"

namespace tstereo {

void SelectionConfig::validate() const {
  if (!(confidence_radius > 0.0))
    throw std::invalid_argument("confidence radius must be positive");
  if (!(unconfident_threshold > 0.0 && unconfident_threshold < 1.0))
    throw std::invalid_argument("unconfident threshold must be in (0, 1)");
  if (!(smoothing_sigma > 0.0))
    throw std::invalid_argument("smoothing sigma must be positive");
  if (anchor_weight < 0.0) throw std::invalid_argument("anchor weight must be >= 0");
  if (touches_per_view < 1) throw std::invalid_argument("touches per view must be >= 1");
  if (surrogate_max_steps < 0) throw std::invalid_argument("surrogate steps must be >= 0");
  if (min_spacing < 0.0) throw std::invalid_argument("min spacing must be >= 0");
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kUtility: return "utility";
    case Strategy::kRandom: return "random";
    case Strategy::kConfidence: return "confidence";
    case Strategy::kOracleCenter: return "oracle_center";
  }
  return "unknown";
}

Strategy strategy_from_name(const std::string& name) {
  for (Strategy s : {Strategy::kUtility, Strategy::kRandom, Strategy::kConfidence,
                     Strategy::kOracleCenter})
    if (name == strategy_name(s)) return s;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

// ---- CSV ----

namespace {

constexpr const char* kTouchHeader = "scene_id,view_id,u,v,selection_step,strategy";

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

int parse_int(std::string_view field, std::size_t line_no) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw std::runtime_error("touch csv line " + std::to_string(line_no) +
                             ": bad integer '" + std::string(field) + "'");
  return v;
}

}  // namespace

std::string encode_touches_csv(const TouchSet& touches) {
  std::ostringstream out;
  out << kTouchHeader << "\n";
  for (const Touch& t : touches)
    out << t.scene_id << "," << t.view_id << "," << t.u << "," << t.v << ","
        << t.step << "," << strategy_name(t.strategy) << "\n";
  return out.str();
}

TouchSet decode_touches_csv(std::string_view text) {
  TouchSet out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      if (line != kTouchHeader)
        throw std::runtime_error("touch csv: unexpected header '" + std::string(line) + "'");
      header = false;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 6)
      throw std::runtime_error("touch csv line " + std::to_string(line_no) +
                               ": expected 6 fields");
    Touch t;
    t.scene_id = parse_int(f[0], line_no);
    t.view_id = parse_int(f[1], line_no);
    t.u = parse_int(f[2], line_no);
    t.v = parse_int(f[3], line_no);
    t.step = parse_int(f[4], line_no);
    t.strategy = strategy_from_name(std::string(f[5]));
    out.push_back(t);
  }
  if (header) throw std::runtime_error("touch csv: missing header");
  return out;
}

void save_touches(const std::filesystem::path& path, const TouchSet& touches) {
  write_file(path, encode_touches_csv(touches));
}

TouchSet load_touches(const std::filesystem::path& path) {
  return decode_touches_csv(read_file(path));
}

// ---- maps ----

Image confidence_map(const Volume& probability, const Image& prediction,
                     const DisparityHypotheses& hyps, double radius) {
  if (probability.depth() != hyps.size())
    throw std::invalid_argument("volume depth != hypothesis count");
  // The prediction is a rounded sum, so a hypothesis exactly `radius` away
  // in exact arithmetic can land a few ulps inside; keep it out.
  const double window = radius * (1.0 - 1e-12);
  Image out(probability.width(), probability.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto p = probability.pixel(i);
    const double f = prediction[i];
    double c = 0.0;
    for (int k = 0; k < hyps.size(); ++k)
      if (std::abs(hyps.values[k] - f) < window) c += p[k];
    out[i] = std::min(c, 1.0);
  }
  return out;
}

Mask unconfident_mask(const Image& confidence, double threshold) {
  Mask out(confidence.width(), confidence.height());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = confidence[i] <= threshold ? 1 : 0;
  return out;
}

Image smooth_mask(const Mask& mask, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    kernel[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + r];
  }
  for (double& k : kernel) k /= total;

  const int w = mask.width();
  const int h = mask.height();
  Image rows(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = std::max(-r, -x); i <= std::min(r, w - 1 - x); ++i)
        s += kernel[i + r] * mask.at(x + i, y);
      rows.at(x, y) = s;
    }
  }
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = std::max(-r, -y); i <= std::min(r, h - 1 - y); ++i)
        s += kernel[i + r] * rows.at(x, y + i);
      out.at(x, y) = s;
    }
  }
  return out;
}

Image view_utility_map(const ModelState& state, const StereoFeatures& features,
                       const DisparityHypotheses& hyps, const SelectionConfig& cfg) {
  const Inference inf = infer(features, state, hyps);
  const Image c = confidence_map(inf.probability, inf.disparity, hyps,
                                 cfg.confidence_radius);
  return smooth_mask(unconfident_mask(c, cfg.unconfident_threshold),
                     cfg.smoothing_sigma);
}

double surrogate_utility(const ModelState& state,
                         std::span<const StereoFeatures> views,
                         const DisparityHypotheses& hyps,
                         const SelectionConfig& cfg) {
  double total = 0.0;
  for (const auto& f : views)
    for (double m : view_utility_map(state, f, hyps, cfg).values()) total += m;
  return -total;
}

Mask probe_candidates(const SceneSample& sample, const SelectionConfig& cfg) {
  const double min_col =
      cfg.min_probe_column < 0.0 ? sample.rig.disparity_max : cfg.min_probe_column;
  Mask out(sample.width(), sample.height());
  for (int y = 0; y < sample.height(); ++y) {
    for (int x = 0; x < sample.width(); ++x) {
      const bool ok = x >= min_col && is_valid(sample.gt_disparity.at(x, y)) &&
                      !(cfg.exclude_boundary && sample.label(x, y) == Material::kBoundary);
      out.at(x, y) = ok ? 1 : 0;
    }
  }
  return out;
}

int masked_argmax(const Image& values, const Mask& candidates) {
  int best = -1;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!candidates[i]) continue;
    if (best < 0 || values[i] > values[static_cast<std::size_t>(best)])
      best = static_cast<int>(i);
  }
  return best;
}

// ---- surrogate tuning ----

namespace {

double mean_entropy_at(const Image& entropy, std::span<const int> pixels) {
  if (pixels.empty()) return 0.0;
  double s = 0.0;
  for (int p : pixels) s += entropy[static_cast<std::size_t>(p)];
  return s / static_cast<double>(pixels.size());
}

}  // namespace

TuneResult entropy_tune(const ModelState& state, const StereoFeatures& features,
                        const DisparityHypotheses& hyps,
                        std::span<const int> pixels, const SelectionConfig& cfg) {
  if (pixels.empty()) throw std::invalid_argument("entropy_tune needs touch pixels");
  const std::size_t n = static_cast<std::size_t>(features.width()) * features.height();
  for (int p : pixels)
    if (p < 0 || static_cast<std::size_t>(p) >= n)
      throw std::out_of_range("touch pixel outside the image");

  const Inference entry = infer(features, state, hyps);
  const Objective objective = entropy_objective(pixels, entry.disparity, cfg.anchor_weight);
  const EvalOptions options{cfg.threads};

  TuneResult result;
  result.state = state;
  result.state.role = ModelRole::kSurrogate;
  result.entry_entropy = mean_entropy_at(entropy_map(entry.probability), pixels);

  ModelState current = result.state;
  AdamMoments moments;
  double best = 0.0;
  double previous = 0.0;
  for (int step = 0;; ++step) {
    const LossGradient g = loss_gradients(current, features, hyps, objective, options);
    if (step == 0) {
      result.entry_loss = g.loss;
      best = g.loss;
    } else {
      if (g.loss < best) {
        best = g.loss;
        result.state = current;
      }
      if (std::abs(previous - g.loss) < cfg.surrogate_tolerance) {
        result.converged = true;
        break;
      }
    }
    if (step == cfg.surrogate_max_steps) break;
    previous = g.loss;
    apply_adam(current, g, moments, cfg.surrogate_adam);
    result.steps = step + 1;
  }
  result.exit_loss = best;
  result.exit_entropy = mean_entropy_at(
      entropy_map(infer(features, result.state, hyps).probability), pixels);
  return result;
}

// ---- greedy selection ----

namespace {

void require_candidates(const Mask& candidates, int needed, const SceneSample& s) {
  const long have = std::count(candidates.values().begin(), candidates.values().end(), 1);
  if (have < needed)
    throw std::runtime_error("view (scene " + std::to_string(s.scene_id) + ", view " +
                             std::to_string(s.view_id) + ") has " + std::to_string(have) +
                             " probe candidates, needs " + std::to_string(needed) +
                             " (short by " + std::to_string(needed - have) + ")");
}

Touch make_touch(const SceneSample& s, int pixel, int step, Strategy strategy) {
  return Touch{s.scene_id, s.view_id, pixel % s.width(), pixel / s.width(), step,
               strategy};
}

int lowest_confidence_pixel(const ModelState& state, const StereoFeatures& features,
                            const DisparityHypotheses& hyps, const Mask& candidates,
                            const SelectionConfig& cfg) {
  const Inference inf = infer(features, state, hyps);
  Image c = confidence_map(inf.probability, inf.disparity, hyps, cfg.confidence_radius);
  for (double& v : c.values()) v = -v;
  return masked_argmax(c, candidates);
}

}  // namespace

SelectionResult greedy_select(const ModelState& pretrained,
                              std::span<const SceneSample> views,
                              const DisparityHypotheses& hyps,
                              const SelectionConfig& cfg) {
  cfg.validate();
  if (views.empty()) throw std::invalid_argument("greedy_select needs at least one view");
  SelectionResult result;
  ModelState model = pretrained;
  for (std::size_t k = 0; k < views.size(); ++k) {
    const SceneSample& view = views[k];
    const StereoFeatures features = compute_features(view, model.descriptor);
    Mask candidates = probe_candidates(view, cfg);
    require_candidates(candidates, cfg.touches_per_view, view);
    std::vector<int> chosen;
    for (int i = 0; i < cfg.touches_per_view; ++i) {
      SelectionStep step;
      step.view_index = static_cast<int>(k);
      step.state = model;
      const Image utility = view_utility_map(model, features, hyps, cfg);
      int pick = masked_argmax(utility, candidates);
      if (utility[static_cast<std::size_t>(pick)] <= 0.0) {
        pick = lowest_confidence_pixel(model, features, hyps, candidates, cfg);
        step.fallback = true;
        ++result.fallbacks;
      }
      step.utility = utility[static_cast<std::size_t>(pick)];
      step.touch = make_touch(view, pick, i, Strategy::kUtility);
      candidates[static_cast<std::size_t>(pick)] = 0;
      chosen.push_back(pick);
      result.touches.push_back(step.touch);

      const bool last = k + 1 == views.size() && i + 1 == cfg.touches_per_view;
      if (!last) {
        const TuneResult tuned = entropy_tune(model, features, hyps, chosen, cfg);
        model = tuned.state;
        step.tune_steps = tuned.steps;
        step.tune_converged = tuned.converged;
        step.entropy_before = tuned.entry_entropy;
        step.entropy_after = tuned.exit_entropy;
        if (!tuned.converged) ++result.unconverged_tunes;
      }
      result.trace.push_back(std::move(step));
    }
  }
  return result;
}

// ---- baselines ----

TouchSet select_random(std::span<const SceneSample> views, const SelectionConfig& cfg,
                       std::uint64_t seed) {
  cfg.validate();
  TouchSet out;
  for (const SceneSample& view : views) {
    const Mask candidates = probe_candidates(view, cfg);
    require_candidates(candidates, cfg.touches_per_view, view);
    std::vector<int> pool;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i]) pool.push_back(static_cast<int>(i));
    std::mt19937_64 rng(mix_seed(seed, view.scene_id, view.view_id));
    for (int i = 0; i < cfg.touches_per_view; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back(make_touch(view, pool[i], i, Strategy::kRandom));
    }
  }
  return out;
}

TouchSet select_lowest_confidence(const ModelState& pretrained,
                                  std::span<const SceneSample> views,
                                  const DisparityHypotheses& hyps,
                                  const SelectionConfig& cfg) {
  cfg.validate();
  TouchSet out;
  for (const SceneSample& view : views) {
    const Mask candidates = probe_candidates(view, cfg);
    require_candidates(candidates, cfg.touches_per_view, view);
    const Inference inf = infer(compute_features(view, pretrained.descriptor), pretrained, hyps);
    const Image c = confidence_map(inf.probability, inf.disparity, hyps, cfg.confidence_radius);
    std::vector<int> order;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (candidates[i]) order.push_back(static_cast<int>(i));
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return c[a] < c[b]; });
    std::vector<int> accepted;
    const double min_sq = cfg.min_spacing * cfg.min_spacing;
    for (int p : order) {
      const int x = p % view.width(), y = p / view.width();
      bool far = true;
      for (int q : accepted) {
        const double dx = x - q % view.width(), dy = y - q / view.width();
        if (dx * dx + dy * dy < min_sq) {
          far = false;
          break;
        }
      }
      if (!far) continue;
      out.push_back(make_touch(view, p, static_cast<int>(accepted.size()),
                               Strategy::kConfidence));
      accepted.push_back(p);
      if (static_cast<int>(accepted.size()) == cfg.touches_per_view) break;
    }
    if (static_cast<int>(accepted.size()) < cfg.touches_per_view)
      throw std::runtime_error(
          "confidence baseline: view (scene " + std::to_string(view.scene_id) + ", view " +
          std::to_string(view.view_id) + ") fits only " + std::to_string(accepted.size()) +
          " touches at spacing " + std::to_string(cfg.min_spacing));
  }
  return out;
}

namespace {

// 4-connected components of `in`, each as a row-major list of pixel indices.
std::vector<std::vector<int>> components(const Mask& in) {
  const int w = in.width(), h = in.height();
  std::vector<int> label(in.size(), -1);
  std::vector<std::vector<int>> out;
  for (std::size_t s = 0; s < in.size(); ++s) {
    if (!in[s] || label[s] >= 0) continue;
    std::vector<int> comp, stack{static_cast<int>(s)};
    label[s] = static_cast<int>(out.size());
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.push_back(p);
      const int x = p % w, y = p / w;
      const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= w || n[1] < 0 || n[1] >= h) continue;
        const int q = n[1] * w + n[0];
        if (in[q] && label[q] < 0) {
          label[q] = label[s];
          stack.push_back(q);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

}  // namespace

TouchSet select_object_centers(std::span<const SceneSample> views,
                               const SelectionConfig& cfg) {
  cfg.validate();
  TouchSet out;
  for (const SceneSample& view : views) {
    const int w = view.width();
    Mask transparent(w, view.height());
    for (std::size_t i = 0; i < transparent.size(); ++i)
      transparent[i] = static_cast<Material>(view.material[i]) == Material::kTransparent;
    auto comps = components(transparent);
    std::stable_sort(comps.begin(), comps.end(),
                     [](const auto& a, const auto& b) { return a.size() > b.size(); });

    // Per component: candidate pixels ordered by distance to the centroid.
    const Mask candidates = probe_candidates(view, cfg);
    std::vector<std::vector<int>> queues;
    for (const auto& comp : comps) {
      double cx = 0.0, cy = 0.0;
      for (int p : comp) {
        cx += p % w;
        cy += p / w;
      }
      cx /= static_cast<double>(comp.size());
      cy /= static_cast<double>(comp.size());
      std::vector<int> q;
      for (int p : comp)
        if (candidates[p]) q.push_back(p);
      auto dist = [&](int p) {
        const double dx = p % w - cx, dy = p / w - cy;
        return dx * dx + dy * dy;
      };
      std::stable_sort(q.begin(), q.end(), [&](int a, int b) { return dist(a) < dist(b); });
      if (!q.empty()) queues.push_back(std::move(q));
    }
    std::size_t available = 0;
    for (const auto& q : queues) available += q.size();
    if (available < static_cast<std::size_t>(cfg.touches_per_view))
      throw std::runtime_error("oracle_center: view (scene " + std::to_string(view.scene_id) +
                               ", view " + std::to_string(view.view_id) + ") has " +
                               std::to_string(available) +
                               " transparent candidates, needs " +
                               std::to_string(cfg.touches_per_view));
    std::vector<std::size_t> next(queues.size(), 0);
    int step = 0;
    for (std::size_t c = 0; step < cfg.touches_per_view; c = (c + 1) % queues.size()) {
      if (next[c] >= queues[c].size()) continue;
      out.push_back(make_touch(view, queues[c][next[c]++], step++, Strategy::kOracleCenter));
    }
  }
  return out;
}

}  // namespace tstereo
