#include "tstereo/probesim.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tstereo/io.h"
#include "tstereo/rng.h"

namespace tstereo {

const char* noise_model_name(NoiseModel m) {
  switch (m) {
    case NoiseModel::kNone: return "none";
    case NoiseModel::kTruncatedNormal: return "truncated_normal";
    case NoiseModel::kUniform: return "uniform";
  }
  return "unknown";
}

NoiseModel noise_model_from_name(const std::string& name) {
  for (NoiseModel m : {NoiseModel::kNone, NoiseModel::kTruncatedNormal, NoiseModel::kUniform})
    if (name == noise_model_name(m)) return m;
  throw std::invalid_argument("unknown noise model '" + name + "'");
}

void ProbeConfig::validate() const {
  if (!(noise_sigma_m >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (!(noise_bound_m >= 0.0)) throw std::invalid_argument("noise bound must be >= 0");
}

double probe_noise(const ProbeConfig& cfg, const Touch& t) {
  const double bound = cfg.noise_bound_m;
  if (cfg.noise_model == NoiseModel::kNone || bound == 0.0) return 0.0;
  std::mt19937_64 rng(mix_seed(cfg.seed, t.scene_id, t.view_id, t.u, t.v));
  double eta = 0.0;
  if (cfg.noise_model == NoiseModel::kUniform) {
    eta = std::uniform_real_distribution<double>(-bound, bound)(rng);
  } else {
    if (cfg.noise_sigma_m == 0.0) return 0.0;
    std::normal_distribution<double> normal(0.0, cfg.noise_sigma_m);
    // Rejection keeps the shape of a truncated normal; after 64 misses (only
    // reachable when sigma >> bound) fall through to the clip.
    for (int i = 0; i < 64; ++i) {
      eta = normal(rng);
      if (std::abs(eta) <= bound) break;
    }
  }
  return std::clamp(eta, -bound, bound);
}

ProbeResult probe(const SceneSample& sample, const Touch& touch, const ProbeConfig& cfg) {
  ProbeResult r;
  r.touch = touch;
  if (!sample.gt_disparity.contains(touch.u, touch.v)) return r;
  const double gt = sample.gt_disparity.at(touch.u, touch.v);
  if (!is_valid(gt) || gt <= 0.0) return r;
  r.measured_depth_m = disparity_to_depth(gt, sample.rig) + probe_noise(cfg, touch);
  if (!(r.measured_depth_m > 0.0)) return r;
  r.derived_disparity_px = depth_to_disparity(r.measured_depth_m, sample.rig);
  r.success = true;
  return r;
}

std::vector<ProbeResult> probe_batch(std::span<const SceneSample> views,
                                     const TouchSet& touches, const ProbeConfig& cfg,
                                     ProbeCounter* counter) {
  cfg.validate();
  std::vector<ProbeResult> out;
  out.reserve(touches.size());
  for (const Touch& t : touches) {
    const SceneSample* match = nullptr;
    for (const auto& v : views)
      if (v.scene_id == t.scene_id && v.view_id == t.view_id) match = &v;
    if (!match)
      throw std::invalid_argument("touch names unknown view (scene " +
                                  std::to_string(t.scene_id) + ", view " +
                                  std::to_string(t.view_id) + ")");
    out.push_back(probe(*match, t, cfg));
    if (counter) counter->add();
  }
  return out;
}

// ---- CSV ----

namespace {

constexpr const char* kProbeHeader =
    "scene_id,view_id,u,v,selection_step,strategy,measured_depth_m,derived_disparity_px,success";

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(std::string_view s, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::runtime_error("probe csv line " + std::to_string(line_no) + ": bad number '" +
                             std::string(s) + "'");
  return v;
}

}  // namespace

std::string encode_probes_csv(const std::vector<ProbeResult>& results) {
  std::ostringstream out;
  out << kProbeHeader << "\n";
  for (const auto& r : results) {
    const Touch& t = r.touch;
    out << t.scene_id << "," << t.view_id << "," << t.u << "," << t.v << "," << t.step
        << "," << strategy_name(t.strategy) << "," << format_real(r.measured_depth_m) << ","
        << format_real(r.derived_disparity_px) << "," << (r.success ? 1 : 0) << "\n";
  }
  return out.str();
}

std::vector<ProbeResult> decode_probes_csv(std::string_view text) {
  // The first six columns are exactly a touch row.
  const std::size_t first_nl = text.find('\n');
  std::string_view header = text.substr(0, first_nl);
  if (!header.empty() && header.back() == '\r') header.remove_suffix(1);
  if (header != kProbeHeader)
    throw std::runtime_error("probe csv: unexpected header '" + std::string(header) + "'");

  std::string touch_rows = "scene_id,view_id,u,v,selection_step,strategy\n";
  std::vector<std::pair<std::string_view, std::size_t>> tails;
  std::size_t pos = first_nl == std::string_view::npos ? text.size() : first_nl + 1;
  std::size_t line_no = 1;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::size_t cut = 0;
    for (int commas = 0; commas < 6; ++commas) {
      cut = line.find(',', cut);
      if (cut == std::string_view::npos)
        throw std::runtime_error("probe csv line " + std::to_string(line_no) +
                                 ": expected 9 fields");
      ++cut;
    }
    touch_rows.append(line.substr(0, cut - 1));
    touch_rows.push_back('\n');
    tails.emplace_back(line.substr(cut), line_no);
  }
  const TouchSet touches = decode_touches_csv(touch_rows);
  std::vector<ProbeResult> out;
  for (std::size_t i = 0; i < touches.size(); ++i) {
    const auto [tail, ln] = tails[i];
    const std::size_t c1 = tail.find(',');
    const std::size_t c2 = c1 == std::string_view::npos ? c1 : tail.find(',', c1 + 1);
    if (c2 == std::string_view::npos || tail.find(',', c2 + 1) != std::string_view::npos)
      throw std::runtime_error("probe csv line " + std::to_string(ln) + ": expected 9 fields");
    ProbeResult r;
    r.touch = touches[i];
    r.measured_depth_m = parse_real(tail.substr(0, c1), ln);
    r.derived_disparity_px = parse_real(tail.substr(c1 + 1, c2 - c1 - 1), ln);
    const std::string_view flag = tail.substr(c2 + 1);
    if (flag != "0" && flag != "1")
      throw std::runtime_error("probe csv line " + std::to_string(ln) + ": bad success flag");
    r.success = flag == "1";
    out.push_back(r);
  }
  return out;
}

void save_probes(const std::filesystem::path& path, const std::vector<ProbeResult>& results) {
  write_file(path, encode_probes_csv(results));
}

std::vector<ProbeResult> load_probes(const std::filesystem::path& path) {
  return decode_probes_csv(read_file(path));
}

}  // namespace tstereo
