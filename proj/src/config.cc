#include "tstereo/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <type_traits>

#include "tstereo/io.h"

namespace tstereo {

// ---- ConfigMap ----

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

constexpr int kMaxIncludeDepth = 8;

}  // namespace

ConfigMap ConfigMap::parse(std::string_view text, const std::filesystem::path& base_dir) {
  ConfigMap map;
  map.parse_into(text, base_dir, 0, "<config>");
  return map;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  ConfigMap map;
  map.parse_into(text, path.parent_path(), 0, path.string());
  return map;
}

void ConfigMap::parse_into(std::string_view text, const std::filesystem::path& base_dir,
                           int depth, const std::string& origin) {
  if (depth > kMaxIncludeDepth) throw ConfigError(origin + ": includes nested too deeply");
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.substr(0, 8) == "include " || line.substr(0, 8) == "include\t") {
      const std::string_view target = trim(line.substr(8));
      if (target.empty()) throw ConfigError(where + ": include needs a path");
      std::filesystem::path p(target);
      if (p.is_relative()) p = base_dir / p;
      std::string sub;
      try {
        sub = read_file(p);
      } catch (const std::exception&) {
        throw ConfigError(where + ": cannot read include '" + p.string() + "'");
      }
      parse_into(sub, p.parent_path(), depth + 1, p.string());
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(where + ": expected 'key = value', got '" + std::string(line) + "'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    entries_[key] = value;
  }
}

const std::string& ConfigMap::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

// ---- value conversion ----

namespace {

std::string show(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string show(int v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

double read_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  return v;
}

long long read_integer(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
  return v;
}

bool read_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
}

std::vector<int> read_int_list(const std::string& key, const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    const std::string item(trim(std::string_view(s).substr(start, comma - start)));
    out.push_back(static_cast<int>(read_integer(key, item)));
    start = comma + 1;
  }
  return out;
}

void assign(double& m, const std::string& k, const std::string& v) { m = read_double(k, v); }
void assign(bool& m, const std::string& k, const std::string& v) { m = read_bool(k, v); }
void assign(int& m, const std::string& k, const std::string& v) {
  m = static_cast<int>(read_integer(k, v));
}
void assign(std::vector<int>& m, const std::string& k, const std::string& v) {
  m = read_int_list(k, v);
}

template <typename Fn>
auto wrap(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

struct Binding {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
};

#define TS_BIND(member)                                                                     \
  Binding {                                                                                 \
    [](const ExperimentConfig& c) { return show(c.member); },                              \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {              \
          assign(c.member, k, v);                                                           \
        }                                                                                   \
  }

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> t;
    t["seed"] = {[](const ExperimentConfig& c) { return std::to_string(c.seed); },
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   const long long s = read_integer(k, v);
                   if (s < 0) throw ConfigError("config key 'seed': must be >= 0");
                   c.seed = static_cast<std::uint64_t>(s);
                 }};
    t["threads"] = TS_BIND(threads);

    t["rig.focal_px"] = TS_BIND(scene.rig.focal_px);
    t["rig.baseline_m"] = TS_BIND(scene.rig.baseline_m);
    t["rig.width"] = TS_BIND(scene.rig.width);
    t["rig.height"] = TS_BIND(scene.rig.height);
    t["rig.disparity_min"] = TS_BIND(scene.rig.disparity_min);
    t["rig.disparity_max"] = TS_BIND(scene.rig.disparity_max);

    t["scene.background_disparity_min"] = TS_BIND(scene.background_disparity_min);
    t["scene.background_disparity_max"] = TS_BIND(scene.background_disparity_max);
    t["scene.object_disparity_min"] = TS_BIND(scene.object_disparity_min);
    t["scene.object_disparity_max"] = TS_BIND(scene.object_disparity_max);
    t["scene.num_diffuse"] = TS_BIND(scene.num_diffuse);
    t["scene.num_transparent"] = TS_BIND(scene.num_transparent);
    t["scene.object_half_size_min"] = TS_BIND(scene.object_half_size_min);
    t["scene.object_half_size_max"] = TS_BIND(scene.object_half_size_max);
    t["scene.diffuse_classes"] = TS_BIND(scene.diffuse_classes);
    t["scene.transparent_classes"] = TS_BIND(scene.transparent_classes);
    t["scene.transparent_blend"] = TS_BIND(scene.transparent_blend);
    t["scene.refraction_octaves"] = TS_BIND(scene.refraction_octaves);
    t["scene.boundary_width"] = TS_BIND(scene.boundary_width);
    t["scene.view_jitter_px"] = TS_BIND(scene.view_jitter_px);
    t["scene.view_disparity_jitter"] = TS_BIND(scene.view_disparity_jitter);
    t["scene.background_texture.octaves"] = TS_BIND(scene.background_texture.octaves);
    t["scene.background_texture.base_cell"] = TS_BIND(scene.background_texture.base_cell);
    t["scene.background_texture.persistence"] = TS_BIND(scene.background_texture.persistence);
    t["scene.object_texture.octaves"] = TS_BIND(scene.object_texture.octaves);
    t["scene.object_texture.base_cell"] = TS_BIND(scene.object_texture.base_cell);
    t["scene.object_texture.persistence"] = TS_BIND(scene.object_texture.persistence);
    t["scene.surface_texture.octaves"] = TS_BIND(scene.surface_texture.octaves);
    t["scene.surface_texture.base_cell"] = TS_BIND(scene.surface_texture.base_cell);
    t["scene.surface_texture.persistence"] = TS_BIND(scene.surface_texture.persistence);

    t["data.pretrain_scenes"] = TS_BIND(pretrain_scenes);
    t["data.validation_scenes"] = TS_BIND(validation_scenes);
    t["data.pretrain_diffuse_objects"] = TS_BIND(pretrain_diffuse_objects);
    t["data.probe_scenes"] = TS_BIND(probe_scenes);
    t["data.views_per_scene"] = TS_BIND(views_per_scene);
    t["data.eval_scenes"] = TS_BIND(eval_scenes);
    t["data.probe_transparent_classes"] = TS_BIND(probe_transparent_classes);

    t["model.embed_dim"] = TS_BIND(embed_dim);
    t["model.patch_radius"] = TS_BIND(descriptor.patch_radius);
    t["model.normalize"] = TS_BIND(descriptor.normalize);
    t["model.init_scale"] = TS_BIND(init_scale);
    t["model.init_temperature"] = TS_BIND(init_temperature);

    t["pretrain.lr"] = TS_BIND(pretrain.adam.learning_rate);
    t["pretrain.max_epochs"] = TS_BIND(pretrain.max_epochs);
    t["pretrain.target_epe"] = TS_BIND(pretrain.target_epe);

    t["select.strategy"] = {
        [](const ExperimentConfig& c) { return std::string(strategy_name(c.strategy)); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.strategy = wrap(k, [&] { return strategy_from_name(v); });
        }};
    t["select.epsilon"] = TS_BIND(selection.confidence_radius);
    t["select.c1"] = {
        [](const ExperimentConfig& c) {
          return c.calibrate_unconfident_threshold ? std::string("auto")
                                                   : show(c.selection.unconfident_threshold);
        },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "auto") {
            c.calibrate_unconfident_threshold = true;
          } else {
            c.calibrate_unconfident_threshold = false;
            c.selection.unconfident_threshold = read_double(k, v);
          }
        }};
    t["select.c1_quantile"] = TS_BIND(unconfident_quantile);
    t["select.sigma_u"] = TS_BIND(selection.smoothing_sigma);
    t["select.lambda_l2"] = TS_BIND(selection.anchor_weight);
    t["select.lr"] = TS_BIND(selection.surrogate_adam.learning_rate);
    t["select.tolerance"] = TS_BIND(selection.surrogate_tolerance);
    t["select.max_steps"] = TS_BIND(selection.surrogate_max_steps);
    t["select.touches_per_view"] = TS_BIND(selection.touches_per_view);
    t["select.min_spacing"] = TS_BIND(selection.min_spacing);
    t["select.exclude_boundary"] = TS_BIND(selection.exclude_boundary);
    t["select.min_probe_column"] = TS_BIND(selection.min_probe_column);

    t["probe.noise_model"] = {
        [](const ExperimentConfig& c) { return std::string(noise_model_name(c.probe.noise_model)); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.probe.noise_model = wrap(k, [&] { return noise_model_from_name(v); });
        }};
    t["probe.sigma_m"] = TS_BIND(probe.noise_sigma_m);
    t["probe.bound_m"] = TS_BIND(probe.noise_bound_m);

    t["finetune.lambda_t"] = TS_BIND(finetune.tactile_weight);
    t["finetune.lambda_r"] = TS_BIND(finetune.regularization_weight);
    t["finetune.patch_radius"] = TS_BIND(finetune.patch_radius);
    t["finetune.sigma_t"] = TS_BIND(finetune.patch_sigma);
    t["finetune.c2"] = TS_BIND(finetune.pseudo_threshold);
    t["finetune.epsilon"] = TS_BIND(finetune.confidence_radius);
    t["finetune.lr"] = TS_BIND(finetune.adam.learning_rate);
    t["finetune.epochs"] = TS_BIND(finetune.epochs);
    t["finetune.beta"] = TS_BIND(finetune.smooth_l1_beta);
    t["finetune.tactile_mode"] = {
        [](const ExperimentConfig& c) { return std::string(tactile_mode_name(c.finetune.mode)); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.finetune.mode = wrap(k, [&] { return tactile_mode_from_name(v); });
        }};

    t["eval.include_boundary"] = TS_BIND(include_boundary);
    t["ablate.seeds"] = TS_BIND(ablate_seeds);
    return t;
  }();
  return table;
}

#undef TS_BIND

}  // namespace

// ---- profiles ----

ExperimentConfig profile_defaults(const std::string& profile) {
  ExperimentConfig c;
  c.profile = profile;
  if (profile == "desk") {
    // The transparent surface shows through at 40% with only the coarsest
    // background octave refracted through it; see README.
    c.scene.transparent_blend = 0.4;
    c.scene.refraction_octaves = 1;
    c.embed_dim = 16;
    c.pretrain.adam.learning_rate = 3e-3;
    c.pretrain.max_epochs = 30;
    c.pretrain.target_epe = 0.6;
    c.selection.surrogate_adam.learning_rate = 1e-3;
    c.selection.surrogate_max_steps = 10;
    c.calibrate_unconfident_threshold = true;
    c.finetune.adam.learning_rate = 3e-3;
    c.finetune.patch_radius = 3;
    c.finetune.patch_sigma = 5.0;
    c.finetune.regularization_weight = 0.5;
  } else if (profile == "paper") {
    c.scene.rig = CameraRig{600.0, 0.055, 320, 240, 12.0, 96.0};
    c.scene.background_disparity_min = 24.0;
    c.scene.background_disparity_max = 32.0;
    c.scene.object_disparity_min = 44.0;
    c.scene.object_disparity_max = 80.0;
    c.scene.object_half_size_min = 18.0;
    c.scene.object_half_size_max = 28.0;
    c.scene.view_jitter_px = 15.0;
    c.scene.transparent_blend = 0.4;
    c.scene.refraction_octaves = 1;
    c.scene.background_texture.base_cell = 16.0;
    c.scene.object_texture.base_cell = 12.0;
    c.embed_dim = 8;
    c.calibrate_unconfident_threshold = false;  // c1 = 0.999, the published value
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  }
  return c;
}

std::vector<std::string> profile_names() { return {"desk", "paper"}; }

void apply_config(ExperimentConfig& cfg, const ConfigMap& map) {
  const auto& table = bindings();
  for (const auto& [key, value] : map.entries()) {
    if (key == "profile") continue;
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(cfg, key, value);
  }
}

ExperimentConfig resolve_config(const ConfigMap& map, const std::string& profile_override) {
  std::string profile = "desk";
  if (map.has("profile")) {
    profile = map.get("profile");
    if (!profile_override.empty() && profile_override != profile)
      throw ConfigError("config file is for profile '" + profile + "' but --profile " +
                        profile_override + " was requested");
  } else if (!profile_override.empty()) {
    profile = profile_override;
  }
  ExperimentConfig cfg = profile_defaults(profile);
  apply_config(cfg, map);
  cfg.validate();
  return cfg;
}

std::string echo_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "profile = " << cfg.profile << "\n";
  for (const auto& [key, b] : bindings()) out << key << " = " << b.get(cfg) << "\n";
  return out.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys{"profile"};
  for (const auto& [key, b] : bindings()) keys.push_back(key);
  return keys;
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  try {
    scene.validate();
    selection.validate();
    probe.validate();
    finetune.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  check(pretrain_scenes >= 1, "data.pretrain_scenes must be >= 1");
  check(validation_scenes >= 0, "data.validation_scenes must be >= 0");
  check(pretrain_diffuse_objects >= 0, "data.pretrain_diffuse_objects must be >= 0");
  check(probe_scenes >= 1 && views_per_scene >= 1, "need at least one probing view");
  check(eval_scenes >= 1, "data.eval_scenes must be >= 1");
  check(embed_dim >= 1, "model.embed_dim must be >= 1");
  check(descriptor.patch_radius >= 0, "model.patch_radius must be >= 0");
  check(init_temperature > 0.0, "model.init_temperature must be positive");
  check(pretrain.max_epochs >= 0, "pretrain.max_epochs must be >= 0");
  check(unconfident_quantile >= 0.0 && unconfident_quantile <= 1.0,
        "select.c1_quantile must be in [0, 1]");
  check(ablate_seeds >= 1, "ablate.seeds must be >= 1");
  check(threads >= 1, "threads must be >= 1");
  check(!probe_transparent_classes.empty() || scene.num_transparent == 0,
        "data.probe_transparent_classes is empty");
  for (int c : probe_transparent_classes)
    check(std::find(scene.transparent_classes.begin(), scene.transparent_classes.end(), c) !=
              scene.transparent_classes.end(),
          "probing class " + std::to_string(c) + " is not among the evaluation classes");
}

}  // namespace tstereo
