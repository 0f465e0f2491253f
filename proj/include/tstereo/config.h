#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tstereo/finetuner.h"
#include "tstereo/probesim.h"
#include "tstereo/scenegen.h"
#include "tstereo/selector.h"
#include "tstereo/stereomodel.h"

namespace tstereo {

// Bad config text, unknown keys, invalid values or a profile clash.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat "key = value" text. '#' starts a comment; "include <path>" splices in
// another file (relative to the including file). Later keys override
// earlier ones.
class ConfigMap {
 public:
  static ConfigMap parse(std::string_view text, const std::filesystem::path& base_dir = {});
  static ConfigMap load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  void parse_into(std::string_view text, const std::filesystem::path& base_dir, int depth,
                  const std::string& origin);
  std::map<std::string, std::string> entries_;
};

struct ExperimentConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;

  SceneConfig scene;  // probing and evaluation scenes
  int pretrain_scenes = 6;
  int validation_scenes = 2;
  int pretrain_diffuse_objects = 4;
  int probe_scenes = 5;
  int views_per_scene = 4;
  int eval_scenes = 8;
  // Transparent classes that may appear in probing scenes; must be a subset
  // of scene.transparent_classes so evaluation sees unseen instances of
  // known classes.
  std::vector<int> probe_transparent_classes{0, 1, 2, 3};

  int embed_dim = 16;
  DescriptorConfig descriptor;
  double init_scale = 1.0;
  double init_temperature = 0.05;
  PretrainConfig pretrain;

  Strategy strategy = Strategy::kUtility;
  SelectionConfig selection;
  // When set, the unconfident threshold is the given quantile of diffuse
  // confidence on the validation scenes under the pretrained model.
  bool calibrate_unconfident_threshold = true;
  double unconfident_quantile = 0.8;

  ProbeConfig probe;
  FinetuneConfig finetune;
  bool include_boundary = true;
  int ablate_seeds = 5;
  int threads = 1;

  // Throws ConfigError.
  void validate() const;
};

// Built-in defaults. "desk" is the fast 128x96 benchmark; "paper" keeps the
// published hyperparameters and disparity range on a larger rig.
ExperimentConfig profile_defaults(const std::string& profile);
std::vector<std::string> profile_names();

// Applies every entry of `map` (except "profile") on top of `cfg`.
void apply_config(ExperimentConfig& cfg, const ConfigMap& map);

// Resolves the profile (explicit argument wins only if the file agrees),
// then applies the file. An explicit profile that differs from the file's
// "profile" key is refused.
ExperimentConfig resolve_config(const ConfigMap& map, const std::string& profile_override);

// Canonical key=value listing of every setting, sorted by key.
std::string echo_config(const ExperimentConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace tstereo
