#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tstereo/scenegen.h"
#include "tstereo/selector.h"

namespace tstereo {

enum class NoiseModel : std::uint8_t { kNone, kTruncatedNormal, kUniform };
const char* noise_model_name(NoiseModel m);
NoiseModel noise_model_from_name(const std::string& name);

struct ProbeConfig {
  NoiseModel noise_model = NoiseModel::kTruncatedNormal;
  double noise_sigma_m = 0.001;
  double noise_bound_m = 0.003;  // hard clip on |measured - true|
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProbeResult {
  Touch touch;
  double measured_depth_m = 0.0;
  double derived_disparity_px = 0.0;
  bool success = false;
};

// Depth error for one touch. Depends only on (seed, scene, view, u, v), so
// a touch replays to the same value regardless of batch order.
double probe_noise(const ProbeConfig& cfg, const Touch& touch);

// Touches with invalid GT come back with success = false.
ProbeResult probe(const SceneSample& sample, const Touch& touch, const ProbeConfig& cfg);

// Counts every probe issued, successful or not.
class ProbeCounter {
 public:
  void add(long n = 1) { count_.fetch_add(n, std::memory_order_relaxed); }
  long count() const { return count_.load(std::memory_order_relaxed); }

 private:
  std::atomic<long> count_{0};
};

// Order-preserving. Each touch is matched to the view with its scene_id and
// view_id; a touch naming an unknown view throws.
std::vector<ProbeResult> probe_batch(std::span<const SceneSample> views,
                                     const TouchSet& touches, const ProbeConfig& cfg,
                                     ProbeCounter* counter = nullptr);

// CSV: touch columns, then measured_depth_m, derived_disparity_px, success.
// Reals are written with 17 significant digits so they read back exactly.
std::string encode_probes_csv(const std::vector<ProbeResult>& results);
std::vector<ProbeResult> decode_probes_csv(std::string_view text);
void save_probes(const std::filesystem::path& path, const std::vector<ProbeResult>& results);
std::vector<ProbeResult> load_probes(const std::filesystem::path& path);

}  // namespace tstereo
