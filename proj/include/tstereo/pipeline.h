#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "tstereo/config.h"
#include "tstereo/experiment.h"

namespace tstereo {

// An input artifact from an earlier stage is absent. what() names the
// stage to run.
class UpstreamMissing : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged or another run-time check failed.
class DiagnosticFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitUpstreamMissing = 3,
  kExitDiagnostic = 4,
};
int exit_code_for(const std::exception& e);

std::string sha256_hex(std::string_view bytes);

// Scene on disk: left/right 16-bit PGM, GT PFM, material and object-id PGM,
// and scene.json for the layout.
void save_scene(const std::filesystem::path& dir, const SceneSample& sample);
SceneSample load_scene(const std::filesystem::path& dir);

struct Stage {
  ExperimentConfig cfg;
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;  // progress lines; may be null
};

// Each stage reads its inputs under out_dir, writes its outputs there and
// records a manifest in out_dir/manifests/<stage>.json.
void run_gen_data(const Stage& st);
void run_pretrain(const Stage& st);
void run_select(const Stage& st);
void run_probe(const Stage& st);
void run_finetune(const Stage& st);
void run_eval(const Stage& st);
void run_ablate(const Stage& st);
void run_full(const Stage& st);

Dataset load_dataset(const std::filesystem::path& out_dir);

// Label of the finetuned model the configured run produces.
std::string configured_variant(const ExperimentConfig& cfg);

}  // namespace tstereo
