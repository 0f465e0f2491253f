// Command-line driver for the staged pipeline.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tstereo/config.h"
#include "tstereo/pipeline.h"

namespace {

struct Options {
  std::string config_path;
  std::string profile;
  std::string out_dir = "run";
  long long seed = -1;
  std::vector<std::string> overrides;
  bool quiet = false;
  bool show_config = false;
};

tstereo::ExperimentConfig build_config(const Options& opt) {
  using tstereo::ConfigError;
  tstereo::ConfigMap map;
  if (!opt.config_path.empty()) map = tstereo::ConfigMap::load(opt.config_path);
  for (const std::string& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    map.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opt.seed >= 0) map.set("seed", std::to_string(opt.seed));
  return tstereo::resolve_config(map, opt.profile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tactile-guided stereo finetuning on synthetic scenes"};
  app.require_subcommand(1);
  Options opt;

  using StageFn = void (*)(const tstereo::Stage&);
  const std::vector<std::tuple<std::string, std::string, StageFn>> stages = {
      {"gen-data", "Generate pretraining, probing and evaluation scenes", tstereo::run_gen_data},
      {"pretrain", "Train the stereo model on diffuse scenes", tstereo::run_pretrain},
      {"select", "Choose touch locations on the probing views", tstereo::run_select},
      {"probe", "Simulate tactile probes at the chosen touches", tstereo::run_probe},
      {"finetune", "Finetune the pretrained model on the probes", tstereo::run_finetune},
      {"eval", "Evaluate pretrained and finetuned models", tstereo::run_eval},
      {"ablate", "Run the strategy and loss ablation grid over several seeds",
       tstereo::run_ablate},
      {"full-run", "Run gen-data through eval in one go", tstereo::run_full},
  };
  StageFn chosen = nullptr;
  for (const auto& [name, help, fn] : stages) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "key = value config file")
        ->check(CLI::ExistingFile);
    sub->add_option("--profile", opt.profile, "desk or paper");
    sub->add_option("--seed", opt.seed, "overrides the config seed")->check(CLI::NonNegativeNumber);
    sub->add_option("--out-dir", opt.out_dir, "run directory")->capture_default_str();
    sub->add_option("--set", opt.overrides, "extra key=value overrides (repeatable)");
    sub->add_flag("-q,--quiet", opt.quiet, "suppress progress output");
    sub->add_flag("--print-config", opt.show_config, "print the resolved config first");
    sub->callback([&chosen, fn = fn] { chosen = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : tstereo::kExitConfig;
  }

  try {
    tstereo::Stage st{build_config(opt), opt.out_dir, opt.quiet ? nullptr : &std::cout};
    if (opt.show_config) std::cout << tstereo::echo_config(st.cfg);
    chosen(st);
    return tstereo::kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return tstereo::exit_code_for(e);
  }
}
