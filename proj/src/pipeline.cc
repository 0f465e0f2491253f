#include "tstereo/pipeline.h"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "tstereo/io.h"
#include "tstereo/rng.h"

namespace tstereo {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const UpstreamMissing*>(&e)) return kExitUpstreamMissing;
  if (dynamic_cast<const DiagnosticFailure*>(&e)) return kExitDiagnostic;
  return kExitFailure;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

// ---- scenes ----

namespace {

json object_json(const ObjectSpec& o) {
  return json{{"material", material_name(o.material)},
              {"shape", o.shape == Shape::kRectangle ? "rectangle" : "ellipse"},
              {"center_x", o.center_x},
              {"center_y", o.center_y},
              {"half_width", o.half_width},
              {"half_height", o.half_height},
              {"disparity", o.disparity},
              {"class_id", o.class_id},
              {"texture_seed", o.texture_seed}};
}

Material material_by_name(const std::string& name) {
  for (Material m : {Material::kBackground, Material::kDiffuse, Material::kTransparent,
                     Material::kBoundary})
    if (name == material_name(m)) return m;
  throw std::runtime_error("scene.json: unknown material '" + name + "'");
}

}  // namespace

void save_scene(const fs::path& dir, const SceneSample& s) {
  fs::create_directories(dir);
  save_image_pgm(dir / "left.pgm", s.left);
  save_image_pgm(dir / "right.pgm", s.right);
  save_pfm(dir / "gt_disparity.pfm", s.gt_disparity);
  save_material_pgm(dir / "material.pgm", s.material);
  save_labels_pgm(dir / "object_id.pgm", s.object_id);
  json meta;
  meta["scene_id"] = s.scene_id;
  meta["view_id"] = s.view_id;
  meta["background_disparity"] = s.background_disparity;
  meta["rig"] = {{"focal_px", s.rig.focal_px},         {"baseline_m", s.rig.baseline_m},
                 {"width", s.rig.width},               {"height", s.rig.height},
                 {"disparity_min", s.rig.disparity_min}, {"disparity_max", s.rig.disparity_max}};
  meta["objects"] = json::array();
  for (const auto& o : s.objects) meta["objects"].push_back(object_json(o));
  write_file(dir / "scene.json", meta.dump(2) + "\n");
}

SceneSample load_scene(const fs::path& dir) {
  SceneSample s;
  try {
    const json meta = json::parse(read_file(dir / "scene.json"));
    s.scene_id = meta.at("scene_id").get<int>();
    s.view_id = meta.at("view_id").get<int>();
    s.background_disparity = meta.at("background_disparity").get<double>();
    const json& r = meta.at("rig");
    s.rig = CameraRig{r.at("focal_px").get<double>(),     r.at("baseline_m").get<double>(),
                      r.at("width").get<int>(),           r.at("height").get<int>(),
                      r.at("disparity_min").get<double>(), r.at("disparity_max").get<double>()};
    for (const json& o : meta.at("objects")) {
      ObjectSpec spec;
      spec.material = material_by_name(o.at("material").get<std::string>());
      spec.shape = o.at("shape").get<std::string>() == "ellipse" ? Shape::kEllipse
                                                                  : Shape::kRectangle;
      spec.center_x = o.at("center_x").get<double>();
      spec.center_y = o.at("center_y").get<double>();
      spec.half_width = o.at("half_width").get<double>();
      spec.half_height = o.at("half_height").get<double>();
      spec.disparity = o.at("disparity").get<double>();
      spec.class_id = o.at("class_id").get<int>();
      spec.texture_seed = o.at("texture_seed").get<std::uint64_t>();
      s.objects.push_back(spec);
    }
  } catch (const json::exception& e) {
    throw std::runtime_error((dir / "scene.json").string() + ": " + e.what());
  }
  s.left = load_image_pgm(dir / "left.pgm");
  s.right = load_image_pgm(dir / "right.pgm");
  s.gt_disparity = load_pfm(dir / "gt_disparity.pfm");
  s.material = load_material_pgm(dir / "material.pgm");
  s.object_id = load_labels_pgm(dir / "object_id.pgm");
  if (!s.left.same_shape(s.gt_disparity) || !s.right.same_shape(s.gt_disparity) ||
      s.material.width() != s.left.width() || s.material.height() != s.left.height())
    throw std::runtime_error(dir.string() + ": scene files disagree on image size");
  return s;
}

// ---- manifests ----

namespace {

// Collects content hashes of everything a stage reads and writes.
class Manifest {
 public:
  Manifest(const Stage& st, std::string stage) : st_(st), stage_(std::move(stage)) {}

  std::string read(const fs::path& rel, const std::string& producer) {
    const fs::path p = st_.out_dir / rel;
    if (!fs::exists(p))
      throw UpstreamMissing("missing " + p.string() + "; run the '" + producer +
                            "' stage first");
    std::string bytes = read_file(p);
    inputs_[rel.generic_string()] = sha256_hex(bytes);
    return bytes;
  }

  void write(const fs::path& rel, std::string_view bytes) {
    write_file(st_.out_dir / rel, bytes);
    outputs_[rel.generic_string()] = sha256_hex(bytes);
  }

  // Records a file written by a library call.
  void wrote(const fs::path& rel) {
    outputs_[rel.generic_string()] = sha256_hex(read_file(st_.out_dir / rel));
  }
  void note(const std::string& key, json value) { notes_[key] = std::move(value); }
  const fs::path& root() const { return st_.out_dir; }

  void finish() {
    json m;
    m["stage"] = stage_;
    m["profile"] = st_.cfg.profile;
    m["seed"] = st_.cfg.seed;
    json config = json::object();
    std::istringstream echo(echo_config(st_.cfg));
    for (std::string line; std::getline(echo, line);) {
      const auto eq = line.find(" = ");
      config[line.substr(0, eq)] = line.substr(eq + 3);
    }
    m["config"] = std::move(config);
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    if (!notes_.empty()) m["notes"] = notes_;
    write_file(st_.out_dir / "manifests" / (stage_ + ".json"), m.dump(2) + "\n");
  }

 private:
  const Stage& st_;
  std::string stage_;
  std::map<std::string, std::string> inputs_, outputs_;
  json notes_ = json::object();
};

void say(const Stage& st, const std::string& line) {
  if (st.log) *st.log << line << std::endl;
}

const char* kSplitNames[] = {"pretrain", "validation", "probing", "eval"};

std::vector<SceneSample>* split_of(Dataset& d, int i) {
  switch (i) {
    case 0: return &d.pretrain;
    case 1: return &d.validation;
    case 2: return &d.probing;
    default: return &d.eval;
  }
}

std::string scene_dir_name(const SceneSample& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "scene%05d_view%02d", s.scene_id, s.view_id);
  return buf;
}

enum SplitBits : unsigned { kPretrainBit = 1, kValidationBit = 2, kProbingBit = 4, kEvalBit = 8 };

// Reads the dataset index and the requested splits, recording every scene
// file as an input.
Dataset read_dataset(Manifest& m, unsigned splits) {
  const json index = json::parse(m.read("data/dataset.json", "gen-data"));
  Dataset d;
  for (int i = 0; i < 4; ++i) {
    if (!(splits & (1u << i))) continue;
    for (const json& name : index.at(kSplitNames[i])) {
      const fs::path rel = fs::path("data") / kSplitNames[i] / name.get<std::string>();
      for (const char* f : {"scene.json", "left.pgm", "right.pgm", "gt_disparity.pfm",
                            "material.pgm", "object_id.pgm"})
        m.read(rel / f, "gen-data");
      split_of(d, i)->push_back(load_scene(m.root() / rel));
    }
  }
  return d;
}

ModelState read_model(Manifest& m, const fs::path& rel, const std::string& producer) {
  try {
    return decode_model(m.read(rel, producer));
  } catch (const ParseError& e) {
    throw std::runtime_error((m.root() / rel).string() + ": " + e.what());
  }
}

void write_model(Manifest& m, const fs::path& rel, const ModelState& state) {
  save_model(m.root() / rel, state);
  m.wrote(rel);
  m.wrote(rel.string() + ".txt");
}

fs::path touches_path(Strategy s) {
  return fs::path("touches") / (std::string(strategy_name(s)) + ".csv");
}
fs::path probes_path(Strategy s) {
  return fs::path("touches") / (std::string(strategy_name(s)) + "_probes.csv");
}
std::uint64_t selection_seed(const ExperimentConfig& cfg) { return mix_seed(cfg.seed, 0x5e1); }
ProbeConfig probe_config(const ExperimentConfig& cfg) {
  ProbeConfig pc = cfg.probe;
  pc.seed = mix_seed(cfg.seed, 0x9b0be);
  return pc;
}

std::string trace_csv(const SelectionResult& r) {
  std::ostringstream out;
  out << "step,view_index,scene_id,view_id,u,v,utility,fallback,tune_steps,tune_converged,"
         "entropy_before,entropy_after\n";
  char buf[256];
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const SelectionStep& s = r.trace[i];
    std::snprintf(buf, sizeof buf, "%zu,%d,%d,%d,%d,%d,%.17g,%d,%d,%d,%.17g,%.17g\n", i,
                  s.view_index, s.touch.scene_id, s.touch.view_id, s.touch.u, s.touch.v,
                  s.utility, s.fallback ? 1 : 0, s.tune_steps, s.tune_converged ? 1 : 0,
                  s.entropy_before, s.entropy_after);
    out << buf;
  }
  return out.str();
}

void write_report(Manifest& m, const std::string& stem, const ReportRows& rows) {
  m.write(fs::path("reports") / (stem + ".csv"), format_report_csv(rows));
  m.write(fs::path("reports") / (stem + ".txt"), format_report_text(rows));
  m.write(fs::path("reports") / (stem + ".json"), format_report_json(rows));
}

}  // namespace

std::string configured_variant(const ExperimentConfig& cfg) {
  return variant_label(cfg.strategy, cfg.finetune.mode,
                       cfg.finetune.regularization_weight > 0.0);
}

Dataset load_dataset(const fs::path& out_dir) {
  Stage st{ExperimentConfig{}, out_dir, nullptr};
  Manifest m(st, "load");
  return read_dataset(m, kPretrainBit | kValidationBit | kProbingBit | kEvalBit);
}

void run_gen_data(const Stage& st) {
  Manifest m(st, "gen-data");
  say(st, "gen-data: generating scenes");
  Dataset d = generate_dataset(st.cfg);
  json index;
  for (int i = 0; i < 4; ++i) {
    index[kSplitNames[i]] = json::array();
    for (const SceneSample& s : *split_of(d, i)) {
      const std::string name = scene_dir_name(s);
      const fs::path rel = fs::path("data") / kSplitNames[i] / name;
      save_scene(st.out_dir / rel, s);
      for (const char* f : {"scene.json", "left.pgm", "right.pgm", "gt_disparity.pfm",
                            "material.pgm", "object_id.pgm"})
        m.wrote(rel / f);
      index[kSplitNames[i]].push_back(name);
    }
  }
  m.write("data/dataset.json", index.dump(2) + "\n");
  m.finish();
  say(st, "gen-data: " + std::to_string(d.pretrain.size()) + " pretrain, " +
              std::to_string(d.validation.size()) + " validation, " +
              std::to_string(d.probing.size()) + " probing views, " +
              std::to_string(d.eval.size()) + " eval scenes");
}

void run_pretrain(const Stage& st) {
  Manifest m(st, "pretrain");
  const Dataset d = read_dataset(m, kPretrainBit | kValidationBit);
  say(st, "pretrain: training on " + std::to_string(d.pretrain.size()) + " diffuse scenes");
  const PretrainResult r = pretrain_model(st.cfg, d);
  write_model(m, "models/pretrained.bin", r.state);
  std::ostringstream log;
  log << "epoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < r.epoch_loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, r.epoch_loss[i]);
    log << buf;
  }
  m.write("reports/pretrain_log.csv", log.str());
  m.note("epochs_run", r.epochs_run);
  m.note("validation_epe", r.validation_epe);
  m.note("reached_target", r.reached_target);
  m.finish();
  char line[160];
  std::snprintf(line, sizeof line, "pretrain: %d epochs, validation diffuse EPE %.4f (target %.4f)",
                r.epochs_run, r.validation_epe, st.cfg.pretrain.target_epe);
  say(st, line);
  if (!r.reached_target)
    say(st, "pretrain: warning: target EPE not reached; continuing with the trained state");
}

void run_select(const Stage& st) {
  Manifest m(st, "select");
  const ModelState pretrained = read_model(m, "models/pretrained.bin", "pretrain");
  const Dataset d = read_dataset(m, kValidationBit | kProbingBit);
  const SelectionConfig sel = resolve_selection(st.cfg, pretrained, d.validation);
  say(st, std::string("select: strategy ") + strategy_name(st.cfg.strategy) + " over " +
              std::to_string(d.probing.size()) + " views");
  const SelectionOutcome out = select_touches(st.cfg.strategy, pretrained, d.probing,
                                              hypotheses_for(st.cfg), sel,
                                              selection_seed(st.cfg));
  m.write(touches_path(st.cfg.strategy), encode_touches_csv(out.touches));
  if (st.cfg.strategy == Strategy::kUtility) {
    m.write("touches/utility_trace.csv", trace_csv(out.greedy));
    m.note("fallbacks", out.greedy.fallbacks);
    m.note("unconverged_tunes", out.greedy.unconverged_tunes);
  }
  m.note("unconfident_threshold", sel.unconfident_threshold);
  m.note("touches", out.touches.size());
  m.finish();
  say(st, "select: " + std::to_string(out.touches.size()) + " touches");
}

void run_probe(const Stage& st) {
  Manifest m(st, "probe");
  const TouchSet touches = decode_touches_csv(m.read(touches_path(st.cfg.strategy), "select"));
  const Dataset d = read_dataset(m, kProbingBit);
  ProbeCounter counter;
  const auto results = probe_batch(d.probing, touches, probe_config(st.cfg), &counter);
  const long failed = std::count_if(results.begin(), results.end(),
                                    [](const ProbeResult& r) { return !r.success; });
  m.write(probes_path(st.cfg.strategy), encode_probes_csv(results));
  m.note("probes_issued", counter.count());
  m.note("failed", failed);
  m.finish();
  say(st, "probe: " + std::to_string(counter.count()) + " probes issued, " +
              std::to_string(failed) + " failed");
}

void run_finetune(const Stage& st) {
  Manifest m(st, "finetune");
  const ModelState pretrained = read_model(m, "models/pretrained.bin", "pretrain");
  const auto probes = decode_probes_csv(m.read(probes_path(st.cfg.strategy), "probe"));
  const Dataset d = read_dataset(m, kProbingBit);
  FinetuneConfig fc = st.cfg.finetune;
  fc.threads = st.cfg.threads;
  const std::string label = configured_variant(st.cfg);
  say(st, "finetune: " + label + " with " + std::to_string(probes.size()) + " probes");
  const FinetuneResult r = finetune(pretrained, d.probing, probes, hypotheses_for(st.cfg), fc);
  m.write(fs::path("reports") / ("finetune_" + label + "_log.csv"),
          encode_finetune_log_csv(r.log));
  m.note("labels_used", r.labels_used);
  m.note("pseudo_pixels", r.pseudo_pixels);
  m.note("diverged", r.diverged);
  if (r.diverged) {
    m.finish();
    throw DiagnosticFailure(r.diagnostic);
  }
  write_model(m, fs::path("models") / ("finetuned_" + label + ".bin"), r.state);
  m.finish();
}

void run_eval(const Stage& st) {
  Manifest m(st, "eval");
  const ModelState pretrained = read_model(m, "models/pretrained.bin", "pretrain");
  std::vector<std::pair<std::string, fs::path>> finetuned;
  const fs::path models = st.out_dir / "models";
  if (fs::exists(models)) {
    for (const auto& e : fs::directory_iterator(models)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("finetuned_", 0) == 0 && e.path().extension() == ".bin")
        finetuned.emplace_back(name.substr(10, name.size() - 14), fs::path("models") / name);
    }
  }
  std::sort(finetuned.begin(), finetuned.end());
  const Dataset d = read_dataset(m, kEvalBit);
  const DisparityHypotheses hyps = hypotheses_for(st.cfg);
  ReportRows rows;
  rows.emplace_back("pretrained", evaluate_model(pretrained, d.eval, hyps, st.cfg.include_boundary));
  for (const auto& [label, rel] : finetuned)
    rows.emplace_back(label, evaluate_model(read_model(m, rel, "finetune"), d.eval, hyps,
                                            st.cfg.include_boundary));
  write_report(m, "eval", rows);
  m.finish();
  say(st, "eval:\n" + format_report_text(rows));
}

void run_ablate(const Stage& st) {
  Manifest m(st, "ablate");
  const auto variants = benchmark_variants();
  std::vector<std::pair<std::string, std::vector<MetricReport>>> grouped;
  grouped.emplace_back("pretrained", std::vector<MetricReport>{});
  for (const auto& v : variants) grouped.emplace_back(v.label, std::vector<MetricReport>{});
  ReportRows per_seed;
  std::vector<std::string> diagnostics;
  for (int i = 0; i < st.cfg.ablate_seeds; ++i) {
    const std::uint64_t seed = st.cfg.seed + static_cast<std::uint64_t>(i);
    const SeedRun run = run_benchmark_seed(st.cfg, seed, variants);
    grouped[0].second.push_back(run.pretrained);
    per_seed.emplace_back("seed" + std::to_string(seed) + "/pretrained", run.pretrained);
    for (std::size_t k = 0; k < run.variants.size(); ++k) {
      grouped[k + 1].second.push_back(run.variants[k].second);
      per_seed.emplace_back("seed" + std::to_string(seed) + "/" + run.variants[k].first,
                            run.variants[k].second);
    }
    for (const auto& msg : run.diagnostics)
      diagnostics.push_back("seed " + std::to_string(seed) + ": " + msg);
    char line[128];
    std::snprintf(line, sizeof line, "ablate: seed %llu done in %.1f s (%ld probes)",
                  static_cast<unsigned long long>(seed), run.seconds, run.probes_issued);
    say(st, line);
  }
  const auto summary = summarize(grouped);
  m.write("reports/ablate_runs.csv", format_report_csv(per_seed));
  m.write("reports/ablate_summary.csv", format_summary_csv(summary));
  m.write("reports/ablate_summary.txt", format_summary_text(summary));
  m.note("diagnostics", diagnostics);
  m.finish();
  say(st, "ablate:\n" + format_summary_text(summary));
}

void run_full(const Stage& st) {
  run_gen_data(st);
  run_pretrain(st);
  run_select(st);
  run_probe(st);
  run_finetune(st);
  run_eval(st);
}

}  // namespace tstereo
