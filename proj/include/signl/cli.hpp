#pragma once

// Command-line verbs. Every run writes into its own directory, named
// <verb>-<seed>-<UTC timestamp> under --out unless --run-dir is given, and
// starts by saving the fully resolved configuration there.

#include <cstdio>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "signl/checkpoint.hpp"
#include "signl/config.hpp"
#include "signl/featio.hpp"
#include "signl/gradcheck.hpp"
#include "signl/train.hpp"

namespace signl {

inline const std::vector<std::string>& cli_verbs() {
  static const std::vector<std::string> verbs = {"gen-data", "sample-labels", "pretrain", "finetune",
                                                 "eval",     "collapse",      "gradcheck", "ablation-grid"};
  return verbs;
}

struct Command {
  std::string verb;
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string out_dir = "runs";
  std::string run_dir;  // explicit run directory; overrides the generated name
  bool quiet = false;
};

// Exit codes: 0 success, 1 validation error, 2 runtime failure.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

class UsageError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

namespace cli_detail {

inline std::string utc_stamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

inline void write_text(const fs::path& p, const std::string& text) { write_file_bytes(p, text); }

inline std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Path-valued keys are stored absolute so the snapshot works from any cwd.
inline void absolutize_paths(Config& c) {
  for (const char* key : {"data.manifest", "pretrain.checkpoint", "finetune.checkpoint", "eval.model"}) {
    const auto& v = c.str(key);
    if (!v.empty()) c.set(key, fs::absolute(v).lexically_normal().string());
  }
}

inline Manifest require_manifest(const Config& c) {
  const auto& path = c.str("data.manifest");
  if (path.empty()) throw ConfigError("data.manifest is not set");
  if (!fs::exists(path)) throw ConfigError("manifest not found: " + path);
  return read_manifest(path);
}

inline std::vector<CheckpointEntry> require_checkpoint(const Config& c, const std::string& key) {
  const auto& path = c.str(key);
  if (path.empty()) throw ConfigError(key + " is not set");
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path + " (" + key + ")");
  return read_checkpoint(path);
}

inline const FeatureMatrix& first_clip(const std::vector<LabeledClip>& clips, Split split) {
  if (clips.empty()) throw ConfigError("split '" + to_string(split) + "' is empty");
  return clips.front().features;
}

inline EpochCallback epoch_logger(std::ostream& log, const std::string& phase, bool quiet) {
  if (quiet) return {};
  return [&log, phase](const EpochRecord& r) {
    log << phase << " epoch " << r.epoch << " train_loss " << r.train_loss << " dev " << r.dev_metric << " ("
        << fixed(r.seconds, 2) << " s)\n";
  };
}

struct PretrainRun {
  PretrainResult result;
  fs::path checkpoint;
};

inline PretrainRun pretrain_into(const Config& c, const fs::path& dir, std::ostream& log, bool quiet) {
  const auto manifest = require_manifest(c);
  const auto clips = load_unlabeled(manifest, Split::train);
  if (clips.empty()) throw ConfigError("train split is empty");
  auto model_cfg = model_config_for(clips.front(), model_config(c));
  model_cfg.view_mode = ViewMode::both;
  auto res = pretrain(model_cfg, train_config(c, Phase::pretrain), clips, epoch_logger(log, "pretrain", quiet));
  fs::create_directories(dir);
  const auto ckpt = dir / "pretrain.sigc";
  save_checkpoint(res.model.params(), ckpt);
  write_text(dir / "trace.jsonl", trace_to_jsonl(res.trace));
  nlohmann::ordered_json s;
  s["best_epoch"] = res.best_epoch;
  s["best_dev_loss"] = res.best_dev;
  s["epochs_run"] = res.trace.size() - 1;
  s["checkpoint"] = ckpt.filename().string();
  s["non_transferable_prefixes"] = {"proj."};
  write_text(dir / "summary.json", s.dump(2) + "\n");
  return {std::move(res), ckpt};
}

struct FinetuneRun {
  FinetuneResult result;
  fs::path model_path;
};

inline FinetuneRun finetune_into(const Config& c, const fs::path& dir, std::ostream& log, bool quiet) {
  const auto tcfg = train_config(c, Phase::finetune);
  std::vector<CheckpointEntry> pretrained;
  if (!tcfg.skip_pretrain) pretrained = require_checkpoint(c, "finetune.checkpoint");
  auto manifest = require_manifest(c);
  if (tcfg.label_fraction < 1.0) {
    auto sampled = sample_limited_labels(manifest, tcfg.label_fraction, tcfg.seed);
    for (const auto& w : sampled.warnings) log << "warning: " << w << "\n";
    manifest = std::move(sampled.manifest);
  }
  const auto train = load_split(manifest, Split::train);
  const auto dev = load_split(manifest, Split::dev);
  const auto model_cfg = model_config_for(first_clip(train, Split::train), model_config(c));
  auto res = finetune(model_cfg, tcfg, train, dev, tcfg.skip_pretrain ? nullptr : &pretrained,
                      epoch_logger(log, "finetune", quiet));
  fs::create_directories(dir);
  const auto path = dir / "model.sigc";
  save_checkpoint(res.model.params(), path);
  write_text(dir / "trace.jsonl", trace_to_jsonl(res.trace));
  nlohmann::ordered_json s;
  s["best_epoch"] = res.best_epoch;
  s["best_dev_eer"] = res.best_dev_eer;
  s["epochs_run"] = res.trace.size();
  s["n_train"] = train.size();
  s["n_dev"] = dev.size();
  s["view_mode"] = to_string(model_cfg.view_mode);
  write_text(dir / "summary.json", s.dump(2) + "\n");
  return {std::move(res), path};
}

inline EvalResult eval_into(const Config& c, const SignlModel<float>& model, Split split, const fs::path& dir) {
  const auto manifest = require_manifest(c);
  const auto clips = load_split(manifest, split);
  first_clip(clips, split);
  auto res = evaluate(model, clips);
  fs::create_directories(dir);
  write_text(dir / "scores.tsv", scores_to_tsv(res.scores));
  write_text(dir / "eer.json", res.report.to_json() + "\n");
  return res;
}

inline int verb_gen_data(const Config& c, const fs::path& dir, std::ostream& log) {
  const auto m = gen_synthetic(synth_config(c), dir / "data");
  log << "wrote " << m.entries.size() << " clips; manifest " << (dir / "data" / "manifest.jsonl").string() << "\n";
  return kExitOk;
}

inline int verb_sample_labels(const Config& c, const fs::path& dir, std::ostream& log) {
  const auto in = require_manifest(c);
  auto res = sample_limited_labels(in, c.real("finetune.label_fraction"), c.u64("seed"));
  for (const auto& w : res.warnings) log << "warning: " << w << "\n";
  const auto out = rebase_manifest(res.manifest, dir);
  write_manifest(out, dir / "manifest.jsonl");
  nlohmann::ordered_json counts;
  for (Split s : {Split::train, Split::dev, Split::eval}) {
    counts[to_string(s)] = std::count_if(out.entries.begin(), out.entries.end(), [s](const auto& e) { return e.split == s; });
  }
  write_text(dir / "sample.json", counts.dump(2) + "\n");
  log << "kept " << out.entries.size() << " of " << in.entries.size() << " entries\n";
  return kExitOk;
}

inline int verb_eval(const Config& c, const fs::path& dir, std::ostream& log) {
  const auto entries = require_checkpoint(c, "eval.model");
  const auto manifest = require_manifest(c);
  const Split split = parse_split(c.str("eval.split"));
  const auto clips = load_split(manifest, split);
  SignlModel<float> model(model_config_for(first_clip(clips, split), model_config(c)), HeadKind::classifier, 0);
  load_into(model.params(), entries);
  auto res = evaluate(model, clips);
  write_text(dir / "scores.tsv", scores_to_tsv(res.scores));
  write_text(dir / "eer.json", res.report.to_json() + "\n");
  log << "EER " << res.report.eer << " on " << clips.size() << " " << to_string(split) << " clips\n";
  return kExitOk;
}

inline int verb_collapse(const Config& c, const fs::path& dir, std::ostream& log) {
  const auto entries = require_checkpoint(c, "pretrain.checkpoint");
  const auto manifest = require_manifest(c);
  const Split split = parse_split(c.str("collapse.split"));
  auto clips = load_unlabeled(manifest, split);
  if (clips.empty()) throw ConfigError("split '" + to_string(split) + "' is empty");
  const auto order = train_detail::shuffled(clips.size(), derive_seed(c.u64("seed"), "collapse"));
  std::vector<FeatureMatrix> picked;
  for (std::size_t i = 0; i < std::min(c.size("collapse.pairs"), clips.size()); ++i) picked.push_back(clips[order[i]]);
  auto model_cfg = model_config_for(picked.front(), model_config(c));
  model_cfg.view_mode = ViewMode::both;
  SignlModel<float> model(model_cfg, HeadKind::projection, 0);
  load_into(model.params(), entries);
  const auto r = collapse_report(model, picked);
  write_text(dir / "collapse.json", r.to_json() + "\n");
  log << "mean pair similarity before projection " << r.before << ", after " << r.after << " (" << r.n_pairs
      << " pairs)\n";
  return kExitOk;
}

inline int verb_gradcheck(const Config& c, const fs::path& dir, std::ostream& log) {
  const auto suite = run_gradcheck_suite(c.size("gradcheck.instances"), c.u64("seed"));
  write_text(dir / "gradcheck.json", suite.to_json() + "\n");
  for (const auto& r : suite.results) log << r.name << " " << r.max_rel_error << "\n";
  log << "max relative error: " << suite.max_rel_error() << "\n";
  return suite.max_rel_error() < 1e-4 ? kExitOk : kExitRuntime;
}

// The eight ED/GN/FM combinations with one shared seed; each row pre-trains,
// fine-tunes and evaluates on the eval split.
inline int verb_ablation_grid(const Config& base, const fs::path& dir, std::ostream& log, bool quiet) {
  std::ostringstream table;
  table << "method\tED\tGN\tFM\tdev_eer\teval_eer\n";
  for (int k = 1; k <= 8; ++k) {
    Config c = base;
    const auto spec = AugmentSpec::grid_row(k, augment_spec(base));
    c.set("aug.ed", spec.ed_enabled ? "true" : "false");
    c.set("aug.gn", spec.gn_enabled ? "true" : "false");
    c.set("aug.fm", spec.fm_enabled ? "true" : "false");
    const std::string name = "SIGNL-" + std::to_string(k);
    const fs::path row = dir / name;
    log << name << "\n";
    auto pre = pretrain_into(c, row / "pretrain", log, quiet);
    c.set("finetune.checkpoint", pre.checkpoint.string());
    c.set("finetune.skip_pretrain", "false");
    auto ft = finetune_into(c, row / "finetune", log, quiet);
    const auto ev = eval_into(c, ft.result.model, Split::eval, row / "eval");
    auto mark = [](bool on) { return on ? "x" : "-"; };
    table << name << '\t' << mark(spec.ed_enabled) << '\t' << mark(spec.gn_enabled) << '\t' << mark(spec.fm_enabled)
          << '\t' << fixed(ft.result.best_dev_eer) << '\t' << fixed(ev.report.eer) << '\n';
  }
  write_text(dir / "grid.tsv", table.str());
  log << table.str();
  return kExitOk;
}

}  // namespace cli_detail

inline std::string cli_help_footer() {
  std::string s =
      "Verbs: gen-data, sample-labels, pretrain, finetune, eval, collapse, gradcheck, ablation-grid.\n"
      "Config precedence (later wins): built-in defaults < --config file < SIGNL_SEED env < --set flags.\n"
      "Exit codes: 0 success, 1 validation error, 2 runtime failure.\n\nConfig keys:\n";
  for (const auto& k : config_keys()) {
    s += "  " + std::string(k.name) + " = " + k.default_value + "\n      " + k.help + "\n";
  }
  return s;
}

// Resolves configuration and dispatches. Errors propagate as exceptions.
inline int run(const Command& cmd, std::ostream& log = std::cout) {
  using namespace cli_detail;
  const auto& verbs = cli_verbs();
  if (std::find(verbs.begin(), verbs.end(), cmd.verb) == verbs.end()) throw UsageError("unknown verb '" + cmd.verb + "'");
  Config c;
  if (!cmd.config_path.empty()) c.load_file(cmd.config_path);
  c.apply_env();
  for (const auto& o : cmd.overrides) c.set_assignment(o);
  absolutize_paths(c);

  const fs::path dir = !cmd.run_dir.empty()
                           ? fs::path(cmd.run_dir)
                           : fs::path(cmd.out_dir) / (cmd.verb + "-" + c.str("seed") + "-" + utc_stamp());
  if (fs::exists(dir)) throw ConfigError("run directory already exists: " + dir.string());
  fs::create_directories(dir);
  write_text(dir / "config.resolved", c.snapshot());
  log << "run directory " << dir.string() << "\n";

  const auto& v = cmd.verb;
  if (v == "gen-data") return verb_gen_data(c, dir, log);
  if (v == "sample-labels") return verb_sample_labels(c, dir, log);
  if (v == "pretrain") {
    pretrain_into(c, dir, log, cmd.quiet);
    return kExitOk;
  }
  if (v == "finetune") {
    finetune_into(c, dir, log, cmd.quiet);
    return kExitOk;
  }
  if (v == "eval") return verb_eval(c, dir, log);
  if (v == "collapse") return verb_collapse(c, dir, log);
  if (v == "gradcheck") return verb_gradcheck(c, dir, log);
  return verb_ablation_grid(c, dir, log, cmd.quiet);
}

// argv -> exit code; usage and validation problems print to err and return 1.
inline int run_main(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Graph-based audio deepfake detection with label-free pre-training"};
  app.footer(cli_help_footer());
  Command cmd;
  app.add_option("verb", cmd.verb, "verb to run")->required();
  app.add_option("-c,--config", cmd.config_path, "key = value config file");
  app.add_option("-s,--set", cmd.overrides, "override one key, key=value (repeatable)");
  app.add_option("-o,--out", cmd.out_dir, "parent of generated run directories")->capture_default_str();
  app.add_option("--run-dir", cmd.run_dir, "exact run directory (must not exist)");
  app.add_flag("-q,--quiet", cmd.quiet, "suppress per-epoch progress");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitValidation;
  }
  try {
    return run(cmd, log);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IncompatibleError& e) {
    err << "incompatible checkpoint: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace signl
