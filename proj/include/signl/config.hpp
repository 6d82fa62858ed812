#pragma once

// key = value run configuration. Later sources override earlier ones:
// built-in defaults, then the config file, then SIGNL_SEED, then --set flags.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "signl/augment.hpp"
#include "signl/encoder.hpp"
#include "signl/errors.hpp"
#include "signl/featio.hpp"
#include "signl/train.hpp"

namespace signl {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "0", "root seed for every random stream"},
      {"data.manifest", "", "manifest.jsonl read by sample-labels, pretrain, finetune, eval, collapse"},
      {"synth.freq_bins", "64", "F of generated clips"},
      {"synth.time_frames", "64", "T of generated clips"},
      {"synth.n_train", "2000", "generated train clips"},
      {"synth.n_dev", "500", "generated dev clips"},
      {"synth.n_eval", "1000", "generated eval clips"},
      {"synth.n_attack_types", "3", "number of attack ids"},
      {"synth.bonafide_fraction", "0.25", "share of bona fide clips per split"},
      {"synth.artifact_strength", "1.0", "amplitude of planted artifacts"},
      {"synth.noise_sigma", "0.05", "white noise added to every clip"},
      {"graph.patches", "8", "N, nodes per graph view"},
      {"graph.neighbors", "3", "K, in-edges per node"},
      {"graph.embed_dim", "32", "D, stem output width"},
      {"model.layers", "5", "encoder depth; each layer halves the width"},
      {"model.heads", "4", "requested multi-head count"},
      {"model.head_hidden", "256,128", "hidden widths of projection and classifier heads"},
      {"model.projection_dim", "80", "output width of the projection head"},
      {"pretrain.epochs", "50", "maximum pre-training epochs"},
      {"pretrain.batch_size", "32", "pre-training batch size"},
      {"pretrain.lr", "0.00002", "pre-training Adam learning rate"},
      {"pretrain.temperature", "0.5", "alignment loss temperature"},
      {"pretrain.holdout_fraction", "0.1", "share of train clips held out for early stopping"},
      {"pretrain.checkpoint", "", "pre-trained SIGC file read by collapse"},
      {"finetune.epochs", "100", "maximum fine-tuning epochs"},
      {"finetune.batch_size", "16", "fine-tuning batch size"},
      {"finetune.lr", "0.001", "fine-tuning Adam learning rate"},
      {"finetune.label_fraction", "1.0", "share of labelled train/dev clips (also used by sample-labels)"},
      {"finetune.freeze_encoders", "false", "withhold updates to stem and encoders"},
      {"finetune.view_mode", "both", "both | temporal_only | spatial_only"},
      {"finetune.skip_pretrain", "false", "start from random weights instead of a checkpoint"},
      {"finetune.checkpoint", "", "pre-trained SIGC file"},
      {"train.patience", "20", "epochs without dev improvement before stopping; 0 disables"},
      {"aug.ed", "true", "enable edge dropping"},
      {"aug.gn", "true", "enable Gaussian feature noise"},
      {"aug.fm", "true", "enable feature masking"},
      {"aug.ed_prob", "0.5", "edge drop probability"},
      {"aug.gn_sigma", "0.1", "feature noise standard deviation"},
      {"aug.fm_prob", "0.5", "feature mask probability"},
      {"eval.model", "", "fine-tuned SIGC file"},
      {"eval.split", "eval", "split scored by eval"},
      {"collapse.pairs", "200", "number of clips (positive pairs) in the collapse report"},
      {"collapse.split", "eval", "split sampled by collapse"},
      {"gradcheck.instances", "20", "random instances per gradient check"},
  };
  return keys;
}

namespace cfg_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace cfg_detail

class Config {
 public:
  Config() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  static bool known(const std::string& key) { return std::ranges::any_of(config_keys(), [&](const auto& k) { return key == k.name; }); }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  // "key=value" as given on the command line.
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set(cfg_detail::trim(std::string_view(assignment).substr(0, eq)), cfg_detail::trim(std::string_view(assignment).substr(eq + 1)));
  }

  void parse(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto t = cfg_detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value, got '" + t + "'");
      }
      const auto key = cfg_detail::trim(std::string_view(t).substr(0, eq));
      if (!known(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
      values_[key] = cfg_detail::trim(std::string_view(t).substr(eq + 1));
    }
  }

  void load_file(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    parse(read_file_bytes(path), path.string());
  }

  void apply_env() {
    if (const char* s = std::getenv("SIGNL_SEED"); s && *s) set("seed", s);
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  std::uint64_t u64(const std::string& key) const {
    const auto& s = str(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
    return v;
  }

  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  double real(const std::string& key) const {
    const auto& s = str(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
  }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    std::istringstream in(str(key));
    std::string item;
    while (std::getline(in, item, ',')) {
      Config probe;
      probe.values_[key] = cfg_detail::trim(item);
      out.push_back(probe.size(key));
    }
    return out;
  }

  // Every key with its resolved value, in table order. Feeding this back as a
  // config file reproduces the run.
  std::string snapshot() const {
    std::string out;
    for (const auto& k : config_keys()) out += std::string(k.name) + " = " + values_.at(k.name) + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

inline SynthConfig synth_config(const Config& c) {
  SynthConfig s;
  s.freq_bins = static_cast<std::uint32_t>(c.u64("synth.freq_bins"));
  s.time_frames = static_cast<std::uint32_t>(c.u64("synth.time_frames"));
  s.n_train = c.size("synth.n_train");
  s.n_dev = c.size("synth.n_dev");
  s.n_eval = c.size("synth.n_eval");
  s.n_attack_types = c.size("synth.n_attack_types");
  s.bonafide_fraction = c.real("synth.bonafide_fraction");
  s.artifact_strength = c.real("synth.artifact_strength");
  s.noise_sigma = c.real("synth.noise_sigma");
  s.seed = c.u64("seed");
  s.validate();
  return s;
}

// Geometry fields (freq_bins, segment_frames) come from the corpus; see
// model_config_for.
inline ModelConfig model_config(const Config& c) {
  ModelConfig m;
  m.graph.patches = c.size("graph.patches");
  m.graph.neighbors = c.size("graph.neighbors");
  m.graph.embed_dim = c.size("graph.embed_dim");
  m.layers = c.size("model.layers");
  m.heads = c.size("model.heads");
  m.head_hidden = c.sizes("model.head_hidden");
  m.projection_dim = c.size("model.projection_dim");
  m.view_mode = parse_view_mode(c.str("finetune.view_mode"));
  return m;
}

inline AugmentSpec augment_spec(const Config& c) {
  AugmentSpec a;
  a.ed_enabled = c.flag("aug.ed");
  a.gn_enabled = c.flag("aug.gn");
  a.fm_enabled = c.flag("aug.fm");
  a.ed_prob = c.real("aug.ed_prob");
  a.gn_sigma = c.real("aug.gn_sigma");
  a.fm_prob = c.real("aug.fm_prob");
  a.seed = c.u64("seed");
  a.validate();
  return a;
}

inline TrainConfig train_config(const Config& c, Phase phase) {
  TrainConfig t;
  t.phase = phase;
  const std::string p = phase == Phase::pretrain ? "pretrain." : "finetune.";
  t.epochs = c.size(p + "epochs");
  t.batch_size = c.size(p + "batch_size");
  t.learning_rate = c.real(p + "lr");
  t.seed = c.u64("seed");
  t.augment = augment_spec(c);
  t.temperature = c.real("pretrain.temperature");
  t.holdout_fraction = c.real("pretrain.holdout_fraction");
  t.patience = c.size("train.patience");
  if (phase == Phase::finetune) {
    t.label_fraction = c.real("finetune.label_fraction");
    t.freeze_encoders = c.flag("finetune.freeze_encoders");
    t.skip_pretrain = c.flag("finetune.skip_pretrain");
  }
  t.validate();
  return t;
}

}  // namespace signl
