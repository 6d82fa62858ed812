#pragma once

// Feature matrices (SIGF files), dataset manifests (JSON lines), a synthetic
// bona-fide/fake corpus generator and the stratified limited-label sampler.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "signl/errors.hpp"
#include "signl/rng.hpp"

namespace signl {

namespace fs = std::filesystem;

// F×T matrix, frequency bins as rows, time frames as columns.
struct FeatureMatrix {
  std::uint32_t freq_bins = 0;
  std::uint32_t time_frames = 0;
  std::vector<float> values;
  std::string clip_id;

  FeatureMatrix() = default;
  FeatureMatrix(std::uint32_t f, std::uint32_t t, std::string id = {})
      : freq_bins(f), time_frames(t), values(std::size_t{f} * t, 0.0f), clip_id(std::move(id)) {}

  float& at(std::size_t f, std::size_t t) { return values[f * time_frames + t]; }
  float at(std::size_t f, std::size_t t) const { return values[f * time_frames + t]; }

  bool operator==(const FeatureMatrix&) const = default;
};

inline constexpr std::array<char, 4> kSigfMagic{'S', 'I', 'G', 'F'};
inline constexpr std::uint16_t kSigfVersion = 1;
inline constexpr std::size_t kSigfHeaderBytes = 14;

namespace le {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace le

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

inline std::string encode_sigf(const FeatureMatrix& m) {
  if (m.freq_bins == 0 || m.time_frames == 0 || m.values.size() != std::size_t{m.freq_bins} * m.time_frames) {
    throw FormatError("feature matrix " + m.clip_id + " has inconsistent extents");
  }
  std::string out;
  out.reserve(kSigfHeaderBytes + 4 * m.values.size());
  out.append(kSigfMagic.data(), kSigfMagic.size());
  le::put_u16(out, kSigfVersion);
  le::put_u32(out, m.freq_bins);
  le::put_u32(out, m.time_frames);
  for (float v : m.values) {
    if (!std::isfinite(v)) throw FormatError("non-finite value in " + m.clip_id);
    le::put_f32(out, v);
  }
  return out;
}

inline FeatureMatrix decode_sigf(const std::string& bytes, std::string clip_id = {}) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kSigfHeaderBytes) throw FormatError("SIGF header truncated");
  if (std::memcmp(p, kSigfMagic.data(), 4) != 0) throw FormatError("bad SIGF magic");
  if (le::get_u16(p + 4) != kSigfVersion) throw FormatError("unsupported SIGF version " + std::to_string(le::get_u16(p + 4)));
  FeatureMatrix m(le::get_u32(p + 6), le::get_u32(p + 10), std::move(clip_id));
  if (m.freq_bins == 0 || m.time_frames == 0) throw FormatError("SIGF with zero extent");
  const std::size_t expected = kSigfHeaderBytes + 4 * m.values.size();
  if (bytes.size() != expected) {
    throw FormatError("SIGF payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected));
  }
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = le::get_f32(p + kSigfHeaderBytes + 4 * i);
    if (!std::isfinite(m.values[i])) throw FormatError("non-finite value in SIGF payload");
  }
  return m;
}

inline void write_feature(const FeatureMatrix& m, const fs::path& path) { write_file_bytes(path, encode_sigf(m)); }

// The clip id is the file stem.
inline FeatureMatrix read_feature(const fs::path& path) {
  return decode_sigf(read_file_bytes(path), path.stem().string());
}

// ---------------------------------------------------------------------------
// Manifest

enum class Label { bonafide, fake };
enum class Split { train, dev, eval };

inline std::string to_string(Label l) { return l == Label::bonafide ? "bonafide" : "fake"; }

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::eval: return "eval";
  }
  return "?";
}

inline Label parse_label(const std::string& s) {
  if (s == "bonafide") return Label::bonafide;
  if (s == "fake") return Label::fake;
  throw FormatError("unknown label '" + s + "'");
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "eval") return Split::eval;
  throw FormatError("unknown split '" + s + "'");
}

// Class index used by the classifier: bona fide is the positive class 1.
inline int class_index(Label l) { return l == Label::bonafide ? 1 : 0; }

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  Label label = Label::bonafide;
  std::string attack_id = "-";
  Split split = Split::train;

  std::string clip_id() const { return fs::path(path).stem().string(); }
  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  fs::path base_dir;
  std::vector<ManifestEntry> entries;

  fs::path resolve(const ManifestEntry& e) const { return base_dir / e.path; }

  std::vector<ManifestEntry> split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
      if (e.split == s) out.push_back(e);
    }
    return out;
  }
};

inline void validate_entry(const ManifestEntry& e) {
  if (e.path.empty()) throw FormatError("manifest entry with empty path");
  if ((e.label == Label::bonafide) != (e.attack_id == "-")) {
    throw FormatError("entry " + e.path + ": bona fide entries must have attack_id '-' and fakes must not");
  }
}

inline std::string entry_to_json(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["path"] = e.path;
  j["label"] = to_string(e.label);
  j["attack_id"] = e.attack_id;
  j["split"] = to_string(e.split);
  return j.dump();
}

inline ManifestEntry entry_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& err) {
    throw FormatError(std::string("manifest line is not JSON: ") + err.what());
  }
  if (!j.is_object() || j.size() != 4) throw FormatError("manifest entry must have exactly 4 fields: " + line);
  ManifestEntry e;
  try {
    e.path = j.at("path").get<std::string>();
    e.label = parse_label(j.at("label").get<std::string>());
    e.attack_id = j.at("attack_id").get<std::string>();
    e.split = parse_split(j.at("split").get<std::string>());
  } catch (const nlohmann::json::exception& err) {
    throw FormatError(std::string("bad manifest entry: ") + err.what());
  }
  validate_entry(e);
  return e;
}

inline std::string encode_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) out += entry_to_json(e) + "\n";
  return out;
}

inline void write_manifest(const Manifest& m, const fs::path& path) {
  write_file_bytes(path, encode_manifest(m.entries));
}

inline Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    m.entries.push_back(entry_from_json(line));
  }
  return m;
}

// Checks that every entry points at a readable SIGF file with the given extents.
inline void check_manifest_files(const Manifest& m, std::uint32_t freq_bins, std::uint32_t time_frames) {
  for (const auto& e : m.entries) {
    const auto f = read_feature(m.resolve(e));
    if (f.freq_bins != freq_bins || f.time_frames != time_frames) {
      throw FormatError(e.path + " is " + std::to_string(f.freq_bins) + "x" + std::to_string(f.time_frames));
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthConfig {
  std::uint32_t freq_bins = 64;
  std::uint32_t time_frames = 64;
  std::size_t n_train = 2000;
  std::size_t n_dev = 500;
  std::size_t n_eval = 1000;
  std::size_t n_attack_types = 3;
  double bonafide_fraction = 0.25;
  double artifact_strength = 1.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (freq_bins < 8 || time_frames < 8) throw ConfigError("synthetic F and T must be at least 8");
    if (freq_bins % 8 != 0) throw ConfigError("synthetic F must be divisible by 8");
    if (time_frames % 8 != 0) throw ConfigError("synthetic T must be divisible by 8 (two halves of whole patches)");
    if (n_attack_types < 1) throw ConfigError("n_attack_types must be >= 1");
    if (!(bonafide_fraction > 0.0 && bonafide_fraction < 1.0)) throw ConfigError("bonafide_fraction must be in (0,1)");
    if (!(artifact_strength >= 0.0) || !std::isfinite(artifact_strength)) {
      throw ConfigError("artifact_strength must be finite and >= 0");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (n_train + n_dev + n_eval == 0) throw ConfigError("empty corpus requested");
  }
};

inline std::string attack_name(std::size_t index) {
  std::ostringstream os;
  os << 'A' << std::setw(2) << std::setfill('0') << index + 1;
  return os.str();
}

// Attack types cycle through three artifact families; later cycles vary the
// geometry (band height, notch period, seam spacing).
enum class ArtifactFamily { band_discontinuity, spectral_notch, temporal_seam };

inline ArtifactFamily artifact_family(std::size_t attack_index) {
  return static_cast<ArtifactFamily>(attack_index % 3);
}

namespace synth_detail {

inline void smooth_field(FeatureMatrix& m, Rng& rng, double noise_sigma) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::uniform_real_distribution<double> phase(0.0, two_pi);
  std::uniform_int_distribution<int> kf(0, 3);
  std::uniform_int_distribution<int> kt(0, 2);
  const double F = m.freq_bins, T = m.time_frames;
  std::vector<double> acc(m.values.size(), 0.0);
  for (int r = 0; r < 3; ++r) {
    const double a = amp(rng), pf = phase(rng), pt = phase(rng);
    const int wf = kf(rng), wt = kt(rng);
    for (std::size_t f = 0; f < m.freq_bins; ++f) {
      const double u = std::cos(two_pi * wf * f / F + pf);
      for (std::size_t t = 0; t < m.time_frames; ++t) {
        acc[f * m.time_frames + t] += a * u * std::cos(two_pi * wt * t / T + pt);
      }
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < acc.size(); ++i) m.values[i] = static_cast<float>(acc[i] + noise_sigma * noise(rng));
}

// Plants one artifact inside the time range [t0, t0 + width).
inline void plant(FeatureMatrix& m, std::size_t attack_index, double strength, std::size_t t0, std::size_t width,
                  Rng& rng) {
  const std::size_t F = m.freq_bins;
  const std::size_t variant = attack_index / 3;
  const std::size_t span = width / 2;
  std::uniform_int_distribution<std::size_t> start_t(t0, t0 + width - span);
  const float s = static_cast<float>(strength);
  switch (artifact_family(attack_index)) {
    case ArtifactFamily::band_discontinuity: {
      const std::size_t h = std::min(F / 2, F / 8 + 2 * variant);
      const std::size_t f0 = std::uniform_int_distribution<std::size_t>(0, F - h)(rng);
      const std::size_t c0 = start_t(rng);
      for (std::size_t f = f0; f < f0 + h; ++f) {
        for (std::size_t t = c0; t < c0 + span; ++t) m.at(f, t) += s;
      }
      break;
    }
    case ArtifactFamily::spectral_notch: {
      const std::size_t period = 4 + variant;
      const std::size_t ph = std::uniform_int_distribution<std::size_t>(0, period - 1)(rng);
      const std::size_t c0 = start_t(rng);
      for (std::size_t f = ph; f < F; f += period) {
        for (std::size_t t = c0; t < c0 + span; ++t) m.at(f, t) -= s;
      }
      break;
    }
    case ArtifactFamily::temporal_seam: {
      const std::size_t period = 3 + variant;
      const std::size_t h = F / 2;
      const std::size_t f0 = std::uniform_int_distribution<std::size_t>(0, F - h)(rng);
      const std::size_t ph = std::uniform_int_distribution<std::size_t>(0, period - 1)(rng);
      for (std::size_t t = t0 + ph; t < t0 + width; t += period) {
        for (std::size_t f = f0; f < f0 + h; ++f) m.at(f, t) += s;
      }
      break;
    }
  }
}

}  // namespace synth_detail

// One synthetic clip; a pure function of (config seed, clip id, label, attack).
// attack_index is ignored for bona-fide clips. Fake clips carry one artifact
// in each half of the time axis so that every segment is labelled correctly.
inline FeatureMatrix synth_clip(const SynthConfig& cfg, const std::string& clip_id, Label label,
                                std::size_t attack_index) {
  FeatureMatrix m(cfg.freq_bins, cfg.time_frames, clip_id);
  Rng rng(derive_seed(cfg.seed, clip_id));
  synth_detail::smooth_field(m, rng, cfg.noise_sigma);
  if (label == Label::fake) {
    const std::size_t half = cfg.time_frames / 2;
    for (std::size_t h = 0; h < 2; ++h) {
      synth_detail::plant(m, attack_index, cfg.artifact_strength, h * half, half, rng);
    }
  }
  return m;
}

// Writes <out_dir>/features/<clip>.sigf plus <out_dir>/manifest.jsonl.
inline Manifest gen_synthetic(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  Manifest manifest;
  manifest.base_dir = out_dir;
  const std::array<std::pair<Split, std::size_t>, 3> splits{
      {{Split::train, cfg.n_train}, {Split::dev, cfg.n_dev}, {Split::eval, cfg.n_eval}}};
  for (const auto& [split, n] : splits) {
    const auto n_bona = static_cast<std::size_t>(std::llround(cfg.bonafide_fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) {
      std::ostringstream id;
      id << to_string(split) << '_' << std::setw(5) << std::setfill('0') << i;
      ManifestEntry e;
      e.path = "features/" + id.str() + ".sigf";
      e.split = split;
      std::size_t attack = 0;
      if (i < n_bona) {
        e.label = Label::bonafide;
        e.attack_id = "-";
      } else {
        e.label = Label::fake;
        attack = (i - n_bona) % cfg.n_attack_types;
        e.attack_id = attack_name(attack);
      }
      write_feature(synth_clip(cfg, id.str(), e.label, attack), out_dir / e.path);
      manifest.entries.push_back(std::move(e));
    }
  }
  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

// ---------------------------------------------------------------------------
// Limited-label sampling

// ceil(p * n) with a small guard so that products such as 0.05 * 2580, which
// land a few ulps above an integer, are not rounded up.
inline std::size_t stratum_quota(double p, std::size_t n) {
  const double x = p * static_cast<double>(n);
  const double guarded = x - 1e-9 * std::max(1.0, x);
  return static_cast<std::size_t>(std::max(0.0, std::ceil(guarded)));
}

struct SampleResult {
  Manifest manifest;
  std::vector<std::string> warnings;
};

// Within train and dev, each (split, label, attack_id) stratum keeps
// ceil(p * n) entries chosen by a seeded shuffle; eval is kept whole. Output
// preserves the input order.
inline SampleResult sample_limited_labels(const Manifest& in, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");
  std::map<std::tuple<Split, Label, std::string>, std::vector<std::size_t>> strata;
  std::vector<char> keep(in.entries.size(), 0);
  for (std::size_t i = 0; i < in.entries.size(); ++i) {
    const auto& e = in.entries[i];
    if (e.split == Split::eval) {
      keep[i] = 1;
    } else {
      strata[{e.split, e.label, e.attack_id}].push_back(i);
    }
  }
  SampleResult result;
  for (auto& [key, idx] : strata) {
    const auto& [split, label, attack] = key;
    std::size_t quota = stratum_quota(p, idx.size());
    if (quota == 0) {
      result.warnings.push_back("stratum " + to_string(split) + "/" + to_string(label) + "/" + attack +
                                " would be empty at p=" + std::to_string(p) + "; keeping one entry");
      quota = 1;
    }
    Rng rng(derive_seed(seed, to_string(split), to_string(label), attack));
    std::vector<std::size_t> order = idx;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < quota; ++k) keep[order[k]] = 1;
  }
  result.manifest.base_dir = in.base_dir;
  for (std::size_t i = 0; i < in.entries.size(); ++i) {
    if (keep[i]) result.manifest.entries.push_back(in.entries[i]);
  }
  return result;
}

// Rebases entry paths so the manifest can be written under a new directory.
inline Manifest rebase_manifest(const Manifest& in, const fs::path& new_base) {
  Manifest out;
  out.base_dir = new_base;
  const auto abs_new = fs::absolute(new_base);
  for (auto e : in.entries) {
    e.path = fs::relative(fs::absolute(in.resolve(e)), abs_new).generic_string();
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace signl
