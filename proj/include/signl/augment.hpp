#pragma once

// Stochastic graph augmentations: edge dropping (ED), Gaussian feature noise
// (GN) and feature masking (FM).

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "signl/errors.hpp"
#include "signl/graphbuild.hpp"
#include "signl/rng.hpp"
#include "signl/tensorgrad.hpp"

namespace signl {

struct AugmentSpec {
  bool ed_enabled = false;
  bool gn_enabled = false;
  bool fm_enabled = false;
  double ed_prob = 0.5;
  double gn_sigma = 0.1;
  double fm_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(ed_prob >= 0.0 && ed_prob <= 1.0)) throw ConfigError("aug.ed_prob must be in [0,1]");
    if (!(fm_prob >= 0.0 && fm_prob <= 1.0)) throw ConfigError("aug.fm_prob must be in [0,1]");
    if (!std::isfinite(gn_sigma) || gn_sigma < 0.0) throw ConfigError("aug.gn_sigma must be finite and >= 0");
  }

  // Row k (1-based) of the ED/GN/FM enable grid: bit 2 = ED, bit 1 = GN, bit 0 = FM of (k - 1).
  static AugmentSpec grid_row(int k, const AugmentSpec& base) {
    if (k < 1 || k > 8) throw ConfigError("augmentation grid row must be 1..8");
    AugmentSpec s = base;
    const int bits = k - 1;
    s.ed_enabled = (bits & 4) != 0;
    s.gn_enabled = (bits & 2) != 0;
    s.fm_enabled = (bits & 1) != 0;
    return s;
  }
};

// Identifies one draw: the same key always yields the same augmentation.
struct AugmentKey {
  std::string sample_key;
  std::uint64_t epoch = 0;
  std::string view_tag;  // e.g. "t1", "s2"
};

template <std::floating_point T>
GraphView<T> edge_drop(const GraphView<T>& g, double p, Rng& rng) {
  GraphView<T> out = g;
  if (p <= 0.0) return out;
  out.edges.clear();
  std::bernoulli_distribution keep(1.0 - p);
  for (const auto& e : g.edges) {
    if (keep(rng)) out.edges.push_back(e);
  }
  return out;
}

template <std::floating_point T>
GraphView<T> gaussian_noise(Tape<T>& tape, const GraphView<T>& g, double sigma, Rng& rng) {
  if (sigma <= 0.0) return g;
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<T> noise(g.x.numel());
  for (auto& v : noise) v = static_cast<T>(n(rng));
  GraphView<T> out = g;
  out.x = tape.add(g.x, Tensor<T>(g.x.dims(), std::move(noise)));
  return out;
}

// Each (node, dim) entry is zeroed independently with probability p.
template <std::floating_point T>
GraphView<T> feature_mask(Tape<T>& tape, const GraphView<T>& g, double p, Rng& rng) {
  if (p <= 0.0) return g;
  std::bernoulli_distribution drop(p);
  std::vector<T> mask(g.x.numel());
  for (auto& v : mask) v = drop(rng) ? T{0} : T{1};
  GraphView<T> out = g;
  out.x = tape.mul(g.x, Tensor<T>(g.x.dims(), std::move(mask)));
  return out;
}

// Enabled augmentations in the fixed order ED -> GN -> FM, each with its own
// stream derived from (seed, sample key, epoch, view tag).
template <std::floating_point T>
GraphView<T> apply_augment(Tape<T>& tape, const AugmentSpec& spec, const GraphView<T>& g, const AugmentKey& key) {
  spec.validate();
  GraphView<T> out = g;
  auto stream = [&](const char* op) { return Rng(derive_seed(spec.seed, key.sample_key, key.epoch, key.view_tag, op)); };
  if (spec.ed_enabled) {
    auto rng = stream("ed");
    out = edge_drop(out, spec.ed_prob, rng);
  }
  if (spec.gn_enabled) {
    auto rng = stream("gn");
    out = gaussian_noise(tape, out, spec.gn_sigma, rng);
  }
  if (spec.fm_enabled) {
    auto rng = stream("fm");
    out = feature_mask(tape, out, spec.fm_prob, rng);
  }
  return out;
}

}  // namespace signl
