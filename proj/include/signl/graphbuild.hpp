#pragma once

// Feature matrix -> temporal/spatial patch graphs, and the four-graph
// positive-pair bundle used for pre-training.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "signl/errors.hpp"
#include "signl/featio.hpp"
#include "signl/rng.hpp"
#include "signl/tensorgrad.hpp"

namespace signl {

enum class ViewKind { temporal, spatial };
enum class SegmentId { whole = 0, first = 1, second = 2 };

inline std::string to_string(ViewKind k) { return k == ViewKind::temporal ? "temporal" : "spatial"; }

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  auto operator<=>(const Edge&) const = default;
};

using EdgeList = std::vector<Edge>;

struct GraphConfig {
  std::size_t patches = 8;    // N, nodes per view
  std::size_t neighbors = 3;  // K
  std::size_t embed_dim = 32; // D

  void validate() const {
    if (patches < 2) throw ConfigError("patch count N must be >= 2");
    if (neighbors < 1 || neighbors > patches - 1) {
      throw ConfigError("neighbor count K=" + std::to_string(neighbors) + " outside [1, N-1] for N=" +
                        std::to_string(patches));
    }
    if (embed_dim < 1) throw ConfigError("embedding dim D must be >= 1");
  }
};

// Halves along time. Odd widths are first padded by re-appending column 0.
inline std::pair<FeatureMatrix, FeatureMatrix> split_pair(const FeatureMatrix& m) {
  const std::size_t F = m.freq_bins;
  const std::size_t T = m.time_frames + (m.time_frames % 2);
  const std::size_t half = T / 2;
  auto column = [&](std::size_t t) { return t < m.time_frames ? t : 0; };
  FeatureMatrix a(m.freq_bins, static_cast<std::uint32_t>(half), m.clip_id);
  FeatureMatrix b(m.freq_bins, static_cast<std::uint32_t>(half), m.clip_id);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < half; ++t) {
      a.at(f, t) = m.at(f, column(t));
      b.at(f, t) = m.at(f, column(half + t));
    }
  }
  return {std::move(a), std::move(b)};
}

// Temporal patch i spans columns [i*T/N, (i+1)*T/N); spatial patch i spans
// rows [i*F/N, (i+1)*F/N).
inline std::vector<FeatureMatrix> patchify(const FeatureMatrix& m, std::size_t n, ViewKind kind) {
  if (n == 0) throw ConfigError("patch count must be positive");
  const std::size_t F = m.freq_bins, T = m.time_frames;
  if (kind == ViewKind::temporal && T % n != 0) {
    throw ConfigError("time_frames T=" + std::to_string(T) + " not divisible by N=" + std::to_string(n));
  }
  if (kind == ViewKind::spatial && F % n != 0) {
    throw ConfigError("freq_bins F=" + std::to_string(F) + " not divisible by N=" + std::to_string(n));
  }
  std::vector<FeatureMatrix> out;
  out.reserve(n);
  if (kind == ViewKind::temporal) {
    const std::size_t w = T / n;
    for (std::size_t i = 0; i < n; ++i) {
      FeatureMatrix p(static_cast<std::uint32_t>(F), static_cast<std::uint32_t>(w), m.clip_id);
      for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t t = 0; t < w; ++t) p.at(f, t) = m.at(f, i * w + t);
      }
      out.push_back(std::move(p));
    }
  } else {
    const std::size_t h = F / n;
    for (std::size_t i = 0; i < n; ++i) {
      FeatureMatrix p(static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(T), m.clip_id);
      std::copy_n(m.values.begin() + static_cast<std::ptrdiff_t>(i * h * T), h * T, p.values.begin());
      out.push_back(std::move(p));
    }
  }
  return out;
}

// Rows are the row-major flattened patches.
template <std::floating_point T>
Tensor<T> patch_rows(std::span<const FeatureMatrix> patches) {
  if (patches.empty()) throw ShapeError("no patches");
  const std::size_t width = patches[0].values.size();
  std::vector<T> values;
  values.reserve(patches.size() * width);
  for (const auto& p : patches) {
    if (p.values.size() != width) throw ShapeError("patches have inconsistent shapes");
    values.insert(values.end(), p.values.begin(), p.values.end());
  }
  return Tensor<T>({patches.size(), width}, std::move(values));
}

// x * weight + bias, weight in×out. An undefined bias means none.
template <std::floating_point T>
struct AffineMap {
  Tensor<T> weight;
  Tensor<T> bias;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  Tensor<T> apply(Tape<T>& tape, const Tensor<T>& x) const {
    if (x.rank() != 2 || x.cols() != in_dim()) {
      throw ShapeError("affine map " + shape_str(weight.dims()) + " applied to " + shape_str(x.dims()));
    }
    auto y = tape.matmul(x, weight);
    return bias.defined() ? tape.add_bias(y, bias) : y;
  }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights seeded by parameter name.
template <std::floating_point T>
Tensor<T> init_weight(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed, const std::string& name) {
  Rng rng(derive_seed(seed, name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<T> w(fan_in * fan_out);
  for (auto& v : w) v = static_cast<T>(u(rng));
  return Tensor<T>({fan_in, fan_out}, std::move(w));
}

template <std::floating_point T>
AffineMap<T> make_affine(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                         std::uint64_t seed, bool with_bias = true) {
  AffineMap<T> map;
  map.weight = store.add(prefix + ".w", init_weight<T>(in, out, seed, prefix + ".w"));
  if (with_bias) map.bias = store.add(prefix + ".b", Tensor<T>({out}));
  return map;
}

// The per-view patch stems; weights are shared across patches of a view.
template <std::floating_point T>
struct StemParams {
  AffineMap<T> temporal;
  AffineMap<T> spatial;

  const AffineMap<T>& for_kind(ViewKind k) const { return k == ViewKind::temporal ? temporal : spatial; }

  static StemParams create(ParamStore<T>& store, std::size_t temporal_patch_dim, std::size_t spatial_patch_dim,
                           std::size_t embed_dim, std::uint64_t seed) {
    return {make_affine(store, "stem_t", temporal_patch_dim, embed_dim, seed),
            make_affine(store, "stem_s", spatial_patch_dim, embed_dim, seed)};
  }
};

template <std::floating_point T>
Tensor<T> stem_embed(Tape<T>& tape, std::span<const FeatureMatrix> patches, const AffineMap<T>& map) {
  return map.apply(tape, patch_rows<T>(patches));
}

// For each node i the K nearest other nodes (Euclidean, ties to the smaller
// index) send an edge j -> i. Edges are grouped by destination in ascending
// order, neighbors nearest first.
template <typename V>
EdgeList knn_graph(std::span<const V> features, std::size_t n, std::size_t dim, std::size_t k) {
  if (features.size() != n * dim) throw ShapeError("knn_graph: feature buffer does not match N x D");
  if (n < 2 || k < 1 || k > n - 1) {
    throw ConfigError("K=" + std::to_string(k) + " outside [1, N-1] for N=" + std::to_string(n));
  }
  EdgeList edges;
  edges.reserve(n * k);
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = static_cast<double>(features[j * dim + c]) - static_cast<double>(features[i * dim + c]);
        d += diff * diff;
      }
      dist.emplace_back(d, j);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    for (std::size_t r = 0; r < k; ++r) {
      edges.push_back({static_cast<std::uint32_t>(dist[r].second), static_cast<std::uint32_t>(i)});
    }
  }
  return edges;
}

template <std::floating_point T>
struct GraphView {
  ViewKind kind = ViewKind::temporal;
  Tensor<T> x;  // N×D node features
  EdgeList edges;
  std::string clip_id;
  SegmentId segment = SegmentId::whole;

  std::size_t num_nodes() const { return x.rows(); }
  std::size_t feature_dim() const { return x.cols(); }
};

template <std::floating_point T>
struct PairBundle {
  GraphView<T> t1, s1, t2, s2;
};

// One view of one segment: patchify -> stem -> k-NN on the stem output.
template <std::floating_point T>
GraphView<T> build_view(Tape<T>& tape, const FeatureMatrix& segment_matrix, const GraphConfig& cfg,
                        const StemParams<T>& stem, ViewKind kind, SegmentId segment) {
  const auto patches = patchify(segment_matrix, cfg.patches, kind);
  GraphView<T> g;
  g.kind = kind;
  g.clip_id = segment_matrix.clip_id;
  g.segment = segment;
  g.x = stem_embed<T>(tape, patches, stem.for_kind(kind));
  if (g.x.cols() != cfg.embed_dim) throw ShapeError("stem output width differs from configured D");
  g.edges = knn_graph<T>(g.x.data(), cfg.patches, cfg.embed_dim, cfg.neighbors);
  return g;
}

template <std::floating_point T>
PairBundle<T> build_bundle(Tape<T>& tape, const FeatureMatrix& m, const GraphConfig& cfg,
                           const StemParams<T>& stem) {
  cfg.validate();
  const auto [first, second] = split_pair(m);
  return {build_view(tape, first, cfg, stem, ViewKind::temporal, SegmentId::first),
          build_view(tape, first, cfg, stem, ViewKind::spatial, SegmentId::first),
          build_view(tape, second, cfg, stem, ViewKind::temporal, SegmentId::second),
          build_view(tape, second, cfg, stem, ViewKind::spatial, SegmentId::second)};
}

// Debug export: structure plus per-node feature checksums.
template <std::floating_point T>
std::string graph_to_json(const GraphView<T>& g) {
  nlohmann::ordered_json j;
  j["clip_id"] = g.clip_id;
  j["kind"] = to_string(g.kind);
  j["segment"] = static_cast<int>(g.segment);
  j["num_nodes"] = g.num_nodes();
  j["feature_dim"] = g.feature_dim();
  auto nodes = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < g.feature_dim(); ++c) {
      const double v = g.x.at(i, c);
      s += v;
      s2 += v * v;
    }
    nodes.push_back({{"id", i}, {"sum", s}, {"sum_sq", s2}});
  }
  j["nodes"] = nodes;
  auto edges = nlohmann::ordered_json::array();
  for (const auto& e : g.edges) edges.push_back({e.src, e.dst});
  j["edges"] = edges;
  return j.dump();
}

}  // namespace signl
