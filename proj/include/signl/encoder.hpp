#pragma once

// Vision graph-convolution encoder pyramid, projection head and
// classification head.
//
// One layer: M = multi_head(S * H * theta); H' = relu(M) + skip(H), where S is
// the symmetrically normalized adjacency with self-loops, theta is square and
// the multi-head projection halves the width. skip is the identity when the
// width is unchanged and a learnable affine map otherwise. A graph vector is
// the concatenation of its final node embeddings in node order.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signl/errors.hpp"
#include "signl/graphbuild.hpp"
#include "signl/tensorgrad.hpp"

namespace signl {

// S = D^-1/2 (A + I) D^-1/2 with A the symmetrized edge set.
template <std::floating_point T>
Tensor<T> normalized_adjacency(const EdgeList& edges, std::size_t n) {
  std::vector<double> a(n * n, 0.0);
  for (const auto& e : edges) {
    if (e.src >= n || e.dst >= n) throw ShapeError("edge references node outside [0, N)");
    if (e.src == e.dst) continue;
    a[e.src * n + e.dst] = 1.0;
    a[e.dst * n + e.src] = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a[i * n + j];
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  std::vector<T> s(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) s[i * n + j] = static_cast<T>(inv_sqrt_deg[i] * a[i * n + j] * inv_sqrt_deg[j]);
  }
  return Tensor<T>({n, n}, std::move(s));
}

// S * H * theta for a batch of graphs stacked row-wise (one S per graph).
template <std::floating_point T>
Tensor<T> gcn_layer(Tape<T>& tape, std::span<const Tensor<T>> adjacency, const Tensor<T>& h, const Tensor<T>& theta) {
  if (theta.rank() != 2 || theta.rows() != h.cols()) {
    throw ShapeError("gcn weights " + shape_str(theta.dims()) + " for features " + shape_str(h.dims()));
  }
  return tape.matmul(tape.block_left_multiply(adjacency, h), theta);
}

template <std::floating_point T>
Tensor<T> gcn_layer(Tape<T>& tape, const Tensor<T>& adjacency, const Tensor<T>& h, const Tensor<T>& theta) {
  return gcn_layer(tape, std::span<const Tensor<T>>(&adjacency, 1), h, theta);
}

// Splits every row into heads.size() contiguous chunks, maps chunk j by
// heads[j] and concatenates the results in head order.
template <std::floating_point T>
Tensor<T> multi_head_transform(Tape<T>& tape, const Tensor<T>& h, std::span<const Tensor<T>> heads) {
  const std::size_t k = heads.size();
  if (k == 0) throw ConfigError("multi-head transform needs at least one head");
  if (h.cols() % k != 0) {
    throw ConfigError("feature width " + std::to_string(h.cols()) + " not divisible by head count " + std::to_string(k));
  }
  const std::size_t chunk = h.cols() / k;
  for (const auto& w : heads) {
    if (w.rank() != 2 || w.rows() != chunk || w.cols() != heads[0].cols()) {
      throw ShapeError("head weight " + shape_str(w.dims()) + " does not map chunks of width " + std::to_string(chunk));
    }
  }
  if (k == 1) return tape.matmul(h, heads[0]);
  const std::vector<std::size_t> counts(k, chunk);
  auto parts = tape.split(h, 1, counts);
  std::vector<Tensor<T>> mapped;
  mapped.reserve(k);
  for (std::size_t j = 0; j < k; ++j) mapped.push_back(tape.matmul(parts[j], heads[j]));
  return tape.concat(std::span<const Tensor<T>>(mapped), 1);
}

// Largest head count <= requested that divides both layer widths.
inline std::size_t effective_heads(std::size_t requested, std::size_t d_in, std::size_t d_out) {
  return std::gcd(requested, std::gcd(d_in, d_out));
}

template <std::floating_point T>
struct LayerParams {
  Tensor<T> gcn;               // d_in × d_in
  std::vector<Tensor<T>> heads;  // each (d_in/h) × (d_out/h)
  std::optional<AffineMap<T>> skip;  // present iff d_in != d_out

  std::size_t in_dim() const { return gcn.rows(); }
  std::size_t out_dim() const { return heads.front().cols() * heads.size(); }
};

template <std::floating_point T>
Tensor<T> vision_gc_layer(Tape<T>& tape, std::span<const Tensor<T>> adjacency, const Tensor<T>& h_prev,
                          const LayerParams<T>& p) {
  auto mixed = multi_head_transform<T>(tape, gcn_layer(tape, adjacency, h_prev, p.gcn), p.heads);
  auto residual = p.skip ? p.skip->apply(tape, h_prev) : h_prev;
  return tape.add(tape.relu(mixed), residual);
}

template <std::floating_point T>
class EncoderStack {
 public:
  EncoderStack() = default;

  // Widths halve at each of `layers` layers starting from input_dim.
  static EncoderStack create(ParamStore<T>& store, const std::string& prefix, std::size_t input_dim,
                             std::size_t layers, std::size_t heads, std::uint64_t seed) {
    EncoderStack enc;
    enc.dims_ = pyramid_dims(input_dim, layers);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t d_in = enc.dims_[l], d_out = enc.dims_[l + 1];
      const std::size_t h = effective_heads(heads, d_in, d_out);
      const std::string base = prefix + ".layer" + std::to_string(l);
      LayerParams<T> p;
      p.gcn = store.add(base + ".gcn.w", init_weight<T>(d_in, d_in, seed, base + ".gcn.w"));
      for (std::size_t j = 0; j < h; ++j) {
        const std::string name = base + ".head" + std::to_string(j) + ".w";
        p.heads.push_back(store.add(name, init_weight<T>(d_in / h, d_out / h, seed, name)));
      }
      if (d_in != d_out) p.skip = make_affine(store, base + ".skip", d_in, d_out, seed);
      enc.layers_.push_back(std::move(p));
    }
    return enc;
  }

  static std::vector<std::size_t> pyramid_dims(std::size_t input_dim, std::size_t layers) {
    std::vector<std::size_t> dims{input_dim};
    for (std::size_t l = 0; l < layers; ++l) {
      if (dims.back() % 2 != 0) {
        throw ConfigError("pyramid width " + std::to_string(dims.back()) + " at layer " + std::to_string(l) +
                          " cannot be halved; D must be divisible by 2^layers");
      }
      dims.push_back(dims.back() / 2);
    }
    return dims;
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t output_dim() const { return dims_.back(); }
  const std::vector<LayerParams<T>>& layers() const { return layers_; }

  // Stacked node features (one block of rows per graph) -> final node embeddings.
  Tensor<T> encode_nodes(Tape<T>& tape, std::span<const Tensor<T>> adjacency, const Tensor<T>& x) const {
    if (x.cols() != dims_.front()) {
      throw ShapeError("encoder expects width " + std::to_string(dims_.front()) + ", got " + shape_str(x.dims()));
    }
    Tensor<T> h = x;
    for (const auto& layer : layers_) h = vision_gc_layer<T>(tape, adjacency, h, layer);
    return h;
  }

  // Batch of graphs with equal node counts -> B × (N·d_L) CONCAT-pooled vectors.
  Tensor<T> encode(Tape<T>& tape, std::span<const GraphView<T>> graphs) const {
    if (graphs.empty()) throw ShapeError("encode of an empty batch");
    const std::size_t n = graphs[0].num_nodes();
    std::vector<Tensor<T>> adjacency, feats;
    adjacency.reserve(graphs.size());
    feats.reserve(graphs.size());
    for (const auto& g : graphs) {
      if (g.num_nodes() != n) throw ShapeError("graphs in a batch must share the node count");
      adjacency.push_back(normalized_adjacency<T>(g.edges, n));
      feats.push_back(g.x);
    }
    auto x = graphs.size() == 1 ? feats[0] : tape.concat(std::span<const Tensor<T>>(feats), 0);
    auto nodes = encode_nodes(tape, adjacency, x);
    return tape.reshape(nodes, {graphs.size(), n * output_dim()});
  }

  Tensor<T> encode(Tape<T>& tape, const GraphView<T>& g) const {
    return encode(tape, std::span<const GraphView<T>>(&g, 1));
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<LayerParams<T>> layers_;
};

// Affine layers with ReLU between them and none after the last.
template <std::floating_point T>
class Mlp {
 public:
  Mlp() = default;

  static Mlp create(ParamStore<T>& store, const std::string& prefix, std::size_t input_dim,
                    std::span<const std::size_t> widths, std::uint64_t seed) {
    Mlp m;
    std::size_t in = input_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      m.layers_.push_back(make_affine(store, prefix + ".fc" + std::to_string(i), in, widths[i], seed));
      in = widths[i];
    }
    return m;
  }

  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.back().out_dim(); }
  bool empty() const { return layers_.empty(); }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].apply(tape, h);
      if (i + 1 < layers_.size()) h = tape.relu(h);
    }
    return h;
  }

 private:
  std::vector<AffineMap<T>> layers_;
};

// Joins the available graph vectors; an undefined tensor marks a dropped view.
template <std::floating_point T>
Tensor<T> join_views(Tape<T>& tape, const Tensor<T>& h_t, const Tensor<T>& h_s) {
  if (h_t.defined() && h_s.defined()) return tape.concat({h_t, h_s}, 1);
  if (h_t.defined()) return h_t;
  if (h_s.defined()) return h_s;
  throw ContractError("no graph view available");
}

// z = g(h_t || h_s)
template <std::floating_point T>
Tensor<T> project(Tape<T>& tape, const Tensor<T>& h_t, const Tensor<T>& h_s, const Mlp<T>& head) {
  auto h = join_views(tape, h_t, h_s);
  if (h.cols() != head.input_dim()) {
    throw ShapeError("projection head expects " + std::to_string(head.input_dim()) + " inputs, got " +
                     shape_str(h.dims()));
  }
  return head.forward(tape, h);
}

// Two logits per row: index 1 is bona fide.
template <std::floating_point T>
Tensor<T> classify(Tape<T>& tape, const Tensor<T>& h_t, const Tensor<T>& h_s, const Mlp<T>& head) {
  auto h = join_views(tape, h_t, h_s);
  if (h.cols() != head.input_dim()) {
    throw ShapeError("classification head expects " + std::to_string(head.input_dim()) + " inputs, got " +
                     shape_str(h.dims()));
  }
  return head.forward(tape, h);
}

enum class ViewMode { both, temporal_only, spatial_only };
enum class HeadKind { projection, classifier };

inline std::string to_string(ViewMode v) {
  switch (v) {
    case ViewMode::both: return "both";
    case ViewMode::temporal_only: return "temporal_only";
    case ViewMode::spatial_only: return "spatial_only";
  }
  return "?";
}

inline ViewMode parse_view_mode(const std::string& s) {
  if (s == "both") return ViewMode::both;
  if (s == "temporal_only") return ViewMode::temporal_only;
  if (s == "spatial_only") return ViewMode::spatial_only;
  throw ConfigError("unknown view_mode '" + s + "'");
}

struct ModelConfig {
  GraphConfig graph;
  std::uint32_t freq_bins = 64;
  std::uint32_t segment_frames = 32;  // time frames of one half
  std::size_t layers = 5;
  std::size_t heads = 4;
  std::vector<std::size_t> head_hidden{256, 128};
  std::size_t projection_dim = 80;
  std::size_t num_classes = 2;
  ViewMode view_mode = ViewMode::both;

  std::size_t temporal_patch_dim() const { return std::size_t{freq_bins} * (segment_frames / graph.patches); }
  std::size_t spatial_patch_dim() const { return (freq_bins / graph.patches) * std::size_t{segment_frames}; }
  bool uses_temporal() const { return view_mode != ViewMode::spatial_only; }
  bool uses_spatial() const { return view_mode != ViewMode::temporal_only; }

  void validate() const {
    graph.validate();
    if (segment_frames % graph.patches != 0) {
      throw ConfigError("segment width " + std::to_string(segment_frames) + " (T/2) not divisible by N=" +
                        std::to_string(graph.patches));
    }
    if (freq_bins % graph.patches != 0) {
      throw ConfigError("freq_bins F=" + std::to_string(freq_bins) + " not divisible by N=" + std::to_string(graph.patches));
    }
    if (layers < 1) throw ConfigError("encoder needs at least one layer");
    if (heads < 1) throw ConfigError("head count must be >= 1");
    EncoderStack<double>::pyramid_dims(graph.embed_dim, layers);
  }
};

// Stem, the two encoders and one head (projection for pre-training,
// classifier for detection). Every tensor lives in `params`.
template <std::floating_point T>
class SignlModel {
 public:
  SignlModel(const ModelConfig& cfg, HeadKind head, std::uint64_t seed) : cfg_(cfg), head_kind_(head) {
    cfg.validate();
    stem_ = StemParams<T>::create(params_, cfg.temporal_patch_dim(), cfg.spatial_patch_dim(), cfg.graph.embed_dim, seed);
    if (cfg.uses_temporal()) enc_t_ = EncoderStack<T>::create(params_, "enc_t", cfg.graph.embed_dim, cfg.layers, cfg.heads, seed);
    if (cfg.uses_spatial()) enc_s_ = EncoderStack<T>::create(params_, "enc_s", cfg.graph.embed_dim, cfg.layers, cfg.heads, seed);
    std::vector<std::size_t> widths = cfg.head_hidden;
    widths.push_back(head == HeadKind::projection ? cfg.projection_dim : cfg.num_classes);
    head_ = Mlp<T>::create(params_, head == HeadKind::projection ? "proj" : "cls", graph_vector_dim(), widths, seed);
  }

  // Movable only: layer objects hold handles into params_, which move with it.
  SignlModel(SignlModel&&) noexcept = default;
  SignlModel& operator=(SignlModel&&) noexcept = default;
  SignlModel(const SignlModel&) = delete;
  SignlModel& operator=(const SignlModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  HeadKind head_kind() const { return head_kind_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const StemParams<T>& stem() const { return stem_; }
  const std::optional<EncoderStack<T>>& temporal_encoder() const { return enc_t_; }
  const std::optional<EncoderStack<T>>& spatial_encoder() const { return enc_s_; }
  const Mlp<T>& head() const { return head_; }

  // Length of h_t || h_s (or of the single kept view).
  std::size_t graph_vector_dim() const {
    const std::size_t per_view = cfg_.graph.patches * (cfg_.graph.embed_dim >> cfg_.layers);
    return per_view * ((cfg_.uses_temporal() ? 1 : 0) + (cfg_.uses_spatial() ? 1 : 0));
  }

  // Graph vectors for batches of temporal and spatial views; the result for a
  // dropped view is undefined.
  std::pair<Tensor<T>, Tensor<T>> encode_views(Tape<T>& tape, std::span<const GraphView<T>> temporal,
                                               std::span<const GraphView<T>> spatial) const {
    Tensor<T> ht, hs;
    if (enc_t_) ht = enc_t_->encode(tape, temporal);
    if (enc_s_) hs = enc_s_->encode(tape, spatial);
    return {ht, hs};
  }

  Tensor<T> apply_head(Tape<T>& tape, const Tensor<T>& ht, const Tensor<T>& hs) const {
    return head_kind_ == HeadKind::projection ? project(tape, ht, hs, head_) : classify(tape, ht, hs, head_);
  }

  // Parameter name prefixes upstream of the head.
  static std::vector<std::string> representation_prefixes() { return {"stem_", "enc_"}; }

 private:
  ModelConfig cfg_;
  HeadKind head_kind_;
  ParamStore<T> params_;
  StemParams<T> stem_;
  std::optional<EncoderStack<T>> enc_t_, enc_s_;
  Mlp<T> head_;
};

}  // namespace signl
