#pragma once

// Central finite-difference checks of the reverse-mode gradients in double
// precision. Each case draws random inputs, compares every analytic gradient
// entry against (f(x+h) - f(x-h)) / 2h and reports the worst relative error
// |a - n| / max(|a|, |n|, 1e-4).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "signl/encoder.hpp"
#include "signl/graphbuild.hpp"
#include "signl/metrics.hpp"
#include "signl/rng.hpp"
#include "signl/tensorgrad.hpp"

namespace signl {

using LossFn = std::function<Tensor<double>(Tape<double>&)>;

struct GradProblem {
  std::vector<Tensor<double>> inputs;  // leaves whose gradients are checked
  LossFn loss;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::size_t instances = 0;
  std::size_t redraws = 0;  // instances redrawn because a relu input sat near 0
};

inline double gradient_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

// Returns the worst relative error over all input entries, or a negative
// value when some relu input lies within `kink_margin` of zero (the function
// is not smooth there at the scale of h).
inline double check_problem(GradProblem& p, std::size_t& entries, double h = 1e-5, double kink_margin = 1e-3) {
  for (auto& x : p.inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tape<double> tape;
  auto loss = p.loss(tape);
  if (tape.relu_margin() < kink_margin) return -1.0;
  tape.backward(loss);
  double worst = 0.0;
  for (auto& x : p.inputs) {
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto v = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      Tape<double> tp(false);
      const double fp = p.loss(tp).item();
      v[i] = orig - h;
      Tape<double> tm(false);
      const double fm = p.loss(tm).item();
      v[i] = orig;
      worst = std::max(worst, gradient_rel_error(analytic[i], (fp - fm) / (2 * h)));
      ++entries;
    }
  }
  return worst;
}

using ProblemFactory = std::function<GradProblem(Rng&)>;

inline GradCheckResult run_gradcheck(const std::string& name, const ProblemFactory& make, std::size_t instances,
                                     std::uint64_t seed, double h = 1e-5) {
  GradCheckResult r;
  r.name = name;
  Rng rng(derive_seed(seed, "gradcheck", name));
  while (r.instances < instances) {
    auto p = make(rng);
    const double err = check_problem(p, r.entries, h);
    if (err < 0.0) {
      if (++r.redraws > 100 * instances) throw NumericError("gradcheck " + name + ": every draw hits a relu kink");
      continue;
    }
    r.max_rel_error = std::max(r.max_rel_error, err);
    ++r.instances;
  }
  return r;
}

namespace gc_detail {

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor<double> randn(Rng& rng, Shape dims, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(dims));
  for (auto& x : v) x = n(rng);
  return Tensor<double>(std::move(dims), std::move(v));
}

// sum(y ⊙ r) with a fixed random r, so every output entry gets a distinct weight.
inline Tensor<double> weighted_sum(Tape<double>& tape, const Tensor<double>& y, const Tensor<double>& r) {
  return tape.sum(tape.mul(y, r));
}

inline ProblemFactory unary(std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)> op) {
  return [op](Rng& rng) {
    auto x = randn(rng, {pick(rng, 1, 5), pick(rng, 1, 5)});
    Tape<double> probe(false);
    auto r = randn(rng, op(probe, x).dims());
    return GradProblem{{x}, [x, r, op](Tape<double>& t) { return weighted_sum(t, op(t, x), r); }};
  };
}

inline ProblemFactory binary_same(std::function<Tensor<double>(Tape<double>&, const Tensor<double>&, const Tensor<double>&)> op) {
  return [op](Rng& rng) {
    const Shape d{pick(rng, 1, 5), pick(rng, 1, 5)};
    auto a = randn(rng, d), b = randn(rng, d), r = randn(rng, d);
    return GradProblem{{a, b}, [a, b, r, op](Tape<double>& t) { return weighted_sum(t, op(t, a, b), r); }};
  };
}

// Biases start at zero; give them random values so they are exercised like weights.
inline void randomize_biases(Rng& rng, ParamStore<double>& store) {
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& [name, t] : store.entries()) {
    if (t.rank() == 1) {
      for (auto& v : t.data()) v = n(rng);
    }
  }
}

inline std::vector<Tensor<double>> all_params(const ParamStore<double>& store) {
  std::vector<Tensor<double>> out;
  for (const auto& [name, t] : store.entries()) out.push_back(t);
  return out;
}

inline FeatureMatrix random_clip(Rng& rng, std::uint32_t f, std::uint32_t t, const std::string& id) {
  FeatureMatrix m(f, t, id);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : m.values) v = static_cast<float>(n(rng));
  return m;
}

// A small random model (N <= 8, D <= 16) plus two clips. Graph edges are
// frozen at the unperturbed point: k-NN selection is piecewise constant and
// carries no gradient.
struct TinyNetwork {
  std::shared_ptr<SignlModel<double>> model;
  std::vector<FeatureMatrix> segments;  // per clip: first half, second half
  std::vector<EdgeList> edges;          // per (segment, view)
};

inline TinyNetwork tiny_network(Rng& rng, HeadKind head) {
  ModelConfig cfg;
  cfg.graph.patches = pick(rng, 0, 1) ? 8 : 4;
  cfg.graph.embed_dim = pick(rng, 0, 1) ? 16 : 8;
  cfg.graph.neighbors = pick(rng, 1, cfg.graph.patches - 1);
  cfg.layers = pick(rng, 1, 3);
  cfg.heads = 2;
  cfg.head_hidden = {8, 6};
  cfg.projection_dim = 5;
  cfg.freq_bins = static_cast<std::uint32_t>(2 * cfg.graph.patches);
  cfg.segment_frames = static_cast<std::uint32_t>(cfg.graph.patches);
  TinyNetwork net;
  net.model = std::make_shared<SignlModel<double>>(cfg, head, rng());
  randomize_biases(rng, net.model->params());
  for (int c = 0; c < 2; ++c) {
    const auto clip = random_clip(rng, cfg.freq_bins, 2 * cfg.segment_frames, "gc" + std::to_string(c));
    auto [a, b] = split_pair(clip);
    net.segments.push_back(std::move(a));
    net.segments.push_back(std::move(b));
  }
  Tape<double> tape(false);
  for (const auto& seg : net.segments) {
    for (ViewKind k : {ViewKind::temporal, ViewKind::spatial}) {
      net.edges.push_back(build_view(tape, seg, cfg.graph, net.model->stem(), k, SegmentId::whole).edges);
    }
  }
  return net;
}

// Graph vectors h_t, h_s for the given segment indices with frozen edges.
inline std::pair<Tensor<double>, Tensor<double>> tiny_views(Tape<double>& tape, const TinyNetwork& net,
                                                            std::initializer_list<std::size_t> segs) {
  const auto& m = *net.model;
  std::vector<GraphView<double>> tv, sv;
  for (std::size_t s : segs) {
    for (int v = 0; v < 2; ++v) {
      const auto kind = v == 0 ? ViewKind::temporal : ViewKind::spatial;
      const auto patches = patchify(net.segments[s], m.config().graph.patches, kind);
      GraphView<double> g;
      g.kind = kind;
      g.x = stem_embed<double>(tape, patches, m.stem().for_kind(kind));
      g.edges = net.edges[2 * s + v];
      (v == 0 ? tv : sv).push_back(std::move(g));
    }
  }
  return m.encode_views(tape, tv, sv);
}

}  // namespace gc_detail

// Every primitive plus the composed stem -> pyramid -> head network.
inline std::vector<std::pair<std::string, ProblemFactory>> gradcheck_cases() {
  using namespace gc_detail;
  using T = Tensor<double>;
  std::vector<std::pair<std::string, ProblemFactory>> cases;

  cases.emplace_back("matmul", [](Rng& rng) {
    const auto m = pick(rng, 1, 5), k = pick(rng, 1, 5), n = pick(rng, 1, 5);
    auto a = randn(rng, {m, k}), b = randn(rng, {k, n}), r = randn(rng, {m, n});
    return GradProblem{{a, b}, [=](Tape<double>& t) { return weighted_sum(t, t.matmul(a, b), r); }};
  });
  cases.emplace_back("add", binary_same([](Tape<double>& t, const T& a, const T& b) { return t.add(a, b); }));
  cases.emplace_back("mul", binary_same([](Tape<double>& t, const T& a, const T& b) { return t.mul(a, b); }));
  cases.emplace_back("relu", unary([](Tape<double>& t, const T& x) { return t.relu(x); }));
  cases.emplace_back("scale", unary([](Tape<double>& t, const T& x) { return t.scale(x, -1.7); }));
  cases.emplace_back("add_bias", [](Rng& rng) {
    const auto m = pick(rng, 1, 5), n = pick(rng, 1, 5);
    auto x = randn(rng, {m, n}), b = randn(rng, {n}), r = randn(rng, {m, n});
    return GradProblem{{x, b}, [=](Tape<double>& t) { return weighted_sum(t, t.add_bias(x, b), r); }};
  });
  for (std::size_t axis : {0u, 1u}) {
    cases.emplace_back("concat_axis" + std::to_string(axis), [axis](Rng& rng) {
      const auto fixed = pick(rng, 1, 4);
      std::vector<T> parts;
      for (std::size_t i = 0, n = pick(rng, 1, 3); i < n; ++i) {
        const auto var = pick(rng, 1, 3);
        parts.push_back(randn(rng, axis == 0 ? Shape{var, fixed} : Shape{fixed, var}));
      }
      Tape<double> probe(false);
      auto r = randn(rng, probe.concat(std::span<const T>(parts), axis).dims());
      return GradProblem{parts, [=](Tape<double>& t) { return weighted_sum(t, t.concat(std::span<const T>(parts), axis), r); }};
    });
    cases.emplace_back("split_axis" + std::to_string(axis), [axis](Rng& rng) {
      std::vector<std::size_t> counts;
      for (std::size_t i = 0, n = pick(rng, 1, 3); i < n; ++i) counts.push_back(pick(rng, 1, 3));
      const auto total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
      const auto fixed = pick(rng, 1, 4);
      auto x = randn(rng, axis == 0 ? Shape{total, fixed} : Shape{fixed, total});
      std::vector<T> rs;
      Tape<double> probe(false);
      for (const auto& part : probe.split(x, axis, counts)) rs.push_back(randn(rng, part.dims()));
      return GradProblem{{x}, [=](Tape<double>& t) {
                           auto parts = t.split(x, axis, counts);
                           auto loss = weighted_sum(t, parts[0], rs[0]);
                           for (std::size_t i = 1; i < parts.size(); ++i) loss = t.add(loss, weighted_sum(t, parts[i], rs[i]));
                           return loss;
                         }};
    });
  }
  cases.emplace_back("reshape", [](Rng& rng) {
    const auto m = pick(rng, 1, 4), n = pick(rng, 1, 4);
    auto x = randn(rng, {m, n}), r = randn(rng, {n, m});
    return GradProblem{{x}, [=](Tape<double>& t) { return weighted_sum(t, t.reshape(x, {n, m}), r); }};
  });
  cases.emplace_back("sum", unary([](Tape<double>& t, const T& x) { return t.sum(t.mul(x, x)); }));
  cases.emplace_back("mean", unary([](Tape<double>& t, const T& x) { return t.mean(t.mul(x, x)); }));
  cases.emplace_back("block_left_multiply", [](Rng& rng) {
    const auto n = pick(rng, 1, 4), b = pick(rng, 1, 3), d = pick(rng, 1, 4);
    std::vector<T> blocks;
    for (std::size_t i = 0; i < b; ++i) blocks.push_back(randn(rng, {n, n}));
    auto x = randn(rng, {n * b, d}), r = randn(rng, {n * b, d});
    return GradProblem{{x}, [=](Tape<double>& t) { return weighted_sum(t, t.block_left_multiply(blocks, x), r); }};
  });
  cases.emplace_back("row_cosine", [](Rng& rng) {
    const auto m = pick(rng, 1, 4), n = pick(rng, 2, 5);
    auto a = randn(rng, {m, n}), b = randn(rng, {m, n}), r = randn(rng, {m, 1});
    return GradProblem{{a, b}, [=](Tape<double>& t) { return weighted_sum(t, t.row_cosine(a, b), r); }};
  });
  cases.emplace_back("softmax_cross_entropy", [](Rng& rng) {
    const auto m = pick(rng, 1, 5), c = pick(rng, 2, 4);
    auto logits = randn(rng, {m, c}, 2.0);
    std::vector<int> labels(m);
    for (auto& l : labels) l = static_cast<int>(pick(rng, 0, c - 1));
    return GradProblem{{logits}, [=](Tape<double>& t) { return t.softmax_cross_entropy(logits, labels); }};
  });
  cases.emplace_back("alignment_loss", [](Rng& rng) {
    const auto m = pick(rng, 1, 4), n = pick(rng, 2, 6);
    auto a = randn(rng, {m, n}), b = randn(rng, {m, n});
    return GradProblem{{a, b}, [=](Tape<double>& t) { return alignment_loss_mean(t, a, b, 0.5); }};
  });
  cases.emplace_back("gcn_layer", [](Rng& rng) {
    const auto n = pick(rng, 2, 6), d = pick(rng, 1, 5);
    EdgeList edges;
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = 0; j < n; ++j) {
        if (i != j && pick(rng, 0, 2) == 0) edges.push_back({i, j});
      }
    }
    auto s = normalized_adjacency<double>(edges, n);
    auto h = randn(rng, {n, d}), theta = randn(rng, {d, d}), r = randn(rng, {n, d});
    return GradProblem{{h, theta}, [=](Tape<double>& t) { return weighted_sum(t, gcn_layer(t, s, h, theta), r); }};
  });
  cases.emplace_back("multi_head_transform", [](Rng& rng) {
    const auto k = pick(rng, 1, 3), chunk = pick(rng, 1, 3), out = pick(rng, 1, 3), m = pick(rng, 1, 4);
    std::vector<T> heads;
    for (std::size_t j = 0; j < k; ++j) heads.push_back(randn(rng, {chunk, out}));
    auto h = randn(rng, {m, k * chunk}), r = randn(rng, {m, k * out});
    std::vector<T> inputs = heads;
    inputs.push_back(h);
    return GradProblem{inputs, [=](Tape<double>& t) { return weighted_sum(t, multi_head_transform<double>(t, h, heads), r); }};
  });
  cases.emplace_back("vision_gc_layer", [](Rng& rng) {
    ParamStore<double> store;
    const auto n = pick(rng, 2, 8), b = pick(rng, 1, 2);
    const std::size_t d = pick(rng, 0, 1) ? 8 : 4;
    auto enc = EncoderStack<double>::create(store, "enc", d, pick(rng, 1, 2), 2, rng());
    std::vector<T> adj;
    for (std::size_t g = 0; g < b; ++g) {
      const auto x = randn(rng, {n, 3});
      adj.push_back(normalized_adjacency<double>(knn_graph<double>(x.data(), n, 3, pick(rng, 1, n - 1)), n));
    }
    auto h = randn(rng, {n * b, d}), r = randn(rng, {n * b, enc.output_dim()});
    randomize_biases(rng, store);
    auto inputs = all_params(store);
    inputs.push_back(h);
    return GradProblem{inputs, [=](Tape<double>& t) { return weighted_sum(t, enc.encode_nodes(t, adj, h), r); }};
  });
  cases.emplace_back("mlp_head", [](Rng& rng) {
    ParamStore<double> store;
    const std::vector<std::size_t> widths{pick(rng, 1, 6), pick(rng, 1, 6), pick(rng, 1, 4)};
    const auto in = pick(rng, 1, 6), m = pick(rng, 1, 4);
    auto mlp = Mlp<double>::create(store, "mlp", in, widths, rng());
    randomize_biases(rng, store);
    auto x = randn(rng, {m, in}), r = randn(rng, {m, widths.back()});
    auto inputs = all_params(store);
    inputs.push_back(x);
    return GradProblem{inputs, [=](Tape<double>& t) { return weighted_sum(t, mlp.forward(t, x), r); }};
  });
  cases.emplace_back("network_projection", [](Rng& rng) {
    auto net = tiny_network(rng, HeadKind::projection);
    return GradProblem{all_params(net.model->params()), [net](Tape<double>& t) {
                         auto [ht1, hs1] = tiny_views(t, net, {0, 2});
                         auto [ht2, hs2] = tiny_views(t, net, {1, 3});
                         const auto& m = *net.model;
                         return alignment_loss_mean(t, m.apply_head(t, ht1, hs1), m.apply_head(t, ht2, hs2), 0.5);
                       }};
  });
  cases.emplace_back("network_classifier", [](Rng& rng) {
    auto net = tiny_network(rng, HeadKind::classifier);
    std::vector<int> labels{static_cast<int>(pick(rng, 0, 1)), static_cast<int>(pick(rng, 0, 1))};
    return GradProblem{all_params(net.model->params()), [net, labels](Tape<double>& t) {
                         auto [ht, hs] = tiny_views(t, net, {0, 2});
                         return t.softmax_cross_entropy(net.model->apply_head(t, ht, hs), labels);
                       }};
  });
  return cases;
}

struct GradCheckSuite {
  std::vector<GradCheckResult> results;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& r : results) m = std::max(m, r.max_rel_error);
    return m;
  }

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["max_rel_error"] = max_rel_error();
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : results) {
      arr.push_back({{"name", r.name},
                     {"max_rel_error", r.max_rel_error},
                     {"entries", r.entries},
                     {"instances", r.instances},
                     {"redraws", r.redraws}});
    }
    j["cases"] = arr;
    return j.dump(2);
  }
};

inline GradCheckSuite run_gradcheck_suite(std::size_t instances, std::uint64_t seed, double h = 1e-5) {
  GradCheckSuite s;
  for (const auto& [name, make] : gradcheck_cases()) s.results.push_back(run_gradcheck(name, make, instances, seed, h));
  return s;
}

}  // namespace signl
