#pragma once

// Dense 1-D/2-D tensors with a recording tape for reverse-mode differentiation.
//
// Tensor is a shared handle: copies alias the same storage, so parameters held
// by a ParamStore and by the modules that use them stay in sync. Every
// differentiable primitive is a Tape member; when no operand requires a
// gradient nothing is recorded, so the same code path serves inference.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <deque>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "signl/errors.hpp"

namespace signl {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

template <std::floating_point T>
class Tape;

template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  // Zero-filled tensor.
  explicit Tensor(Shape dims, bool requires_grad = false) {
    check_dims(dims);
    const std::size_t n = shape_numel(dims);
    init(std::move(dims), std::vector<T>(n, T{0}), requires_grad);
  }

  Tensor(Shape dims, std::vector<T> values, bool requires_grad = false) {
    check_dims(dims);
    if (shape_numel(dims) != values.size()) {
      throw ShapeError("tensor " + shape_str(dims) + " given " + std::to_string(values.size()) +
                       " values");
    }
    for (T v : values) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor " + shape_str(dims));
    }
    init(std::move(dims), std::move(values), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  static Tensor vector(std::initializer_list<T> v, bool requires_grad = false) {
    return Tensor({v.size()}, std::vector<T>(v), requires_grad);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows, bool requires_grad = false) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values), requires_grad);
  }

  bool defined() const { return s_ != nullptr; }
  const Shape& dims() const { return s_->dims; }
  std::size_t rank() const { return s_->dims.size(); }
  std::size_t numel() const { return s_->value.size(); }
  std::size_t rows() const { return s_->dims[0]; }
  std::size_t cols() const { return rank() == 2 ? s_->dims[1] : 1; }

  std::span<T> data() { return s_->value; }
  std::span<const T> data() const { return s_->value; }
  T& at(std::size_t i, std::size_t j) { return s_->value[i * cols() + j]; }
  T at(std::size_t i, std::size_t j) const { return s_->value[i * cols() + j]; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor " + shape_str(dims()));
    return s_->value[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (on && s_->grad.size() != s_->value.size()) s_->grad.assign(s_->value.size(), T{0});
    if (!on) s_->grad.clear();
  }
  bool has_grad() const { return s_->requires_grad && s_->grad.size() == s_->value.size(); }
  std::span<T> grad() { return s_->grad; }
  std::span<const T> grad() const { return s_->grad; }
  void zero_grad() { std::fill(s_->grad.begin(), s_->grad.end(), T{0}); }

  // Deep copy carrying the requires_grad flag with a fresh zero gradient.
  Tensor clone() const {
    Tensor t;
    t.init(s_->dims, s_->value, s_->requires_grad);
    return t;
  }

  // Deep copy without gradient tracking.
  Tensor detach() const {
    Tensor t;
    t.init(s_->dims, s_->value, false);
    return t;
  }

  bool aliases(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape dims;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  static void check_dims(const Shape& dims) {
    if (dims.empty() || dims.size() > 2) throw ShapeError("tensors must be 1-D or 2-D, got " + shape_str(dims));
    for (auto d : dims) {
      if (d == 0) throw ShapeError("zero extent in " + shape_str(dims));
    }
  }

  void init(Shape dims, std::vector<T> values, bool requires_grad) {
    s_ = std::make_shared<Storage>();
    s_->dims = std::move(dims);
    s_->value = std::move(values);
    s_->requires_grad = requires_grad;
    if (requires_grad) s_->grad.assign(s_->value.size(), T{0});
  }

  std::shared_ptr<Storage> s_;

  friend class Tape<T>;
};

// Records differentiable primitives in execution order. backward() replays the
// records in reverse, so gradient accumulation order is fixed by the tape.
template <std::floating_point T>
class Tape {
 public:
  using TensorT = Tensor<T>;

  // A non-recording tape evaluates the same primitives without keeping
  // backward closures; outputs never require gradients.
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  // Smallest |input| seen by relu on this tape; finite-difference checks use
  // it to stay clear of the kink.
  double relu_margin() const { return relu_margin_; }

  TensorT matmul(const TensorT& a, const TensorT& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
      throw ShapeError("matmul " + shape_str(a.dims()) + " * " + shape_str(b.dims()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    TensorT out = make({m, n}, a, b);
    gemm_nn(a.s_->value.data(), b.s_->value.data(), out.s_->value.data(), m, k, n);
    if (out.requires_grad()) {
      record(out, [as = a.s_, bs = b.s_, os = out.s_, m, k, n] {
        const T* g = os->grad.data();
        if (as->requires_grad) {
          // dA += G * B^T
          T* ga = as->grad.data();
          const T* bv = bs->value.data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              T acc{0};
              const T* grow = g + i * n;
              const T* brow = bv + p * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (bs->requires_grad) {
          // dB += A^T * G
          T* gb = bs->grad.data();
          const T* av = as->value.data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const T aip = av[i * k + p];
              if (aip == T{0}) continue;
              T* gbrow = gb + p * n;
              const T* grow = g + i * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
          }
        }
      });
    }
    return out;
  }

  TensorT add(const TensorT& a, const TensorT& b) {
    require_same("add", a, b);
    TensorT out = make(a.dims(), a, b);
    auto& o = out.s_->value;
    const auto& av = a.s_->value;
    const auto& bv = b.s_->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    if (out.requires_grad()) {
      record(out, [as = a.s_, bs = b.s_, os = out.s_] {
        for (auto* s : {as.get(), bs.get()}) {
          if (!s->requires_grad) continue;
          for (std::size_t i = 0; i < os->grad.size(); ++i) s->grad[i] += os->grad[i];
        }
      });
    }
    return out;
  }

  TensorT mul(const TensorT& a, const TensorT& b) {
    require_same("mul", a, b);
    TensorT out = make(a.dims(), a, b);
    auto& o = out.s_->value;
    const auto& av = a.s_->value;
    const auto& bv = b.s_->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    if (out.requires_grad()) {
      record(out, [as = a.s_, bs = b.s_, os = out.s_] {
        const auto& g = os->grad;
        if (as->requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) as->grad[i] += g[i] * bs->value[i];
        }
        if (bs->requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) bs->grad[i] += g[i] * as->value[i];
        }
      });
    }
    return out;
  }

  // Gradient passes where the input is strictly positive; zero at the kink.
  TensorT relu(const TensorT& x) {
    TensorT out = make(x.dims(), x);
    auto& o = out.s_->value;
    const auto& xv = x.s_->value;
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = xv[i] > T{0} ? xv[i] : T{0};
      relu_margin_ = std::min(relu_margin_, std::abs(static_cast<double>(xv[i])));
    }
    if (out.requires_grad()) {
      record(out, [xs = x.s_, os = out.s_] {
        for (std::size_t i = 0; i < os->grad.size(); ++i) {
          if (xs->value[i] > T{0}) xs->grad[i] += os->grad[i];
        }
      });
    }
    return out;
  }

  TensorT scale(const TensorT& x, T factor) {
    TensorT out = make(x.dims(), x);
    auto& o = out.s_->value;
    const auto& xv = x.s_->value;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
    if (out.requires_grad()) {
      record(out, [xs = x.s_, os = out.s_, factor] {
        for (std::size_t i = 0; i < os->grad.size(); ++i) xs->grad[i] += os->grad[i] * factor;
      });
    }
    return out;
  }

  // x: m×n plus a length-n bias added to every row.
  TensorT add_bias(const TensorT& x, const TensorT& bias) {
    if (x.rank() != 2 || bias.numel() != x.cols()) {
      throw ShapeError("add_bias " + shape_str(x.dims()) + " + " + shape_str(bias.dims()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    TensorT out = make(x.dims(), x, bias);
    auto& o = out.s_->value;
    const auto& xv = x.s_->value;
    const auto& bv = bias.s_->value;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xv[i * n + j] + bv[j];
    }
    if (out.requires_grad()) {
      record(out, [xs = x.s_, bs = bias.s_, os = out.s_, m, n] {
        const auto& g = os->grad;
        if (xs->requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) xs->grad[i] += g[i];
        }
        if (bs->requires_grad) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) bs->grad[j] += g[i * n + j];
          }
        }
      });
    }
    return out;
  }

  TensorT concat(std::span<const TensorT> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const std::size_t rank = parts[0].rank();
    if (axis >= rank) throw ShapeError("concat axis " + std::to_string(axis) + " on rank " + std::to_string(rank));
    Shape dims = parts[0].dims();
    std::size_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
      if (p.rank() != rank) throw ShapeError("concat rank mismatch");
      for (std::size_t d = 0; d < rank; ++d) {
        if (d != axis && p.dims()[d] != dims[d]) {
          throw ShapeError("concat " + shape_str(p.dims()) + " onto " + shape_str(dims) + " along axis " +
                           std::to_string(axis));
        }
      }
      total += p.dims()[axis];
      rg = rg || (recording_ && p.requires_grad());
    }
    dims[axis] = total;
    TensorT out(dims, rg);
    // Axis 0 (or any 1-D concat) appends contiguous blocks; axis 1 interleaves row slices.
    const std::size_t rows = axis == 0 ? 1 : dims[0];
    const std::size_t out_stride = shape_numel(dims) / rows;
    std::vector<std::shared_ptr<typename TensorT::Storage>> srcs;
    srcs.reserve(parts.size());
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.numel() / rows;
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(p.s_->value.data() + r * w, w, out.s_->value.data() + r * out_stride + offset);
      }
      offset += w;
      srcs.push_back(p.s_);
    }
    if (rg) {
      record(out, [srcs = std::move(srcs), os = out.s_, rows, out_stride] {
        std::size_t off = 0;
        for (const auto& s : srcs) {
          const std::size_t w = s->value.size() / rows;
          if (s->requires_grad) {
            for (std::size_t r = 0; r < rows; ++r) {
              const T* g = os->grad.data() + r * out_stride + off;
              T* d = s->grad.data() + r * w;
              for (std::size_t j = 0; j < w; ++j) d[j] += g[j];
            }
          }
          off += w;
        }
      });
    }
    return out;
  }

  TensorT concat(std::initializer_list<TensorT> parts, std::size_t axis) {
    return concat(std::span<const TensorT>(parts.begin(), parts.size()), axis);
  }

  std::vector<TensorT> split(const TensorT& x, std::size_t axis, std::span<const std::size_t> counts) {
    if (axis >= x.rank()) throw ShapeError("split axis " + std::to_string(axis) + " on " + shape_str(x.dims()));
    const std::size_t sum = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    if (sum != x.dims()[axis]) {
      throw ShapeError("split counts sum to " + std::to_string(sum) + ", extent is " +
                       std::to_string(x.dims()[axis]));
    }
    const std::size_t rows = axis == 0 ? 1 : x.dims()[0];
    const std::size_t in_stride = x.numel() / rows;
    const std::size_t inner = axis == 0 ? x.numel() / x.dims()[0] : 1;
    std::vector<TensorT> outs;
    outs.reserve(counts.size());
    std::size_t offset = 0;
    for (std::size_t c : counts) {
      if (c == 0) throw ShapeError("split count of zero");
      Shape dims = x.dims();
      dims[axis] = c;
      TensorT out = make(dims, x);
      const std::size_t w = c * inner;
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.s_->value.data() + r * in_stride + offset, w, out.s_->value.data() + r * w);
      }
      if (out.requires_grad()) {
        record(out, [xs = x.s_, os = out.s_, rows, in_stride, offset, w] {
          for (std::size_t r = 0; r < rows; ++r) {
            const T* g = os->grad.data() + r * w;
            T* d = xs->grad.data() + r * in_stride + offset;
            for (std::size_t j = 0; j < w; ++j) d[j] += g[j];
          }
        });
      }
      offset += w;
      outs.push_back(std::move(out));
    }
    return outs;
  }

  std::vector<TensorT> split(const TensorT& x, std::size_t axis, std::initializer_list<std::size_t> counts) {
    return split(x, axis, std::span<const std::size_t>(counts.begin(), counts.size()));
  }

  // Same values, new extents. Row-major layout makes this a relabeling.
  TensorT reshape(const TensorT& x, Shape dims) {
    if (shape_numel(dims) != x.numel()) {
      throw ShapeError("reshape " + shape_str(x.dims()) + " to " + shape_str(dims));
    }
    TensorT out = make(std::move(dims), x);
    out.s_->value = x.s_->value;
    if (out.requires_grad()) {
      record(out, [xs = x.s_, os = out.s_] {
        for (std::size_t i = 0; i < os->grad.size(); ++i) xs->grad[i] += os->grad[i];
      });
    }
    return out;
  }

  TensorT sum(const TensorT& x) {
    TensorT out = make({1}, x);
    T acc{0};
    for (T v : x.s_->value) acc += v;
    out.s_->value[0] = acc;
    if (out.requires_grad()) {
      record(out, [xs = x.s_, os = out.s_] {
        const T g = os->grad[0];
        for (auto& d : xs->grad) d += g;
      });
    }
    return out;
  }

  TensorT mean(const TensorT& x) { return scale(sum(x), T{1} / static_cast<T>(x.numel())); }

  // Block-diagonal left product with constant square blocks: rows of x are
  // grouped consecutively by block, out_b = S_b * x_b. Used to apply one
  // normalized adjacency per graph to a stacked batch of node embeddings.
  TensorT block_left_multiply(std::span<const TensorT> blocks, const TensorT& x) {
    if (x.rank() != 2) throw ShapeError("block_left_multiply needs a matrix, got " + shape_str(x.dims()));
    std::size_t total = 0;
    for (const auto& s : blocks) {
      if (s.rank() != 2 || s.rows() != s.cols()) throw ShapeError("propagation block must be square");
      total += s.rows();
    }
    if (total != x.rows()) {
      throw ShapeError("blocks cover " + std::to_string(total) + " rows, input has " + std::to_string(x.rows()));
    }
    const std::size_t n = x.cols();
    TensorT out = make(x.dims(), x);
    std::vector<std::shared_ptr<typename TensorT::Storage>> bs;
    bs.reserve(blocks.size());
    std::size_t row0 = 0;
    for (const auto& s : blocks) {
      const std::size_t b = s.rows();
      gemm_nn(s.s_->value.data(), x.s_->value.data() + row0 * n, out.s_->value.data() + row0 * n, b, b, n);
      row0 += b;
      bs.push_back(s.s_);
    }
    if (out.requires_grad()) {
      record(out, [bs = std::move(bs), xs = x.s_, os = out.s_, n] {
        std::size_t r0 = 0;
        for (const auto& s : bs) {
          const std::size_t b = s->dims[0];
          // dX_b += S_b^T * G_b
          for (std::size_t i = 0; i < b; ++i) {
            const T* g = os->grad.data() + (r0 + i) * n;
            for (std::size_t p = 0; p < b; ++p) {
              const T sip = s->value[i * b + p];
              if (sip == T{0}) continue;
              T* d = xs->grad.data() + (r0 + p) * n;
              for (std::size_t j = 0; j < n; ++j) d[j] += sip * g[j];
            }
          }
          r0 += b;
        }
      });
    }
    return out;
  }

  // Row-wise cosine similarity of two m×n matrices, returned as m×1.
  TensorT row_cosine(const TensorT& a, const TensorT& b) {
    require_same("row_cosine", a, b);
    const std::size_t m = a.rows(), n = a.numel() / a.rows();
    TensorT out = make({m, 1}, a, b);
    std::vector<T> na(m), nb(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T* x = a.s_->value.data() + i * n;
      const T* y = b.s_->value.data() + i * n;
      T xy{0}, xx{0}, yy{0};
      for (std::size_t j = 0; j < n; ++j) {
        xy += x[j] * y[j];
        xx += x[j] * x[j];
        yy += y[j] * y[j];
      }
      na[i] = std::sqrt(xx);
      nb[i] = std::sqrt(yy);
      if (!(na[i] > T{0}) || !(nb[i] > T{0})) {
        throw NumericError("cosine similarity of a zero vector (row " + std::to_string(i) + ")");
      }
      out.s_->value[i] = xy / (na[i] * nb[i]);
    }
    if (out.requires_grad()) {
      record(out, [as = a.s_, bs = b.s_, os = out.s_, na = std::move(na), nb = std::move(nb), m, n] {
        for (std::size_t i = 0; i < m; ++i) {
          const T g = os->grad[i];
          const T c = os->value[i];
          const T* x = as->value.data() + i * n;
          const T* y = bs->value.data() + i * n;
          // d cos / dx = y/(|x||y|) - cos * x/|x|^2
          if (as->requires_grad) {
            T* d = as->grad.data() + i * n;
            const T inv = T{1} / (na[i] * nb[i]);
            const T self = c / (na[i] * na[i]);
            for (std::size_t j = 0; j < n; ++j) d[j] += g * (y[j] * inv - self * x[j]);
          }
          if (bs->requires_grad) {
            T* d = bs->grad.data() + i * n;
            const T inv = T{1} / (na[i] * nb[i]);
            const T self = c / (nb[i] * nb[i]);
            for (std::size_t j = 0; j < n; ++j) d[j] += g * (x[j] * inv - self * y[j]);
          }
        }
      });
    }
    return out;
  }

  // Mean over rows of -log softmax(logits)[label]; max-subtracted for stability.
  TensorT softmax_cross_entropy(const TensorT& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || labels.size() != logits.rows()) {
      throw ShapeError("cross entropy on " + shape_str(logits.dims()) + " with " + std::to_string(labels.size()) +
                       " labels");
    }
    const std::size_t m = logits.rows(), c = logits.cols();
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= c) throw ContractError("label out of range: " + std::to_string(y));
    }
    TensorT out = make({1}, logits);
    std::vector<T> probs(m * c);
    T total{0};
    for (std::size_t i = 0; i < m; ++i) {
      const T* l = logits.s_->value.data() + i * c;
      const T mx = *std::max_element(l, l + c);
      T z{0};
      for (std::size_t j = 0; j < c; ++j) z += std::exp(l[j] - mx);
      for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(l[j] - mx) / z;
      total += std::log(z) + mx - l[labels[i]];
    }
    out.s_->value[0] = total / static_cast<T>(m);
    if (out.requires_grad()) {
      record(out, [ls = logits.s_, os = out.s_, probs = std::move(probs),
                   ys = std::vector<int>(labels.begin(), labels.end()), m, c] {
        const T g = os->grad[0] / static_cast<T>(m);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const T onehot = static_cast<int>(j) == ys[i] ? T{1} : T{0};
            ls->grad[i * c + j] += g * (probs[i * c + j] - onehot);
          }
        }
      });
    }
    return out;
  }

  // Populates gradients of every requires_grad tensor reachable from loss.
  // Intermediate gradients are reset first, so a second call accumulates
  // exactly one more copy of the gradient into leaves.
  void backward(const TensorT& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward needs a scalar loss, got " + (loss.defined() ? shape_str(loss.dims()) : "<empty>"));
    }
    if (!loss.requires_grad()) throw ContractError("loss does not depend on any tensor requiring a gradient");
    bool on_tape = false;
    for (auto& r : records_) {
      std::fill(r.out->grad.begin(), r.out->grad.end(), T{0});
      on_tape = on_tape || r.out == loss.s_;
    }
    if (!on_tape) throw ContractError("loss was not produced on this tape");
    loss.s_->grad[0] = T{1};
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
  }

 private:
  using Storage = typename TensorT::Storage;

  struct Record {
    std::shared_ptr<Storage> out;
    std::function<void()> backward;
  };

  template <typename... Ins>
  TensorT make(Shape dims, const Ins&... inputs) const {
    const bool rg = recording_ && (inputs.requires_grad() || ...);
    TensorT out;
    out.init(std::move(dims), std::vector<T>(0), rg);
    out.s_->value.assign(shape_numel(out.s_->dims), T{0});
    if (rg) out.s_->grad.assign(out.s_->value.size(), T{0});
    return out;
  }

  void record(const TensorT& out, std::function<void()> fn) { records_.push_back({out.s_, std::move(fn)}); }

  static void require_same(const char* op, const TensorT& a, const TensorT& b) {
    if (a.dims() != b.dims()) {
      throw ShapeError(std::string(op) + " " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
    }
  }

  // c = a(m×k) * b(k×n), c assumed zeroed.
  static void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = a[i * k + p];
        if (aip == T{0}) continue;
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }

  bool recording_ = true;
  double relu_margin_ = std::numeric_limits<double>::infinity();
  std::vector<Record> records_;
};

// Named parameters in insertion order. Names are stable checkpoint keys.
template <std::floating_point T>
class ParamStore {
 public:
  using TensorT = Tensor<T>;

  TensorT& add(const std::string& name, TensorT t) {
    if (contains(name)) throw ContractError("duplicate parameter " + name);
    t.set_requires_grad(true);
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  TensorT& get(const std::string& name) {
    auto* t = find(name);
    if (!t) throw ContractError("unknown parameter " + name);
    return *t;
  }
  const TensorT& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }

  auto& entries() { return entries_; }
  const auto& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grad() {
    for (auto& [name, t] : entries_) {
      if (t.has_grad()) t.zero_grad();
    }
  }

  // Freezes or unfreezes every parameter whose name starts with prefix.
  void set_trainable(std::string_view prefix, bool on) {
    for (auto& [name, t] : entries_) {
      if (name.starts_with(prefix)) t.set_requires_grad(on);
    }
  }

  // Deep copy of all values, used for best-model snapshots.
  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_) out.emplace_back(t.data().begin(), t.data().end());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& values) {
    if (values.size() != entries_.size()) throw ContractError("snapshot does not match parameter store");
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto dst = entries_[i].second.data();
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

 private:
  TensorT* find(const std::string& name) {
    for (auto& [n, t] : entries_) {
      if (n == name) return &t;
    }
    return nullptr;
  }
  const TensorT* find(const std::string& name) const { return const_cast<ParamStore*>(this)->find(name); }

  std::deque<std::pair<std::string, TensorT>> entries_;  // deque: references from add() stay valid
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are keyed by parameter name.
template <std::floating_point T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {
    if (!(opts.lr > 0)) throw ConfigError("learning rate must be positive");
  }

  std::size_t steps() const { return step_; }
  const AdamOptions& options() const { return opts_; }

  // Updates every parameter currently requiring a gradient, then zeroes grads.
  void step(ParamStore<T>& params) {
    std::vector<std::string> names;
    for (auto& [name, t] : params.entries()) {
      if (t.requires_grad()) names.push_back(name);
    }
    step(params, names);
  }

  void step(ParamStore<T>& params, std::span<const std::string> names) {
    for (const auto& name : names) {
      if (!params.get(name).has_grad()) throw ContractError("parameter " + name + " has no gradient");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (const auto& name : names) {
      auto& t = params.get(name);
      auto& [m, v] = moments_[name];
      if (m.size() != t.numel()) {
        m.assign(t.numel(), 0.0);
        v.assign(t.numel(), 0.0);
      }
      auto w = t.data();
      auto g = t.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] = static_cast<T>(w[i] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
      t.zero_grad();
    }
  }

 private:
  AdamOptions opts_;
  std::size_t step_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace signl
