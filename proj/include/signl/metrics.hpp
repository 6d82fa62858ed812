#pragma once

// Losses, cosine similarity and equal error rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "signl/errors.hpp"
#include "signl/featio.hpp"
#include "signl/tensorgrad.hpp"

namespace signl {

template <typename V>
double cosine_similarity(std::span<const V> a, std::span<const V> b) {
  if (a.size() != b.size()) throw ShapeError("cosine similarity of vectors with different lengths");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) throw NumericError("cosine similarity of a zero vector");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

struct AlignmentLoss {
  double sum = 0.0;       // -sum_i s(z1_i, z2_i) / tau
  double per_pair = 0.0;  // sum / number of pairs
};

inline void check_temperature(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature must be positive");
}

// Rows of z1 and z2 are positive pairs.
template <std::floating_point T>
AlignmentLoss alignment_loss(const Tensor<T>& z1, const Tensor<T>& z2, double tau) {
  check_temperature(tau);
  if (z1.dims() != z2.dims()) throw ShapeError("alignment loss on differently shaped batches");
  const std::size_t m = z1.rows(), n = z1.numel() / m;
  AlignmentLoss out;
  for (std::size_t i = 0; i < m; ++i) {
    out.sum -= cosine_similarity<T>(z1.data().subspan(i * n, n), z2.data().subspan(i * n, n)) / tau;
  }
  out.per_pair = out.sum / static_cast<double>(m);
  return out;
}

// Differentiable form, reduced by mean over the batch.
template <std::floating_point T>
Tensor<T> alignment_loss_mean(Tape<T>& tape, const Tensor<T>& z1, const Tensor<T>& z2, double tau) {
  check_temperature(tau);
  return tape.scale(tape.mean(tape.row_cosine(z1, z2)), static_cast<T>(-1.0 / tau));
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

inline double cross_entropy(std::span<const double> logits, int true_label) {
  if (true_label < 0 || static_cast<std::size_t>(true_label) >= logits.size()) {
    throw ContractError("label out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return std::log(z) + mx - logits[static_cast<std::size_t>(true_label)];
}

// ---------------------------------------------------------------------------
// EER

struct ScoredClip {
  std::string clip_id;
  double score = 0.0;  // higher = more bona fide
  Label label = Label::bonafide;
};

using ScoreSet = std::vector<ScoredClip>;

struct OperatingPoint {
  double threshold = 0.0;
  double far = 0.0;  // fakes with score >= threshold
  double frr = 0.0;  // bona fide with score < threshold
};

struct EERReport {
  double eer = 0.0;
  double threshold = 0.0;
  std::size_t n_bonafide = 0;
  std::size_t n_fake = 0;
  std::vector<OperatingPoint> curve;  // ascending thresholds incl. +-inf sentinels

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["eer"] = eer;
    j["threshold"] = threshold;
    j["n_bonafide"] = n_bonafide;
    j["n_fake"] = n_fake;
    return j.dump();
  }
};

namespace eer_detail {

// Crossing of the FAR - FRR sign change between two operating points whose
// counts are (fa0, fr0) and (fa1, fr1), in exact integer arithmetic:
// d = fa * nb - fr * nf, alpha = d0 / (d0 - d1), eer = (fa0 + alpha (fa1 - fa0)) / nf.
struct Crossing {
  double eer;
  double alpha;
};

inline Crossing interpolate(std::int64_t fa0, std::int64_t fr0, std::int64_t fa1, std::int64_t fr1, std::int64_t nf,
                            std::int64_t nb) {
  const std::int64_t d0 = fa0 * nb - fr0 * nf;
  const std::int64_t d1 = fa1 * nb - fr1 * nf;
  if (d0 == 0) return {static_cast<double>(fa0) / static_cast<double>(nf), 0.0};
  const std::int64_t den = d0 - d1;
  const std::int64_t num = fa0 * den + d0 * (fa1 - fa0);
  return {static_cast<double>(num) / static_cast<double>(nf * den),
          static_cast<double>(d0) / static_cast<double>(den)};
}

}  // namespace eer_detail

// Sweeps the sorted distinct scores (plus -inf and +inf). The EER is taken at
// the first threshold where FRR >= FAR, interpolating linearly from the
// previous operating point when the rates do not meet exactly.
inline EERReport compute_eer(const ScoreSet& scores) {
  std::vector<double> bona, fake;
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) throw NumericError("non-finite score for " + s.clip_id);
    (s.label == Label::bonafide ? bona : fake).push_back(s.score);
  }
  if (bona.empty() || fake.empty()) throw ContractError("EER needs at least one bona fide and one fake score");
  std::sort(bona.begin(), bona.end());
  std::sort(fake.begin(), fake.end());
  std::vector<double> thresholds;
  thresholds.reserve(bona.size() + fake.size() + 2);
  thresholds.push_back(-std::numeric_limits<double>::infinity());
  std::merge(bona.begin(), bona.end(), fake.begin(), fake.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const auto nb = static_cast<std::int64_t>(bona.size());
  const auto nf = static_cast<std::int64_t>(fake.size());
  EERReport rep;
  rep.n_bonafide = bona.size();
  rep.n_fake = fake.size();
  rep.curve.reserve(thresholds.size());

  std::size_t ib = 0, jf = 0;  // counts of bona / fake strictly below threshold
  std::int64_t prev_fa = 0, prev_fr = 0;
  bool found = false;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    const double th = thresholds[k];
    while (ib < bona.size() && bona[ib] < th) ++ib;
    while (jf < fake.size() && fake[jf] < th) ++jf;
    const auto fa = nf - static_cast<std::int64_t>(jf);
    const auto fr = static_cast<std::int64_t>(ib);
    rep.curve.push_back({th, static_cast<double>(fa) / nf, static_cast<double>(fr) / nb});
    if (!found && fr * nf >= fa * nb) {
      found = true;
      if (fr * nf == fa * nb || k == 0) {
        rep.eer = static_cast<double>(fa) / static_cast<double>(nf);
        rep.threshold = th;
      } else {
        const auto c = eer_detail::interpolate(prev_fa, prev_fr, fa, fr, nf, nb);
        rep.eer = c.eer;
        const double lo = thresholds[k - 1];
        if (!std::isfinite(lo)) {
          rep.threshold = th;
        } else if (!std::isfinite(th)) {
          rep.threshold = lo;
        } else {
          rep.threshold = lo + c.alpha * (th - lo);
        }
      }
    }
    prev_fa = fa;
    prev_fr = fr;
  }
  return rep;
}

}  // namespace signl
