#pragma once

// Label-free pre-training on positive pairs, limited-label fine-tuning,
// evaluation and the feature-collapse diagnostic.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "signl/augment.hpp"
#include "signl/checkpoint.hpp"
#include "signl/encoder.hpp"
#include "signl/featio.hpp"
#include "signl/graphbuild.hpp"
#include "signl/metrics.hpp"
#include "signl/rng.hpp"
#include "signl/tensorgrad.hpp"

namespace signl {

enum class Phase { pretrain, finetune };

struct TrainConfig {
  Phase phase = Phase::pretrain;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double label_fraction = 1.0;
  AugmentSpec augment;
  double temperature = 0.5;
  bool freeze_encoders = false;
  bool skip_pretrain = false;
  std::size_t patience = 10;  // 0 disables early stopping
  double holdout_fraction = 0.1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (freeze_encoders && phase != Phase::finetune) throw ConfigError("freeze_encoders only applies to fine-tuning");
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout fraction must be in (0, 1)");
    check_temperature(temperature);
    augment.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // NaN for the pre-training baseline row
  double dev_metric = 0.0;
  double seconds = 0.0;

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["train_loss"] = std::isfinite(train_loss) ? nlohmann::ordered_json(train_loss) : nlohmann::ordered_json();
    j["dev_metric"] = dev_metric;
    j["seconds"] = seconds;
    return j.dump();
  }
};

inline std::string trace_to_jsonl(const std::vector<EpochRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += r.to_json() + "\n";
  return out;
}

// Lower dev metric is better. `since_improvement` reaching `patience` stops
// the run.
struct RunState {
  std::size_t epoch = 0;
  double best_metric = std::numeric_limits<double>::infinity();
  double best_tiebreak = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_improvement = 0;
  std::uint64_t seed = 0;

  // Returns true when the metric improves on the best so far. Equal metrics
  // count as improvement only if the tie-break value is strictly lower.
  bool observe(double metric, double tiebreak = 0.0) {
    const bool better = metric < best_metric || (metric == best_metric && tiebreak < best_tiebreak);
    if (better) {
      best_metric = metric;
      best_tiebreak = tiebreak;
      best_epoch = epoch;
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
    return better;
  }

  bool should_stop(std::size_t patience) const { return patience > 0 && since_improvement == patience; }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace train_detail {

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

template <std::floating_point T>
std::string param_norms(const ParamStore<T>& store) {
  std::ostringstream os;
  for (const auto& [name, t] : store.entries()) {
    double s = 0.0;
    for (T v : t.data()) s += static_cast<double>(v) * v;
    os << ' ' << name << '=' << std::sqrt(s);
  }
  return os.str();
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Pre-training

template <std::floating_point T>
struct PairEmbeddings {
  Tensor<T> h1, h2;  // h_t || h_s per segment
  Tensor<T> z1, z2;  // after the projection head
};

// Runs the four-graph pipeline for a batch of clips. Augmentation is applied
// when `augment` is given.
template <std::floating_point T>
PairEmbeddings<T> embed_pairs(Tape<T>& tape, const SignlModel<T>& model, std::span<const FeatureMatrix* const> clips,
                              const AugmentSpec* augment, std::uint64_t epoch) {
  std::vector<GraphView<T>> t1, s1, t2, s2;
  for (const auto* clip : clips) {
    auto b = build_bundle(tape, *clip, model.config().graph, model.stem());
    if (augment) {
      b.t1 = apply_augment(tape, *augment, b.t1, {clip->clip_id, epoch, "t1"});
      b.s1 = apply_augment(tape, *augment, b.s1, {clip->clip_id, epoch, "s1"});
      b.t2 = apply_augment(tape, *augment, b.t2, {clip->clip_id, epoch, "t2"});
      b.s2 = apply_augment(tape, *augment, b.s2, {clip->clip_id, epoch, "s2"});
    }
    t1.push_back(std::move(b.t1));
    s1.push_back(std::move(b.s1));
    t2.push_back(std::move(b.t2));
    s2.push_back(std::move(b.s2));
  }
  auto [ht1, hs1] = model.encode_views(tape, t1, s1);
  auto [ht2, hs2] = model.encode_views(tape, t2, s2);
  PairEmbeddings<T> out;
  out.h1 = join_views(tape, ht1, hs1);
  out.h2 = join_views(tape, ht2, hs2);
  out.z1 = model.head().forward(tape, out.h1);
  out.z2 = model.head().forward(tape, out.h2);
  return out;
}

struct PretrainResult {
  SignlModel<float> model;
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_dev = 0.0;
};

// Mean per-pair alignment loss over clips, without augmentation.
inline double mean_pair_loss(const SignlModel<float>& model, std::span<const FeatureMatrix* const> clips,
                             double tau, std::size_t batch) {
  double total = 0.0;
  for (std::size_t b0 = 0; b0 < clips.size(); b0 += batch) {
    Tape<float> tape(false);
    const auto chunk = clips.subspan(b0, std::min(batch, clips.size() - b0));
    auto e = embed_pairs(tape, model, chunk, nullptr, 0);
    total += alignment_loss(e.z1, e.z2, tau).sum;
  }
  return total / static_cast<double>(clips.size());
}

// Clips carry no labels: only feature values and clip ids reach this function.
// A holdout fraction of clips monitors the mean per-pair alignment loss for
// early stopping; the best-scoring parameters are restored at the end.
inline PretrainResult pretrain(const ModelConfig& model_cfg, const TrainConfig& cfg,
                               std::span<const FeatureMatrix> clips, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (cfg.phase != Phase::pretrain) throw ConfigError("pretrain called with a fine-tuning config");
  if (model_cfg.view_mode != ViewMode::both) throw ConfigError("pre-training uses both graph views");
  if (clips.size() < 2) throw ConfigError("pre-training needs at least 2 clips in the train split");

  PretrainResult res{SignlModel<float>(model_cfg, HeadKind::projection, cfg.seed), {}, 0, 0.0};
  auto& model = res.model;
  auto& params = model.params();

  const auto order = train_detail::shuffled(clips.size(), derive_seed(cfg.seed, "holdout"));
  const std::size_t n_dev = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(clips.size()))), 1,
      clips.size() - 1);
  std::vector<const FeatureMatrix*> train_set, dev_set;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < order.size() - n_dev ? train_set : dev_set).push_back(&clips[order[i]]);
  }

  AugmentSpec aug = cfg.augment;
  aug.seed = derive_seed(cfg.seed, "augment");
  Adam<float> adam({cfg.learning_rate});
  RunState state;
  state.seed = cfg.seed;

  const auto t_start = std::chrono::steady_clock::now();
  EpochRecord baseline{0, std::numeric_limits<double>::quiet_NaN(),
                       mean_pair_loss(model, dev_set, cfg.temperature, cfg.batch_size),
                       train_detail::seconds_since(t_start)};
  res.trace.push_back(baseline);
  state.observe(baseline.dev_metric);
  auto best = params.snapshot();
  if (on_epoch) on_epoch(baseline);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.epoch = epoch;
    const auto t0 = std::chrono::steady_clock::now();
    const auto perm = train_detail::shuffled(train_set.size(), derive_seed(cfg.seed, "epoch", epoch));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < perm.size(); b0 += cfg.batch_size) {
      std::vector<const FeatureMatrix*> batch;
      for (std::size_t i = b0; i < std::min(perm.size(), b0 + cfg.batch_size); ++i) batch.push_back(train_set[perm[i]]);
      Tape<float> tape;
      Tensor<float> loss;
      try {
        auto e = embed_pairs(tape, model, batch, &aug, epoch);
        loss = alignment_loss_mean(tape, e.z1, e.z2, cfg.temperature);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + ";" + train_detail::param_norms(params));
      }
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite alignment loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + ";" + train_detail::param_norms(params));
      }
      tape.backward(loss);
      adam.step(params);
      loss_sum += loss.item();
      ++batches;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches),
                    mean_pair_loss(model, dev_set, cfg.temperature, cfg.batch_size), train_detail::seconds_since(t0)};
    res.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (state.observe(rec.dev_metric)) best = params.snapshot();
    if (state.should_stop(cfg.patience)) break;
  }
  params.restore(best);
  res.best_epoch = state.best_epoch;
  res.best_dev = state.best_metric;
  return res;
}

// ---------------------------------------------------------------------------
// Fine-tuning and evaluation

struct LabeledClip {
  FeatureMatrix features;
  Label label = Label::bonafide;
};

// Temporal/spatial views of the first half of each clip.
template <std::floating_point T>
std::pair<std::vector<GraphView<T>>, std::vector<GraphView<T>>> first_half_views(
    Tape<T>& tape, const SignlModel<T>& model, std::span<const FeatureMatrix* const> clips) {
  std::vector<GraphView<T>> tv, sv;
  const auto& cfg = model.config();
  for (const auto* clip : clips) {
    const auto half = split_pair(*clip).first;
    if (cfg.uses_temporal()) tv.push_back(build_view(tape, half, cfg.graph, model.stem(), ViewKind::temporal, SegmentId::first));
    if (cfg.uses_spatial()) sv.push_back(build_view(tape, half, cfg.graph, model.stem(), ViewKind::spatial, SegmentId::first));
  }
  return {std::move(tv), std::move(sv)};
}

// B×2 logits for a batch of clips.
template <std::floating_point T>
Tensor<T> clip_logits(Tape<T>& tape, const SignlModel<T>& model, std::span<const FeatureMatrix* const> clips) {
  auto [tv, sv] = first_half_views(tape, model, clips);
  auto [ht, hs] = model.encode_views(tape, tv, sv);
  return model.apply_head(tape, ht, hs);
}

// Bona-fide softmax probability per clip.
inline std::vector<double> bonafide_scores(const SignlModel<float>& model, std::span<const FeatureMatrix* const> clips,
                                           std::size_t batch = 64) {
  std::vector<double> out;
  out.reserve(clips.size());
  for (std::size_t b0 = 0; b0 < clips.size(); b0 += batch) {
    Tape<float> tape(false);
    auto logits = clip_logits(tape, model, clips.subspan(b0, std::min(batch, clips.size() - b0)));
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      const double l[2] = {logits.at(i, 0), logits.at(i, 1)};
      out.push_back(softmax(l)[1]);
    }
  }
  return out;
}

struct DevScore {
  double eer = 0.0;
  double loss = 0.0;
};

inline DevScore dev_score(const SignlModel<float>& model, std::span<const LabeledClip> dev) {
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& c : dev) ptrs.push_back(&c.features);
  const auto s = bonafide_scores(model, ptrs);
  ScoreSet set;
  double loss = 0.0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    set.push_back({dev[i].features.clip_id, s[i], dev[i].label});
    const double p = dev[i].label == Label::bonafide ? s[i] : 1.0 - s[i];
    loss -= std::log(std::max(p, 1e-12));
  }
  return {compute_eer(set).eer, loss / static_cast<double>(dev.size())};
}

struct FinetuneResult {
  SignlModel<float> model;
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_dev_eer = 0.0;
};

// Load options for moving pre-trained representation weights into a
// classifier model: the projection head is never transferred and encoders of
// dropped views are ignored.
inline LoadOptions transfer_options() {
  return {{"proj."}, {"cls."}, {"enc_t.", "enc_s."}};
}

// Train and dev are the labelled subsets. With a pre-trained checkpoint the
// stem and encoders start from it (the projection head is discarded);
// skip_pretrain starts from random weights instead. Dev EER drives early
// stopping (ties broken by dev cross-entropy) and the best model is returned.
inline FinetuneResult finetune(const ModelConfig& model_cfg, const TrainConfig& cfg, std::span<const LabeledClip> train,
                               std::span<const LabeledClip> dev, const std::vector<CheckpointEntry>* pretrained,
                               const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (cfg.phase != Phase::finetune) throw ConfigError("finetune called with a pre-training config");
  if (train.empty()) throw ConfigError("fine-tuning train split is empty");
  if (dev.empty()) throw ConfigError("fine-tuning dev split is empty");
  if (!cfg.skip_pretrain && !pretrained) throw ConfigError("fine-tuning without skip_pretrain needs a pre-trained checkpoint");

  FinetuneResult res{SignlModel<float>(model_cfg, HeadKind::classifier, derive_seed(cfg.seed, "finetune")), {}, 0, 0.0};
  auto& model = res.model;
  auto& params = model.params();
  if (!cfg.skip_pretrain) load_into(params, *pretrained, transfer_options());
  if (cfg.freeze_encoders) {
    for (const auto& p : SignlModel<float>::representation_prefixes()) params.set_trainable(p, false);
  }

  Adam<float> adam({cfg.learning_rate});
  RunState state;
  state.seed = cfg.seed;
  auto best = params.snapshot();
  std::vector<int> labels;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.epoch = epoch;
    const auto t0 = std::chrono::steady_clock::now();
    const auto perm = train_detail::shuffled(train.size(), derive_seed(cfg.seed, "ft-epoch", epoch));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < perm.size(); b0 += cfg.batch_size) {
      std::vector<const FeatureMatrix*> batch;
      labels.clear();
      for (std::size_t i = b0; i < std::min(perm.size(), b0 + cfg.batch_size); ++i) {
        batch.push_back(&train[perm[i]].features);
        labels.push_back(class_index(train[perm[i]].label));
      }
      Tape<float> tape;
      auto loss = tape.softmax_cross_entropy(clip_logits(tape, model, batch), labels);
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite cross-entropy at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + ";" + train_detail::param_norms(params));
      }
      tape.backward(loss);
      adam.step(params);
      loss_sum += loss.item();
      ++batches;
    }
    const auto d = dev_score(model, dev);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), d.eer, train_detail::seconds_since(t0)};
    res.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (state.observe(d.eer, d.loss)) best = params.snapshot();
    if (state.should_stop(cfg.patience)) break;
  }
  params.restore(best);
  res.best_epoch = state.best_epoch;
  res.best_dev_eer = state.best_metric;
  return res;
}

using ClipScorer = std::function<std::vector<double>(std::span<const FeatureMatrix* const>)>;

struct EvalResult {
  ScoreSet scores;
  EERReport report;
};

inline EvalResult evaluate_with(const ClipScorer& scorer, std::span<const LabeledClip> clips) {
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c.features);
  const auto s = scorer(ptrs);
  if (s.size() != clips.size()) throw ContractError("scorer returned the wrong number of scores");
  EvalResult r;
  for (std::size_t i = 0; i < clips.size(); ++i) r.scores.push_back({clips[i].features.clip_id, s[i], clips[i].label});
  r.report = compute_eer(r.scores);
  return r;
}

inline EvalResult evaluate(const SignlModel<float>& model, std::span<const LabeledClip> clips) {
  if (model.head_kind() != HeadKind::classifier) throw ContractError("evaluate needs a classifier model");
  return evaluate_with([&](std::span<const FeatureMatrix* const> c) { return bonafide_scores(model, c); }, clips);
}

inline std::string scores_to_tsv(const ScoreSet& s) {
  std::ostringstream os;
  os.precision(17);
  os << "clip_id\tscore\tlabel\n";
  for (const auto& c : s) os << c.clip_id << '\t' << c.score << '\t' << to_string(c.label) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Feature-collapse diagnostic

struct CollapseReport {
  double before = 0.0;  // mean cosine of (h_t || h_s) across segment pairs
  double after = 0.0;   // mean cosine of projected z pairs
  std::size_t n_pairs = 0;

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["before"] = before;
    j["after"] = after;
    j["n_pairs"] = n_pairs;
    return j.dump();
  }
};

inline CollapseReport collapse_report(const SignlModel<float>& model, std::span<const FeatureMatrix> clips,
                                      std::size_t batch = 64) {
  if (model.head_kind() != HeadKind::projection) throw ContractError("collapse report needs the projection head");
  if (clips.empty()) throw ConfigError("collapse report needs at least one clip");
  CollapseReport r;
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& c : clips) ptrs.push_back(&c);
  for (std::size_t b0 = 0; b0 < ptrs.size(); b0 += batch) {
    Tape<float> tape(false);
    const auto chunk = std::span<const FeatureMatrix* const>(ptrs).subspan(b0, std::min(batch, ptrs.size() - b0));
    auto e = embed_pairs(tape, model, chunk, nullptr, 0);
    const std::size_t nh = e.h1.cols(), nz = e.z1.cols();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      r.before += cosine_similarity<float>(e.h1.data().subspan(i * nh, nh), e.h2.data().subspan(i * nh, nh));
      r.after += cosine_similarity<float>(e.z1.data().subspan(i * nz, nz), e.z2.data().subspan(i * nz, nz));
    }
  }
  r.n_pairs = clips.size();
  r.before /= static_cast<double>(r.n_pairs);
  r.after /= static_cast<double>(r.n_pairs);
  return r;
}

// ---------------------------------------------------------------------------
// Data loading

inline std::vector<LabeledClip> load_split(const Manifest& m, Split split) {
  std::vector<LabeledClip> out;
  for (const auto& e : m.entries) {
    if (e.split != split) continue;
    out.push_back({read_feature(m.resolve(e)), e.label});
  }
  return out;
}

// Feature matrices only; labels and attack ids are dropped here so that
// pre-training cannot observe them.
inline std::vector<FeatureMatrix> load_unlabeled(const Manifest& m, Split split) {
  std::vector<FeatureMatrix> out;
  for (const auto& e : m.entries) {
    if (e.split == split) out.push_back(read_feature(m.resolve(e)));
  }
  return out;
}

// Model geometry taken from the corpus: F and half of T.
inline ModelConfig model_config_for(const FeatureMatrix& sample, ModelConfig base) {
  base.freq_bins = sample.freq_bins;
  base.segment_frames = (sample.time_frames + sample.time_frames % 2) / 2;
  return base;
}

}  // namespace signl
