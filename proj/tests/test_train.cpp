#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "signl/train.hpp"
#include "test_util.hpp"

using namespace signl;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.graph = {4, 2, 8};
  m.freq_bins = 16;
  m.segment_frames = 8;
  m.layers = 2;
  m.heads = 2;
  m.head_hidden = {8};
  m.projection_dim = 4;
  return m;
}

SynthConfig tiny_synth() {
  SynthConfig s;
  s.freq_bins = 16;
  s.time_frames = 16;
  s.seed = 3;
  return s;
}

std::vector<LabeledClip> labeled(std::size_t n, const std::string& prefix) {
  std::vector<LabeledClip> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Label l = i % 2 == 0 ? Label::bonafide : Label::fake;
    const auto id = prefix + std::to_string(i);
    out.push_back({synth_clip(tiny_synth(), id, l, i % 3), l});
  }
  return out;
}

std::vector<FeatureMatrix> unlabeled(std::size_t n) {
  std::vector<FeatureMatrix> out;
  for (auto& c : labeled(n, "u")) out.push_back(std::move(c.features));
  return out;
}

TrainConfig pre_cfg(std::size_t epochs) {
  TrainConfig t;
  t.phase = Phase::pretrain;
  t.epochs = epochs;
  t.batch_size = 4;
  t.seed = 5;
  t.augment = AugmentSpec::grid_row(8, {});
  return t;
}

TrainConfig ft_cfg(std::size_t epochs) {
  TrainConfig t;
  t.phase = Phase::finetune;
  t.epochs = epochs;
  t.batch_size = 4;
  t.seed = 5;
  t.patience = 0;
  return t;
}

std::string trace_without_seconds(const std::vector<EpochRecord>& trace) {
  auto copy = trace;
  for (auto& r : copy) r.seconds = 0.0;
  return trace_to_jsonl(copy);
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end());
}

}  // namespace

TEST(RunState, StopsAfterPatienceEpochsWithoutImprovement) {
  RunState s;
  const double metrics[] = {0.5, 0.4, 0.45, 0.41, 0.4};
  std::vector<bool> stops;
  for (std::size_t e = 0; e < 5; ++e) {
    s.epoch = e + 1;
    s.observe(metrics[e]);
    stops.push_back(s.should_stop(3));
  }
  EXPECT_EQ(stops, (std::vector<bool>{false, false, false, false, true}));
  EXPECT_EQ(s.best_epoch, 2u);
  EXPECT_FALSE(s.should_stop(0));
}

TEST(RunState, EqualMetricImprovesOnlyWithLowerTiebreak) {
  RunState s;
  EXPECT_TRUE(s.observe(0.3, 1.0));
  EXPECT_FALSE(s.observe(0.3, 1.0));
  EXPECT_TRUE(s.observe(0.3, 0.9));
  EXPECT_FALSE(s.observe(0.31, 0.1));
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  auto c = pre_cfg(0);
  EXPECT_THROW(c.validate(), ConfigError);
  c = pre_cfg(1);
  c.freeze_encoders = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ft_cfg(1);
  c.label_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ft_cfg(1);
  c.temperature = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Pretrain, OneEpochSmokeRecordsBaselineRow) {
  const auto clips = unlabeled(6);
  const auto res = pretrain(tiny_model(), pre_cfg(1), clips);
  ASSERT_EQ(res.trace.size(), 2u);
  EXPECT_TRUE(std::isnan(res.trace[0].train_loss));
  EXPECT_TRUE(std::isfinite(res.trace[1].train_loss));
  const auto lines = trace_to_jsonl(res.trace);
  EXPECT_NE(lines.find("\"train_loss\":null"), std::string::npos) << lines;
  EXPECT_EQ(res.model.head_kind(), HeadKind::projection);
}

TEST(Pretrain, SameSeedIsBitIdentical) {
  const auto clips = unlabeled(8);
  const auto a = pretrain(tiny_model(), pre_cfg(2), clips);
  const auto b = pretrain(tiny_model(), pre_cfg(2), clips);
  EXPECT_EQ(encode_checkpoint(entries_from_store(a.model.params())), encode_checkpoint(entries_from_store(b.model.params())));
  EXPECT_EQ(trace_without_seconds(a.trace), trace_without_seconds(b.trace));
  auto cfg = pre_cfg(2);
  cfg.seed = 6;
  const auto c = pretrain(tiny_model(), cfg, clips);
  EXPECT_NE(encode_checkpoint(entries_from_store(a.model.params())), encode_checkpoint(entries_from_store(c.model.params())));
}

TEST(Pretrain, BestSnapshotIsRestored) {
  const auto clips = unlabeled(8);
  auto cfg = pre_cfg(4);
  cfg.learning_rate = 0.05;
  const auto res = pretrain(tiny_model(), cfg, clips);
  double best = INFINITY;
  for (const auto& r : res.trace) best = std::min(best, r.dev_metric);
  EXPECT_EQ(res.best_dev, best);
  EXPECT_EQ(res.trace[res.best_epoch].dev_metric, best);
}

TEST(Pretrain, RejectsSingleViewAndTinyCorpus) {
  auto m = tiny_model();
  m.view_mode = ViewMode::spatial_only;
  EXPECT_THROW(pretrain(m, pre_cfg(1), unlabeled(4)), ConfigError);
  EXPECT_THROW(pretrain(tiny_model(), pre_cfg(1), unlabeled(1)), ConfigError);
  EXPECT_THROW(pretrain(tiny_model(), ft_cfg(1), unlabeled(4)), ConfigError);
}

TEST(Finetune, MissingCheckpointIsConfigError) {
  const auto train = labeled(4, "t"), dev = labeled(4, "d");
  EXPECT_THROW(finetune(tiny_model(), ft_cfg(1), train, dev, nullptr), ConfigError);
  auto cfg = ft_cfg(1);
  cfg.skip_pretrain = true;
  EXPECT_NO_THROW(finetune(tiny_model(), cfg, train, dev, nullptr));
}

TEST(Finetune, FreezeLeavesRepresentationBytesUnchanged) {
  const auto pre = pretrain(tiny_model(), pre_cfg(1), unlabeled(6));
  const auto entries = entries_from_store(pre.model.params());
  auto cfg = ft_cfg(2);
  cfg.freeze_encoders = true;
  const auto train = labeled(8, "t"), dev = labeled(4, "d");
  const auto res = finetune(tiny_model(), cfg, train, dev, &entries);
  std::size_t compared = 0;
  for (const auto& [name, t] : res.model.params().entries()) {
    if (name.starts_with("cls.")) continue;
    EXPECT_TRUE(same_values(t, pre.model.params().get(name))) << name;
    ++compared;
  }
  EXPECT_GT(compared, 0u);
  const SignlModel<float> fresh(tiny_model(), HeadKind::classifier, derive_seed(cfg.seed, "finetune"));
  EXPECT_FALSE(same_values(res.model.params().get("cls.fc0.w"), fresh.params().get("cls.fc0.w")));
}

TEST(Finetune, UnfrozenEncodersMove) {
  const auto pre = pretrain(tiny_model(), pre_cfg(1), unlabeled(6));
  const auto entries = entries_from_store(pre.model.params());
  const auto train = labeled(8, "t"), dev = labeled(4, "d");
  auto cfg = ft_cfg(2);
  cfg.learning_rate = 0.01;
  const auto res = finetune(tiny_model(), cfg, train, dev, &entries);
  if (res.best_epoch > 0) {
    EXPECT_FALSE(same_values(res.model.params().get("enc_t.layer0.gcn.w"), pre.model.params().get("enc_t.layer0.gcn.w")));
  }
}

TEST(Finetune, TemporalOnlyHalvesClassifierInput) {
  const auto pre = pretrain(tiny_model(), pre_cfg(1), unlabeled(6));
  const auto entries = entries_from_store(pre.model.params());
  auto m = tiny_model();
  m.view_mode = ViewMode::temporal_only;
  const auto train = labeled(4, "t"), dev = labeled(4, "d");
  const auto res = finetune(m, ft_cfg(1), train, dev, &entries);
  // N * d_L = 4 * (8 >> 2)
  EXPECT_EQ(res.model.head().input_dim(), 8u);
  EXPECT_FALSE(res.model.spatial_encoder().has_value());
}

TEST(Finetune, BestModelIsRestoredAndTraceIsComplete) {
  auto cfg = ft_cfg(5);
  cfg.skip_pretrain = true;
  cfg.learning_rate = 0.01;
  const auto train = labeled(12, "t"), dev = labeled(8, "d");
  const auto res = finetune(tiny_model(), cfg, train, dev, nullptr);
  EXPECT_EQ(res.trace.size(), 5u);
  EXPECT_EQ(dev_score(res.model, dev).eer, res.best_dev_eer);
  EXPECT_EQ(res.trace[res.best_epoch - 1].dev_metric, res.best_dev_eer);
}

TEST(Finetune, PatienceStopsEarly) {
  auto cfg = ft_cfg(50);
  cfg.skip_pretrain = true;
  cfg.patience = 2;
  const auto train = labeled(6, "t"), dev = labeled(4, "d");
  const auto res = finetune(tiny_model(), cfg, train, dev, nullptr);
  EXPECT_EQ(res.trace.size(), std::min<std::size_t>(50, res.best_epoch + 2));
}

TEST(Evaluate, ConstantScorerIsChanceLevel) {
  const auto clips = labeled(10, "e");
  const auto r = evaluate_with([](std::span<const FeatureMatrix* const> c) { return std::vector<double>(c.size(), 0.5); },
                               clips);
  EXPECT_EQ(r.report.eer, 0.5);
}

TEST(Evaluate, LabelOracleIsPerfect) {
  const auto clips = labeled(10, "e");
  std::map<std::string, Label> truth;
  for (const auto& c : clips) truth[c.features.clip_id] = c.label;
  const auto r = evaluate_with(
      [&](std::span<const FeatureMatrix* const> c) {
        std::vector<double> s;
        for (const auto* m : c) s.push_back(truth.at(m->clip_id) == Label::bonafide ? 1.0 : 0.0);
        return s;
      },
      clips);
  EXPECT_EQ(r.report.eer, 0.0);
}

TEST(Evaluate, ExportedScoresRecomputeSameEer) {
  auto cfg = ft_cfg(1);
  cfg.skip_pretrain = true;
  const auto train = labeled(4, "t"), dev = labeled(4, "d"), ev = labeled(12, "e");
  const auto res = finetune(tiny_model(), cfg, train, dev, nullptr);
  const auto r = evaluate(res.model, ev);
  EXPECT_EQ(compute_eer(r.scores).eer, r.report.eer);
  const auto tsv = scores_to_tsv(r.scores);
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 13);
  for (const auto& s : r.scores) EXPECT_TRUE(s.score >= 0.0 && s.score <= 1.0);
}

TEST(Collapse, ReportsMeanSimilarities) {
  const auto clips = unlabeled(5);
  const SignlModel<float> m(tiny_model(), HeadKind::projection, 1);
  const auto r = collapse_report(m, clips, 2);
  EXPECT_EQ(r.n_pairs, 5u);
  EXPECT_GE(r.before, -1.0);
  EXPECT_LE(r.before, 1.0);
  EXPECT_LE(r.after, 1.0);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["n_pairs"], 5);
  const SignlModel<float> cls(tiny_model(), HeadKind::classifier, 1);
  EXPECT_THROW(collapse_report(cls, clips), ContractError);
}

TEST(ModelConfigFor, TakesGeometryFromCorpus) {
  const auto m = model_config_for(FeatureMatrix(32, 48, "x"), tiny_model());
  EXPECT_EQ(m.freq_bins, 32u);
  EXPECT_EQ(m.segment_frames, 24u);
}

TEST(Pretrain, ReferenceCorpusLossNonIncreasingWithoutAugmentation) {
  SynthConfig synth;  // reference corpus geometry and size
  std::vector<FeatureMatrix> clips;
  for (std::size_t i = 0; i < synth.n_train; ++i) {
    const Label l = i % 4 == 0 ? Label::bonafide : Label::fake;
    clips.push_back(synth_clip(synth, "train_" + std::to_string(i), l, i % synth.n_attack_types));
  }
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig cfg;
    cfg.phase = Phase::pretrain;
    cfg.epochs = 5;
    cfg.learning_rate = 2e-5;
    cfg.seed = seed;
    cfg.patience = 0;
    cfg.augment = AugmentSpec::grid_row(1, {});
    const auto res = pretrain(ModelConfig{}, cfg, clips);
    bool ok = true;
    for (std::size_t e = 1; e < res.trace.size(); ++e) ok = ok && res.trace[e].dev_metric <= res.trace[e - 1].dev_metric;
    monotone += ok ? 1 : 0;
  }
  EXPECT_GE(monotone, 2);
}
