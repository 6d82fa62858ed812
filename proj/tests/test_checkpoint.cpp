#include <gtest/gtest.h>

#include "signl/checkpoint.hpp"
#include "signl/encoder.hpp"
#include "test_util.hpp"

using namespace signl;
using signl::testing::TempDir;

namespace {

std::vector<CheckpointEntry> sample_entries() {
  return {{"a.w", {2, 3}, {1, 2, 3, 4, 5, -6.5f}}, {"b", {4}, {0, 0.25f, 1e-30f, -1e30f}}};
}

}  // namespace

TEST(Checkpoint, EncodeDecodeEncodeIsByteIdentical) {
  const auto bytes = encode_checkpoint(sample_entries());
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a.w");
  EXPECT_EQ(back[0].dims, (Shape{2, 3}));
  EXPECT_EQ(back[1].values, sample_entries()[1].values);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, SizeFollowsLayout) {
  // 10 header + (2 + 3 + 1 + 8 + 24) + (2 + 1 + 1 + 4 + 16)
  const auto bytes = encode_checkpoint(sample_entries());
  EXPECT_EQ(bytes.size(), 10u + 38u + 24u);
  EXPECT_EQ(checkpoint_size(sample_entries()), bytes.size());
  EXPECT_EQ(bytes.substr(0, 4), "SIGC");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2);
}

TEST(Checkpoint, TruncationAndTrailingBytesAreFormatErrors) {
  const auto bytes = encode_checkpoint(sample_entries());
  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, cut)), FormatError) << cut;
  }
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
}

TEST(Checkpoint, ModelRoundTripThroughFile) {
  TempDir dir;
  ModelConfig cfg;
  SignlModel<float> a(cfg, HeadKind::projection, 1);
  SignlModel<float> b(cfg, HeadKind::projection, 2);
  save_checkpoint(a.params(), dir / "m.sigc");
  const auto loaded = load_checkpoint(b.params(), dir / "m.sigc");
  EXPECT_EQ(loaded.size(), a.params().entries().size());
  EXPECT_EQ(encode_checkpoint(entries_from_store(b.params())), read_file_bytes(dir / "m.sigc"));
}

TEST(Checkpoint, WrongDepthIsIncompatible) {
  ModelConfig shallow;
  shallow.layers = 4;
  SignlModel<float> src(shallow, HeadKind::projection, 1);
  SignlModel<float> dst(ModelConfig{}, HeadKind::projection, 1);
  EXPECT_THROW(load_into(dst.params(), entries_from_store(src.params())), IncompatibleError);
}

TEST(Checkpoint, WrongShapeNamesBothShapes) {
  ParamStore<float> store;
  store.add("a.w", Tensor<float>({3, 2}));
  try {
    load_into(store, {{"a.w", {2, 3}, std::vector<float>(6)}});
    FAIL();
  } catch (const IncompatibleError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, PretrainedIntoClassifierWithTransferOptions) {
  ModelConfig cfg;
  SignlModel<float> pre(cfg, HeadKind::projection, 1);
  SignlModel<float> ft(cfg, HeadKind::classifier, 2);
  const LoadOptions opts{{"proj."}, {"cls."}, {}};
  const auto before = ft.params().get("cls.fc0.w").clone();
  const auto loaded = load_into(ft.params(), entries_from_store(pre.params()), opts);
  for (const auto& n : loaded) EXPECT_FALSE(n.starts_with("proj.")) << n;
  const auto& stem = ft.params().get("stem_t.w");
  const auto& src = pre.params().get("stem_t.w");
  EXPECT_TRUE(std::equal(stem.data().begin(), stem.data().end(), src.data().begin()));
  const auto& cls = ft.params().get("cls.fc0.w");
  EXPECT_TRUE(std::equal(cls.data().begin(), cls.data().end(), before.data().begin()));
  EXPECT_THROW(load_into(ft.params(), entries_from_store(pre.params())), IncompatibleError);
}

TEST(Checkpoint, TemporalOnlyModelAcceptsExtraSpatialEntries) {
  ModelConfig both;
  SignlModel<float> pre(both, HeadKind::projection, 1);
  ModelConfig tonly;
  tonly.view_mode = ViewMode::temporal_only;
  SignlModel<float> ft(tonly, HeadKind::classifier, 1);
  EXPECT_THROW(load_into(ft.params(), entries_from_store(pre.params()), {{"proj."}, {"cls."}, {}}), IncompatibleError);
  EXPECT_NO_THROW(load_into(ft.params(), entries_from_store(pre.params()), {{"proj."}, {"cls."}, {"enc_s."}}));
}
