#include <cstdlib>

#include <gtest/gtest.h>

#include "signl/config.hpp"
#include "test_util.hpp"

using namespace signl;
using signl::testing::TempDir;

TEST(Config, DefaultsMatchReferenceSetup) {
  const Config c;
  EXPECT_EQ(c.u64("synth.freq_bins"), 64u);
  EXPECT_EQ(c.u64("synth.time_frames"), 64u);
  EXPECT_EQ(c.size("synth.n_train"), 2000u);
  EXPECT_EQ(c.size("synth.n_dev"), 500u);
  EXPECT_EQ(c.size("synth.n_eval"), 1000u);
  EXPECT_EQ(c.size("graph.patches"), 8u);
  EXPECT_EQ(c.size("graph.neighbors"), 3u);
  EXPECT_EQ(c.size("graph.embed_dim"), 32u);
  EXPECT_EQ(c.size("model.layers"), 5u);
  EXPECT_EQ(c.sizes("model.head_hidden"), (std::vector<std::size_t>{256, 128}));
  EXPECT_EQ(c.size("model.projection_dim"), 80u);
  EXPECT_DOUBLE_EQ(c.real("pretrain.temperature"), 0.5);
}

TEST(Config, ParseIgnoresCommentsAndBlankLines) {
  Config c;
  c.parse("# reference\n\nseed = 7   # trailing\n  graph.neighbors=4\n");
  EXPECT_EQ(c.u64("seed"), 7u);
  EXPECT_EQ(c.size("graph.neighbors"), 4u);
}

TEST(Config, UnknownKeyNamesLine) {
  Config c;
  try {
    c.parse("seed = 1\ngraph.nieghbors = 3\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x.cfg:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("graph.nieghbors"), std::string::npos) << msg;
  }
  EXPECT_THROW(c.set_assignment("nope=1"), ConfigError);
  EXPECT_THROW(c.set_assignment("seed"), ConfigError);
}

TEST(Config, TypedAccessorsRejectMalformedValues) {
  Config c;
  c.set("seed", "-3");
  EXPECT_THROW(c.u64("seed"), ConfigError);
  c.set("pretrain.lr", "fast");
  EXPECT_THROW(c.real("pretrain.lr"), ConfigError);
  c.set("aug.ed", "yes");
  EXPECT_THROW(c.flag("aug.ed"), ConfigError);
}

TEST(Config, PrecedenceFileThenEnvThenFlags) {
  TempDir dir;
  write_file_bytes(dir / "a.cfg", "seed = 5\npretrain.epochs = 3\n");
  Config c;
  c.load_file(dir / "a.cfg");
  EXPECT_EQ(c.u64("seed"), 5u);
  ::setenv("SIGNL_SEED", "9", 1);
  c.apply_env();
  ::unsetenv("SIGNL_SEED");
  EXPECT_EQ(c.u64("seed"), 9u);
  c.set_assignment("seed = 11");
  EXPECT_EQ(c.u64("seed"), 11u);
  EXPECT_EQ(c.size("pretrain.epochs"), 3u);
}

TEST(Config, MissingFileIsConfigError) {
  Config c;
  EXPECT_THROW(c.load_file("/nonexistent/signl.cfg"), ConfigError);
}

TEST(Config, SnapshotReproducesAllValues) {
  Config a;
  a.set("seed", "42");
  a.set("aug.gn", "false");
  Config b;
  b.parse(a.snapshot());
  EXPECT_EQ(b.snapshot(), a.snapshot());
  EXPECT_FALSE(b.flag("aug.gn"));
}

TEST(Config, BuildersValidate) {
  Config c;
  c.set("finetune.label_fraction", "0");
  EXPECT_THROW(train_config(c, Phase::finetune), ConfigError);
  EXPECT_NO_THROW(train_config(c, Phase::pretrain));
  c = Config{};
  c.set("aug.ed_prob", "2");
  EXPECT_THROW(augment_spec(c), ConfigError);
  c = Config{};
  c.set("finetune.view_mode", "temporal_only");
  EXPECT_EQ(model_config(c).view_mode, ViewMode::temporal_only);
  EXPECT_EQ(synth_config(Config{}).n_train, 2000u);
}
