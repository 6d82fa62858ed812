#include <sstream>

#include <gtest/gtest.h>

#include "signl/cli.hpp"
#include "test_util.hpp"

using namespace signl;
using signl::testing::TempDir;

namespace {

const std::vector<std::string> kSmall{
    "synth.freq_bins=16", "synth.time_frames=16", "synth.n_train=12", "synth.n_dev=6", "synth.n_eval=8",
    "graph.patches=4",    "graph.neighbors=2",    "graph.embed_dim=8", "model.layers=2", "model.head_hidden=8",
    "model.projection_dim=4", "pretrain.epochs=1", "finetune.epochs=1", "pretrain.batch_size=4",
    "finetune.batch_size=4", "collapse.pairs=4", "gradcheck.instances=1"};

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args, bool small = true) {
  if (small) {
    for (const auto& s : kSmall) {
      args.push_back("--set");
      args.push_back(s);
    }
  }
  std::vector<const char*> argv{"signl"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, EndToEndProducesEerJson) {
  TempDir d;
  const auto data = (d / "gen").string();
  ASSERT_EQ(invoke({"gen-data", "--run-dir", data, "-q"}).code, 0);
  const auto manifest = "data.manifest=" + data + "/data/manifest.jsonl";
  ASSERT_EQ(invoke({"pretrain", "--run-dir", (d / "pre").string(), "-q", "--set", manifest}).code, 0);
  EXPECT_TRUE(fs::exists(d / "pre" / "pretrain.sigc"));
  EXPECT_TRUE(fs::exists(d / "pre" / "trace.jsonl"));
  EXPECT_TRUE(fs::exists(d / "pre" / "config.resolved"));
  const auto ckpt = "finetune.checkpoint=" + (d / "pre" / "pretrain.sigc").string();
  ASSERT_EQ(invoke({"finetune", "--run-dir", (d / "ft").string(), "-q", "--set", manifest, "--set", ckpt}).code, 0);
  const auto model = "eval.model=" + (d / "ft" / "model.sigc").string();
  const auto r = invoke({"eval", "--run-dir", (d / "ev").string(), "--set", manifest, "--set", model});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_file_bytes(d / "ev" / "eer.json"));
  EXPECT_EQ(j["n_bonafide"].get<int>() + j["n_fake"].get<int>(), 8);
  EXPECT_TRUE(fs::exists(d / "ev" / "scores.tsv"));

  const auto col = invoke({"collapse", "--run-dir", (d / "col").string(), "--set", manifest, "--set",
                           "pretrain.checkpoint=" + (d / "pre" / "pretrain.sigc").string()});
  ASSERT_EQ(col.code, 0) << col.err;
  EXPECT_EQ(nlohmann::json::parse(read_file_bytes(d / "col" / "collapse.json"))["n_pairs"], 4);
}

TEST(Cli, FinetuneWithoutCheckpointExitsOneNamingPath) {
  TempDir d;
  ASSERT_EQ(invoke({"gen-data", "--run-dir", (d / "gen").string()}).code, 0);
  const auto missing = (d / "nope.sigc").string();
  const auto r = invoke({"finetune", "--run-dir", (d / "ft").string(), "--set",
                         "data.manifest=" + (d / "gen" / "data" / "manifest.jsonl").string(), "--set",
                         "finetune.checkpoint=" + missing});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Cli, SkipPretrainNeedsNoCheckpoint) {
  TempDir d;
  ASSERT_EQ(invoke({"gen-data", "--run-dir", (d / "gen").string()}).code, 0);
  const auto r = invoke({"finetune", "--run-dir", (d / "ft").string(), "-q", "--set",
                         "data.manifest=" + (d / "gen" / "data" / "manifest.jsonl").string(), "--set",
                         "finetune.skip_pretrain=true", "--set", "finetune.label_fraction=0.5"});
  EXPECT_EQ(r.code, 0) << r.err;
  const auto s = nlohmann::json::parse(read_file_bytes(d / "ft" / "summary.json"));
  EXPECT_GT(s["n_train"].get<int>(), 0);
  EXPECT_LT(s["n_train"].get<int>(), 12);
  EXPECT_LT(s["n_dev"].get<int>(), 6);
}

TEST(Cli, UnknownVerbOrKeyExitsOne) {
  TempDir d;
  EXPECT_EQ(invoke({"train", "--run-dir", (d / "a").string()}).code, 1);
  const auto r = invoke({"gen-data", "--run-dir", (d / "b").string(), "--set", "synth.bogus=1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("synth.bogus"), std::string::npos);
  EXPECT_FALSE(fs::exists(d / "b"));
}

TEST(Cli, ConfigFileErrorsNameTheLine) {
  TempDir d;
  write_file_bytes(d / "bad.cfg", "seed = 1\n\nmodel.depth = 3\n");
  const auto r = invoke({"gen-data", "-c", (d / "bad.cfg").string(), "--run-dir", (d / "r").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(":3"), std::string::npos) << r.err;
}

TEST(Cli, ExistingRunDirIsRejected) {
  TempDir d;
  ASSERT_EQ(invoke({"gen-data", "--run-dir", (d / "r").string()}).code, 0);
  EXPECT_EQ(invoke({"gen-data", "--run-dir", (d / "r").string()}).code, 1);
}

TEST(Cli, GeneratedRunDirNameHasVerbAndSeed) {
  TempDir d;
  ASSERT_EQ(invoke({"gen-data", "-o", d.path().string(), "--set", "seed=17"}).code, 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(d.path())) {
    EXPECT_TRUE(e.path().filename().string().starts_with("gen-data-17-")) << e.path();
    ++n;
  }
  EXPECT_EQ(n, 1u);
}

TEST(Cli, ResolvedConfigReproducesRun) {
  TempDir d;
  ASSERT_EQ(invoke({"gen-data", "--run-dir", (d / "a").string(), "--set", "seed=4"}).code, 0);
  ASSERT_EQ(invoke({"gen-data", "--run-dir", (d / "b").string(), "-c", (d / "a" / "config.resolved").string()}, false).code, 0);
  EXPECT_EQ(read_file_bytes(d / "a" / "config.resolved"), read_file_bytes(d / "b" / "config.resolved"));
  EXPECT_EQ(read_file_bytes(d / "a" / "data" / "manifest.jsonl"), read_file_bytes(d / "b" / "data" / "manifest.jsonl"));
}

TEST(Cli, SampleLabelsWritesCounts) {
  TempDir d;
  ASSERT_EQ(invoke({"gen-data", "--run-dir", (d / "gen").string()}).code, 0);
  const auto r = invoke({"sample-labels", "--run-dir", (d / "s").string(), "--set",
                         "data.manifest=" + (d / "gen" / "data" / "manifest.jsonl").string(), "--set",
                         "finetune.label_fraction=0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_file_bytes(d / "s" / "sample.json"));
  EXPECT_LT(j["train"].get<int>(), 12);
  EXPECT_EQ(j["eval"], 8);
  const auto m = read_manifest(d / "s" / "manifest.jsonl");
  check_manifest_files(m, 16, 16);
}

TEST(Cli, GradcheckVerbReportsMaxError) {
  TempDir d;
  const auto r = invoke({"gradcheck", "--run-dir", (d / "g").string()});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("max relative error: "), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "g" / "gradcheck.json"));
}

TEST(Cli, HelpListsPrecedenceAndExitCodes) {
  const auto r = invoke({"--help"}, false);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("SIGNL_SEED"), std::string::npos);
  EXPECT_NE(r.out.find("Exit codes"), std::string::npos);
}
