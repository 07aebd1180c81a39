#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "cli.hpp"
#include "json.hpp"
#include "run_manifest.hpp"
#include "xastruct/dataset_io.hpp"

namespace xastruct::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
};

Result Cli(std::vector<std::string> args) {
  args.insert(args.begin(), "xastruct");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = RunCli(static_cast<int>(argv.size()), argv.data());
  Result r{code, testing::internal::GetCapturedStdout()};
  testing::internal::GetCapturedStderr();
  return r;
}

const std::vector<std::string> kSmall = {
    "--set", "epochs=3",          "--set", "encoder_dim=8",  "--set", "encoder_hidden=8",
    "--set", "encoder_rounds=1",  "--set", "head_hidden=16", "--set", "embed_dim=8",
    "--set", "embed_hidden=8",    "--set", "conv_channels=2", "--set", "forest_trees=10"};

std::vector<std::string> With(std::vector<std::string> args, const std::vector<std::string>& more) {
  args.insert(args.end(), more.begin(), more.end());
  return args;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / "xastruct_cli_test");
    fs::remove_all(*root_);
    fs::create_directories(*root_);
    const auto r = Cli({"synth", "-n", "40", "--elements", "Cu,O,S", "--seed", "3", "--out",
                        Dir("data")});
    ASSERT_EQ(r.code, 0) << r.out;
  }
  static void TearDownTestSuite() { delete root_; }
  static std::string Dir(const std::string& name) { return (*root_ / name).string(); }
  static std::string Manifest() { return Dir("data") + "/manifest.jsonl"; }
  static fs::path* root_;
};
fs::path* CliTest::root_ = nullptr;

TEST_F(CliTest, SynthWritesDatasetAndRunManifest) {
  EXPECT_EQ(io::LoadDataset(Manifest()).size(), 40u);
  const auto run = nlohmann::json::parse(io::ReadText(Dir("data") + "/run_manifest.json"));
  EXPECT_EQ(run.at("command"), "synth");
  EXPECT_EQ(run.at("seed"), 3);
  bool listed = false;
  for (const auto& o : run.at("outputs")) listed |= o == "manifest.jsonl";
  EXPECT_TRUE(listed);
}

TEST_F(CliTest, TrainIsReproducible) {
  const auto a = Cli(With({"train", "mnnd", Manifest(), "--out", Dir("mnnd_a")}, kSmall));
  const auto b = Cli(With({"train", "mnnd", Manifest(), "--out", Dir("mnnd_b")}, kSmall));
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(a.out, b.out);
  for (const auto* f : {"metrics.json", "checkpoints/mnnd_unified.json", "logs/mnnd_unified.csv"}) {
    EXPECT_EQ(io::ReadText(Dir("mnnd_a") + "/" + f), io::ReadText(Dir("mnnd_b") + "/" + f)) << f;
  }
  const auto metrics = nlohmann::json::parse(io::ReadText(Dir("mnnd_a") + "/metrics.json"));
  EXPECT_EQ(metrics.at("task"), "mnnd");
  EXPECT_TRUE(metrics.at("models").at(0).contains("mae"));
  EXPECT_TRUE(fs::exists(Dir("mnnd_a") + "/run_manifest.json"));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(Cli({"train", "bogus", Manifest(), "--out", Dir("bogus")}).code, kExitUsage);
  EXPECT_EQ(Cli({"nosuchcommand"}).code, kExitUsage);
  EXPECT_EQ(Cli({"train", "mnnd"}).code, kExitUsage);
  EXPECT_EQ(Cli({"--help"}).code, kExitOk);
}

TEST_F(CliTest, EvalAndPredictInverse) {
  ASSERT_EQ(Cli(With({"train", "mnnd", Manifest(), "--out", Dir("inv")}, kSmall)).code, 0);
  const std::string ckpt = Dir("inv") + "/checkpoints/mnnd_unified.json";
  const auto e = Cli({"eval", ckpt, Manifest(), "--out", Dir("eval")});
  ASSERT_EQ(e.code, 0) << e.out;
  const auto em = nlohmann::json::parse(e.out);
  EXPECT_EQ(em.at("n_val"), 40);
  const auto id = io::ReadManifest(Manifest()).front().id;
  const auto p = Cli({"predict", ckpt, Manifest(), "--id", id, "--out", Dir("pred")});
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_TRUE(nlohmann::json::parse(p.out).contains("mnnd_angstrom"));
  EXPECT_TRUE(fs::exists(Dir("pred") + "/prediction.json"));
  const auto wrong = Cli({"predict", ckpt, Manifest(), "--id", id, "--task", "cn", "--out",
                          Dir("wrong")});
  EXPECT_EQ(wrong.code, kExitFailure);
}

TEST_F(CliTest, PredictForwardPrintsASpectrum) {
  ASSERT_EQ(Cli(With({"train", "forward", Manifest(), "--out", Dir("fwd")}, kSmall)).code, 0);
  const fs::path ckpt = Dir("fwd") + "/checkpoints/forward_Cu-K-XANES.json";
  ASSERT_TRUE(fs::exists(ckpt));
  std::string structure;
  for (const auto& r : io::ReadManifest(Manifest())) {
    if (r.labels.neighbor_type.symbol() != "Cu" && structure.empty() &&
        io::ReadStructures(Dir("data") + "/" + r.structure).front().sites()[r.absorber_index].element.symbol() == "Cu") {
      structure = Dir("data") + "/" + r.structure;
    }
  }
  ASSERT_FALSE(structure.empty());
  const auto p = Cli({"predict", ckpt.string(), structure, "--out", Dir("fwd_pred")});
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_EQ(p.out.rfind("energy_ev,mu\n", 0), 0u);
  EXPECT_TRUE(fs::exists(Dir("fwd_pred") + "/prediction.csv"));
}

TEST_F(CliTest, GradcheckExitCodes) {
  EXPECT_EQ(Cli({"gradcheck", "--seeds", "2"}).code, kExitOk);
  const auto bad = Cli({"gradcheck", "--seeds", "2", "--inject-fault"});
  EXPECT_EQ(bad.code, kExitFailure);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, PlotWritesTableAndOverlay) {
  ASSERT_EQ(Cli(With({"train", "cn", Manifest(), "--out", Dir("cn")}, kSmall)).code, 0);
  const auto rec = io::ReadManifest(Manifest()).front();
  const auto r = Cli({"plot", Dir("cn") + "/metrics.json", Dir("data") + "/" + rec.xanes, "--out",
                      Dir("plot")});
  ASSERT_EQ(r.code, 0) << r.out;
  const auto table = io::ReadText(Dir("plot") + "/errors.csv");
  EXPECT_EQ(table.rfind("task,scope,n_train,n_val,mae,r2,accuracy,macro_f1,cross_entropy\n", 0), 0u);
  EXPECT_NE(table.find("cn,"), std::string::npos);
  EXPECT_NE(io::ReadText(Dir("plot") + "/overlay.svg").find("<polyline"), std::string::npos);
}

TEST_F(CliTest, FlagsBeatConfigFileBeatsDefaults) {
  const std::string cfg = Dir("cfg.txt");
  io::WriteText(cfg, "n_samples = 5\nseed = 11\n");
  ASSERT_EQ(Cli({"synth", "--config", cfg, "--elements", "Cu,O", "--out", Dir("c1")}).code, 0);
  EXPECT_EQ(io::LoadDataset(Dir("c1") + "/manifest.jsonl").size(), 5u);
  EXPECT_EQ(nlohmann::json::parse(io::ReadText(Dir("c1") + "/run_manifest.json")).at("seed"), 11);
  ASSERT_EQ(Cli({"synth", "--config", cfg, "--elements", "Cu,O", "-n", "3", "--seed", "12",
                 "--set", "jitter=0", "--out", Dir("c2")})
                .code,
            0);
  EXPECT_EQ(io::LoadDataset(Dir("c2") + "/manifest.jsonl").size(), 3u);
  EXPECT_EQ(nlohmann::json::parse(io::ReadText(Dir("c2") + "/run_manifest.json")).at("seed"), 12);
  EXPECT_EQ(Cli({"synth", "--config", Dir("missing.txt"), "--out", Dir("c3")}).code, kExitUsage);
  EXPECT_EQ(Cli({"synth", "--set", "n_samples=abc", "--out", Dir("c4")}).code, kExitFailure);
}

TEST(RunManifest, GitBlobHashMatchesGit) {
  EXPECT_EQ(GitBlobHash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(GitBlobHash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

}  // namespace
}  // namespace xastruct::cli
