// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tcd/data.hpp"
#include "tcd/png_io.hpp"

namespace tcd {
namespace {

namespace fs = std::filesystem;

const fs::path kRoot = fs::temp_directory_path() / "tcd_cli_test";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(const std::string& args) {
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string(TCD_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

const char* kToyConfig = R"({
  "epochs": 1,
  "batch_size": 2,
  "model": {"stage_channels": [8, 16, 24, 32], "attention_heads": [1, 2, 2, 4], "blocks_per_stage": 1,
            "decoder_width": 16, "num_classes": 4},
  "ttg": {"fusion_dim": 16, "decoder_layers": 1, "attention_heads": 2, "text_dim": 8, "num_experts": 2, "pos_grid": 2},
  "dataset": {"train_size": 4, "test_size": 4, "synth": {"change_ratio_target": 0.02, "change_ratio_max": 0.5}}
})";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    std::ofstream(kRoot / "toy.json") << kToyConfig;
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }

  static std::string config() { return "--config " + (kRoot / "toy.json").string(); }

  // Trains the toy config once per directory name.
  static fs::path trained(const std::string& name, const std::string& extra = "") {
    const fs::path dir = kRoot / name;
    if (!fs::exists(dir / "checkpoint.tcd")) {
      const Result r = run(config() + " " + extra + " train --out " + dir.string());
      EXPECT_EQ(r.code, 0) << r.err;
    }
    return dir;
  }
};

TEST_F(Cli, TrainWritesArtifacts) {
  const fs::path dir = trained("run");
  for (const char* f : {"config.json", "train_log.jsonl", "checkpoint.tcd", "metrics.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  std::ifstream log(dir / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("l_trans"));
    ++lines;
  }
  EXPECT_EQ(lines, 2);
}

TEST_F(Cli, OverrideIsRecordedInConfig) {
  const fs::path dir = kRoot / "override";
  const Result r = run(config() + " --set losses.lambda1=0 train --out " + dir.string() + " --steps 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir / "config.json"));
  EXPECT_EQ(j["losses"]["lambda1"].get<double>(), 0.0);
}

TEST_F(Cli, MissingDatasetRootExitsTwo) {
  const std::string root = (kRoot / "no_such_root").string();
  const Result r = run(config() + " --set dataset.kind=directory dataset.root=" + root + " train --out " +
                       (kRoot / "missing").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(root), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigErrorsExitTwoWithField) {
  std::ofstream(kRoot / "bad.json") << "{\"optimizer\": {\"lrr\": 1}}";
  const Result r = run("--config " + (kRoot / "bad.json").string() + " train --out " + (kRoot / "bad").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("optimizer.lrr"), std::string::npos) << r.err;
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, EvalReportsAndStratifies) {
  const fs::path dir = trained("run");
  const fs::path out = kRoot / "eval";
  const Result r = run("eval --checkpoint " + (dir / "checkpoint.tcd").string() + " --stratify --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("SeK"), std::string::npos);
  EXPECT_NE(r.out.find("F1"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "strata.txt"));
  const auto j = nlohmann::json::parse(slurp(out / "metrics.json"));
  EXPECT_TRUE(j.contains("strata"));

  const Result mismatch = run("eval --checkpoint " + (dir / "checkpoint.tcd").string() + " --task bcd --out " +
                              (kRoot / "eval_bad").string());
  EXPECT_EQ(mismatch.code, 2);
}

TEST_F(Cli, BcdEvalReportsBinaryMetrics) {
  const fs::path dir = trained("bcd_run", "--set task=bcd dataset.layout=bcd");
  const Result r = run("eval --checkpoint " + (dir / "checkpoint.tcd").string() + " --task bcd --out " +
                       (kRoot / "bcd_eval").string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* m : {"F1", "IoU", "OA"}) EXPECT_NE(r.out.find(m), std::string::npos) << m;
  EXPECT_EQ(r.out.find("SeK"), std::string::npos);
}

TEST_F(Cli, VisualizeIsDeterministic) {
  const fs::path ckpt = trained("run") / "checkpoint.tcd";
  const std::string base = "visualize --checkpoint " + ckpt.string() + " --sample test_00000 --what ";
  ASSERT_EQ(run(base + "recon_similarity --out " + (kRoot / "vis_a").string()).code, 0);
  ASSERT_EQ(run(base + "recon_similarity --out " + (kRoot / "vis_b").string()).code, 0);
  for (const char* f : {"test_00000_recon_similarity_t1.png", "test_00000_recon_similarity_t2.png"}) {
    const std::string a = slurp(kRoot / "vis_a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(kRoot / "vis_b" / f)) << f;
  }
  EXPECT_EQ(run(base + "diff_features --out " + (kRoot / "vis_a").string()).code, 0);
  EXPECT_TRUE(fs::exists(kRoot / "vis_a" / "test_00000_diff_features.png"));

  const Result bad = run(base + "attention --out " + (kRoot / "vis_c").string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("attention"), std::string::npos) << bad.err;
}

TEST_F(Cli, SynthWritesValidDeterministicData) {
  std::ofstream(kRoot / "spec.json") << R"({"change_ratio_target": 0.3, "seed": 4})";
  const std::string spec = "synth --spec " + (kRoot / "spec.json").string() + " -n 10 --out ";
  ASSERT_EQ(run(spec + (kRoot / "synth_a").string()).code, 0);
  ASSERT_EQ(run(spec + (kRoot / "synth_b").string()).code, 0);

  DatasetSpec ds{kRoot / "synth_a", DatasetLayout::Scd};
  EXPECT_EQ(validate_split(ds, "train"), 10u);
  double ratio = 0.0;
  for (const auto& id : list_split(ds, "train")) ratio += load_sample(ds, id).change_ratio();
  EXPECT_GE(ratio / 10.0, 0.24);
  EXPECT_LE(ratio / 10.0, 0.36);

  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(kRoot / "synth_a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path twin = kRoot / "synth_b" / fs::relative(e.path(), kRoot / "synth_a");
    if (e.path().filename() == "manifest.json") continue;  // records the output path
    EXPECT_EQ(slurp(e.path()), slurp(twin)) << e.path();
  }
  EXPECT_EQ(files, 10u * 5u + 2u);
}

}  // namespace
}  // namespace tcd
