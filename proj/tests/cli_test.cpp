// Copyright 2026 The ResDTA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

namespace resdta {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;
using testing::write_text;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto raw = testing::synthetic_raw({.n_drugs = 12,
                                             .n_proteins = 5,
                                             .present_fraction = 0.9,
                                             .smiles_min = 3,
                                             .smiles_max = 16,
                                             .protein_min = 5,
                                             .protein_max = 30,
                                             .seed = 17});
    testing::write_raw(raw, dir_.file("ligands_can.txt"), dir_.file("proteins.txt"), dir_.file("Y.txt"));
    n_records_ = raw.n_present();
    nlohmann::json cfg;
    cfg["model"] = testing::tiny_config();
    cfg["train"] = {{"batch_size", 8}, {"lr_initial", 1e-3}, {"epochs", 2}, {"restart_period", 2}};
    write_text(dir_.file("config.json"), cfg.dump());
  }

  // Runs the CLI with the shared config and data directory; stderr goes to
  // log().
  int run(const std::string& args, bool with_defaults = true) {
    std::string cmd = std::string(RESDTA_CLI_PATH) + " " + args;
    if (with_defaults) cmd += " --config " + dir_.file("config.json") + " --data-dir " + dir_.path().string() + " --out " + out();
    cmd += " 2>" + dir_.file("stderr.log") + " >" + dir_.file("stdout.log");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string out() const { return dir_.file("out"); }
  std::string log() const { return slurp(dir_.file("stderr.log")); }
  nlohmann::json json_file(const std::string& rel) const { return nlohmann::json::parse(slurp(out() + "/" + rel)); }

  TempDir dir_;
  std::size_t n_records_ = 0;
};

TEST_F(Cli, PrepareWritesCacheAndSummaryAndIsIdempotent) {
  ASSERT_EQ(run("prepare"), 0) << log();
  const auto summary = json_file("summary.json");
  EXPECT_EQ(summary["n_drugs"], 12);
  EXPECT_EQ(summary["n_proteins"], 5);
  EXPECT_EQ(summary["n_interactions"], n_records_);
  EXPECT_EQ(summary["fold_source"], "generated");
  EXPECT_TRUE(fs::exists(out() + "/cache/folds_cv.json"));
  EXPECT_TRUE(fs::exists(out() + "/prepare_config.json"));
  ASSERT_EQ(run("prepare"), 0);
  EXPECT_NE(log().find("cache up to date"), std::string::npos);
  ASSERT_EQ(run("prepare --force"), 0);
  EXPECT_EQ(log().find("cache up to date"), std::string::npos);
}

TEST_F(Cli, MissingAffinityFileIsDataError) {
  fs::remove(dir_.file("Y.txt"));
  EXPECT_EQ(run("prepare"), 2);
  EXPECT_NE(log().find("Y.txt"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("", false), 1);
  EXPECT_EQ(run("train --folds 7"), 1);
  EXPECT_EQ(run("frobnicate", false), 1);
  write_text(dir_.file("bad_key.json"), R"({"model": {"kernal_size": 3}})");
  EXPECT_EQ(run("prepare --config " + dir_.file("bad_key.json"), false), 1);
  EXPECT_NE(log().find("kernal_size"), std::string::npos);
  write_text(dir_.file("bad_type.json"), R"({"train": {"epochs": "ten"}})");
  EXPECT_EQ(run("prepare --config " + dir_.file("bad_type.json"), false), 1);
}

TEST_F(Cli, TrainWithoutPrepareIsDataError) { EXPECT_EQ(run("train --folds 0"), 2); }

TEST_F(Cli, TrainEvaluatePredictReport) {
  ASSERT_EQ(run("prepare"), 0) << log();
  ASSERT_EQ(run("train --folds all --epochs 1 --limit 40"), 0) << log();
  for (int f = 0; f < 5; ++f) {
    EXPECT_TRUE(fs::exists(out() + "/checkpoints/fold" + std::to_string(f) + "_epoch0.ckpt")) << f;
    const auto csv = slurp(out() + "/history/fold" + std::to_string(f) + ".csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2) << csv;
  }

  ASSERT_EQ(run("evaluate"), 0) << log();
  const auto metrics = json_file("eval/metrics.json");
  EXPECT_EQ(metrics["n_folds"], 5);
  EXPECT_TRUE(metrics["mean"].contains("ci"));
  EXPECT_TRUE(metrics["std"].contains("mse"));
  const auto first = slurp(out() + "/eval/metrics.json");
  ASSERT_EQ(run("evaluate"), 0);
  EXPECT_EQ(slurp(out() + "/eval/metrics.json"), first);
  const auto preds = slurp(out() + "/eval/predictions.csv");
  EXPECT_EQ(preds.substr(0, preds.find('\n')), "drug_id,protein_id,measured,predicted");

  write_text(dir_.file("pairs.tsv"), "drug_id\tprotein_id\nD0\tP1\nD3\tP4\n");
  ASSERT_EQ(run("predict --folds 2 --pairs " + dir_.file("pairs.tsv") + " --output " + dir_.file("p.csv")), 0) << log();
  const auto p = slurp(dir_.file("p.csv"));
  EXPECT_EQ(std::count(p.begin(), p.end(), '\n'), 3);
  EXPECT_EQ(p.find("D0,P1,"), p.find('\n') + 1);
  write_text(dir_.file("bad_pairs.tsv"), "D0\tNOPE\n");
  EXPECT_EQ(run("predict --pairs " + dir_.file("bad_pairs.tsv")), 2);

  ASSERT_EQ(run("report --svg"), 0) << log();
  const auto report = json_file("report/report.json");
  EXPECT_TRUE(report["regression"].contains("slope"));
  EXPECT_TRUE(fs::exists(out() + "/report/scatter.csv"));
  EXPECT_TRUE(fs::exists(out() + "/report/scatter.svg"));
  EXPECT_TRUE(fs::exists(out() + "/report/report.md"));
}

TEST_F(Cli, SameSeedGivesIdenticalHistory) {
  ASSERT_EQ(run("prepare"), 0) << log();
  ASSERT_EQ(run("train --folds 1 --seed 5"), 0) << log();
  const auto a = slurp(out() + "/history/fold1.csv");
  ASSERT_EQ(run("train --folds 1 --seed 5"), 0);
  EXPECT_EQ(slurp(out() + "/history/fold1.csv"), a);
}

TEST_F(Cli, EvaluateRandomInitAndConfigMismatch) {
  ASSERT_EQ(run("prepare"), 0) << log();
  ASSERT_EQ(run("evaluate --random-init --folds 3"), 0) << log();
  EXPECT_EQ(json_file("eval/metrics.json")["random_init"], true);
  ASSERT_EQ(run("train --folds 0 --epochs 1"), 0) << log();
  nlohmann::json other;
  auto c = testing::tiny_config();
  c.use_skip = false;
  other["model"] = c;
  write_text(dir_.file("other.json"), other.dump());
  EXPECT_EQ(run("evaluate --folds 0 --config " + dir_.file("other.json") + " --data-dir " + dir_.path().string() +
                    " --out " + out(),
                false),
            2);
  EXPECT_NE(log().find("ConfigMismatch"), std::string::npos);
}

TEST_F(Cli, NonFiniteLossIsRuntimeError) {
  ASSERT_EQ(run("prepare"), 0) << log();
  nlohmann::json cfg;
  cfg["model"] = testing::tiny_config();
  cfg["train"] = {{"batch_size", 4}, {"lr_initial", 1e38}, {"epochs", 3}, {"restart_period", 3}};
  write_text(dir_.file("explode.json"), cfg.dump());
  EXPECT_EQ(run("train --folds 0 --config " + dir_.file("explode.json") + " --data-dir " + dir_.path().string() +
                    " --out " + out(),
                false),
            3);
  EXPECT_NE(log().find("NonFiniteLoss"), std::string::npos);
}

TEST_F(Cli, ReportPerfectAndConstantPredictions) {
  write_text(dir_.file("perfect.csv"), "drug_id,protein_id,measured,predicted\na,x,1,1\nb,x,2,2\nc,x,4,4\n");
  ASSERT_EQ(run("report --predictions " + dir_.file("perfect.csv")), 0) << log();
  auto r = json_file("report/report.json");
  EXPECT_NEAR(r["regression"]["slope"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(r["regression"]["intercept"].get<double>(), 0.0, 1e-12);
  EXPECT_EQ(r["r2_degenerate"], false);

  write_text(dir_.file("const.csv"), "drug_id,protein_id,measured,predicted\na,x,1,3\nb,x,2,3\nc,x,4,3\n");
  ASSERT_EQ(run("report --predictions " + dir_.file("const.csv")), 0) << log();
  r = json_file("report/report.json");
  EXPECT_EQ(r["r2_degenerate"], true);

  write_text(dir_.file("bad.csv"), "drug_id,protein_id,measured,predicted\na,x,1\n");
  EXPECT_EQ(run("report --predictions " + dir_.file("bad.csv")), 2);
  write_text(dir_.file("nan.csv"), "drug_id,protein_id,measured,predicted\na,x,1,zz\n");
  EXPECT_EQ(run("report --predictions " + dir_.file("nan.csv")), 2);
}

}  // namespace
}  // namespace resdta
