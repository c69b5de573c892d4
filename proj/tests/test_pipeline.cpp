/*
 * Copyright 2026 The tmegraph Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "tmegraph/pipeline.hpp"

namespace tmegraph {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t columns(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

RunConfig small_run() {
  RunConfig cfg;
  cfg.seed = 5;
  cfg.synth.n_patients = 6;
  cfg.synth.rois_per_patient = 2;
  cfg.planted = PlantedKind::TopologyOnly;
  cfg.model.lr = 1e-3;
  cfg.model.encoder_mode = EncoderMode::Frozen;
  cfg.model.max_epochs = 3;
  cfg.model.augment_copies = 1;
  cfg.model.n_splits = 1;
  cfg.explainer.epochs = 5;
  cfg.ig_points = 8;
  return cfg;
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / ("tmegraph_pipeline_" + std::to_string(::getpid())));
    fs::remove_all(*root_);
    const auto cfg = small_run();
    run_synth(cfg, (*root_ / "synth").string());
    run_build(cfg, (*root_ / "synth" / "cells.csv").string(), "", (*root_ / "build").string());
    run_train(cfg, (*root_ / "build").string(), "", (*root_ / "train").string());
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
  }
  static fs::path dir(const std::string& name) { return *root_ / name; }

 private:
  static fs::path* root_;
};

fs::path* PipelineTest::root_ = nullptr;

TEST_F(PipelineTest, SynthFilesMatchManifest) {
  const auto m = nlohmann::json::parse(slurp(dir("synth") / "manifest.json"));
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["config_hash"], config_hash(small_run()));
  for (const char* name : {"cells.csv", "rois.csv"}) {
    EXPECT_EQ(lines(dir("synth") / name).size() - 1, m["outputs"][name]["rows"].get<std::size_t>()) << name;
    EXPECT_EQ(hex64(fnv1a(slurp(dir("synth") / name))), m["outputs"][name]["fnv1a"]) << name;
  }
  EXPECT_EQ(m["outputs"]["rois.csv"]["rows"], 12);
  EXPECT_TRUE(fs::exists(dir("synth") / "truth.json"));
}

TEST_F(PipelineTest, ManifestReproducesConfig) {
  const auto back = load_run_config((dir("train") / "manifest.json").string());
  EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(small_run()).dump());
}

TEST_F(PipelineTest, BuildTables) {
  const auto metrics = lines(dir("build") / "metrics.csv");
  EXPECT_EQ(columns(metrics[0]), 68u + 2u);
  EXPECT_EQ(metrics.size(), 1u + 12u * 200u);
  EXPECT_EQ(metrics[0].substr(0, 20), "roi_id,tile_id,all_a");
  const auto rois = read_roi_features_csv((dir("build") / "roi_features.csv").string());
  const auto bundles = load_bundles(dir("build").string());
  ASSERT_EQ(rois.size(), 12u);
  ASSERT_EQ(bundles.size(), 12u);
  for (std::size_t i = 0; i < rois.size(); ++i) {
    EXPECT_EQ(rois[i].roi_id, bundles[i].roi_id);
    EXPECT_EQ(rois[i].mean_cell_features, bundles[i].mean_cell_features);
    EXPECT_EQ(rois[i].stage, bundles[i].stage);
  }
}

TEST_F(PipelineTest, TwoRoiInputGivesTwoBundles) {
  auto rois = parse_cell_table((dir("synth") / "cells.csv").string());
  rois.resize(2);
  std::ostringstream os;
  write_cell_table(os, rois);
  std::ofstream(dir("two.csv")) << os.str();
  run_build(small_run(), (dir("two.csv")).string(), "", dir("two").string());
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir("two") / "bundles")) n += e.path().filename() != "index.json";
  EXPECT_EQ(n, 2u);
}

TEST_F(PipelineTest, TrainReportRows) {
  const auto report = nlohmann::json::parse(slurp(dir("train") / "report.json"));
  EXPECT_EQ(report["model"], "gcn-max");
  std::set<std::string> groups;
  for (const auto& row : report["summary"]) groups.insert(row["group"].get<std::string>());
  for (const auto& w : report["warnings"]) {
    const auto text = w.get<std::string>();
    groups.insert(text.substr(text.find("region ") + 7, text.find(';') - text.find("region ") - 7));
  }
  EXPECT_EQ(groups, (std::set<std::string>{"All", "Centre", "Front", "Mucosa", "Stroma"}));
  const auto preds = lines(dir("train") / "predictions.csv");
  EXPECT_EQ(preds[0], "split,roi_id,region,true_stage,predicted_stage,p_pT1,p_pT2,p_pT3");
}

TEST_F(PipelineTest, MlpNeedsNoGraphs) {
  fs::create_directories(dir("features_only"));
  fs::copy_file(dir("build") / "roi_features.csv", dir("features_only") / "roi_features.csv");
  auto cfg = small_run();
  set_model_name(cfg.model, "mlp");
  const auto out = run_train(cfg, dir("features_only").string(), "", dir("mlp").string());
  EXPECT_EQ(out.report["model"], "mlp");
  EXPECT_THROW(run_train(small_run(), dir("features_only").string(), "", dir("gcn_fail").string()), ValidationError);
}

TEST_F(PipelineTest, ExplicitSplitIsUsed) {
  const auto split = dir("train") / "split_0.json";
  const auto out = run_train(small_run(), dir("build").string(), split.string(), dir("train_again").string());
  EXPECT_EQ(slurp(dir("train_again") / "report.json"), slurp(dir("train") / "report.json"));
  auto j = nlohmann::json::parse(slurp(split));
  j["train"].push_back(j["test"][0]);
  std::ofstream(dir("leaky.json")) << j.dump();
  EXPECT_THROW(run_train(small_run(), dir("build").string(), dir("leaky.json").string(), dir("leak").string()),
               ValidationError);
}

TEST_F(PipelineTest, ExplainCoversEveryTestRoi) {
  const auto ckpt = dir("train") / "checkpoint_0.json";
  run_explain(small_run(), ckpt.string(), dir("build").string(), "", 10, dir("explain").string());
  const auto test = nlohmann::json::parse(slurp(ckpt))["test_rois"].get<std::vector<std::string>>();
  std::map<std::string, std::size_t> tiles, top;
  for (const auto& l : lines(dir("explain") / "attributions.csv")) {
    if (l.rfind("roi_id", 0) == 0) continue;
    ++tiles[l.substr(0, l.find(','))];
    const double gap = std::stod(l.substr(l.rfind(',') + 1));
    EXPECT_TRUE(std::isfinite(gap));
  }
  for (const auto& l : lines(dir("explain") / "top_tiles.csv")) ++top[l.substr(0, l.find(','))];
  for (const auto& id : test) {
    EXPECT_EQ(tiles[id], 200u) << id;
    EXPECT_EQ(top[id], 10u) << id;
  }
  EXPECT_EQ(lines(dir("explain") / "feature_importance.csv").size(), 85u);
  EXPECT_EQ(lines(dir("explain") / "completeness.csv").size(), test.size() + 1);
}

TEST_F(PipelineTest, EvaluateAndExplainRejectBadInputs) {
  const auto ckpt = (dir("train") / "checkpoint_0.json").string();
  EXPECT_THROW(run_evaluate(small_run(), ckpt, dir("build").string(), "Nowhere", dir("e").string()), ValidationError);
  const auto report = run_evaluate(small_run(), ckpt, dir("build").string(), "", dir("e").string());
  const auto trained = nlohmann::json::parse(slurp(dir("train") / "report.json"));
  EXPECT_EQ(report["summary"][0]["mean"], trained["summary"][0]["mean"]);
  auto cfg = small_run();
  set_model_name(cfg.model, "mlp");
  run_train(cfg, dir("build").string(), "", dir("mlp_ckpt").string());
  EXPECT_THROW(run_explain(small_run(), (dir("mlp_ckpt") / "checkpoint_0.json").string(), dir("build").string(), "",
                           10, dir("x").string()),
               ValidationError);
}

TEST(RunConfig, ValidationAndJson) {
  RunConfig c = small_run();
  const auto back = nlohmann::json(c).get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(c).dump());
  c.synth.class_priors = {0.5, 0.5, 0.5};
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(nlohmann::json({{"planted", "both"}}).get<RunConfig>(), ValidationError);
  EXPECT_EQ(class_name(HierModelConfig{}, 1), "pT2");
  HierModelConfig merged;
  merged.n_classes = 2;
  merged.class_map = {0, 1, 1};
  EXPECT_EQ(class_name(merged, 1), "pT2+pT3");
}

}  // namespace
}  // namespace tmegraph
