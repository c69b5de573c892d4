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

#include <cmath>
#include <numeric>
#include <set>

#include "support/fixtures.hpp"
#include "tmegraph/model.hpp"

namespace tmegraph {
namespace {

class ModelTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { data_ = new std::vector<RoISample>(fixture::dataset(3, 21)); }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }
  static const std::vector<RoISample>& data() { return *data_; }

  static HierModel fitted(HierModelConfig cfg, std::uint64_t seed = 1) {
    HierModel m(cfg, seed);
    m.fit_normalizers(data());
    return m;
  }

 private:
  static std::vector<RoISample>* data_;
};

std::vector<RoISample>* ModelTest::data_ = nullptr;

std::vector<double> reversed_logits(const HierModel& m, const RoISample& s) {
  std::vector<std::size_t> order(s.n_tiles());
  std::iota(order.rbegin(), order.rend(), std::size_t{0});
  return classify_roi(m, select_tiles(s, order, s.tile_k));
}

TEST_F(ModelTest, DatasetShapes) {
  for (const auto& s : data()) {
    EXPECT_EQ(s.n_tiles(), 200u);
    EXPECT_EQ(s.cell_graphs.size(), 200u);
    EXPECT_EQ(s.tile_graph.node_features.rows, 200u);
    EXPECT_EQ(s.tile_graph.node_features.cols, kMetricDim);
    EXPECT_DOUBLE_EQ(s.tile_k, 200.0);
  }
  EXPECT_EQ(tile_feature_names(16).size(), 84u);
  EXPECT_EQ(tile_feature_names(16)[68], "embed_0");
}

TEST_F(ModelTest, TileFeaturesAre84Wide) {
  const auto m = fitted(fixture::quick_config());
  const auto p = m.prepare(data()[0]);
  EXPECT_EQ(m.embed(p).rows(), 200u);
  EXPECT_EQ(m.embed(p).cols(), 16u);
  const Tensor x = m.tile_features(p);
  EXPECT_EQ(x.cols(), 84u);
  EXPECT_EQ(m.logits(p).size(), 3u);
}

TEST_F(ModelTest, EmptyTileEmbedsToZero) {
  auto cfg = fixture::quick_config();
  cfg.encoder_mode = EncoderMode::Joint;
  const auto s = build_dataset({fixture::corner_roi()}, cfg, 4).front();
  const auto m = fitted(cfg);
  const auto p = m.prepare(s);
  const Matrix e = m.embed(p).value();
  std::size_t empty = 0, full = 0;
  for (std::size_t t = 0; t < p.n_tiles(); ++t) {
    double norm = 0.0;
    for (std::size_t j = 0; j < e.cols; ++j) norm += std::abs(e(t, j));
    if (s.cell_graphs[t].n_nodes() == 0) {
      ++empty;
      EXPECT_EQ(norm, 0.0) << "tile " << t;
    } else {
      ++full;
      EXPECT_GT(norm, 0.0) << "tile " << t;
    }
  }
  EXPECT_GT(empty, 0u);
  EXPECT_GT(full, 0u);
  for (double v : m.logits(p)) EXPECT_TRUE(std::isfinite(v));
}

TEST_F(ModelTest, TileOrderDoesNotChangeLogits) {
  for (const char* name : {"gcn-max", "gcn-mean", "gcn-add", "mil-att", "mil-mean"}) {
    auto cfg = fixture::quick_config();
    set_model_name(cfg, name);
    const auto m = fitted(cfg);
    const auto a = classify_roi(m, data()[1]);
    const auto b = reversed_logits(m, data()[1]);
    for (std::size_t c = 0; c < a.size(); ++c) EXPECT_NEAR(a[c], b[c], 1e-9 * (1.0 + std::abs(a[c]))) << name;
  }
}

TEST_F(ModelTest, ZeroParametersGiveZeroLogits) {
  for (const char* name : {"gcn-max", "mil-att", "mlp"}) {
    auto cfg = fixture::quick_config();
    set_model_name(cfg, name);
    auto m = fitted(cfg);
    for (auto& p : m.parameters()) {
      Matrix& v = p.tensor.mutable_value();
      std::fill(v.data.begin(), v.data.end(), 0.0);
    }
    for (double v : classify_roi(m, data()[0])) EXPECT_EQ(v, 0.0) << name;
  }
}

TEST_F(ModelTest, AttentionWeightsFormADistribution) {
  auto cfg = fixture::quick_config();
  set_model_name(cfg, "mil-att");
  const auto att = fitted(cfg);
  const Matrix w = att.attention_weights(att.prepare(data()[0]));
  ASSERT_EQ(w.rows, 200u);
  double sum = 0.0;
  for (double v : w.data) {
    EXPECT_GT(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);

  set_model_name(cfg, "mil-mean");
  const auto mean = fitted(cfg);
  for (double v : mean.attention_weights(mean.prepare(data()[0])).data) EXPECT_DOUBLE_EQ(v, 1.0 / 200.0);
}

TEST_F(ModelTest, SingleTileAttentionEqualsMean) {
  const std::size_t keep[1] = {0};
  const auto one = select_tiles(data()[0], keep, 200.0);
  auto cfg = fixture::quick_config();
  set_model_name(cfg, "mil-att");
  const auto a = classify_roi(fitted(cfg, 9), one);
  set_model_name(cfg, "mil-mean");
  const auto b = classify_roi(fitted(cfg, 9), one);
  for (std::size_t c = 0; c < a.size(); ++c) EXPECT_NEAR(a[c], b[c], 1e-12);
}

TEST_F(ModelTest, MlpUsesOnlyRoiFeatures) {
  auto cfg = fixture::quick_config();
  set_model_name(cfg, "mlp");
  const auto m = fitted(cfg);
  EXPECT_FALSE(m.uses_graphs());
  RoISample bare;
  bare.roi_id = "bare";
  bare.mean_cell_features = data()[0].mean_cell_features;
  const auto p = m.prepare(bare);
  EXPECT_EQ(p.roi_x.cols, kNumCellFeatures);
  EXPECT_EQ(m.logits(p), classify_roi(m, data()[0]));
}

TEST_F(ModelTest, FrozenModeExcludesEncoder) {
  auto cfg = fixture::quick_config();
  const auto frozen = fitted(cfg);
  cfg.encoder_mode = EncoderMode::Joint;
  const auto joint = fitted(cfg);
  EXPECT_EQ(joint.trainable().size(), frozen.trainable().size() + 3 * 3 + 2);
  const auto p = frozen.prepare(data()[0]);
  ASSERT_TRUE(p.frozen_embedding.has_value());
  EXPECT_EQ(frozen.logits(p), joint.logits(joint.prepare(data()[0])));
}

TEST_F(ModelTest, CheckpointRoundTrip) {
  for (const char* name : {"gcn-max", "mil-att", "mlp"}) {
    auto cfg = fixture::quick_config();
    set_model_name(cfg, name);
    Checkpoint c{fitted(cfg, 5), {"P001_R1"}, 17, 2};
    const auto j = checkpoint_to_json(c);
    const auto back = checkpoint_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(checkpoint_to_json(back).dump(), j.dump()) << name;
    EXPECT_EQ(classify_roi(back.model, data()[2]), classify_roi(c.model, data()[2])) << name;
    EXPECT_EQ(back.seed, 17u);
    EXPECT_EQ(back.test_rois, c.test_rois);
  }
}

TEST_F(ModelTest, CheckpointRejectsMismatch) {
  auto j = checkpoint_to_json({fitted(fixture::quick_config()), {}, 0, 0});
  j["model"] = "mlp";
  EXPECT_THROW(checkpoint_from_json(j), ValidationError);
  j = checkpoint_to_json({fitted(fixture::quick_config()), {}, 0, 0});
  j["parameters"].erase(j["parameters"].begin());
  EXPECT_THROW(checkpoint_from_json(j), ValidationError);
}

TEST(Normalizer, ZScoreWithUnitScaleForConstants) {
  const Matrix a(2, 2, std::vector<double>{1.0, 5.0, 3.0, 5.0});
  const Matrix b(1, 2, std::vector<double>{5.0, 5.0});
  const Matrix* blocks[2] = {&a, &b};
  const auto n = Normalizer::fit(blocks, 2);
  EXPECT_DOUBLE_EQ(n.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(n.scale[0], std::sqrt(8.0 / 3.0));
  EXPECT_DOUBLE_EQ(n.mean[1], 5.0);
  EXPECT_DOUBLE_EQ(n.scale[1], 1.0);
  const Matrix z = n.apply(a);
  EXPECT_DOUBLE_EQ(z(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(z(0, 1), 0.0);
  EXPECT_EQ(n.apply(Matrix(0, 0)).rows, 0u);
  EXPECT_THROW(n.apply(Matrix(1, 3)), ComputeError);
}

TEST_F(ModelTest, AugmentContract) {
  const auto cfg = fixture::quick_config();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = augment(data()[0], cfg, seed);
    EXPECT_EQ(a.n_tiles(), 160u);
    EXPECT_NE(std::find(cfg.k_choices.begin(), cfg.k_choices.end(), a.tile_k), cfg.k_choices.end());
    std::vector<Point> c;
    for (const auto& t : a.tiles) c.push_back({t.centroid_x(), t.centroid_y()});
    EXPECT_EQ(a.tile_graph.edges, threshold_edges(c, a.tile_k));
  }
  const auto x = augment(data()[0], cfg, 3);
  EXPECT_EQ(x, augment(data()[0], cfg, 3));
}

TEST_F(ModelTest, AugmentationsDiffer) {
  const auto cfg = fixture::quick_config();
  std::set<std::vector<int>> subsets;
  std::set<double> thresholds;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto a = augment(data()[2], cfg, seed);
    std::vector<int> ids;
    for (const auto& t : a.tiles) ids.push_back(t.tile_id);
    subsets.insert(ids);
    thresholds.insert(a.tile_k);
  }
  EXPECT_GE(subsets.size(), 2u);
  EXPECT_GE(thresholds.size(), 2u);
}

TEST(Dataset, RoiMeanIgnoresCellOrder) {
  auto roi = fixture::cohort(1, 8).front();
  const auto before = mean_cell_features(roi);
  std::reverse(roi.cells.begin(), roi.cells.end());
  const auto after = mean_cell_features(roi);
  for (std::size_t k = 0; k < kNumCellFeatures; ++k) EXPECT_NEAR(before[k], after[k], 1e-12);
}

TEST_F(ModelTest, LargerThresholdKeepsEveryEdge) {
  std::vector<std::size_t> keep(160);
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  std::vector<Edge> prev;
  for (double k : {150.0, 175.0, 200.0, 225.0, 250.0}) {
    const auto s = select_tiles(data()[1], keep, k);
    for (const Edge& e : prev) {
      EXPECT_NE(std::find(s.tile_graph.edges.begin(), s.tile_graph.edges.end(), e), s.tile_graph.edges.end());
    }
    EXPECT_GE(s.tile_graph.edges.size(), prev.size());
    prev = s.tile_graph.edges;
  }
}

TEST_F(ModelTest, TestGraphIsIdempotent) {
  const auto cfg = fixture::quick_config();
  const auto a = make_test_graph(augment(data()[0], cfg, 1), cfg);
  EXPECT_DOUBLE_EQ(a.tile_k, 200.0);
  EXPECT_EQ(make_test_graph(a, cfg), a);
  const auto full = make_test_graph(data()[0], cfg);
  EXPECT_EQ(full.n_tiles(), 200u);
  EXPECT_EQ(full, data()[0]);
}

TEST_F(ModelTest, BundleRoundTrip) {
  const auto j = sample_to_json(data()[0]);
  EXPECT_EQ(sample_from_json(nlohmann::json::parse(j.dump())), data()[0]);
  auto bad = j;
  bad["catalog"] = "other";
  EXPECT_THROW(sample_from_json(bad), ValidationError);
  bad = j;
  bad["cell_graphs"].erase(bad["cell_graphs"].begin());
  EXPECT_THROW(sample_from_json(bad), ParseError);
}

TEST_F(ModelTest, UnphenotypedCellsRejected) {
  auto roi = fixture::cohort(1, 2).front();
  for (auto& c : roi.cells) c.phenotype.reset();
  const TileSpec whole{0, 0, 0, 2048};
  EXPECT_THROW(tile_cell_graph(roi, whole, 30.0), ValidationError);
}

}  // namespace
}  // namespace tmegraph
