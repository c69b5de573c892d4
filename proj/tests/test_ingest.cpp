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

#include <sstream>

#include "tmegraph/ingest.hpp"

namespace tmegraph {
namespace {

const char* kHeader = "roi_id,patient_id,region,stage,cell_id,x,y,area,solidity,cd4,cd8,cd20,foxp3,ck\n";

CellRecord cell(std::array<double, 5> expr) {
  CellRecord c;
  c.x = 10;
  c.y = 10;
  c.area = 50;
  c.solidity = 0.9;
  c.expr = expr;
  return c;
}

TEST(ParseCellTable, GroupsRowsByRoIAndConservesCount) {
  std::stringstream in;
  in << kHeader;
  for (int i = 0; i < 10; ++i) {
    in << (i % 2 ? "r2" : "r1") << ",p" << (i % 2) << ",Front,pT2," << i << "," << 10 + i
       << ",20,55.5,0.9,0.1,0.2,0.3,0.4,0.5\n";
  }
  const auto rois = parse_cell_table(in);
  ASSERT_EQ(rois.size(), 2u);
  EXPECT_EQ(rois[0].roi_id, "r1");
  EXPECT_EQ(rois[1].roi_id, "r2");
  EXPECT_EQ(rois[0].cells.size() + rois[1].cells.size(), 10u);
  EXPECT_EQ(rois[0].cells[1].cell_id, "2");
  EXPECT_DOUBLE_EQ(rois[1].cells[0].x, 11.0);
  EXPECT_EQ(rois[0].region, Region::Front);
  EXPECT_EQ(rois[0].stage, Stage::pT2);
}

TEST(ParseCellTable, HeaderOnlyGivesNoRoIs) {
  std::stringstream in(kHeader);
  EXPECT_TRUE(parse_cell_table(in).empty());
}

TEST(ParseCellTable, MissingColumnIsSchemaErrorNamingIt) {
  std::stringstream in("roi_id,patient_id,region,stage,x,y,area,cd4,cd8,cd20,foxp3,ck\n");
  try {
    parse_cell_table(in);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("solidity"), std::string::npos);
  }
}

TEST(ParseCellTable, NonNumericValueReportsLine) {
  std::stringstream in;
  in << kHeader << "r1,p1,Front,pT1,0,1,1,10,0.9,0.1,0.1,0.1,0.1,0.1\n"
     << "r1,p1,Front,pT1,1,abc,1,10,0.9,0.1,0.1,0.1,0.1,0.1\n";
  try {
    parse_cell_table(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(ParseCellTable, OutOfBoundsCoordinateIsValidationError) {
  std::stringstream in;
  in << kHeader << "r1,p1,Front,pT1,0,2048,1,10,0.9,0.1,0.1,0.1,0.1,0.1\n";
  EXPECT_THROW(parse_cell_table(in), ValidationError);
}

TEST(ParseCellTable, ColumnMapRenamesHeaders) {
  std::stringstream in(
      "roi,patient_id,region,stage,x,y,area,solidity,cd4,cd8,cd20,foxp3,ck\n"
      "a,p,Stroma,pT3,1,1,5,0.5,0,0,0,0,1\n");
  CellTableSchema schema;
  schema.columns["roi_id"] = "roi";
  const auto rois = parse_cell_table(in, schema);
  ASSERT_EQ(rois.size(), 1u);
  EXPECT_EQ(rois[0].roi_id, "a");
}

TEST(ParseRoITable, OverridesLabels) {
  std::stringstream cells;
  cells << kHeader << "r1,p1,Front,pT1,0,1,1,10,0.9,0.1,0.1,0.1,0.1,0.1\n";
  auto rois = parse_cell_table(cells);
  std::stringstream labels("roi_id,patient_id,region,stage\nr1,p9,Mucosa,pT3\n");
  apply_roi_labels(rois, parse_roi_table(labels));
  EXPECT_EQ(rois[0].patient_id, "p9");
  EXPECT_EQ(rois[0].region, Region::Mucosa);
  EXPECT_EQ(rois[0].stage, Stage::pT3);
}

TEST(PhenotypeCells, SingleCellIsEpithelialByPrecedence) {
  const auto out = phenotype_cells(std::vector<CellRecord>{cell({1, 2, 3, 4, 5})});
  EXPECT_EQ(out[0].phenotype, Phenotype::Epithelial);
}

TEST(PhenotypeCells, DominantMarkerWins) {
  std::vector<CellRecord> cells = {cell({0.0, 9.0, 0.0, 0.0, 0.0}), cell({0.5, 1.0, 0.5, 0.5, 0.5}),
                                   cell({0.7, 2.0, 0.7, 0.7, 0.7})};
  const auto out = phenotype_cells(cells);
  EXPECT_EQ(out[0].phenotype, Phenotype::TCytotoxic);
}

TEST(PhenotypeCells, EmptyInputThrows) {
  EXPECT_THROW(phenotype_cells(std::vector<CellRecord>{}), ValidationError);
}

// Independent rank-then-argmax reference: O(n^2) counting of smaller and
// equal values gives each cell's mean rank.
std::vector<Phenotype> brute_force_phenotypes(const std::vector<CellRecord>& cells) {
  const std::size_t n = cells.size();
  std::vector<Phenotype> out;
  const std::array<std::size_t, 5> precedence = {4, 1, 0, 2, 3};
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 5> pct{};
    for (std::size_t m = 0; m < 5; ++m) {
      double less = 0, equal = 0;
      for (const auto& other : cells) {
        if (other.expr[m] < cells[i].expr[m]) less += 1;
        if (other.expr[m] == cells[i].expr[m]) equal += 1;
      }
      pct[m] = (less + (equal + 1) / 2.0) / static_cast<double>(n);
    }
    std::size_t best = precedence[0];
    for (std::size_t m : precedence) {
      if (pct[m] > pct[best] + 1e-15) best = m;
    }
    out.push_back(static_cast<Phenotype>(best));
  }
  return out;
}

TEST(PhenotypeCells, MatchesBruteForceRankOracle) {
  Rng rng(42);
  std::vector<CellRecord> cells;
  for (int i = 0; i < 100; ++i) {
    std::array<double, 5> e{};
    // Quantised values create ties within markers.
    for (double& v : e) v = std::round(rng.uniform(0, 20)) / 4.0;
    cells.push_back(cell(e));
  }
  const auto got = phenotype_cells(cells);
  const auto expected = brute_force_phenotypes(cells);
  for (std::size_t i = 0; i < cells.size(); ++i) EXPECT_EQ(got[i].phenotype, expected[i]) << i;
}

TEST(PhenotypeCells, InvariantUnderMonotoneTransformOfOneMarker) {
  Rng rng(7);
  std::vector<CellRecord> cells;
  for (int i = 0; i < 200; ++i) {
    cells.push_back(cell({rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()}));
  }
  const auto before = phenotype_cells(cells);
  for (auto& c : cells) c.expr[2] = std::exp(3.0 * c.expr[2]) + 1.0;
  const auto after = phenotype_cells(cells);
  std::array<int, 5> counts{};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(before[i].phenotype, after[i].phenotype);
    ++counts[static_cast<std::size_t>(*after[i].phenotype)];
  }
  EXPECT_EQ(counts[0] + counts[1] + counts[2] + counts[3] + counts[4], 200);
}

TEST(SampleTiles, TwoHundredTilesInsideRoI) {
  RoIRecord roi;
  const auto tiles = sample_tiles(roi, 200, 256, 1);
  ASSERT_EQ(tiles.size(), 200u);
  for (const auto& t : tiles) {
    EXPECT_GE(t.origin_x, 0);
    EXPECT_GE(t.origin_y, 0);
    EXPECT_LE(t.origin_x + t.size, 2048);
    EXPECT_LE(t.origin_y + t.size, 2048);
    EXPECT_DOUBLE_EQ(t.centroid_x(), t.origin_x + 128.0);
  }
}

TEST(SampleTiles, DeterministicForSeed) {
  RoIRecord roi;
  EXPECT_EQ(sample_tiles(roi, 50, 256, 9), sample_tiles(roi, 50, 256, 9));
  EXPECT_NE(sample_tiles(roi, 50, 256, 9), sample_tiles(roi, 50, 256, 10));
}

TEST(SampleTiles, FullSizeTileForcedToOrigin) {
  RoIRecord roi;
  const auto tiles = sample_tiles(roi, 1, 2048, 3);
  EXPECT_EQ(tiles[0].origin_x, 0);
  EXPECT_EQ(tiles[0].origin_y, 0);
}

TEST(SampleTiles, OversizedTileThrows) {
  RoIRecord roi;
  EXPECT_THROW(sample_tiles(roi, 1, 4096, 3), ValidationError);
}

}  // namespace
}  // namespace tmegraph
