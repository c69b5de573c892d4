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
#include <numbers>
#include <set>

#include "tmegraph/graph.hpp"
#include "tmegraph/rng.hpp"

namespace tmegraph {
namespace {

SpatialGraph from_points(std::vector<Point> pts, double k) {
  const std::size_t n = pts.size();
  Matrix f(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    f(i, 0) = static_cast<double>(i);
    f(i, 1) = 0.5;
  }
  return build_graph(std::move(pts), std::move(f), k);
}

std::vector<Point> random_points(std::size_t n, double extent, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> pts(n);
  for (auto& p : pts) p = {rng.uniform(0, extent), rng.uniform(0, extent)};
  return pts;
}

TEST(BuildGraph, DistanceBelowThresholdConnects) {
  const auto g = from_points({{0, 0}, {0, 29}}, 30);
  ASSERT_EQ(g.n_edges(), 1u);
  EXPECT_EQ(g.edge_weights[0], 1.0);
}

TEST(BuildGraph, DistanceEqualToThresholdDoesNotConnect) {
  EXPECT_EQ(from_points({{0, 0}, {0, 30}}, 30).n_edges(), 0u);
}

TEST(BuildGraph, MatchesExhaustivePairScan) {
  const auto pts = random_points(100, 200, 11);
  const auto g = from_points(pts, 30);
  std::vector<Edge> brute;
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    for (std::uint32_t j = i + 1; j < pts.size(); ++j) {
      const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y;
      if (std::sqrt(dx * dx + dy * dy) < 30.0) brute.push_back({i, j});
    }
  }
  EXPECT_EQ(g.edges, brute);
  EXPECT_GT(brute.size(), 10u);
}

TEST(BuildGraph, NoSelfLoopsAndSortedUniqueEdges) {
  const auto g = from_points(random_points(300, 300, 5), 40);
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const Edge& e : g.edges) {
    EXPECT_LT(e.u, e.v);
    EXPECT_TRUE(seen.insert({e.u, e.v}).second);
  }
  EXPECT_TRUE(std::is_sorted(g.edges.begin(), g.edges.end()));
}

TEST(BuildGraph, NanCoordinateThrows) {
  EXPECT_THROW(from_points({{0, 0}, {std::nan(""), 1}}, 30), ValidationError);
}

TEST(BuildGraph, FeatureRowMismatchThrows) {
  EXPECT_THROW(build_graph({{0, 0}}, Matrix(2, 1), 30), ValidationError);
}

TEST(BuildGraph, DegreeMatchesAdjacencyRowSums) {
  const auto g = from_points(random_points(150, 250, 3), 35);
  const auto deg = degrees(g);
  const auto adj = adjacency_lists(g.n_nodes(), g.edges);
  for (std::size_t i = 0; i < g.n_nodes(); ++i) EXPECT_EQ(deg[i], adj[i].size());
}

TEST(BuildGraph, EdgeSetMonotoneInThreshold) {
  const auto pts = random_points(200, 300, 8);
  for (double k1 : {10.0, 25.0, 40.0}) {
    const auto small = from_points(pts, k1).edges;
    const auto large = from_points(pts, k1 + 15.0).edges;
    EXPECT_TRUE(std::includes(large.begin(), large.end(), small.begin(), small.end()));
  }
}

TEST(BuildGraph, RigidMotionPreservesEdges) {
  const auto pts = random_points(150, 250, 21);
  const auto base = from_points(pts, 30).edges;
  const double th = 0.7;
  std::vector<Point> moved;
  for (const auto& p : pts) {
    moved.push_back({std::cos(th) * p.x - std::sin(th) * p.y + 1000.0,
                     std::sin(th) * p.x + std::cos(th) * p.y - 500.0});
  }
  // Rotation perturbs distances at the ulp level, so only pairs well away
  // from the threshold are compared.
  const auto rotated = from_points(moved, 30).edges;
  std::set<Edge> a(base.begin(), base.end()), b(rotated.begin(), rotated.end());
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    for (std::uint32_t j = i + 1; j < pts.size(); ++j) {
      const double d = std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y);
      if (std::fabs(d - 30.0) < 1e-9) continue;
      EXPECT_EQ(a.count({i, j}), b.count({i, j}));
    }
  }
}

TEST(InducedSubgraph, AllNodesIsIdentity) {
  auto g = from_points(random_points(40, 100, 2), 25);
  g.node_labels = std::vector<Phenotype>(40, Phenotype::BCell);
  EXPECT_EQ(induced_subgraph(g, [](std::size_t) { return true; }), g);
}

TEST(InducedSubgraph, NoNodesIsEmpty) {
  const auto g = from_points(random_points(40, 100, 2), 25);
  const auto sub = induced_subgraph(g, [](std::size_t) { return false; });
  EXPECT_EQ(sub.n_nodes(), 0u);
  EXPECT_EQ(sub.n_edges(), 0u);
}

TEST(InducedSubgraph, TrianglePairKeepsOneEdge) {
  const auto g = from_points({{0, 0}, {10, 0}, {5, 8}}, 30);
  ASSERT_EQ(g.n_edges(), 3u);
  const auto sub = induced_subgraph(g, [](std::size_t i) { return i != 1; });
  EXPECT_EQ(sub.n_nodes(), 2u);
  ASSERT_EQ(sub.n_edges(), 1u);
  EXPECT_EQ(sub.edges[0], (Edge{0, 1}));
  EXPECT_EQ(sub.coords[1], (Point{5, 8}));
}

TEST(Serialization, RoundTripIsBitExact) {
  Rng rng(99);
  auto g = from_points(random_points(60, 150, 4), 30);
  for (double& v : g.node_features.data) v = rng.normal() * 1e-7 + 1.0 / 3.0;
  for (double& w : g.edge_weights) w = rng.uniform();
  g.node_labels.emplace();
  for (std::size_t i = 0; i < g.n_nodes(); ++i) g.node_labels->push_back(kAllPhenotypes[i % 5]);
  EXPECT_EQ(deserialize_graph(serialize_graph(g)), g);
}

TEST(Serialization, EmptyGraphRoundTrips) {
  SpatialGraph g;
  EXPECT_EQ(deserialize_graph(serialize_graph(g)), g);
}

TEST(Serialization, LargeGraphSizeIsLinear) {
  const auto small = from_points(random_points(1000, 1000, 6), 20);
  const auto large = from_points(random_points(10000, 3162, 6), 20);
  const auto s_small = serialize_graph(small);
  const auto s_large = serialize_graph(large);
  EXPECT_EQ(deserialize_graph(s_large), large);
  const double per_item_small = static_cast<double>(s_small.size()) / (small.n_nodes() + small.n_edges());
  const double per_item_large = static_cast<double>(s_large.size()) / (large.n_nodes() + large.n_edges());
  EXPECT_LT(per_item_large, 1.5 * per_item_small);
}

TEST(Serialization, MalformedStreamReportsOffset) {
  try {
    deserialize_graph(R"({"version": 1, "nodes": [ }")");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  EXPECT_THROW(deserialize_graph(R"({"version": 1})"), ParseError);
}

}  // namespace
}  // namespace tmegraph
