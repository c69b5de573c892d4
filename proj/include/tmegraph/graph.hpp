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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tmegraph/errors.hpp"
#include "tmegraph/ingest.hpp"
#include "tmegraph/matrix.hpp"

namespace tmegraph {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Undirected edge, always stored with u < v.
struct Edge {
  std::uint32_t u = 0;
  std::uint32_t v = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Undirected spatial graph. Edges are sorted, unique, loop-free.
struct SpatialGraph {
  std::vector<Point> coords;
  Matrix node_features;
  std::vector<Edge> edges;
  std::vector<double> edge_weights;
  std::optional<std::vector<Phenotype>> node_labels;

  std::size_t n_nodes() const { return coords.size(); }
  std::size_t n_edges() const { return edges.size(); }
  std::size_t feature_dim() const { return node_features.cols; }

  friend bool operator==(const SpatialGraph&, const SpatialGraph&) = default;
};

/// Adjacency lists (sorted) derived from an edge list.
inline std::vector<std::vector<std::uint32_t>> adjacency_lists(std::size_t n,
                                                               std::span<const Edge> edges) {
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const Edge& e : edges) {
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

inline std::vector<std::size_t> degrees(const SpatialGraph& g) {
  std::vector<std::size_t> deg(g.n_nodes(), 0);
  for (const Edge& e : g.edges) {
    ++deg[e.u];
    ++deg[e.v];
  }
  return deg;
}

/// Pairs (i, j), i < j, with Euclidean distance strictly below k. Uses a
/// uniform grid of cell size k so only neighbouring buckets are compared.
inline std::vector<Edge> threshold_edges(std::span<const Point> points, double k) {
  if (!(k > 0.0) || !std::isfinite(k)) throw ValidationError("distance threshold k must be > 0");
  for (const Point& p : points) {
    if (std::isnan(p.x) || std::isnan(p.y) || std::isinf(p.x) || std::isinf(p.y)) {
      throw ValidationError("graph construction: non-finite coordinate");
    }
  }
  auto bucket = [k](double v) { return static_cast<std::int64_t>(std::floor(v / k)); };
  auto key = [](std::int64_t bx, std::int64_t by) {
    return (static_cast<std::uint64_t>(bx) << 32) ^ static_cast<std::uint64_t>(by & 0xffffffff);
  };
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
  grid.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    grid[key(bucket(points[i].x), bucket(points[i].y))].push_back(static_cast<std::uint32_t>(i));
  }
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::int64_t bx = bucket(points[i].x);
    const std::int64_t by = bucket(points[i].y);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        auto it = grid.find(key(bx + dx, by + dy));
        if (it == grid.end()) continue;
        for (std::uint32_t j : it->second) {
          if (j <= i) continue;
          if (std::hypot(points[i].x - points[j].x, points[i].y - points[j].y) < k) {
            edges.push_back({static_cast<std::uint32_t>(i), j});
          }
        }
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

/// Connects i != j iff d(i, j) < k; all weights start at 1.
inline SpatialGraph build_graph(std::vector<Point> points, Matrix features, double k) {
  if (features.rows != points.size()) {
    throw ValidationError("build_graph: " + std::to_string(features.rows) + " feature rows for " +
                          std::to_string(points.size()) + " points");
  }
  SpatialGraph g;
  g.edges = threshold_edges(points, k);
  g.edge_weights.assign(g.edges.size(), 1.0);
  g.coords = std::move(points);
  g.node_features = std::move(features);
  return g;
}

/// Subgraph on the nodes for which keep(i) holds, in original order.
inline SpatialGraph induced_subgraph(const SpatialGraph& g,
                                     const std::function<bool(std::size_t)>& keep) {
  const std::size_t n = g.n_nodes();
  std::vector<std::int64_t> remap(n, -1);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep(i)) {
      remap[i] = static_cast<std::int64_t>(kept.size());
      kept.push_back(i);
    }
  }
  SpatialGraph out;
  out.coords.reserve(kept.size());
  out.node_features = Matrix(kept.size(), g.node_features.cols);
  if (g.node_labels) out.node_labels.emplace();
  for (std::size_t r = 0; r < kept.size(); ++r) {
    out.coords.push_back(g.coords[kept[r]]);
    if (g.node_features.cols > 0) {
      std::copy_n(g.node_features.row(kept[r]).begin(), g.node_features.cols,
                  out.node_features.row(r).begin());
    }
    if (g.node_labels) out.node_labels->push_back((*g.node_labels)[kept[r]]);
  }
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [u, v] = g.edges[e];
    if (remap[u] >= 0 && remap[v] >= 0) {
      out.edges.push_back({static_cast<std::uint32_t>(remap[u]), static_cast<std::uint32_t>(remap[v])});
      out.edge_weights.push_back(g.edge_weights[e]);
    }
  }
  return out;
}

/// Structured JSON form: {version, feature_dim, nodes: [{id, x, y,
/// features, label}], edges: [{u, v, w}]}.
inline nlohmann::json graph_to_json(const SpatialGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    nlohmann::json node;
    node["id"] = i;
    node["x"] = g.coords[i].x;
    node["y"] = g.coords[i].y;
    const auto row = g.node_features.cols > 0 ? g.node_features.row(i) : std::span<const double>{};
    node["features"] = std::vector<double>(row.begin(), row.end());
    node["label"] = g.node_labels ? nlohmann::json(std::string(to_string((*g.node_labels)[i])))
                                  : nlohmann::json(nullptr);
    nodes.push_back(std::move(node));
  }
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t e = 0; e < g.n_edges(); ++e) {
    edges.push_back({{"u", g.edges[e].u}, {"v", g.edges[e].v}, {"w", g.edge_weights[e]}});
  }
  return {{"version", 1},
          {"feature_dim", g.node_features.cols},
          {"labelled", g.node_labels.has_value()},
          {"nodes", std::move(nodes)},
          {"edges", std::move(edges)}};
}

inline SpatialGraph graph_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw ParseError("unsupported graph version");
    SpatialGraph g;
    const auto dim = j.at("feature_dim").get<std::size_t>();
    const auto& nodes = j.at("nodes");
    const bool labelled = j.at("labelled").get<bool>();
    g.node_features = Matrix(nodes.size(), dim);
    if (labelled) g.node_labels.emplace();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& node = nodes[i];
      if (node.at("id").get<std::size_t>() != i) {
        throw ParseError("graph node " + std::to_string(i) + " out of order");
      }
      g.coords.push_back({node.at("x").get<double>(), node.at("y").get<double>()});
      const auto feats = node.at("features").get<std::vector<double>>();
      if (feats.size() != dim) {
        throw ParseError("graph node " + std::to_string(i) + " has wrong feature length");
      }
      std::copy(feats.begin(), feats.end(), g.node_features.row(i).begin());
      if (labelled) {
        const auto label = parse_phenotype(node.at("label").get<std::string>());
        if (!label) throw ParseError("graph node " + std::to_string(i) + " has unknown label");
        g.node_labels->push_back(*label);
      }
    }
    for (const auto& e : j.at("edges")) {
      Edge edge{e.at("u").get<std::uint32_t>(), e.at("v").get<std::uint32_t>()};
      if (!(edge.u < edge.v) || edge.v >= g.n_nodes()) {
        throw ParseError("graph edge (" + std::to_string(edge.u) + ", " + std::to_string(edge.v) +
                         ") invalid");
      }
      g.edges.push_back(edge);
      g.edge_weights.push_back(e.at("w").get<double>());
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed graph document: ") + e.what());
  }
}

inline std::string serialize_graph(const SpatialGraph& g) { return graph_to_json(g).dump(); }

inline SpatialGraph deserialize_graph(std::string_view bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("graph stream parse error at byte offset " + std::to_string(e.byte) + ": " +
                     e.what());
  }
  return graph_from_json(j);
}

}  // namespace tmegraph
