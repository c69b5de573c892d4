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

// Handcrafted immune-interaction network metrics for one cell-graph.
//
// Catalog "tme68-v1", 68 entries in this order:
//   [0, 42)   7 structural metrics for the whole graph, then for the induced
//             subgraph of each phenotype (CD4, CD8, CD20, FOXP3, CK)
//   [42, 48)  node-fraction ratio a/b for each immune pair a < b in the
//             order CD4, CD8, CD20, FOXP3
//   48        immune-tumour edges / immune-immune edges
//   [49, 54)  node fraction per phenotype
//   [54, 59)  mean whole-graph degree of the nodes of each phenotype
//   [59, 62)  components per node, isolated-node fraction, mean degree
//   [62, 67)  mean expression of each marker over the tile's cells
//   67        mean nucleus area
//
// Node features are expected in cell-feature order (5 markers, area,
// solidity).
//
// Undefined quantities (empty graph, zero variance, zero denominators) are
// reported as 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tmegraph/graph.hpp"

namespace tmegraph {

inline constexpr std::size_t kNumStructural = 7;
inline constexpr std::size_t kMetricDim = 68;
inline constexpr std::string_view kMetricCatalogVersion = "tme68-v1";

inline constexpr std::array<std::string_view, kNumStructural> kStructuralNames = {
    "avg_clustering", "square_clustering", "assortativity", "radius",
    "density",        "transitivity",      "closeness"};

struct StructuralMetrics {
  double avg_clustering = 0.0;
  double square_clustering = 0.0;
  double assortativity = 0.0;
  double radius = 0.0;
  double density = 0.0;
  double transitivity = 0.0;
  double closeness = 0.0;

  std::array<double, kNumStructural> as_array() const {
    return {avg_clustering, square_clustering, assortativity, radius,
            density,        transitivity,      closeness};
  }
};

struct MetricVector {
  std::array<double, kMetricDim> values{};
  std::string_view catalog_version = kMetricCatalogVersion;
};

namespace metrics_detail {

using Adj = std::vector<std::vector<std::uint32_t>>;

inline bool has_edge(const Adj& adj, std::uint32_t a, std::uint32_t b) {
  return std::binary_search(adj[a].begin(), adj[a].end(), b);
}

inline std::size_t common_count(const std::vector<std::uint32_t>& a,
                                const std::vector<std::uint32_t>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

inline std::vector<std::size_t> triangles_per_node(const Adj& adj) {
  std::vector<std::size_t> t(adj.size(), 0);
  for (std::uint32_t v = 0; v < adj.size(); ++v) {
    for (std::uint32_t u : adj[v]) {
      if (u <= v) continue;
      for (std::uint32_t w : adj[u]) {
        if (w <= u) continue;
        if (has_edge(adj, v, w)) {
          ++t[v];
          ++t[u];
          ++t[w];
        }
      }
    }
  }
  return t;
}

/// BFS distances from src; unreachable nodes get -1.
inline std::vector<std::int64_t> bfs(const Adj& adj, std::uint32_t src) {
  std::vector<std::int64_t> dist(adj.size(), -1);
  std::deque<std::uint32_t> queue{src};
  dist[src] = 0;
  while (!queue.empty()) {
    const std::uint32_t v = queue.front();
    queue.pop_front();
    for (std::uint32_t u : adj[v]) {
      if (dist[u] < 0) {
        dist[u] = dist[v] + 1;
        queue.push_back(u);
      }
    }
  }
  return dist;
}

/// Component id per node, ids assigned in order of smallest member.
inline std::vector<std::size_t> components(const Adj& adj, std::size_t* count = nullptr) {
  std::vector<std::size_t> comp(adj.size(), std::numeric_limits<std::size_t>::max());
  std::size_t next = 0;
  for (std::uint32_t s = 0; s < adj.size(); ++s) {
    if (comp[s] != std::numeric_limits<std::size_t>::max()) continue;
    std::vector<std::uint32_t> stack{s};
    comp[s] = next;
    while (!stack.empty()) {
      const std::uint32_t v = stack.back();
      stack.pop_back();
      for (std::uint32_t u : adj[v]) {
        if (comp[u] == std::numeric_limits<std::size_t>::max()) {
          comp[u] = next;
          stack.push_back(u);
        }
      }
    }
    ++next;
  }
  if (count) *count = next;
  return comp;
}

}  // namespace metrics_detail

/// Mean of local clustering coefficients; nodes of degree < 2 count as 0.
inline double average_clustering(const metrics_detail::Adj& adj) {
  if (adj.empty()) return 0.0;
  const auto tri = metrics_detail::triangles_per_node(adj);
  double sum = 0.0;
  for (std::size_t v = 0; v < adj.size(); ++v) {
    const double d = static_cast<double>(adj[v].size());
    if (d >= 2) sum += 2.0 * static_cast<double>(tri[v]) / (d * (d - 1.0));
  }
  return sum / static_cast<double>(adj.size());
}

/// Square clustering of one node: squares through v over the number of
/// potential squares, summed over neighbour pairs.
inline double square_clustering(const metrics_detail::Adj& adj, std::uint32_t v) {
  const auto& nv = adj[v];
  double squares_total = 0.0;
  double potential = 0.0;
  for (std::size_t a = 0; a < nv.size(); ++a) {
    for (std::size_t b = a + 1; b < nv.size(); ++b) {
      const std::uint32_t u = nv[a];
      const std::uint32_t w = nv[b];
      // Common neighbours of u and w other than v.
      const double squares = static_cast<double>(metrics_detail::common_count(adj[u], adj[w])) - 1.0;
      squares_total += squares;
      double degm = squares + 1.0;
      if (metrics_detail::has_edge(adj, u, w)) degm += 1.0;
      potential += (static_cast<double>(adj[u].size()) - degm) +
                   (static_cast<double>(adj[w].size()) - degm) + squares;
    }
  }
  return potential > 0.0 ? squares_total / potential : 0.0;
}

inline double average_square_clustering(const metrics_detail::Adj& adj) {
  if (adj.empty()) return 0.0;
  double sum = 0.0;
  for (std::uint32_t v = 0; v < adj.size(); ++v) sum += square_clustering(adj, v);
  return sum / static_cast<double>(adj.size());
}

/// Pearson correlation of endpoint degrees over both orientations of every
/// edge.
inline double degree_assortativity(const metrics_detail::Adj& adj) {
  double n = 0.0, sx = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::uint32_t v = 0; v < adj.size(); ++v) {
    for (std::uint32_t u : adj[v]) {
      const double dv = static_cast<double>(adj[v].size());
      const double du = static_cast<double>(adj[u].size());
      n += 1.0;
      sx += dv;
      sxx += dv * dv;
      sxy += dv * du;
    }
  }
  if (n == 0.0) return 0.0;
  const double mean = sx / n;
  const double var = sxx / n - mean * mean;
  if (var <= 1e-12 * std::max(1.0, mean * mean)) return 0.0;
  return (sxy / n - mean * mean) / var;
}

/// Radius of the largest connected component. Several largest components
/// contribute their smallest radius, which keeps the value independent of
/// node order.
inline double radius_largest_component(const metrics_detail::Adj& adj) {
  if (adj.empty()) return 0.0;
  std::size_t ncomp = 0;
  const auto comp = metrics_detail::components(adj, &ncomp);
  std::vector<std::size_t> size(ncomp, 0);
  for (std::size_t c : comp) ++size[c];
  const std::size_t largest = *std::max_element(size.begin(), size.end());
  std::int64_t radius = std::numeric_limits<std::int64_t>::max();
  for (std::uint32_t v = 0; v < adj.size(); ++v) {
    if (size[comp[v]] != largest) continue;
    const auto dist = metrics_detail::bfs(adj, v);
    radius = std::min(radius, *std::max_element(dist.begin(), dist.end()));
  }
  return static_cast<double>(radius);
}

inline double graph_density(std::size_t n, std::size_t m) {
  if (n < 2) return 0.0;
  return 2.0 * static_cast<double>(m) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

/// 3 * triangles / connected triples.
inline double transitivity(const metrics_detail::Adj& adj) {
  const auto tri = metrics_detail::triangles_per_node(adj);
  double closed = 0.0, triples = 0.0;
  for (std::size_t v = 0; v < adj.size(); ++v) {
    const double d = static_cast<double>(adj[v].size());
    closed += static_cast<double>(tri[v]);
    triples += d * (d - 1.0) / 2.0;
  }
  return triples > 0.0 ? closed / triples : 0.0;
}

/// Mean closeness centrality, component-size scaled (Wasserman-Faust):
/// ((r - 1) / s) * ((r - 1) / (n - 1)) for r reachable nodes at total
/// distance s.
inline double mean_closeness(const metrics_detail::Adj& adj) {
  const std::size_t n = adj.size();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (std::uint32_t v = 0; v < n; ++v) {
    const auto dist = metrics_detail::bfs(adj, v);
    double reach = 0.0, total = 0.0;
    for (std::int64_t d : dist) {
      if (d > 0) {
        reach += 1.0;
        total += static_cast<double>(d);
      }
    }
    if (total > 0.0) sum += (reach / total) * (reach / static_cast<double>(n - 1));
  }
  return sum / static_cast<double>(n);
}

inline StructuralMetrics structural_metrics(const SpatialGraph& g) {
  const auto adj = adjacency_lists(g.n_nodes(), g.edges);
  StructuralMetrics m;
  m.avg_clustering = average_clustering(adj);
  m.square_clustering = average_square_clustering(adj);
  m.assortativity = degree_assortativity(adj);
  m.radius = radius_largest_component(adj);
  m.density = graph_density(g.n_nodes(), g.n_edges());
  m.transitivity = transitivity(adj);
  m.closeness = mean_closeness(adj);
  return m;
}

/// Immune-tumour edges over immune-immune edges; 0 without immune-immune
/// edges.
inline double interaction_ratio(const SpatialGraph& g) {
  if (!g.node_labels) throw ValidationError("interaction_ratio: graph has no node labels");
  const auto& labels = *g.node_labels;
  double mixed = 0.0, immune = 0.0;
  for (const Edge& e : g.edges) {
    const bool a = is_immune(labels[e.u]);
    const bool b = is_immune(labels[e.v]);
    if (a && b) {
      immune += 1.0;
    } else if (a != b) {
      mixed += 1.0;
    }
  }
  return immune > 0.0 ? mixed / immune : 0.0;
}

inline const std::array<std::string, kMetricDim>& metric_names() {
  static const std::array<std::string, kMetricDim> names = [] {
    std::array<std::string, kMetricDim> out;
    std::size_t k = 0;
    const std::array<std::string, 6> scopes = {"all", "cd4", "cd8", "cd20", "foxp3", "ck"};
    for (const auto& s : scopes) {
      for (auto m : kStructuralNames) out[k++] = s + "_" + std::string(m);
    }
    for (std::size_t a = 1; a <= 4; ++a) {
      for (std::size_t b = a + 1; b <= 4; ++b) out[k++] = "ratio_" + scopes[a] + "_" + scopes[b];
    }
    out[k++] = "immune_tumour_to_immune_immune";
    for (std::size_t s = 1; s < scopes.size(); ++s) out[k++] = "frac_" + scopes[s];
    for (std::size_t s = 1; s < scopes.size(); ++s) out[k++] = "mean_degree_" + scopes[s];
    out[k++] = "components_per_node";
    out[k++] = "isolated_fraction";
    out[k++] = "mean_degree";
    for (std::size_t s = 1; s < scopes.size(); ++s) out[k++] = "mean_expr_" + scopes[s];
    out[k++] = "mean_area";
    return out;
  }();
  return names;
}

inline std::size_t metric_index(std::string_view name) {
  const auto& names = metric_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ValidationError("unknown metric '" + std::string(name) + "'");
}

/// The full 68-entry catalog for a labelled cell-graph.
inline MetricVector metric_vector(const SpatialGraph& g) {
  MetricVector out;
  const std::size_t n = g.n_nodes();
  if (n == 0) return out;
  if (!g.node_labels) throw ValidationError("metric_vector: graph has no node labels");
  if (g.node_features.cols < kNumMarkers + 1) {
    throw ValidationError("metric_vector: node features must hold the 5 markers and area");
  }
  const auto& labels = *g.node_labels;
  auto& v = out.values;
  std::size_t k = 0;

  auto put_structural = [&](const SpatialGraph& sub) {
    for (double x : structural_metrics(sub).as_array()) v[k++] = x;
  };
  put_structural(g);
  for (Phenotype p : kAllPhenotypes) {
    put_structural(induced_subgraph(g, [&](std::size_t i) { return labels[i] == p; }));
  }

  std::array<double, kNumPhenotypes> count{};
  for (Phenotype p : labels) count[static_cast<std::size_t>(p)] += 1.0;
  std::array<double, kNumPhenotypes> frac{};
  for (std::size_t t = 0; t < kNumPhenotypes; ++t) frac[t] = count[t] / static_cast<double>(n);

  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) v[k++] = frac[b] > 0.0 ? frac[a] / frac[b] : 0.0;
  }
  v[k++] = interaction_ratio(g);
  for (std::size_t t = 0; t < kNumPhenotypes; ++t) v[k++] = frac[t];

  const auto deg = degrees(g);
  std::array<double, kNumPhenotypes> deg_sum{};
  for (std::size_t i = 0; i < n; ++i) deg_sum[static_cast<std::size_t>(labels[i])] += static_cast<double>(deg[i]);
  for (std::size_t t = 0; t < kNumPhenotypes; ++t) v[k++] = count[t] > 0.0 ? deg_sum[t] / count[t] : 0.0;

  std::size_t ncomp = 0;
  metrics_detail::components(adjacency_lists(n, g.edges), &ncomp);
  const double isolated =
      static_cast<double>(std::count(deg.begin(), deg.end(), std::size_t{0}));
  v[k++] = static_cast<double>(ncomp) / static_cast<double>(n);
  v[k++] = isolated / static_cast<double>(n);
  v[k++] = 2.0 * static_cast<double>(g.n_edges()) / static_cast<double>(n);

  for (std::size_t c = 0; c <= kNumMarkers; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += g.node_features(i, c);
    v[k++] = s / static_cast<double>(n);
  }
  return out;
}

}  // namespace tmegraph
