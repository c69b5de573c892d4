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

// Two-layer graph samples: per-tile cell-graphs with their metric vectors,
// and the RoI tile-graph over tile centroids.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmegraph/config.hpp"
#include "tmegraph/graph.hpp"
#include "tmegraph/ingest.hpp"
#include "tmegraph/metrics.hpp"
#include "tmegraph/parallel.hpp"
#include "tmegraph/rng.hpp"

namespace tmegraph {

/// One RoI as a tile-graph. tile_graph node features are the raw 68-entry
/// metric vectors; the 16-entry embedding is produced by the model.
struct RoISample {
  std::string roi_id;
  std::string patient_id;
  Region region = Region::Centre;
  Stage stage = Stage::pT1;
  std::vector<TileSpec> tiles;
  std::vector<SpatialGraph> cell_graphs;
  SpatialGraph tile_graph;
  double tile_k = 200.0;
  std::size_t n_cells = 0;
  std::array<double, kNumCellFeatures> mean_cell_features{};

  std::size_t n_tiles() const { return tiles.size(); }

  friend bool operator==(const RoISample&, const RoISample&) = default;
};

/// Seed stream for tile sampling, keyed by RoI id rather than position.
inline std::uint64_t tile_seed(std::uint64_t root, std::string_view roi_id) {
  return derive_seed(root, {3, fnv1a(roi_id)});
}

inline std::array<double, kNumCellFeatures> mean_cell_features(const RoIRecord& roi) {
  std::array<double, kNumCellFeatures> out{};
  if (roi.cells.empty()) return out;
  for (const auto& c : roi.cells) {
    const auto f = c.features();
    for (std::size_t k = 0; k < kNumCellFeatures; ++k) out[k] += f[k];
  }
  for (double& v : out) v /= static_cast<double>(roi.cells.size());
  return out;
}

/// Labelled cell-graph for the cells inside one tile (RoI coordinates).
inline SpatialGraph tile_cell_graph(const RoIRecord& roi, const TileSpec& tile, double cell_k) {
  const auto idx = cells_in_tile(roi, tile);
  std::vector<Point> pts;
  Matrix feats(idx.size(), kNumCellFeatures);
  std::vector<Phenotype> labels;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const CellRecord& c = roi.cells[idx[r]];
    if (!c.phenotype) throw ValidationError("RoI " + roi.roi_id + ": cells must be phenotyped before graph building");
    pts.push_back({c.x, c.y});
    const auto f = c.features();
    std::copy(f.begin(), f.end(), feats.row(r).begin());
    labels.push_back(*c.phenotype);
  }
  SpatialGraph g = build_graph(std::move(pts), std::move(feats), cell_k);
  g.node_labels = std::move(labels);
  return g;
}

/// Rebuilds tile-graph edges over the current tile centroids at threshold k.
inline void set_tile_threshold(RoISample& s, double k) {
  std::vector<Point> centroids;
  for (const auto& t : s.tiles) centroids.push_back({t.centroid_x(), t.centroid_y()});
  s.tile_graph.coords = centroids;
  s.tile_graph.edges = threshold_edges(centroids, k);
  s.tile_graph.edge_weights.assign(s.tile_graph.edges.size(), 1.0);
  s.tile_k = k;
}

/// Samples tiles, builds each cell-graph and its metric vector, and the
/// tile-graph at the default threshold.
inline RoISample build_roi_sample(const RoIRecord& roi, const HierModelConfig& cfg, std::uint64_t root_seed) {
  RoISample s;
  s.roi_id = roi.roi_id;
  s.patient_id = roi.patient_id;
  s.region = roi.region;
  s.stage = roi.stage;
  s.n_cells = roi.cells.size();
  s.mean_cell_features = mean_cell_features(roi);
  s.tiles = sample_tiles(roi, cfg.tiles_per_roi, cfg.tile_size, tile_seed(root_seed, roi.roi_id));
  s.tile_graph.node_features = Matrix(s.tiles.size(), kMetricDim);
  for (std::size_t t = 0; t < s.tiles.size(); ++t) {
    s.cell_graphs.push_back(tile_cell_graph(roi, s.tiles[t], cfg.cell_k));
    const auto mv = metric_vector(s.cell_graphs.back());
    std::copy(mv.values.begin(), mv.values.end(), s.tile_graph.node_features.row(t).begin());
  }
  set_tile_threshold(s, cfg.tile_k_default);
  return s;
}

/// Phenotypes (per cfg scope) and builds every RoI, in parallel.
inline std::vector<RoISample> build_dataset(std::vector<RoIRecord> rois, const HierModelConfig& cfg,
                                            std::uint64_t root_seed) {
  cfg.validate();
  phenotype_rois(rois, cfg.phenotype_scope);
  std::vector<RoISample> out(rois.size());
  parallel_for(rois.size(), [&](std::size_t i) { out[i] = build_roi_sample(rois[i], cfg, root_seed); });
  return out;
}

/// Copy keeping only the listed tiles (in the given order).
inline RoISample select_tiles(const RoISample& s, std::span<const std::size_t> keep, double k) {
  RoISample out;
  out.roi_id = s.roi_id;
  out.patient_id = s.patient_id;
  out.region = s.region;
  out.stage = s.stage;
  out.n_cells = s.n_cells;
  out.mean_cell_features = s.mean_cell_features;
  out.tile_graph.node_features = Matrix(keep.size(), s.tile_graph.node_features.cols);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.tiles.push_back(s.tiles[keep[r]]);
    out.cell_graphs.push_back(s.cell_graphs[keep[r]]);
    const auto src = s.tile_graph.node_features.row(keep[r]);
    std::copy(src.begin(), src.end(), out.tile_graph.node_features.row(r).begin());
  }
  set_tile_threshold(out, k);
  return out;
}

/// Training augmentation: a uniform subset of round(fraction * n) tiles and
/// a threshold drawn uniformly from cfg.k_choices. Cell-graphs are kept.
inline RoISample augment(const RoISample& s, const HierModelConfig& cfg, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  const std::size_t n = s.n_tiles();
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(cfg.subsample_fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(std::min(m, n));
  std::sort(idx.begin(), idx.end());
  const double k = cfg.k_choices[rng.below(cfg.k_choices.size())];
  return select_tiles(s, idx, k);
}

/// Evaluation graph: every tile, default threshold.
inline RoISample make_test_graph(const RoISample& s, const HierModelConfig& cfg) {
  RoISample out = s;
  set_tile_threshold(out, cfg.tile_k_default);
  return out;
}

/// Names of the 84 tile features: the metric catalog, then embed_0..15.
inline std::vector<std::string> tile_feature_names(std::size_t embed_dim) {
  const auto& m = metric_names();
  std::vector<std::string> out(m.begin(), m.end());
  for (std::size_t i = 0; i < embed_dim; ++i) out.push_back("embed_" + std::to_string(i));
  return out;
}

inline nlohmann::json sample_to_json(const RoISample& s) {
  nlohmann::json tiles = nlohmann::json::array();
  for (const auto& t : s.tiles) {
    tiles.push_back({{"tile_id", t.tile_id}, {"origin_x", t.origin_x}, {"origin_y", t.origin_y}, {"size", t.size}});
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& g : s.cell_graphs) cells.push_back(graph_to_json(g));
  return {{"format", "tmegraph-roi"},
          {"version", 1},
          {"catalog", std::string(kMetricCatalogVersion)},
          {"roi_id", s.roi_id},
          {"patient_id", s.patient_id},
          {"region", std::string(to_string(s.region))},
          {"stage", std::string(to_string(s.stage))},
          {"tile_k", s.tile_k},
          {"n_cells", s.n_cells},
          {"mean_cell_features", s.mean_cell_features},
          {"tiles", std::move(tiles)},
          {"tile_graph", graph_to_json(s.tile_graph)},
          {"cell_graphs", std::move(cells)}};
}

inline RoISample sample_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "tmegraph-roi" || j.at("version") != 1) throw ParseError("not a tmegraph RoI bundle");
    if (j.at("catalog").get<std::string>() != kMetricCatalogVersion) {
      throw ValidationError("RoI bundle uses metric catalog " + j.at("catalog").get<std::string>());
    }
    RoISample s;
    s.roi_id = j.at("roi_id").get<std::string>();
    s.patient_id = j.at("patient_id").get<std::string>();
    const auto region = parse_region(j.at("region").get<std::string>());
    const auto stage = parse_stage(j.at("stage").get<std::string>());
    if (!region || !stage) throw ParseError("RoI bundle " + s.roi_id + " has bad region/stage");
    s.region = *region;
    s.stage = *stage;
    s.tile_k = j.at("tile_k").get<double>();
    s.n_cells = j.at("n_cells").get<std::size_t>();
    s.mean_cell_features = j.at("mean_cell_features").get<std::array<double, kNumCellFeatures>>();
    for (const auto& t : j.at("tiles")) {
      s.tiles.push_back({t.at("tile_id").get<int>(), t.at("origin_x").get<int>(), t.at("origin_y").get<int>(),
                         t.at("size").get<int>()});
    }
    s.tile_graph = graph_from_json(j.at("tile_graph"));
    for (const auto& g : j.at("cell_graphs")) s.cell_graphs.push_back(graph_from_json(g));
    if (s.cell_graphs.size() != s.tiles.size() || s.tile_graph.n_nodes() != s.tiles.size() ||
        s.tile_graph.feature_dim() != kMetricDim) {
      throw ParseError("RoI bundle " + s.roi_id + " is inconsistent");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed RoI bundle: ") + e.what());
  }
}

}  // namespace tmegraph
