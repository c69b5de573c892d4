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

// Cell tables, RoI labels, phenotyping and tile sampling.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tmegraph/errors.hpp"
#include "tmegraph/rng.hpp"
#include "tmegraph/text.hpp"

namespace tmegraph {

inline constexpr std::size_t kNumMarkers = 5;
inline constexpr std::size_t kNumPhenotypes = 5;
inline constexpr std::size_t kNumCellFeatures = 7;

/// Marker order is CD4, CD8, CD20, FoxP3, CK; phenotype i is the cell type
/// of marker i.
enum class Phenotype : std::uint8_t { THelper = 0, TCytotoxic, BCell, TReg, Epithelial };
enum class Region : std::uint8_t { Centre = 0, Front, Mucosa, Stroma };
enum class Stage : std::uint8_t { pT1 = 0, pT2, pT3 };

inline constexpr std::array<Phenotype, kNumPhenotypes> kAllPhenotypes = {
    Phenotype::THelper, Phenotype::TCytotoxic, Phenotype::BCell, Phenotype::TReg,
    Phenotype::Epithelial};
inline constexpr std::array<Region, 4> kAllRegions = {Region::Centre, Region::Front,
                                                      Region::Mucosa, Region::Stroma};
inline constexpr std::array<std::string_view, kNumMarkers> kMarkerNames = {"cd4", "cd8", "cd20",
                                                                           "foxp3", "ck"};
inline constexpr std::array<std::string_view, kNumCellFeatures> kCellFeatureNames = {
    "cd4", "cd8", "cd20", "foxp3", "ck", "area", "solidity"};

/// Argmax tie-break order over markers: CK > CD8 > CD4 > CD20 > FoxP3.
inline constexpr std::array<std::size_t, kNumMarkers> kMarkerPrecedence = {4, 1, 0, 2, 3};

inline constexpr bool is_immune(Phenotype p) { return p != Phenotype::Epithelial; }

inline std::string_view to_string(Phenotype p) {
  static constexpr std::array<std::string_view, kNumPhenotypes> names = {"CD4", "CD8", "CD20",
                                                                         "FOXP3", "CK"};
  return names[static_cast<std::size_t>(p)];
}

inline std::string_view to_string(Region r) {
  static constexpr std::array<std::string_view, 4> names = {"Centre", "Front", "Mucosa",
                                                            "Stroma"};
  return names[static_cast<std::size_t>(r)];
}

inline std::string_view to_string(Stage s) {
  static constexpr std::array<std::string_view, 3> names = {"pT1", "pT2", "pT3"};
  return names[static_cast<std::size_t>(s)];
}

inline std::optional<Phenotype> parse_phenotype(std::string_view s) {
  const std::string l = text::lower(text::trim(s));
  if (l == "cd4" || l == "thelper") return Phenotype::THelper;
  if (l == "cd8" || l == "tcytotoxic") return Phenotype::TCytotoxic;
  if (l == "cd20" || l == "bcell") return Phenotype::BCell;
  if (l == "foxp3" || l == "treg") return Phenotype::TReg;
  if (l == "ck" || l == "epithelial") return Phenotype::Epithelial;
  return std::nullopt;
}

inline std::optional<Region> parse_region(std::string_view s) {
  const std::string l = text::lower(text::trim(s));
  for (Region r : kAllRegions) {
    if (text::lower(to_string(r)) == l) return r;
  }
  if (l == "center") return Region::Centre;
  return std::nullopt;
}

inline std::optional<Stage> parse_stage(std::string_view s) {
  const std::string l = text::lower(text::trim(s));
  if (l == "pt1" || l == "1") return Stage::pT1;
  if (l == "pt2" || l == "2") return Stage::pT2;
  if (l == "pt3" || l == "3") return Stage::pT3;
  return std::nullopt;
}

struct CellRecord {
  std::string cell_id;
  double x = 0.0;
  double y = 0.0;
  double area = 0.0;
  double solidity = 0.0;
  std::array<double, kNumMarkers> expr{};
  std::optional<Phenotype> phenotype;

  /// The 7 node features: 5 expressions, area, solidity.
  std::array<double, kNumCellFeatures> features() const {
    return {expr[0], expr[1], expr[2], expr[3], expr[4], area, solidity};
  }
};

struct RoIRecord {
  std::string roi_id;
  std::string patient_id;
  Region region = Region::Centre;
  Stage stage = Stage::pT1;
  double width = 2048.0;
  double height = 2048.0;
  std::vector<CellRecord> cells;
};

struct TileSpec {
  int tile_id = 0;
  int origin_x = 0;
  int origin_y = 0;
  int size = 256;

  double centroid_x() const { return origin_x + size / 2.0; }
  double centroid_y() const { return origin_y + size / 2.0; }
  bool contains(double x, double y) const {
    return x >= origin_x && x < origin_x + size && y >= origin_y && y < origin_y + size;
  }
  friend bool operator==(const TileSpec&, const TileSpec&) = default;
};

/// Maps logical column names to the header names used in a file.
struct CellTableSchema {
  std::map<std::string, std::string> columns;
  char delimiter = ',';
  double roi_width = 2048.0;
  double roi_height = 2048.0;

  std::string column(const std::string& logical) const {
    auto it = columns.find(logical);
    return it == columns.end() ? logical : it->second;
  }
};

inline constexpr std::array<std::string_view, 13> kRequiredCellColumns = {
    "roi_id", "patient_id", "region", "stage", "x", "y", "area",
    "solidity", "cd4", "cd8", "cd20", "foxp3", "ck"};

namespace detail {

inline std::string lower_copy(std::string_view s) { return text::lower(text::trim(s)); }

inline void validate_cell(const CellRecord& c, const RoIRecord& roi, std::size_t line) {
  const std::string where = " (line " + std::to_string(line) + ")";
  if (!(c.x >= 0.0 && c.x < roi.width && c.y >= 0.0 && c.y < roi.height)) {
    throw ValidationError("cell coordinate (" + text::format_double(c.x) + ", " +
                          text::format_double(c.y) + ") outside RoI " + roi.roi_id + where);
  }
  if (!(c.area > 0.0)) throw ValidationError("cell area must be > 0" + where);
  if (!(c.solidity >= 0.0 && c.solidity <= 1.0)) {
    throw ValidationError("cell solidity must lie in [0,1]" + where);
  }
  for (double e : c.expr) {
    if (!(e >= 0.0) || !std::isfinite(e)) {
      throw ValidationError("marker expression must be finite and >= 0" + where);
    }
  }
}

}  // namespace detail

/// Reads a delimited cell table with a named-column header. RoIs appear in
/// order of first occurrence; rows keep file order within a RoI.
inline std::vector<RoIRecord> parse_cell_table(std::istream& in,
                                               const CellTableSchema& schema = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!text::trim(line).empty()) break;
  }
  if (text::trim(line).empty()) throw SchemaError("cell table has no header");

  const auto header = text::split(line, schema.delimiter);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[detail::lower_copy(header[i])] = i;

  auto col = [&](std::string_view logical) -> std::size_t {
    const std::string name = detail::lower_copy(schema.column(std::string(logical)));
    auto it = index.find(name);
    if (it == index.end()) throw SchemaError("cell table missing required column '" + name + "'");
    return it->second;
  };
  std::array<std::size_t, kRequiredCellColumns.size()> cols{};
  for (std::size_t i = 0; i < kRequiredCellColumns.size(); ++i) cols[i] = col(kRequiredCellColumns[i]);
  std::optional<std::size_t> cell_id_col;
  if (auto it = index.find(detail::lower_copy(schema.column("cell_id"))); it != index.end()) {
    cell_id_col = it->second;
  }

  std::vector<RoIRecord> rois;
  std::unordered_map<std::string, std::size_t> roi_index;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto fields = text::split(line, schema.delimiter);
    if (fields.size() != header.size()) {
      throw ParseError("row at line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, header has " +
                       std::to_string(header.size()));
    }
    auto number = [&](std::size_t which) {
      const std::size_t c = cols[which];
      auto v = text::parse_double(fields[c]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError("non-numeric value '" + std::string(fields[c]) + "' in column '" +
                         std::string(header[c]) + "' at line " + std::to_string(line_no));
      }
      return *v;
    };

    const std::string roi_id(fields[cols[0]]);
    const std::string patient_id(fields[cols[1]]);
    const auto region = parse_region(fields[cols[2]]);
    const auto stage = parse_stage(fields[cols[3]]);
    if (!region) {
      throw ParseError("unknown region '" + std::string(fields[cols[2]]) + "' at line " +
                       std::to_string(line_no));
    }
    if (!stage) {
      throw ParseError("unknown stage '" + std::string(fields[cols[3]]) + "' at line " +
                       std::to_string(line_no));
    }

    auto [it, inserted] = roi_index.try_emplace(roi_id, rois.size());
    if (inserted) {
      RoIRecord r;
      r.roi_id = roi_id;
      r.patient_id = patient_id;
      r.region = *region;
      r.stage = *stage;
      r.width = schema.roi_width;
      r.height = schema.roi_height;
      rois.push_back(std::move(r));
    }
    RoIRecord& roi = rois[it->second];
    if (roi.patient_id != patient_id || roi.region != *region || roi.stage != *stage) {
      throw ValidationError("RoI " + roi_id + " has inconsistent labels at line " +
                            std::to_string(line_no));
    }

    CellRecord c;
    c.cell_id = cell_id_col ? std::string(fields[*cell_id_col]) : std::to_string(roi.cells.size());
    c.x = number(4);
    c.y = number(5);
    c.area = number(6);
    c.solidity = number(7);
    for (std::size_t m = 0; m < kNumMarkers; ++m) c.expr[m] = number(8 + m);
    detail::validate_cell(c, roi, line_no);
    roi.cells.push_back(std::move(c));
  }
  return rois;
}

inline std::vector<RoIRecord> parse_cell_table(const std::string& path,
                                               const CellTableSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cell table " + path);
  return parse_cell_table(in, schema);
}

struct RoILabel {
  std::string patient_id;
  Region region = Region::Centre;
  Stage stage = Stage::pT1;
};

/// Optional separate label table: roi_id, patient_id, region, stage.
inline std::map<std::string, RoILabel> parse_roi_table(std::istream& in, char delim = ',') {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return {};
  ++line_no;
  const auto header = text::split(line, delim);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[detail::lower_copy(header[i])] = i;
  std::array<std::size_t, 4> cols{};
  const std::array<std::string_view, 4> names = {"roi_id", "patient_id", "region", "stage"};
  for (std::size_t i = 0; i < 4; ++i) {
    auto it = index.find(std::string(names[i]));
    if (it == index.end()) {
      throw SchemaError("RoI table missing required column '" + std::string(names[i]) + "'");
    }
    cols[i] = it->second;
  }
  std::map<std::string, RoILabel> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, delim);
    if (f.size() != header.size()) {
      throw ParseError("RoI table row at line " + std::to_string(line_no) + " has wrong field count");
    }
    const auto region = parse_region(f[cols[2]]);
    const auto stage = parse_stage(f[cols[3]]);
    if (!region || !stage) {
      throw ParseError("bad region/stage at line " + std::to_string(line_no));
    }
    out[std::string(f[cols[0]])] = RoILabel{std::string(f[cols[1]]), *region, *stage};
  }
  return out;
}

/// Overrides per-RoI labels from a separate label table.
inline void apply_roi_labels(std::vector<RoIRecord>& rois,
                             const std::map<std::string, RoILabel>& labels) {
  for (auto& r : rois) {
    auto it = labels.find(r.roi_id);
    if (it == labels.end()) continue;
    r.patient_id = it->second.patient_id;
    r.region = it->second.region;
    r.stage = it->second.stage;
  }
}

inline void write_cell_table(std::ostream& out, std::span<const RoIRecord> rois) {
  out << "roi_id,patient_id,region,stage,cell_id,x,y,area,solidity,cd4,cd8,cd20,foxp3,ck\n";
  for (const auto& r : rois) {
    for (const auto& c : r.cells) {
      out << r.roi_id << ',' << r.patient_id << ',' << to_string(r.region) << ','
          << to_string(r.stage) << ',' << c.cell_id << ',' << text::format_double(c.x) << ','
          << text::format_double(c.y) << ',' << text::format_double(c.area) << ','
          << text::format_double(c.solidity);
      for (double e : c.expr) out << ',' << text::format_double(e);
      out << '\n';
    }
  }
}

inline void write_roi_table(std::ostream& out, std::span<const RoIRecord> rois) {
  out << "roi_id,patient_id,region,stage\n";
  for (const auto& r : rois) {
    out << r.roi_id << ',' << r.patient_id << ',' << to_string(r.region) << ','
        << to_string(r.stage) << '\n';
  }
}

/// Percentile rank in (0, 1] of each value among all values; tied values
/// share their mean rank. A single value ranks at 1.
inline std::vector<double> percentile_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank / static_cast<double>(n);
    i = j + 1;
  }
  return ranks;
}

/// Assigns each cell the phenotype of its highest-percentile marker, ranks
/// taken over all cells passed in.
inline std::vector<CellRecord> phenotype_cells(std::span<const CellRecord> cells) {
  if (cells.empty()) throw ValidationError("phenotype_cells: no cells");
  std::array<std::vector<double>, kNumMarkers> ranks;
  std::vector<double> column(cells.size());
  for (std::size_t m = 0; m < kNumMarkers; ++m) {
    for (std::size_t i = 0; i < cells.size(); ++i) column[i] = cells[i].expr[m];
    ranks[m] = percentile_ranks(column);
  }
  std::vector<CellRecord> out(cells.begin(), cells.end());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::size_t best = kMarkerPrecedence[0];
    for (std::size_t m : kMarkerPrecedence) {
      if (ranks[m][i] > ranks[best][i]) best = m;
    }
    out[i].phenotype = static_cast<Phenotype>(best);
  }
  return out;
}

enum class PhenotypeScope { Cohort, RoI };

/// Phenotypes every cell in place, ranking per cohort or per RoI.
inline void phenotype_rois(std::vector<RoIRecord>& rois, PhenotypeScope scope = PhenotypeScope::Cohort) {
  if (scope == PhenotypeScope::RoI) {
    for (auto& r : rois) {
      if (!r.cells.empty()) r.cells = phenotype_cells(r.cells);
    }
    return;
  }
  std::vector<CellRecord> all;
  for (const auto& r : rois) all.insert(all.end(), r.cells.begin(), r.cells.end());
  if (all.empty()) return;
  const auto typed = phenotype_cells(all);
  std::size_t k = 0;
  for (auto& r : rois) {
    for (auto& c : r.cells) c.phenotype = typed[k++].phenotype;
  }
}

/// n tiles with uniform integer origins, fully inside the RoI. Tiles may
/// overlap.
inline std::vector<TileSpec> sample_tiles(const RoIRecord& roi, std::size_t n, int tile_size,
                                          std::uint64_t rng_seed) {
  if (n == 0) throw ValidationError("sample_tiles: n must be >= 1");
  if (tile_size <= 0) throw ValidationError("sample_tiles: tile size must be positive");
  const auto max_x = static_cast<std::int64_t>(std::floor(roi.width)) - tile_size;
  const auto max_y = static_cast<std::int64_t>(std::floor(roi.height)) - tile_size;
  if (max_x < 0 || max_y < 0) {
    throw ValidationError("sample_tiles: tile size " + std::to_string(tile_size) +
                          " exceeds RoI side");
  }
  Rng rng(rng_seed);
  std::vector<TileSpec> tiles(n);
  for (std::size_t i = 0; i < n; ++i) {
    tiles[i].tile_id = static_cast<int>(i);
    tiles[i].size = tile_size;
    tiles[i].origin_x = static_cast<int>(rng.uniform_int(0, max_x));
    tiles[i].origin_y = static_cast<int>(rng.uniform_int(0, max_y));
  }
  return tiles;
}

/// Indices of cells whose centroid falls in the tile's half-open rectangle.
inline std::vector<std::size_t> cells_in_tile(const RoIRecord& roi, const TileSpec& tile) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roi.cells.size(); ++i) {
    if (tile.contains(roi.cells[i].x, roi.cells[i].y)) out.push_back(i);
  }
  return out;
}

}  // namespace tmegraph
