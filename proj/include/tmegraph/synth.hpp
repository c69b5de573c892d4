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

// Synthetic multiplexed-IF cohorts with known class signals.
//
// Epithelial cells come from a Thomas-style process: nest centres uniform
// in the RoI, each epithelial cell attached to a random nest with an
// isotropic Gaussian offset. Immune cells are placed inside nests with
// probability `mixing` and otherwise in stroma at least `far_distance`
// from every nest centre (rejection sampling). A TReg joins an existing
// TReg cluster with probability `treg_cluster_rate`.
//
// Expression: each cell draws a brightness b ~ U(0.7, 1.3); its own marker
// is b * kHighExpression, the others b * kLowExpression, plus N(0, sigma)
// noise, clipped at 0. Because one brightness drives every channel, the
// percentile-rank phenotyping recovers the true type when sigma is small
// against the spread of low values.
//
// Seeds: patient stages use derive_seed(seed, {1}); RoI i (in output
// order) uses derive_seed(seed, {2, i}). RoIs are generated in parallel.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmegraph/errors.hpp"
#include "tmegraph/graph.hpp"
#include "tmegraph/ingest.hpp"
#include "tmegraph/parallel.hpp"
#include "tmegraph/rng.hpp"

namespace tmegraph {

inline constexpr double kHighExpression = 1.0;
inline constexpr double kLowExpression = 0.1;

/// Class-dependent generation knobs.
struct ClassProfile {
  double mixing = 0.5;
  double treg_cluster_rate = 0.3;
  /// Splits the combined CD4 + CD8 intensity; <= 0 keeps the listed values.
  double cd4_cd8_ratio = 0.0;
  /// Expected cells per RoI, marker order.
  std::array<double, kNumPhenotypes> intensity = {250.0, 250.0, 120.0, 80.0, 1500.0};
  /// Added to the CD20 channel of every cell.
  double cd20_shift = 0.0;

  friend bool operator==(const ClassProfile&, const ClassProfile&) = default;

  /// Intensities after applying the CD4:CD8 ratio.
  std::array<double, kNumPhenotypes> effective_intensity() const {
    auto out = intensity;
    if (cd4_cd8_ratio > 0.0) {
      const double t = intensity[0] + intensity[1];
      out[0] = t * cd4_cd8_ratio / (1.0 + cd4_cd8_ratio);
      out[1] = t - out[0];
    }
    return out;
  }
};

struct SynthConfig {
  std::size_t n_patients = 30;
  std::size_t rois_per_patient = 4;
  double roi_size = 2048.0;
  std::array<double, 3> class_priors = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  std::array<ClassProfile, 3> classes{};
  double marker_noise = 0.002;
  double nest_size = 40.0;
  double nest_sigma = 60.0;
  double infiltrate_sigma = 12.0;
  double treg_cluster_sigma = 20.0;
  double far_distance = 150.0;
  std::uint64_t seed = 7;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;

  void validate() const {
    if (n_patients == 0 || rois_per_patient == 0) {
      throw ValidationError("synth: n_patients and rois_per_patient must be >= 1");
    }
    if (!(roi_size > 0.0)) throw ValidationError("synth: roi_size must be > 0");
    double total = 0.0;
    for (double p : class_priors) {
      if (!(p >= 0.0)) throw ValidationError("synth: class priors must be >= 0");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ValidationError("synth: class priors sum to " + text::format_double(total) +
                            ", expected 1");
    }
    for (const auto& c : classes) {
      if (!(c.mixing >= 0.0 && c.mixing <= 1.0)) throw ValidationError("synth: mixing must lie in [0,1]");
      if (!(c.treg_cluster_rate >= 0.0 && c.treg_cluster_rate <= 1.0)) {
        throw ValidationError("synth: treg_cluster_rate must lie in [0,1]");
      }
      if (!(c.cd4_cd8_ratio >= 0.0) || !(c.cd20_shift >= 0.0)) {
        throw ValidationError("synth: rates must be >= 0");
      }
      double cells = 0.0;
      for (double l : c.intensity) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw ValidationError("synth: intensities must be >= 0");
        cells += l;
      }
      if (cells <= 0.0) throw ValidationError("synth: infeasible config, a class generates zero cells");
    }
    if (!(marker_noise >= 0.0) || !(nest_size > 0.0) || !(nest_sigma > 0.0) ||
        !(infiltrate_sigma > 0.0) || !(treg_cluster_sigma > 0.0) || !(far_distance >= 0.0)) {
      throw ValidationError("synth: spatial and noise parameters must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const ClassProfile& c) {
  j = {{"mixing", c.mixing},
       {"treg_cluster_rate", c.treg_cluster_rate},
       {"cd4_cd8_ratio", c.cd4_cd8_ratio},
       {"intensity", c.intensity},
       {"cd20_shift", c.cd20_shift}};
}

inline void from_json(const nlohmann::json& j, ClassProfile& c) {
  c.mixing = j.value("mixing", c.mixing);
  c.treg_cluster_rate = j.value("treg_cluster_rate", c.treg_cluster_rate);
  c.cd4_cd8_ratio = j.value("cd4_cd8_ratio", c.cd4_cd8_ratio);
  if (j.contains("intensity")) c.intensity = j.at("intensity").get<std::array<double, kNumPhenotypes>>();
  c.cd20_shift = j.value("cd20_shift", c.cd20_shift);
}

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_patients", c.n_patients},
       {"rois_per_patient", c.rois_per_patient},
       {"roi_size", c.roi_size},
       {"class_priors", c.class_priors},
       {"classes", c.classes},
       {"marker_noise", c.marker_noise},
       {"nest_size", c.nest_size},
       {"nest_sigma", c.nest_sigma},
       {"infiltrate_sigma", c.infiltrate_sigma},
       {"treg_cluster_sigma", c.treg_cluster_sigma},
       {"far_distance", c.far_distance},
       {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.n_patients = j.value("n_patients", c.n_patients);
  c.rois_per_patient = j.value("rois_per_patient", c.rois_per_patient);
  c.roi_size = j.value("roi_size", c.roi_size);
  if (j.contains("class_priors")) c.class_priors = j.at("class_priors").get<std::array<double, 3>>();
  if (j.contains("classes")) c.classes = j.at("classes").get<std::array<ClassProfile, 3>>();
  c.marker_noise = j.value("marker_noise", c.marker_noise);
  c.nest_size = j.value("nest_size", c.nest_size);
  c.nest_sigma = j.value("nest_sigma", c.nest_sigma);
  c.infiltrate_sigma = j.value("infiltrate_sigma", c.infiltrate_sigma);
  c.treg_cluster_sigma = j.value("treg_cluster_sigma", c.treg_cluster_sigma);
  c.far_distance = j.value("far_distance", c.far_distance);
  c.seed = j.value("seed", c.seed);
}

/// Planted parameters for one RoI.
struct RoITruth {
  std::string roi_id;
  std::string patient_id;
  Stage stage = Stage::pT1;
  Region region = Region::Centre;
  std::uint64_t seed = 0;
  ClassProfile profile;
  std::array<std::size_t, kNumPhenotypes> counts{};
};

struct SynthCohort {
  std::vector<RoIRecord> rois;  // cells carry their true phenotype
  std::vector<RoITruth> truth;
};

inline nlohmann::json truth_to_json(const SynthCohort& cohort, const SynthConfig& cfg) {
  nlohmann::json rois = nlohmann::json::array();
  for (const auto& t : cohort.truth) {
    nlohmann::json counts;
    for (std::size_t p = 0; p < kNumPhenotypes; ++p) counts[std::string(kMarkerNames[p])] = t.counts[p];
    rois.push_back({{"roi_id", t.roi_id},
                    {"patient_id", t.patient_id},
                    {"stage", std::string(to_string(t.stage))},
                    {"region", std::string(to_string(t.region))},
                    {"seed", t.seed},
                    {"profile", t.profile},
                    {"cell_counts", counts}});
  }
  return {{"config", cfg}, {"rois", rois}};
}

namespace synth_detail {

inline double clamp_coord(double v, double size) {
  return std::clamp(v, 0.0, std::nextafter(size, 0.0));
}

/// anchor + N(0, sd) per axis, redrawn while outside the RoI.
inline Point jitter(Point anchor, double sd, double size, Rng& rng) {
  for (int tries = 0; tries < 32; ++tries) {
    const Point p{anchor.x + rng.normal(0.0, sd), anchor.y + rng.normal(0.0, sd)};
    if (p.x >= 0.0 && p.x < size && p.y >= 0.0 && p.y < size) return p;
  }
  return {clamp_coord(anchor.x, size), clamp_coord(anchor.y, size)};
}

inline Point far_point(std::span<const Point> nests, double min_dist, double size, Rng& rng) {
  Point p{};
  for (int tries = 0; tries < 64; ++tries) {
    p = {rng.uniform(0.0, size), rng.uniform(0.0, size)};
    bool ok = true;
    for (const Point& c : nests) {
      if (std::hypot(p.x - c.x, p.y - c.y) < min_dist) {
        ok = false;
        break;
      }
    }
    if (ok) break;
  }
  return {clamp_coord(p.x, size), clamp_coord(p.y, size)};
}

inline CellRecord make_cell(Phenotype type, Point at, const SynthConfig& cfg,
                            const ClassProfile& profile, Rng& rng) {
  CellRecord c;
  c.x = at.x;
  c.y = at.y;
  c.phenotype = type;
  const double brightness = rng.uniform(0.7, 1.3);
  for (std::size_t m = 0; m < kNumMarkers; ++m) {
    const double level = m == static_cast<std::size_t>(type) ? kHighExpression : kLowExpression;
    double v = level * brightness + rng.normal(0.0, cfg.marker_noise);
    if (m == static_cast<std::size_t>(Phenotype::BCell)) v += profile.cd20_shift;
    c.expr[m] = std::max(0.0, v);
  }
  c.area = type == Phenotype::Epithelial ? rng.uniform(40.0, 90.0) : rng.uniform(15.0, 40.0);
  c.solidity = rng.uniform(0.8, 1.0);
  return c;
}

inline std::vector<CellRecord> generate_cells(const SynthConfig& cfg, const ClassProfile& profile,
                                              std::uint64_t seed,
                                              std::array<std::size_t, kNumPhenotypes>& counts) {
  Rng rng(seed);
  const double size = cfg.roi_size;
  const auto lambda = profile.effective_intensity();
  for (std::size_t t = 0; t < kNumPhenotypes; ++t) {
    counts[t] = static_cast<std::size_t>(rng.poisson(lambda[t]));
  }

  std::vector<CellRecord> cells;
  const std::size_t n_epi = counts[static_cast<std::size_t>(Phenotype::Epithelial)];
  std::vector<Point> nests;
  if (n_epi > 0) {
    const auto n_nests = std::max<std::int64_t>(1, rng.poisson(static_cast<double>(n_epi) / cfg.nest_size));
    for (std::int64_t i = 0; i < n_nests; ++i) nests.push_back({rng.uniform(0.0, size), rng.uniform(0.0, size)});
  }
  std::vector<Point> epithelial;
  for (std::size_t i = 0; i < n_epi; ++i) {
    const Point at = jitter(nests[rng.below(nests.size())], cfg.nest_sigma, size, rng);
    epithelial.push_back(at);
    cells.push_back(make_cell(Phenotype::Epithelial, at, cfg, profile, rng));
  }

  std::vector<Point> tregs;
  for (Phenotype type : {Phenotype::THelper, Phenotype::TCytotoxic, Phenotype::BCell, Phenotype::TReg}) {
    for (std::size_t i = 0; i < counts[static_cast<std::size_t>(type)]; ++i) {
      Point at;
      if (type == Phenotype::TReg && !tregs.empty() && rng.bernoulli(profile.treg_cluster_rate)) {
        at = jitter(tregs[rng.below(tregs.size())], cfg.treg_cluster_sigma, size, rng);
      } else if (!epithelial.empty() && rng.bernoulli(profile.mixing)) {
        at = jitter(epithelial[rng.below(epithelial.size())], cfg.infiltrate_sigma, size, rng);
      } else {
        at = far_point(nests, cfg.far_distance, size, rng);
      }
      if (type == Phenotype::TReg) tregs.push_back(at);
      cells.push_back(make_cell(type, at, cfg, profile, rng));
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i].cell_id = "c" + std::to_string(i);
  return cells;
}

}  // namespace synth_detail

/// Patients get a stage from the priors; their RoIs cycle through the
/// four regions.
inline SynthCohort generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  Rng stage_rng(derive_seed(cfg.seed, {1}));
  std::vector<Stage> stages(cfg.n_patients);
  for (auto& s : stages) {
    const double u = stage_rng.uniform();
    double acc = 0.0;
    std::size_t c = 0;
    for (; c + 1 < cfg.class_priors.size(); ++c) {
      acc += cfg.class_priors[c];
      if (u < acc) break;
    }
    s = static_cast<Stage>(c);
  }

  const std::size_t n_rois = cfg.n_patients * cfg.rois_per_patient;
  SynthCohort out;
  out.rois.resize(n_rois);
  out.truth.resize(n_rois);
  parallel_for(n_rois, [&](std::size_t i) {
    const std::size_t patient = i / cfg.rois_per_patient;
    const std::size_t local = i % cfg.rois_per_patient;
    char pid[32];
    std::snprintf(pid, sizeof pid, "P%03zu", patient + 1);
    RoIRecord& r = out.rois[i];
    r.patient_id = pid;
    r.roi_id = r.patient_id + "_R" + std::to_string(local + 1);
    r.region = kAllRegions[local % kAllRegions.size()];
    r.stage = stages[patient];
    r.width = cfg.roi_size;
    r.height = cfg.roi_size;
    RoITruth& t = out.truth[i];
    t.roi_id = r.roi_id;
    t.patient_id = r.patient_id;
    t.stage = r.stage;
    t.region = r.region;
    t.seed = derive_seed(cfg.seed, {2, i});
    t.profile = cfg.classes[static_cast<std::size_t>(r.stage)];
    r.cells = synth_detail::generate_cells(cfg, t.profile, t.seed, t.counts);
  });
  return out;
}

enum class PlantedKind { TopologyOnly, FeatureOnly };

/// Copies cfg.classes[0] to every class, then varies one knob by class:
/// mixing in {0.1, 0.5, 0.9} for TopologyOnly (feature marginals stay
/// identical), cd20_shift in {0, s, 2s} with s = `feature_shift` for
/// FeatureOnly. A FeatureOnly cohort should be phenotyped per RoI, since a
/// cohort-wide rank would turn the shifted CD20 channel into B-cells.
inline SynthConfig planted_signal_config(PlantedKind kind, SynthConfig cfg, double feature_shift = 0.5) {
  const ClassProfile base = cfg.classes[0];
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    cfg.classes[c] = base;
    if (kind == PlantedKind::TopologyOnly) {
      cfg.classes[c].mixing = 0.1 + 0.4 * static_cast<double>(c);
      cfg.classes[c].cd20_shift = 0.0;
    } else {
      cfg.classes[c].cd20_shift = feature_shift * static_cast<double>(c);
    }
  }
  return cfg;
}

inline SynthCohort planted_signal_cohort(PlantedKind kind, const SynthConfig& cfg,
                                         double feature_shift = 0.5) {
  return generate_cohort(planted_signal_config(kind, cfg, feature_shift));
}

inline std::optional<PlantedKind> parse_planted_kind(std::string_view s) {
  if (s == "topology_only") return PlantedKind::TopologyOnly;
  if (s == "feature_only") return PlantedKind::FeatureOnly;
  return std::nullopt;
}

}  // namespace tmegraph
