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

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tmegraph/autodiff.hpp"
#include "tmegraph/errors.hpp"
#include "tmegraph/ingest.hpp"
#include "tmegraph/metrics.hpp"

namespace tmegraph {

enum class ModelKind { Gcn, MilAttention, MilMean, Mlp };
enum class EncoderMode { Joint, Frozen };

/// Model, dataset and training settings. "32 hidden layers" in the source
/// description is read as 32 hidden units per layer.
struct HierModelConfig {
  ModelKind kind = ModelKind::Gcn;
  std::size_t cell_mp_steps = 3;
  std::size_t cell_embed_dim = 16;
  std::size_t tile_layers = 3;
  std::size_t hidden_dim = 32;
  ad::Readout readout_mode = ad::Readout::Max;
  double dropout = 0.5;
  double lr = 1e-5;
  double weight_decay = 1e-5;
  std::size_t batch_size = 64;
  std::size_t n_classes = 3;
  /// Stage index -> class index; lets pT stages be merged.
  std::array<std::size_t, 3> class_map = {0, 1, 2};
  double cell_k = 30.0;
  double tile_k_default = 200.0;
  std::size_t tiles_per_roi = 200;
  int tile_size = 256;
  EncoderMode encoder_mode = EncoderMode::Joint;
  PhenotypeScope phenotype_scope = PhenotypeScope::Cohort;

  std::size_t augment_copies = 5;
  double subsample_fraction = 0.8;
  std::vector<double> k_choices = {150.0, 175.0, 200.0, 225.0, 250.0};
  std::size_t patience = 20;
  std::size_t max_epochs = 500;
  std::size_t n_splits = 3;
  double test_fraction = 0.3;
  double pseudo_val_fraction = 0.1;

  friend bool operator==(const HierModelConfig&, const HierModelConfig&) = default;

  std::size_t tile_feature_dim() const { return kMetricDim + cell_embed_dim; }

  std::size_t class_of(Stage s) const { return class_map[static_cast<std::size_t>(s)]; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("model config: " + m); };
    if (cell_mp_steps == 0 || cell_embed_dim == 0 || tile_layers == 0 || hidden_dim == 0) {
      fail("layer counts and widths must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(lr > 0.0) || !(weight_decay >= 0.0)) fail("lr must be > 0 and weight_decay >= 0");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (n_classes < 2) fail("n_classes must be >= 2");
    for (std::size_t c : class_map) {
      if (c >= n_classes) fail("class_map entry out of range");
    }
    if (!(cell_k > 0.0) || !(tile_k_default > 0.0)) fail("distance thresholds must be > 0");
    if (tiles_per_roi == 0 || tile_size <= 0) fail("tiles_per_roi and tile_size must be >= 1");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) fail("subsample_fraction must lie in (0, 1]");
    if (k_choices.empty()) fail("k_choices must not be empty");
    for (double k : k_choices) {
      if (!(k > 0.0)) fail("k_choices must be > 0");
    }
    if (max_epochs == 0 || n_splits == 0) fail("max_epochs and n_splits must be >= 1");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("test_fraction must lie in (0, 1)");
    if (!(pseudo_val_fraction >= 0.0 && pseudo_val_fraction < 1.0)) fail("pseudo_val_fraction must lie in [0, 1)");
  }
};

inline std::string model_name(const HierModelConfig& c) {
  switch (c.kind) {
    case ModelKind::Gcn: return "gcn-" + std::string(ad::to_string(c.readout_mode));
    case ModelKind::MilAttention: return "mil-att";
    case ModelKind::MilMean: return "mil-mean";
    case ModelKind::Mlp: return "mlp";
  }
  return "gcn-max";
}

/// Sets kind (and readout for GCNs) from gcn-mean|gcn-add|gcn-max|mil-att|mil-mean|mlp.
inline void set_model_name(HierModelConfig& c, std::string_view name) {
  if (name == "gcn-mean") {
    c.kind = ModelKind::Gcn;
    c.readout_mode = ad::Readout::Mean;
  } else if (name == "gcn-add") {
    c.kind = ModelKind::Gcn;
    c.readout_mode = ad::Readout::Add;
  } else if (name == "gcn-max") {
    c.kind = ModelKind::Gcn;
    c.readout_mode = ad::Readout::Max;
  } else if (name == "mil-att") {
    c.kind = ModelKind::MilAttention;
  } else if (name == "mil-mean") {
    c.kind = ModelKind::MilMean;
  } else if (name == "mlp") {
    c.kind = ModelKind::Mlp;
  } else {
    throw ValidationError("unknown model '" + std::string(name) +
                          "' (expected gcn-mean|gcn-add|gcn-max|mil-att|mil-mean|mlp)");
  }
}

inline void to_json(nlohmann::json& j, const HierModelConfig& c) {
  j = {{"model", model_name(c)},
       {"cell_mp_steps", c.cell_mp_steps},
       {"cell_embed_dim", c.cell_embed_dim},
       {"tile_layers", c.tile_layers},
       {"hidden_dim", c.hidden_dim},
       {"readout_mode", std::string(ad::to_string(c.readout_mode))},
       {"dropout", c.dropout},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"n_classes", c.n_classes},
       {"class_map", c.class_map},
       {"cell_k", c.cell_k},
       {"tile_k_default", c.tile_k_default},
       {"tiles_per_roi", c.tiles_per_roi},
       {"tile_size", c.tile_size},
       {"encoder_mode", c.encoder_mode == EncoderMode::Joint ? "joint" : "frozen"},
       {"phenotype_scope", c.phenotype_scope == PhenotypeScope::Cohort ? "cohort" : "roi"},
       {"augment_copies", c.augment_copies},
       {"subsample_fraction", c.subsample_fraction},
       {"k_choices", c.k_choices},
       {"patience", c.patience},
       {"max_epochs", c.max_epochs},
       {"n_splits", c.n_splits},
       {"test_fraction", c.test_fraction},
       {"pseudo_val_fraction", c.pseudo_val_fraction}};
}

/// Missing keys keep their defaults. "model" is applied before
/// "readout_mode", so an explicit readout overrides the name's.
inline void from_json(const nlohmann::json& j, HierModelConfig& c) {
  try {
    if (j.contains("model")) set_model_name(c, j.at("model").get<std::string>());
    if (j.contains("readout_mode")) {
      const auto r = j.at("readout_mode").get<std::string>();
      if (r == "mean") c.readout_mode = ad::Readout::Mean;
      else if (r == "add") c.readout_mode = ad::Readout::Add;
      else if (r == "max") c.readout_mode = ad::Readout::Max;
      else throw ValidationError("unknown readout_mode '" + r + "'");
    }
    if (j.contains("encoder_mode")) {
      const auto m = j.at("encoder_mode").get<std::string>();
      if (m == "joint") c.encoder_mode = EncoderMode::Joint;
      else if (m == "frozen") c.encoder_mode = EncoderMode::Frozen;
      else throw ValidationError("unknown encoder_mode '" + m + "'");
    }
    if (j.contains("phenotype_scope")) {
      const auto s = j.at("phenotype_scope").get<std::string>();
      if (s == "cohort") c.phenotype_scope = PhenotypeScope::Cohort;
      else if (s == "roi") c.phenotype_scope = PhenotypeScope::RoI;
      else throw ValidationError("unknown phenotype_scope '" + s + "'");
    }
    c.cell_mp_steps = j.value("cell_mp_steps", c.cell_mp_steps);
    c.cell_embed_dim = j.value("cell_embed_dim", c.cell_embed_dim);
    c.tile_layers = j.value("tile_layers", c.tile_layers);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.dropout = j.value("dropout", c.dropout);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.n_classes = j.value("n_classes", c.n_classes);
    if (j.contains("class_map")) c.class_map = j.at("class_map").get<std::array<std::size_t, 3>>();
    c.cell_k = j.value("cell_k", c.cell_k);
    c.tile_k_default = j.value("tile_k_default", c.tile_k_default);
    c.tiles_per_roi = j.value("tiles_per_roi", c.tiles_per_roi);
    c.tile_size = j.value("tile_size", c.tile_size);
    c.augment_copies = j.value("augment_copies", c.augment_copies);
    c.subsample_fraction = j.value("subsample_fraction", c.subsample_fraction);
    if (j.contains("k_choices")) c.k_choices = j.at("k_choices").get<std::vector<double>>();
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.n_splits = j.value("n_splits", c.n_splits);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.pseudo_val_fraction = j.value("pseudo_val_fraction", c.pseudo_val_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace tmegraph
