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

// Small synthetic datasets and a quick training config shared by the
// model-side tests.

#include <algorithm>
#include <vector>

#include "tmegraph/dataset.hpp"
#include "tmegraph/synth.hpp"

namespace fixture {

inline tmegraph::HierModelConfig quick_config() {
  tmegraph::HierModelConfig cfg;
  cfg.lr = 1e-3;
  cfg.encoder_mode = tmegraph::EncoderMode::Frozen;
  cfg.max_epochs = 5;
  cfg.augment_copies = 1;
  return cfg;
}

inline std::vector<tmegraph::RoIRecord> cohort(std::size_t patients, std::uint64_t seed,
                                               std::size_t rois_per_patient = 1) {
  tmegraph::SynthConfig sc;
  sc.n_patients = patients;
  sc.rois_per_patient = rois_per_patient;
  sc.seed = seed;
  return tmegraph::planted_signal_cohort(tmegraph::PlantedKind::TopologyOnly, sc).rois;
}

inline std::vector<tmegraph::RoISample> dataset(std::size_t patients, std::uint64_t seed,
                                                const tmegraph::HierModelConfig& cfg = quick_config(),
                                                std::size_t rois_per_patient = 1) {
  return tmegraph::build_dataset(cohort(patients, seed, rois_per_patient), cfg, seed);
}

/// Cells only in the top-left 300 px, so most sampled tiles are empty.
inline tmegraph::RoIRecord corner_roi() {
  auto roi = cohort(1, 3).front();
  std::erase_if(roi.cells, [](const tmegraph::CellRecord& c) { return c.x >= 300.0 || c.y >= 300.0; });
  return roi;
}

}  // namespace fixture
