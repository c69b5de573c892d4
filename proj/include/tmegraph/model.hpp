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

// Hierarchical classifier and baselines.
//
//   cell encoder: 3 x (GraphConv + ReLU) on each tile's cell-graph, mean
//                 readout, linear to 16; empty tiles embed to zero
//   tile model:   3 x (GraphConv + ReLU) on the tile-graph over the
//                 84-entry tile features, readout, dropout, linear
//   mil:          per-tile linear + ReLU, attention or mean pooling
//   mlp:          RoI mean cell features -> 32 -> 32 -> classes

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmegraph/autodiff.hpp"
#include "tmegraph/config.hpp"
#include "tmegraph/dataset.hpp"
#include "tmegraph/nn.hpp"

namespace tmegraph {

using ad::Tensor;

/// Column-wise z-score fitted on training data. Constant columns keep a
/// unit scale so they map to zero.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  bool fitted() const { return !mean.empty(); }

  static Normalizer fit(std::span<const Matrix* const> blocks, std::size_t cols) {
    Normalizer n;
    n.mean.assign(cols, 0.0);
    n.scale.assign(cols, 1.0);
    double count = 0.0;
    for (const Matrix* m : blocks) {
      for (std::size_t r = 0; r < m->rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) n.mean[c] += (*m)(r, c);
      }
      count += static_cast<double>(m->rows);
    }
    if (count == 0.0) return n;
    for (double& v : n.mean) v /= count;
    std::vector<double> var(cols, 0.0);
    for (const Matrix* m : blocks) {
      for (std::size_t r = 0; r < m->rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = (*m)(r, c) - n.mean[c];
          var[c] += d * d;
        }
      }
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const double sd = std::sqrt(var[c] / count);
      n.scale[c] = sd > 1e-12 ? sd : 1.0;
    }
    return n;
  }

  Matrix apply(const Matrix& m) const {
    if (!fitted() || m.rows == 0) return m;
    if (m.cols != mean.size()) throw ComputeError("normalizer: column count mismatch");
    Matrix out = m;
    for (std::size_t r = 0; r < m.rows; ++r) {
      for (std::size_t c = 0; c < m.cols; ++c) out(r, c) = (m(r, c) - mean[c]) / scale[c];
    }
    return out;
  }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

inline nlohmann::json normalizer_to_json(const Normalizer& n) { return {{"mean", n.mean}, {"scale", n.scale}}; }

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.scale = j.at("scale").get<std::vector<double>>();
  if (n.mean.size() != n.scale.size()) throw ValidationError("normalizer: mean/scale length mismatch");
  return n;
}

/// A sample in model-ready form: normalised inputs, cell-graphs of all
/// tiles stacked into one block-diagonal graph.
struct PreparedSample {
  std::string roi_id;
  Region region = Region::Centre;
  std::size_t label = 0;
  std::vector<int> tile_ids;
  Matrix cell_x;
  std::vector<Edge> cell_edges;
  std::vector<std::size_t> tile_offsets;  // n_tiles + 1 entries into cell_x rows
  Matrix nonempty;                        // n_tiles x 1, 1 where the tile has cells
  Matrix tile_metrics;                    // n_tiles x 68, normalised
  std::vector<Edge> tile_edges;
  Matrix roi_x;                           // 1 x 7, normalised mean cell features
  std::optional<Matrix> frozen_embedding;

  std::size_t n_tiles() const { return tile_ids.size(); }
};

class HierModel {
 public:
  HierModel() = default;

  HierModel(const HierModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    std::size_t in = kNumCellFeatures;
    for (std::size_t i = 0; i < cfg_.cell_mp_steps; ++i) {
      encoder_.emplace_back(in, cfg_.cell_embed_dim, rng);
      in = cfg_.cell_embed_dim;
    }
    encoder_out_ = nn::Linear(cfg_.cell_embed_dim, cfg_.cell_embed_dim, rng);
    const std::size_t d = cfg_.tile_feature_dim();
    const std::size_t h = cfg_.hidden_dim;
    switch (cfg_.kind) {
      case ModelKind::Gcn:
        in = d;
        for (std::size_t i = 0; i < cfg_.tile_layers; ++i) {
          tile_.emplace_back(in, h, rng);
          in = h;
        }
        break;
      case ModelKind::MilAttention:
      case ModelKind::MilMean:
        instance_ = nn::Linear(d, h, rng);
        attention_u_ = Tensor::parameter(nn::glorot_uniform(h, h / 2 > 0 ? h / 2 : 1, rng));
        attention_v_ = Tensor::parameter(nn::glorot_uniform(h / 2 > 0 ? h / 2 : 1, 1, rng));
        break;
      case ModelKind::Mlp:
        mlp_.emplace_back(kNumCellFeatures, h, rng);
        mlp_.emplace_back(h, h, rng);
        break;
    }
    head_ = nn::Linear(h, cfg_.n_classes, rng);
  }

  const HierModelConfig& config() const { return cfg_; }

  Normalizer cell_norm;
  Normalizer metric_norm;
  Normalizer roi_norm;

  bool uses_graphs() const { return cfg_.kind != ModelKind::Mlp; }

  /// Every parameter, in checkpoint order.
  std::vector<nn::NamedParameter> parameters() const {
    std::vector<nn::NamedParameter> out;
    if (uses_graphs()) {
      for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect("encoder.conv" + std::to_string(i), out);
      encoder_out_.collect("encoder.out", out);
    }
    for (std::size_t i = 0; i < tile_.size(); ++i) tile_[i].collect("tile.conv" + std::to_string(i), out);
    if (cfg_.kind == ModelKind::MilAttention || cfg_.kind == ModelKind::MilMean) {
      instance_.collect("mil.instance", out);
      out.push_back({"mil.attention_u", attention_u_});
      out.push_back({"mil.attention_v", attention_v_});
    }
    for (std::size_t i = 0; i < mlp_.size(); ++i) mlp_[i].collect("mlp.fc" + std::to_string(i), out);
    head_.collect("head", out);
    return out;
  }

  /// Parameters the optimiser updates (frozen mode leaves the encoder).
  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out;
    for (const auto& p : parameters()) {
      if (cfg_.encoder_mode == EncoderMode::Frozen && p.name.rfind("encoder.", 0) == 0) continue;
      out.push_back(p.tensor);
    }
    return out;
  }

  /// Fits the three normalisers on training samples.
  void fit_normalizers(std::span<const RoISample> train) {
    std::vector<const Matrix*> cells, metrics;
    std::vector<Matrix> roi_rows;
    for (const auto& s : train) {
      for (const auto& g : s.cell_graphs) cells.push_back(&g.node_features);
      metrics.push_back(&s.tile_graph.node_features);
      roi_rows.emplace_back(1, kNumCellFeatures, std::vector<double>(s.mean_cell_features.begin(), s.mean_cell_features.end()));
    }
    std::vector<const Matrix*> rois;
    for (const auto& m : roi_rows) rois.push_back(&m);
    cell_norm = Normalizer::fit(cells, kNumCellFeatures);
    metric_norm = Normalizer::fit(metrics, kMetricDim);
    roi_norm = Normalizer::fit(rois, kNumCellFeatures);
  }

  PreparedSample prepare(const RoISample& s) const {
    PreparedSample p;
    p.roi_id = s.roi_id;
    p.region = s.region;
    p.label = cfg_.class_of(s.stage);
    p.roi_x = roi_norm.apply(
        Matrix(1, kNumCellFeatures, std::vector<double>(s.mean_cell_features.begin(), s.mean_cell_features.end())));
    if (!uses_graphs()) return p;
    for (const auto& t : s.tiles) p.tile_ids.push_back(t.tile_id);
    std::size_t total = 0;
    for (const auto& g : s.cell_graphs) total += g.n_nodes();
    p.cell_x = Matrix(total, kNumCellFeatures);
    p.tile_offsets.push_back(0);
    p.nonempty = Matrix(s.n_tiles(), 1);
    std::size_t at = 0;
    for (std::size_t t = 0; t < s.cell_graphs.size(); ++t) {
      const auto& g = s.cell_graphs[t];
      if (g.n_nodes() > 0 && g.feature_dim() != kNumCellFeatures) {
        throw ValidationError("cell-graph node features must have 7 columns");
      }
      const Matrix x = cell_norm.apply(g.node_features);
      std::copy(x.data.begin(), x.data.end(), p.cell_x.data.begin() + static_cast<std::ptrdiff_t>(at * kNumCellFeatures));
      for (const Edge& e : g.edges) {
        p.cell_edges.push_back({static_cast<std::uint32_t>(e.u + at), static_cast<std::uint32_t>(e.v + at)});
      }
      at += g.n_nodes();
      p.tile_offsets.push_back(at);
      p.nonempty(t, 0) = g.n_nodes() > 0 ? 1.0 : 0.0;
    }
    p.tile_metrics = metric_norm.apply(s.tile_graph.node_features);
    p.tile_edges = s.tile_graph.edges;
    if (cfg_.encoder_mode == EncoderMode::Frozen) p.frozen_embedding = embed(p).value();
    return p;
  }

  /// n_tiles x 16 cell-graph embeddings.
  Tensor embed(const PreparedSample& p) const {
    if (p.frozen_embedding) return Tensor(*p.frozen_embedding);
    Tensor h(p.cell_x);
    const Tensor w = nn::unit_edge_weights(p.cell_edges.size());
    for (const auto& layer : encoder_) h = ad::relu(layer(h, p.cell_edges, w));
    const Tensor pooled = ad::segment_readout(h, p.tile_offsets, ad::Readout::Mean);
    return ad::mul_col(encoder_out_(pooled), Tensor(p.nonempty));
  }

  /// n_tiles x 84 model inputs: normalised metrics, then the embedding.
  Tensor tile_features(const PreparedSample& p) const {
    if (p.tile_metrics.cols != kMetricDim || p.tile_metrics.rows != p.n_tiles()) {
      throw ValidationError("tile features: metric block must be n_tiles x 68");
    }
    return ad::concat_cols(Tensor(p.tile_metrics), embed(p));
  }

  /// Tile-graph classifier on explicit inputs; used directly by the
  /// attribution code with edge weights and masked features.
  Tensor classify_tiles(const Tensor& x, std::span<const Edge> edges, const Tensor& edge_weights, bool training,
                        Rng& rng) const {
    if (cfg_.kind != ModelKind::Gcn) throw ValidationError("classify_tiles needs a GCN model");
    if (x.rows() == 0) throw ValidationError("classify_roi: empty tile-graph");
    if (x.cols() != cfg_.tile_feature_dim()) {
      throw ValidationError("tile features have " + std::to_string(x.cols()) + " columns, model expects " +
                            std::to_string(cfg_.tile_feature_dim()));
    }
    Tensor h = x;
    for (const auto& layer : tile_) h = ad::relu(layer(h, edges, edge_weights));
    const Tensor pooled = ad::dropout(ad::readout(h, cfg_.readout_mode), cfg_.dropout, training, rng);
    return head_(pooled);
  }

  /// Which ReLUs of the tile layers are active, and each max-readout
  /// argmax, at inputs x with every edge weighted alpha. The logits are a
  /// polynomial in alpha on any interval where this pattern is constant.
  std::vector<std::uint32_t> tile_activation_pattern(const Matrix& x, std::span<const Edge> edges, double alpha) const {
    std::vector<std::uint32_t> out;
    Tensor h(x);
    const Tensor w(Matrix(edges.size(), 1, alpha));
    for (const auto& layer : tile_) {
      const Tensor pre = layer(h, edges, w);
      for (double v : pre.value().data) out.push_back(v > 0.0 ? 1u : 0u);
      h = ad::relu(pre);
    }
    if (cfg_.readout_mode == ad::Readout::Max && h.rows() > 0) {
      for (std::size_t j = 0; j < h.cols(); ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < h.rows(); ++i) {
          if (h(i, j) > h(best, j)) best = i;
        }
        out.push_back(static_cast<std::uint32_t>(best));
      }
    }
    return out;
  }

  std::size_t n_tile_layers() const { return tile_.size(); }

  Tensor classify_instances(const Tensor& x, bool training, Rng& rng) const {
    if (x.rows() == 0) throw ValidationError("classify_roi: empty tile set");
    const Tensor h = ad::relu(instance_(x));
    Tensor pooled;
    if (cfg_.kind == ModelKind::MilAttention) {
      const Tensor scores = ad::matmul(ad::tanh(ad::matmul(h, attention_u_)), attention_v_);
      const std::size_t offsets[2] = {0, h.rows()};
      const Tensor a = ad::segment_softmax(scores, offsets);
      pooled = ad::readout(ad::mul_col(h, a), ad::Readout::Add);
    } else {
      pooled = ad::readout(h, ad::Readout::Mean);
    }
    return head_(ad::dropout(pooled, cfg_.dropout, training, rng));
  }

  /// Attention weights over tiles (uniform in mean mode).
  Matrix attention_weights(const PreparedSample& p) const {
    const Tensor h = ad::relu(instance_(tile_features(p)));
    if (cfg_.kind != ModelKind::MilAttention) return Matrix(h.rows(), 1, 1.0 / static_cast<double>(h.rows()));
    const std::size_t offsets[2] = {0, h.rows()};
    return ad::segment_softmax(ad::matmul(ad::tanh(ad::matmul(h, attention_u_)), attention_v_), offsets).value();
  }

  /// 1 x n_classes logits for one RoI.
  Tensor forward(const PreparedSample& p, bool training, Rng& rng) const {
    switch (cfg_.kind) {
      case ModelKind::Gcn: {
        const Tensor w = nn::unit_edge_weights(p.tile_edges.size());
        return classify_tiles(tile_features(p), p.tile_edges, w, training, rng);
      }
      case ModelKind::MilAttention:
      case ModelKind::MilMean:
        return classify_instances(tile_features(p), training, rng);
      case ModelKind::Mlp: {
        Tensor h(p.roi_x);
        for (const auto& fc : mlp_) h = ad::dropout(ad::relu(fc(h)), cfg_.dropout, training, rng);
        return head_(h);
      }
    }
    throw ComputeError("unknown model kind");
  }

  /// Evaluation-mode logits.
  std::vector<double> logits(const PreparedSample& p) const {
    Rng unused(0);
    return forward(p, false, unused).value().data;
  }

 private:
  HierModelConfig cfg_;
  std::vector<nn::GraphConvLayer> encoder_;
  nn::Linear encoder_out_;
  std::vector<nn::GraphConvLayer> tile_;
  nn::Linear instance_;
  Tensor attention_u_;
  Tensor attention_v_;
  std::vector<nn::Linear> mlp_;
  nn::Linear head_;
};

/// Index of the largest entry; the first one on ties.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Logits for one RoI in evaluation mode.
inline std::vector<double> classify_roi(const HierModel& model, const RoISample& sample) {
  return model.logits(model.prepare(sample));
}

struct Checkpoint {
  HierModel model;
  std::vector<std::string> test_rois;
  std::uint64_t seed = 0;
  std::size_t split = 0;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  const auto params = c.model.parameters();
  return {{"format", "tmegraph-checkpoint"},
          {"version", 1},
          {"model", model_name(c.model.config())},
          {"config", c.model.config()},
          {"seed", c.seed},
          {"split", c.split},
          {"normalizers",
           {{"cell", normalizer_to_json(c.model.cell_norm)},
            {"metric", normalizer_to_json(c.model.metric_norm)},
            {"roi", normalizer_to_json(c.model.roi_norm)}}},
          {"parameters", nn::parameters_to_json(params)},
          {"test_rois", c.test_rois}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "tmegraph-checkpoint" || j.at("version") != 1) {
      throw ValidationError("not a tmegraph checkpoint");
    }
    Checkpoint c;
    const auto cfg = j.at("config").get<HierModelConfig>();
    if (model_name(cfg) != j.at("model").get<std::string>()) {
      throw ValidationError("checkpoint model name does not match its config");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
    c.split = j.at("split").get<std::size_t>();
    c.model = HierModel(cfg, 0);
    auto params = c.model.parameters();
    nn::parameters_from_json(params, j.at("parameters"));
    c.model.cell_norm = normalizer_from_json(j.at("normalizers").at("cell"));
    c.model.metric_norm = normalizer_from_json(j.at("normalizers").at("metric"));
    c.model.roi_norm = normalizer_from_json(j.at("normalizers").at("roi"));
    c.test_rois = j.at("test_rois").get<std::vector<std::string>>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace tmegraph
