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

// Edge attributions by Integrated Gradients over tile-graph edge weights,
// and a mask-learning explainer over edges and tile features.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmegraph/model.hpp"
#include "tmegraph/nn.hpp"

namespace tmegraph {

struct QuadratureRule {
  std::vector<double> nodes;    // in [0, 1]
  std::vector<double> weights;  // sum to 1
};

/// n-point Gauss-Legendre rule mapped to [0, 1]. Nodes are roots of P_n
/// found by Newton iteration from the Chebyshev guesses.
inline QuadratureRule gauss_legendre(std::size_t n) {
  if (n == 0) throw ValidationError("gauss_legendre: order must be >= 1");
  const double nd = static_cast<double>(n);
  // P_n(x) and P_n'(x) by the three-term recurrence.
  auto legendre = [n, nd](double x) {
    double p0 = 1.0, p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      const double kd = static_cast<double>(k);
      const double p2 = ((2.0 * kd - 1.0) * x * p1 - (kd - 1.0) * p0) / kd;
      p0 = p1;
      p1 = p2;
    }
    return std::pair{p1, nd * (x * p1 - p0) / (x * x - 1.0)};
  };
  QuadratureRule q;
  q.nodes.resize(n);
  q.weights.resize(n);
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
    for (int iter = 0; iter < 100; ++iter) {
      const auto [p, dp] = legendre(x);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double dp = legendre(x).second;
    const double w = 1.0 / ((1.0 - x * x) * dp * dp);
    q.nodes[i] = (1.0 - x) / 2.0;
    q.nodes[n - 1 - i] = (1.0 + x) / 2.0;
    q.weights[i] = q.weights[n - 1 - i] = w;
  }
  return q;
}

struct Attribution {
  std::vector<Edge> edges;
  std::vector<double> edge_ig;
  std::vector<double> node_ig;
  std::vector<int> tile_ids;
  std::size_t target_class = 0;
  double f_input = 0.0;
  double f_baseline = 0.0;
  double completeness_gap = 0.0;
};

/// Explains one RoI through its tile-graph; cell embeddings are computed
/// once and held fixed.
class TileExplainer {
 public:
  TileExplainer(const HierModel& model, const PreparedSample& sample)
      : model_(model), sample_(sample), x_(model.tile_features(sample).value()) {
    if (model.config().kind != ModelKind::Gcn) {
      throw ValidationError("explanations need a GCN checkpoint, got " + model_name(model.config()));
    }
  }

  std::size_t n_edges() const { return sample_.tile_edges.size(); }
  const Matrix& features() const { return x_; }

  /// Logits with every tile edge weighted alpha.
  std::vector<double> logits_at(double alpha) const {
    Rng unused(0);
    return model_.classify_tiles(Tensor(x_), sample_.tile_edges, Tensor(Matrix(n_edges(), 1, alpha)), false, unused)
        .value()
        .data;
  }

  /// dF/dw at uniform edge weight alpha, F the target logit.
  std::vector<double> gradient_at(double alpha, std::size_t target, double* f = nullptr) const {
    Rng unused(0);
    Tensor w = Tensor::parameter(Matrix(n_edges(), 1, alpha));
    const Tensor logits = model_.classify_tiles(Tensor(x_), sample_.tile_edges, w, false, unused);
    const Tensor out = ad::slice_cols(logits, target, target + 1);
    if (f) *f = out.item();
    if (n_edges() == 0) return {};
    out.backward();
    return w.grad().data;
  }

  /// IG_e = integral over alpha in [0, 1] of dF/dw_e at weights alpha.
  Attribution integrated_gradients(std::optional<std::size_t> target, const QuadratureRule& rule) const {
    Attribution a;
    a.edges = sample_.tile_edges;
    a.tile_ids = sample_.tile_ids;
    const auto top = logits_at(1.0);
    a.target_class = target.value_or(argmax(top));
    if (a.target_class >= top.size()) throw ValidationError("IG target class out of range");
    a.f_input = top[a.target_class];
    a.f_baseline = logits_at(0.0)[a.target_class];
    a.edge_ig.assign(n_edges(), 0.0);
    for (std::size_t i = 0; i < rule.nodes.size() && n_edges() > 0; ++i) {
      const auto g = gradient_at(rule.nodes[i], a.target_class);
      for (std::size_t e = 0; e < g.size(); ++e) a.edge_ig[e] += rule.weights[i] * g[e];
    }
    a.node_ig.assign(sample_.n_tiles(), 0.0);
    double total = 0.0;
    for (std::size_t e = 0; e < a.edges.size(); ++e) {
      a.node_ig[a.edges[e].u] += a.edge_ig[e];
      a.node_ig[a.edges[e].v] += a.edge_ig[e];
      total += a.edge_ig[e];
    }
    a.completeness_gap = std::abs(total - (a.f_input - a.f_baseline));
    return a;
  }

 private:
  const HierModel& model_;
  const PreparedSample& sample_;
  Matrix x_;
};

inline Attribution integrated_gradients(const HierModel& model, const PreparedSample& sample,
                                        std::optional<std::size_t> target = std::nullopt, std::size_t n_points = 50) {
  return TileExplainer(model, sample).integrated_gradients(target, gauss_legendre(n_points));
}

struct RankedTile {
  int tile_id = 0;
  double score = 0.0;
};

/// Tiles by node attribution, descending; ties by tile id. top_k beyond the
/// node count is clamped (reported through `clamped`).
inline std::vector<RankedTile> rank_tiles(const Attribution& a, std::size_t top_k, bool* clamped = nullptr) {
  std::vector<RankedTile> out;
  for (std::size_t i = 0; i < a.node_ig.size(); ++i) out.push_back({a.tile_ids[i], a.node_ig[i]});
  std::sort(out.begin(), out.end(), [](const RankedTile& x, const RankedTile& y) {
    return x.score != y.score ? x.score > y.score : x.tile_id < y.tile_id;
  });
  if (clamped) *clamped = top_k > out.size();
  if (top_k < out.size()) out.resize(top_k);
  return out;
}

struct ExplainerConfig {
  std::size_t epochs = 200;
  double lr = 0.01;
  double lambda_size = 0.005;
  double lambda_entropy = 0.1;
  /// Pre-sigmoid starting value of every mask entry.
  double init_logit = 0.0;
};

inline void to_json(nlohmann::json& j, const ExplainerConfig& c) {
  j = {{"epochs", c.epochs}, {"lr", c.lr}, {"lambda_size", c.lambda_size},
       {"lambda_entropy", c.lambda_entropy}, {"init_logit", c.init_logit}};
}

inline void from_json(const nlohmann::json& j, ExplainerConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lambda_size = j.value("lambda_size", c.lambda_size);
  c.lambda_entropy = j.value("lambda_entropy", c.lambda_entropy);
  c.init_logit = j.value("init_logit", c.init_logit);
}

struct ExplainerMasks {
  std::vector<double> edge_mask;
  std::vector<double> feature_mask;
  std::vector<double> objective_trace;
  std::size_t predicted_class = 0;
};

/// Learns sigmoid edge and feature masks by Adam on
///   CE(masked model, predicted label)
///   + lambda_size * (mean edge mask + mean feature mask)
///   + lambda_entropy * (mean binary entropy of each mask).
/// The feature mask scales the model's normalised tile features.
inline ExplainerMasks gnn_explain(const HierModel& model, const PreparedSample& sample, const ExplainerConfig& cfg = {}) {
  const TileExplainer base(model, sample);
  const std::size_t E = base.n_edges(), D = base.features().cols;
  ExplainerMasks out;
  out.predicted_class = argmax(base.logits_at(1.0));
  Tensor edge_logits = Tensor::parameter(Matrix(E, 1, cfg.init_logit));
  Tensor feat_logits = Tensor::parameter(Matrix(1, D, cfg.init_logit));
  std::vector<Tensor> params = {feat_logits};
  if (E > 0) params.push_back(edge_logits);
  nn::Adam opt(params, {cfg.lr, 0.0});
  const Tensor x(base.features());
  const std::size_t label[1] = {out.predicted_class};
  const std::vector<double> unit(model.config().n_classes, 1.0);
  Rng unused(0);
  for (std::size_t it = 0; it < cfg.epochs; ++it) {
    const Tensor fmask = ad::sigmoid(feat_logits);
    const Tensor emask = ad::sigmoid(edge_logits);
    const Tensor logits = model.classify_tiles(ad::mul_row(x, fmask), sample.tile_edges, emask, false, unused);
    Tensor loss = ad::weighted_cross_entropy(logits, label, unit);
    loss = ad::add(loss, ad::scale(ad::mean(fmask), cfg.lambda_size));
    loss = ad::add(loss, ad::scale(ad::mean_binary_entropy(fmask), cfg.lambda_entropy));
    if (E > 0) {
      loss = ad::add(loss, ad::scale(ad::mean(emask), cfg.lambda_size));
      loss = ad::add(loss, ad::scale(ad::mean_binary_entropy(emask), cfg.lambda_entropy));
    }
    if (!std::isfinite(loss.item())) {
      throw ComputeError("gnn_explain: non-finite objective at iteration " + std::to_string(it) + " for RoI " +
                         sample.roi_id);
    }
    out.objective_trace.push_back(loss.item());
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  out.edge_mask = ad::sigmoid(edge_logits).value().data;
  out.feature_mask = ad::sigmoid(feat_logits).value().data;
  return out;
}

struct FeatureImportance {
  std::string name;
  std::size_t index = 0;
  double mean_mask = 0.0;
};

/// Mean feature mask over samples, descending; ties keep feature order.
inline std::vector<FeatureImportance> feature_importance_report(std::span<const ExplainerMasks> masks,
                                                                std::span<const std::string> names) {
  if (masks.empty()) throw ValidationError("feature importance needs at least one sample");
  const std::size_t D = masks[0].feature_mask.size();
  if (names.size() != D) throw ValidationError("feature importance: name count does not match mask length");
  std::vector<FeatureImportance> out(D);
  for (std::size_t d = 0; d < D; ++d) out[d] = {names[d], d, 0.0};
  for (const auto& m : masks) {
    if (m.feature_mask.size() != D) throw ValidationError("feature importance: mask lengths differ");
    for (std::size_t d = 0; d < D; ++d) out[d].mean_mask += m.feature_mask[d];
  }
  for (auto& f : out) f.mean_mask /= static_cast<double>(masks.size());
  std::stable_sort(out.begin(), out.end(),
                   [](const FeatureImportance& a, const FeatureImportance& b) { return a.mean_mask > b.mean_mask; });
  return out;
}

}  // namespace tmegraph
