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

// Layers and the optimizer built on the autodiff engine.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tmegraph/autodiff.hpp"

namespace tmegraph::nn {

using ad::Tensor;

/// A parameter tensor with a stable name, used for checkpoints.
struct NamedParameter {
  std::string name;
  Tensor tensor;
};

inline Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& v : m.data) v = rng.uniform(-limit, limit);
  return m;
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the PyTorch Linear default.
inline Matrix fan_in_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(fan_in, fan_out);
  for (double& v : m.data) v = rng.uniform(-limit, limit);
  return m;
}

/// out = x W + b for row-major x (n x in).
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(Tensor::parameter(fan_in_uniform(in, out, rng))),
        bias(Tensor::parameter(Matrix(1, out))) {}

  Tensor operator()(const Tensor& x) const { return ad::add_row(ad::matmul(x, weight), bias); }

  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/// GraphConv with edge weights:
/// out_v = W1 h_v + W2 sum_{u in N(v)} w_uv h_u + b.
/// Weight 1 on every edge is the plain unweighted operator.
struct GraphConvLayer {
  Tensor w_root;
  Tensor w_neighbor;
  Tensor bias;

  GraphConvLayer() = default;
  GraphConvLayer(std::size_t in, std::size_t out, Rng& rng)
      : w_root(Tensor::parameter(fan_in_uniform(in, out, rng))),
        w_neighbor(Tensor::parameter(fan_in_uniform(in, out, rng))),
        bias(Tensor::parameter(Matrix(1, out))) {}

  std::size_t in_dim() const { return w_root.rows(); }
  std::size_t out_dim() const { return w_root.cols(); }

  Tensor operator()(const Tensor& h, std::span<const Edge> edges, const Tensor& edge_weights) const {
    if (h.cols() != in_dim()) {
      throw ComputeError("graph_conv: input has " + std::to_string(h.cols()) +
                         " features, layer expects " + std::to_string(in_dim()));
    }
    const Tensor agg = ad::neighbor_sum(h, edges, edge_weights);
    return ad::add_row(ad::add(ad::matmul(h, w_root), ad::matmul(agg, w_neighbor)), bias);
  }

  void collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    out.push_back({prefix + ".w_root", w_root});
    out.push_back({prefix + ".w_neighbor", w_neighbor});
    out.push_back({prefix + ".bias", bias});
  }
};

inline Tensor graph_conv(const GraphConvLayer& layer, const Tensor& h, std::span<const Edge> edges,
                         const Tensor& edge_weights) {
  return layer(h, edges, edge_weights);
}

inline Tensor unit_edge_weights(std::size_t n_edges) { return Tensor(Matrix(n_edges, 1, 1.0)); }

struct AdamOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;
};

/// One Adam update with bias correction. L2 regularisation enters as
/// weight_decay * param added to the gradient.
inline void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                      AdamState& state, const AdamOptions& opt) {
  if (params.size() != grads.size()) throw ComputeError("adam_step: params/grads size mismatch");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.emplace_back(p->rows, p->cols);
      state.v.emplace_back(p->rows, p->cols);
    }
  }
  if (state.m.size() != params.size()) throw ComputeError("adam_step: state does not match params");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = *grads[k];
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    if (!p.same_shape(m) || (!g.empty() && !g.same_shape(p))) {
      throw ComputeError("adam_step: shape mismatch for parameter " + std::to_string(k));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = (g.empty() ? 0.0 : g.data[i]) + opt.weight_decay * p.data[i];
      m.data[i] = opt.beta1 * m.data[i] + (1.0 - opt.beta1) * gi;
      v.data[i] = opt.beta2 * v.data[i] + (1.0 - opt.beta2) * gi * gi;
      const double mhat = m.data[i] / c1;
      const double vhat = v.data[i] / c2;
      p.data[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

/// Adam over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {}

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    std::vector<Matrix*> values;
    std::vector<const Matrix*> grads;
    for (auto& p : params_) {
      values.push_back(&p.mutable_value());
      grads.push_back(&p.grad());
    }
    adam_step(values, grads, state_, opt_);
  }

  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  AdamState state_;
};

inline nlohmann::json parameters_to_json(std::span<const NamedParameter> params) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : params) {
    out.push_back({{"name", p.name},
                   {"shape", {p.tensor.rows(), p.tensor.cols()}},
                   {"values", p.tensor.value().data}});
  }
  return out;
}

/// Loads values into existing parameters, matching by name and shape.
inline void parameters_from_json(std::span<NamedParameter> params, const nlohmann::json& j) {
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : j) by_name[e.at("name").get<std::string>()] = &e;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ValidationError("checkpoint lacks parameter " + p.name);
    const auto shape = it->second->at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != p.tensor.rows() || shape[1] != p.tensor.cols()) {
      throw ValidationError("checkpoint parameter " + p.name + " has mismatched shape");
    }
    auto values = it->second->at("values").get<std::vector<double>>();
    if (values.size() != p.tensor.value().size()) {
      throw ValidationError("checkpoint parameter " + p.name + " has wrong value count");
    }
    p.tensor.mutable_value().data = std::move(values);
  }
  if (by_name.size() != params.size()) {
    throw ValidationError("checkpoint parameter set does not match the model");
  }
}

}  // namespace tmegraph::nn
