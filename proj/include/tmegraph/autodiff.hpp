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

// Reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Tensor is a shared handle to a node holding its value, its gradient and
// a closure that pushes the node's gradient into its parents. Nodes are only
// recorded when some input requires a gradient, so inference builds no
// graph. Every tensor is rows x cols; vectors are 1 x n.

#include <atomic>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tmegraph/errors.hpp"
#include "tmegraph/graph.hpp"
#include "tmegraph/matrix.hpp"
#include "tmegraph/rng.hpp"

namespace tmegraph::ad {

namespace detail {

inline std::atomic<bool>& finite_check_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

}  // namespace detail

/// When enabled, every op output and every gradient is checked for NaN/Inf
/// and a ComputeError names the offending op. Process-wide, so worker
/// threads see it too.
inline void set_finite_check(bool enabled) { detail::finite_check_flag() = enabled; }
inline bool finite_check_enabled() { return detail::finite_check_flag(); }

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor parameter(Matrix value) { return Tensor(std::move(value), true); }
  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(Matrix(r, c)); }
  static Tensor scalar(double v) { return Tensor(Matrix(1, 1, v)); }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows; }
  std::size_t cols() const { return node_->value.cols; }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }
  double item() const { return node_->value.data.at(0); }
  double operator()(std::size_t r, std::size_t c) const { return node_->value(r, c); }
  const std::shared_ptr<Node>& node() const { return node_; }

  void zero_grad() {
    if (node_->requires_grad) node_->grad = Matrix(rows(), cols());
  }

  /// Back-propagates from this scalar. Interior gradients are reset first;
  /// leaf gradients accumulate until zero_grad().
  void backward() const {
    if (rows() != 1 || cols() != 1) throw ComputeError("backward() needs a 1x1 tensor");
    if (!node_->requires_grad) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (Node* n : order) {
      if (n->backward || !n->grad.same_shape(n->value)) n->grad = Matrix(n->value.rows, n->value.cols);
    }
    node_->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (!n->backward) continue;
      n->backward(*n);
      if (finite_check_enabled()) {
        for (const auto& p : n->parents) {
          if (p->requires_grad && !p->grad.all_finite()) {
            throw ComputeError(std::string("non-finite gradient flowing out of op '") + n->op + "'");
          }
        }
      }
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make_result(Matrix value, const char* op, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  if (finite_check_enabled() && !value.all_finite()) {
    throw ComputeError(std::string("non-finite values produced by op '") + op + "'");
  }
  Tensor out(std::move(value));
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    auto& n = *out.node();
    n.requires_grad = true;
    n.op = op;
    for (auto& t : inputs) n.parents.push_back(t.node());
    n.backward = std::move(backward);
  }
  return out;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ComputeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(), "matmul: shape mismatch " + shape_string(a.value()) +
                                            " * " + shape_string(b.value()));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix out(n, m);
  const auto& A = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_result(std::move(out), "matmul", {a, b}, [n, k, m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& G = self.grad;
    if (pa.requires_grad) {
      // dA = G * B^T
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = G.data.data() + i * m;
          const double* brow = pb.value.data.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
          pa.grad.data[i * k + p] += s;
        }
      }
    }
    if (pb.requires_grad) {
      // dB = A^T * G
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = G.data.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.value.data[i * k + p];
          if (av == 0.0) continue;
          double* gb = pb.grad.data.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) gb[j] += av * grow[j];
        }
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.value().same_shape(b.value()), "add: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return detail::make_result(std::move(out), "add", {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad.data[i] += self.grad.data[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.value().same_shape(b.value()), "sub: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  return detail::make_result(std::move(out), "sub", {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad.data[i] += self.grad.data[i];
      if (pb.requires_grad) pb.grad.data[i] -= self.grad.data[i];
    }
  });
}

/// Elementwise product of equal-shaped tensors.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return detail::make_result(std::move(out), "mul", {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad.data[i] += self.grad.data[i] * pb.value.data[i];
      if (pb.requires_grad) pb.grad.data[i] += self.grad.data[i] * pa.value.data[i];
    }
  });
}

/// a (n x m) plus a 1 x m row added to every row.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Matrix out = a.value();
  const std::size_t m = a.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += row.value().data[i % m];
  return detail::make_result(std::move(out), "add_row", {a, row}, [m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pr = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad.data[i] += self.grad.data[i];
      if (pr.requires_grad) pr.grad.data[i % m] += self.grad.data[i];
    }
  });
}

/// a (n x m) with every row scaled elementwise by a 1 x m row.
inline Tensor mul_row(const Tensor& a, const Tensor& row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "mul_row: shape mismatch");
  Matrix out = a.value();
  const std::size_t m = a.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= row.value().data[i % m];
  return detail::make_result(std::move(out), "mul_row", {a, row}, [m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pr = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad.data[i] += self.grad.data[i] * pr.value.data[i % m];
      if (pr.requires_grad) pr.grad.data[i % m] += self.grad.data[i] * pa.value.data[i];
    }
  });
}

/// a (n x m) with row i scaled by col(i, 0), col being n x 1.
inline Tensor mul_col(const Tensor& a, const Tensor& col) {
  detail::require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: shape mismatch");
  Matrix out = a.value();
  const std::size_t m = a.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= col.value().data[i / m];
  return detail::make_result(std::move(out), "mul_col", {a, col}, [m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pc = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad.data[i] += self.grad.data[i] * pc.value.data[i / m];
      if (pc.requires_grad) pc.grad.data[i / m] += self.grad.data[i] * pa.value.data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value();
  for (double& v : out.data) v *= s;
  return detail::make_result(std::move(out), "scale", {a}, [s](Node& self) {
    Node& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad.data[i] += s * self.grad.data[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  Matrix out = a.value();
  for (double& v : out.data) v += s;
  return detail::make_result(std::move(out), "add_scalar", {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad.data[i] += self.grad.data[i];
  });
}

namespace detail {

template <typename F, typename DF>
Tensor unary(const Tensor& a, const char* op, F f, DF df) {
  Matrix out = a.value();
  for (double& v : out.data) v = f(v);
  return make_result(std::move(out), op, {a}, [df](Node& self) {
    Node& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      pa.grad.data[i] += self.grad.data[i] * df(pa.value.data[i], self.value.data[i]);
    }
  });
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

/// Natural log of max(x, floor).
inline Tensor log(const Tensor& a, double floor = 1e-12) {
  return detail::unary(
      a, "log", [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return detail::make_result(Matrix(1, 1, s), "sum", {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    const double g = self.grad.data[0];
    for (double& v : pa.grad.data) v += g;
  });
}

inline Tensor mean(const Tensor& a) {
  detail::require(a.value().size() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Columns of a followed by columns of b; equal row counts.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows(), "concat_cols: row mismatch");
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  Matrix out(n, ca + cb);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().data.data() + i * ca, ca, out.data.data() + i * (ca + cb));
    std::copy_n(b.value().data.data() + i * cb, cb, out.data.data() + i * (ca + cb) + ca);
  }
  return detail::make_result(std::move(out), "concat_cols", {a, b}, [n, ca, cb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < n; ++i) {
      const double* g = self.grad.data.data() + i * (ca + cb);
      if (pa.requires_grad) {
        for (std::size_t j = 0; j < ca; ++j) pa.grad.data[i * ca + j] += g[j];
      }
      if (pb.requires_grad) {
        for (std::size_t j = 0; j < cb; ++j) pb.grad.data[i * cb + j] += g[ca + j];
      }
    }
  });
}

/// Selected columns [begin, end) of a.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require(begin <= end && end <= a.cols(), "slice_cols: bad range");
  const std::size_t n = a.rows(), c = a.cols(), w = end - begin;
  Matrix out(n, w);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().data.data() + i * c + begin, w, out.data.data() + i * w);
  }
  return detail::make_result(std::move(out), "slice_cols", {a}, [n, c, w, begin](Node& self) {
    Node& pa = *self.parents[0];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) pa.grad.data[i * c + begin + j] += self.grad.data[i * w + j];
    }
  });
}

/// Rows of each part stacked in order; equal column counts.
inline Tensor concat_rows(std::span<const Tensor> parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == c, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, c);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(at));
    at += p.value().size();
  }
  return detail::make_result(std::move(out), "concat_rows", {parts.begin(), parts.end()}, [](Node& self) {
    std::size_t at = 0;
    for (const auto& p : self.parents) {
      if (p->requires_grad) {
        for (std::size_t i = 0; i < p->value.size(); ++i) p->grad.data[i] += self.grad.data[at + i];
      }
      at += p->value.size();
    }
  });
}

// ---------------------------------------------------------------------------
// Graph ops

/// Weighted neighbour sum over undirected edges:
/// out_v = sum_{e = (u, v)} w_e * h_u, each edge feeding both endpoints.
/// Differentiable with respect to h and to the n_edges x 1 weights.
inline Tensor neighbor_sum(const Tensor& h, std::span<const Edge> edges, const Tensor& weights) {
  detail::require(weights.rows() == edges.size() && weights.cols() == 1,
                  "neighbor_sum: weights must be n_edges x 1");
  const std::size_t n = h.rows(), d = h.cols();
  for (const Edge& e : edges) {
    detail::require(e.u < n && e.v < n, "neighbor_sum: edge endpoint out of range");
  }
  Matrix out(n, d);
  const auto& H = h.value().data;
  const auto& W = weights.value().data;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const std::size_t u = edges[k].u, v = edges[k].v;
    const double w = W[k];
    for (std::size_t j = 0; j < d; ++j) {
      out.data[v * d + j] += w * H[u * d + j];
      out.data[u * d + j] += w * H[v * d + j];
    }
  }
  std::vector<Edge> edge_copy(edges.begin(), edges.end());
  return detail::make_result(
      std::move(out), "neighbor_sum", {h, weights},
      [edge_copy = std::move(edge_copy), d](Node& self) {
        Node& ph = *self.parents[0];
        Node& pw = *self.parents[1];
        const auto& G = self.grad.data;
        for (std::size_t k = 0; k < edge_copy.size(); ++k) {
          const std::size_t u = edge_copy[k].u, v = edge_copy[k].v;
          const double w = pw.value.data[k];
          if (ph.requires_grad) {
            for (std::size_t j = 0; j < d; ++j) {
              ph.grad.data[u * d + j] += w * G[v * d + j];
              ph.grad.data[v * d + j] += w * G[u * d + j];
            }
          }
          if (pw.requires_grad) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              s += G[v * d + j] * ph.value.data[u * d + j] + G[u * d + j] * ph.value.data[v * d + j];
            }
            pw.grad.data[k] += s;
          }
        }
      });
}

enum class Readout { Mean, Add, Max };

inline std::string_view to_string(Readout r) {
  switch (r) {
    case Readout::Mean: return "mean";
    case Readout::Add: return "add";
    case Readout::Max: return "max";
  }
  return "mean";
}

/// Segmented readout. Rows [offsets[s], offsets[s+1]) form graph s; the
/// result has one row per segment. Empty segments yield zeros. Max routes
/// its gradient to the lowest-index maximiser.
inline Tensor segment_readout(const Tensor& h, std::span<const std::size_t> offsets, Readout mode) {
  detail::require(offsets.size() >= 1 && offsets.back() == h.rows(),
                  "segment_readout: offsets do not cover the rows");
  const std::size_t segs = offsets.size() - 1, d = h.cols();
  Matrix out(segs, d);
  std::vector<std::size_t> argmax(mode == Readout::Max ? segs * d : 0);
  const auto& H = h.value().data;
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t b = offsets[s], e = offsets[s + 1];
    if (b == e) continue;
    for (std::size_t j = 0; j < d; ++j) {
      if (mode == Readout::Max) {
        std::size_t best = b;
        for (std::size_t i = b + 1; i < e; ++i) {
          if (H[i * d + j] > H[best * d + j]) best = i;
        }
        argmax[s * d + j] = best;
        out.data[s * d + j] = H[best * d + j];
      } else {
        double acc = 0.0;
        for (std::size_t i = b; i < e; ++i) acc += H[i * d + j];
        out.data[s * d + j] = mode == Readout::Mean ? acc / static_cast<double>(e - b) : acc;
      }
    }
  }
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  return detail::make_result(
      std::move(out), "segment_readout", {h},
      [offs = std::move(offs), argmax = std::move(argmax), mode, d](Node& self) {
        Node& ph = *self.parents[0];
        for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
          const std::size_t b = offs[s], e = offs[s + 1];
          if (b == e) continue;
          for (std::size_t j = 0; j < d; ++j) {
            const double g = self.grad.data[s * d + j];
            if (mode == Readout::Max) {
              ph.grad.data[argmax[s * d + j] * d + j] += g;
            } else {
              const double gi = mode == Readout::Mean ? g / static_cast<double>(e - b) : g;
              for (std::size_t i = b; i < e; ++i) ph.grad.data[i * d + j] += gi;
            }
          }
        }
      });
}

/// Whole-tensor readout to a 1 x d row. Requires at least one row.
inline Tensor readout(const Tensor& h, Readout mode) {
  if (h.rows() == 0) throw ComputeError("readout: empty node set");
  const std::size_t offsets[2] = {0, h.rows()};
  return segment_readout(h, offsets, mode);
}

/// Softmax of an n x 1 score column within each segment.
inline Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> offsets) {
  detail::require(scores.cols() == 1 && offsets.back() == scores.rows(),
                  "segment_softmax: bad shape");
  Matrix out(scores.rows(), 1);
  const auto& S = scores.value().data;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], e = offsets[s + 1];
    if (b == e) continue;
    const double mx = *std::max_element(S.begin() + static_cast<std::ptrdiff_t>(b),
                                        S.begin() + static_cast<std::ptrdiff_t>(e));
    double z = 0.0;
    for (std::size_t i = b; i < e; ++i) z += (out.data[i] = std::exp(S[i] - mx));
    for (std::size_t i = b; i < e; ++i) out.data[i] /= z;
  }
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  return detail::make_result(std::move(out), "segment_softmax", {scores},
                             [offs = std::move(offs)](Node& self) {
                               Node& ps = *self.parents[0];
                               const auto& Y = self.value.data;
                               const auto& G = self.grad.data;
                               for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
                                 double dot = 0.0;
                                 for (std::size_t i = offs[s]; i < offs[s + 1]; ++i) dot += G[i] * Y[i];
                                 for (std::size_t i = offs[s]; i < offs[s + 1]; ++i) {
                                   ps.grad.data[i] += Y[i] * (G[i] - dot);
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Regularisation and losses

/// Inverted dropout: in training mode each entry is zeroed with probability
/// p and survivors are scaled by 1/(1-p). Identity otherwise.
inline Tensor dropout(const Tensor& a, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ComputeError("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return a;
  Matrix mask(a.rows(), a.cols());
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask.data) m = rng.uniform() < p ? 0.0 : keep;
  return mul(a, Tensor(std::move(mask)));
}

inline Tensor dropout(const Tensor& a, double p, bool training, std::uint64_t seed) {
  Rng rng(seed);
  return dropout(a, p, training, rng);
}

/// Weighted cross entropy over a batch of logits (B x C):
/// sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i].
inline Tensor weighted_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                                     std::span<const double> class_weights) {
  const std::size_t B = logits.rows(), C = logits.cols();
  detail::require(labels.size() == B, "cross entropy: label count mismatch");
  detail::require(class_weights.size() == C, "cross entropy: class weight count mismatch");
  Matrix probs(B, C);
  double loss = 0.0, wsum = 0.0;
  const auto& L = logits.value().data;
  for (std::size_t i = 0; i < B; ++i) {
    detail::require(labels[i] < C, "cross entropy: label out of range");
    const double* row = L.data() + i * C;
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (probs.data[i * C + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < C; ++c) probs.data[i * C + c] /= z;
    const double w = class_weights[labels[i]];
    loss += w * -(row[labels[i]] - mx - std::log(z));
    wsum += w;
  }
  const double norm = wsum > 0.0 ? 1.0 / wsum : 0.0;
  std::vector<std::size_t> y(labels.begin(), labels.end());
  std::vector<double> cw(class_weights.begin(), class_weights.end());
  return detail::make_result(
      Matrix(1, 1, loss * norm), "weighted_cross_entropy", {logits},
      [probs = std::move(probs), y = std::move(y), cw = std::move(cw), norm, C](Node& self) {
        Node& pl = *self.parents[0];
        const double g = self.grad.data[0] * norm;
        for (std::size_t i = 0; i < y.size(); ++i) {
          const double w = cw[y[i]] * g;
          for (std::size_t c = 0; c < C; ++c) {
            pl.grad.data[i * C + c] += w * (probs.data[i * C + c] - (c == y[i] ? 1.0 : 0.0));
          }
        }
      });
}

/// Mean binary entropy -(m log m + (1-m) log(1-m)) of entries in (0, 1).
inline Tensor mean_binary_entropy(const Tensor& m) {
  const Tensor one_minus = add_scalar(scale(m, -1.0), 1.0);
  const Tensor ent = add(mul(m, log(m)), mul(one_minus, log(one_minus)));
  return scale(mean(ent), -1.0);
}

inline std::vector<double> softmax_row(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) z += (out[c] = std::exp(logits[c] - mx));
  for (double& v : out) v /= z;
  return out;
}

}  // namespace tmegraph::ad
