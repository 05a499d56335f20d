// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "memedial/errors.hpp"

namespace memedial {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

/// Dense row-major array of doubles. Operations view a tensor as a matrix of
/// `rows()` x `cols()` where `cols()` is the last dimension.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != element_count(shape_)) {
      throw ContractError("dimension error: shape " + shape_string(shape_) + " needs " +
                          std::to_string(element_count(shape_)) + " values, got " +
                          std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor& operator+=(const Tensor& other) {
    if (other.shape_ != shape_) {
      throw ContractError("dimension error: cannot add " + shape_string(other.shape_) + " into " +
                          shape_string(shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ContractError("dimension error: tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw ContractError("dimension error: zero-sized dimension in " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

/// A named trainable tensor.
struct Parameter {
  std::string name;
  Tensor value;
};

namespace kernels {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernels

/// Handle to a value recorded in a Graph.
struct Var {
  std::uint32_t id = 0;
};

/// Reverse-mode differentiation tape over a fixed set of matrix operations.
///
/// Every op appends a node holding its forward value and, when recording, a
/// closure that pushes the node's gradient to its inputs. Nodes are created in
/// topological order, so backward() is a single reverse sweep. Parameters
/// enter by reference and are never copied; their gradients are collected
/// with parameter_gradients() after backward().
///
/// A Graph is single-threaded and pinned in memory (closures capture `this`).
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var constant(Tensor value) { return push("constant", std::move(value), nullptr); }

  /// Owned leaf that receives a gradient (for tests and ad-hoc graphs).
  Var variable(Tensor value) {
    Var v = push("variable", std::move(value), nullptr);
    nodes_[v.id].requires_grad = record_;
    return v;
  }

  /// Leaf bound to an external parameter. The parameter must outlive the graph.
  Var param(const Parameter& p) {
    Node node;
    node.external = &p.value;
    node.param = &p;
    node.requires_grad = record_;
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor& value(Var v) const {
    const Node& node = nodes_.at(v.id);
    return node.external ? *node.external : node.value;
  }

  /// Gradient of the last backward() target with respect to `v`; zeros if unreached.
  Tensor grad(Var v) const {
    const Node& node = nodes_.at(v.id);
    if (node.grad.empty()) return Tensor::zeros_like(value(v));
    return node.grad;
  }

  void backward(Var loss, double seed = 1.0) {
    if (!record_) throw ContractError("backward() on a graph built without recording");
    if (value(loss).size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_string(value(loss).shape()));
    }
    for (auto& node : nodes_) node.grad = Tensor();
    grad_ref(loss.id)[0] = seed;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward && !node.grad.empty()) node.backward();
    }
  }

  /// (parameter, gradient) for every parameter leaf the last backward() reached.
  std::vector<std::pair<const Parameter*, const Tensor*>> parameter_gradients() const {
    std::vector<std::pair<const Parameter*, const Tensor*>> out;
    for (const auto& node : nodes_) {
      if (node.param && !node.grad.empty()) out.emplace_back(node.param, &node.grad);
    }
    return out;
  }

  // ---------------------------------------------------------------- ops

  /// a[m x k] * b[k x n], or a * b^T with b[n x k] when transpose_b.
  Var matmul(Var a, Var b, bool transpose_b = false) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const std::size_t m = av.rows(), k = av.cols();
    const std::size_t bk = transpose_b ? bv.cols() : bv.rows();
    const std::size_t n = transpose_b ? bv.rows() : bv.cols();
    if (k != bk) {
      throw ContractError("dimension error in matmul: " + shape_string(av.shape()) + " and " +
                          shape_string(bv.shape()) + (transpose_b ? " (transposed)" : ""));
    }
    Tensor out({m, n});
    if (transpose_b) {
      kernels::gemm_nt(av.raw(), bv.raw(), out.raw(), m, k, n);
    } else {
      kernels::gemm_nn(av.raw(), bv.raw(), out.raw(), m, k, n);
    }
    Var result = push("matmul", std::move(out));
    on_backward(result, {a, b}, [this, a, b, result, m, k, n, transpose_b] {
      const Tensor& g = nodes_[result.id].grad;
      const Tensor& av = value(a);
      const Tensor& bv = value(b);
      if (needs_grad(a)) {
        Tensor& ga = grad_ref(a.id);
        if (transpose_b) {
          kernels::gemm_nn(g.raw(), bv.raw(), ga.raw(), m, n, k);
        } else {
          kernels::gemm_nt(g.raw(), bv.raw(), ga.raw(), m, n, k);
        }
      }
      if (needs_grad(b)) {
        Tensor& gb = grad_ref(b.id);
        if (transpose_b) {
          kernels::gemm_tn(g.raw(), av.raw(), gb.raw(), n, m, k);
        } else {
          kernels::gemm_tn(av.raw(), g.raw(), gb.raw(), k, m, n);
        }
      }
    });
    return result;
  }

  /// Elementwise sum of equal shapes, or x[m x n] + row[1 x n] / [n] broadcast over rows.
  Var add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const bool broadcast = av.shape() != bv.shape();
    if (broadcast && !(bv.rows() == 1 && bv.cols() == av.cols())) {
      throw ContractError("dimension error in add: " + shape_string(av.shape()) + " and " +
                          shape_string(bv.shape()));
    }
    Tensor out = av;
    const std::size_t n = av.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += broadcast ? bv[i % n] : bv[i];
    Var result = push("add", std::move(out));
    on_backward(result, {a, b}, [this, a, b, result, broadcast, n] {
      const Tensor& g = nodes_[result.id].grad;
      if (needs_grad(a)) grad_ref(a.id) += g;
      if (needs_grad(b)) {
        Tensor& gb = grad_ref(b.id);
        if (broadcast) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        } else {
          gb += g;
        }
      }
    });
    return result;
  }

  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

  Var scale(Var x, double factor) {
    Tensor out = value(x);
    for (auto& v : out.data()) v *= factor;
    Var result = push("scale", std::move(out));
    on_backward(result, {x}, [this, x, result, factor] {
      const Tensor& g = nodes_[result.id].grad;
      Tensor& gx = grad_ref(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    });
    return result;
  }

  Var add_scalar(Var x, double offset) {
    Tensor out = value(x);
    for (auto& v : out.data()) v += offset;
    Var result = push("add_scalar", std::move(out));
    on_backward(result, {x}, [this, x, result] { grad_ref(x.id) += nodes_[result.id].grad; });
    return result;
  }

  /// Per-row normalization followed by gamma/beta affine, both of length cols.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    const std::size_t rows = xv.rows(), n = xv.cols();
    if (gv.size() != n || bv.size() != n) {
      throw ContractError("dimension error in layer_norm: input " + shape_string(xv.shape()) + ", gamma " +
                          shape_string(gv.shape()) + ", beta " + shape_string(bv.shape()));
    }
    Tensor out(xv.shape());
    std::vector<double> normed(xv.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xv.raw() + r * n;
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += row[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<double>(n);
      inv_std[r] = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < n; ++j) {
        normed[r * n + j] = (row[j] - mean) * inv_std[r];
        out[r * n + j] = normed[r * n + j] * gv[j] + bv[j];
      }
    }
    Var result = push("layer_norm", std::move(out));
    on_backward(result, {x, gamma, beta}, [this, x, gamma, beta, result, rows, n, normed = std::move(normed),
                         inv_std = std::move(inv_std)] {
      const Tensor& g = nodes_[result.id].grad;
      const Tensor& gv = value(gamma);
      if (needs_grad(gamma) || needs_grad(beta)) {
        Tensor& gg = grad_ref(gamma.id);
        Tensor& gb = grad_ref(beta.id);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            gg[j] += g[r * n + j] * normed[r * n + j];
            gb[j] += g[r * n + j];
          }
        }
      }
      if (!needs_grad(x)) return;
      Tensor& gx = grad_ref(x.id);
      std::vector<double> dnorm(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0, dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dnorm[j] = g[r * n + j] * gv[j];
          sum += dnorm[j];
          dot += dnorm[j] * normed[r * n + j];
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          gx[r * n + j] += inv_std[r] * (dnorm[j] - inv_n * sum - normed[r * n + j] * inv_n * dot);
        }
      }
    });
    return result;
  }

  /// tanh approximation of GELU.
  Var gelu(Var x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double a = 0.044715;
    Tensor out = value(x);
    for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
    Var result = push("gelu", std::move(out));
    on_backward(result, {x}, [this, x, result] {
      const Tensor& g = nodes_[result.id].grad;
      const Tensor& xv = value(x);
      Tensor& gx = grad_ref(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double t = std::tanh(c * (v + a * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
        gx[i] += g[i] * d;
      }
    });
    return result;
  }

  Var softmax_rows(Var x) {
    const Tensor& xv = value(x);
    const std::size_t rows = xv.rows(), n = xv.cols();
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = xv.raw() + r * n;
      double* o = out.raw() + r * n;
      const double peak = *std::max_element(in, in + n);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - peak));
      for (std::size_t j = 0; j < n; ++j) o[j] /= total;
    }
    Var result = push("softmax_rows", std::move(out));
    on_backward(result, {x}, [this, x, result, rows, n] {
      const Tensor& g = nodes_[result.id].grad;
      const Tensor& y = nodes_[result.id].value;
      Tensor& gx = grad_ref(x.id);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    });
    return result;
  }

  /// Replace entries where mask is non-zero with `fill`; no gradient flows through them.
  Var masked_fill(Var x, std::span<const std::uint8_t> mask, double fill) {
    const Tensor& xv = value(x);
    if (mask.size() != xv.size()) {
      throw ContractError("dimension error in masked_fill: input " + shape_string(xv.shape()) + ", mask of " +
                          std::to_string(mask.size()));
    }
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (mask[i]) out[i] = fill;
    }
    std::vector<std::uint8_t> keep(mask.begin(), mask.end());
    Var result = push("masked_fill", std::move(out));
    on_backward(result, {x}, [this, x, result, keep = std::move(keep)] {
      const Tensor& g = nodes_[result.id].grad;
      Tensor& gx = grad_ref(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!keep[i]) gx[i] += g[i];
      }
    });
    return result;
  }

  /// Rows of `table` selected by `ids`.
  Var embedding_lookup(Var table, std::span<const int> ids) {
    const Tensor& tv = value(table);
    const std::size_t n = tv.cols();
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= tv.rows()) {
        throw ContractError("vocab error: id " + std::to_string(id) + " outside table of " +
                            std::to_string(tv.rows()) + " rows");
      }
    }
    if (ids.empty()) throw ContractError("embedding_lookup with no ids");
    Tensor out({ids.size(), n});
    for (std::size_t r = 0; r < ids.size(); ++r) {
      std::copy_n(tv.raw() + static_cast<std::size_t>(ids[r]) * n, n, out.raw() + r * n);
    }
    std::vector<int> idx(ids.begin(), ids.end());
    Var result = push("embedding_lookup", std::move(out));
    on_backward(result, {table}, [this, table, result, n, idx = std::move(idx)] {
      const Tensor& g = nodes_[result.id].grad;
      Tensor& gt = grad_ref(table.id);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        double* dst = gt.raw() + static_cast<std::size_t>(idx[r]) * n;
        const double* src = g.raw() + r * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
    return result;
  }

  Var select_rows(Var x, std::span<const std::size_t> rows) {
    const Tensor& xv = value(x);
    const std::size_t n = xv.cols();
    if (rows.empty()) throw ContractError("select_rows with no rows");
    for (auto r : rows) {
      if (r >= xv.rows()) {
        throw ContractError("index error: row " + std::to_string(r) + " of " + shape_string(xv.shape()));
      }
    }
    Tensor out({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(xv.raw() + rows[i] * n, n, out.raw() + i * n);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Var result = push("select_rows", std::move(out));
    on_backward(result, {x}, [this, x, result, n, idx = std::move(idx)] {
      const Tensor& g = nodes_[result.id].grad;
      Tensor& gx = grad_ref(x.id);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < n; ++j) gx[idx[i] * n + j] += g[i * n + j];
      }
    });
    return result;
  }

  Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    const Tensor& xv = value(x);
    const std::size_t rows = xv.rows(), n = xv.cols();
    if (count == 0 || begin + count > n) {
      throw ContractError("index error: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") of " + shape_string(xv.shape()));
    }
    Tensor out({rows, count});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.raw() + r * n + begin, count, out.raw() + r * count);
    Var result = push("slice_cols", std::move(out));
    on_backward(result, {x}, [this, x, result, rows, n, begin, count] {
      const Tensor& g = nodes_[result.id].grad;
      Tensor& gx = grad_ref(x.id);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < count; ++j) gx[r * n + begin + j] += g[r * count + j];
      }
    });
    return result;
  }

  Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols with no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t total = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) {
        throw ContractError("dimension error in concat_cols: " + shape_string(value(parts[0]).shape()) + " and " +
                            shape_string(value(p).shape()));
      }
      total += value(p).cols();
    }
    Tensor out({rows, total});
    std::size_t offset = 0;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.raw() + r * pv.cols(), pv.cols(), out.raw() + r * total + offset);
      offset += pv.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    Var result = push("concat_cols", std::move(out));
    on_backward(result, inputs, [this, result, rows, total, inputs] {
      const Tensor& g = nodes_[result.id].grad;
      std::size_t offset = 0;
      for (Var p : inputs) {
        const std::size_t c = value(p).cols();
        if (needs_grad(p)) {
          Tensor& gp = grad_ref(p.id);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) gp[r * c + j] += g[r * total + offset + j];
          }
        }
        offset += c;
      }
    });
    return result;
  }

  Var sigmoid(Var x) {
    Tensor out = value(x);
    for (auto& v : out.data()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    Var result = push("sigmoid", std::move(out));
    on_backward(result, {x}, [this, x, result] {
      const Tensor& g = nodes_[result.id].grad;
      const Tensor& y = nodes_[result.id].value;
      Tensor& gx = grad_ref(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return result;
  }

  Var relu(Var x) {
    Tensor out = value(x);
    for (auto& v : out.data()) v = std::max(v, 0.0);
    Var result = push("relu", std::move(out));
    on_backward(result, {x}, [this, x, result] {
      const Tensor& g = nodes_[result.id].grad;
      const Tensor& xv = value(x);
      Tensor& gx = grad_ref(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += g[i];
      }
    });
    return result;
  }

  Var sum(Var x) {
    const Tensor& xv = value(x);
    const double total = std::accumulate(xv.data().begin(), xv.data().end(), 0.0);
    Var result = push("sum", Tensor::scalar(total));
    on_backward(result, {x}, [this, x, result] {
      const double g = nodes_[result.id].grad[0];
      for (auto& v : grad_ref(x.id).data()) v += g;
    });
    return result;
  }

  Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(value(x).size())); }

  /// Mean over rows of -log softmax(logits)[row, target[row]].
  Var cross_entropy(Var logits, std::span<const int> targets) {
    const Tensor& lv = value(logits);
    const std::size_t rows = lv.rows(), n = lv.cols();
    if (targets.size() != rows) {
      throw ContractError("dimension error in cross_entropy: " + std::to_string(rows) + " rows, " +
                          std::to_string(targets.size()) + " targets");
    }
    Tensor probs(lv.shape());
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const int t = targets[r];
      if (t < 0 || static_cast<std::size_t>(t) >= n) {
        throw ContractError("label error: target " + std::to_string(t) + " outside " + std::to_string(n) + " classes");
      }
      const double* in = lv.raw() + r * n;
      double* p = probs.raw() + r * n;
      const double peak = *std::max_element(in, in + n);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += (p[j] = std::exp(in[j] - peak));
      for (std::size_t j = 0; j < n; ++j) p[j] /= total;
      loss += -(in[t] - peak - std::log(total));
    }
    loss /= static_cast<double>(rows);
    std::vector<int> tgt(targets.begin(), targets.end());
    Var result = push("cross_entropy", Tensor::scalar(loss));
    on_backward(result, {logits}, [this, logits, result, rows, n, probs = std::move(probs), tgt = std::move(tgt)] {
      const double g = nodes_[result.id].grad[0] / static_cast<double>(rows);
      Tensor& gl = grad_ref(logits.id);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
          gl[r * n + j] += g * (probs[r * n + j] - (static_cast<int>(j) == tgt[r] ? 1.0 : 0.0));
        }
      }
    });
    return result;
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    const Parameter* param = nullptr;
    Tensor grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(const char* op, Tensor value, const Parameter* param = nullptr) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    Node node;
    node.value = std::move(value);
    node.param = param;
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  template <typename F>
  void on_backward(Var v, std::initializer_list<Var> inputs, F&& fn) {
    on_backward(v, std::span<const Var>(inputs.begin(), inputs.size()), std::forward<F>(fn));
  }

  template <typename F>
  void on_backward(Var v, std::span<const Var> inputs, F&& fn) {
    if (!record_) return;
    const bool any = std::any_of(inputs.begin(), inputs.end(), [this](Var in) { return needs_grad(in); });
    if (!any) return;
    nodes_[v.id].requires_grad = true;
    nodes_[v.id].backward = std::forward<F>(fn);
  }

  bool needs_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Tensor& grad_ref(std::uint32_t id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) node.grad = Tensor::zeros_like(node.external ? *node.external : node.value);
    return node.grad;
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace memedial
