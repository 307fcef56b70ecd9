// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file tensor.hpp
 * @brief Dense row-major tensors with tape-based reverse-mode gradients.
 *
 * A Tensor is a cheap handle onto shared storage. Primitives take a
 * ComputeGraph; when the graph is recording and at least one input requires a
 * gradient, the primitive appends its backward rule to the graph. backward()
 * replays those rules in exact reverse order. Inputs that do not require a
 * gradient never receive one, which is how frozen parameters stay untouched.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace cslab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad; // empty when absent
  bool requires_grad = false;
};
} // namespace detail

class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> data(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : s_(std::make_shared<detail::TensorStorage>()) {
    if (shape.empty())
      throw ShapeError("tensor shape must have at least one dimension");
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    s_->shape = std::move(shape);
    s_->data = std::move(data);
    s_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape &shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->data.size(); }
  std::size_t rows() const { return s_->shape.front(); }
  std::size_t cols() const { return rank() == 1 ? 1 : s_->shape[1]; }

  std::span<const double> data() const { return s_->data; }
  std::span<double> mutable_data() { return s_->data; }
  double operator[](std::size_t i) const { return s_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return s_->data[r * cols() + c]; }
  double item() const {
    if (size() != 1)
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const double> grad() const { return s_->grad; }
  /// Allocates a zero gradient on first access. Gradient accumulation is the
  /// one mutation allowed through a const handle.
  std::span<double> mutable_grad() const {
    if (s_->grad.empty())
      s_->grad.assign(s_->data.size(), 0.0);
    return s_->grad;
  }
  void zero_grad() {
    if (!s_->grad.empty())
      std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
  }
  void clear_grad() { s_->grad.clear(); }

  bool all_finite() const {
    return std::all_of(s_->data.begin(), s_->data.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_object(const Tensor &other) const { return s_ == other.s_; }

  /// Fresh storage with the same values; gradient is not copied.
  Tensor deep_copy() const { return Tensor(s_->shape, s_->data, s_->requires_grad); }

private:
  std::shared_ptr<detail::TensorStorage> s_;
};

/// Ordered record of backward rules for one forward pass.
class ComputeGraph {
public:
  explicit ComputeGraph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return ops_.size(); }

  void record(std::function<void()> backward_rule) {
    if (recording_)
      ops_.push_back(std::move(backward_rule));
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule newest-first. The
  /// tape is consumed, so a graph supports one backward pass.
  void backward(Tensor loss) {
    if (loss.size() != 1)
      throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      return;
    loss.mutable_grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it)
      (*it)();
    ops_.clear();
  }

private:
  bool recording_;
  std::vector<std::function<void()>> ops_;
};

namespace detail {

inline bool tracks(const ComputeGraph &g, std::initializer_list<const Tensor *> inputs) {
  if (!g.recording())
    return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor *t) { return t->requires_grad(); });
}

inline void require_rank2(const Tensor &t, const char *op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

} // namespace detail

/// a[m x k] . b[k x n]
inline Tensor matmul(ComputeGraph &g, const Tensor &a, const Tensor &b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0)
        continue;
      const double *brow = &B[p * n];
      double *orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j)
        orow[j] += av * brow[j];
    }
  const bool track = detail::tracks(g, {&a, &b});
  Tensor y({m, n}, std::move(out), track);
  if (track) {
    g.record([a, b, y, m, k, n]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      if (a.requires_grad()) {
        auto GA = a.mutable_grad();
        auto Bd = b.data();
        // dA = G . B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              s += G[i * n + j] * Bd[p * n + j];
            GA[i * k + p] += s;
          }
      }
      if (b.requires_grad()) {
        auto GB = b.mutable_grad();
        auto Ad = a.data();
        // dB = A^T . G
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = Ad[i * k + p];
            if (av == 0.0)
              continue;
            for (std::size_t j = 0; j < n; ++j)
              GB[p * n + j] += av * G[i * n + j];
          }
      }
    });
  }
  return y;
}

/// a[m x k] . b[n x k]^T
inline Tensor matmul_nt(ComputeGraph &g, const Tensor &a, const Tensor &b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " . " +
                     shape_str(b.shape()) + "^T");
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        s += A[i * k + p] * B[j * k + p];
      out[i * n + j] = s;
    }
  const bool track = detail::tracks(g, {&a, &b});
  Tensor y({m, n}, std::move(out), track);
  if (track) {
    g.record([a, b, y, m, k, n]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      if (a.requires_grad()) {
        auto GA = a.mutable_grad();
        auto Bd = b.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = G[i * n + j];
            if (gv == 0.0)
              continue;
            for (std::size_t p = 0; p < k; ++p)
              GA[i * k + p] += gv * Bd[j * k + p];
          }
      }
      if (b.requires_grad()) {
        auto GB = b.mutable_grad();
        auto Ad = a.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = G[i * n + j];
            if (gv == 0.0)
              continue;
            for (std::size_t p = 0; p < k; ++p)
              GB[j * k + p] += gv * Ad[i * k + p];
          }
      }
    });
  }
  return y;
}

inline Tensor add(ComputeGraph &g, const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] + b[i];
  const bool track = detail::tracks(g, {&a, &b});
  Tensor y(a.shape(), std::move(out), track);
  if (track) {
    g.record([a, b, y]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      for (const Tensor *t : {&a, &b})
        if (t->requires_grad()) {
          auto GT = t->mutable_grad();
          for (std::size_t i = 0; i < G.size(); ++i)
            GT[i] += G[i];
        }
    });
  }
  return y;
}

/// Elementwise product.
inline Tensor mul(ComputeGraph &g, const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a[i] * b[i];
  const bool track = detail::tracks(g, {&a, &b});
  Tensor y(a.shape(), std::move(out), track);
  if (track) {
    g.record([a, b, y]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      if (a.requires_grad()) {
        auto GA = a.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i)
          GA[i] += G[i] * b[i];
      }
      if (b.requires_grad()) {
        auto GB = b.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i)
          GB[i] += G[i] * a[i];
      }
    });
  }
  return y;
}

/// x[m x n] + bias[n] broadcast over rows. The only broadcasting primitive.
inline Tensor add_bias(ComputeGraph &g, const Tensor &x, const Tensor &bias) {
  detail::require_rank2(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n)
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " vs matrix " + shape_str(x.shape()));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = x[i * n + j] + bias[j];
  const bool track = detail::tracks(g, {&x, &bias});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    g.record([x, bias, y, m, n]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      if (x.requires_grad()) {
        auto GX = x.mutable_grad();
        for (std::size_t i = 0; i < G.size(); ++i)
          GX[i] += G[i];
      }
      if (bias.requires_grad()) {
        auto GB = bias.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            GB[j] += G[i * n + j];
      }
    });
  }
  return y;
}

inline Tensor scale(ComputeGraph &g, const Tensor &x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[i] * s;
  const bool track = detail::tracks(g, {&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    g.record([x, y, s]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      auto GX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i)
        GX[i] += G[i] * s;
    });
  }
  return y;
}

inline Tensor sum(ComputeGraph &g, const Tensor &x) {
  double s = 0.0;
  for (double v : x.data())
    s += v;
  const bool track = detail::tracks(g, {&x});
  Tensor y({1}, {s}, track);
  if (track) {
    g.record([x, y]() mutable {
      if (!y.has_grad())
        return;
      const double gv = y.grad()[0];
      auto GX = x.mutable_grad();
      for (double &v : GX)
        v += gv;
    });
  }
  return y;
}

/// GELU, tanh approximation. Smooth everywhere, which keeps central
/// differences well behaved.
inline Tensor gelu(ComputeGraph &g, const Tensor &x) {
  constexpr double c = 0.7978845608028654; // sqrt(2/pi)
  constexpr double k = 0.044715;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v)));
  }
  const bool track = detail::tracks(g, {&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    g.record([x, y]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      auto GX = x.mutable_grad();
      for (std::size_t i = 0; i < G.size(); ++i) {
        const double v = x[i];
        const double t = std::tanh(c * (v + k * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
        GX[i] += G[i] * d;
      }
    });
  }
  return y;
}

/// Row-wise layer normalization of x[m x n] with gain and shift of length n.
inline Tensor layer_norm(ComputeGraph &g, const Tensor &x, const Tensor &gain, const Tensor &shift,
                         double eps = 1e-5) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || shift.size() != n)
    throw ShapeError("layer_norm: gain/shift length must equal " + std::to_string(n));
  std::vector<double> xhat(x.size()), inv_std(m), out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      mean += x[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain[j] + shift[j];
    }
  }
  const bool track = detail::tracks(g, {&x, &gain, &shift});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    g.record([x, gain, shift, y, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      if (gain.requires_grad()) {
        auto GG = gain.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            GG[j] += G[i * n + j] * xhat[i * n + j];
      }
      if (shift.requires_grad()) {
        auto GS = shift.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            GS[j] += G[i * n + j];
      }
      if (x.requires_grad()) {
        auto GX = x.mutable_grad();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = G[i * n + j] * gain[j];
            mean_d += d;
            mean_dx += d * xhat[i * n + j];
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = G[i * n + j] * gain[j];
            GX[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      }
    });
  }
  return y;
}

namespace detail {

struct AxisLayout {
  std::size_t outer, n, inner;
};

inline AxisLayout axis_layout(const Shape &shape, std::size_t axis) {
  if (axis >= shape.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisLayout l{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i)
    l.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i)
    l.inner *= shape[i];
  if (l.n == 0)
    throw ShapeError("softmax over an empty axis");
  return l;
}

} // namespace detail

/// Max-subtracted softmax along `axis`. With `causal` set (matrices only,
/// axis 1), entry (i, j) with j > i is excluded and comes out exactly 0.
inline Tensor softmax(ComputeGraph &g, const Tensor &x, std::size_t axis, bool causal = false) {
  const auto l = detail::axis_layout(x.shape(), axis);
  if (causal && (x.rank() != 2 || axis != 1))
    throw ShapeError("causal softmax needs a matrix and axis 1");
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t visible = causal ? std::min(l.n, o + 1) : l.n;
      auto idx = [&](std::size_t i) { return (o * l.n + i) * l.inner + in; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < visible; ++i)
        mx = std::max(mx, x[idx(i)]);
      double z = 0.0;
      for (std::size_t i = 0; i < visible; ++i) {
        out[idx(i)] = std::exp(x[idx(i)] - mx);
        z += out[idx(i)];
      }
      for (std::size_t i = 0; i < visible; ++i)
        out[idx(i)] /= z;
    }
  const bool track = detail::tracks(g, {&x});
  Tensor y(x.shape(), std::move(out), track);
  if (track) {
    g.record([x, y, l]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      auto GX = x.mutable_grad();
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t in = 0; in < l.inner; ++in) {
          auto idx = [&](std::size_t i) { return (o * l.n + i) * l.inner + in; };
          double dot = 0.0;
          for (std::size_t i = 0; i < l.n; ++i)
            dot += G[idx(i)] * y[idx(i)];
          for (std::size_t i = 0; i < l.n; ++i)
            GX[idx(i)] += y[idx(i)] * (G[idx(i)] - dot);
        }
    });
  }
  return y;
}

/// Columns [start, start + count) of a matrix.
inline Tensor slice_cols(ComputeGraph &g, const Tensor &x, std::size_t start, std::size_t count) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (start + count > n)
    throw ShapeError("slice_cols: range exceeds " + shape_str(x.shape()));
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j)
      out[i * count + j] = x[i * n + start + j];
  const bool track = detail::tracks(g, {&x});
  Tensor y({m, count}, std::move(out), track);
  if (track) {
    g.record([x, y, m, n, start, count]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      auto GX = x.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          GX[i * n + start + j] += G[i * count + j];
    });
  }
  return y;
}

inline Tensor concat_cols(ComputeGraph &g, const std::vector<Tensor> &parts) {
  if (parts.empty())
    throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto &p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != m)
      throw ShapeError("concat_cols: row counts differ");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  bool track = false;
  for (const auto &p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j)
        out[i * n + off + j] = p[i * p.cols() + j];
    off += p.cols();
    track = track || (g.recording() && p.requires_grad());
  }
  Tensor y({m, n}, std::move(out), track);
  if (track) {
    g.record([parts, y, m, n]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      std::size_t off = 0;
      for (auto &p : parts) {
        const std::size_t c = p.cols();
        if (p.requires_grad()) {
          auto GP = p.mutable_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j)
              GP[i * c + j] += G[i * n + off + j];
        }
        off += c;
      }
    });
  }
  return y;
}

/// Rows of `table` selected by `ids` (embedding lookup).
inline Tensor gather_rows(ComputeGraph &g, const Tensor &table, std::span<const int> ids) {
  detail::require_rank2(table, "gather_rows");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside [0," + std::to_string(v) + ")");
    std::copy_n(&table.data()[static_cast<std::size_t>(ids[i]) * d], d, &out[i * d]);
  }
  const bool track = detail::tracks(g, {&table});
  Tensor y({ids.size(), d}, std::move(out), track);
  if (track) {
    g.record([table, y, rows = std::vector<int>(ids.begin(), ids.end()), d]() mutable {
      if (!y.has_grad())
        return;
      auto G = y.grad();
      auto GT = table.mutable_grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          GT[static_cast<std::size_t>(rows[i]) * d + j] += G[i * d + j];
    });
  }
  return y;
}

/// Mean over non-ignored rows of -log softmax(logits[t])[targets[t]].
inline Tensor cross_entropy(ComputeGraph &g, const Tensor &logits, std::span<const int> targets,
                            int ignore_index = -100) {
  detail::require_rank2(logits, "cross_entropy");
  const std::size_t t_len = logits.rows(), v = logits.cols();
  if (targets.size() != t_len)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t_len) + " rows");
  std::vector<double> probs(logits.size(), 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const int tgt = targets[t];
    if (tgt == ignore_index)
      continue;
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= v)
      throw IndexError("cross_entropy: target " + std::to_string(tgt) + " outside [0," + std::to_string(v) + ")");
    const double *row = &logits.data()[t * v];
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[t * v + j] = std::exp(row[j] - mx);
      z += probs[t * v + j];
    }
    for (std::size_t j = 0; j < v; ++j)
      probs[t * v + j] /= z;
    total += (mx + std::log(z)) - row[tgt];
    ++count;
  }
  if (count == 0)
    throw DataError("cross_entropy: every position is ignored, loss undefined");
  const bool track = detail::tracks(g, {&logits});
  Tensor y({1}, {total / static_cast<double>(count)}, track);
  if (track) {
    g.record([logits, y, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
              ignore_index, v, count]() mutable {
      if (!y.has_grad())
        return;
      const double gv = y.grad()[0] / static_cast<double>(count);
      auto GL = logits.mutable_grad();
      for (std::size_t t = 0; t < tg.size(); ++t) {
        if (tg[t] == ignore_index)
          continue;
        for (std::size_t j = 0; j < v; ++j)
          GL[t * v + j] += gv * probs[t * v + j];
        GL[t * v + static_cast<std::size_t>(tg[t])] -= gv;
      }
    });
  }
  return y;
}

/// Central-difference gradient of f with respect to every element of `param`.
/// `param` is perturbed in place and restored before returning.
inline Tensor finite_diff_grad(const std::function<double()> &f, Tensor param, double eps = 1e-5) {
  if (!param.all_finite())
    throw NumericError("finite_diff_grad: parameters are not finite");
  std::vector<double> out(param.size());
  auto data = param.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + eps;
    const double up = f();
    data[i] = saved - eps;
    const double down = f();
    data[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_grad: objective is not finite at element " + std::to_string(i));
    out[i] = (up - down) / (2.0 * eps);
  }
  return Tensor(param.shape(), std::move(out));
}

} // namespace cslab
