#pragma once

// Reverse-mode automatic differentiation over dense row-major f64 tensors.
//
// A Tensor is a value-semantic handle on a shared node holding shape, data,
// and an optional gradient accumulator. Primitives execute eagerly and, when
// the tape is recording and an input requires grad, push a backward closure
// onto the Tape. Tape::backward zeroes the grads of every op output it
// recorded, seeds the scalar loss with 1, and replays the closures in reverse
// execution order (a valid reverse topological order by construction). Leaf
// gradients accumulate additively across backward calls; the trainer is
// responsible for zeroing them between updates.
//
// Everything is f64 and single-threaded per tape; independent tapes are
// independent units.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lismore {

namespace detail {

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->data.assign(detail::shape_product(t.node_->shape), 0.0);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false) {
    if (detail::shape_product(shape) != data.size()) {
      throw std::invalid_argument("Tensor: shape " + detail::shape_str(shape) +
                                  " does not match data length " +
                                  std::to_string(data.size()));
    }
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw std::runtime_error("Tensor: gradient not populated");
    return node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  }

  double item() const {
    if (size() != 1) {
      throw std::invalid_argument("Tensor: item() requires a scalar, got shape " +
                                  detail::shape_str(node_->shape));
    }
    return node_->data[0];
  }

  // Deep value copy; gradient state is not copied.
  Tensor clone() const {
    Tensor t = from_data(node_->shape, node_->data, node_->requires_grad);
    return t;
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

class Tape {
 public:
  // When false, primitives compute values only: no closures are recorded and
  // outputs do not require grad. Decoding uses this mode.
  bool recording = true;

  std::size_t size() const { return records_.size(); }

  void clear() { records_.clear(); }

  void record(const Tensor& output, std::function<void()> fn) {
    records_.push_back({output.node(), std::move(fn)});
  }

  // Populates d(loss)/d(leaf) for every requires-grad leaf reachable from
  // loss. Leaf grads accumulate: calling backward twice doubles them.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  detail::shape_str(loss.shape()));
    }
    for (auto& rec : records_) {
      rec.output->grad.assign(rec.output->data.size(), 0.0);
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      it->fn();
    }
  }

 private:
  struct Record {
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> fn;
  };
  std::vector<Record> records_;
};

namespace detail {

inline bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline void accumulate(Tensor& t, const std::vector<double>& delta) {
  auto& g = t.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (detail::wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) detail::accumulate(a, g);
      if (b.requires_grad()) detail::accumulate(b, g);
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (detail::wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& bv2 = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        const auto& av2 = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
      }
    });
  }
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record(out, [a, out, c]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

// Row-broadcast add: [r x c] + [c].
inline Tensor add_bias(Tape& tape, const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || a.dim(1) != bias.dim(0)) {
    throw std::invalid_argument("add_bias: incompatible shapes " +
                                detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(bias.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = bias.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) ov[i * cols + j] = av[i * cols + j] + bv[j];
  }
  if (detail::wants_grad(tape, {&a, &bias})) {
    out.set_requires_grad(true);
    tape.record(out, [a, bias, out, rows, cols]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) detail::accumulate(a, g);
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
        }
      }
    });
  }
  return out;
}

inline Tensor gelu(Tape& tape, const Tensor& a) {
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * kInvSqrt2));
  }
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record(out, [a, out]() mutable {
      const auto& g = out.grad();
      const auto& av2 = a.data();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = av2[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] += g[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  double total = 0.0;
  for (const double v : a.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record(out, [a, out]() mutable {
      const double g = out.grad()[0];
      auto& ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix primitives
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  {
    const double* av = a.data().data();
    const double* bv = b.data().data();
    double* ov = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = ov + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        const double* brow = bv + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  if (detail::wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record(out, [a, b, out, m, k, n]() mutable {
      const double* g = out.grad().data();
      if (a.requires_grad()) {
        double* ga = a.grad().data();
        const double* bv = b.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double* grow = g + i * n;
            const double* brow = bv + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        double* gb = b.grad().data();
        const double* av = a.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            double* gbrow = gb + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: expected rank-2 tensor, got " +
                                detail::shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r});
  const auto& av = a.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = av[i * c + j];
  }
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record(out, [a, out, r, c]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
      }
    });
  }
  return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t first,
                         std::size_t count) {
  if (a.rank() != 2 || first + count > a.dim(1)) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(first) + ", " +
                                std::to_string(first + count) + ") out of bounds for " +
                                detail::shape_str(a.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor out = Tensor::zeros({rows, count});
  const auto& av = a.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < count; ++j) ov[i * count + j] = av[i * cols + first + j];
  }
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record(out, [a, out, first, count, rows, cols]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < count; ++j) {
          ga[i * cols + first + j] += g[i * count + j];
        }
      }
    });
  }
  return out;
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw std::invalid_argument("concat_cols: row counts disagree");
    }
    cols += p.dim(1);
  }
  Tensor out = Tensor::zeros({rows, cols});
  auto& ov = out.data();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.dim(1);
    const auto& pv = p.data();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < pc; ++j) ov[i * cols + offset + j] = pv[i * pc + j];
    }
    offset += pc;
  }
  bool any_grad = false;
  for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
  if (tape.recording && any_grad) {
    out.set_requires_grad(true);
    tape.record(out, [parts, out, rows, cols]() mutable {
      const auto& g = out.grad();
      std::size_t offset = 0;
      for (Tensor& p : parts) {
        const std::size_t pc = p.dim(1);
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * cols + offset + j];
          }
        }
        offset += pc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and loss primitives
// ---------------------------------------------------------------------------

namespace detail {

struct AxisView {
  std::size_t slices;
  std::size_t len;
  std::size_t slice_stride;   // distance between consecutive slices' starts
  std::size_t element_stride; // distance between consecutive elements in a slice
};

inline AxisView axis_view(const Tensor& t, std::size_t axis) {
  if (t.rank() == 1) {
    if (axis != 0) throw std::invalid_argument("softmax: axis out of range for rank-1 tensor");
    return {1, t.dim(0), 0, 1};
  }
  if (t.rank() == 2) {
    if (axis == 1) return {t.dim(0), t.dim(1), t.dim(1), 1};
    if (axis == 0) return {t.dim(1), t.dim(0), 1, t.dim(1)};
    throw std::invalid_argument("softmax: axis out of range for rank-2 tensor");
  }
  throw std::invalid_argument("softmax: only rank-1 and rank-2 tensors supported");
}

}  // namespace detail

// Numerically stabilized by max subtraction; outputs sum to 1 along `axis`.
inline Tensor softmax(Tape& tape, const Tensor& a, std::size_t axis) {
  const auto view = detail::axis_view(a, axis);
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  for (std::size_t s = 0; s < view.slices; ++s) {
    const std::size_t base = s * view.slice_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < view.len; ++e) {
      mx = std::max(mx, av[base + e * view.element_stride]);
    }
    double z = 0.0;
    for (std::size_t e = 0; e < view.len; ++e) {
      const std::size_t idx = base + e * view.element_stride;
      ov[idx] = std::exp(av[idx] - mx);
      z += ov[idx];
    }
    for (std::size_t e = 0; e < view.len; ++e) ov[base + e * view.element_stride] /= z;
  }
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record(out, [a, out, view]() mutable {
      const auto& g = out.grad();
      const auto& y = out.data();
      auto& ga = a.grad();
      for (std::size_t s = 0; s < view.slices; ++s) {
        const std::size_t base = s * view.slice_stride;
        double dot = 0.0;
        for (std::size_t e = 0; e < view.len; ++e) {
          const std::size_t idx = base + e * view.element_stride;
          dot += g[idx] * y[idx];
        }
        for (std::size_t e = 0; e < view.len; ++e) {
          const std::size_t idx = base + e * view.element_stride;
          ga[idx] += y[idx] * (g[idx] - dot);
        }
      }
    });
  }
  return out;
}

// Per-row normalization over the last dimension, then affine transform.
// Variance is the population variance of the row.
inline Tensor layer_norm(Tape& tape, const Tensor& a, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  const std::size_t cols = a.rank() == 1 ? a.dim(0) : a.dim(a.rank() - 1);
  const std::size_t rows = a.size() / std::max<std::size_t>(cols, 1);
  if (a.rank() > 2 || gain.shape() != std::vector<std::size_t>{cols} ||
      bias.shape() != std::vector<std::size_t>{cols}) {
    throw std::invalid_argument("layer_norm: gain/bias must match normalized dim of " +
                                detail::shape_str(a.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  std::vector<double> xhat(a.size());
  std::vector<double> inv_sigma(rows);
  const auto& av = a.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = av.data() + i * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += row[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    for (std::size_t j = 0; j < cols; ++j) {
      const double xh = (row[j] - mean) * inv;
      xhat[i * cols + j] = xh;
      ov[i * cols + j] = xh * gv[j] + bv[j];
    }
  }
  if (detail::wants_grad(tape, {&a, &gain, &bias})) {
    out.set_requires_grad(true);
    tape.record(out, [a, gain, bias, out, rows, cols, xhat = std::move(xhat),
                      inv_sigma = std::move(inv_sigma)]() mutable {
      const auto& g = out.grad();
      const auto& gv2 = gain.data();
      if (gain.requires_grad()) {
        auto& gg = gain.grad();
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) gg[j] += g[i * cols + j] * xhat[i * cols + j];
        }
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
        }
      }
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const double inv_n = 1.0 / static_cast<double>(cols);
        for (std::size_t i = 0; i < rows; ++i) {
          double mean_dxhat = 0.0;
          double mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            const double dxh = g[i * cols + j] * gv2[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i * cols + j];
          }
          mean_dxhat *= inv_n;
          mean_dxhat_xhat *= inv_n;
          for (std::size_t j = 0; j < cols; ++j) {
            const double dxh = g[i * cols + j] * gv2[j];
            ga[i * cols + j] +=
                inv_sigma[i] * (dxh - mean_dxhat - xhat[i * cols + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

// Row gather: out[i] = table[ids[i]]. Backward scatters additively, so a
// repeated id accumulates the gradients of all its positions.
inline Tensor embedding_lookup(Tape& tape, const Tensor& table,
                               const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw std::invalid_argument("embedding_lookup: table must be rank-2, got " +
                                detail::shape_str(table.shape()));
  }
  const std::size_t v = table.dim(0), d = table.dim(1);
  for (const int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " out of range for table with " + std::to_string(v) +
                              " rows");
    }
  }
  Tensor out = Tensor::zeros({ids.size(), d});
  const auto& tv = table.data();
  auto& ov = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* row = tv.data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(row, row + d, ov.data() + i * d);
  }
  if (detail::wants_grad(tape, {&table})) {
    out.set_requires_grad(true);
    tape.record(out, [table, out, ids, d]() mutable {
      const auto& g = out.grad();
      auto& gt = table.grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* grow = gt.data() + static_cast<std::size_t>(ids[i]) * d;
        const double* src = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) grow[j] += src[j];
      }
    });
  }
  return out;
}

// Mean negative log-softmax probability of the targets over positions whose
// target is not ignore_id.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits,
                            const std::vector<int>& targets, int ignore_id = -1) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be rank-2, got " +
                                detail::shape_str(logits.shape()));
  }
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " logit rows");
  }
  std::size_t included = 0;
  for (const int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(t) +
                              " out of range for vocab " + std::to_string(vocab));
    }
    ++included;
  }
  if (included == 0) {
    throw std::invalid_argument("cross_entropy: all positions ignored; mean undefined");
  }
  std::vector<double> probs(logits.size());
  const auto& lv = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = lv.data() + i * vocab;
    double mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[i * vocab + j] = std::exp(row[j] - mx);
      z += probs[i * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] /= z;
    if (targets[i] != ignore_id) {
      loss -= std::log(probs[i * vocab + static_cast<std::size_t>(targets[i])]);
    }
  }
  loss /= static_cast<double>(included);
  Tensor out = Tensor::scalar(loss);
  if (detail::wants_grad(tape, {&logits})) {
    out.set_requires_grad(true);
    tape.record(out, [logits, out, targets, ignore_id, rows, vocab, included,
                      probs = std::move(probs)]() mutable {
      const double g = out.grad()[0] / static_cast<double>(included);
      auto& gl = logits.grad();
      for (std::size_t i = 0; i < rows; ++i) {
        if (targets[i] == ignore_id) continue;
        const double* prow = probs.data() + i * vocab;
        double* grow = gl.data() + i * vocab;
        for (std::size_t j = 0; j < vocab; ++j) grow[j] += g * prow[j];
        grow[static_cast<std::size_t>(targets[i])] -= g;
      }
    });
  }
  return out;
}

}  // namespace lismore
