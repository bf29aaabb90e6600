#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "g2p/error.hpp"

namespace g2p {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// ---------------------------------------------------------------------------
// Tensor: a shared handle to a dense buffer plus an optional gradient buffer.
// Values are immutable once an op has produced them; only gradients mutate.
// ---------------------------------------------------------------------------

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized == value iff requires_grad
  bool requires_grad = false;
};

template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    t.n_->shape = std::move(shape);
    t.n_->value.assign(static_cast<size_t>(shape_numel(t.n_->shape)), T(0));
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  bool is_scalar() const { return numel() == 1; }

  // 2-D accessors (most of the model is matrices).
  int rows() const { return ndim() == 2 ? dim(0) : (ndim() == 1 ? dim(0) : 1); }
  int cols() const { return ndim() == 2 ? dim(1) : 1; }

  std::vector<T>& data() { return n_->value; }
  const std::vector<T>& data() const { return n_->value; }
  // Gradient is mutable metadata on the shared node: backward closures hold
  // const handles yet must accumulate into it.
  std::vector<T>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }

  T item() const {
    if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  void set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    if (rg)
      n_->grad.assign(n_->value.size(), T(0));
    else
      n_->grad.clear();
  }

  void zero_grad() {
    if (n_->requires_grad) n_->grad.assign(n_->value.size(), T(0));
  }

  // Deep copy into a fresh node (used for checkpoint snapshots).
  Tensor clone() const {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>(*n_);
    return t;
  }

  TensorNode<T>* node() const { return n_.get(); }
  bool same_node(const Tensor& o) const { return n_ == o.n_; }

 private:
  std::shared_ptr<TensorNode<T>> n_;
};

// Eigen views over tensor buffers (row-major, matching the flat layout).
template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<MatX<T>>;
template <class T>
using CMatMap = Eigen::Map<const MatX<T>>;

template <class T>
MatMap<T> mat(Tensor<T>& t) {
  return MatMap<T>(t.data().data(), t.rows(), t.cols());
}
template <class T>
CMatMap<T> mat(const Tensor<T>& t) {
  return CMatMap<T>(t.data().data(), t.rows(), t.cols());
}
template <class T>
MatMap<T> gmat(const Tensor<T>& t) {
  return MatMap<T>(t.grad().data(), t.rows(), t.cols());
}

// ---------------------------------------------------------------------------
// Graph: a tape of executed ops. Forward runs eagerly; each recorded op
// pushes a closure that propagates output gradients to input gradients.
// backward() replays the tape in exact reverse execution order.
//
// A graph constructed with recording=false is "no-grad mode": ops compute
// forward results identically but record nothing.
// ---------------------------------------------------------------------------

template <class T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  size_t size() const { return tape_.size(); }
  bool empty() const { return tape_.empty(); }

  // Register an op: `out` was produced by it, `bw` propagates gradients.
  // No-op when recording is off.
  void record(Tensor<T> out, std::function<void()> bw) {
    if (!recording_) return;
    produced_.push_back(std::move(out));
    tape_.push_back(std::move(bw));
  }

  // Accumulates d(loss)/d(leaf) into every grad-enabled leaf. Repeated calls
  // accumulate; non-leaf (op-produced) gradients are reset per call.
  void backward(const Tensor<T>& loss) {
    if (!loss.is_scalar()) throw ContractError("backward requires a scalar loss");
    for (auto& p : produced_) p.zero_grad();
    if (loss.requires_grad()) loss.node()->grad[0] += T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  }

  void clear() {
    tape_.clear();
    produced_.clear();
  }

 private:
  std::vector<std::function<void()>> tape_;
  std::vector<Tensor<T>> produced_;
  bool recording_ = true;
};

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  // NaN poisons the sum; +/-Inf keeps it non-finite through addition of
  // finite values, so one reduction catches both.
  T acc = T(0);
  for (T v : t.data()) acc += std::abs(v);
  if (!std::isfinite(static_cast<double>(acc))) {
    for (size_t i = 0; i < t.data().size(); ++i)
      if (!std::isfinite(static_cast<double>(t.data()[i])))
        throw NumericalError(std::string(op) + " produced non-finite value at flat index " +
                             std::to_string(i));
    throw NumericalError(std::string(op) + " produced non-finite values");
  }
}

template <class T>
Tensor<T> make_out(const Graph<T>& g, Shape shape, bool any_input_grad) {
  return Tensor<T>::zeros(std::move(shape), g.recording() && any_input_grad);
}

template <class T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.ndim() != 2) throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

// c[m,n] = a[m,k] * b[k,n]
template <class T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<T> c = detail::make_out(g, {a.dim(0), b.dim(1)}, a.requires_grad() || b.requires_grad());
  mat(c).noalias() = mat(a) * mat(b);
  detail::check_finite(c, "matmul");
  if (c.requires_grad()) {
    g.record(c, [a, b, c]() {
      if (a.requires_grad()) gmat(a).noalias() += gmat(c) * mat(b).transpose();
      if (b.requires_grad()) gmat(b).noalias() += mat(a).transpose() * gmat(c);
    });
  }
  return c;
}

// c[m,n] = a[m,k] * b[n,k]^T  (saves materializing transposes for Q K^T)
template <class T>
Tensor<T> matmul_nt(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<T> c = detail::make_out(g, {a.dim(0), b.dim(0)}, a.requires_grad() || b.requires_grad());
  mat(c).noalias() = mat(a) * mat(b).transpose();
  detail::check_finite(c, "matmul_nt");
  if (c.requires_grad()) {
    g.record(c, [a, b, c]() {
      if (a.requires_grad()) gmat(a).noalias() += gmat(c) * mat(b);
      if (b.requires_grad()) gmat(b).noalias() += gmat(c).transpose() * mat(a);
    });
  }
  return c;
}

template <class T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> c = detail::make_out(g, a.shape(), a.requires_grad() || b.requires_grad());
  for (int64_t i = 0; i < c.numel(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
  detail::check_finite(c, "add");
  if (c.requires_grad()) {
    g.record(c, [a, b, c]() {
      if (a.requires_grad())
        for (int64_t i = 0; i < c.numel(); ++i) a.grad()[i] += c.grad()[i];
      if (b.requires_grad())
        for (int64_t i = 0; i < c.numel(); ++i) b.grad()[i] += c.grad()[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> c = detail::make_out(g, a.shape(), a.requires_grad() || b.requires_grad());
  for (int64_t i = 0; i < c.numel(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  detail::check_finite(c, "mul");
  if (c.requires_grad()) {
    g.record(c, [a, b, c]() {
      if (a.requires_grad())
        for (int64_t i = 0; i < c.numel(); ++i) a.grad()[i] += c.grad()[i] * b.data()[i];
      if (b.requires_grad())
        for (int64_t i = 0; i < c.numel(); ++i) b.grad()[i] += c.grad()[i] * a.data()[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& a, T s) {
  Tensor<T> c = detail::make_out(g, a.shape(), a.requires_grad());
  for (int64_t i = 0; i < c.numel(); ++i) c.data()[i] = a.data()[i] * s;
  detail::check_finite(c, "scale");
  if (c.requires_grad()) {
    g.record(c, [a, c, s]() {
      for (int64_t i = 0; i < c.numel(); ++i) a.grad()[i] += c.grad()[i] * s;
    });
  }
  return c;
}

// y[m,n] = x[m,n] + row_bias[n] broadcast over rows
template <class T>
Tensor<T> add_rowvec(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& b) {
  detail::require_2d(x, "add_rowvec");
  if (b.numel() != x.dim(1))
    throw ShapeError("add_rowvec bias length " + shape_str(b.shape()) + " vs cols of " +
                     shape_str(x.shape()));
  Tensor<T> y = detail::make_out(g, x.shape(), x.requires_grad() || b.requires_grad());
  const int m = x.dim(0), n = x.dim(1);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y.data()[static_cast<size_t>(i) * n + j] = x.data()[static_cast<size_t>(i) * n + j] + b.data()[j];
  detail::check_finite(y, "add_rowvec");
  if (y.requires_grad()) {
    g.record(y, [x, b, y, m, n]() {
      if (x.requires_grad())
        for (int64_t i = 0; i < y.numel(); ++i) x.grad()[i] += y.grad()[i];
      if (b.requires_grad())
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) b.grad()[j] += y.grad()[static_cast<size_t>(i) * n + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> y = detail::make_out(g, x.shape(), x.requires_grad());
  for (int64_t i = 0; i < y.numel(); ++i) y.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  if (y.requires_grad()) {
    g.record(y, [x, y]() {
      for (int64_t i = 0; i < y.numel(); ++i)
        if (x.data()[i] > T(0)) x.grad()[i] += y.grad()[i];
    });
  }
  return y;
}

// Row-wise softmax of a 2-D tensor.
template <class T>
Tensor<T> softmax_rows(Graph<T>& g, const Tensor<T>& x) {
  detail::require_2d(x, "softmax_rows");
  Tensor<T> y = detail::make_out(g, x.shape(), x.requires_grad());
  const int m = x.dim(0), n = x.dim(1);
  for (int i = 0; i < m; ++i) {
    const T* xr = x.data().data() + static_cast<size_t>(i) * n;
    T* yr = y.data().data() + static_cast<size_t>(i) * n;
    T mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    T inv = T(1) / sum;
    for (int j = 0; j < n; ++j) yr[j] *= inv;
  }
  detail::check_finite(y, "softmax_rows");
  if (y.requires_grad()) {
    g.record(y, [x, y, m, n]() {
      for (int i = 0; i < m; ++i) {
        const T* yr = y.data().data() + static_cast<size_t>(i) * n;
        const T* dy = y.grad().data() + static_cast<size_t>(i) * n;
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += dy[j] * yr[j];
        T* dx = x.grad().data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) dx[j] += yr[j] * (dy[j] - dot);
      }
    });
  }
  return y;
}

// Per-row layer normalization with learned gain/bias over the last dim.
template <class T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-6)) {
  detail::require_2d(x, "layer_norm");
  const int m = x.dim(0), d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d)
    throw ShapeError("layer_norm gain/bias length must equal last dim " + std::to_string(d));
  Tensor<T> y =
      detail::make_out(g, x.shape(), x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  // saved for backward
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(m) * d);
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (int i = 0; i < m; ++i) {
    const T* xr = x.data().data() + static_cast<size_t>(i) * d;
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    T* xh = xhat->data() + static_cast<size_t>(i) * d;
    T* yr = y.data().data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mu) * inv;
      yr[j] = xh[j] * gain.data()[j] + bias.data()[j];
    }
  }
  detail::check_finite(y, "layer_norm");
  if (y.requires_grad()) {
    g.record(y, [x, gain, bias, y, xhat, inv_std, m, d]() {
      for (int i = 0; i < m; ++i) {
        const T* dy = y.grad().data() + static_cast<size_t>(i) * d;
        const T* xh = xhat->data() + static_cast<size_t>(i) * d;
        if (gain.requires_grad())
          for (int j = 0; j < d; ++j) gain.grad()[j] += dy[j] * xh[j];
        if (bias.requires_grad())
          for (int j = 0; j < d; ++j) bias.grad()[j] += dy[j];
        if (x.requires_grad()) {
          T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
          for (int j = 0; j < d; ++j) {
            T dxh = dy[j] * gain.data()[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
          }
          mean_dxhat /= T(d);
          mean_dxhat_xhat /= T(d);
          T* dx = x.grad().data() + static_cast<size_t>(i) * d;
          const T inv = (*inv_std)[i];
          for (int j = 0; j < d; ++j) {
            T dxh = dy[j] * gain.data()[j];
            dx[j] += inv * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return y;
}

// out[r,:] = table[ids[r],:]
template <class T>
Tensor<T> embedding(Graph<T>& g, const Tensor<T>& table, std::span<const int> ids) {
  detail::require_2d(table, "embedding");
  const int v = table.dim(0), d = table.dim(1);
  for (size_t r = 0; r < ids.size(); ++r)
    if (ids[r] < 0 || ids[r] >= v)
      throw IndexError("embedding id " + std::to_string(ids[r]) + " out of range [0," +
                       std::to_string(v) + ") at position " + std::to_string(r));
  Tensor<T> out = detail::make_out(g, {static_cast<int>(ids.size()), d}, table.requires_grad());
  for (size_t r = 0; r < ids.size(); ++r) {
    const T* src = table.data().data() + static_cast<size_t>(ids[r]) * d;
    T* dst = out.data().data() + r * d;
    std::copy(src, src + d, dst);
  }
  if (out.requires_grad()) {
    std::vector<int> ids_copy(ids.begin(), ids.end());
    g.record(out, [table, out, ids_copy, d]() {
      for (size_t r = 0; r < ids_copy.size(); ++r) {
        T* dst = table.grad().data() + static_cast<size_t>(ids_copy[r]) * d;
        const T* src = out.grad().data() + r * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Per-row cross-entropy: losses[r] = -log softmax(logits[r,:])[targets[r]]
template <class T>
Tensor<T> cross_entropy_rows(Graph<T>& g, const Tensor<T>& logits, std::span<const int> targets) {
  detail::require_2d(logits, "cross_entropy_rows");
  const int m = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(m) + " rows");
  for (int r = 0; r < m; ++r)
    if (targets[r] < 0 || targets[r] >= v)
      throw IndexError("cross_entropy target " + std::to_string(targets[r]) + " out of range [0," +
                       std::to_string(v) + ") at row " + std::to_string(r));
  Tensor<T> losses = detail::make_out(g, {m}, logits.requires_grad());
  // softmax probabilities saved for backward
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(m) * v);
  for (int r = 0; r < m; ++r) {
    const T* xr = logits.data().data() + static_cast<size_t>(r) * v;
    T* pr = probs->data() + static_cast<size_t>(r) * v;
    T mx = xr[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, xr[j]);
    T sum = T(0);
    for (int j = 0; j < v; ++j) {
      pr[j] = std::exp(xr[j] - mx);
      sum += pr[j];
    }
    T inv = T(1) / sum;
    for (int j = 0; j < v; ++j) pr[j] *= inv;
    losses.data()[r] = std::log(sum) + mx - xr[targets[r]];
  }
  detail::check_finite(losses, "cross_entropy_rows");
  if (losses.requires_grad()) {
    std::vector<int> tgt(targets.begin(), targets.end());
    g.record(losses, [logits, losses, probs, tgt, m, v]() {
      for (int r = 0; r < m; ++r) {
        const T dl = losses.grad()[r];
        if (dl == T(0)) continue;
        T* dx = logits.grad().data() + static_cast<size_t>(r) * v;
        const T* pr = probs->data() + static_cast<size_t>(r) * v;
        for (int j = 0; j < v; ++j) dx[j] += dl * pr[j];
        dx[tgt[r]] -= dl;
      }
    });
  }
  return losses;
}

// Scalar loss for one distribution: -log softmax(logits)[target].
template <class T>
Tensor<T> softmax_cross_entropy(Graph<T>& g, const Tensor<T>& logits, int target) {
  if (logits.ndim() > 2 || (logits.ndim() == 2 && logits.dim(0) != 1))
    throw ShapeError("softmax_cross_entropy expects a single logit row, got " +
                     shape_str(logits.shape()));
  const int v = static_cast<int>(logits.numel());
  Tensor<T> row = logits;
  if (logits.ndim() != 2) {
    // reshape view: share the node through a 2-D alias
    row = Tensor<T>::from({1, v}, logits.data(), false);
    if (logits.requires_grad()) {
      // keep gradient flowing to the original: wrap as an op
      row = detail::make_out(g, {1, v}, true);
      std::copy(logits.data().begin(), logits.data().end(), row.data().begin());
      const Tensor<T> src = logits;
      const Tensor<T> dst = row;
      g.record(row, [src, dst]() {
        for (int64_t i = 0; i < src.numel(); ++i) src.grad()[i] += dst.grad()[i];
      });
    }
  }
  const int t[] = {target};
  Tensor<T> losses = cross_entropy_rows(g, row, std::span<const int>(t, 1));
  return sum(g, losses);
}

// Scalar sum of all elements.
template <class T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> y = detail::make_out(g, {1}, x.requires_grad());
  T acc = T(0);
  for (T v : x.data()) acc += v;
  y.data()[0] = acc;
  detail::check_finite(y, "sum");
  if (y.requires_grad()) {
    g.record(y, [x, y]() {
      const T dy = y.grad()[0];
      for (int64_t i = 0; i < x.numel(); ++i) x.grad()[i] += dy;
    });
  }
  return y;
}

// Scalar dot(x, w) with constant weights (masked/weighted reductions).
template <class T>
Tensor<T> weighted_sum(Graph<T>& g, const Tensor<T>& x, const std::vector<T>& w) {
  if (static_cast<int64_t>(w.size()) != x.numel())
    throw ShapeError("weighted_sum weight length mismatch");
  Tensor<T> y = detail::make_out(g, {1}, x.requires_grad());
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i] * w[i];
  y.data()[0] = acc;
  detail::check_finite(y, "weighted_sum");
  if (y.requires_grad()) {
    auto wp = std::make_shared<std::vector<T>>(w);
    g.record(y, [x, y, wp]() {
      const T dy = y.grad()[0];
      for (int64_t i = 0; i < x.numel(); ++i) x.grad()[i] += dy * (*wp)[i];
    });
  }
  return y;
}

// Row slice: y = x[r0:r0+nr, :]
template <class T>
Tensor<T> slice_rows(Graph<T>& g, const Tensor<T>& x, int r0, int nr) {
  detail::require_2d(x, "slice_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (r0 < 0 || nr <= 0 || r0 + nr > m)
    throw ShapeError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r0 + nr) +
                     ") out of " + std::to_string(m) + " rows");
  Tensor<T> y = detail::make_out(g, {nr, n}, x.requires_grad());
  std::copy(x.data().data() + static_cast<size_t>(r0) * n,
            x.data().data() + static_cast<size_t>(r0 + nr) * n, y.data().data());
  if (y.requires_grad()) {
    g.record(y, [x, y, r0, nr, n]() {
      for (int64_t i = 0; i < static_cast<int64_t>(nr) * n; ++i)
        x.grad()[static_cast<size_t>(r0) * n + i] += y.grad()[i];
    });
  }
  return y;
}

// Column slice: y = x[:, c0:c0+nc]
template <class T>
Tensor<T> slice_cols(Graph<T>& g, const Tensor<T>& x, int c0, int nc) {
  detail::require_2d(x, "slice_cols");
  const int m = x.dim(0), n = x.dim(1);
  if (c0 < 0 || nc <= 0 || c0 + nc > n)
    throw ShapeError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c0 + nc) +
                     ") out of " + std::to_string(n) + " columns");
  Tensor<T> y = detail::make_out(g, {m, nc}, x.requires_grad());
  for (int i = 0; i < m; ++i)
    std::copy(x.data().data() + static_cast<size_t>(i) * n + c0,
              x.data().data() + static_cast<size_t>(i) * n + c0 + nc,
              y.data().data() + static_cast<size_t>(i) * nc);
  if (y.requires_grad()) {
    g.record(y, [x, y, c0, nc, m, n]() {
      for (int i = 0; i < m; ++i) {
        const T* src = y.grad().data() + static_cast<size_t>(i) * nc;
        T* dst = x.grad().data() + static_cast<size_t>(i) * n + c0;
        for (int j = 0; j < nc; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

// Horizontal concatenation of equal-row-count blocks.
template <class T>
Tensor<T> concat_cols(Graph<T>& g, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of zero tensors");
  const int m = parts[0].dim(0);
  int n = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols row count mismatch");
    n += p.dim(1);
    any_grad = any_grad || p.requires_grad();
  }
  Tensor<T> y = detail::make_out(g, {m, n}, any_grad);
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p.dim(1);
    for (int i = 0; i < m; ++i)
      std::copy(p.data().data() + static_cast<size_t>(i) * pc,
                p.data().data() + static_cast<size_t>(i) * pc + pc,
                y.data().data() + static_cast<size_t>(i) * n + off);
    off += pc;
  }
  if (y.requires_grad()) {
    auto parts_copy = parts;
    g.record(y, [parts_copy, y, m, n]() {
      int off = 0;
      for (const auto& p : parts_copy) {
        const int pc = p.dim(1);
        if (p.requires_grad())
          for (int i = 0; i < m; ++i) {
            const T* src = y.grad().data() + static_cast<size_t>(i) * n + off;
            T* dst = p.grad().data() + static_cast<size_t>(i) * pc;
            for (int j = 0; j < pc; ++j) dst[j] += src[j];
          }
        off += pc;
      }
    });
  }
  return y;
}

}  // namespace g2p
