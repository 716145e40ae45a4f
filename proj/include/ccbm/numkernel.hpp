#pragma once

// Dense row-major kernels in 64-bit reals, each with an analytic
// vector-Jacobian product, plus a small reverse-mode tape that chains them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ccbm/errors.hpp"

namespace ccbm {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Matrix column_vector(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  Matrix& operator+=(const Matrix& o) {
    if (!same_shape(o)) throw DimensionError("Matrix +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Forward kernels

// out[j] = sum_i x[i] * W[i, j] + b[j]
inline Vector linear_apply(std::span<const double> x, const Matrix& weight,
                           std::span<const double> bias) {
  if (x.size() != weight.rows() || bias.size() != weight.cols()) {
    throw DimensionError("linear_apply: x[" + std::to_string(x.size()) + "] weight[" +
                         shape_str(weight) + "] bias[" + std::to_string(bias.size()) + "]");
  }
  // Bias added last, matching GradTape::linear bit for bit.
  Vector out(bias.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const auto wrow = weight.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += xi * wrow[j];
  }
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += bias[j];
  return out;
}

struct LinearGrads {
  Vector dx;
  Matrix dweight;
  Vector dbias;
};

inline LinearGrads linear_backward(std::span<const double> x, const Matrix& weight,
                                   std::span<const double> dout) {
  if (x.size() != weight.rows() || dout.size() != weight.cols()) {
    throw DimensionError("linear_backward: x[" + std::to_string(x.size()) + "] weight[" +
                         shape_str(weight) + "] dout[" + std::to_string(dout.size()) + "]");
  }
  LinearGrads g{Vector(x.size(), 0.0), Matrix(weight.rows(), weight.cols()),
                Vector(dout.begin(), dout.end())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto wrow = weight.row(i);
    auto gwrow = g.dweight.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < dout.size(); ++j) {
      acc += wrow[j] * dout[j];
      gwrow[j] = x[i] * dout[j];
    }
    g.dx[i] = acc;
  }
  return g;
}

// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto crow = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// C = A * B^T
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_transposed: " + shape_str(a) + " * (" + shape_str(b) + ")^T");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      c(i, j) = acc;
    }
  }
  return c;
}

// C = A^T * B
inline Matrix matmul_transposed_lhs(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_transposed_lhs: (" + shape_str(a) + ")^T * " + shape_str(b));
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto arow = a.row(k);
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      auto crow = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

inline Vector softmax(std::span<const double> logits) {
  Vector out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

// dX[i,j] = Y[i,j] * (dY[i,j] - sum_k dY[i,k] Y[i,k]) for Y = softmax_rows(X)
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs) {
  if (!probs.same_shape(dprobs)) throw DimensionError("softmax_rows_backward: shape mismatch");
  Matrix dx(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto y = probs.row(r);
    const auto dy = dprobs.row(r);
    double dot = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) dot += dy[k] * y[k];
    auto out = dx.row(r);
    for (std::size_t k = 0; k < y.size(); ++k) out[k] = y[k] * (dy[k] - dot);
  }
  return dx;
}

inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// GradTape: records primitive applications during the forward pass and
// replays their vector-Jacobian products in exact reverse order.
//
// Nodes are either borrowed (constants and parameters referencing external
// storage, never copied) or owned intermediates. Parameter nodes accumulate
// their gradient straight into a caller-provided sink.

class GradTape {
 public:
  struct Var {
    std::size_t id;
  };

  Var constant(const Matrix& m) { return push_borrowed(&m, nullptr); }
  Var parameter(const Matrix& m, Matrix& grad_sink) {
    if (!m.same_shape(grad_sink)) {
      throw DimensionError("GradTape::parameter: sink " + shape_str(grad_sink) + " vs value " +
                           shape_str(m));
    }
    return push_borrowed(&m, &grad_sink);
  }
  Var input(Matrix m) { return push_owned(std::move(m), false); }

  const Matrix& value(Var v) const { return node_value(nodes_[v.id]); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient buffer of a node; lazily zero-initialised. Seed outputs by
  // adding into this before calling backward().
  Matrix& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.sink) return *n.sink;
    if (n.grad.empty() && !node_value(n).empty()) {
      n.grad = Matrix(node_value(n).rows(), node_value(n).cols());
    }
    return n.grad;
  }

  std::size_t size() const { return steps_.size(); }

  // Y = X * W + 1 b   (X: r x din, W: din x dout, b: 1 x dout)
  Var linear(Var x, Var w, Var b) {
    const Matrix& X = value(x);
    const Matrix& W = value(w);
    const Matrix& B = value(b);
    if (X.cols() != W.rows() || B.rows() != 1 || B.cols() != W.cols()) {
      throw DimensionError("linear: x[" + shape_str(X) + "] weight[" + shape_str(W) + "] bias[" +
                           shape_str(B) + "]");
    }
    Matrix y = ccbm::matmul(X, W);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      for (std::size_t j = 0; j < y.cols(); ++j) yr[j] += B(0, j);
    }
    const Var out = push_owned(std::move(y), any_grad({x, w, b}));
    record(out, [this, x, w, b, out] {
      const Matrix& dy = grad(out);
      if (requires_grad(x)) grad(x) += ccbm::matmul_transposed(dy, value(w));
      if (requires_grad(w)) grad(w) += ccbm::matmul_transposed_lhs(value(x), dy);
      if (requires_grad(b)) {
        Matrix& db = grad(b);
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t j = 0; j < dy.cols(); ++j) db(0, j) += dy(r, j);
      }
    });
    return out;
  }

  Var matmul(Var a, Var b) {
    const Var out = push_owned(ccbm::matmul(value(a), value(b)), any_grad({a, b}));
    record(out, [this, a, b, out] {
      const Matrix& dc = grad(out);
      if (requires_grad(a)) grad(a) += ccbm::matmul_transposed(dc, value(b));
      if (requires_grad(b)) grad(b) += ccbm::matmul_transposed_lhs(value(a), dc);
    });
    return out;
  }

  // A * B^T
  Var matmul_transposed(Var a, Var b) {
    const Var out = push_owned(ccbm::matmul_transposed(value(a), value(b)), any_grad({a, b}));
    record(out, [this, a, b, out] {
      const Matrix& dc = grad(out);
      if (requires_grad(a)) grad(a) += ccbm::matmul(dc, value(b));
      if (requires_grad(b)) grad(b) += ccbm::matmul_transposed_lhs(dc, value(a));
    });
    return out;
  }

  Var scale(Var a, double s) {
    Matrix y = value(a);
    for (double& v : y.data()) v *= s;
    const Var out = push_owned(std::move(y), any_grad({a}));
    record(out, [this, a, s, out] {
      if (!requires_grad(a)) return;
      const Matrix& dy = grad(out);
      Matrix& da = grad(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da.data()[i] += s * dy.data()[i];
    });
    return out;
  }

  Var softmax_rows(Var a) {
    const Var out = push_owned(ccbm::softmax_rows(value(a)), any_grad({a}));
    record(out, [this, a, out] {
      if (requires_grad(a)) grad(a) += ccbm::softmax_rows_backward(value(out), grad(out));
    });
    return out;
  }

  Var transpose(Var a) {
    const Var out = push_owned(ccbm::transpose(value(a)), any_grad({a}));
    record(out, [this, a, out] {
      if (requires_grad(a)) grad(a) += ccbm::transpose(grad(out));
    });
    return out;
  }

  // out[r, 0] = a[r, :] . w[r, :] + b[r, 0]
  Var row_dot(Var a, Var w, Var b) {
    const Matrix& A = value(a);
    const Matrix& W = value(w);
    const Matrix& B = value(b);
    if (!A.same_shape(W) || B.rows() != A.rows() || B.cols() != 1) {
      throw DimensionError("row_dot: a[" + shape_str(A) + "] w[" + shape_str(W) + "] b[" +
                           shape_str(B) + "]");
    }
    Matrix y(A.rows(), 1);
    for (std::size_t r = 0; r < A.rows(); ++r) y(r, 0) = dot(A.row(r), W.row(r)) + B(r, 0);
    const Var out = push_owned(std::move(y), any_grad({a, w, b}));
    record(out, [this, a, w, b, out] {
      const Matrix& dy = grad(out);
      const Matrix& A = value(a);
      const Matrix& W = value(w);
      for (std::size_t r = 0; r < A.rows(); ++r) {
        const double g = dy(r, 0);
        if (requires_grad(a)) {
          auto da = grad(a).row(r);
          for (std::size_t j = 0; j < A.cols(); ++j) da[j] += g * W(r, j);
        }
        if (requires_grad(w)) {
          auto dw = grad(w).row(r);
          for (std::size_t j = 0; j < A.cols(); ++j) dw[j] += g * A(r, j);
        }
        if (requires_grad(b)) grad(b)(r, 0) += g;
      }
    });
    return out;
  }

  Var concat_rows(std::span<const Var> parts) {
    std::size_t rows = 0;
    std::size_t cols = parts.empty() ? 0 : value(parts[0]).cols();
    for (Var p : parts) {
      if (value(p).cols() != cols) throw DimensionError("concat_rows: column mismatch");
      rows += value(p).rows();
    }
    Matrix y(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const auto& src = value(p).data();
      std::copy(src.begin(), src.end(), y.data().begin() + static_cast<std::ptrdiff_t>(off));
      off += src.size();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    const Var out = push_owned(std::move(y), any_grad(saved));
    record(out, [this, saved, out] {
      const auto& dy = grad(out).data();
      std::size_t off = 0;
      for (Var p : saved) {
        const std::size_t n = value(p).size();
        if (requires_grad(p)) {
          auto& dp = grad(p).data();
          for (std::size_t i = 0; i < n; ++i) dp[i] += dy[off + i];
        }
        off += n;
      }
    });
    return out;
  }

  Var concat_cols(std::span<const Var> parts) {
    std::size_t rows = parts.empty() ? 0 : value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw DimensionError("concat_cols: row mismatch");
      cols += value(p).cols();
    }
    Matrix y(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const Matrix& src = value(p);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < src.cols(); ++j) y(r, off + j) = src(r, j);
      off += src.cols();
    }
    std::vector<Var> saved(parts.begin(), parts.end());
    const Var out = push_owned(std::move(y), any_grad(saved));
    record(out, [this, saved, out] {
      const Matrix& dy = grad(out);
      std::size_t off = 0;
      for (Var p : saved) {
        const std::size_t c = value(p).cols();
        if (requires_grad(p)) {
          Matrix& dp = grad(p);
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j) dp(r, j) += dy(r, off + j);
        }
        off += c;
      }
    });
    return out;
  }

  // Reverse sweep over every recorded primitive, then the tape is reset.
  void backward() {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      if (it->fn) it->fn();
    }
    clear();
  }

  void clear() {
    steps_.clear();
    nodes_.clear();
  }

 private:
  struct Node {
    const Matrix* borrowed = nullptr;
    Matrix owned;
    Matrix grad;
    Matrix* sink = nullptr;
    bool requires_grad = false;
  };
  struct Step {
    std::function<void()> fn;
  };

  static const Matrix& node_value(const Node& n) { return n.borrowed ? *n.borrowed : n.owned; }

  Var push_borrowed(const Matrix* m, Matrix* sink) {
    Node n;
    n.borrowed = m;
    n.sink = sink;
    n.requires_grad = sink != nullptr;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }
  Var push_owned(Matrix m, bool requires_grad) {
    Node n;
    n.owned = std::move(m);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }
  bool any_grad(std::initializer_list<Var> vars) const {
    return std::any_of(vars.begin(), vars.end(), [this](Var v) { return requires_grad(v); });
  }
  bool any_grad(const std::vector<Var>& vars) const {
    return std::any_of(vars.begin(), vars.end(), [this](Var v) { return requires_grad(v); });
  }
  template <class F>
  void record(Var out, F&& fn) {
    // Steps are kept even without gradient flow so size() reflects every
    // primitive applied; their closures are simply empty.
    steps_.push_back(Step{requires_grad(out) ? std::function<void()>(std::forward<F>(fn))
                                             : std::function<void()>()});
  }

  std::deque<Node> nodes_;
  std::vector<Step> steps_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::size_t> flagged;  // coordinates whose error exceeds tol
  double tolerance = 0.0;

  bool passed() const { return flagged.empty(); }
};

// Relative error is |a - n| / max(|a|, |n|, scale_floor); the floor keeps
// near-zero gradients from turning roundoff into large ratios.
inline GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss_fn,
                                  std::span<const double> params,
                                  std::span<const double> analytic, double h, double tol,
                                  double scale_floor = 1e-6) {
  if (params.size() != analytic.size()) {
    throw DimensionError("grad_check: params[" + std::to_string(params.size()) + "] analytic[" +
                         std::to_string(analytic.size()) + "]");
  }
  GradCheckReport report;
  report.tolerance = tol;
  std::vector<double> probe(params.begin(), params.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = loss_fn(probe);
    probe[i] = orig - h;
    const double down = loss_fn(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), scale_floor});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > tol || !std::isfinite(rel)) report.flagged.push_back(i);
    if (rel > report.max_rel_error || !std::isfinite(rel)) {
      report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace ccbm
