#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "modeq/errors.hpp"

namespace modeq {

/// Dense n-dimensional array of 64-bit floats, row-major.
///
/// The sole numeric carrier of the library. Tensors are plain values:
/// copyable, comparable, immutable by convention once handed to another
/// component. Matrix operations require rank 2; pointwise operations accept
/// any rank.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw DimensionError("Tensor: shape " + shape_str() + " needs " +
                           std::to_string(checked_size(shape_)) +
                           " entries, got " + std::to_string(data_.size()));
    }
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(std::vector<int> shape) { return full(std::move(shape), 1.0); }

  /// 1x1 tensor; the representation of scalars on the tape.
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  /// Row-major 2-d literal, e.g. Tensor::matrix({{1,2},{3,4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(r) * c);
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c) {
        throw DimensionError("Tensor::matrix: ragged rows");
      }
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  int rows() const { require_matrix("rows"); return shape_[0]; }
  int cols() const { require_matrix("cols"); return shape_[1]; }
  bool is_matrix() const { return shape_.size() == 2; }
  bool is_scalar() const { return size() == 1; }

  double scalar_value() const {
    if (!is_scalar()) {
      throw DimensionError("scalar_value: tensor has shape " + shape_str());
    }
    return data_[0];
  }

  double& operator()(int r, int c) { return data_[flat(r, c)]; }
  double operator()(int r, int c) const { return data_[flat(r, c)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    if (shape_.empty()) return "()";
    std::ostringstream os;
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << "x";
      os << shape_[i];
    }
    return os.str();
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw DimensionError("Tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

  void require_matrix(const char* op) const {
    if (shape_.size() != 2) {
      throw DimensionError(std::string(op) + ": tensor has shape " + shape_str() +
                           ", expected rank 2");
    }
  }

  std::size_t flat(int r, int c) const {
    return static_cast<std::size_t>(r) * shape_[1] + c;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  }
}

// ---------------------------------------------------------------------------
// Matrix kernels. These are the single source of arithmetic for both the
// gradient tape and the tape-free evaluation paths, so the two stay
// bit-identical.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  const int r = a.rows(), k = a.cols(), c = b.cols();
  Tensor out({r, c});
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  for (int i = 0; i < r; ++i) {
    const double* arow = ad + static_cast<std::size_t>(i) * k;
    double* orow = od + static_cast<std::size_t>(i) * c;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = bd + static_cast<std::size_t>(p) * c;
      for (int j = 0; j < c; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  Tensor out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(j, i) = a(i, j);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return out;
}

/// column-broadcast add: m is d x m, col is d x 1.
inline Tensor add_col_broadcast(const Tensor& m, const Tensor& col) {
  if (!m.is_matrix() || !col.is_matrix() || col.cols() != 1 ||
      col.rows() != m.rows()) {
    throw DimensionError("add_col_broadcast: " + m.shape_str() + " vs " +
                         col.shape_str());
  }
  Tensor out = m;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) += col(i, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise activations
// ---------------------------------------------------------------------------

enum class Pointwise { sigmoid, tanh, relu };

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return out;
}

inline Tensor tanh_elem(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return out;
}

inline Tensor pointwise(Pointwise op, const Tensor& x) {
  switch (op) {
    case Pointwise::sigmoid: return sigmoid(x);
    case Pointwise::tanh: return tanh_elem(x);
    case Pointwise::relu: return relu(x);
  }
  throw ConfigError("pointwise: unknown op");
}

// ---------------------------------------------------------------------------
// Row/column utilities
// ---------------------------------------------------------------------------

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.cols()) {
    throw DimensionError("concat_rows: " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor out({a.rows() + b.rows(), a.cols()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
  for (int i = 0; i < b.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) out(a.rows() + i, j) = b(i, j);
  return out;
}

inline std::pair<Tensor, Tensor> split_rows(const Tensor& x, int top) {
  if (top <= 0 || top >= x.rows()) {
    throw DimensionError("split_rows: cut " + std::to_string(top) + " outside " +
                         x.shape_str());
  }
  Tensor a({top, x.cols()});
  Tensor b({x.rows() - top, x.cols()});
  for (int i = 0; i < top; ++i)
    for (int j = 0; j < x.cols(); ++j) a(i, j) = x(i, j);
  for (int i = top; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) b(i - top, j) = x(i, j);
  return {std::move(a), std::move(b)};
}

/// Euclidean norm of every column, returned as a 1 x m row.
inline Tensor column_norms(const Tensor& x) {
  Tensor out({1, x.cols()});
  for (int j = 0; j < x.cols(); ++j) {
    double s = 0.0;
    for (int i = 0; i < x.rows(); ++i) s += x(i, j) * x(i, j);
    out(0, j) = std::sqrt(s);
  }
  return out;
}

/// Columns scaled to unit norm; zero-norm columns stay zero. `zero_cols`,
/// when given, receives the number of zero-norm columns encountered.
inline Tensor normalize_columns(const Tensor& x, int* zero_cols = nullptr) {
  Tensor norms = column_norms(x);
  Tensor out = x;
  int zeroes = 0;
  for (int j = 0; j < x.cols(); ++j) {
    const double n = norms(0, j);
    if (n == 0.0) {
      ++zeroes;
      continue;
    }
    for (int i = 0; i < x.rows(); ++i) out(i, j) /= n;
  }
  if (zero_cols) *zero_cols = zeroes;
  return out;
}

inline Tensor mean_column(const Tensor& x) {
  Tensor out({x.rows(), 1});
  for (int i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols(); ++j) s += x(i, j);
    out(i, 0) = s / x.cols();
  }
  return out;
}

/// Every column set to `col` (d x 1), m copies.
inline Tensor broadcast_column(const Tensor& col, int m) {
  if (!col.is_matrix() || col.cols() != 1) {
    throw DimensionError("broadcast_column: expected d x 1, got " + col.shape_str());
  }
  Tensor out({col.rows(), m});
  for (int i = 0; i < col.rows(); ++i)
    for (int j = 0; j < m; ++j) out(i, j) = col(i, 0);
  return out;
}

inline Tensor gather_columns(const Tensor& x, const std::vector<int>& idx) {
  Tensor out({x.rows(), static_cast<int>(idx.size())});
  for (std::size_t j = 0; j < idx.size(); ++j)
    for (int i = 0; i < x.rows(); ++i) out(i, static_cast<int>(j)) = x(i, idx[j]);
  return out;
}

inline void scatter_columns(Tensor& dst, const std::vector<int>& idx, const Tensor& src) {
  if (src.cols() != static_cast<int>(idx.size()) || src.rows() != dst.rows()) {
    throw DimensionError("scatter_columns: " + src.shape_str() + " into " +
                         dst.shape_str());
  }
  for (std::size_t j = 0; j < idx.size(); ++j)
    for (int i = 0; i < dst.rows(); ++i) dst(i, idx[j]) = src(i, static_cast<int>(j));
}

inline Tensor set_diag_one(Tensor c) {
  if (!c.is_matrix() || c.rows() != c.cols()) {
    throw DimensionError("set_diag_one: expected square matrix, got " + c.shape_str());
  }
  for (int i = 0; i < c.rows(); ++i) c(i, i) = 1.0;
  return c;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline double sum_all(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  return s;
}

inline double mean_all(const Tensor& x) { return sum_all(x) / static_cast<double>(x.size()); }

inline double max_all(const Tensor& x) {
  double m = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) m = std::max(m, x[i]);
  return m;
}

inline double fraction_positive(const Tensor& x) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0) ++c;
  return static_cast<double>(c) / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Classification helpers. Logits for losses are sample-major (m x K); the
// model side produces class-major (K x m) feature maps, so predictions come
// in both layouts.
// ---------------------------------------------------------------------------

/// Softmax over classes for a K x m logits matrix (per column).
inline Tensor softmax_cols(const Tensor& logits) {
  Tensor out = logits;
  for (int j = 0; j < logits.cols(); ++j) {
    double mx = logits(0, j);
    for (int i = 1; i < logits.rows(); ++i) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (int i = 0; i < logits.rows(); ++i) {
      out(i, j) = std::exp(logits(i, j) - mx);
      z += out(i, j);
    }
    for (int i = 0; i < logits.rows(); ++i) out(i, j) /= z;
  }
  return out;
}

/// Per-column argmax; ties break toward the lower class index.
inline std::vector<int> argmax_cols(const Tensor& x) {
  std::vector<int> out(x.cols());
  for (int j = 0; j < x.cols(); ++j) {
    int best = 0;
    for (int i = 1; i < x.rows(); ++i)
      if (x(i, j) > x(best, j)) best = i;
    out[j] = best;
  }
  return out;
}

inline void check_labels(const std::vector<int>& labels, int n_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) {
      throw LabelError("label " + std::to_string(labels[i]) + " out of range [0, " +
                       std::to_string(n_classes) + ") at index " + std::to_string(i));
    }
  }
}

/// Mean cross entropy of sample-major logits (m x K) against integer labels.
inline double cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
  const int m = logits.rows(), k = logits.cols();
  if (static_cast<int>(labels.size()) != m) {
    throw DimensionError("cross_entropy_mean: " + std::to_string(labels.size()) +
                         " labels for " + logits.shape_str() + " logits");
  }
  check_labels(labels, k);
  double loss = 0.0;
  for (int r = 0; r < m; ++r) {
    double mx = logits(r, 0);
    for (int c = 1; c < k; ++c) mx = std::max(mx, logits(r, c));
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(logits(r, c) - mx);
    loss += std::log(z) - (logits(r, labels[r]) - mx);
  }
  return loss / m;
}

/// d(mean cross entropy)/d(logits): (softmax - onehot) / m, sample-major.
inline Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels) {
  const int m = logits.rows(), k = logits.cols();
  Tensor g({m, k});
  for (int r = 0; r < m; ++r) {
    double mx = logits(r, 0);
    for (int c = 1; c < k; ++c) mx = std::max(mx, logits(r, c));
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(logits(r, c) - mx);
    for (int c = 0; c < k; ++c) g(r, c) = std::exp(logits(r, c) - mx) / z / m;
    g(r, labels[r]) -= 1.0 / m;
  }
  return g;
}

}  // namespace modeq
