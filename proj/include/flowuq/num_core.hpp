#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "flowuq/error.hpp"

namespace flowuq {

/// Probability vector over K classes. Validity (non-negative, sums to one) is
/// checked by `check_prob_vector` where it matters rather than by the type.
using ProbVector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionMismatch("matrix data length " + std::to_string(data_.size()) +
                              " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Copies the listed rows of `m` into a new matrix, in order.
inline Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense kernels. Loop orders are chosen so the innermost loop is contiguous.

/// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* bp = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c.row(i).data();
    const double* arow = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = bp + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionMismatch("matmul_tn: row counts differ");
  Matrix c(a.cols(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t r = 0; r < n; ++r) {
    const double* arow = a.row(r).data();
    const double* brow = b.row(r).data();
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c.row(i).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionMismatch("matmul_nt: column counts differ");
  Matrix c(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c(i, j) = s;
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

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// Random numbers.

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seeded generator owned by one component. Children obtained with `split`
/// depend only on the parent's seed and the stream id, never on how much of
/// the parent stream has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  Rng split(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
  }

  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal_(engine_); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  /// `k` distinct indices from [0, n), in sampling order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + index(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  std::mt19937_64& engine() noexcept { return engine_; }

  /// Full generator state as text; `restore` reproduces the stream exactly.
  std::string state() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_ << ' ' << normal_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> seed_ >> engine_ >> normal_;
    if (!is) throw FormatError("rng: cannot parse state");
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Probability kernels.

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw InvalidInput(std::string(what) + ": non-finite value");
}

inline void check_prob_vector(std::span<const double> p, double tol = 1e-9) {
  if (p.empty()) throw InvalidInput("probability vector is empty");
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0 + tol)) throw InvalidInput("probability entry outside [0, 1]");
    s += x;
  }
  if (std::abs(s - 1.0) > tol) throw InvalidInput("probabilities do not sum to one");
}

/// exp(l_i / T) / sum_j exp(l_j / T) with max shifting.
inline ProbVector softmax(std::span<const double> logits, double temperature = 1.0) {
  if (logits.empty()) throw InvalidInput("softmax: empty logits");
  if (!(temperature > 0.0)) throw InvalidInput("softmax: temperature must be positive");
  require_finite(logits, "softmax");
  const double mx = *std::max_element(logits.begin(), logits.end());
  ProbVector p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

/// T * log sum_i exp(v_i / T) with max shifting.
inline double log_sum_exp(std::span<const double> values, double temperature = 1.0) {
  if (values.empty()) throw InvalidInput("log_sum_exp: empty input");
  if (!(temperature > 0.0)) throw InvalidInput("log_sum_exp: temperature must be positive");
  require_finite(values, "log_sum_exp");
  const double mx = *std::max_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += std::exp((v - mx) / temperature);
  return mx + temperature * std::log(s);
}

/// Shannon entropy in nats, 0 ln 0 = 0.
inline double entropy(std::span<const double> p) {
  check_prob_vector(p);
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

/// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Linear algebra.

/// Largest singular value by power iteration on M^T M from a fixed seeded
/// start vector.
inline double spectral_norm(const Matrix& m, std::size_t iterations = 30) {
  if (m.empty()) throw InvalidInput("spectral_norm: empty matrix");
  if (iterations == 0) throw InvalidInput("spectral_norm: iterations must be positive");
  Rng rng(0x5EEDULL);
  std::vector<double> v(m.cols());
  for (double& x : v) x = rng.normal();
  std::vector<double> u(m.rows());
  double sigma = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    double vn = norm2(v);
    if (vn == 0.0) return 0.0;
    for (double& x : v) x /= vn;
    for (std::size_t i = 0; i < m.rows(); ++i) u[i] = dot(m.row(i), v);
    sigma = norm2(u);
    if (sigma == 0.0) return 0.0;
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const double ui = u[i];
      auto r = m.row(i);
      for (std::size_t j = 0; j < m.cols(); ++j) v[j] += ui * r[j];
    }
  }
  return sigma;
}

/// Lower Cholesky factor of a symmetric matrix, or nullopt when a pivot is not
/// strictly positive.
inline std::optional<Matrix> cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: matrix not square");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// Solves L y = b for lower-triangular L.
inline std::vector<double> forward_substitute(const Matrix& l, std::span<const double> b) {
  const std::size_t n = l.rows();
  if (b.size() != n) throw DimensionMismatch("forward_substitute: size mismatch");
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  return y;
}

}  // namespace flowuq
