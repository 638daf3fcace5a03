#pragma once

// Dense real linear algebra, randomness helpers, central-difference
// gradients and log-log slope fitting. Everything is double precision.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "odenet/errors.hpp"

namespace odenet {

// ---------------------------------------------------------------------------
// Vector
// ---------------------------------------------------------------------------

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double value = 0.0) : data_(dim, value) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  Vector& operator+=(const Vector& other) {
    check_same(other);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Vector& operator-=(const Vector& other) {
    check_same(other);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }
  Vector& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  /// this += s * other
  Vector& axpy(double s, const Vector& other) {
    check_same(other);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
    return *this;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  void check_same(const Vector& other) const {
    if (other.dim() != dim()) {
      throw InvalidInput("vector dimension mismatch: " + std::to_string(dim()) + " vs " +
                         std::to_string(other.dim()));
    }
  }

  std::vector<double> data_;
};

inline Vector operator+(Vector a, const Vector& b) { return a += b; }
inline Vector operator-(Vector a, const Vector& b) { return a -= b; }
inline Vector operator*(double s, Vector a) { return a *= s; }
inline Vector operator*(Vector a, double s) { return a *= s; }
inline Vector operator-(Vector a) { return a *= -1.0; }

inline double dot(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim()) throw InvalidInput("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vector& a) { return std::sqrt(dot(a, a)); }

inline double distance(const Vector& a, const Vector& b) { return norm(a - b); }

// ---------------------------------------------------------------------------
// Matrix (row-major)
// ---------------------------------------------------------------------------

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major)
      : rows_(rows), cols_(cols), data_(std::move(row_major)) {
    if (data_.size() != rows * cols) throw InvalidInput("matrix: entry count does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw InvalidInput("matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> flat() const noexcept { return data_; }
  std::span<double> flat() noexcept { return data_; }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  double trace() const {
    if (!square()) throw InvalidInput("trace of a non-square matrix");
    double s = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) s += (*this)(i, i);
    return s;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix& operator+=(const Matrix& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  Matrix& axpy(double s, const Matrix& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void check_same(const Matrix& o) const {
    if (o.rows_ != rows_ || o.cols_ != cols_) throw InvalidInput("matrix shape mismatch");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw InvalidInput("matrix product: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

inline Vector operator*(const Matrix& a, const Vector& x) {
  if (a.cols() != x.dim()) throw InvalidInput("matrix-vector product: dimension mismatch");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

/// Aᵀ x without forming the transpose.
inline Vector transpose_times(const Matrix& a, const Vector& x) {
  if (a.rows() != x.dim()) throw InvalidInput("transpose product: dimension mismatch");
  Vector y(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * xi;
  }
  return y;
}

/// v wᵀ
inline Matrix outer(const Vector& v, const Vector& w) {
  Matrix m(v.dim(), w.dim());
  for (std::size_t i = 0; i < v.dim(); ++i)
    for (std::size_t j = 0; j < w.dim(); ++j) m(i, j) = v[i] * w[j];
  return m;
}

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.flat()) s += v * v;
  return std::sqrt(s);
}

/// Largest singular value by power iteration on AᵀA.
///
/// The primary start vector is the normalized all-ones vector. Two further
/// deterministic starts (alternating signs, linear ramp) guard against a start
/// orthogonal to the dominant right singular vector; the largest Rayleigh
/// estimate wins. Each run stops on a relative change below 1e-12 or after
/// 10 000 iterations.
inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) throw InvalidInput("spectral_norm: empty matrix");
  if (!m.all_finite()) throw InvalidInput("spectral_norm: non-finite entries");

  const std::size_t n = m.cols();
  constexpr int kMaxIterations = 10000;
  constexpr double kRelTol = 1e-12;

  auto run = [&](Vector v) {
    const double v_norm = norm(v);
    if (v_norm == 0.0) return 0.0;
    v *= 1.0 / v_norm;
    double sigma = norm(m * v);
    for (int it = 0; it < kMaxIterations; ++it) {
      Vector w = transpose_times(m, m * v);
      const double w_norm = norm(w);
      if (w_norm == 0.0) return 0.0;
      v = (1.0 / w_norm) * std::move(w);
      const double next = norm(m * v);
      const bool done = std::abs(next - sigma) <= kRelTol * std::max(next, 1e-300);
      sigma = next;
      if (done) break;
    }
    return sigma;
  };

  Vector ones(n, 1.0);
  Vector alternating(n);
  Vector ramp(n);
  for (std::size_t i = 0; i < n; ++i) {
    alternating[i] = (i % 2 == 0) ? 1.0 : -1.0;
    ramp[i] = static_cast<double>(i + 1);
  }
  double best = run(std::move(ones));
  if (n > 1) {
    best = std::max(best, run(std::move(alternating)));
    best = std::max(best, run(std::move(ramp)));
  }
  return best;
}

/// Eigenvalues of a symmetric matrix, ascending (cyclic Jacobi rotations).
inline std::vector<double> symmetric_eigenvalues(const Matrix& input) {
  if (!input.square()) throw InvalidInput("symmetric_eigenvalues: matrix is not square");
  if (!input.all_finite()) throw InvalidInput("symmetric_eigenvalues: non-finite entries");
  const std::size_t n = input.rows();
  Matrix a = input;
  const double scale = std::max(frobenius_norm(a), 1e-300);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-15 * scale) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

/// Largest singular value as sqrt(λ_max(AᵀA)) via Jacobi. Exact to rounding
/// and independent of the singular-value gap, which makes it the cheaper
/// choice for small matrices whose top singular values nearly coincide.
inline double largest_singular_value(const Matrix& m) {
  if (m.size() == 0) throw InvalidInput("largest_singular_value: empty matrix");
  if (!m.all_finite()) throw InvalidInput("largest_singular_value: non-finite entries");
  const std::vector<double> eig = symmetric_eigenvalues(m.transpose() * m);
  return std::sqrt(std::max(eig.back(), 0.0));
}

// ---------------------------------------------------------------------------
// Slope fitting
// ---------------------------------------------------------------------------

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t points_used = 0;
};

struct DepthError {
  std::size_t depth = 0;
  double error = 0.0;
};

/// Ordinary least squares of log(error) against log(depth).
inline SlopeFit fit_loglog_slope(std::span<const DepthError> points) {
  if (points.size() < 2) throw InvalidInput("fit_loglog_slope: need at least two points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].depth < 1) throw InvalidInput("fit_loglog_slope: depth must be >= 1");
    if (!(points[i].error > 0.0) || !std::isfinite(points[i].error))
      throw InvalidInput("fit_loglog_slope: errors must be positive and finite");
    if (i > 0 && points[i].depth <= points[i - 1].depth)
      throw InvalidInput("fit_loglog_slope: depths must be strictly increasing");
  }
  const double k = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : points) {
    mx += std::log(static_cast<double>(p.depth));
    my += std::log(p.error);
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : points) {
    const double dx = std::log(static_cast<double>(p.depth)) - mx;
    const double dy = std::log(p.error) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.points_used = points.size();
  if (syy <= 0.0) {
    fit.r_squared = 1.0;
  } else {
    double ss_res = 0.0;
    for (const auto& p : points) {
      const double r = std::log(p.error) - (fit.intercept + fit.slope * std::log(static_cast<double>(p.depth)));
      ss_res += r * r;
    }
    fit.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

inline SlopeFit fit_loglog_slope(std::initializer_list<DepthError> points) {
  return fit_loglog_slope(std::span<const DepthError>(points.begin(), points.size()));
}

/// True when an error is indistinguishable from rounding noise at the given
/// trajectory magnitude (below 100 machine epsilons relative to it).
inline bool below_noise_floor(double error, double magnitude) {
  return error < 100.0 * std::numeric_limits<double>::epsilon() * std::max(magnitude, 1.0);
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

using ScalarLoss = std::function<double(const Vector&)>;

/// Central differences (loss(p + eps e_i) - loss(p - eps e_i)) / (2 eps).
inline Vector finite_difference_gradient(const ScalarLoss& loss, const Vector& params, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("finite_difference_gradient: eps must be positive");
  Vector grad(params.dim());
  Vector probe = params;
  for (std::size_t i = 0; i < params.dim(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = loss(probe);
    probe[i] = saved - eps;
    const double down = loss(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw EvaluationError("finite_difference_gradient: non-finite loss at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline Vector random_uniform_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline Vector random_normal_vector(Rng& rng, std::size_t n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline Vector random_unit_vector(Rng& rng, std::size_t n) {
  for (;;) {
    Vector v = random_normal_vector(rng, n);
    const double r = norm(v);
    if (r > 1e-12) return (1.0 / r) * std::move(v);
  }
}

/// Uniform sample from the closed Euclidean ball of the given radius.
inline Vector random_in_ball(Rng& rng, std::size_t n, double radius) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector dir = random_unit_vector(rng, n);
  const double r = radius * std::pow(unit(rng), 1.0 / static_cast<double>(n));
  return r * std::move(dir);
}

inline Matrix random_uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& x : m.flat()) x = dist(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

/// Shortest round-trip decimal representation; identical across runs.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf.data(), ptr);
}

}  // namespace odenet
