#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "odenet/numerics.hpp"

using namespace odenet;

namespace {

// Closed-form largest singular value of a 2x2 matrix.
double sigma_max_2x2(double a, double b, double c, double d) {
  const double t = a * a + b * b + c * c + d * d;
  const double det = a * d - b * c;
  return std::sqrt(0.5 * (t + std::sqrt(t * t - 4.0 * det * det)));
}

// Eigenvalues of a symmetric 3x3 matrix from its characteristic cubic
// (trigonometric solution), ascending.
std::vector<double> cubic_eigenvalues(const Matrix& a) {
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  const double q = a.trace() / 3.0;
  const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) + (a(2, 2) - q) * (a(2, 2) - q) +
                    2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  Matrix b = a;
  for (int i = 0; i < 3; ++i) b(i, i) -= q;
  b *= 1.0 / p;
  const double det_b = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) -
                       b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0)) +
                       b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
  const double r = std::clamp(det_b / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  const double e2 = 3.0 * q - e1 - e3;
  std::vector<double> out{e1, e2, e3};
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Vector, ArithmeticAndShapeChecks) {
  const Vector a{1.0, 2.0};
  const Vector b{3.0, -1.0};
  EXPECT_DOUBLE_EQ(dot(a, b), 1.0);
  EXPECT_DOUBLE_EQ((a + b)[0], 4.0);
  EXPECT_DOUBLE_EQ((2.0 * a)[1], 4.0);
  EXPECT_DOUBLE_EQ(norm(Vector{3.0, 4.0}), 5.0);
  EXPECT_THROW(a + Vector{1.0}, InvalidInput);
}

TEST(Matrix, ProductsAndTranspose) {
  const Matrix a{{1.0, 2.0}, {3.0, 4.0}};
  const Matrix b{{0.0, 1.0}, {1.0, 0.0}};
  const Matrix ab = a * b;
  EXPECT_DOUBLE_EQ(ab(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(ab(1, 1), 3.0);
  EXPECT_DOUBLE_EQ(a.transpose()(0, 1), 3.0);
  const Vector x{1.0, 1.0};
  EXPECT_DOUBLE_EQ((a * x)[1], 7.0);
  EXPECT_DOUBLE_EQ(transpose_times(a, x)[0], 4.0);
  EXPECT_THROW(a * Matrix(3, 3), InvalidInput);
}

TEST(SpectralNorm, IdentityAndDiagonal) {
  EXPECT_NEAR(spectral_norm(Matrix::identity(3)), 1.0, 1e-12);
  const std::vector<double> d{3.0, 1.0};
  EXPECT_NEAR(spectral_norm(Matrix::diagonal(d)), 3.0, 1e-12);
}

TEST(SpectralNorm, MatchesClosedForm2x2) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = random_uniform_matrix(rng, 2, 2, -1.0, 1.0);
    const double expected = sigma_max_2x2(m(0, 0), m(0, 1), m(1, 0), m(1, 1));
    EXPECT_NEAR(spectral_norm(m), expected, 1e-10 * expected);
    EXPECT_NEAR(largest_singular_value(m), expected, 1e-10 * expected);
  }
}

TEST(SpectralNorm, StartOrthogonalToOnes) {
  // The dominant right singular vector is (1, -1), orthogonal to the default start.
  const Matrix m{{1.0, -1.0}, {-1.0, 1.0}};
  EXPECT_NEAR(spectral_norm(m), 2.0, 1e-10);
}

TEST(SpectralNorm, TransposeInvariantAndSubmultiplicative) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_uniform_matrix(rng, 5, 5, -1.0, 1.0);
    const Matrix b = random_uniform_matrix(rng, 5, 5, -1.0, 1.0);
    const double na = spectral_norm(a);
    EXPECT_NEAR(na, spectral_norm(a.transpose()), 1e-10 * na);
    EXPECT_LE(spectral_norm(a * b), na * spectral_norm(b) + 1e-9);
  }
}

TEST(SpectralNorm, RejectsBadInput) {
  EXPECT_THROW(spectral_norm(Matrix()), InvalidInput);
  Matrix m = Matrix::identity(2);
  m(0, 1) = std::nan("");
  EXPECT_THROW(spectral_norm(m), InvalidInput);
}

TEST(SpectralNorm, Deterministic) {
  Rng rng(3);
  const Matrix m = random_uniform_matrix(rng, 4, 3, -1.0, 1.0);
  EXPECT_EQ(spectral_norm(m), spectral_norm(m));
}

TEST(SymmetricEigenvalues, MatchCharacteristicPolynomial) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_uniform_matrix(rng, 3, 3, -1.0, 1.0);
    Matrix s = a.transpose() * a;
    for (int i = 0; i < 3; ++i) s(i, i) += 0.1;
    const auto got = symmetric_eigenvalues(s);
    const auto want = cubic_eigenvalues(s);
    ASSERT_EQ(got.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(got[i], want[i], 1e-8);
  }
}

TEST(FitLogLogSlope, ExactPowerLaws) {
  EXPECT_NEAR(fit_loglog_slope({{10, 0.1}, {100, 0.01}, {1000, 0.001}}).slope, -1.0, 1e-12);
  EXPECT_NEAR(fit_loglog_slope({{10, 1e-2}, {100, 1e-4}}).slope, -2.0, 1e-12);
  for (int k : {-3, -2, -1, 0}) {
    std::vector<DepthError> pts;
    for (std::size_t n = 16; n <= 1024; n *= 2) pts.push_back({n, 2.5 * std::pow(static_cast<double>(n), k)});
    const SlopeFit fit = fit_loglog_slope(pts);
    EXPECT_NEAR(fit.slope, k, 1e-10);
    EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
    EXPECT_NEAR(std::exp(fit.intercept), 2.5, 1e-9);
  }
}

TEST(FitLogLogSlope, MixedOrderSequence) {
  std::vector<DepthError> pts;
  for (std::size_t n = 16; n <= 1024; n *= 2) {
    const double x = static_cast<double>(n);
    pts.push_back({n, 1.0 / x + 10.0 / (x * x)});
  }
  const double slope = fit_loglog_slope(pts).slope;
  EXPECT_GT(slope, -1.3);
  EXPECT_LT(slope, -1.0);
}

TEST(FitLogLogSlope, RejectsInvalidPoints) {
  EXPECT_THROW(fit_loglog_slope({{10, 0.1}}), InvalidInput);
  EXPECT_THROW(fit_loglog_slope({{10, 0.1}, {100, 0.0}}), InvalidInput);
  EXPECT_THROW(fit_loglog_slope({{10, 0.1}, {100, -1.0}}), InvalidInput);
  EXPECT_THROW(fit_loglog_slope({{100, 0.1}, {10, 0.01}}), InvalidInput);
  EXPECT_THROW(fit_loglog_slope({{0, 0.1}, {10, 0.01}}), InvalidInput);
}

TEST(NoiseFloor, RelativeToMagnitude) {
  EXPECT_TRUE(below_noise_floor(1e-15, 1.0));
  EXPECT_FALSE(below_noise_floor(1e-12, 1.0));
  EXPECT_FALSE(below_noise_floor(1e-13, 0.01));
  EXPECT_TRUE(below_noise_floor(1e-12, 100.0));
}

TEST(FiniteDifference, Quadratic) {
  const Vector g = finite_difference_gradient([](const Vector& p) { return dot(p, p); }, Vector{1.0, 2.0}, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-9);
  EXPECT_NEAR(g[1], 4.0, 1e-9);
}

TEST(FiniteDifference, Linear) {
  const Vector a{0.5, -3.0, 2.0};
  const Vector g = finite_difference_gradient([&](const Vector& p) { return dot(a, p); }, Vector{4.0, -1.0, 7.0}, 1e-4);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], a[i], 1e-10);
}

TEST(FiniteDifference, TwoLayerScalarChain) {
  // x_2 for the depth-2 scalar chain x_{n+1} = x_n + θ_n x_n / 2 from x_0 = 1.
  auto chain = [](const Vector& th) { return (1.0 + th[0] / 2.0) * (1.0 + th[1] / 2.0); };
  const Vector g = finite_difference_gradient(chain, Vector{1.0, 1.0}, 1e-6);
  EXPECT_NEAR(g[0], 0.75, 1e-8);
  EXPECT_NEAR(g[1], 0.75, 1e-8);
}

TEST(FiniteDifference, CubicErrorIsSecondOrder) {
  auto f = [](const Vector& p) { return p[0] * p[0] * p[0] + 2.0 * p[0] * p[1] * p[1]; };
  const Vector p{0.7, -1.3};
  const double exact0 = 3.0 * p[0] * p[0] + 2.0 * p[1] * p[1];
  const double e1 = std::abs(finite_difference_gradient(f, p, 1e-2)[0] - exact0);
  const double e2 = std::abs(finite_difference_gradient(f, p, 5e-3)[0] - exact0);
  EXPECT_NEAR(e1, 1e-4, 1e-8);  // eps² from the cubic term
  EXPECT_NEAR(e1 / e2, 4.0, 1e-3);
}

TEST(FiniteDifference, PropagatesNonFiniteLoss) {
  auto f = [](const Vector& p) { return p[0] > 0.0 ? std::log(-1.0) : 0.0; };
  EXPECT_THROW(finite_difference_gradient(f, Vector{0.0}, 1e-3), EvaluationError);
  EXPECT_THROW(finite_difference_gradient(f, Vector{0.0}, 0.0), InvalidInput);
}

TEST(Random, SeededStreamsRepeat) {
  Rng a(42), b(42);
  const Vector u = random_unit_vector(a, 5);
  const Vector v = random_unit_vector(b, 5);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(u[i], v[i]);
  EXPECT_NEAR(norm(u), 1.0, 1e-14);
  Rng c(1);
  for (int k = 0; k < 100; ++k) EXPECT_LE(norm(random_in_ball(c, 3, 2.0)), 2.0);
}

TEST(FormatDouble, RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) EXPECT_EQ(std::stod(format_double(v)), v);
}
