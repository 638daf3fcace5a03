#include <gtest/gtest.h>

#include <sstream>
#include <vector>

#include "odenet/dynamics.hpp"
#include "odenet/residual_models.hpp"

using namespace odenet;

namespace {

std::vector<ResidualFamily> builtin_families() {
  return {make_linear_family(3), make_mlp_family(2, 4), make_square_family(), make_constant_family(2),
          make_zero_family(2)};
}

// ‖got - want‖ / ‖want‖, or the absolute gap when the reference vanishes.
double relative_gap(const Vector& got, const Vector& want) {
  const double scale = norm(want);
  return scale > 1e-9 ? distance(got, want) / scale : distance(got, want);
}

}  // namespace

TEST(WeightSchedule, ShapeInvariants) {
  EXPECT_THROW(WeightSchedule(std::vector<Vector>{}), InvalidInput);
  EXPECT_THROW(WeightSchedule({Vector{1.0}, Vector{1.0, 2.0}}), InvalidInput);
  EXPECT_THROW(WeightSchedule({Vector{std::nan("")}}), InvalidInput);
  EXPECT_THROW(WeightSchedule({Vector{1.0}}, Vector{1.0, 2.0}), InvalidInput);
}

TEST(WeightSchedule, PaddingAndTerminal) {
  const WeightSchedule padded({Vector{1.0}, Vector{2.0}});
  EXPECT_EQ(padded.extended(2)[0], 2.0);
  EXPECT_FALSE(padded.has_terminal());
  const WeightSchedule explicit_end({Vector{1.0}, Vector{2.0}}, Vector{5.0});
  EXPECT_EQ(explicit_end.extended(2)[0], 5.0);
  EXPECT_THROW(explicit_end.extended(3), InvalidInput);
}

TEST(LinearFamily, ScalarValues) {
  const ResidualFamily f = make_linear_family(1);
  const Vector x{3.0}, th{2.0}, one{1.0};
  EXPECT_DOUBLE_EQ(f.eval(x, th)[0], 6.0);
  EXPECT_DOUBLE_EQ(f.vjp_state(x, th, one)[0], 2.0);
  EXPECT_DOUBLE_EQ(f.vjp_params(x, th, one)[0], 3.0);
  EXPECT_DOUBLE_EQ(f.jac_state(x, th)(0, 0), 2.0);
}

TEST(LinearFamily, IdentityIsPassThrough) {
  const ResidualFamily f = make_linear_family(2);
  const Vector id{1.0, 0.0, 0.0, 1.0};
  const Vector x{-0.3, 4.2};
  const Vector y = f.eval(x, id);
  EXPECT_DOUBLE_EQ(y[0], x[0]);
  EXPECT_DOUBLE_EQ(y[1], x[1]);
}

TEST(LinearFamily, RejectsDimensionMismatch) {
  const ResidualFamily f = make_linear_family(2);
  EXPECT_THROW(f.eval(Vector{1.0}, Vector(4)), InvalidInput);
  EXPECT_THROW(f.eval(Vector(2), Vector(3)), InvalidInput);
  EXPECT_THROW(f.vjp_state(Vector(2), Vector(4), Vector(3)), InvalidInput);
  EXPECT_THROW(make_linear_family(0), InvalidInput);
}

TEST(MlpFamily, ZeroInputLayerGivesZero) {
  const ResidualFamily f = make_mlp_family(2, 3);
  Rng rng(1);
  Vector th = random_uniform_vector(rng, f.param_dim, -1.0, 1.0);
  for (std::size_t k = 0; k < 6; ++k) th[k] = 0.0;
  const Vector y = f.eval(Vector{0.4, -2.0}, th);
  EXPECT_EQ(norm(y), 0.0);
}

TEST(MlpFamily, ZeroOutputLayerGradientsLiveInOutputBlock) {
  const std::size_t d = 2, hidden = 3;
  const ResidualFamily f = make_mlp_family(d, hidden);
  Rng rng(2);
  Vector th = random_uniform_vector(rng, f.param_dim, -1.0, 1.0);
  for (std::size_t k = d * hidden; k < f.param_dim; ++k) th[k] = 0.0;
  const Vector x{0.5, -0.7};
  EXPECT_EQ(norm(f.eval(x, th)), 0.0);
  const Vector g = f.vjp_params(x, th, Vector{1.0, -2.0});
  double w1 = 0.0, w2 = 0.0;
  for (std::size_t k = 0; k < d * hidden; ++k) w1 += std::abs(g[k]);
  for (std::size_t k = d * hidden; k < f.param_dim; ++k) w2 += std::abs(g[k]);
  EXPECT_EQ(w1, 0.0);
  EXPECT_GT(w2, 0.0);
}

TEST(MlpFamily, JacobianMatchesFormula) {
  // jac = W2 diag(1 - tanh²(W1 x)) W1 for d = 1, hidden = 2.
  const ResidualFamily f = make_mlp_family(1, 2);
  const Vector th{0.3, -0.8, 1.5, 0.4};
  const Vector x{0.9};
  double expected = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double t = std::tanh(th[k] * x[0]);
    expected += th[2 + k] * (1.0 - t * t) * th[k];
  }
  EXPECT_NEAR(f.jac_state(x, th)(0, 0), expected, 1e-15);
}

TEST(SquareFamily, Values) {
  const ResidualFamily f = make_square_family();
  EXPECT_DOUBLE_EQ(f.eval(Vector{0.0}, Vector{-1.0})[0], 1.0);
  EXPECT_DOUBLE_EQ(f.eval(Vector{0.0}, Vector{0.0})[0], 0.0);
  EXPECT_DOUBLE_EQ(f.vjp_params(Vector{0.0}, Vector{3.0}, Vector{1.0})[0], 6.0);
  EXPECT_DOUBLE_EQ(f.vjp_state(Vector{5.0}, Vector{3.0}, Vector{1.0})[0], 0.0);
}

TEST(Families, VjpsMatchFiniteDifferences) {
  for (const ResidualFamily& f : builtin_families()) {
    Rng rng(100);
    for (int probe = 0; probe < 100; ++probe) {
      const Vector x = random_uniform_vector(rng, f.state_dim, -1.0, 1.0);
      const Vector th = random_uniform_vector(rng, f.param_dim, -1.0, 1.0);
      const Vector v = random_uniform_vector(rng, f.state_dim, -1.0, 1.0);
      const Vector fd_x = finite_difference_gradient([&](const Vector& p) { return dot(v, f.eval(p, th)); }, x, 1e-6);
      EXPECT_LE(relative_gap(f.vjp_state(x, th, v), fd_x), 1e-5) << f.name;
      if (f.param_dim > 0) {
        const Vector fd_th =
            finite_difference_gradient([&](const Vector& p) { return dot(v, f.eval(x, p)); }, th, 1e-6);
        EXPECT_LE(relative_gap(f.vjp_params(x, th, v), fd_th), 1e-5) << f.name;
      }
    }
  }
}

TEST(Families, JacobianTransposeEqualsVjp) {
  for (const ResidualFamily& f : builtin_families()) {
    Rng rng(9);
    for (int probe = 0; probe < 20; ++probe) {
      const Vector x = random_uniform_vector(rng, f.state_dim, -1.0, 1.0);
      const Vector th = random_uniform_vector(rng, f.param_dim, -1.0, 1.0);
      const Vector v = random_uniform_vector(rng, f.state_dim, -1.0, 1.0);
      const Matrix j = f.jac_state(x, th);
      EXPECT_LE(distance(transpose_times(j, v), f.vjp_state(x, th, v)), 1e-12) << f.name;
      for (std::size_t i = 0; i < f.state_dim; ++i) {
        const Vector row_fd = finite_difference_gradient([&](const Vector& p) { return f.eval(p, th)[i]; }, x, 1e-6);
        for (std::size_t k = 0; k < f.state_dim; ++k) EXPECT_NEAR(j(i, k), row_fd[k], 1e-7) << f.name;
      }
    }
  }
}

TEST(Schedules, IndexSchedule) {
  const WeightSchedule s = make_index_schedule(3);
  ASSERT_EQ(s.depth(), 3u);
  for (std::size_t n = 0; n < 3; ++n) EXPECT_EQ(s[n][0], static_cast<double>(n));
  EXPECT_EQ(s.extended(3)[0], 3.0);
}

TEST(Schedules, IndexChainEndpoint) {
  const ResidualFamily f = make_constant_family(1);
  EXPECT_DOUBLE_EQ(forward_euler_chain(f, make_index_schedule(2), Vector{0.0}).final_state()[0], 0.5);
  // Direct sum: x_N = (1/N) Σ n = (N - 1)/2.
  const std::size_t n = 1000;
  double direct = 0.0;
  for (std::size_t k = 0; k < n; ++k) direct += static_cast<double>(k) / static_cast<double>(n);
  const double chain = forward_euler_chain(f, make_index_schedule(n), Vector{0.0}).final_state()[0];
  EXPECT_NEAR(chain, direct, 1e-9);
  EXPECT_NEAR(chain, 499.5, 1e-9);
}

TEST(Schedules, SignAlternatingTerminal) {
  EXPECT_EQ(make_sign_alternating_schedule(3).extended(3)[0], -1.0);
  EXPECT_EQ(make_sign_alternating_schedule(4).extended(4)[0], 1.0);
}

TEST(CubicProfile, BoundedAndSmooth) {
  Rng rng(4);
  const CubicProfile g = CubicProfile::random(5, 0.25, rng);
  double sup = 0.0;
  for (int k = 0; k <= 1000; ++k)
    for (double v : g(k / 1000.0)) sup = std::max(sup, std::abs(v));
  EXPECT_NEAR(sup, 0.25, 1e-12);
  const WeightSchedule s64 = g.sample(64);
  const WeightSchedule s128 = g.sample(128);
  EXPECT_NEAR(weight_smoothness(s64) / weight_smoothness(s128), 4.0, 0.2);
}

TEST(EstimateConstants, LinearFamilyClosedForm) {
  const ResidualFamily f = make_linear_family(2);
  const WeightSchedule s = make_constant_schedule(4, Vector{0.5, 0.0, 0.0, 0.5});
  const SmoothnessConstants c = estimate_constants(f, s, 2.0, 200);
  EXPECT_NEAR(c.c_f, 1.0, 0.05);
  EXPECT_LE(c.c_f, 1.0 + 1e-12);
  EXPECT_NEAR(c.l_f, 0.5, 0.025);
  EXPECT_NEAR(c.l_df, 0.0, 1e-9);
  EXPECT_EQ(c.heun_residual, 0.0);
}

TEST(EstimateConstants, ZeroFamily) {
  const ResidualFamily f = make_zero_family(3);
  const WeightSchedule s = make_constant_schedule(2, Vector());
  const SmoothnessConstants c = estimate_constants(f, s, 1.0, 10);
  EXPECT_EQ(c.c_f, 0.0);
  EXPECT_EQ(c.l_f, 0.0);
  EXPECT_EQ(c.l_df, 0.0);
  EXPECT_EQ(c.omega, 0.0);
  EXPECT_EQ(c.delta_param, 0.0);
  EXPECT_EQ(c.l_theta, 0.0);
  EXPECT_EQ(c.l_theta_prime, 0.0);
}

TEST(EstimateConstants, SquareFamilyIsStateIndependent) {
  const ResidualFamily f = make_square_family();
  const SmoothnessConstants c = estimate_constants(f, make_sign_alternating_schedule(6), 1.0, 20);
  EXPECT_DOUBLE_EQ(c.c_f, 1.0);
  EXPECT_EQ(c.l_f, 0.0);
}

TEST(EstimateConstants, MonotoneInSamples) {
  const ResidualFamily f = make_mlp_family(2, 4);
  Rng rng(8);
  const WeightSchedule s = CubicProfile::random(f.param_dim, 0.5, rng).sample(5);
  SmoothnessConstants prev = estimate_constants(f, s, 1.5, 5);
  for (std::size_t samples : {10u, 40u, 80u}) {
    const SmoothnessConstants c = estimate_constants(f, s, 1.5, samples);
    EXPECT_GE(c.c_f, prev.c_f);
    EXPECT_GE(c.l_f, prev.l_f);
    EXPECT_GE(c.l_df, prev.l_df);
    EXPECT_GE(c.omega, prev.omega);
    EXPECT_GE(c.delta_param, prev.delta_param);
    EXPECT_GE(c.l_theta, prev.l_theta);
    EXPECT_GE(c.l_theta_prime, prev.l_theta_prime);
    EXPECT_GE(c.heun_residual, prev.heun_residual);
    prev = c;
  }
}

TEST(EstimateConstants, RejectsBadArguments) {
  const ResidualFamily f = make_linear_family(1);
  const WeightSchedule s = make_constant_schedule(2, Vector{1.0});
  EXPECT_THROW(estimate_constants(f, s, 1.0, 0), InvalidInput);
  EXPECT_THROW(estimate_constants(f, s, 0.0, 5), InvalidInput);
  EXPECT_THROW(estimate_constants(f, make_constant_schedule(2, Vector{1.0, 2.0}), 1.0, 5), InvalidInput);
}

TEST(WeightSmoothness, Examples) {
  EXPECT_EQ(weight_smoothness(make_constant_schedule(5, Vector{0.3, -1.0})), 0.0);
  EXPECT_DOUBLE_EQ(weight_smoothness(make_sign_alternating_schedule(5)), 4.0);
  const std::size_t n = 40;
  std::vector<Vector> ramp;
  for (std::size_t k = 0; k < n; ++k) ramp.push_back(Vector{static_cast<double>(k) / n});
  EXPECT_NEAR(weight_smoothness(WeightSchedule(ramp)), 1.0 / (n * n), 1e-15);
  EXPECT_THROW(weight_smoothness(make_constant_schedule(1, Vector{1.0})), UndefinedStatistic);
}

TEST(WeightSmoothness, BoundedIncrements) {
  Rng rng(12);
  const double c = 0.8;
  for (std::size_t n : {10u, 100u}) {
    std::vector<Vector> params{Vector(3)};
    for (std::size_t k = 1; k < n; ++k) {
      const Vector step = random_in_ball(rng, 3, c / static_cast<double>(n));
      params.push_back(params.back() + step);
    }
    EXPECT_LE(weight_smoothness(WeightSchedule(params)), c * c / static_cast<double>(n * n) * (1.0 + 1e-12));
  }
}

TEST(ScheduleCsv, RoundTrip) {
  Rng rng(6);
  const WeightSchedule s = CubicProfile::random(3, 1.0, rng).sample(7);
  std::stringstream buf;
  write_schedule_csv(buf, s);
  EXPECT_EQ(buf.str().substr(0, 15), "layer,p0,p1,p2\n");
  const WeightSchedule back = read_schedule_csv(buf);
  ASSERT_EQ(back.depth(), 7u);
  for (std::size_t n = 0; n < 7; ++n)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(back[n][j], s[n][j]);
  EXPECT_FALSE(back.has_terminal());

  std::stringstream buf2;
  write_schedule_csv(buf2, make_index_schedule(3));
  const WeightSchedule idx = read_schedule_csv(buf2);
  ASSERT_TRUE(idx.has_terminal());
  EXPECT_EQ(idx.extended(3)[0], 3.0);
}

TEST(ScheduleCsv, RejectsMalformedInput) {
  std::stringstream bad_header("layer,q0\n0,1\n");
  EXPECT_THROW(read_schedule_csv(bad_header), InvalidInput);
  std::stringstream bad_row("layer,p0\n0,1\n2,3\n");
  EXPECT_THROW(read_schedule_csv(bad_row), InvalidInput);
  std::stringstream bad_number("layer,p0\n0,abc\n");
  EXPECT_THROW(read_schedule_csv(bad_number), InvalidInput);
  std::stringstream empty("layer,p0\n");
  EXPECT_THROW(read_schedule_csv(empty), InvalidInput);
}
