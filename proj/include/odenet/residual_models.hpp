#pragma once

// Residual functions f(x, θ) with exact vector-Jacobian products, the
// depth-indexed weight schedules that feed them, and sampled estimates of the
// boundedness and Lipschitz constants the error bounds depend on.

#include <algorithm>
#include <cmath>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "odenet/errors.hpp"
#include "odenet/numerics.hpp"

namespace odenet {

// ---------------------------------------------------------------------------
// WeightSchedule
// ---------------------------------------------------------------------------

/// Parameters θ_0..θ_{N-1} of one residual chain of depth N.
///
/// Heun steps and weight interpolation also need θ_N. When a schedule carries
/// no explicit terminal parameter, θ_N is taken to be θ_{N-1}. An explicit
/// terminal parameter is a fixed continuation of the schedule (used by the
/// analytic constructions) and is never trained.
class WeightSchedule {
 public:
  WeightSchedule() = default;

  explicit WeightSchedule(std::vector<Vector> params, std::optional<Vector> terminal = std::nullopt)
      : params_(std::move(params)), terminal_(std::move(terminal)) {
    if (params_.empty()) throw InvalidInput("WeightSchedule: depth must be at least 1");
    const std::size_t p = params_.front().dim();
    for (std::size_t n = 0; n < params_.size(); ++n) {
      if (params_[n].dim() != p)
        throw InvalidInput("WeightSchedule: layer " + std::to_string(n) + " has a different parameter dimension");
      if (!params_[n].all_finite())
        throw InvalidInput("WeightSchedule: layer " + std::to_string(n) + " has non-finite entries");
    }
    if (terminal_ && (terminal_->dim() != p || !terminal_->all_finite()))
      throw InvalidInput("WeightSchedule: terminal parameter has wrong dimension or non-finite entries");
  }

  std::size_t depth() const noexcept { return params_.size(); }
  std::size_t param_dim() const noexcept { return params_.empty() ? 0 : params_.front().dim(); }

  const Vector& operator[](std::size_t n) const { return params_.at(n); }

  /// θ_n for n in 0..N, with θ_N from the terminal parameter or padding.
  const Vector& extended(std::size_t n) const {
    if (n < params_.size()) return params_[n];
    if (n == params_.size()) return terminal_ ? *terminal_ : params_.back();
    throw InvalidInput("WeightSchedule: index " + std::to_string(n) + " beyond depth");
  }

  bool has_terminal() const noexcept { return terminal_.has_value(); }
  const std::optional<Vector>& terminal() const noexcept { return terminal_; }
  const std::vector<Vector>& params() const noexcept { return params_; }

  /// θ_n += step * direction_n for every layer (gradient-descent style update).
  void axpy(double step, const std::vector<Vector>& direction) {
    if (direction.size() != params_.size()) throw InvalidInput("WeightSchedule::axpy: depth mismatch");
    for (std::size_t n = 0; n < params_.size(); ++n) params_[n].axpy(step, direction[n]);
  }

 private:
  std::vector<Vector> params_;
  std::optional<Vector> terminal_;
};

inline WeightSchedule make_constant_schedule(std::size_t depth, const Vector& theta) {
  if (depth < 1) throw InvalidInput("make_constant_schedule: depth must be at least 1");
  return WeightSchedule(std::vector<Vector>(depth, theta));
}

/// θ_n = n (scalar), with θ_N = N as the natural continuation.
inline WeightSchedule make_index_schedule(std::size_t depth) {
  if (depth < 1) throw InvalidInput("make_index_schedule: depth must be at least 1");
  std::vector<Vector> params;
  params.reserve(depth);
  for (std::size_t n = 0; n < depth; ++n) params.push_back(Vector{static_cast<double>(n)});
  return WeightSchedule(std::move(params), Vector{static_cast<double>(depth)});
}

/// θ_n = (-1)^n (scalar), with θ_N = (-1)^N.
inline WeightSchedule make_sign_alternating_schedule(std::size_t depth) {
  if (depth < 1) throw InvalidInput("make_sign_alternating_schedule: depth must be at least 1");
  std::vector<Vector> params;
  params.reserve(depth);
  for (std::size_t n = 0; n < depth; ++n) params.push_back(Vector{n % 2 == 0 ? 1.0 : -1.0});
  return WeightSchedule(std::move(params), Vector{depth % 2 == 0 ? 1.0 : -1.0});
}

/// θ_n = even for even n, odd for odd n.
inline WeightSchedule make_alternating_schedule(std::size_t depth, const Vector& even, const Vector& odd) {
  if (depth < 1) throw InvalidInput("make_alternating_schedule: depth must be at least 1");
  std::vector<Vector> params;
  params.reserve(depth);
  for (std::size_t n = 0; n < depth; ++n) params.push_back(n % 2 == 0 ? even : odd);
  return WeightSchedule(std::move(params));
}

/// A smooth parameter profile g : [0, 1] -> R^p, one cubic polynomial per
/// entry. Sampling it at s = n/N gives schedules whose consecutive layers
/// differ by O(1/N).
class CubicProfile {
 public:
  CubicProfile() = default;

  /// Random cubic per entry, each rescaled so that sup_{s in [0,1]} |g_j(s)| = scale.
  static CubicProfile random(std::size_t param_dim, double scale, Rng& rng) {
    std::uniform_real_distribution<double> coeff(-1.0, 1.0);
    CubicProfile profile;
    profile.coefficients_.resize(param_dim);
    for (auto& c : profile.coefficients_) {
      for (double& a : c) a = coeff(rng);
      double sup = 0.0;
      for (int k = 0; k <= 1000; ++k) sup = std::max(sup, std::abs(eval_cubic(c, k / 1000.0)));
      const double factor = sup > 0.0 ? scale / sup : 0.0;
      for (double& a : c) a *= factor;
    }
    return profile;
  }

  std::size_t param_dim() const noexcept { return coefficients_.size(); }

  Vector operator()(double s) const {
    Vector v(coefficients_.size());
    for (std::size_t j = 0; j < coefficients_.size(); ++j) v[j] = eval_cubic(coefficients_[j], s);
    return v;
  }

  /// θ_n = g(n/N), n = 0..N-1, with padding for θ_N.
  WeightSchedule sample(std::size_t depth) const {
    if (depth < 1) throw InvalidInput("CubicProfile::sample: depth must be at least 1");
    std::vector<Vector> params;
    params.reserve(depth);
    for (std::size_t n = 0; n < depth; ++n)
      params.push_back((*this)(static_cast<double>(n) / static_cast<double>(depth)));
    return WeightSchedule(std::move(params));
  }

 private:
  static double eval_cubic(const std::array<double, 4>& c, double s) {
    return ((c[3] * s + c[2]) * s + c[1]) * s + c[0];
  }

  std::vector<std::array<double, 4>> coefficients_;
};

// ---------------------------------------------------------------------------
// ResidualFamily
// ---------------------------------------------------------------------------

/// A residual function f(x, θ) together with its exact derivatives.
struct ResidualFamily {
  using EvalFn = std::function<Vector(const Vector& x, const Vector& theta)>;
  using VjpFn = std::function<Vector(const Vector& x, const Vector& theta, const Vector& v)>;
  using JacFn = std::function<Matrix(const Vector& x, const Vector& theta)>;

  std::string name;
  std::size_t state_dim = 0;
  std::size_t param_dim = 0;
  EvalFn eval_fn;
  VjpFn vjp_state_fn;   // [∂_x f]ᵀ v
  VjpFn vjp_params_fn;  // [∂_θ f]ᵀ v
  JacFn jac_state_fn;   // ∂_x f, d x d

  Vector eval(const Vector& x, const Vector& theta) const {
    check(x, theta);
    return eval_fn(x, theta);
  }
  Vector vjp_state(const Vector& x, const Vector& theta, const Vector& v) const {
    check(x, theta);
    check_cotangent(v);
    return vjp_state_fn(x, theta, v);
  }
  Vector vjp_params(const Vector& x, const Vector& theta, const Vector& v) const {
    check(x, theta);
    check_cotangent(v);
    return vjp_params_fn(x, theta, v);
  }
  Matrix jac_state(const Vector& x, const Vector& theta) const {
    check(x, theta);
    return jac_state_fn(x, theta);
  }

  /// ∂_θ f as a d x p matrix, assembled row by row from vjp_params.
  Matrix jac_params(const Vector& x, const Vector& theta) const {
    Matrix j(state_dim, param_dim);
    for (std::size_t i = 0; i < state_dim; ++i) {
      Vector e(state_dim);
      e[i] = 1.0;
      const Vector row = vjp_params(x, theta, e);
      for (std::size_t k = 0; k < param_dim; ++k) j(i, k) = row[k];
    }
    return j;
  }

  void check_schedule(const WeightSchedule& schedule) const {
    if (schedule.param_dim() != param_dim)
      throw InvalidInput(name + ": schedule parameter dimension " + std::to_string(schedule.param_dim()) +
                         " does not match family parameter dimension " + std::to_string(param_dim));
  }

 private:
  void check(const Vector& x, const Vector& theta) const {
    if (x.dim() != state_dim)
      throw InvalidInput(name + ": state dimension " + std::to_string(x.dim()) + ", expected " +
                         std::to_string(state_dim));
    if (theta.dim() != param_dim)
      throw InvalidInput(name + ": parameter dimension " + std::to_string(theta.dim()) + ", expected " +
                         std::to_string(param_dim));
  }
  void check_cotangent(const Vector& v) const {
    if (v.dim() != state_dim) throw InvalidInput(name + ": cotangent dimension mismatch");
  }
};

/// f(x, θ) = θ x with θ a d x d matrix flattened row-major.
inline ResidualFamily make_linear_family(std::size_t d) {
  if (d < 1) throw InvalidInput("make_linear_family: d must be at least 1");
  ResidualFamily f;
  f.name = "linear";
  f.state_dim = d;
  f.param_dim = d * d;
  f.eval_fn = [d](const Vector& x, const Vector& theta) {
    Vector y(d);
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += theta[i * d + j] * x[j];
      y[i] = s;
    }
    return y;
  };
  f.vjp_state_fn = [d](const Vector&, const Vector& theta, const Vector& v) {
    Vector g(d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g[j] += theta[i * d + j] * v[i];
    return g;
  };
  f.vjp_params_fn = [d](const Vector& x, const Vector&, const Vector& v) {
    Vector g(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] = v[i] * x[j];
    return g;
  };
  f.jac_state_fn = [d](const Vector&, const Vector& theta) {
    return Matrix(d, d, std::vector<double>(theta.begin(), theta.end()));
  };
  return f;
}

/// f(x, (W1, W2)) = W2 tanh(W1 x); W1 is hidden x d, W2 is d x hidden, both
/// row-major, W1 first in the flat parameter vector.
inline ResidualFamily make_mlp_family(std::size_t d, std::size_t hidden) {
  if (d < 1 || hidden < 1) throw InvalidInput("make_mlp_family: d and hidden must be at least 1");
  const std::size_t w2_offset = hidden * d;

  auto pre_activation = [d, hidden](const Vector& x, const Vector& theta) {
    Vector z(hidden);
    for (std::size_t k = 0; k < hidden; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += theta[k * d + j] * x[j];
      z[k] = s;
    }
    return z;
  };
  // W2ᵀ v
  auto w2_transpose = [d, hidden, w2_offset](const Vector& theta, const Vector& v) {
    Vector u(hidden);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < hidden; ++k) u[k] += theta[w2_offset + i * hidden + k] * v[i];
    return u;
  };

  ResidualFamily f;
  f.name = "mlp";
  f.state_dim = d;
  f.param_dim = 2 * d * hidden;
  f.eval_fn = [=](const Vector& x, const Vector& theta) {
    const Vector z = pre_activation(x, theta);
    Vector y(d);
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < hidden; ++k) s += theta[w2_offset + i * hidden + k] * std::tanh(z[k]);
      y[i] = s;
    }
    return y;
  };
  f.vjp_state_fn = [=](const Vector& x, const Vector& theta, const Vector& v) {
    const Vector z = pre_activation(x, theta);
    Vector u = w2_transpose(theta, v);
    for (std::size_t k = 0; k < hidden; ++k) {
      const double t = std::tanh(z[k]);
      u[k] *= 1.0 - t * t;
    }
    Vector g(d);
    for (std::size_t k = 0; k < hidden; ++k)
      for (std::size_t j = 0; j < d; ++j) g[j] += theta[k * d + j] * u[k];
    return g;
  };
  f.vjp_params_fn = [=](const Vector& x, const Vector& theta, const Vector& v) {
    const Vector z = pre_activation(x, theta);
    Vector u = w2_transpose(theta, v);
    Vector g(2 * d * hidden);
    for (std::size_t k = 0; k < hidden; ++k) {
      const double t = std::tanh(z[k]);
      const double gate = u[k] * (1.0 - t * t);
      for (std::size_t j = 0; j < d; ++j) g[k * d + j] = gate * x[j];
      for (std::size_t i = 0; i < d; ++i) g[w2_offset + i * hidden + k] = v[i] * t;
    }
    return g;
  };
  f.jac_state_fn = [=](const Vector& x, const Vector& theta) {
    const Vector z = pre_activation(x, theta);
    Matrix j(d, d);
    for (std::size_t k = 0; k < hidden; ++k) {
      const double t = std::tanh(z[k]);
      const double slope = 1.0 - t * t;
      for (std::size_t i = 0; i < d; ++i) {
        const double w2 = theta[w2_offset + i * hidden + k] * slope;
        if (w2 == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) j(i, c) += w2 * theta[k * d + c];
      }
    }
    return j;
  };
  return f;
}

/// Scalar, state-independent f(x, θ) = θ².
inline ResidualFamily make_square_family() {
  ResidualFamily f;
  f.name = "square";
  f.state_dim = 1;
  f.param_dim = 1;
  f.eval_fn = [](const Vector&, const Vector& theta) { return Vector{theta[0] * theta[0]}; };
  f.vjp_state_fn = [](const Vector&, const Vector&, const Vector&) { return Vector{0.0}; };
  f.vjp_params_fn = [](const Vector&, const Vector& theta, const Vector& v) { return Vector{2.0 * theta[0] * v[0]}; };
  f.jac_state_fn = [](const Vector&, const Vector&) { return Matrix(1, 1); };
  return f;
}

/// State-independent f(x, θ) = θ with θ in R^d. Paired with the index
/// schedule this is the f = n construction.
inline ResidualFamily make_constant_family(std::size_t d) {
  if (d < 1) throw InvalidInput("make_constant_family: d must be at least 1");
  ResidualFamily f;
  f.name = "constant";
  f.state_dim = d;
  f.param_dim = d;
  f.eval_fn = [](const Vector&, const Vector& theta) { return theta; };
  f.vjp_state_fn = [d](const Vector&, const Vector&, const Vector&) { return Vector(d); };
  f.vjp_params_fn = [](const Vector&, const Vector&, const Vector& v) { return v; };
  f.jac_state_fn = [d](const Vector&, const Vector&) { return Matrix(d, d); };
  return f;
}

/// f ≡ 0 with an empty parameter vector.
inline ResidualFamily make_zero_family(std::size_t d) {
  if (d < 1) throw InvalidInput("make_zero_family: d must be at least 1");
  ResidualFamily f;
  f.name = "zero";
  f.state_dim = d;
  f.param_dim = 0;
  f.eval_fn = [d](const Vector&, const Vector&) { return Vector(d); };
  f.vjp_state_fn = [d](const Vector&, const Vector&, const Vector&) { return Vector(d); };
  f.vjp_params_fn = [](const Vector&, const Vector&, const Vector&) { return Vector(); };
  f.jac_state_fn = [d](const Vector&, const Vector&) { return Matrix(d, d); };
  return f;
}

// ---------------------------------------------------------------------------
// Smoothness statistics
// ---------------------------------------------------------------------------

struct SmoothnessConstants {
  double c_f = 0.0;            // sup ‖f‖
  double l_f = 0.0;            // sup ‖∂_x f‖
  double l_df = 0.0;           // Lipschitz constant of ∂_x f in x
  double omega = 0.0;          // sup ‖∂_θ f‖
  double delta_param = 0.0;    // Lipschitz constant of ∂_θ f in x
  double l_theta = 0.0;        // Lipschitz constant of f in θ
  double l_theta_prime = 0.0;  // Lipschitz constant of ∂_x f in θ
  double heun_residual = 0.0;  // sup ‖(J_{n+1} - J_n)[f_{n+1} - f_n]‖ over consecutive layers
  double region_radius = 0.0;
};

/// Monte-Carlo suprema over the ball ‖x‖ <= region_radius and every layer of
/// the schedule. Sample k is drawn from the same RNG stream position for any
/// total sample count, so estimates never decrease as samples grow. Pair
/// statistics use nearby pairs (offset 1% of the radius in x, 1e-3 in θ) and
/// are therefore lower bounds of the true Lipschitz constants.
inline SmoothnessConstants estimate_constants(const ResidualFamily& family, const WeightSchedule& schedule,
                                              double region_radius, std::size_t samples,
                                              std::uint64_t seed = 0) {
  if (samples < 1) throw InvalidInput("estimate_constants: samples must be at least 1");
  if (!(region_radius > 0.0)) throw InvalidInput("estimate_constants: region_radius must be positive");
  family.check_schedule(schedule);

  const std::size_t d = family.state_dim;
  const std::size_t p = family.param_dim;
  const double dx = 0.01 * region_radius;
  const double inner_radius = region_radius - dx;
  constexpr double kThetaStep = 1e-3;

  SmoothnessConstants c;
  c.region_radius = region_radius;
  Rng rng(seed);
  for (std::size_t k = 0; k < samples; ++k) {
    const Vector x = random_in_ball(rng, d, inner_radius);
    const Vector ux = random_unit_vector(rng, d);
    const Vector x2 = x + dx * ux;
    const Vector utheta = p > 0 ? random_unit_vector(rng, p) : Vector();

    for (std::size_t n = 0; n < schedule.depth(); ++n) {
      const Vector& theta = schedule[n];
      const Vector fx = family.eval(x, theta);
      const Matrix jx = family.jac_state(x, theta);
      c.c_f = std::max({c.c_f, norm(fx), norm(family.eval(x2, theta))});
      c.l_f = std::max(c.l_f, spectral_norm(jx));
      c.l_df = std::max(c.l_df, spectral_norm(family.jac_state(x2, theta) - jx) / dx);

      if (p > 0) {
        const Matrix jp = family.jac_params(x, theta);
        c.omega = std::max(c.omega, spectral_norm(jp));
        c.delta_param = std::max(c.delta_param, spectral_norm(family.jac_params(x2, theta) - jp) / dx);

        const Vector theta2 = theta + kThetaStep * utheta;
        c.l_theta = std::max(c.l_theta, norm(family.eval(x, theta2) - fx) / kThetaStep);
        c.l_theta_prime =
            std::max(c.l_theta_prime, spectral_norm(family.jac_state(x, theta2) - jx) / kThetaStep);
      }

      if (n + 1 < schedule.depth()) {
        const Vector& next = schedule[n + 1];
        const Matrix jdiff = family.jac_state(x, next) - jx;
        c.heun_residual = std::max(c.heun_residual, norm(jdiff * (family.eval(x, next) - fx)));
      }
    }
  }
  return c;
}

/// max_n ‖θ_{n+1} - θ_n‖² over the N trainable layers.
inline double weight_smoothness(const WeightSchedule& schedule) {
  if (schedule.depth() < 2) throw UndefinedStatistic("weight_smoothness: needs a schedule of depth at least 2");
  double best = 0.0;
  for (std::size_t n = 0; n + 1 < schedule.depth(); ++n) {
    const double gap = norm(schedule[n + 1] - schedule[n]);
    best = std::max(best, gap * gap);
  }
  return best;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Header `layer,p0,p1,...`, one row per layer; an explicit terminal
/// parameter is written as a final row labelled `terminal`.
inline void write_schedule_csv(std::ostream& out, const WeightSchedule& schedule) {
  out << "layer";
  for (std::size_t j = 0; j < schedule.param_dim(); ++j) out << ",p" << j;
  out << '\n';
  auto row = [&](const std::string& label, const Vector& v) {
    out << label;
    for (double e : v) out << ',' << format_double(e);
    out << '\n';
  };
  for (std::size_t n = 0; n < schedule.depth(); ++n) row(std::to_string(n), schedule[n]);
  if (schedule.has_terminal()) row("terminal", *schedule.terminal());
}

inline WeightSchedule read_schedule_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("schedule csv: missing header");
  std::size_t columns = 0;
  {
    std::stringstream header(line);
    std::string cell;
    std::size_t idx = 0;
    while (std::getline(header, cell, ',')) {
      const std::string expected = idx == 0 ? "layer" : "p" + std::to_string(idx - 1);
      if (cell != expected) throw InvalidInput("schedule csv: bad header cell '" + cell + "'");
      ++idx;
    }
    if (idx == 0) throw InvalidInput("schedule csv: empty header");
    columns = idx - 1;
  }
  std::vector<Vector> params;
  std::optional<Vector> terminal;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (terminal) throw InvalidInput("schedule csv: rows after the terminal row");
    std::stringstream row(line);
    std::string label;
    std::getline(row, label, ',');
    Vector v(columns);
    std::string cell;
    std::size_t j = 0;
    while (std::getline(row, cell, ',')) {
      if (j >= columns) throw InvalidInput("schedule csv: too many columns in row '" + label + "'");
      try {
        v[j++] = std::stod(cell);
      } catch (const std::exception&) {
        throw InvalidInput("schedule csv: bad number '" + cell + "'");
      }
    }
    if (j != columns) throw InvalidInput("schedule csv: too few columns in row '" + label + "'");
    if (label == "terminal") {
      terminal = std::move(v);
    } else {
      if (label != std::to_string(params.size()))
        throw InvalidInput("schedule csv: expected layer " + std::to_string(params.size()) + ", got '" + label + "'");
      params.push_back(std::move(v));
    }
  }
  return WeightSchedule(std::move(params), std::move(terminal));
}

}  // namespace odenet
