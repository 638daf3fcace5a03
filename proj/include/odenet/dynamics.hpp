#pragma once

// Depth-scaled residual chains (Euler and Heun), vector fields that
// interpolate a chain in depth, an RK4 reference solver, and the
// chain-vs-ODE approximation error machinery.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "odenet/errors.hpp"
#include "odenet/numerics.hpp"
#include "odenet/residual_models.hpp"

namespace odenet {

/// Any node whose norm exceeds this aborts the chain.
inline constexpr double kDivergenceThreshold = 1e12;

inline void check_state(const Vector& x, std::size_t layer) {
  if (!x.all_finite()) throw DivergenceError(layer, "non-finite state");
  if (norm(x) > kDivergenceThreshold) throw DivergenceError(layer, "state norm exceeds 1e12");
}

enum class Scheme { euler, heun };

inline const char* to_string(Scheme s) { return s == Scheme::euler ? "euler" : "heun"; }

struct Trajectory {
  std::size_t depth = 0;
  std::vector<Vector> nodes;                     // x_0..x_N
  std::optional<std::vector<Vector>> midpoints;  // y_0..y_{N-1}, Heun only
  Scheme scheme = Scheme::euler;

  const Vector& final_state() const { return nodes.back(); }
};

namespace detail {

inline void check_chain_inputs(const ResidualFamily& family, const WeightSchedule& schedule, const Vector& x0) {
  family.check_schedule(schedule);
  if (x0.dim() != family.state_dim)
    throw InvalidInput("chain: x0 has dimension " + std::to_string(x0.dim()) + ", family expects " +
                       std::to_string(family.state_dim));
  check_state(x0, 0);
}

inline double step_weight(std::size_t depth) { return 1.0 / static_cast<double>(depth); }

/// One Heun step; writes the predictor into *midpoint when requested.
inline Vector heun_step(const ResidualFamily& family, const Vector& x, const Vector& theta_n,
                        const Vector& theta_next, double h, Vector* midpoint) {
  const Vector fx = family.eval(x, theta_n);
  Vector y = x;
  y.axpy(h, fx);
  Vector next = x;
  next.axpy(0.5 * h, fx);
  next.axpy(0.5 * h, family.eval(y, theta_next));
  if (midpoint) *midpoint = std::move(y);
  return next;
}

}  // namespace detail

/// x_{n+1} = x_n + (1/N) f(x_n, θ_n), all nodes stored.
inline Trajectory forward_euler_chain(const ResidualFamily& family, const WeightSchedule& schedule,
                                      const Vector& x0) {
  detail::check_chain_inputs(family, schedule, x0);
  const std::size_t depth = schedule.depth();
  const double h = detail::step_weight(depth);
  Trajectory traj;
  traj.depth = depth;
  traj.scheme = Scheme::euler;
  traj.nodes.reserve(depth + 1);
  traj.nodes.push_back(x0);
  for (std::size_t n = 0; n < depth; ++n) {
    Vector next = traj.nodes.back();
    next.axpy(h, family.eval(traj.nodes.back(), schedule[n]));
    check_state(next, n + 1);
    traj.nodes.push_back(std::move(next));
  }
  return traj;
}

/// Heun chain: y_n = x_n + f(x_n, θ_n)/N, x_{n+1} = x_n + (f(x_n, θ_n) + f(y_n, θ_{n+1}))/(2N).
inline Trajectory forward_heun_chain(const ResidualFamily& family, const WeightSchedule& schedule,
                                     const Vector& x0) {
  detail::check_chain_inputs(family, schedule, x0);
  const std::size_t depth = schedule.depth();
  const double h = detail::step_weight(depth);
  Trajectory traj;
  traj.depth = depth;
  traj.scheme = Scheme::heun;
  traj.nodes.reserve(depth + 1);
  traj.nodes.push_back(x0);
  std::vector<Vector> mids;
  mids.reserve(depth);
  for (std::size_t n = 0; n < depth; ++n) {
    Vector y;
    Vector next = detail::heun_step(family, traj.nodes.back(), schedule[n], schedule.extended(n + 1), h, &y);
    check_state(next, n + 1);
    mids.push_back(std::move(y));
    traj.nodes.push_back(std::move(next));
  }
  traj.midpoints = std::move(mids);
  return traj;
}

/// x_N only, holding a single state at a time.
inline Vector forward_final_state(const ResidualFamily& family, const WeightSchedule& schedule, const Vector& x0,
                                  Scheme scheme) {
  detail::check_chain_inputs(family, schedule, x0);
  const std::size_t depth = schedule.depth();
  const double h = detail::step_weight(depth);
  Vector x = x0;
  for (std::size_t n = 0; n < depth; ++n) {
    if (scheme == Scheme::euler) {
      x.axpy(h, family.eval(x, schedule[n]));
    } else {
      x = detail::heun_step(family, x, schedule[n], schedule.extended(n + 1), h, nullptr);
    }
    check_state(x, n + 1);
  }
  return x;
}

inline Trajectory forward_chain(const ResidualFamily& family, const WeightSchedule& schedule, const Vector& x0,
                                Scheme scheme) {
  return scheme == Scheme::euler ? forward_euler_chain(family, schedule, x0)
                                 : forward_heun_chain(family, schedule, x0);
}

/// `node_index,s,x_0,...,x_{d-1}` with s = n/N.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  const std::size_t d = traj.nodes.empty() ? 0 : traj.nodes.front().dim();
  out << "node_index,s";
  for (std::size_t i = 0; i < d; ++i) out << ",x_" << i;
  out << '\n';
  for (std::size_t n = 0; n < traj.nodes.size(); ++n) {
    out << n << ',' << format_double(static_cast<double>(n) / static_cast<double>(traj.depth));
    for (double v : traj.nodes[n]) out << ',' << format_double(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------------

enum class FieldKind { residual_interp, weight_interp, direct };

/// φ(x, s) on s in [0, 1]. A field with `pieces` = N > 0 is smooth on each
/// interval [n/N, (n+1)/N] but may only be piecewise smooth across grid
/// points; eval_in() evaluates the closed-interval branch of a given piece so
/// integrators can stay one-sided.
class VectorField {
 public:
  using PieceFn = std::function<Vector(const Vector& x, double s, std::size_t piece)>;

  VectorField(FieldKind kind, std::size_t pieces, PieceFn fn)
      : kind_(kind), pieces_(pieces), fn_(std::move(fn)) {}

  FieldKind kind() const noexcept { return kind_; }
  std::size_t pieces() const noexcept { return pieces_; }

  /// Piece containing s; grid points n/N belong to the piece starting there.
  std::size_t locate(double s) const {
    check_domain(s);
    if (pieces_ == 0) return 0;
    const double t = snap(s * static_cast<double>(pieces_));
    return std::min(static_cast<std::size_t>(std::floor(t)), pieces_ - 1);
  }

  Vector eval(const Vector& x, double s) const { return fn_(x, s, locate(s)); }

  Vector eval_in(const Vector& x, double s, std::size_t piece) const {
    check_domain(s);
    if (pieces_ > 0 && piece >= pieces_) throw InvalidInput("VectorField: piece index out of range");
    return fn_(x, s, piece);
  }

  /// Position of s inside its piece, in [0, 1], with grid points snapped exactly.
  double local_coordinate(double s, std::size_t piece) const {
    const double u = snap(s * static_cast<double>(pieces_)) - static_cast<double>(piece);
    return std::clamp(u, 0.0, 1.0);
  }

 private:
  static void check_domain(double s) {
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("VectorField: s = " + format_double(s) + " outside [0, 1]");
  }
  static double snap(double t) {
    const double r = std::round(t);
    return std::abs(t - r) <= 1e-12 * std::max(1.0, std::abs(t)) ? r : t;
  }

  FieldKind kind_;
  std::size_t pieces_;
  PieceFn fn_;
};

/// A field given directly as φ(x, s).
inline VectorField make_direct_field(std::function<Vector(const Vector&, double)> fn) {
  return VectorField(FieldKind::direct, 0,
                     [fn = std::move(fn)](const Vector& x, double s, std::size_t) { return fn(x, s); });
}

/// A direct field that is only piecewise smooth on a grid of `pieces` intervals.
inline VectorField make_piecewise_field(std::size_t pieces,
                                        std::function<Vector(const Vector&, double, std::size_t)> fn) {
  if (pieces < 1) throw InvalidInput("make_piecewise_field: pieces must be at least 1");
  return VectorField(FieldKind::direct, pieces, std::move(fn));
}

/// Residual or weight interpolation of a chain; on [n/N, (n+1)/N] with
/// u = Ns - n:
///   residual_interp: (1 - u) f(x, θ_n) + u f(x, θ_{n+1})
///   weight_interp:   f(x, (1 - u) θ_n + u θ_{n+1})
/// θ_N comes from the schedule's terminal parameter or padding.
inline VectorField interpolate(const ResidualFamily& family, const WeightSchedule& schedule, FieldKind kind) {
  if (kind == FieldKind::direct) throw InvalidInput("interpolate: kind must be residual_interp or weight_interp");
  family.check_schedule(schedule);
  const std::size_t depth = schedule.depth();
  auto shared = std::make_shared<std::pair<ResidualFamily, WeightSchedule>>(family, schedule);
  return VectorField(kind, depth,
                    [shared, kind, depth](const Vector& x, double s, std::size_t n) {
                      const auto& [fam, sched] = *shared;
                      double u = s * static_cast<double>(depth) - static_cast<double>(n);
                      const double r = std::round(u);
                      if (std::abs(u - r) <= 1e-12 * std::max(1.0, s * static_cast<double>(depth))) u = r;
                      u = std::clamp(u, 0.0, 1.0);
                      const Vector& a = sched.extended(n);
                      const Vector& b = sched.extended(n + 1);
                      if (kind == FieldKind::residual_interp) {
                        if (u == 0.0) return fam.eval(x, a);
                        if (u == 1.0) return fam.eval(x, b);
                        Vector out = (1.0 - u) * fam.eval(x, a);
                        out.axpy(u, fam.eval(x, b));
                        return out;
                      }
                      if (u == 0.0) return fam.eval(x, a);
                      if (u == 1.0) return fam.eval(x, b);
                      Vector theta = (1.0 - u) * a;
                      theta.axpy(u, b);
                      return fam.eval(x, theta);
                    });
}

// ---------------------------------------------------------------------------
// Reference solver
// ---------------------------------------------------------------------------

struct ODESolution {
  std::vector<double> grid;   // n/N for n = 0..N
  std::vector<Vector> states; // x(n/N)
  std::size_t oracle_steps = 0;

  const Vector& final_state() const { return states.back(); }
};

/// Default oracle resolution: 64 fine steps per chain layer.
inline constexpr std::size_t kOracleStepsPerLayer = 64;

namespace detail {

inline void check_solver_grid(const VectorField& field, std::size_t steps, std::size_t grid_depth,
                              std::size_t min_ratio) {
  if (grid_depth < 1) throw InvalidInput("solver: grid depth must be at least 1");
  if (steps < min_ratio * grid_depth || steps % grid_depth != 0)
    throw InvalidInput("solver: steps (" + std::to_string(steps) + ") must be a multiple of the grid depth (" +
                       std::to_string(grid_depth) + ") and at least " + std::to_string(min_ratio) + "x it");
  if (field.pieces() > 0 && steps % field.pieces() != 0)
    throw InvalidInput("solver: steps must be a multiple of the field's piece count");
}

template <typename Stepper>
ODESolution integrate_on_grid(const VectorField& field, const Vector& x0, std::size_t steps,
                              std::size_t grid_depth, Stepper&& step) {
  check_state(x0, 0);
  ODESolution sol;
  sol.oracle_steps = steps;
  sol.grid.reserve(grid_depth + 1);
  sol.states.reserve(grid_depth + 1);
  const std::size_t stride = steps / grid_depth;
  const double h = 1.0 / static_cast<double>(steps);
  Vector x = x0;
  sol.grid.push_back(0.0);
  sol.states.push_back(x);
  for (std::size_t k = 0; k < steps; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(steps);
    const std::size_t piece = field.pieces() == 0 ? 0 : (k * field.pieces()) / steps;
    x = step(x, s, h, piece);
    check_state(x, k + 1);
    if ((k + 1) % stride == 0) {
      const std::size_t n = (k + 1) / stride;
      sol.grid.push_back(static_cast<double>(n) / static_cast<double>(grid_depth));
      sol.states.push_back(x);
    }
  }
  return sol;
}

}  // namespace detail

/// Classical RK4 on `fine_steps` uniform steps, recording the states at the
/// grid points n/grid_depth. Every RK4 step stays inside one piece of the field.
inline ODESolution solve_ode_oracle(const VectorField& field, const Vector& x0, std::size_t fine_steps,
                                    std::size_t grid_depth) {
  detail::check_solver_grid(field, fine_steps, grid_depth, 4);
  return detail::integrate_on_grid(
      field, x0, fine_steps, grid_depth, [&field](const Vector& x, double s, double h, std::size_t piece) {
        const double s_mid = std::min(s + 0.5 * h, 1.0);
        const double s_end = std::min(s + h, 1.0);
        const Vector k1 = field.eval_in(x, s, piece);
        const Vector k2 = field.eval_in(x + (0.5 * h) * k1, s_mid, piece);
        const Vector k3 = field.eval_in(x + (0.5 * h) * k2, s_mid, piece);
        const Vector k4 = field.eval_in(x + h * k3, s_end, piece);
        Vector next = x;
        next.axpy(h / 6.0, k1);
        next.axpy(h / 3.0, k2);
        next.axpy(h / 3.0, k3);
        next.axpy(h / 6.0, k4);
        return next;
      });
}

/// Oracle with the default resolution for a field interpolating a depth-N chain.
inline ODESolution solve_ode_oracle(const VectorField& field, const Vector& x0, std::size_t grid_depth) {
  return solve_ode_oracle(field, x0, kOracleStepsPerLayer * grid_depth, grid_depth);
}

/// Explicit Euler on the field (left-endpoint evaluation), for scheme-level
/// comparison with the residual chain.
inline ODESolution solve_euler(const VectorField& field, const Vector& x0, std::size_t steps,
                               std::size_t grid_depth) {
  detail::check_solver_grid(field, steps, grid_depth, 1);
  return detail::integrate_on_grid(field, x0, steps, grid_depth,
                                   [&field](const Vector& x, double s, double h, std::size_t piece) {
                                     Vector next = x;
                                     next.axpy(h, field.eval_in(x, s, piece));
                                     return next;
                                   });
}

// ---------------------------------------------------------------------------
// Approximation error
// ---------------------------------------------------------------------------

struct ApproximationError {
  std::vector<double> per_node;  // ‖x_n - x(n/N)‖
  double max = 0.0;
};

inline ApproximationError approximation_error(const Trajectory& traj, const ODESolution& sol) {
  const std::size_t depth = traj.depth;
  if (sol.grid.size() != depth + 1 || sol.states.size() != depth + 1)
    throw InvalidInput("approximation_error: solution grid does not have N + 1 points");
  ApproximationError out;
  out.per_node.reserve(depth + 1);
  for (std::size_t n = 0; n <= depth; ++n) {
    const double expected = static_cast<double>(n) / static_cast<double>(depth);
    if (std::abs(sol.grid[n] - expected) > 1e-12)
      throw InvalidInput("approximation_error: solution grid point " + std::to_string(n) + " is not n/N");
    const double e = distance(traj.nodes[n], sol.states[n]);
    out.per_node.push_back(e);
    out.max = std::max(out.max, e);
  }
  return out;
}

/// (e^L - 1)/(2NL) · c_n, or c_n/(2N) when L = 0.
inline double approximation_bound(double lipschitz, double c_n, std::size_t depth) {
  if (depth < 1) throw InvalidInput("approximation_bound: N must be at least 1");
  if (!(lipschitz >= 0.0) || !(c_n >= 0.0)) throw InvalidInput("approximation_bound: negative input");
  const double n = static_cast<double>(depth);
  if (lipschitz == 0.0) return c_n / (2.0 * n);
  return std::expm1(lipschitz) / (2.0 * n * lipschitz) * c_n;
}

/// Sampled sup of ‖∂_s φ + ∂_x φ[φ]‖ over the ball × [0, 1].
///
/// ∂_s φ uses a one-sided difference with step 1/(100 N) that never leaves the
/// sample's piece; ∂_x φ[φ] uses a central directional difference.
inline double estimate_c_n(const VectorField& field, std::size_t state_dim, double region_radius,
                           std::size_t samples, std::uint64_t seed = 0) {
  if (samples < 1) throw InvalidInput("estimate_c_n: samples must be at least 1");
  if (!(region_radius > 0.0)) throw InvalidInput("estimate_c_n: region_radius must be positive");
  const std::size_t pieces = std::max<std::size_t>(field.pieces(), 1);
  const double hs = 1.0 / (100.0 * static_cast<double>(pieces));
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, pieces - 1);
  double best = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const Vector x = random_in_ball(rng, state_dim, region_radius);
    const std::size_t piece = pick(rng);
    const double lo = static_cast<double>(piece) / static_cast<double>(pieces);
    const double hi = static_cast<double>(piece + 1) / static_cast<double>(pieces);
    const double s = lo + unit(rng) * (hi - lo);
    const std::size_t eval_piece = field.pieces() == 0 ? 0 : piece;

    const Vector phi = field.eval_in(x, s, eval_piece);
    const double s2 = (s + hs <= hi) ? s + hs : s - hs;
    Vector ds = field.eval_in(x, s2, eval_piece) - phi;
    ds *= 1.0 / (s2 - s);

    const double phi_norm = norm(phi);
    if (phi_norm > 0.0) {
      const double eps = 1e-6 * std::max(1.0, norm(x)) / phi_norm;
      Vector dx = field.eval_in(x + eps * phi, s, eval_piece) - field.eval_in(x - eps * phi, s, eval_piece);
      ds.axpy(1.0 / (2.0 * eps), dx);
    }
    best = std::max(best, norm(ds));
  }
  return best;
}

}  // namespace odenet
