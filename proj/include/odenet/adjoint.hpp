#pragma once

// Exact backpropagation through stored Euler and Heun chains, and the
// memory-free adjoint sweeps that reconstruct activations backwards instead.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "odenet/dynamics.hpp"
#include "odenet/errors.hpp"
#include "odenet/numerics.hpp"
#include "odenet/residual_models.hpp"

namespace odenet {

struct GradientSet {
  std::vector<Vector> param_grads;  // ∇_{θ_n} L, n = 0..N-1
  std::vector<Vector> state_grads;  // ∇_{x_n} L, n = 0..N
  Vector input_grad;                // ∇_{x_0} L
};

struct ReconstructionReport {
  Trajectory reconstructed;
  std::vector<double> per_node_error;  // empty when no reference trajectory was given
  double max_error = 0.0;
};

/// Receives one finished parameter gradient per layer, in decreasing layer
/// order, together with the state gradient at that layer's input node.
using AdjointSink = std::function<void(std::size_t layer, const Vector& param_grad, const Vector& state_grad)>;

/// What an adjoint sweep keeps after streaming everything through the sink.
struct SweepResult {
  Vector x0;          // reconstructed input
  Vector input_grad;  // ∇_{x̃_0} L
};

namespace detail {

inline void check_output_grad(const ResidualFamily& family, const Vector& output_grad) {
  if (output_grad.dim() != family.state_dim) throw InvalidInput("backprop: output gradient dimension mismatch");
}

inline void check_trajectory(const ResidualFamily& family, const WeightSchedule& schedule, const Trajectory& traj,
                             Scheme expected) {
  family.check_schedule(schedule);
  if (traj.scheme != expected)
    throw InvalidInput(std::string("backprop: expected a ") + to_string(expected) + " trajectory, got " +
                       to_string(traj.scheme));
  if (traj.depth != schedule.depth() || traj.nodes.size() != schedule.depth() + 1)
    throw InvalidInput("backprop: trajectory depth does not match the schedule");
  if (expected == Scheme::heun && (!traj.midpoints || traj.midpoints->size() != traj.depth))
    throw InvalidInput("backprop: Heun trajectory is missing its midpoints");
}

struct HeunStepGrads {
  Vector state;        // ∇_{x_n}
  Vector param_left;   // contribution to θ_n
  Vector param_right;  // contribution to θ_{n+1}
};

/// Reverse of x_{n+1} = x + h/2 f(x, θ_n) + h/2 f(y, θ_{n+1}), y = x + h f(x, θ_n).
inline HeunStepGrads heun_step_vjp(const ResidualFamily& family, const Vector& x, const Vector& y,
                                   const Vector& theta_n, const Vector& theta_next, double h, const Vector& g) {
  const Vector a = (0.5 * h) * family.vjp_state(y, theta_next, g);
  Vector w = 0.5 * g;
  w += a;
  HeunStepGrads out;
  out.state = g + a;
  out.state.axpy(h, family.vjp_state(x, theta_n, w));
  out.param_left = h * family.vjp_params(x, theta_n, w);
  out.param_right = (0.5 * h) * family.vjp_params(y, theta_next, g);
  return out;
}

/// Folds the θ_N contribution back onto θ_{N-1} when θ_N is padding; an
/// explicit terminal parameter is not trainable and its gradient is dropped.
inline void fold_terminal(const WeightSchedule& schedule, Vector& pending, const Vector& terminal_grad) {
  if (!schedule.has_terminal()) pending += terminal_grad;
}

inline void record_errors(ReconstructionReport& report, const Trajectory* reference) {
  if (!reference) return;
  if (reference->nodes.size() != report.reconstructed.nodes.size())
    throw InvalidInput("reconstruction: reference trajectory has a different depth");
  report.per_node_error.reserve(reference->nodes.size());
  for (std::size_t n = 0; n < reference->nodes.size(); ++n) {
    const double e = distance(reference->nodes[n], report.reconstructed.nodes[n]);
    report.per_node_error.push_back(e);
    report.max_error = std::max(report.max_error, e);
  }
}

inline Vector reverse_euler_step(const ResidualFamily& family, const Vector& x_next, const Vector& theta, double h) {
  Vector x = x_next;
  x.axpy(-h, family.eval(x_next, theta));
  return x;
}

/// x̃_n from x̃_{n+1}; writes ỹ_n into *midpoint when requested.
inline Vector reverse_heun_step(const ResidualFamily& family, const Vector& x_next, const Vector& theta_n,
                                const Vector& theta_next, double h, Vector* midpoint) {
  const Vector f_next = family.eval(x_next, theta_next);
  Vector y = x_next;
  y.axpy(-h, f_next);
  Vector x = x_next;
  x.axpy(-0.5 * h, f_next);
  x.axpy(-0.5 * h, family.eval(y, theta_n));
  if (midpoint) *midpoint = std::move(y);
  return x;
}

inline GradientSet collect(std::size_t depth, std::size_t state_dim, const std::function<SweepResult(AdjointSink)>& run) {
  GradientSet out;
  out.param_grads.resize(depth);
  out.state_grads.assign(depth + 1, Vector(state_dim));
  SweepResult r = run([&](std::size_t layer, const Vector& pg, const Vector& sg) {
    out.param_grads[layer] = pg;
    out.state_grads[layer + 1] = sg;
  });
  out.state_grads[0] = r.input_grad;
  out.input_grad = std::move(r.input_grad);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Exact backpropagation
// ---------------------------------------------------------------------------

/// Reverse mode through a stored Euler trajectory.
inline GradientSet backprop_exact(const ResidualFamily& family, const WeightSchedule& schedule, const Trajectory& traj,
                                  const Vector& output_grad) {
  detail::check_trajectory(family, schedule, traj, Scheme::euler);
  detail::check_output_grad(family, output_grad);
  const std::size_t depth = schedule.depth();
  const double h = 1.0 / static_cast<double>(depth);
  GradientSet out;
  out.param_grads.resize(depth);
  out.state_grads.resize(depth + 1);
  out.state_grads[depth] = output_grad;
  for (std::size_t k = depth; k-- > 0;) {
    const Vector& g = out.state_grads[k + 1];
    out.param_grads[k] = h * family.vjp_params(traj.nodes[k], schedule[k], g);
    Vector next = g;
    next.axpy(h, family.vjp_state(traj.nodes[k], schedule[k], g));
    out.state_grads[k] = std::move(next);
  }
  out.input_grad = out.state_grads[0];
  return out;
}

/// Reverse mode through a stored Heun trajectory (nodes and midpoints).
inline GradientSet backprop_exact_heun(const ResidualFamily& family, const WeightSchedule& schedule,
                                       const Trajectory& traj, const Vector& output_grad) {
  detail::check_trajectory(family, schedule, traj, Scheme::heun);
  detail::check_output_grad(family, output_grad);
  const std::size_t depth = schedule.depth();
  const double h = 1.0 / static_cast<double>(depth);
  GradientSet out;
  out.param_grads.assign(depth, Vector(family.param_dim));
  out.state_grads.resize(depth + 1);
  out.state_grads[depth] = output_grad;
  for (std::size_t k = depth; k-- > 0;) {
    auto step = detail::heun_step_vjp(family, traj.nodes[k], (*traj.midpoints)[k], schedule[k],
                                      schedule.extended(k + 1), h, out.state_grads[k + 1]);
    out.param_grads[k] += step.param_left;
    if (k + 1 < depth) {
      out.param_grads[k + 1] += step.param_right;
    } else {
      detail::fold_terminal(schedule, out.param_grads[k], step.param_right);
    }
    out.state_grads[k] = std::move(step.state);
  }
  out.input_grad = out.state_grads[0];
  return out;
}

/// Parameter gradients assembled from a two-term Heun formula with a
/// different index pairing: the step-n term is paired with ∇_{x_n} and
/// the step-(n-1) term with (I + J_{n-1}/N)ᵀ ∇_{x_{n-1}}, evaluated at
/// θ_{n-1}. Kept as a diagnostic to compare against the chain rule.
inline std::vector<Vector> heun_gradient_literal(const ResidualFamily& family, const WeightSchedule& schedule,
                                                 const Trajectory& traj, const GradientSet& exact) {
  detail::check_trajectory(family, schedule, traj, Scheme::heun);
  const std::size_t depth = schedule.depth();
  const double h = 1.0 / static_cast<double>(depth);
  std::vector<Vector> out;
  out.reserve(depth);
  for (std::size_t n = 0; n < depth; ++n) {
    const Vector& x = traj.nodes[n];
    const Vector& y = (*traj.midpoints)[n];
    const Vector& g = exact.state_grads[n];
    Vector inner = g;
    inner.axpy(h, family.vjp_state(y, schedule.extended(n + 1), g));
    Vector grad = (0.5 * h) * family.vjp_params(x, schedule[n], inner);
    if (n > 0) {
      const Vector& gp = exact.state_grads[n - 1];
      Vector v = gp;
      v.axpy(h, family.vjp_state(traj.nodes[n - 1], schedule[n - 1], gp));
      grad.axpy(0.5 * h, family.vjp_params((*traj.midpoints)[n - 1], schedule[n - 1], v));
    }
    out.push_back(std::move(grad));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse reconstruction
// ---------------------------------------------------------------------------

/// x̃_n = x̃_{n+1} - f(x̃_{n+1}, θ_n)/N starting from x̃_N = xN.
inline ReconstructionReport reconstruct_backward_euler(const ResidualFamily& family, const WeightSchedule& schedule,
                                                       const Vector& xN, const Trajectory* reference = nullptr) {
  detail::check_chain_inputs(family, schedule, xN);
  const std::size_t depth = schedule.depth();
  const double h = 1.0 / static_cast<double>(depth);
  ReconstructionReport report;
  Trajectory& rec = report.reconstructed;
  rec.depth = depth;
  rec.scheme = Scheme::euler;
  rec.nodes.assign(depth + 1, Vector());
  rec.nodes[depth] = xN;
  for (std::size_t k = depth; k-- > 0;) {
    rec.nodes[k] = detail::reverse_euler_step(family, rec.nodes[k + 1], schedule[k], h);
    check_state(rec.nodes[k], k);
  }
  detail::record_errors(report, reference);
  return report;
}

/// Reverse Heun sweep; records ỹ_n as the reconstructed midpoints.
inline ReconstructionReport reconstruct_backward_heun(const ResidualFamily& family, const WeightSchedule& schedule,
                                                      const Vector& xN, const Trajectory* reference = nullptr) {
  detail::check_chain_inputs(family, schedule, xN);
  const std::size_t depth = schedule.depth();
  const double h = 1.0 / static_cast<double>(depth);
  ReconstructionReport report;
  Trajectory& rec = report.reconstructed;
  rec.depth = depth;
  rec.scheme = Scheme::heun;
  rec.nodes.assign(depth + 1, Vector());
  std::vector<Vector> mids(depth);
  rec.nodes[depth] = xN;
  for (std::size_t k = depth; k-- > 0;) {
    rec.nodes[k] =
        detail::reverse_heun_step(family, rec.nodes[k + 1], schedule[k], schedule.extended(k + 1), h, &mids[k]);
    check_state(rec.nodes[k], k);
  }
  rec.midpoints = std::move(mids);
  detail::record_errors(report, reference);
  return report;
}

// ---------------------------------------------------------------------------
// Memory-free adjoint sweeps
// ---------------------------------------------------------------------------

/// Single reverse sweep interleaving Euler reconstruction with gradient
/// accumulation. Holds one state, one state gradient and the current
/// parameter gradient; per-layer results leave through `sink`.
inline SweepResult adjoint_sweep_euler(const ResidualFamily& family, const WeightSchedule& schedule, const Vector& xN,
                                       const Vector& output_grad, const AdjointSink& sink) {
  detail::check_chain_inputs(family, schedule, xN);
  detail::check_output_grad(family, output_grad);
  const std::size_t depth = schedule.depth();
  const double h = 1.0 / static_cast<double>(depth);
  Vector x = xN;
  Vector g = output_grad;
  for (std::size_t k = depth; k-- > 0;) {
    const Vector& theta = schedule[k];
    x = detail::reverse_euler_step(family, x, theta, h);
    check_state(x, k);
    const Vector pg = h * family.vjp_params(x, theta, g);
    sink(k, pg, g);
    g.axpy(h, family.vjp_state(x, theta, g));
  }
  return {std::move(x), std::move(g)};
}

inline GradientSet backprop_adjoint_euler(const ResidualFamily& family, const WeightSchedule& schedule,
                                          const Vector& xN, const Vector& output_grad) {
  return detail::collect(schedule.depth(), family.state_dim, [&](AdjointSink sink) {
    return adjoint_sweep_euler(family, schedule, xN, output_grad, sink);
  });
}

/// Heun counterpart: reconstructs x̃_n by the reverse Heun step, recomputes
/// the forward predictor from x̃_n and applies the chain rule of the forward
/// step. θ_{n+1} receives contributions from two steps, so one pending
/// parameter gradient is carried across iterations.
inline SweepResult adjoint_sweep_heun(const ResidualFamily& family, const WeightSchedule& schedule, const Vector& xN,
                                      const Vector& output_grad, const AdjointSink& sink) {
  detail::check_chain_inputs(family, schedule, xN);
  detail::check_output_grad(family, output_grad);
  const std::size_t depth = schedule.depth();
  const double h = 1.0 / static_cast<double>(depth);
  Vector x = xN;
  Vector g = output_grad;
  Vector pending(family.param_dim);  // gradient of θ_{k+1} accumulated so far
  Vector pending_state;              // ∇_{x_{k+1}} to report with θ_{k+1}
  for (std::size_t k = depth; k-- > 0;) {
    const Vector& theta = schedule[k];
    const Vector& theta_next = schedule.extended(k + 1);
    x = detail::reverse_heun_step(family, x, theta, theta_next, h, nullptr);
    check_state(x, k);
    Vector y = x;
    y.axpy(h, family.eval(x, theta));
    auto step = detail::heun_step_vjp(family, x, y, theta, theta_next, h, g);
    if (k + 1 < depth) {
      pending += step.param_right;
      sink(k + 1, pending, pending_state);
      pending = std::move(step.param_left);
    } else {
      pending = std::move(step.param_left);
      detail::fold_terminal(schedule, pending, step.param_right);
    }
    pending_state = std::move(g);
    g = std::move(step.state);
  }
  sink(0, pending, pending_state);
  return {std::move(x), std::move(g)};
}

inline GradientSet backprop_adjoint_heun(const ResidualFamily& family, const WeightSchedule& schedule,
                                         const Vector& xN, const Vector& output_grad) {
  return detail::collect(schedule.depth(), family.state_dim, [&](AdjointSink sink) {
    return adjoint_sweep_heun(family, schedule, xN, output_grad, sink);
  });
}

// ---------------------------------------------------------------------------
// Error metrics
// ---------------------------------------------------------------------------

inline constexpr double kRelativeErrorFloor = 1e-15;

struct GradientComparison {
  std::vector<double> per_layer_abs;
  std::vector<double> per_layer_rel;
  double max_abs = 0.0;
  double max_rel = 0.0;
};

inline GradientComparison compare_gradients(const GradientSet& exact, const GradientSet& approx) {
  if (exact.param_grads.size() != approx.param_grads.size())
    throw InvalidInput("compare_gradients: different numbers of layers");
  GradientComparison c;
  for (std::size_t n = 0; n < exact.param_grads.size(); ++n) {
    if (exact.param_grads[n].dim() != approx.param_grads[n].dim())
      throw InvalidInput("compare_gradients: layer " + std::to_string(n) + " has mismatched dimensions");
    const double abs_err = distance(exact.param_grads[n], approx.param_grads[n]);
    const double rel_err = abs_err / std::max(norm(exact.param_grads[n]), kRelativeErrorFloor);
    c.per_layer_abs.push_back(abs_err);
    c.per_layer_rel.push_back(rel_err);
    c.max_abs = std::max(c.max_abs, abs_err);
    c.max_rel = std::max(c.max_rel, rel_err);
  }
  return c;
}

/// `layer,abs_err,rel_err`, one row per layer and a final `max` row.
inline void write_comparison_csv(std::ostream& out, const GradientComparison& c) {
  out << "layer,abs_err,rel_err\n";
  for (std::size_t n = 0; n < c.per_layer_abs.size(); ++n)
    out << n << ',' << format_double(c.per_layer_abs[n]) << ',' << format_double(c.per_layer_rel[n]) << '\n';
  out << "max," << format_double(c.max_abs) << ',' << format_double(c.max_rel) << '\n';
}

// ---------------------------------------------------------------------------
// One-step Heun inversion residual
// ---------------------------------------------------------------------------

struct HeunStepResidual {
  double measured = 0.0;   // ‖ψ_n(x + φ_n(x)/N) - φ_n(x)‖
  double predicted = 0.0;  // ‖(J_{n+1} - J_n)[f_{n+1} - f_n]‖ / (4N)
};

/// φ_n and ψ_n are the forward and reverse Heun increments of layer n, so
/// that x_{n+1} = x_n + φ_n(x_n)/N and x̃_n = x̃_{n+1} - ψ_n(x̃_{n+1})/N.
inline HeunStepResidual heun_step_residual(const ResidualFamily& family, const WeightSchedule& schedule,
                                           std::size_t layer, const Vector& x) {
  family.check_schedule(schedule);
  if (layer >= schedule.depth()) throw InvalidInput("heun_step_residual: layer out of range");
  const double h = 1.0 / static_cast<double>(schedule.depth());
  const Vector& a = schedule[layer];
  const Vector& b = schedule.extended(layer + 1);
  const Vector x_next = detail::heun_step(family, x, a, b, h, nullptr);
  const Vector phi = (1.0 / h) * (x_next - x);
  const Vector back = detail::reverse_heun_step(family, x_next, a, b, h, nullptr);
  const Vector psi = (1.0 / h) * (x_next - back);
  HeunStepResidual r;
  r.measured = distance(psi, phi);
  const Matrix jdiff = family.jac_state(x, b) - family.jac_state(x, a);
  r.predicted = 0.25 * h * norm(jdiff * (family.eval(x, b) - family.eval(x, a)));
  return r;
}

}  // namespace odenet
