#pragma once

// Deep linear residual networks x -> Π x with Π = (I + θ_N/N)···(I + θ_1/N),
// the depth-rescaled gradient flow on ‖Π - B‖_Σ², and the diagnostics that
// track how the trained weights behave as a function of depth.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "odenet/dynamics.hpp"
#include "odenet/errors.hpp"
#include "odenet/numerics.hpp"

namespace odenet {

struct RegressionProblem {
  Matrix sigma;     // Σ, symmetric positive definite
  Matrix b_target;  // B
  double m = 0.0;      // smallest eigenvalue of Σ
  double m_max = 0.0;  // largest eigenvalue of Σ

  std::size_t dim() const noexcept { return sigma.rows(); }
};

inline RegressionProblem build_problem(const Matrix& sigma, const Matrix& b_target) {
  if (!sigma.square() || sigma.rows() == 0) throw InvalidInput("build_problem: Σ must be a non-empty square matrix");
  if (b_target.rows() != sigma.rows() || b_target.cols() != sigma.cols())
    throw InvalidInput("build_problem: B and Σ have different shapes");
  if (!b_target.all_finite()) throw InvalidInput("build_problem: B has non-finite entries");
  const std::size_t d = sigma.rows();
  const double scale = std::max(frobenius_norm(sigma), 1.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::abs(sigma(i, j) - sigma(j, i)) > 1e-12 * scale)
        throw InvalidInput("build_problem: Σ is not symmetric");
  const std::vector<double> eig = symmetric_eigenvalues(sigma);
  if (!(eig.front() > 0.0))
    throw InvalidInput("build_problem: Σ is not positive definite (eigenvalue " + format_double(eig.front()) + ")");
  return {sigma, b_target, eig.front(), eig.back()};
}

/// θ_1..θ_N stored as layers[0..N-1], plus the flow time.
struct FlowState {
  std::vector<Matrix> layers;
  double t = 0.0;

  std::size_t depth() const noexcept { return layers.size(); }
};

/// ψ(s) in R^{d×d}, used to initialize θ_n = ψ(n/N).
using MatrixProfile = std::function<Matrix(double)>;

inline FlowState profile_init(const MatrixProfile& profile, std::size_t depth) {
  if (depth < 1) throw InvalidInput("profile_init: depth must be at least 1");
  FlowState s;
  s.layers.reserve(depth);
  for (std::size_t n = 1; n <= depth; ++n) s.layers.push_back(profile(static_cast<double>(n) / static_cast<double>(depth)));
  return s;
}

namespace detail {

inline void check_flow_state(const FlowState& state, const RegressionProblem& problem) {
  if (state.layers.empty()) throw InvalidInput("linear flow: state has no layers");
  const std::size_t d = problem.dim();
  for (const Matrix& th : state.layers)
    if (th.rows() != d || th.cols() != d) throw InvalidInput("linear flow: layer shape does not match the problem");
}

inline Matrix residual_factor(const Matrix& theta, double h) {
  Matrix f = h * theta;
  for (std::size_t i = 0; i < f.rows(); ++i) f(i, i) += 1.0;
  return f;
}

}  // namespace detail

/// Π = (I + θ_N/N)···(I + θ_1/N).
inline Matrix end_to_end(const FlowState& state) {
  if (state.layers.empty()) throw InvalidInput("end_to_end: state has no layers");
  const double h = 1.0 / static_cast<double>(state.depth());
  Matrix p = Matrix::identity(state.layers.front().rows());
  for (const Matrix& th : state.layers) p = detail::residual_factor(th, h) * p;
  return p;
}

/// ‖A‖_Σ² = Tr(A Σ Aᵀ).
inline double sigma_norm_sq(const Matrix& a, const Matrix& sigma) { return (a * sigma * a.transpose()).trace(); }

inline double loss(const FlowState& state, const RegressionProblem& problem) {
  detail::check_flow_state(state, problem);
  return sigma_norm_sq(end_to_end(state) - problem.b_target, problem.sigma);
}

/// Rescaled layer gradients N∇_n = Π_{:n}ᵀ (Π - B) Σ Π_{n:}ᵀ for n = 1..N,
/// with Π_{:n} the product of the factors above layer n and Π_{n:} of those
/// below it. Returned as a 0-based vector.
inline std::vector<Matrix> all_layer_gradients(const FlowState& state, const RegressionProblem& problem) {
  detail::check_flow_state(state, problem);
  const std::size_t depth = state.depth();
  const std::size_t d = problem.dim();
  const double h = 1.0 / static_cast<double>(depth);
  std::vector<Matrix> below(depth + 1);  // below[k] = factors 1..k
  below[0] = Matrix::identity(d);
  for (std::size_t k = 0; k < depth; ++k) below[k + 1] = detail::residual_factor(state.layers[k], h) * below[k];
  const Matrix r = (below[depth] - problem.b_target) * problem.sigma;
  std::vector<Matrix> grads(depth);
  Matrix above = Matrix::identity(d);  // factors n+1..N
  for (std::size_t k = depth; k-- > 0;) {
    grads[k] = above.transpose() * r * below[k].transpose();
    above = above * detail::residual_factor(state.layers[k], h);
  }
  return grads;
}

/// N∇_n for one 1-based layer index n.
inline Matrix layer_gradient(const FlowState& state, const RegressionProblem& problem, std::size_t n) {
  if (n < 1 || n > state.depth())
    throw InvalidInput("layer_gradient: layer " + std::to_string(n) + " outside 1.." + std::to_string(state.depth()));
  return all_layer_gradients(state, problem)[n - 1];
}

// ---------------------------------------------------------------------------
// Assumption checks
// ---------------------------------------------------------------------------

/// m / (4 √(2 M e³)), the bound on √ℓ(0).
inline double assumption1_threshold(const RegressionProblem& problem) {
  return problem.m / (4.0 * std::sqrt(2.0 * problem.m_max * std::exp(3.0)));
}

inline constexpr double kInitNormBound = 0.25;

struct Assumption1Report {
  bool passes = false;
  double loss_margin = 0.0;  // threshold - √ℓ(0)
  double norm_margin = 0.0;  // 1/4 - max_n ‖θ_n(0)‖ (spectral)
  double max_norm_frobenius = 0.0;
};

inline Assumption1Report check_assumption1(const FlowState& state0, const RegressionProblem& problem) {
  Assumption1Report r;
  r.loss_margin = assumption1_threshold(problem) - std::sqrt(loss(state0, problem));
  double max_norm = 0.0;
  for (const Matrix& th : state0.layers) {
    max_norm = std::max(max_norm, largest_singular_value(th));
    r.max_norm_frobenius = std::max(r.max_norm_frobenius, frobenius_norm(th));
  }
  r.norm_margin = kInitNormBound - max_norm;
  r.passes = r.loss_margin > 0.0 && r.norm_margin >= 0.0;
  return r;
}

/// P(1) for dP/ds = ψ(s) P, P(0) = I, by RK4 with `steps` uniform steps.
inline Matrix profile_flow_map(const MatrixProfile& profile, std::size_t dim, std::size_t steps = 4096) {
  if (steps < 1) throw InvalidInput("profile_flow_map: steps must be at least 1");
  const double h = 1.0 / static_cast<double>(steps);
  Matrix p = Matrix::identity(dim);
  for (std::size_t k = 0; k < steps; ++k) {
    const double s = static_cast<double>(k) * h;
    const Matrix a0 = profile(s);
    const Matrix am = profile(s + 0.5 * h);
    const Matrix a1 = profile(s + h);
    const Matrix k1 = a0 * p;
    const Matrix k2 = am * (p + (0.5 * h) * k1);
    const Matrix k3 = am * (p + (0.5 * h) * k2);
    const Matrix k4 = a1 * (p + h * k3);
    p.axpy(h / 6.0, k1).axpy(h / 3.0, k2).axpy(h / 3.0, k3).axpy(h / 6.0, k4);
  }
  return p;
}

/// B = Π_∞ + εE, where Π_∞ is the depth limit of the end-to-end map of a
/// profile-initialized network, ‖E‖_Σ = 1 is a seeded random direction and ε
/// puts the initial loss at `fraction` of the assumption-1 loss bound. The
/// same B is shared by every depth built from the profile.
inline RegressionProblem make_compliant_problem(const Matrix& sigma, const MatrixProfile& profile, std::uint64_t seed,
                                                double fraction = 0.5) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidInput("make_compliant_problem: fraction must be in (0, 1)");
  const std::size_t d = sigma.rows();
  const RegressionProblem base = build_problem(sigma, Matrix(d, d));
  Rng rng(seed);
  Matrix e = random_uniform_matrix(rng, d, d, -1.0, 1.0);
  e *= 1.0 / std::sqrt(sigma_norm_sq(e, sigma));
  const double threshold = assumption1_threshold(base);
  const double eps = std::sqrt(fraction) * threshold;
  Matrix b = profile_flow_map(profile, d);
  b.axpy(eps, e);
  return build_problem(sigma, b);
}

// ---------------------------------------------------------------------------
// Gradient flow
// ---------------------------------------------------------------------------

/// Largest step allowed by default: min(1e-2, 0.1/M).
inline double default_flow_dt(const RegressionProblem& problem) { return std::min(1e-2, 0.1 / problem.m_max); }

/// Relative (to ℓ(0)) loss increase tolerated between consecutive steps.
inline constexpr double kMonotoneTolerance = 1e-9;

struct FlowSample {
  double t = 0.0;
  double loss = 0.0;
  double max_theta_norm = 0.0;  // spectral
  double max_theta_frobenius = 0.0;
  double smoothness_stat = 0.0;  // N · max_n ‖θ_{n+1} - θ_n‖ (spectral)
};

struct FlowSnapshot {
  double t = 0.0;
  std::vector<Matrix> layers;
};

struct FlowTrace {
  std::vector<FlowSample> samples;
  std::vector<FlowSnapshot> snapshots;
  RegressionProblem problem;
  double dt = 0.0;
  std::size_t depth = 0;
};

struct FlowOptions {
  double dt = 0.0;                    // 0 selects default_flow_dt
  std::vector<double> snapshot_times;  // sorted, within [0, t_end]
  std::size_t sample_stride = 1;       // record a monitor sample every k steps
};

inline FlowSample flow_sample(const FlowState& state, const RegressionProblem& problem) {
  FlowSample s;
  s.t = state.t;
  s.loss = loss(state, problem);
  for (const Matrix& th : state.layers) {
    s.max_theta_norm = std::max(s.max_theta_norm, largest_singular_value(th));
    s.max_theta_frobenius = std::max(s.max_theta_frobenius, frobenius_norm(th));
  }
  double gap = 0.0;
  for (std::size_t n = 0; n + 1 < state.depth(); ++n)
    gap = std::max(gap, largest_singular_value(state.layers[n + 1] - state.layers[n]));
  s.smoothness_stat = static_cast<double>(state.depth()) * gap;
  return s;
}

namespace detail {

inline void add_scaled(std::vector<Matrix>& out, double s, const std::vector<Matrix>& dir) {
  for (std::size_t k = 0; k < out.size(); ++k) out[k].axpy(s, dir[k]);
}

/// One RK4 step of dθ_n/dt = -N∇_n.
inline void flow_rk4_step(FlowState& state, const RegressionProblem& problem, double dt) {
  FlowState probe = state;
  const std::vector<Matrix> k1 = all_layer_gradients(state, problem);
  add_scaled(probe.layers, -0.5 * dt, k1);
  const std::vector<Matrix> k2 = all_layer_gradients(probe, problem);
  probe.layers = state.layers;
  add_scaled(probe.layers, -0.5 * dt, k2);
  const std::vector<Matrix> k3 = all_layer_gradients(probe, problem);
  probe.layers = state.layers;
  add_scaled(probe.layers, -dt, k3);
  const std::vector<Matrix> k4 = all_layer_gradients(probe, problem);
  add_scaled(state.layers, -dt / 6.0, k1);
  add_scaled(state.layers, -dt / 3.0, k2);
  add_scaled(state.layers, -dt / 3.0, k3);
  add_scaled(state.layers, -dt / 6.0, k4);
  state.t += dt;
}

}  // namespace detail

/// Integrates the rescaled flow to t_end with RK4. Each interval between
/// consecutive snapshot times is split into equal steps no longer than dt so
/// every snapshot time is hit exactly.
inline FlowTrace integrate_flow(const FlowState& state0, const RegressionProblem& problem, double t_end,
                                const FlowOptions& options = {}) {
  detail::check_flow_state(state0, problem);
  if (!(t_end > 0.0)) throw InvalidInput("integrate_flow: t_end must be positive");
  const double dt = options.dt > 0.0 ? options.dt : default_flow_dt(problem);
  if (options.dt < 0.0) throw InvalidInput("integrate_flow: dt must be positive");
  if (options.sample_stride < 1) throw InvalidInput("integrate_flow: sample_stride must be at least 1");
  const double stability = 0.1 / problem.m_max;
  if (dt > stability * (1.0 + 1e-12))
    throw StepSizeError("integrate_flow: dt = " + format_double(dt) + " exceeds the bound 0.1/M = " +
                        format_double(stability));
  std::vector<double> stops = options.snapshot_times;
  for (std::size_t i = 0; i < stops.size(); ++i) {
    if (stops[i] < 0.0 || stops[i] > t_end) throw InvalidInput("integrate_flow: snapshot time outside [0, t_end]");
    if (i > 0 && !(stops[i] > stops[i - 1])) throw InvalidInput("integrate_flow: snapshot times must increase");
  }
  if (stops.empty() || stops.back() < t_end) stops.push_back(t_end);

  FlowTrace trace;
  trace.problem = problem;
  trace.dt = dt;
  trace.depth = state0.depth();
  FlowState state = state0;
  state.t = 0.0;
  const double loss0 = loss(state, problem);
  double prev_loss = loss0;
  trace.samples.push_back(flow_sample(state, problem));

  std::size_t next_snapshot = 0;
  auto take_snapshots = [&](double t_now) {
    while (next_snapshot < options.snapshot_times.size() && options.snapshot_times[next_snapshot] == t_now) {
      trace.snapshots.push_back({t_now, state.layers});
      ++next_snapshot;
    }
  };
  take_snapshots(0.0);

  std::size_t step_count = 0;
  double t_start = 0.0;
  for (double stop : stops) {
    const double span = stop - t_start;
    if (span <= 0.0) continue;
    const auto steps = static_cast<std::size_t>(std::ceil(span / dt - 1e-9));
    const double h = span / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
      detail::flow_rk4_step(state, problem, h);
      ++step_count;
      state.t = k + 1 == steps ? stop : t_start + static_cast<double>(k + 1) * h;
      for (const Matrix& th : state.layers)
        if (!th.all_finite()) throw DivergenceError(step_count, "non-finite weights in the gradient flow");
      const double l = loss(state, problem);
      if (l > prev_loss + kMonotoneTolerance * loss0)
        throw StepSizeError("integrate_flow: loss increased from " + format_double(prev_loss) + " to " +
                            format_double(l) + " at t = " + format_double(state.t) + "; use a smaller dt");
      prev_loss = l;
      if (step_count % options.sample_stride == 0 || k + 1 == steps) {
        FlowSample s = flow_sample(state, problem);
        if (s.t > trace.samples.back().t) trace.samples.push_back(s);
      }
    }
    t_start = stop;
    take_snapshots(stop);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Monitors
// ---------------------------------------------------------------------------

inline constexpr double kNormBound = 0.5;
inline constexpr double kDecaySlack = 1e-3;
inline constexpr double kSmoothnessGrowth = 10.0;

struct InvariantReport {
  double max_theta_norm = 0.0;
  double max_theta_frobenius = 0.0;
  double initial_smoothness = 0.0;
  double max_smoothness = 0.0;
  double max_decay_ratio = 0.0;  // max_t ℓ(t) / (e^{-(2/e) m t} ℓ(0))
  bool norms_ok = false;
  bool decay_ok = false;
  bool smoothness_ok = false;

  bool all_ok() const noexcept { return norms_ok && decay_ok && smoothness_ok; }
};

inline InvariantReport monitor_invariants(const FlowTrace& trace, const RegressionProblem& problem) {
  if (trace.samples.empty()) throw InvalidInput("monitor_invariants: empty trace");
  InvariantReport r;
  const FlowSample& first = trace.samples.front();
  r.initial_smoothness = first.smoothness_stat;
  const double rate = 2.0 / std::numbers::e * problem.m;
  for (const FlowSample& s : trace.samples) {
    r.max_theta_norm = std::max(r.max_theta_norm, s.max_theta_norm);
    r.max_theta_frobenius = std::max(r.max_theta_frobenius, s.max_theta_frobenius);
    r.max_smoothness = std::max(r.max_smoothness, s.smoothness_stat);
    if (first.loss > 0.0) r.max_decay_ratio = std::max(r.max_decay_ratio, s.loss / (std::exp(-rate * s.t) * first.loss));
  }
  r.norms_ok = r.max_theta_norm < kNormBound;
  r.decay_ok = r.max_decay_ratio <= 1.0 + kDecaySlack;
  r.smoothness_ok = r.max_smoothness <= kSmoothnessGrowth * r.initial_smoothness + 1e-10;
  return r;
}

namespace detail {

inline void check_same_snapshots(const FlowTrace& a, const FlowTrace& b) {
  if (a.snapshots.size() != b.snapshots.size()) throw InvalidInput("traces have different snapshot counts");
  for (std::size_t i = 0; i < a.snapshots.size(); ++i)
    if (a.snapshots[i].t != b.snapshots[i].t) throw InvalidInput("traces have different snapshot times");
}

}  // namespace detail

/// sup over snapshots and n = 1..N of ‖θ_n^N(t) - θ_{2n}^{2N}(t)‖ (spectral).
inline double depth_double_compare(const FlowTrace& trace_n, const FlowTrace& trace_2n) {
  if (trace_2n.depth != 2 * trace_n.depth) throw InvalidInput("depth_double_compare: second trace must be twice as deep");
  detail::check_same_snapshots(trace_n, trace_2n);
  double best = 0.0;
  for (std::size_t i = 0; i < trace_n.snapshots.size(); ++i) {
    const auto& a = trace_n.snapshots[i].layers;
    const auto& b = trace_2n.snapshots[i].layers;
    for (std::size_t n = 1; n <= trace_n.depth; ++n)
      best = std::max(best, largest_singular_value(a[n - 1] - b[2 * n - 1]));
  }
  return best;
}

/// L2-in-depth distance between the piecewise-constant maps ψ_N(s) = θ^N_{⌊Ns⌋+1}
/// and ψ_R(s) of a deeper network (R a multiple of N), Frobenius pointwise.
inline double limit_map_distance(const std::vector<Matrix>& layers, const std::vector<Matrix>& reference) {
  const std::size_t n = layers.size();
  const std::size_t r = reference.size();
  if (n == 0 || r % n != 0) throw InvalidInput("limit_map_distance: reference depth must be a multiple of the depth");
  const std::size_t ratio = r / n;
  double acc = 0.0;
  for (std::size_t j = 0; j < r; ++j) {
    const double e = frobenius_norm(layers[j / ratio] - reference[j]);
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(r));
}

struct LimitMap {
  std::vector<double> times;
  std::vector<std::size_t> depths;              // compared depths, increasing
  std::size_t reference_depth = 0;
  std::vector<std::vector<double>> distances;   // [time][depth]
  std::vector<SlopeFit> slopes;                 // per time, distance vs N
  std::vector<double> sup_distance;             // per depth, over times
  std::optional<SlopeFit> sup_slope;
};

/// Compares every trace but the deepest against the deepest one.
inline LimitMap extract_limit_map(const std::vector<FlowTrace>& traces) {
  if (traces.size() < 2) throw InvalidInput("extract_limit_map: need at least two traces");
  const FlowTrace& ref = traces.back();
  LimitMap map;
  map.reference_depth = ref.depth;
  for (std::size_t i = 0; i + 1 < traces.size(); ++i) {
    if (i > 0 && traces[i].depth <= traces[i - 1].depth) throw InvalidInput("extract_limit_map: depths must increase");
    if (ref.depth <= traces[i].depth || ref.depth % traces[i].depth != 0)
      throw InvalidInput("extract_limit_map: reference depth must be a multiple of every depth");
    detail::check_same_snapshots(traces[i], ref);
    map.depths.push_back(traces[i].depth);
  }
  for (const auto& snap : ref.snapshots) map.times.push_back(snap.t);
  map.distances.assign(map.times.size(), std::vector<double>(map.depths.size()));
  map.sup_distance.assign(map.depths.size(), 0.0);
  for (std::size_t ti = 0; ti < map.times.size(); ++ti) {
    std::vector<DepthError> pts;
    for (std::size_t i = 0; i < map.depths.size(); ++i) {
      const double dist = limit_map_distance(traces[i].snapshots[ti].layers, ref.snapshots[ti].layers);
      map.distances[ti][i] = dist;
      map.sup_distance[i] = std::max(map.sup_distance[i], dist);
      pts.push_back({map.depths[i], dist});
    }
    const bool fittable = pts.size() >= 2 && std::all_of(pts.begin(), pts.end(), [](const DepthError& p) {
      return p.error > 0.0;
    });
    map.slopes.push_back(fittable ? fit_loglog_slope(pts) : SlopeFit{});
  }
  if (map.depths.size() >= 2 &&
      std::all_of(map.sup_distance.begin(), map.sup_distance.end(), [](double v) { return v > 0.0; })) {
    std::vector<DepthError> pts;
    for (std::size_t i = 0; i < map.depths.size(); ++i) pts.push_back({map.depths[i], map.sup_distance[i]});
    map.sup_slope = fit_loglog_slope(pts);
  }
  return map;
}

/// max over `probes` seeded unit vectors of ‖Π x0 - x(1)‖ where x solves
/// dx/ds = ψ_N(s) x with ψ_N piecewise constant on the layer grid.
inline double product_vs_ode(const FlowState& state, const RegressionProblem& problem, std::size_t probes = 20,
                             std::uint64_t seed = 0, std::size_t steps_per_layer = kOracleStepsPerLayer) {
  detail::check_flow_state(state, problem);
  const std::size_t depth = state.depth();
  const std::size_t d = problem.dim();
  const Matrix pi = end_to_end(state);
  const auto* layers = &state.layers;
  const VectorField field = make_piecewise_field(
      depth, [layers](const Vector& x, double, std::size_t piece) { return (*layers)[piece] * x; });
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < probes; ++k) {
    const Vector x0 = random_unit_vector(rng, d);
    const ODESolution sol = solve_ode_oracle(field, x0, steps_per_layer * depth, depth);
    worst = std::max(worst, distance(pi * x0, sol.final_state()));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline void write_trace_csv(std::ostream& out, const FlowTrace& trace) {
  out << "t,loss,max_theta_norm,smoothness_stat\n";
  for (const FlowSample& s : trace.samples)
    out << format_double(s.t) << ',' << format_double(s.loss) << ',' << format_double(s.max_theta_norm) << ','
        << format_double(s.smoothness_stat) << '\n';
}

/// One row per layer (1-based), entries of θ_n row-major.
inline void write_snapshot_csv(std::ostream& out, const FlowSnapshot& snap) {
  const std::size_t entries = snap.layers.empty() ? 0 : snap.layers.front().size();
  out << "layer";
  for (std::size_t j = 0; j < entries; ++j) out << ",p" << j;
  out << '\n';
  for (std::size_t n = 0; n < snap.layers.size(); ++n) {
    out << n + 1;
    for (double v : snap.layers[n].flat()) out << ',' << format_double(v);
    out << '\n';
  }
}

inline void write_limit_map_csv(std::ostream& out, const LimitMap& map) {
  out << "t,N,l2_distance\n";
  for (std::size_t ti = 0; ti < map.times.size(); ++ti)
    for (std::size_t i = 0; i < map.depths.size(); ++i)
      out << format_double(map.times[ti]) << ',' << map.depths[i] << ',' << format_double(map.distances[ti][i]) << '\n';
}

}  // namespace odenet
