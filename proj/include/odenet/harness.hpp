#pragma once

// Experiment drivers behind the command-line tool: depth scaling studies,
// the analytic tightness cases, linear gradient-flow studies and toy
// training. Every driver writes deterministic CSV files into the configured
// output directory.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "odenet/adjoint.hpp"
#include "odenet/config.hpp"
#include "odenet/dynamics.hpp"
#include "odenet/errors.hpp"
#include "odenet/linear_flow.hpp"
#include "odenet/numerics.hpp"
#include "odenet/residual_models.hpp"

namespace odenet {

/// Every depth of a study failed.
class AllDepthsFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A linear-flow initialization violates the small-loss / small-weight assumption.
class Assumption1Violation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

namespace detail {

inline std::filesystem::path prepare_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::filesystem::create_directories(p);
  return p;
}

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace detail

inline ResidualFamily make_family(const ExperimentConfig& c) {
  switch (c.family) {
    case FamilyKind::mlp: return make_mlp_family(c.state_dim, c.hidden);
    case FamilyKind::linear: return make_linear_family(c.state_dim);
    case FamilyKind::square: return make_square_family();
    case FamilyKind::constant: return make_constant_family(c.state_dim);
    case FamilyKind::zero: return make_zero_family(c.state_dim);
  }
  throw ConfigError("unknown family");
}

/// Depth-independent description of a schedule; sample(N) gives the depth-N
/// network. All randomness is drawn once at construction.
class ScheduleProfile {
 public:
  ScheduleProfile(ProfileKind kind, std::size_t param_dim, double scale, Rng& rng) : kind_(kind) {
    switch (kind) {
      case ProfileKind::lipschitz_profile:
        cubic_ = CubicProfile::random(param_dim, scale, rng);
        break;
      case ProfileKind::constant:
        a_ = random_uniform_vector(rng, param_dim, -scale, scale);
        break;
      case ProfileKind::alternating:
        a_ = random_uniform_vector(rng, param_dim, -scale, scale);
        b_ = random_uniform_vector(rng, param_dim, -scale, scale);
        break;
      case ProfileKind::index:
        if (param_dim != 1) throw ConfigError("the index profile needs a scalar parameter (family = constant, state_dim = 1)");
        break;
    }
  }

  WeightSchedule sample(std::size_t depth) const {
    switch (kind_) {
      case ProfileKind::lipschitz_profile: return cubic_->sample(depth);
      case ProfileKind::constant: return make_constant_schedule(depth, a_);
      case ProfileKind::alternating: return make_alternating_schedule(depth, a_, b_);
      case ProfileKind::index: return make_index_schedule(depth);
    }
    throw ConfigError("unknown profile");
  }

 private:
  ProfileKind kind_;
  std::optional<CubicProfile> cubic_;
  Vector a_;
  Vector b_;
};

// ---------------------------------------------------------------------------
// Scaling studies
// ---------------------------------------------------------------------------

struct StudyRecord {
  std::size_t depth = 0;
  std::string metric;
  double value = 0.0;
  std::string flag;  // empty, "floor" or "diverged"
};

struct MetricSlope {
  std::string metric;
  std::optional<SlopeFit> fit;
  std::string flag;  // empty, "low_confidence" or "insufficient_points"
};

struct StudyResult {
  std::vector<StudyRecord> records;
  std::vector<MetricSlope> slopes;
  std::size_t failed_depths = 0;

  const MetricSlope& slope(const std::string& metric) const {
    for (const auto& s : slopes)
      if (s.metric == metric) return s;
    throw InvalidInput("no slope for metric '" + metric + "'");
  }
  std::optional<double> value(std::size_t depth, const std::string& metric) const {
    for (const auto& r : records)
      if (r.depth == depth && r.metric == metric && r.flag.empty()) return r.value;
    return std::nullopt;
  }
};

/// Fixed input and loss target of a gradient study; L = ½‖x_N - target‖².
struct StudyProblem {
  ResidualFamily family;
  ScheduleProfile profile;
  Vector x0;
  Vector target;
};

inline StudyProblem make_study_problem(const ExperimentConfig& c) {
  Rng rng(c.seed);
  ResidualFamily family = make_family(c);
  ScheduleProfile profile(c.profile, family.param_dim, c.profile_scale, rng);
  Vector x0 = random_uniform_vector(rng, family.state_dim, -1.0, 1.0);
  Vector target = random_uniform_vector(rng, family.state_dim, -1.0, 1.0);
  return {std::move(family), std::move(profile), std::move(x0), std::move(target)};
}

namespace detail {

struct DepthMetrics {
  std::vector<std::pair<std::string, double>> values;
  std::vector<double> magnitudes;  // noise-floor reference per value
};

inline double max_norm(const std::vector<Vector>& vs) {
  double m = 0.0;
  for (const Vector& v : vs) m = std::max(m, norm(v));
  return m;
}

inline DepthMetrics study_depth(const ExperimentConfig& c, const StudyProblem& p, std::size_t depth) {
  const WeightSchedule schedule = p.profile.sample(depth);
  DepthMetrics out;
  auto add = [&](std::string name, double v, double magnitude) {
    out.values.emplace_back(std::move(name), v);
    out.magnitudes.push_back(magnitude);
  };
  if (c.experiment == ExperimentKind::approx_error) {
    const Trajectory traj = forward_euler_chain(p.family, schedule, p.x0);
    const double mag = max_norm(traj.nodes);
    for (FieldKind kind : {FieldKind::residual_interp, FieldKind::weight_interp}) {
      const VectorField field = interpolate(p.family, schedule, kind);
      const ODESolution sol = solve_ode_oracle(field, p.x0, depth);
      const double err = approximation_error(traj, sol).max;
      add(kind == FieldKind::residual_interp ? "approx_error_residual" : "approx_error_weight", err, mag);
    }
    return out;
  }
  const Scheme scheme = c.experiment == ExperimentKind::heun_adjoint ? Scheme::heun : Scheme::euler;
  const Trajectory traj = forward_chain(p.family, schedule, p.x0, scheme);
  const Vector out_grad = traj.final_state() - p.target;
  const GradientSet exact = scheme == Scheme::euler ? backprop_exact(p.family, schedule, traj, out_grad)
                                                    : backprop_exact_heun(p.family, schedule, traj, out_grad);
  const ReconstructionReport rec = scheme == Scheme::euler
                                       ? reconstruct_backward_euler(p.family, schedule, traj.final_state(), &traj)
                                       : reconstruct_backward_heun(p.family, schedule, traj.final_state(), &traj);
  const GradientSet approx = scheme == Scheme::euler
                                 ? backprop_adjoint_euler(p.family, schedule, traj.final_state(), out_grad)
                                 : backprop_adjoint_heun(p.family, schedule, traj.final_state(), out_grad);
  const GradientComparison cmp = compare_gradients(exact, approx);
  add("reconstruction_error", rec.max_error, max_norm(traj.nodes));
  add("gradient_error", cmp.max_abs, max_norm(exact.param_grads));
  add("gradient_rel_error", cmp.max_rel, 1.0);
  return out;
}

}  // namespace detail

inline void write_study_csv(std::ostream& out, const StudyResult& r) {
  out << "N,metric,value\n";
  for (const auto& rec : r.records)
    out << rec.depth << ',' << rec.metric << ',' << (rec.flag.empty() ? format_double(rec.value) : rec.flag) << '\n';
}

inline void write_slopes_csv(std::ostream& out, const StudyResult& r) {
  out << "metric,slope,intercept,r2,flag\n";
  for (const auto& s : r.slopes) {
    out << s.metric << ',';
    if (s.fit) {
      out << format_double(s.fit->slope) << ',' << format_double(s.fit->intercept) << ','
          << format_double(s.fit->r_squared);
    } else {
      out << ",,";
    }
    out << ',' << s.flag << '\n';
  }
}

/// Runs the configured forward/backward pair at every depth and fits
/// log-log slopes of each metric against N. Failures are per depth.
inline StudyResult compute_scaling_study(const ExperimentConfig& c) {
  if (c.experiment != ExperimentKind::approx_error && c.experiment != ExperimentKind::euler_adjoint &&
      c.experiment != ExperimentKind::heun_adjoint)
    throw ConfigError("study: experiment must be approx_error, euler_adjoint or heun_adjoint");
  const StudyProblem problem = make_study_problem(c);
  StudyResult result;
  std::vector<std::string> metric_order;
  for (std::size_t depth : c.depths) {
    try {
      const detail::DepthMetrics m = detail::study_depth(c, problem, depth);
      for (std::size_t i = 0; i < m.values.size(); ++i) {
        const auto& [name, v] = m.values[i];
        if (std::find(metric_order.begin(), metric_order.end(), name) == metric_order.end())
          metric_order.push_back(name);
        const bool floor = below_noise_floor(v, m.magnitudes[i]);
        result.records.push_back({depth, name, v, floor ? "floor" : ""});
      }
    } catch (const DivergenceError&) {
      ++result.failed_depths;
      result.records.push_back({depth, "all", 0.0, "diverged"});
    }
  }
  if (result.failed_depths == c.depths.size()) throw AllDepthsFailed("study: every depth diverged");
  for (const std::string& metric : metric_order) {
    std::vector<DepthError> pts;
    for (const auto& rec : result.records)
      if (rec.metric == metric && rec.flag.empty() && rec.value > 0.0) pts.push_back({rec.depth, rec.value});
    MetricSlope s{metric, std::nullopt, ""};
    if (pts.size() < 2) {
      s.flag = "insufficient_points";
    } else {
      s.fit = fit_loglog_slope(pts);
      if (s.fit->r_squared < c.low_confidence_r2) s.flag = "low_confidence";
    }
    result.slopes.push_back(std::move(s));
  }
  return result;
}

inline void write_plot_script(const std::filesystem::path& dir, const std::string& body) {
  auto out = detail::open_csv(dir / "plot.gp");
  out << "set datafile separator ','\n" << body;
}

inline StudyResult run_scaling_study(const ExperimentConfig& c) {
  StudyResult r = compute_scaling_study(c);
  const auto dir = detail::prepare_output_dir(c.output_dir);
  {
    auto out = detail::open_csv(dir / "study.csv");
    write_study_csv(out, r);
  }
  {
    auto out = detail::open_csv(dir / "slopes.csv");
    write_slopes_csv(out, r);
  }
  if (c.plot_script) {
    std::string body = "set logscale xy\nset xlabel 'N'\nset ylabel 'error'\nplot ";
    for (std::size_t i = 0; i < r.slopes.size(); ++i) {
      const std::string& m = r.slopes[i].metric;
      body += (i ? ", " : "") + std::string("'study.csv' using ($2 eq '") + m + "' ? $1 : 1/0):3 with linespoints title '" +
              m + "'";
    }
    write_plot_script(dir, body + "\n");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Tightness cases
// ---------------------------------------------------------------------------

struct TightnessRow {
  std::string name;
  std::size_t depth = 0;
  double measured = 0.0;
  double analytic = 0.0;
};

/// Gap |x_N - x(1)| for φ(x, s) = s (a = 1, b = 0), x0 = 0: chain θ_n = n/N.
inline double tightness_linear_in_s(std::size_t depth) {
  const ResidualFamily family = make_constant_family(1);
  std::vector<Vector> params;
  for (std::size_t n = 0; n < depth; ++n) params.push_back(Vector{static_cast<double>(n) / static_cast<double>(depth)});
  const WeightSchedule schedule(std::move(params), Vector{1.0});
  const Vector x0{0.0};
  const Trajectory traj = forward_euler_chain(family, schedule, x0);
  const VectorField field = make_direct_field([](const Vector&, double s) { return Vector{s}; });
  const ODESolution sol = solve_ode_oracle(field, x0, kOracleStepsPerLayer * depth, depth);
  return distance(traj.final_state(), sol.final_state());
}

/// Gap for f = n with residual interpolation.
inline double tightness_index(std::size_t depth) {
  const ResidualFamily family = make_constant_family(1);
  const WeightSchedule schedule = make_index_schedule(depth);
  const Vector x0{0.0};
  const Trajectory traj = forward_euler_chain(family, schedule, x0);
  const ODESolution sol = solve_ode_oracle(interpolate(family, schedule, FieldKind::residual_interp), x0, depth);
  return distance(traj.final_state(), sol.final_state());
}

/// Gap for f = θ², θ_n = (-1)^n with weight interpolation.
inline double tightness_alternating_square(std::size_t depth) {
  const ResidualFamily family = make_square_family();
  const WeightSchedule schedule = make_sign_alternating_schedule(depth);
  const Vector x0{0.0};
  const Trajectory traj = forward_euler_chain(family, schedule, x0);
  const ODESolution sol = solve_ode_oracle(interpolate(family, schedule, FieldKind::weight_interp), x0, depth);
  return distance(traj.final_state(), sol.final_state());
}

inline std::vector<TightnessRow> compute_tightness_suite(const std::vector<std::size_t>& depths) {
  std::vector<TightnessRow> rows;
  for (std::size_t n : depths)
    rows.push_back({"linear_in_s", n, tightness_linear_in_s(n), 1.0 / (2.0 * static_cast<double>(n))});
  for (std::size_t n : depths) rows.push_back({"index_residual_interp", n, tightness_index(n), 0.5});
  for (std::size_t n : depths) rows.push_back({"alternating_square_weight_interp", n, tightness_alternating_square(n), 2.0 / 3.0});
  return rows;
}

inline void write_tightness_csv(std::ostream& out, const std::vector<TightnessRow>& rows) {
  out << "case,N,measured,analytic,abs_diff\n";
  for (const auto& r : rows)
    out << r.name << ',' << r.depth << ',' << format_double(r.measured) << ',' << format_double(r.analytic) << ','
        << format_double(std::abs(r.measured - r.analytic)) << '\n';
}

inline std::vector<TightnessRow> run_tightness_suite(const ExperimentConfig& c) {
  const auto rows = compute_tightness_suite(c.depths);
  const auto dir = detail::prepare_output_dir(c.output_dir);
  auto out = detail::open_csv(dir / "tightness.csv");
  write_tightness_csv(out, rows);
  return rows;
}

// ---------------------------------------------------------------------------
// Linear gradient flow
// ---------------------------------------------------------------------------

inline MatrixProfile make_flow_profile(const ExperimentConfig& c) {
  const std::size_t d = c.flow_dim;
  const double scale = c.init_scale;
  switch (c.flow_init) {
    case FlowInit::ramp_identity:
      return [d, scale](double s) { return (s * scale) * Matrix::identity(d); };
    case FlowInit::ramp_random: {
      Rng rng(c.seed + 1);
      Matrix a = random_uniform_matrix(rng, d, d, -1.0, 1.0);
      a *= 1.0 / largest_singular_value(a);
      return [a, scale](double s) { return (s * scale) * a; };
    }
    case FlowInit::constant:
      return [d, scale](double) { return scale * Matrix::identity(d); };
  }
  throw ConfigError("unknown flow_init");
}

inline Matrix make_flow_sigma(const ExperimentConfig& c) {
  if (c.sigma_diag.empty()) return Matrix::identity(c.flow_dim);
  return Matrix::diagonal(c.sigma_diag);
}

inline std::vector<double> uniform_times(double t_end, std::size_t count) {
  std::vector<double> times(count);
  for (std::size_t i = 0; i < count; ++i)
    times[i] = i + 1 == count ? t_end : t_end * static_cast<double>(i) / static_cast<double>(count - 1);
  return times;
}

struct DoublingRow {
  std::size_t depth = 0;
  double distance = 0.0;
};

struct LinearFlowResult {
  RegressionProblem problem;
  std::vector<std::size_t> depths;  // includes the reference depth last when present
  std::vector<FlowTrace> traces;
  std::vector<InvariantReport> monitors;
  std::vector<Assumption1Report> assumption;
  std::vector<DoublingRow> doubling;  // distance between N and 2N, keyed by N
  std::optional<LimitMap> limit_map;
  std::vector<double> product_gap;  // product_vs_ode at t_end, per depth
};

inline LinearFlowResult compute_linear_flow(const ExperimentConfig& c) {
  if (c.experiment != ExperimentKind::linear_flow && c.experiment != ExperimentKind::limit_map)
    throw ConfigError("linflow: experiment must be linear_flow or limit_map");
  const MatrixProfile profile = make_flow_profile(c);
  LinearFlowResult r;
  r.problem = make_compliant_problem(make_flow_sigma(c), profile, c.seed, c.loss_fraction);
  r.depths = c.depths;
  if (c.reference_depth > 0 && c.reference_depth > r.depths.back()) r.depths.push_back(c.reference_depth);

  FlowOptions opt;
  opt.dt = c.flow_dt;
  opt.snapshot_times = uniform_times(c.t_end, c.snapshots);
  opt.sample_stride = c.sample_stride;
  for (std::size_t depth : r.depths) {
    const FlowState s0 = profile_init(profile, depth);
    const Assumption1Report a1 = check_assumption1(s0, r.problem);
    if (!a1.passes)
      throw Assumption1Violation("depth " + std::to_string(depth) + ": loss margin " + format_double(a1.loss_margin) +
                                 ", norm margin " + format_double(a1.norm_margin));
    r.assumption.push_back(a1);
    r.traces.push_back(integrate_flow(s0, r.problem, c.t_end, opt));
    r.monitors.push_back(monitor_invariants(r.traces.back(), r.problem));
    FlowState final_state{r.traces.back().snapshots.back().layers, c.t_end};
    r.product_gap.push_back(product_vs_ode(final_state, r.problem, 20, c.seed));
  }
  for (std::size_t i = 0; i < r.depths.size(); ++i)
    for (std::size_t j = i + 1; j < r.depths.size(); ++j)
      if (r.depths[j] == 2 * r.depths[i]) r.doubling.push_back({r.depths[i], depth_double_compare(r.traces[i], r.traces[j])});
  bool divisible = r.depths.size() >= 2;
  for (std::size_t i = 0; i + 1 < r.depths.size(); ++i) divisible = divisible && r.depths.back() % r.depths[i] == 0;
  if (divisible) r.limit_map = extract_limit_map(r.traces);
  return r;
}

inline LinearFlowResult run_linear_flow_experiment(const ExperimentConfig& c) {
  LinearFlowResult r = compute_linear_flow(c);
  const auto dir = detail::prepare_output_dir(c.output_dir);
  for (std::size_t i = 0; i < r.depths.size(); ++i) {
    const std::string tag = "N" + std::to_string(r.depths[i]);
    {
      auto out = detail::open_csv(dir / ("trace_" + tag + ".csv"));
      write_trace_csv(out, r.traces[i]);
    }
    std::filesystem::create_directories(dir / "snapshots");
    for (std::size_t k = 0; k < r.traces[i].snapshots.size(); ++k) {
      auto out = detail::open_csv(dir / "snapshots" / (tag + "_s" + std::to_string(k) + ".csv"));
      write_snapshot_csv(out, r.traces[i].snapshots[k]);
    }
  }
  {
    auto out = detail::open_csv(dir / "monitors.csv");
    out << "N,loss_margin,norm_margin,max_theta_norm,max_decay_ratio,initial_smoothness,max_smoothness,product_gap,"
           "norms_ok,decay_ok,smoothness_ok\n";
    for (std::size_t i = 0; i < r.depths.size(); ++i) {
      const auto& m = r.monitors[i];
      out << r.depths[i] << ',' << format_double(r.assumption[i].loss_margin) << ','
          << format_double(r.assumption[i].norm_margin) << ',' << format_double(m.max_theta_norm) << ','
          << format_double(m.max_decay_ratio) << ',' << format_double(m.initial_smoothness) << ','
          << format_double(m.max_smoothness) << ',' << format_double(r.product_gap[i]) << ',' << m.norms_ok << ','
          << m.decay_ok << ',' << m.smoothness_ok << '\n';
    }
  }
  {
    auto out = detail::open_csv(dir / "doubling.csv");
    out << "N,distance,ratio_to_previous\n";
    for (std::size_t i = 0; i < r.doubling.size(); ++i) {
      out << r.doubling[i].depth << ',' << format_double(r.doubling[i].distance) << ',';
      if (i > 0 && r.doubling[i - 1].distance > 0.0 && r.doubling[i].depth == 2 * r.doubling[i - 1].depth)
        out << format_double(r.doubling[i].distance / r.doubling[i - 1].distance);
      out << '\n';
    }
  }
  if (r.limit_map) {
    auto out = detail::open_csv(dir / "limitmap.csv");
    write_limit_map_csv(out, *r.limit_map);
    auto slopes = detail::open_csv(dir / "limitmap_slopes.csv");
    slopes << "t,slope,intercept,r2\n";
    for (std::size_t i = 0; i < r.limit_map->times.size(); ++i) {
      const SlopeFit& f = r.limit_map->slopes[i];
      slopes << format_double(r.limit_map->times[i]) << ',' << format_double(f.slope) << ','
             << format_double(f.intercept) << ',' << format_double(f.r_squared) << '\n';
    }
  }
  if (c.plot_script && r.limit_map)
    write_plot_script(dir, "set view map\nset xlabel 't'\nset ylabel 'N'\nset logscale y\n"
                           "plot 'limitmap.csv' every ::1 using 1:2:3 with points palette pt 5 title ''\n");
  return r;
}

// ---------------------------------------------------------------------------
// Toy training
// ---------------------------------------------------------------------------

struct TrainingRun {
  std::size_t depth = 0;
  std::vector<double> losses;  // loss before each iteration, then the final loss
  WeightSchedule schedule;
  double final_loss() const { return losses.back(); }
};

struct ToyTrainingResult {
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<TrainingRun> runs;
};

namespace detail {

inline Scheme training_scheme(GradientMode mode) {
  return (mode == GradientMode::exact_heun || mode == GradientMode::adjoint_heun) ? Scheme::heun : Scheme::euler;
}

/// Mean of (x_N - y)² over the batch and its parameter gradient, accumulated
/// one sample at a time.
inline double batch_loss_and_gradient(const ResidualFamily& family, const WeightSchedule& schedule,
                                      const std::vector<double>& inputs, const std::vector<double>& targets,
                                      GradientMode mode, std::vector<Vector>& grad) {
  const std::size_t depth = schedule.depth();
  const double inv_p = 1.0 / static_cast<double>(inputs.size());
  for (Vector& g : grad) g *= 0.0;
  double total = 0.0;
  const Scheme scheme = training_scheme(mode);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Vector x0{inputs[i]};
    if (mode == GradientMode::exact || mode == GradientMode::exact_heun) {
      const Trajectory traj = forward_chain(family, schedule, x0, scheme);
      const double r = traj.final_state()[0] - targets[i];
      total += r * r;
      const Vector og{2.0 * r * inv_p};
      const GradientSet gs = scheme == Scheme::euler ? backprop_exact(family, schedule, traj, og)
                                                     : backprop_exact_heun(family, schedule, traj, og);
      for (std::size_t n = 0; n < depth; ++n) grad[n] += gs.param_grads[n];
    } else {
      const Vector xN = forward_final_state(family, schedule, x0, scheme);
      const double r = xN[0] - targets[i];
      total += r * r;
      const Vector og{2.0 * r * inv_p};
      const AdjointSink sink = [&grad](std::size_t layer, const Vector& pg, const Vector&) { grad[layer] += pg; };
      if (scheme == Scheme::euler) {
        adjoint_sweep_euler(family, schedule, xN, og, sink);
      } else {
        adjoint_sweep_heun(family, schedule, xN, og, sink);
      }
    }
  }
  return total * inv_p;
}

}  // namespace detail

inline double toy_target(double x, double sign) { return sign * 0.5 * x * x; }

/// Full-batch gradient descent with step lr·N per layer, which compensates
/// the 1/N scaling of per-layer gradients.
inline TrainingRun train_toy_network(const ExperimentConfig& c, std::size_t depth, const std::vector<double>& inputs,
                                     const std::vector<double>& targets) {
  const ResidualFamily family = make_mlp_family(1, c.hidden);
  Rng rng(c.seed);
  const CubicProfile init = CubicProfile::random(family.param_dim, c.init_scale_train, rng);
  TrainingRun run{depth, {}, init.sample(depth)};
  std::vector<Vector> grad(depth, Vector(family.param_dim));
  const double step = c.learning_rate * static_cast<double>(depth);
  for (std::size_t it = 0; it <= c.iterations; ++it) {
    double l = 0.0;
    try {
      l = detail::batch_loss_and_gradient(family, run.schedule, inputs, targets, c.gradient, grad);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.layer(), "training iteration " + std::to_string(it) + " at depth " +
                                           std::to_string(depth) + ": " + e.what());
    }
    run.losses.push_back(l);
    if (!std::isfinite(l)) throw DivergenceError(depth, "training loss is not finite at iteration " + std::to_string(it));
    if (it == c.iterations) break;
    run.schedule.axpy(-step, grad);
  }
  return run;
}

inline ToyTrainingResult compute_toy_training(const ExperimentConfig& c) {
  if (c.experiment != ExperimentKind::toy_train) throw ConfigError("train: experiment must be toy_train");
  ToyTrainingResult r;
  for (std::size_t i = 0; i < c.train_points; ++i) {
    const double u = c.train_points == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(c.train_points - 1);
    const double x = c.train_lo + u * (c.train_hi - c.train_lo);
    r.inputs.push_back(x);
    r.targets.push_back(toy_target(x, c.target_sign));
  }
  for (std::size_t depth : c.depths) r.runs.push_back(train_toy_network(c, depth, r.inputs, r.targets));
  return r;
}

inline ToyTrainingResult run_toy_training(const ExperimentConfig& c) {
  ToyTrainingResult r = compute_toy_training(c);
  const auto dir = detail::prepare_output_dir(c.output_dir);
  const ResidualFamily family = make_mlp_family(1, c.hidden);
  const Scheme scheme = detail::training_scheme(c.gradient);
  {
    auto out = detail::open_csv(dir / "loss.csv");
    out << "N,iteration,loss\n";
    for (const auto& run : r.runs)
      for (std::size_t it = 0; it < run.losses.size(); ++it)
        out << run.depth << ',' << it << ',' << format_double(run.losses[it]) << '\n';
  }
  {
    auto out = detail::open_csv(dir / "trajectories.csv");
    out << "N,sample,node_index,s,x_0\n";
    for (const auto& run : r.runs) {
      for (std::size_t i = 0; i < r.inputs.size(); ++i) {
        const Trajectory traj = forward_chain(family, run.schedule, Vector{r.inputs[i]}, scheme);
        for (std::size_t n = 0; n < traj.nodes.size(); ++n)
          out << run.depth << ',' << i << ',' << n << ','
              << format_double(static_cast<double>(n) / static_cast<double>(run.depth)) << ','
              << format_double(traj.nodes[n][0]) << '\n';
      }
    }
  }
  {
    auto out = detail::open_csv(dir / "summary.csv");
    out << "N,final_loss\n";
    for (const auto& run : r.runs) out << run.depth << ',' << format_double(run.final_loss()) << '\n';
  }
  if (c.plot_script)
    write_plot_script(dir, "set xlabel 's'\nset ylabel 'x'\nplot 'trajectories.csv' every ::1 using 4:5 with lines title ''\n");
  return r;
}

}  // namespace odenet
