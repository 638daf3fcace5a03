// Command-line front end for the experiment drivers.
//
//   odenet study     --config <file>
//   odenet tightness [--config <file>]
//   odenet linflow   --config <file>
//   odenet train     --config <file>
//
// --seed, --out and --depths override the corresponding config keys.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "odenet/config.hpp"
#include "odenet/harness.hpp"

namespace {

enum ExitCode : int { kOk = 0, kConfigError = 2, kAllDiverged = 3, kAssumptionAbort = 4, kRuntimeError = 1 };

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> depths;
};

void add_common_options(CLI::App* cmd, Overrides& o, bool config_required) {
  auto* cfg = cmd->add_option("--config", o.config_path, "configuration file (key = value lines)");
  if (config_required) cfg->required();
  cmd->add_option("--seed", o.seed, "override the config seed");
  cmd->add_option("--out", o.out, "override the output directory");
  cmd->add_option("--depths", o.depths, "override depths, comma separated");
}

odenet::ExperimentConfig resolve(const Overrides& o, std::optional<odenet::ExperimentKind> forced) {
  odenet::ExperimentConfig c = o.config_path.empty() ? odenet::ExperimentConfig{} : odenet::load_config(o.config_path);
  if (forced) c.experiment = *forced;
  if (o.seed) c.seed = *o.seed;
  if (o.out) odenet::apply_config_entry(c, "output_dir", *o.out);
  if (o.depths) c.depths = odenet::parse_depths(*o.depths);
  odenet::validate_config(c);
  return c;
}

void print_study(const odenet::StudyResult& r) {
  for (const auto& s : r.slopes) {
    std::cout << s.metric;
    if (s.fit) std::cout << "  slope " << s.fit->slope << "  r2 " << s.fit->r_squared;
    if (!s.flag.empty()) std::cout << "  [" << s.flag << "]";
    std::cout << '\n';
  }
  if (r.failed_depths > 0) std::cout << r.failed_depths << " depth(s) diverged\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-scaled residual networks, adjoint backpropagation and linear gradient flows"};
  app.require_subcommand(1);

  Overrides study_o, tight_o, lin_o, train_o;
  auto* study = app.add_subcommand("study", "depth scaling study (approx_error, euler_adjoint, heun_adjoint)");
  add_common_options(study, study_o, true);
  auto* tight = app.add_subcommand("tightness", "analytic tightness cases");
  add_common_options(tight, tight_o, false);
  auto* lin = app.add_subcommand("linflow", "linear gradient flow and limit-map study");
  add_common_options(lin, lin_o, true);
  auto* train = app.add_subcommand("train", "toy training of a scalar residual network");
  add_common_options(train, train_o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (study->parsed()) {
      const auto c = resolve(study_o, std::nullopt);
      const auto r = odenet::run_scaling_study(c);
      print_study(r);
    } else if (tight->parsed()) {
      auto c = resolve(tight_o, odenet::ExperimentKind::tightness_suite);
      if (!tight_o.depths && tight_o.config_path.empty()) c.depths = {10, 100, 1000};
      for (const auto& row : odenet::run_tightness_suite(c))
        std::cout << row.name << "  N=" << row.depth << "  gap " << row.measured << "  analytic " << row.analytic
                  << '\n';
    } else if (lin->parsed()) {
      const auto c = resolve(lin_o, std::nullopt);
      const auto r = odenet::run_linear_flow_experiment(c);
      for (std::size_t i = 0; i < r.depths.size(); ++i)
        std::cout << "N=" << r.depths[i] << "  monitors " << (r.monitors[i].all_ok() ? "ok" : "VIOLATED")
                  << "  final loss " << r.traces[i].samples.back().loss << '\n';
      if (r.limit_map && r.limit_map->sup_slope)
        std::cout << "limit-map sup distance slope " << r.limit_map->sup_slope->slope << '\n';
    } else if (train->parsed()) {
      const auto c = resolve(train_o, odenet::ExperimentKind::toy_train);
      for (const auto& run : odenet::run_toy_training(c).runs)
        std::cout << "N=" << run.depth << "  final loss " << run.final_loss() << '\n';
    }
  } catch (const odenet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const odenet::AllDepthsFailed& e) {
    std::cerr << e.what() << '\n';
    return kAllDiverged;
  } catch (const odenet::Assumption1Violation& e) {
    std::cerr << "initialization violates the small-loss assumption: " << e.what() << '\n';
    return kAssumptionAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
