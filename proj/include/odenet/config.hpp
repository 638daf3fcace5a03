#pragma once

// Flat `key = value` experiment configuration. Blank lines and lines starting
// with '#' are ignored; lists are comma separated; unknown keys are rejected.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "odenet/errors.hpp"

namespace odenet {

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

enum class ExperimentKind { approx_error, euler_adjoint, heun_adjoint, linear_flow, limit_map, toy_train, tightness_suite };
enum class FamilyKind { mlp, linear, square, constant, zero };
enum class ProfileKind { constant, lipschitz_profile, alternating, index };
enum class FlowInit { ramp_identity, ramp_random, constant };
enum class GradientMode { exact, exact_heun, adjoint_euler, adjoint_heun };

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::euler_adjoint;
  std::vector<std::size_t> depths = {16, 32, 64, 128, 256, 512, 1024};
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  bool plot_script = false;

  // Residual chains
  FamilyKind family = FamilyKind::mlp;
  std::size_t state_dim = 4;
  std::size_t hidden = 8;
  ProfileKind profile = ProfileKind::lipschitz_profile;
  double profile_scale = 0.25;
  double low_confidence_r2 = 0.9;

  // Linear flow
  std::size_t flow_dim = 2;
  std::vector<double> sigma_diag;  // empty means identity
  std::size_t reference_depth = 256;
  double t_end = 20.0;
  std::size_t snapshots = 11;
  double flow_dt = 0.0;  // 0 selects the default step
  FlowInit flow_init = FlowInit::ramp_identity;
  double init_scale = 0.1;
  double loss_fraction = 0.5;
  std::size_t sample_stride = 10;

  // Toy training
  double target_sign = 1.0;  // target x -> sign * x² / 2
  GradientMode gradient = GradientMode::exact;
  std::size_t iterations = 2000;
  double learning_rate = 0.5;
  std::size_t train_points = 64;
  double train_lo = 0.0;
  double train_hi = 1.0;
  double init_scale_train = 1.0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end || text.empty())
    throw ConfigError("config: key '" + key + "' has invalid value '" + text + "'");
  return v;
}

template <typename E>
E parse_enum(const std::string& key, const std::string& text, const std::map<std::string, E>& table) {
  auto it = table.find(text);
  if (it == table.end()) {
    std::string options;
    for (const auto& [name, _] : table) options += (options.empty() ? "" : ", ") + name;
    throw ConfigError("config: key '" + key + "' must be one of {" + options + "}, got '" + text + "'");
  }
  return it->second;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + text + "'");
}

}  // namespace detail

inline std::vector<std::size_t> parse_depths(const std::string& text) {
  std::vector<std::size_t> depths;
  for (const std::string& item : detail::split_list(text))
    depths.push_back(detail::parse_number<std::size_t>("depths", item));
  if (depths.empty()) throw ConfigError("config: depths must not be empty");
  for (std::size_t i = 0; i < depths.size(); ++i) {
    if (depths[i] < 1) throw ConfigError("config: depths must be at least 1");
    if (i > 0 && depths[i] <= depths[i - 1]) throw ConfigError("config: depths must be strictly increasing");
  }
  return depths;
}

inline const std::map<std::string, ExperimentKind>& experiment_names() {
  static const std::map<std::string, ExperimentKind> names = {
      {"approx_error", ExperimentKind::approx_error},   {"euler_adjoint", ExperimentKind::euler_adjoint},
      {"heun_adjoint", ExperimentKind::heun_adjoint},   {"linear_flow", ExperimentKind::linear_flow},
      {"limit_map", ExperimentKind::limit_map},         {"toy_train", ExperimentKind::toy_train},
      {"tightness_suite", ExperimentKind::tightness_suite}};
  return names;
}

/// Applies one `key = value` assignment.
inline void apply_config_entry(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "experiment") {
    c.experiment = detail::parse_enum(key, value, experiment_names());
  } else if (key == "depths") {
    c.depths = parse_depths(value);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "output_dir") {
    if (value.empty()) throw ConfigError("config: output_dir must not be empty");
    c.output_dir = value;
  } else if (key == "plot_script") {
    c.plot_script = detail::parse_bool(key, value);
  } else if (key == "family") {
    c.family = detail::parse_enum<FamilyKind>(key, value,
                                              {{"mlp", FamilyKind::mlp},
                                               {"linear", FamilyKind::linear},
                                               {"square", FamilyKind::square},
                                               {"constant", FamilyKind::constant},
                                               {"zero", FamilyKind::zero}});
  } else if (key == "state_dim") {
    c.state_dim = parse_number<std::size_t>(key, value);
  } else if (key == "hidden") {
    c.hidden = parse_number<std::size_t>(key, value);
  } else if (key == "profile") {
    c.profile = detail::parse_enum<ProfileKind>(key, value,
                                                {{"constant", ProfileKind::constant},
                                                 {"lipschitz_profile", ProfileKind::lipschitz_profile},
                                                 {"alternating", ProfileKind::alternating},
                                                 {"index", ProfileKind::index}});
  } else if (key == "profile_scale") {
    c.profile_scale = parse_number<double>(key, value);
  } else if (key == "low_confidence_r2") {
    c.low_confidence_r2 = parse_number<double>(key, value);
  } else if (key == "flow_dim") {
    c.flow_dim = parse_number<std::size_t>(key, value);
  } else if (key == "sigma_diag") {
    c.sigma_diag.clear();
    for (const std::string& item : detail::split_list(value)) c.sigma_diag.push_back(parse_number<double>(key, item));
  } else if (key == "reference_depth") {
    c.reference_depth = parse_number<std::size_t>(key, value);
  } else if (key == "t_end") {
    c.t_end = parse_number<double>(key, value);
  } else if (key == "snapshots") {
    c.snapshots = parse_number<std::size_t>(key, value);
  } else if (key == "flow_dt") {
    c.flow_dt = parse_number<double>(key, value);
  } else if (key == "flow_init") {
    c.flow_init = detail::parse_enum<FlowInit>(key, value,
                                               {{"ramp_identity", FlowInit::ramp_identity},
                                                {"ramp_random", FlowInit::ramp_random},
                                                {"constant", FlowInit::constant}});
  } else if (key == "init_scale") {
    c.init_scale = parse_number<double>(key, value);
  } else if (key == "loss_fraction") {
    c.loss_fraction = parse_number<double>(key, value);
  } else if (key == "sample_stride") {
    c.sample_stride = parse_number<std::size_t>(key, value);
  } else if (key == "target") {
    if (value == "half_square") {
      c.target_sign = 1.0;
    } else if (value == "neg_half_square") {
      c.target_sign = -1.0;
    } else {
      throw ConfigError("config: key 'target' must be one of {half_square, neg_half_square}, got '" + value + "'");
    }
  } else if (key == "gradient") {
    c.gradient = detail::parse_enum<GradientMode>(key, value,
                                                  {{"exact", GradientMode::exact},
                                                   {"exact_heun", GradientMode::exact_heun},
                                                   {"adjoint_euler", GradientMode::adjoint_euler},
                                                   {"adjoint_heun", GradientMode::adjoint_heun}});
  } else if (key == "iterations") {
    c.iterations = parse_number<std::size_t>(key, value);
  } else if (key == "learning_rate") {
    c.learning_rate = parse_number<double>(key, value);
  } else if (key == "train_points") {
    c.train_points = parse_number<std::size_t>(key, value);
  } else if (key == "train_lo") {
    c.train_lo = parse_number<double>(key, value);
  } else if (key == "train_hi") {
    c.train_hi = parse_number<double>(key, value);
  } else if (key == "init_scale_train") {
    c.init_scale_train = parse_number<double>(key, value);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

/// Range checks that do not depend on which experiment runs.
inline void validate_config(const ExperimentConfig& c) {
  if (c.depths.empty()) throw ConfigError("config: depths must not be empty");
  if (c.state_dim < 1 || c.hidden < 1 || c.flow_dim < 1) throw ConfigError("config: dimensions must be at least 1");
  if (!(c.profile_scale > 0.0)) throw ConfigError("config: profile_scale must be positive");
  if (!(c.low_confidence_r2 >= 0.0 && c.low_confidence_r2 <= 1.0)) throw ConfigError("config: low_confidence_r2 must be in [0, 1]");
  if (!c.sigma_diag.empty() && c.sigma_diag.size() != c.flow_dim)
    throw ConfigError("config: sigma_diag must have flow_dim entries");
  if (!(c.t_end > 0.0)) throw ConfigError("config: t_end must be positive");
  if (c.snapshots < 2) throw ConfigError("config: snapshots must be at least 2");
  if (c.flow_dt < 0.0) throw ConfigError("config: flow_dt must be nonnegative");
  if (!(c.loss_fraction > 0.0 && c.loss_fraction < 1.0)) throw ConfigError("config: loss_fraction must be in (0, 1)");
  if (c.sample_stride < 1) throw ConfigError("config: sample_stride must be at least 1");
  if (c.train_points < 1) throw ConfigError("config: train_points must be at least 1");
  if (!(c.train_hi > c.train_lo)) throw ConfigError("config: train_hi must exceed train_lo");
  if (!(c.learning_rate > 0.0)) throw ConfigError("config: learning_rate must be positive");
}

inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = detail::trim(std::string_view(text).substr(0, eq));
    const std::string value = detail::trim(std::string_view(text).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
    apply_config_entry(c, key, value);
  }
  validate_config(c);
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

}  // namespace odenet
