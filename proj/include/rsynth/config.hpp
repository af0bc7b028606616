#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsynth/lti.hpp"

namespace rsynth::config {

struct ReductionSpec {
  // order > 0: balanced truncation to that order; explicit_model: user-given
  int order = 0;
  std::optional<lti::ReducedModel> explicit_model;
};

struct RelationSpec {
  std::optional<double> eps;  // nullopt = "minimize"
  double delta = 0.0;
  bool invariant_ellipsoid_m = false;
  double rho = 1.0;
  double eta = 1e-9;
  std::optional<Eigen::MatrixXd> m_matrix;
  int noise_samples = 200000;
  std::uint64_t noise_seed = 1;
};

struct SolverSpec {
  double tol = 1e-9;
  int max_iter = 0;  // 0: operator-dependent default
  double policy_delta = 1e-6;
};

struct SimulationSpec {
  int runs = 500;
  int horizon = 200;
  std::uint64_t seed = 1;
  bool clamp_inputs = false;
  int trace_runs = 0;
};

struct BoundsCompareSpec {
  int horizon = 100;
  std::vector<double> deltas{0.0, 0.01, 0.03, 0.1};
};

struct ProblemConfig {
  std::string name;
  lti::LinearSystem system;
  Eigen::MatrixXd feedback;
  std::optional<ReductionSpec> reduction;
  lti::GridSpec grid;
  lti::Box input_grid_box;
  std::vector<int> input_grid_points;
  mdp::Labeling labeling;
  std::vector<std::string> ap_list;
  std::string formula_text;
  RelationSpec relation;
  SolverSpec solver;
  SimulationSpec simulation;
  BoundsCompareSpec bounds_compare;
  std::string output_dir = "out";
};

struct ConfigError : std::runtime_error {
  std::vector<std::string> violations;
  explicit ConfigError(std::vector<std::string> v);
};

/// Parses and validates; throws ConfigError listing every violation found.
ProblemConfig load_config(const std::string& path);
ProblemConfig parse_config(const std::string& json_text, const std::string& origin = "<string>");

}  // namespace rsynth::config
