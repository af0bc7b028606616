#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsynth/lti.hpp"
#include "rsynth/robust_dp.hpp"

namespace rsynth::sim {

using lti::LinearSystem;
using lti::GridSpec;
using lti::SimRelCert;
using robust_dp::Policy;

enum class Outcome { Sat, UnsatTrap, Undecided };

struct ControllerState {
  int cell = -1;  // -1: abstract state routed to the sink
  int q = 0;
  int t = 0;
};

struct TraceRow {
  int t;
  Eigen::VectorXd x, xhat, u;
  int q;
  double relation_residual;
};

struct TrajectoryResult {
  Outcome outcome = Outcome::Undecided;
  int steps = 0;
  int relation_exits = 0;  // steps with |x - P xhat|_M > eps
  bool left_grid = false;
  std::vector<TraceRow> trace;  // filled only when requested
};

struct CoupledSetup {
  const LinearSystem* sys;
  const SimRelCert* cert;
  const GridSpec* grid;
  const std::vector<Eigen::VectorXd>* inputs;
  const mdp::Labeling* lab;
  const scltl::Dfa* dfa;
  const Policy* policy;
  bool clamp_inputs = false;
};

// One closed-loop run of the concrete model with the refined controller: the
// same Gaussian drives both models (deterministic noise coupling), the
// abstract state snaps to the grid, the DFA reads the concrete outputs.
TrajectoryResult run_coupled_trajectory(const CoupledSetup& s, int horizon, std::uint64_t rng_seed,
                                        bool keep_trace = false);

struct McReport {
  int runs = 0;
  int successes = 0;
  int failures = 0;
  int undecided = 0;
  double estimate = 0.0;        // successes / runs
  double upper_estimate = 0.0;  // (successes + undecided) / runs
  double ci_low = 0.0, ci_high = 0.0;              // Clopper-Pearson 99% on successes
  double upper_ci_low = 0.0, upper_ci_high = 0.0;  // on successes + undecided
  double robust_bound = 0.0;
  double optimistic_bound = 1.0;
  long relation_exit_steps = 0;
  long total_steps = 0;
  int left_grid_runs = 0;
  bool verdict_pass = false;
  std::uint64_t master_seed = 0;
};

/// Exact Clopper-Pearson interval for k successes out of n.
std::pair<double, double> clopper_pearson(int k, int n, double confidence);

// Runs are seeded from master_seed by run index; the report is bit-identical
// for a fixed (setup, seed) regardless of scheduling. The verdict passes when
// the CI-adjusted empirical interval intersects [robust, optimistic] and the
// robust bound does not exceed the CI-adjusted upper rate.
McReport monte_carlo_estimate(const CoupledSetup& s, int n_runs, int horizon,
                              std::uint64_t master_seed, double robust_bound,
                              double optimistic_bound);

std::string trace_csv(const std::vector<TraceRow>& trace);

}  // namespace rsynth::sim
