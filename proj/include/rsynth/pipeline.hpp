#pragma once

#include <string>

#include "rsynth/config.hpp"
#include "rsynth/sim.hpp"

namespace rsynth::pipeline {

// Exit codes: 0 success, 2 certification failure, 3 Monte-Carlo sandwich
// violation, 1 anything else.
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitCertFailed = 2;
constexpr int kExitMcViolation = 3;

enum class Stage { Translate, Abstract, Certify, Synthesize, Simulate, BoundsCompare, All };

Stage stage_from_name(const std::string& name);

// Intermediate products shared by the stages; built lazily so each
// subcommand computes only its prerequisites.
struct Context {
  config::ProblemConfig cfg;
  std::optional<std::uint64_t> seed_override;

  scltl::FormulaPtr formula;
  scltl::Dfa dfa;
  lti::ReducedModel reduced;
  lti::InterfaceMatrices iface;
  lti::SimRelCert cert;
  std::vector<Eigen::VectorXd> inputs;
  mdp::FiniteGmdp gmdp;
  mdp::LabelCache cache;
  robust_dp::ValueFn robust_value;      // fixed point of the deployed policy
  robust_dp::ValueFn optimistic_value;  // optimal optimistic fixed point
  robust_dp::Policy policy;
  robust_dp::IterationReport robust_report, optimistic_report;
  double robust_bound = 0.0;
  double optimistic_bound = 1.0;

  bool have_dfa = false, have_model = false, have_cert = false, have_abstraction = false,
       have_synthesis = false;

  void build_dfa();
  void build_model();      // reduced model + interface matrices
  void build_cert();       // throws CertificationFailure when the relation fails
  void build_abstraction();
  void build_synthesis();
};

struct CertificationFailure : std::runtime_error {
  explicit CertificationFailure(const std::string& what) : std::runtime_error(what) {}
};

int run_pipeline(const config::ProblemConfig& cfg, Stage stage, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_override = std::nullopt);

// Artifact writers, exposed for tests.
std::string certificate_json(const lti::SimRelCert& cert);
std::string values_csv(const Context& ctx);
std::string policy_csv(const Context& ctx);
std::string mc_report_json(const sim::McReport& rep);
std::string bounds_compare_csv(const Context& ctx, double delta, int horizon);
std::string abstraction_meta_json(const Context& ctx);

}  // namespace rsynth::pipeline
