#include "rsynth/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "rsynth/rng.hpp"

namespace rsynth::pipeline {

namespace {

using ojson = nlohmann::ordered_json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ojson matrix_json(const Eigen::MatrixXd& m) {
  ojson rows = ojson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ojson row = ojson::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace

Stage stage_from_name(const std::string& name) {
  if (name == "translate") return Stage::Translate;
  if (name == "abstract") return Stage::Abstract;
  if (name == "certify") return Stage::Certify;
  if (name == "synthesize") return Stage::Synthesize;
  if (name == "simulate") return Stage::Simulate;
  if (name == "bounds-compare") return Stage::BoundsCompare;
  if (name == "all") return Stage::All;
  throw std::invalid_argument("unknown subcommand '" + name + "'");
}

void Context::build_dfa() {
  if (have_dfa) return;
  formula = scltl::desugar(scltl::parse_formula(cfg.formula_text, cfg.ap_list));
  dfa = scltl::to_dfa(formula, cfg.ap_list);
  have_dfa = true;
}

void Context::build_model() {
  if (have_model) return;
  cfg.system.validate();
  if (cfg.reduction && cfg.reduction->explicit_model) {
    reduced = *cfg.reduction->explicit_model;
  } else if (cfg.reduction) {
    reduced = lti::reduce_balanced(cfg.system, cfg.feedback, cfg.reduction->order);
  } else {
    reduced.A_s = cfg.system.A;
    reduced.B_s = cfg.system.B;
    reduced.B_sw = cfg.system.B_w;
    reduced.C_s = cfg.system.C;
    reduced.P_bal = Eigen::MatrixXd::Identity(cfg.system.n(), cfg.system.n());
  }
  iface = lti::solve_interface_matrices(cfg.system, reduced);
  inputs = lti::input_grid(cfg.input_grid_box, cfg.input_grid_points);
  have_model = true;
}

void Context::build_cert() {
  if (have_cert) return;
  build_model();
  lti::CertOptions opt;
  opt.eps = cfg.relation.eps;
  opt.delta = cfg.relation.delta;
  opt.M = cfg.relation.m_matrix;
  opt.invariant_ellipsoid = cfg.relation.invariant_ellipsoid_m;
  opt.rho = cfg.relation.rho;
  opt.eta = cfg.relation.eta;
  opt.noise_seed = cfg.relation.noise_seed;
  opt.noise_samples = cfg.relation.noise_samples;
  cert = lti::certify_relation(cfg.system, reduced, iface, cfg.feedback, cfg.grid, inputs, opt);
  have_cert = true;
}

void Context::build_abstraction() {
  if (have_abstraction) return;
  build_dfa();
  build_cert();
  gmdp = lti::grid_abstraction(reduced.A_s, reduced.B_s, reduced.B_sw, reduced.C_s, cfg.grid, inputs);
  gmdp.initial_state = cert.initial_cell >= 0 ? cert.initial_cell : 0;
  cache = mdp::build_label_cache(gmdp, cfg.labeling, dfa, std::isfinite(cert.eps) ? cert.eps : 0.0);
  have_abstraction = true;
}

void Context::build_synthesis() {
  if (have_synthesis) return;
  build_abstraction();
  using namespace robust_dp;
  const double delta = cfg.relation.delta;

  ViParams params;
  params.delta = delta;
  params.tol = cfg.solver.tol;
  params.max_iter = cfg.solver.max_iter;

  if (delta > 0) {
    ViResult opt_res = value_iteration(OperatorKind::RobustEpsDelta, gmdp, cache, params);
    policy = opt_res.policy;
  } else {
    // With delta = 0 the optimal value is flat near 1 and the raw argmax may
    // pick actions that never make progress; a lightly discounted fixed point
    // grades states by hitting time and its argmax is a proper policy.
    ViParams pparams = params;
    pparams.delta = cfg.solver.policy_delta;
    pparams.max_iter = 0;
    pparams.tol = std::min(cfg.solver.tol, 1e-10);
    ViResult pol_res = value_iteration(OperatorKind::RobustEpsDelta, gmdp, cache, pparams);
    policy = pol_res.policy;
  }

  // deployed bound: the fixed-policy robust fixed point of the extracted policy
  ViParams fixed = params;
  fixed.fixed_policy = &policy;
  ViResult mu_res = value_iteration(OperatorKind::RobustEpsDelta, gmdp, cache, fixed);
  robust_value = std::move(mu_res.value);
  robust_report = mu_res.report;
  robust_bound = satisfaction_probability(robust_value, gmdp, dfa, cache, SatMode::EpsDeltaRobust);

  ViResult o_res = value_iteration(OperatorKind::Optimistic, gmdp, cache, params);
  optimistic_value = std::move(o_res.value);
  optimistic_report = o_res.report;
  optimistic_bound =
      satisfaction_probability(optimistic_value, gmdp, dfa, cache, SatMode::Optimistic);
  have_synthesis = true;
}

std::string certificate_json(const lti::SimRelCert& cert) {
  ojson j;
  j["passed"] = cert.passed;
  j["eps"] = cert.eps;
  j["delta"] = cert.delta;
  j["min_eps"] = std::isfinite(cert.min_eps) ? ojson(cert.min_eps) : ojson("inf");
  j["min_eps_triangle"] =
      std::isfinite(cert.min_eps_triangle) ? ojson(cert.min_eps_triangle) : ojson("inf");
  j["lambda"] = cert.lambda;
  j["b_u"] = cert.b_u;
  j["b_beta"] = cert.b_beta;
  j["r_delta"] = std::isfinite(cert.r_delta) ? ojson(cert.r_delta) : ojson("inf");
  j["sylvester_residual"] = cert.sylvester_residual;
  auto cond = [](const lti::CertCondition& c) {
    ojson o;
    o["ok"] = c.ok;
    o["margin"] = c.margin;
    if (!c.note.empty()) o["note"] = c.note;
    return o;
  };
  j["conditions"]["A1_initial_state"] = cond(cert.a1);
  j["conditions"]["A2_output_error"] = cond(cert.a2);
  j["conditions"]["A3_invariance"] = cond(cert.a3);
  j["conditions"]["interface_in_input_box"] = cond(cert.interface_cond);
  j["initial_cell"] = cert.initial_cell;
  j["matrices"]["M"] = matrix_json(cert.M);
  j["matrices"]["P"] = matrix_json(cert.P);
  j["matrices"]["Q"] = matrix_json(cert.Q);
  j["matrices"]["R"] = matrix_json(cert.R);
  j["matrices"]["K"] = matrix_json(cert.K);
  j["reduced"]["A_s"] = matrix_json(cert.A_s);
  j["reduced"]["B_s"] = matrix_json(cert.B_s);
  j["reduced"]["B_sw"] = matrix_json(cert.B_sw);
  j["reduced"]["C_s"] = matrix_json(cert.C_s);
  return j.dump(2) + "\n";
}

std::string abstraction_meta_json(const Context& ctx) {
  ojson j;
  j["states"] = ctx.gmdp.num_states;
  j["actions"] = ctx.gmdp.num_actions;
  j["output_dim"] = ctx.gmdp.output_dim;
  j["grid_cells"] = ctx.cfg.grid.cells;
  ojson widths = ojson::array();
  for (int d = 0; d < ctx.cfg.grid.dim(); ++d) widths.push_back(ctx.cfg.grid.width(d));
  j["cell_widths"] = widths;
  std::size_t nnz = 0;
  double max_sink = 0.0;
  for (const auto& row : ctx.gmdp.kernel) {
    nnz += row.cols.size();
    max_sink = std::max(max_sink, row.sink);
  }
  j["kernel_nonzeros"] = nnz;
  j["max_row_sum_error"] = ctx.gmdp.max_row_sum_error();
  j["max_sink_mass"] = max_sink;
  j["initial_cell"] = ctx.gmdp.initial_state;
  ojson us = ojson::array();
  for (const auto& u : ctx.inputs) {
    ojson uu = ojson::array();
    for (int d = 0; d < u.size(); ++d) uu.push_back(u[d]);
    us.push_back(uu);
  }
  j["inputs"] = us;
  return j.dump(2) + "\n";
}

std::string values_csv(const Context& ctx) {
  std::string out = "state";
  for (int d = 0; d < ctx.cfg.grid.dim(); ++d) out += ",x" + std::to_string(d);
  out += ",q,robust,optimistic\n";
  for (int i = 0; i < ctx.gmdp.num_states; ++i) {
    Eigen::VectorXd c = ctx.cfg.grid.center(i);
    for (int q = 0; q < ctx.dfa.num_locations; ++q) {
      out += std::to_string(i);
      for (int d = 0; d < c.size(); ++d) out += "," + fmt17(c[d]);
      out += "," + std::to_string(q);
      out += "," + fmt17(ctx.robust_value.at(i, q));
      out += "," + fmt17(ctx.optimistic_value.at(i, q));
      out += "\n";
    }
  }
  return out;
}

std::string policy_csv(const Context& ctx) {
  std::string out = "state";
  for (int d = 0; d < ctx.cfg.grid.dim(); ++d) out += ",x" + std::to_string(d);
  out += ",q,action";
  for (int d = 0; d < ctx.inputs[0].size(); ++d) out += ",u" + std::to_string(d);
  out += "\n";
  for (int i = 0; i < ctx.gmdp.num_states; ++i) {
    Eigen::VectorXd c = ctx.cfg.grid.center(i);
    for (int q = 0; q < ctx.dfa.num_locations; ++q) {
      int a = ctx.policy.at(i, q);
      out += std::to_string(i);
      for (int d = 0; d < c.size(); ++d) out += "," + fmt17(c[d]);
      out += "," + std::to_string(q) + "," + std::to_string(a);
      for (int d = 0; d < ctx.inputs[a].size(); ++d) out += "," + fmt17(ctx.inputs[a][d]);
      out += "\n";
    }
  }
  return out;
}

std::string mc_report_json(const sim::McReport& rep) {
  ojson j;
  j["runs"] = rep.runs;
  j["successes"] = rep.successes;
  j["failures"] = rep.failures;
  j["undecided"] = rep.undecided;
  j["estimate"] = rep.estimate;
  j["upper_estimate"] = rep.upper_estimate;
  j["ci99_low"] = rep.ci_low;
  j["ci99_high"] = rep.ci_high;
  j["upper_ci99_low"] = rep.upper_ci_low;
  j["upper_ci99_high"] = rep.upper_ci_high;
  j["robust_bound"] = rep.robust_bound;
  j["optimistic_bound"] = rep.optimistic_bound;
  j["relation_exit_steps"] = rep.relation_exit_steps;
  j["total_steps"] = rep.total_steps;
  j["left_grid_runs"] = rep.left_grid_runs;
  j["verdict"] = rep.verdict_pass ? "PASS" : "FAIL";
  j["master_seed"] = rep.master_seed;
  return j.dump(2) + "\n";
}

std::string bounds_compare_csv(const Context& ctx, double delta, int horizon) {
  using namespace robust_dp;
  // policy for this delta (exact-letter robust operator)
  ViParams params;
  params.delta = delta;
  params.tol = ctx.cfg.solver.tol;
  ViResult vi = value_iteration(OperatorKind::RobustDelta, ctx.gmdp, ctx.cache, params);
  Policy pol = vi.policy;
  if (delta == 0) {
    ViParams pp = params;
    pp.delta = ctx.cfg.solver.policy_delta;
    pol = value_iteration(OperatorKind::RobustDelta, ctx.gmdp, ctx.cache, pp).policy;
  }
  auto [i0, q0] = mdp::product_initial(ctx.gmdp, ctx.dfa, ctx.cache);
  auto init_val = [&](const ValueFn& v) {
    return ctx.dfa.is_accepting(q0) ? 1.0 : v.at(i0, q0);
  };

  ProductSet target = accepting_set(ctx.gmdp, ctx.dfa);
  HittingTails tails = hitting_tails(ctx.gmdp, ctx.dfa, ctx.cache, pol, target, horizon);

  std::string out = "N,abstract_probability,gamma_lower,gamma_upper,robust,hitting_time_bound\n";
  ValueFn plain = ValueFn::constant(ctx.gmdp.num_states, ctx.dfa.num_locations, 0.0);
  ValueFn rob = plain;
  double tail_sum = 0.0;
  for (int N = 0; N <= horizon; ++N) {
    if (N > 0) {
      plain = bellman_op(plain, ctx.gmdp, ctx.cache, &pol);
      rob = robust_delta_op(rob, ctx.gmdp, ctx.cache, delta, &pol);
      tail_sum += tails.at_initial[N];
    }
    double abstract_p = init_val(plain);
    double gamma = gamma_bound(N, delta);
    double robust_p = init_val(rob);
    double hit_bound = abstract_p - delta * tail_sum;
    out += std::to_string(N) + "," + fmt17(abstract_p) + "," + fmt17(abstract_p - gamma) + "," +
           fmt17(abstract_p + gamma) + "," + fmt17(robust_p) + "," + fmt17(hit_bound) + "\n";
  }
  return out;
}

int run_pipeline(const config::ProblemConfig& cfg, Stage stage, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_override) {
  namespace fs = std::filesystem;
  Context ctx;
  ctx.cfg = cfg;
  ctx.seed_override = seed_override;
  fs::path out = out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir);
  fs::create_directories(out);

  auto do_translate = [&] {
    ctx.build_dfa();
    write_file(out / "dfa.dot", scltl::to_dot(ctx.dfa, ctx.cfg.ap_list));
  };
  auto do_certify = [&] {
    ctx.build_cert();
    write_file(out / "certificate.json", certificate_json(ctx.cert));
    if (!ctx.cert.passed) return kExitCertFailed;
    return kExitOk;
  };
  // stages past certification refuse to run on a failed relation
  auto cert_gate = [&]() -> bool {
    ctx.build_cert();
    if (!ctx.cert.passed) {
      write_file(out / "certificate.json", certificate_json(ctx.cert));
      return false;
    }
    return true;
  };
  auto do_abstract = [&]() -> bool {
    if (!cert_gate()) return false;
    ctx.build_abstraction();
    write_file(out / "abstraction.meta.json", abstraction_meta_json(ctx));
    return true;
  };
  auto do_synthesize = [&] {
    ctx.build_synthesis();
    write_file(out / "values.csv", values_csv(ctx));
    write_file(out / "policy.csv", policy_csv(ctx));
  };
  auto do_simulate = [&] {
    ctx.build_synthesis();
    sim::CoupledSetup setup{&ctx.cfg.system, &ctx.cert,   &ctx.cfg.grid, &ctx.inputs,
                            &ctx.cfg.labeling, &ctx.dfa,  &ctx.policy,   ctx.cfg.simulation.clamp_inputs};
    std::uint64_t seed = ctx.seed_override.value_or(ctx.cfg.simulation.seed);
    sim::McReport rep = sim::monte_carlo_estimate(setup, ctx.cfg.simulation.runs,
                                                  ctx.cfg.simulation.horizon, seed,
                                                  ctx.robust_bound, ctx.optimistic_bound);
    write_file(out / "mc_report.json", mc_report_json(rep));
    for (int r = 0; r < ctx.cfg.simulation.trace_runs; ++r) {
      sim::TrajectoryResult tr = sim::run_coupled_trajectory(
          setup, ctx.cfg.simulation.horizon, rng::derive_seed(seed, static_cast<std::uint64_t>(r)), true);
      write_file(out / ("trace_" + std::to_string(r) + ".csv"), sim::trace_csv(tr.trace));
    }
    return rep.verdict_pass ? kExitOk : kExitMcViolation;
  };
  auto do_bounds = [&] {
    ctx.build_abstraction();
    write_file(out / "bounds_compare.csv",
               bounds_compare_csv(ctx, ctx.cfg.relation.delta, ctx.cfg.bounds_compare.horizon));
  };

  try {
    switch (stage) {
      case Stage::Translate:
        do_translate();
        return kExitOk;
      case Stage::Abstract:
        return do_abstract() ? kExitOk : kExitCertFailed;
      case Stage::Certify:
        return do_certify();
      case Stage::Synthesize:
        if (!cert_gate()) return kExitCertFailed;
        do_synthesize();
        return kExitOk;
      case Stage::Simulate:
        if (!cert_gate()) return kExitCertFailed;
        return do_simulate();
      case Stage::BoundsCompare:
        if (!cert_gate()) return kExitCertFailed;
        do_bounds();
        return kExitOk;
      case Stage::All: {
        do_translate();
        int rc = do_certify();
        if (rc != kExitOk) return rc;
        (void)do_abstract();
        do_synthesize();
        rc = do_simulate();
        if (rc != kExitOk) return rc;
        do_bounds();
        return kExitOk;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace rsynth::pipeline
