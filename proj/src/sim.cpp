#include "rsynth/sim.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "rsynth/parallel.hpp"
#include "rsynth/rng.hpp"

namespace rsynth::sim {

TrajectoryResult run_coupled_trajectory(const CoupledSetup& s, int horizon, std::uint64_t rng_seed,
                                        bool keep_trace) {
  const LinearSystem& sys = *s.sys;
  const SimRelCert& cert = *s.cert;
  const GridSpec& grid = *s.grid;
  const scltl::Dfa& dfa = *s.dfa;
  const std::vector<bool> rejecting = dfa.rejecting_traps();
  const int nw = sys.nw();

  rng::Stream st(rng_seed);
  TrajectoryResult res;

  Eigen::VectorXd x = sys.x0;
  int cell = cert.initial_cell;
  if (cell < 0) throw std::runtime_error("certificate has no initial abstract cell");
  int q = dfa.step(dfa.initial, mdp::letter_of(*s.lab, (sys.C * x).eval().data(), sys.p()));

  auto record = [&](int t, const Eigen::VectorXd& u) {
    if (!keep_trace) return;
    Eigen::VectorXd xhat = cell >= 0 ? grid.center(cell) : Eigen::VectorXd::Zero(grid.dim());
    Eigen::VectorXd err = x - cert.P * xhat;
    res.trace.push_back({t, x, xhat, u, q, std::sqrt(err.dot(cert.M * err))});
  };

  if (dfa.is_accepting(q)) {
    res.outcome = Outcome::Sat;
    record(0, Eigen::VectorXd::Zero(sys.m()));
    return res;
  }
  if (rejecting[q]) {
    res.outcome = Outcome::UnsatTrap;
    record(0, Eigen::VectorXd::Zero(sys.m()));
    return res;
  }

  for (int t = 0; t < horizon; ++t) {
    // action 0 is the fallback once the abstract excursion hit the sink; the
    // certificate says nothing off the grid, so the refined input is clamped
    // into the input box there regardless of the clamp setting
    Eigen::VectorXd uhat =
        cell >= 0 ? (*s.inputs)[static_cast<std::size_t>(s.policy->at(cell, q))] : (*s.inputs)[0];
    Eigen::VectorXd xhat = cell >= 0 ? grid.center(cell) : Eigen::VectorXd::Zero(grid.dim());
    Eigen::VectorXd u =
        lti::interface_apply(cert, sys.input_box, uhat, xhat, x, s.clamp_inputs || cell < 0);
    record(t, u);

    Eigen::VectorXd w(nw);
    for (int d = 0; d < nw; ++d) w[d] = st.gaussian();

    x = sys.A * x + sys.B * u + sys.B_w * w;
    if (!x.allFinite()) throw std::runtime_error("diverging concrete state");
    Eigen::VectorXd xs_next = cert.A_s * xhat + cert.B_s * uhat + cert.B_sw * w;
    auto next_cell = grid.cell_of(xs_next);
    if (next_cell) {
      cell = *next_cell;
    } else {
      cell = -1;  // sink
      res.left_grid = true;
    }
    ++res.steps;

    Eigen::VectorXd err = x - cert.P * (cell >= 0 ? grid.center(cell) : xs_next);
    if (std::sqrt(err.dot(cert.M * err)) > cert.eps) ++res.relation_exits;

    q = dfa.step(q, mdp::letter_of(*s.lab, (sys.C * x).eval().data(), sys.p()));
    if (dfa.is_accepting(q)) {
      res.outcome = Outcome::Sat;
      record(t + 1, u);
      return res;
    }
    if (rejecting[q]) {
      res.outcome = Outcome::UnsatTrap;
      record(t + 1, u);
      return res;
    }
  }
  res.outcome = Outcome::Undecided;
  return res;
}

std::pair<double, double> clopper_pearson(int k, int n, double confidence) {
  if (n <= 0) return {0.0, 1.0};
  double alpha = 1.0 - confidence;
  double lo = k == 0 ? 0.0 : boost::math::ibeta_inv(static_cast<double>(k),
                                                    static_cast<double>(n - k + 1), alpha / 2);
  double hi = k == n ? 1.0 : boost::math::ibeta_inv(static_cast<double>(k + 1),
                                                    static_cast<double>(n - k), 1.0 - alpha / 2);
  return {lo, hi};
}

McReport monte_carlo_estimate(const CoupledSetup& s, int n_runs, int horizon,
                              std::uint64_t master_seed, double robust_bound,
                              double optimistic_bound) {
  if (n_runs < 1) throw std::invalid_argument("n_runs must be at least 1");
  McReport rep;
  rep.runs = n_runs;
  rep.master_seed = master_seed;
  rep.robust_bound = robust_bound;
  rep.optimistic_bound = optimistic_bound;

  std::vector<signed char> outcomes(n_runs);
  std::vector<int> steps(n_runs);
  std::vector<int> exits(n_runs);
  std::vector<signed char> left(n_runs);
  parallel::parallel_for(0, n_runs, robust_dp::num_threads(), [&](int lo, int hi) {
    for (int r = lo; r < hi; ++r) {
      TrajectoryResult tr =
          run_coupled_trajectory(s, horizon, rng::derive_seed(master_seed, static_cast<std::uint64_t>(r)));
      outcomes[r] = tr.outcome == Outcome::Sat ? 1 : (tr.outcome == Outcome::UnsatTrap ? -1 : 0);
      steps[r] = tr.steps;
      exits[r] = tr.relation_exits;
      left[r] = tr.left_grid ? 1 : 0;
    }
  });
  for (int r = 0; r < n_runs; ++r) {
    if (outcomes[r] > 0)
      ++rep.successes;
    else if (outcomes[r] < 0)
      ++rep.failures;
    else
      ++rep.undecided;
    rep.total_steps += steps[r];
    rep.relation_exit_steps += exits[r];
    rep.left_grid_runs += left[r];
  }
  rep.estimate = static_cast<double>(rep.successes) / n_runs;
  rep.upper_estimate = static_cast<double>(rep.successes + rep.undecided) / n_runs;
  std::tie(rep.ci_low, rep.ci_high) = clopper_pearson(rep.successes, n_runs, 0.99);
  std::tie(rep.upper_ci_low, rep.upper_ci_high) =
      clopper_pearson(rep.successes + rep.undecided, n_runs, 0.99);

  double hw_lo = 0.5 * (rep.ci_high - rep.ci_low);
  double hw_hi = 0.5 * (rep.upper_ci_high - rep.upper_ci_low);
  double emp_lo = rep.estimate - hw_lo;
  double emp_hi = rep.upper_estimate + hw_hi;
  rep.verdict_pass = emp_lo <= optimistic_bound && robust_bound <= emp_hi;
  return rep;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "t";
  if (!trace.empty()) {
    for (int d = 0; d < trace[0].x.size(); ++d) os << ",x" << d;
    for (int d = 0; d < trace[0].xhat.size(); ++d) os << ",xhat" << d;
    for (int d = 0; d < trace[0].u.size(); ++d) os << ",u" << d;
  }
  os << ",q,relation_residual\n";
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << ',' << buf;
  };
  for (const TraceRow& r : trace) {
    os << r.t;
    for (int d = 0; d < r.x.size(); ++d) num(r.x[d]);
    for (int d = 0; d < r.xhat.size(); ++d) num(r.xhat[d]);
    for (int d = 0; d < r.u.size(); ++d) num(r.u[d]);
    os << ',' << r.q;
    num(r.relation_residual);
    os << '\n';
  }
  return os.str();
}

}  // namespace rsynth::sim
