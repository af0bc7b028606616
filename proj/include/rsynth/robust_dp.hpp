#pragma once

#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "rsynth/mdp.hpp"

namespace rsynth::robust_dp {

using mdp::FiniteGmdp;
using mdp::LabelCache;

// Value over product states, indexed (state i, DFA location q), dense
// num_states x num_locations. The sink row is pinned inside the operators (0
// for the plain/robust ones, 1 for the optimistic one) and is not stored.
struct ValueFn {
  int num_states = 0;
  int num_locations = 0;
  std::vector<double> v;

  static ValueFn constant(int n, int nq, double value) {
    return ValueFn{n, nq, std::vector<double>(static_cast<std::size_t>(n) * nq, value)};
  }
  double& at(int i, int q) { return v[static_cast<std::size_t>(q) * num_states + i]; }
  double at(int i, int q) const { return v[static_cast<std::size_t>(q) * num_states + i]; }
  double sup_dist(const ValueFn& other) const;
};

struct Policy {
  int num_states = 0;
  int num_locations = 0;
  std::vector<int> action;  // [q * num_states + i]

  int& at(int i, int q) { return action[static_cast<std::size_t>(q) * num_states + i]; }
  int at(int i, int q) const { return action[static_cast<std::size_t>(q) * num_states + i]; }
};

struct IterationReport {
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  double seconds = 0.0;
};

enum class OperatorKind {
  Bellman,        // plain backup, exact letters
  RobustDelta,    // clamp(backup - delta), exact letters
  RobustEpsDelta, // clamp(backup - delta), worst DFA successor over the eps-letter set
  Optimistic,     // clamp(sup-backup + delta), best successor, sink pinned to 1
};

// One operator sweep. In optimize mode the action achieving the maximum is
// returned (lowest index wins ties); otherwise `policy` selects per-state
// actions. Summation within a row follows ascending state index.
ValueFn apply_operator(OperatorKind op, const ValueFn& v, const FiniteGmdp& g,
                       const LabelCache& cache, double delta,
                       const Policy* policy, Policy* argmax_out);

ValueFn bellman_op(const ValueFn& v, const FiniteGmdp& g, const LabelCache& cache,
                   const Policy* policy = nullptr, Policy* argmax_out = nullptr);
ValueFn robust_delta_op(const ValueFn& v, const FiniteGmdp& g, const LabelCache& cache, double delta,
                        const Policy* policy = nullptr, Policy* argmax_out = nullptr);
ValueFn robust_eps_delta_op(const ValueFn& v, const FiniteGmdp& g, const LabelCache& cache,
                            double delta, const Policy* policy = nullptr,
                            Policy* argmax_out = nullptr);
ValueFn optimistic_op(const ValueFn& v, const FiniteGmdp& g, const LabelCache& cache, double delta,
                      Policy* argmax_out = nullptr);

struct ViParams {
  double delta = 0.0;
  double tol = 1e-9;
  int max_iter = 0;          // 0: 10*ceil(1/delta) for delta>0, else 1e5
  std::optional<ValueFn> v_init;
  const Policy* fixed_policy = nullptr;  // nullptr: optimize over actions
};

struct ViResult {
  ValueFn value;
  Policy policy;
  IterationReport report;
};

// Iterates the chosen operator to its fixed point (Eq-style stopping on the
// sup-norm residual) and extracts the policy by one more optimizing backup of
// the final value. For delta = 0 the true optimum can be approached
// arbitrarily slowly; the report then carries the honest residual.
ViResult value_iteration(OperatorKind op, const FiniteGmdp& g, const LabelCache& cache,
                         const ViParams& params);

enum class SatMode { DeltaRobust, EpsDeltaRobust, Optimistic };

// Satisfaction probability at the initial product state: max(1_F(q0'), V)
// with q0' ranging over the exact initial successor (delta mode), worst over
// tau_bar (eps-delta mode) or best over tau_bar (optimistic mode).
double satisfaction_probability(const ValueFn& v, const FiniteGmdp& g, const mdp::Dfa& d,
                                const LabelCache& cache, SatMode mode);

/// 1 - (1-delta)^N.
double gamma_bound(int horizon, double delta);

// Product-state set as a mask over (i, q) pairs plus the sink rows.
struct ProductSet {
  int num_states = 0;
  int num_locations = 0;
  std::vector<bool> member;      // [q * num_states + i]
  std::vector<bool> sink_member; // per q

  bool contains(int i, int q) const { return member[static_cast<std::size_t>(q) * num_states + i]; }
};

/// Accepting layer {(i,q) : q in F}; sink rows included for accepting q.
ProductSet accepting_set(const FiniteGmdp& g, const mdp::Dfa& d);

// Survival probabilities P(H_target >= n) per product state, n = 0..n_max;
// tails[n] is a ValueFn (sink rows tracked separately: sink survives forever
// unless its (sink,q) pair is in the target).
struct HittingTails {
  std::vector<ValueFn> tails;
  std::vector<std::vector<double>> sink_tails;  // [n][q]
  std::vector<double> at_initial;               // evaluated at (x0, qbar0)
};

HittingTails hitting_tails(const FiniteGmdp& g, const mdp::Dfa& d, const LabelCache& cache,
                           const Policy& policy, const ProductSet& target, int n_max);

// Sum of the tail sequence from n = 1, truncated once the tail drops below
// tol with a geometric remainder estimate; infinity when the tail plateaus
// above tol (absorbing mass).
double mean_hitting_time(const std::vector<double>& tails, double tol);

// Greatest fixed point of pruning states whose one-step escape mass exceeds
// eta, over the non-accepting layer. Kernel entries below 1e-15 do not count
// as support.
ProductSet largest_absorbing_set(const FiniteGmdp& g, const mdp::Dfa& d, const LabelCache& cache,
                                 const Policy& policy, double eta = 0.0);

// Right-hand side of the hitting-time bound: (T^mu)^l(0) - delta * sum_{n<=l}
// P(H_F >= n), per product state. The inequality against the robust iterate
// holds on the non-accepting rows.
ValueFn hitting_bound_rhs(const FiniteGmdp& g, const mdp::Dfa& d, const LabelCache& cache,
                          const Policy& policy, double delta, int l);

// Exact reachability of the accepting layer under a fixed policy by dense
// Gaussian elimination on the transient block; test oracle, product size
// capped at 2000.
ValueFn exact_reachability_oracle(const FiniteGmdp& g, const mdp::Dfa& d, const LabelCache& cache,
                                  const Policy& policy);

/// Thread count used by the operator sweeps (1 = sequential).
void set_num_threads(int n);
int num_threads();

}  // namespace rsynth::robust_dp
