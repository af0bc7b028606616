#include "rsynth/robust_dp.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "rsynth/parallel.hpp"

namespace rsynth::robust_dp {

namespace {
std::atomic<int> g_threads{1};

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }
}  // namespace

void set_num_threads(int n) { g_threads.store(n < 1 ? 1 : n); }
int num_threads() { return g_threads.load(); }

double ValueFn::sup_dist(const ValueFn& other) const {
  double worst = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) worst = std::max(worst, std::abs(v[k] - other.v[k]));
  return worst;
}

ValueFn apply_operator(OperatorKind op, const ValueFn& v, const FiniteGmdp& g,
                       const LabelCache& cache, double delta,
                       const Policy* policy, Policy* argmax_out) {
  const int n = g.num_states;
  const int nq = cache.num_locations;
  const bool optimistic = op == OperatorKind::Optimistic;
  const double sink_value = optimistic ? 1.0 : 0.0;

  ValueFn out = ValueFn::constant(n, nq, 0.0);
  if (argmax_out) *argmax_out = Policy{n, nq, std::vector<int>(static_cast<std::size_t>(n) * nq, 0)};

  std::vector<double> w(static_cast<std::size_t>(n));
  for (int q = 0; q < nq; ++q) {
    // per-successor-state contribution max{1_F(q'), V(i',q')}, with the DFA
    // successor resolved worst/best-case over the eps-letter set when asked
    switch (op) {
      case OperatorKind::Bellman:
      case OperatorKind::RobustDelta:
        for (int i = 0; i < n; ++i) {
          int qn = cache.exact_successor(q, i);
          w[i] = cache.succ_is_accepting[static_cast<std::size_t>(q) * n + i] ? 1.0 : v.at(i, qn);
        }
        break;
      case OperatorKind::RobustEpsDelta:
        for (int i = 0; i < n; ++i) {
          auto [b, e] = cache.successors(q, i);
          double m = 2.0;
          for (const int* p = b; p != e; ++p) {
            double val = cache.accepting[*p] ? 1.0 : v.at(i, *p);
            m = std::min(m, val);
          }
          w[i] = m;
        }
        break;
      case OperatorKind::Optimistic:
        for (int i = 0; i < n; ++i) {
          auto [b, e] = cache.successors(q, i);
          double m = -1.0;
          for (const int* p = b; p != e; ++p) {
            double val = cache.accepting[*p] ? 1.0 : v.at(i, *p);
            m = std::max(m, val);
          }
          w[i] = m;
        }
        break;
    }

    parallel::parallel_for(0, n, num_threads(), [&](int lo, int hi) {
      for (int i = lo; i < hi; ++i) {
        double best;
        int best_a = 0;
        if (policy) {
          const mdp::KernelRow& r = g.row(policy->at(i, q), i);
          double s = r.sink * sink_value;
          for (std::size_t k = 0; k < r.cols.size(); ++k) s += r.probs[k] * w[r.cols[k]];
          best = s;
        } else {
          best = -1.0;
          for (int a = 0; a < g.num_actions; ++a) {
            const mdp::KernelRow& r = g.row(a, i);
            double s = r.sink * sink_value;
            for (std::size_t k = 0; k < r.cols.size(); ++k) s += r.probs[k] * w[r.cols[k]];
            if (s > best) {
              best = s;
              best_a = a;
            }
          }
        }
        double res;
        switch (op) {
          case OperatorKind::Bellman: res = clamp01(best); break;
          case OperatorKind::Optimistic: res = clamp01(best + delta); break;
          default: res = clamp01(best - delta); break;
        }
        out.at(i, q) = res;
        if (argmax_out) argmax_out->at(i, q) = best_a;
      }
    });
  }
  return out;
}

ValueFn bellman_op(const ValueFn& v, const FiniteGmdp& g, const LabelCache& cache,
                   const Policy* policy, Policy* argmax_out) {
  return apply_operator(OperatorKind::Bellman, v, g, cache, 0.0, policy, argmax_out);
}
ValueFn robust_delta_op(const ValueFn& v, const FiniteGmdp& g, const LabelCache& cache, double delta,
                        const Policy* policy, Policy* argmax_out) {
  return apply_operator(OperatorKind::RobustDelta, v, g, cache, delta, policy, argmax_out);
}
ValueFn robust_eps_delta_op(const ValueFn& v, const FiniteGmdp& g, const LabelCache& cache,
                            double delta, const Policy* policy, Policy* argmax_out) {
  return apply_operator(OperatorKind::RobustEpsDelta, v, g, cache, delta, policy, argmax_out);
}
ValueFn optimistic_op(const ValueFn& v, const FiniteGmdp& g, const LabelCache& cache, double delta,
                      Policy* argmax_out) {
  return apply_operator(OperatorKind::Optimistic, v, g, cache, delta, nullptr, argmax_out);
}

ViResult value_iteration(OperatorKind op, const FiniteGmdp& g, const LabelCache& cache,
                         const ViParams& params) {
  if (!(params.tol > 0)) throw std::invalid_argument("tol must be positive");
  const int n = g.num_states;
  const int nq = cache.num_locations;
  int max_iter = params.max_iter;
  if (max_iter <= 0)
    max_iter = params.delta > 0 ? 10 * static_cast<int>(std::ceil(1.0 / params.delta)) : 100000;

  auto t0 = std::chrono::steady_clock::now();
  ValueFn v = params.v_init ? *params.v_init : ValueFn::constant(n, nq, 0.0);
  IterationReport rep;
  for (int it = 0; it < max_iter; ++it) {
    ValueFn vn = apply_operator(op, v, g, cache, params.delta, params.fixed_policy, nullptr);
    rep.residual = vn.sup_dist(v);
    rep.iterations = it + 1;
    v = std::move(vn);
    for (double x : v.v)
      if (!std::isfinite(x)) throw std::runtime_error("non-finite value in value iteration");
    if (rep.residual < params.tol) {
      rep.converged = true;
      break;
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ViResult res;
  if (params.fixed_policy) {
    res.policy = *params.fixed_policy;
  } else {
    apply_operator(op, v, g, cache, params.delta, nullptr, &res.policy);
  }
  res.value = std::move(v);
  res.report = rep;
  return res;
}

double satisfaction_probability(const ValueFn& v, const FiniteGmdp& g, const mdp::Dfa& d,
                                const LabelCache& cache, SatMode mode) {
  const int i0 = g.initial_state;
  auto value_at = [&](int q) { return d.is_accepting(q) ? 1.0 : v.at(i0, q); };
  if (mode == SatMode::DeltaRobust) return value_at(cache.exact_successor(d.initial, i0));
  auto [b, e] = cache.successors(d.initial, i0);
  double out = mode == SatMode::EpsDeltaRobust ? 2.0 : -1.0;
  for (const int* p = b; p != e; ++p) {
    double val = value_at(*p);
    out = mode == SatMode::EpsDeltaRobust ? std::min(out, val) : std::max(out, val);
  }
  return out;
}

double gamma_bound(int horizon, double delta) {
  if (horizon < 0 || delta < 0 || delta > 1) throw std::invalid_argument("bad gamma_bound arguments");
  return 1.0 - std::pow(1.0 - delta, horizon);
}

ProductSet accepting_set(const FiniteGmdp& g, const mdp::Dfa& d) {
  ProductSet s;
  s.num_states = g.num_states;
  s.num_locations = d.num_locations;
  s.member.assign(static_cast<std::size_t>(g.num_states) * d.num_locations, false);
  s.sink_member.assign(d.num_locations, false);
  for (int q = 0; q < d.num_locations; ++q) {
    if (!d.is_accepting(q)) continue;
    s.sink_member[q] = true;
    for (int i = 0; i < g.num_states; ++i) s.member[static_cast<std::size_t>(q) * g.num_states + i] = true;
  }
  return s;
}

HittingTails hitting_tails(const FiniteGmdp& g, const mdp::Dfa& d, const LabelCache& cache,
                           const Policy& policy, const ProductSet& target, int n_max) {
  const int n = g.num_states;
  const int nq = d.num_locations;
  HittingTails out;
  ValueFn s = ValueFn::constant(n, nq, 1.0);
  std::vector<double> sink_s(nq, 1.0);
  out.tails.push_back(s);
  out.sink_tails.push_back(sink_s);
  for (int step = 1; step <= n_max; ++step) {
    ValueFn sn = ValueFn::constant(n, nq, 0.0);
    std::vector<double> sink_sn(nq, 0.0);
    for (int q = 0; q < nq; ++q) {
      sink_sn[q] = target.sink_member[q] ? 0.0 : sink_s[q];
      for (int i = 0; i < n; ++i) {
        if (target.contains(i, q)) continue;
        const mdp::KernelRow& r = g.row(policy.at(i, q), i);
        double acc = r.sink * sink_s[q];
        for (std::size_t k = 0; k < r.cols.size(); ++k) {
          int j = static_cast<int>(r.cols[k]);
          acc += r.probs[k] * s.at(j, cache.exact_successor(q, j));
        }
        sn.at(i, q) = acc;
      }
    }
    s = std::move(sn);
    sink_s = std::move(sink_sn);
    out.tails.push_back(s);
    out.sink_tails.push_back(sink_s);
  }
  auto [i0, q0] = mdp::product_initial(g, d, cache);
  out.at_initial.reserve(out.tails.size());
  for (const ValueFn& t : out.tails)
    out.at_initial.push_back(target.contains(i0, q0) ? (&t == &out.tails.front() ? 1.0 : 0.0)
                                                     : t.at(i0, q0));
  return out;
}

double mean_hitting_time(const std::vector<double>& tails, double tol) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (std::size_t i = 1; i < tails.size(); ++i) {
    double t = tails[i];
    if (t < tol) {
      // geometric remainder from the last observed ratio
      if (i + 0 >= 1 && tails[i - 1] > 0 && t > 0) {
        double r = t / tails[i - 1];
        if (r < 1.0) sum += t * r / (1.0 - r);
      }
      return sum + t;
    }
    sum += t;
    if (i + 1 == tails.size()) {
      double prev = tails[i - 1];
      double r = prev > 0 ? t / prev : 1.0;
      if (r >= 1.0 - 1e-9) return kInf;  // plateau above tol: absorbing mass
      return sum + t * r / (1.0 - r);
    }
  }
  return sum;
}

ProductSet largest_absorbing_set(const FiniteGmdp& g, const mdp::Dfa& d, const LabelCache& cache,
                                 const Policy& policy, double eta) {
  constexpr double kSupportTol = 1e-15;
  const int n = g.num_states;
  const int nq = d.num_locations;
  ProductSet s;
  s.num_states = n;
  s.num_locations = nq;
  s.member.assign(static_cast<std::size_t>(n) * nq, false);
  s.sink_member.assign(nq, false);
  for (int q = 0; q < nq; ++q) {
    if (d.is_accepting(q)) continue;
    s.sink_member[q] = true;  // the sink is absorbing by construction
    for (int i = 0; i < n; ++i) s.member[static_cast<std::size_t>(q) * n + i] = true;
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (int q = 0; q < nq; ++q) {
      for (int i = 0; i < n; ++i) {
        if (!s.contains(i, q)) continue;
        const mdp::KernelRow& r = g.row(policy.at(i, q), i);
        double escape = s.sink_member[q] ? 0.0 : r.sink;
        for (std::size_t k = 0; k < r.cols.size(); ++k) {
          if (r.probs[k] < kSupportTol) continue;
          int j = static_cast<int>(r.cols[k]);
          if (!s.contains(j, cache.exact_successor(q, j))) escape += r.probs[k];
        }
        if (escape > eta) {
          s.member[static_cast<std::size_t>(q) * n + i] = false;
          changed = true;
        }
      }
    }
  }
  return s;
}

ValueFn hitting_bound_rhs(const FiniteGmdp& g, const mdp::Dfa& d, const LabelCache& cache,
                          const Policy& policy, double delta, int l) {
  const int n = g.num_states;
  const int nq = d.num_locations;
  ProductSet target = accepting_set(g, d);
  HittingTails surv = hitting_tails(g, d, cache, policy, target, l);
  ValueFn plain = ValueFn::constant(n, nq, 0.0);
  for (int it = 0; it < l; ++it)
    plain = apply_operator(OperatorKind::Bellman, plain, g, cache, 0.0, &policy, nullptr);
  ValueFn rhs = ValueFn::constant(n, nq, 0.0);
  for (int q = 0; q < nq; ++q)
    for (int i = 0; i < n; ++i) {
      double tail_sum = 0.0;
      for (int m = 1; m <= l; ++m) tail_sum += surv.tails[m].at(i, q);
      rhs.at(i, q) = plain.at(i, q) - delta * tail_sum;
    }
  return rhs;
}

ValueFn exact_reachability_oracle(const FiniteGmdp& g, const mdp::Dfa& d, const LabelCache& cache,
                                  const Policy& policy) {
  const int n = g.num_states;
  const int nq = d.num_locations;
  const std::size_t npr = static_cast<std::size_t>(n) * nq;
  if (npr > 2000) throw std::invalid_argument("oracle instance too large");

  // classify: target (q accepting), trap (no support path to target), transient
  std::vector<char> is_target(npr, 0);
  for (int q = 0; q < nq; ++q)
    if (d.is_accepting(q))
      for (int i = 0; i < n; ++i) is_target[static_cast<std::size_t>(q) * n + i] = 1;

  std::vector<char> can_reach = is_target;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int q = 0; q < nq; ++q)
      for (int i = 0; i < n; ++i) {
        std::size_t k = static_cast<std::size_t>(q) * n + i;
        if (can_reach[k]) continue;
        const mdp::KernelRow& r = g.row(policy.at(i, q), i);
        for (std::size_t e = 0; e < r.cols.size(); ++e) {
          if (r.probs[e] <= 0.0) continue;
          int j = static_cast<int>(r.cols[e]);
          if (can_reach[static_cast<std::size_t>(cache.exact_successor(q, j)) * n + j]) {
            can_reach[k] = 1;
            changed = true;
            break;
          }
        }
      }
  }

  std::vector<int> sys_index(npr, -1);
  std::vector<std::size_t> sys_states;
  for (std::size_t k = 0; k < npr; ++k)
    if (!is_target[k] && can_reach[k]) {
      sys_index[k] = static_cast<int>(sys_states.size());
      sys_states.push_back(k);
    }
  const int ns = static_cast<int>(sys_states.size());

  std::vector<double> A(static_cast<std::size_t>(ns) * ns, 0.0), b(ns, 0.0);
  for (int r_i = 0; r_i < ns; ++r_i) {
    std::size_t k = sys_states[r_i];
    int q = static_cast<int>(k / n), i = static_cast<int>(k % n);
    A[static_cast<std::size_t>(r_i) * ns + r_i] = 1.0;
    const mdp::KernelRow& row = g.row(policy.at(i, q), i);
    for (std::size_t e = 0; e < row.cols.size(); ++e) {
      int j = static_cast<int>(row.cols[e]);
      std::size_t kk = static_cast<std::size_t>(cache.exact_successor(q, j)) * n + j;
      if (is_target[kk])
        b[r_i] += row.probs[e];
      else if (sys_index[kk] >= 0)
        A[static_cast<std::size_t>(r_i) * ns + sys_index[kk]] -= row.probs[e];
      // trap successors contribute nothing
    }
  }

  // Gaussian elimination with partial pivoting
  std::vector<double> x(b);
  bool singular = false;
  {
    std::vector<double> M(A);
    for (int c = 0; c < ns && !singular; ++c) {
      int piv = c;
      for (int r2 = c + 1; r2 < ns; ++r2)
        if (std::abs(M[static_cast<std::size_t>(r2) * ns + c]) >
            std::abs(M[static_cast<std::size_t>(piv) * ns + c]))
          piv = r2;
      if (std::abs(M[static_cast<std::size_t>(piv) * ns + c]) < 1e-14) {
        singular = true;
        break;
      }
      if (piv != c) {
        for (int cc = 0; cc < ns; ++cc)
          std::swap(M[static_cast<std::size_t>(piv) * ns + cc], M[static_cast<std::size_t>(c) * ns + cc]);
        std::swap(x[piv], x[c]);
      }
      for (int r2 = c + 1; r2 < ns; ++r2) {
        double f = M[static_cast<std::size_t>(r2) * ns + c] / M[static_cast<std::size_t>(c) * ns + c];
        if (f == 0.0) continue;
        for (int cc = c; cc < ns; ++cc)
          M[static_cast<std::size_t>(r2) * ns + cc] -= f * M[static_cast<std::size_t>(c) * ns + cc];
        x[r2] -= f * x[c];
      }
    }
    if (!singular)
      for (int c = ns - 1; c >= 0; --c) {
        double s = x[c];
        for (int cc = c + 1; cc < ns; ++cc) s -= M[static_cast<std::size_t>(c) * ns + cc] * x[cc];
        x[c] = s / M[static_cast<std::size_t>(c) * ns + c];
      }
  }
  if (singular) {
    // numerical degeneracy: long fixed-policy value iteration on x = b + P x
    // with P = I - A
    x.assign(ns, 0.0);
    std::vector<double> xn(ns);
    for (long it = 0; it < 1000000; ++it) {
      double resid = 0.0;
      for (int r_i = 0; r_i < ns; ++r_i) {
        double s = b[r_i];
        for (int c = 0; c < ns; ++c) {
          double p = (c == r_i ? 1.0 : 0.0) - A[static_cast<std::size_t>(r_i) * ns + c];
          s += p * x[c];
        }
        xn[r_i] = s;
        resid = std::max(resid, std::abs(xn[r_i] - x[r_i]));
      }
      x.swap(xn);
      if (resid < 1e-15) break;
    }
  }

  ValueFn out = ValueFn::constant(n, nq, 0.0);
  for (std::size_t k = 0; k < npr; ++k) {
    int q = static_cast<int>(k / n), i = static_cast<int>(k % n);
    if (is_target[k])
      out.at(i, q) = 1.0;
    else if (sys_index[k] >= 0)
      out.at(i, q) = x[sys_index[k]];
  }
  return out;
}

}  // namespace rsynth::robust_dp
