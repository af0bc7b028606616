#include <doctest.h>

#include <cmath>

#include "instances.hpp"

using namespace rsynth;
using namespace rsynth::robust_dp;
using testing::Instance;

namespace {

ValueFn random_value(std::uint64_t seed, int n, int nq) {
  rng::Stream st(seed);
  ValueFn v = ValueFn::constant(n, nq, 0.0);
  for (double& x : v.v) x = st.uniform();
  return v;
}

}  // namespace

TEST_CASE("bellman single transition into F") {
  auto inst = testing::geometric_chain(0.7);
  ValueFn v0 = ValueFn::constant(2, inst.dfa.num_locations, 0.0);
  ValueFn v1 = bellman_op(v0, inst.g, inst.cache);
  CHECK(v1.at(0, inst.dfa.initial) == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("bellman preserves the all-ones function") {
  auto inst = testing::random_instance(11);
  ValueFn ones = ValueFn::constant(inst.g.num_states, inst.dfa.num_locations, 1.0);
  ValueFn out = bellman_op(ones, inst.g, inst.cache);
  for (double x : out.v) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("robust operator truncation") {
  auto inst = testing::geometric_chain(0.7);
  ValueFn v0 = ValueFn::constant(2, inst.dfa.num_locations, 0.0);
  ValueFn r = robust_delta_op(v0, inst.g, inst.cache, 0.1);
  CHECK(r.at(0, inst.dfa.initial) == doctest::Approx(0.6).epsilon(1e-15));
  ValueFn r2 = robust_delta_op(v0, inst.g, inst.cache, 0.75);
  CHECK(r2.at(0, inst.dfa.initial) == 0.0);  // 0.7 - 0.75 truncates
}

TEST_CASE("geometric chain robust fixed point is 6/7") {
  auto inst = testing::geometric_chain(0.7);
  ViParams p;
  p.delta = 0.1;
  p.tol = 1e-12;
  auto res = value_iteration(OperatorKind::RobustDelta, inst.g, inst.cache, p);
  CHECK(res.report.converged);
  CHECK(res.value.at(0, inst.dfa.initial) == doctest::Approx(6.0 / 7.0).epsilon(1e-9));
}

TEST_CASE("eps = 0 robust operator equals the exact-letter one") {
  auto inst = testing::random_instance(21);
  ValueFn v = random_value(2, inst.g.num_states, inst.dfa.num_locations);
  ValueFn a = robust_delta_op(v, inst.g, inst.cache, 0.05);
  ValueFn b = robust_eps_delta_op(v, inst.g, inst.cache, 0.05);
  CHECK(a.sup_dist(b) == 0.0);
}

TEST_CASE("optimistic with delta=1 saturates at one") {
  auto inst = testing::random_instance(22);
  ValueFn v = ValueFn::constant(inst.g.num_states, inst.dfa.num_locations, 0.0);
  ValueFn o = optimistic_op(v, inst.g, inst.cache, 1.0);
  for (double x : o.v) CHECK(x == 1.0);
}

TEST_CASE("optimistic with delta=0, eps=0 equals optimal bellman") {
  auto inst = testing::random_instance(23);
  ValueFn v = random_value(5, inst.g.num_states, inst.dfa.num_locations);
  ValueFn a = optimistic_op(v, inst.g, inst.cache, 0.0);
  ValueFn b = bellman_op(v, inst.g, inst.cache);  // optimize mode
  CHECK(a.sup_dist(b) < 1e-15);
}

TEST_CASE("monotonicity of all operators") {
  auto inst = testing::random_instance(31, 15, 3, 0.1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    ValueFn v = random_value(100 + s, inst.g.num_states, inst.dfa.num_locations);
    ValueFn w = v;
    rng::Stream st(200 + s);
    for (double& x : w.v) x = std::min(1.0, x + 0.3 * st.uniform());
    for (OperatorKind op : {OperatorKind::Bellman, OperatorKind::RobustDelta,
                            OperatorKind::RobustEpsDelta, OperatorKind::Optimistic}) {
      ValueFn ov = apply_operator(op, v, inst.g, inst.cache, 0.07, nullptr, nullptr);
      ValueFn ow = apply_operator(op, w, inst.g, inst.cache, 0.07, nullptr, nullptr);
      for (std::size_t k = 0; k < ov.v.size(); ++k) {
        REQUIRE(ov.v[k] <= ow.v[k] + 1e-14);
        REQUIRE(ov.v[k] >= -0.0);
        REQUIRE(ov.v[k] <= 1.0);
      }
    }
  }
}

TEST_CASE("iterates from zero are nondecreasing") {
  auto inst = testing::random_instance(41);
  ValueFn v = ValueFn::constant(inst.g.num_states, inst.dfa.num_locations, 0.0);
  for (int it = 0; it < 30; ++it) {
    ValueFn next = robust_eps_delta_op(v, inst.g, inst.cache, 0.02);
    for (std::size_t k = 0; k < v.v.size(); ++k) REQUIRE(next.v[k] >= v.v[k] - 1e-15);
    v = std::move(next);
  }
}

TEST_CASE("fixed-point ordering: optimistic >= plain >= delta >= eps-delta") {
  Instance inst = testing::random_instance(51, 12, 3, 0.0);
  auto cache_eps = mdp::build_label_cache(inst.g, inst.lab, inst.dfa, 0.15);
  ViParams p;
  p.tol = 1e-12;
  p.max_iter = 100000;
  p.delta = 0.0;
  ValueFn plain = value_iteration(OperatorKind::Bellman, inst.g, inst.cache, p).value;
  p.delta = 0.05;
  ValueFn rob = value_iteration(OperatorKind::RobustDelta, inst.g, inst.cache, p).value;
  ValueFn robe = value_iteration(OperatorKind::RobustEpsDelta, inst.g, cache_eps, p).value;
  ValueFn opti = value_iteration(OperatorKind::Optimistic, inst.g, cache_eps, p).value;
  for (std::size_t k = 0; k < plain.v.size(); ++k) {
    CHECK(opti.v[k] >= plain.v[k] - 1e-10);
    CHECK(plain.v[k] >= rob.v[k] - 1e-10);
    CHECK(rob.v[k] >= robe.v[k] - 1e-10);
  }
}

TEST_CASE("robust fixed point is nonincreasing in delta") {
  auto inst = testing::random_instance(61);
  ViParams p;
  p.tol = 1e-12;
  p.max_iter = 100000;
  ValueFn prev;
  bool first = true;
  for (double delta : {0.0, 0.01, 0.03, 0.1}) {
    p.delta = delta;
    ValueFn v = value_iteration(OperatorKind::RobustDelta, inst.g, inst.cache, p).value;
    if (!first)
      for (std::size_t k = 0; k < v.v.size(); ++k) CHECK(v.v[k] <= prev.v[k] + 1e-10);
    prev = std::move(v);
    first = false;
  }
}

TEST_CASE("uniqueness for delta > 0: V0 = 0 and V0 = 1 meet") {
  for (std::uint64_t seed : {71u, 72u, 73u}) {
    auto inst = testing::random_instance(seed);
    ViParams p;
    p.delta = 0.05;
    p.tol = 1e-12;
    p.max_iter = 5000;
    auto lo = value_iteration(OperatorKind::RobustDelta, inst.g, inst.cache, p);
    p.v_init = ValueFn::constant(inst.g.num_states, inst.dfa.num_locations, 1.0);
    auto hi = value_iteration(OperatorKind::RobustDelta, inst.g, inst.cache, p);
    CHECK(lo.value.sup_dist(hi.value) < 1e-8);
  }
}

TEST_CASE("gamma bound") {
  CHECK(gamma_bound(0, 0.3) == 0.0);
  CHECK(gamma_bound(1, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(gamma_bound(10, 0.01) == doctest::Approx(0.09561792499119559).epsilon(1e-12));
  CHECK_THROWS(gamma_bound(-1, 0.1));
}

TEST_CASE("hitting tails of the geometric chain") {
  auto inst = testing::geometric_chain(0.5);
  Policy pol{2, inst.dfa.num_locations,
             std::vector<int>(static_cast<std::size_t>(2) * inst.dfa.num_locations, 0)};
  auto target = accepting_set(inst.g, inst.dfa);
  auto tails = hitting_tails(inst.g, inst.dfa, inst.cache, pol, target, 30);
  CHECK(tails.at_initial[0] == 1.0);
  for (int n = 1; n <= 30; ++n)
    CHECK(tails.at_initial[n] == doctest::Approx(std::pow(0.5, n - 1)).epsilon(1e-12));
  // nonincreasing
  for (int n = 1; n <= 30; ++n) CHECK(tails.at_initial[n] <= tails.at_initial[n - 1] + 1e-15);
  CHECK(mean_hitting_time(tails.at_initial, 1e-12) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("initial state already in the target") {
  auto inst = testing::geometric_chain(0.5);
  inst.g.initial_state = 1;
  Policy pol{2, inst.dfa.num_locations,
             std::vector<int>(static_cast<std::size_t>(2) * inst.dfa.num_locations, 0)};
  auto target = accepting_set(inst.g, inst.dfa);
  auto tails = hitting_tails(inst.g, inst.dfa, inst.cache, pol, target, 5);
  CHECK(tails.at_initial[1] == 0.0);
  CHECK(mean_hitting_time(tails.at_initial, 1e-12) == 0.0);
}

TEST_CASE("mean hitting time detects absorbing mass") {
  // trap reachable w.p. 0.3: survival plateaus at 0.3
  std::vector<double> tails{1.0};
  for (int n = 1; n < 60; ++n) tails.push_back(0.3 + 0.7 * std::pow(0.5, n));
  CHECK(std::isinf(mean_hitting_time(tails, 1e-6)));
}

TEST_CASE("hitting tails match trajectory enumeration on a random instance") {
  auto inst = testing::random_instance(81, 10, 2);
  Policy pol{inst.g.num_states, inst.dfa.num_locations,
             std::vector<int>(static_cast<std::size_t>(inst.g.num_states) * inst.dfa.num_locations, 1)};
  auto target = accepting_set(inst.g, inst.dfa);
  auto tails = hitting_tails(inst.g, inst.dfa, inst.cache, pol, target, 8);
  // brute-force forward enumeration of P(H >= n) at the initial product state
  auto [i0, q0] = mdp::product_initial(inst.g, inst.dfa, inst.cache);
  std::vector<double> dist(static_cast<std::size_t>(inst.g.num_states) * inst.dfa.num_locations, 0.0);
  double alive = inst.dfa.is_accepting(q0) ? 0.0 : 1.0;
  if (alive > 0) dist[static_cast<std::size_t>(q0) * inst.g.num_states + i0] = 1.0;
  for (int n = 1; n <= 8; ++n) {
    CHECK(tails.at_initial[n] == doctest::Approx(alive).epsilon(1e-12));
    std::vector<double> next(dist.size(), 0.0);
    for (int q = 0; q < inst.dfa.num_locations; ++q)
      for (int i = 0; i < inst.g.num_states; ++i) {
        double mass = dist[static_cast<std::size_t>(q) * inst.g.num_states + i];
        if (mass == 0.0) continue;
        const auto& row = inst.g.row(pol.at(i, q), i);
        for (std::size_t k = 0; k < row.cols.size(); ++k) {
          int j = static_cast<int>(row.cols[k]);
          int q2 = inst.cache.exact_successor(q, j);
          if (!inst.dfa.is_accepting(q2))
            next[static_cast<std::size_t>(q2) * inst.g.num_states + j] += mass * row.probs[k];
        }
      }
    dist = std::move(next);
    alive = 0.0;
    for (double m : dist) alive += m;
  }
}

TEST_CASE("largest absorbing set") {
  SUBCASE("self-looping trap is absorbing") {
    auto inst = testing::geometric_chain(0.0);  // state 0 never reaches the label
    Policy pol{2, inst.dfa.num_locations,
               std::vector<int>(static_cast<std::size_t>(2) * inst.dfa.num_locations, 0)};
    auto abs = largest_absorbing_set(inst.g, inst.dfa, inst.cache, pol);
    CHECK(abs.contains(0, inst.dfa.initial));
  }
  SUBCASE("everything reaching F leaves the set empty") {
    auto inst = testing::geometric_chain(0.5);
    Policy pol{2, inst.dfa.num_locations,
               std::vector<int>(static_cast<std::size_t>(2) * inst.dfa.num_locations, 0)};
    auto abs = largest_absorbing_set(inst.g, inst.dfa, inst.cache, pol);
    for (int q = 0; q < inst.dfa.num_locations; ++q) {
      if (inst.dfa.is_accepting(q)) continue;
      // the labeled state 1 maps straight into F, state 0 reaches it
      CHECK_FALSE(abs.contains(0, q));
      CHECK_FALSE(abs.contains(1, q));
      CHECK(abs.sink_member[q]);  // the sink never reaches F
    }
  }
}

TEST_CASE("absorbing-set collapse after ceil(1/delta) robust sweeps") {
  auto inst = testing::geometric_chain(0.0);
  Policy pol{2, inst.dfa.num_locations,
             std::vector<int>(static_cast<std::size_t>(2) * inst.dfa.num_locations, 0)};
  auto abs = largest_absorbing_set(inst.g, inst.dfa, inst.cache, pol);
  REQUIRE(abs.contains(0, inst.dfa.initial));

  SUBCASE("from the canonical V0 = 0 the trap stays exactly at zero") {
    ValueFn v = ValueFn::constant(2, inst.dfa.num_locations, 0.0);
    for (int l = 1; l <= 12; ++l) {
      v = robust_delta_op(v, inst.g, inst.cache, 0.1, &pol);
      CHECK(v.at(0, inst.dfa.initial) == 0.0);
    }
  }
  SUBCASE("from any V the bound L(|V| - l delta) holds; exact zero once the"
          " accumulated decimal rounding is past") {
    const double delta = 0.1;
    ValueFn v = ValueFn::constant(2, inst.dfa.num_locations, 1.0);
    for (int l = 1; l <= 12; ++l) {
      v = robust_delta_op(v, inst.g, inst.cache, delta, &pol);
      double val = v.at(0, inst.dfa.initial);
      CHECK(val <= std::max(0.0, 1.0 - l * delta) + 1e-12);
      if (l >= 11) CHECK(val == 0.0);
    }
  }
  SUBCASE("binary-representable delta collapses exactly at ceil(1/delta)") {
    const double delta = 0.125;
    ValueFn v = ValueFn::constant(2, inst.dfa.num_locations, 1.0);
    for (int l = 1; l <= 10; ++l) {
      v = robust_delta_op(v, inst.g, inst.cache, delta, &pol);
      if (l >= 8) CHECK(v.at(0, inst.dfa.initial) == 0.0);
    }
  }
}

TEST_CASE("hitting bound rhs properties") {
  auto inst = testing::random_instance(91, 10, 2);
  Policy pol{inst.g.num_states, inst.dfa.num_locations,
             std::vector<int>(static_cast<std::size_t>(inst.g.num_states) * inst.dfa.num_locations, 0)};
  SUBCASE("l = 0 gives zero") {
    ValueFn rhs = hitting_bound_rhs(inst.g, inst.dfa, inst.cache, pol, 0.1, 0);
    for (double x : rhs.v) CHECK(x == 0.0);
  }
  SUBCASE("delta = 0 equals the plain iterate") {
    ValueFn rhs = hitting_bound_rhs(inst.g, inst.dfa, inst.cache, pol, 0.0, 7);
    ValueFn plain = ValueFn::constant(inst.g.num_states, inst.dfa.num_locations, 0.0);
    for (int i = 0; i < 7; ++i) plain = bellman_op(plain, inst.g, inst.cache, &pol);
    CHECK(rhs.sup_dist(plain) < 1e-15);
  }
  SUBCASE("robust iterate dominates the bound on non-accepting rows") {
    const double delta = 0.1;
    ValueFn rob = ValueFn::constant(inst.g.num_states, inst.dfa.num_locations, 0.0);
    for (int l = 1; l <= 20; ++l) {
      rob = robust_delta_op(rob, inst.g, inst.cache, delta, &pol);
      ValueFn rhs = hitting_bound_rhs(inst.g, inst.dfa, inst.cache, pol, delta, l);
      for (int q = 0; q < inst.dfa.num_locations; ++q) {
        if (inst.dfa.is_accepting(q)) continue;
        for (int i = 0; i < inst.g.num_states; ++i)
          REQUIRE(rob.at(i, q) >= rhs.at(i, q) - 1e-10);
      }
    }
  }
}

TEST_CASE("exact oracle: deterministic path") {
  // 0 -> 1 -> 2(labeled) deterministic
  using mdp::KernelRow;
  testing::Instance inst;
  inst.g.num_states = 3;
  inst.g.num_actions = 1;
  inst.g.output_dim = 1;
  inst.g.outputs = {0.0, 0.0, 1.0};
  inst.g.kernel = {KernelRow{{1}, {1.0}, 0.0}, KernelRow{{2}, {1.0}, 0.0}, KernelRow{{2}, {1.0}, 0.0}};
  inst.g.initial_state = 0;
  inst.lab = mdp::Labeling{{{"a", {0.5}, {1.5}}}};
  inst.dfa = scltl::to_dfa(scltl::desugar(scltl::f_eventually(scltl::f_atom("a"))), {"a"});
  inst.cache = mdp::build_label_cache(inst.g, inst.lab, inst.dfa, 0.0);
  Policy pol{3, inst.dfa.num_locations, std::vector<int>(3 * inst.dfa.num_locations, 0)};
  ValueFn v = exact_reachability_oracle(inst.g, inst.dfa, inst.cache, pol);
  CHECK(v.at(0, inst.dfa.initial) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("exact oracle: gambler's ruin closed form") {
  // states 0..4; 0 is ruin (absorbing), 4 is the labeled win state
  using mdp::KernelRow;
  const double p = 0.4, q = 0.6;
  testing::Instance inst;
  inst.g.num_states = 5;
  inst.g.num_actions = 1;
  inst.g.output_dim = 1;
  inst.g.outputs = {0.0, 0.0, 0.0, 0.0, 1.0};
  inst.g.kernel.resize(5);
  inst.g.kernel[0] = KernelRow{{0}, {1.0}, 0.0};
  inst.g.kernel[4] = KernelRow{{4}, {1.0}, 0.0};
  for (int i = 1; i <= 3; ++i)
    inst.g.kernel[i] = KernelRow{{static_cast<std::uint32_t>(i - 1), static_cast<std::uint32_t>(i + 1)},
                                 {q, p}, 0.0};
  inst.g.initial_state = 1;
  inst.lab = mdp::Labeling{{{"a", {0.5}, {1.5}}}};
  inst.dfa = scltl::to_dfa(scltl::desugar(scltl::f_eventually(scltl::f_atom("a"))), {"a"});
  inst.cache = mdp::build_label_cache(inst.g, inst.lab, inst.dfa, 0.0);
  Policy pol{5, inst.dfa.num_locations, std::vector<int>(5 * inst.dfa.num_locations, 0)};
  ValueFn v = exact_reachability_oracle(inst.g, inst.dfa, inst.cache, pol);
  const double r = q / p;
  for (int i = 1; i <= 3; ++i) {
    double expect = (std::pow(r, i) - 1.0) / (std::pow(r, 4) - 1.0);
    CHECK(v.at(i, inst.dfa.initial) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("value iteration agrees with the oracle at delta = eps = 0") {
  for (std::uint64_t seed : {101u, 102u, 103u, 104u}) {
    auto inst = testing::random_instance(seed, 15, 3);
    ViParams p;
    p.delta = 0.0;
    p.tol = 1e-13;
    p.max_iter = 100000;
    auto res = value_iteration(OperatorKind::Bellman, inst.g, inst.cache, p);
    ValueFn oracle = exact_reachability_oracle(inst.g, inst.dfa, inst.cache, res.policy);
    CHECK(res.value.sup_dist(oracle) < 1e-9);
  }
}

TEST_CASE("perturbed-kernel soundness at desk scale") {
  // concrete kernel (1-d) K + d R admits a delta-lifting with the identity
  // coupling, so the robust value lower-bounds and the optimistic value
  // upper-bounds the exact concrete satisfaction under the same policy
  int violations = 0;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    for (double delta : {0.01, 0.05}) {
      auto inst = testing::random_instance(1000 + seed, 12, 3);
      auto concrete = testing::perturb_kernel(inst.g, delta, 2000 + seed);
      ViParams p;
      p.delta = delta;
      p.tol = 1e-12;
      p.max_iter = 5000;
      auto rob = value_iteration(OperatorKind::RobustDelta, inst.g, inst.cache, p);
      ValueFn exact = exact_reachability_oracle(concrete, inst.dfa, inst.cache, rob.policy);
      double s_rob = satisfaction_probability(rob.value, inst.g, inst.dfa, inst.cache,
                                              SatMode::DeltaRobust);
      double s_exact = inst.dfa.is_accepting(mdp::product_initial(concrete, inst.dfa, inst.cache).second)
                           ? 1.0
                           : exact.at(concrete.initial_state,
                                      mdp::product_initial(concrete, inst.dfa, inst.cache).second);
      auto opti = value_iteration(OperatorKind::Optimistic, inst.g, inst.cache, p);
      double s_opt = satisfaction_probability(opti.value, inst.g, inst.dfa, inst.cache,
                                              SatMode::Optimistic);
      if (!(s_rob <= s_exact + 1e-12)) ++violations;
      if (!(s_opt >= s_exact - 1e-12)) ++violations;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("iteration report is honest") {
  auto inst = testing::random_instance(111);
  ViParams p;
  p.delta = 0.2;
  p.tol = 1e-9;
  p.max_iter = 2;  // too few on purpose
  auto res = value_iteration(OperatorKind::RobustDelta, inst.g, inst.cache, p);
  CHECK(res.report.iterations == 2);
  if (!res.report.converged) CHECK(res.report.residual >= 1e-9);
}

TEST_CASE("eps-letter successors drive the min and max branches") {
  // outputs 0 and 1, box [0.5, 1.5], eps = 0.6: both states are MAYBE-labeled,
  // so tau-bar spans the accepting and the waiting location everywhere
  auto inst = testing::geometric_chain(0.5);
  auto wide = mdp::build_label_cache(inst.g, inst.lab, inst.dfa, 0.6);
  ValueFn zero = ValueFn::constant(2, inst.dfa.num_locations, 0.0);

  ValueFn exact = robust_delta_op(zero, inst.g, inst.cache, 0.0);
  ValueFn worst = robust_eps_delta_op(zero, inst.g, wide, 0.0);
  CHECK(exact.at(0, inst.dfa.initial) == doctest::Approx(0.5));
  CHECK(worst.at(0, inst.dfa.initial) == 0.0);  // min branch kills the accept

  ValueFn opti = optimistic_op(zero, inst.g, wide, 0.0);
  CHECK(opti.at(0, inst.dfa.initial) == doctest::Approx(1.0));  // max branch

  // initial state labeled within eps of the box face: robust satisfaction
  // takes the min over tau-bar(q0, x0), the optimistic one the max
  inst.g.initial_state = 1;
  double s_exact = satisfaction_probability(zero, inst.g, inst.dfa, inst.cache, SatMode::DeltaRobust);
  double s_rob = satisfaction_probability(zero, inst.g, inst.dfa, wide, SatMode::EpsDeltaRobust);
  double s_opt = satisfaction_probability(zero, inst.g, inst.dfa, wide, SatMode::Optimistic);
  CHECK(s_exact == 1.0);
  CHECK(s_rob == 0.0);
  CHECK(s_opt == 1.0);
}

TEST_CASE("satisfaction probability conventions") {
  auto inst = testing::geometric_chain(0.5);
  inst.g.initial_state = 1;  // q-bar-0 lands in F
  ValueFn zero = ValueFn::constant(2, inst.dfa.num_locations, 0.0);
  CHECK(satisfaction_probability(zero, inst.g, inst.dfa, inst.cache, SatMode::DeltaRobust) == 1.0);
  CHECK(satisfaction_probability(zero, inst.g, inst.dfa, inst.cache, SatMode::EpsDeltaRobust) == 1.0);
  CHECK(satisfaction_probability(zero, inst.g, inst.dfa, inst.cache, SatMode::Optimistic) == 1.0);
}
