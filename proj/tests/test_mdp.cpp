#include <doctest.h>

#include "instances.hpp"
#include "rsynth/rng.hpp"

using namespace rsynth;
using mdp::Labeling;
using mdp::Letter;

TEST_CASE("letter_of with closed boxes") {
  Labeling lab{{{"obs", {2.0, 2.0}, {8.0, 8.0}},
                {"pac", {-1.5, -1.5}, {1.5, 1.5}},
                {"col", {6.0, -9.0}, {9.0, -6.0}}}};
  CHECK(mdp::letter_of(lab, {0.0, 0.0}) == 0b010);
  CHECK(mdp::letter_of(lab, {-5.0, -7.5}) == 0);
  CHECK(mdp::letter_of(lab, {3.0, 4.0}) == 0b001);
  // boundary point carries the proposition
  CHECK(mdp::letter_of(lab, {2.0, 2.0}) == 0b001);
  CHECK(mdp::letter_of(lab, {7.0, -6.0}) == 0b100);
  CHECK_THROWS(mdp::letter_of(lab, {0.0}));
}

TEST_CASE("overlapping boxes give the union letter") {
  Labeling lab{{{"a", {0.0}, {2.0}}, {"b", {1.0}, {3.0}}}};
  CHECK(mdp::letter_of(lab, {1.5}) == 0b11);
}

TEST_CASE("eps_letter_set cases") {
  Labeling lab{{{"p", {0.0}, {10.0}}}};
  SUBCASE("eps = 0 is the exact letter") {
    auto s = mdp::eps_letter_set(lab, {5.0}, 0.0);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == mdp::letter_of(lab, {5.0}));
  }
  SUBCASE("deep inside: ALWAYS") {
    auto s = mdp::eps_letter_set(lab, {5.0}, 1.0);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == 1);
  }
  SUBCASE("near a face: MAYBE") {
    auto s = mdp::eps_letter_set(lab, {0.5}, 1.0);
    REQUIRE(s.size() == 2);
    CHECK(s[0] == 0);
    CHECK(s[1] == 1);
  }
  SUBCASE("far outside: NEVER") {
    auto s = mdp::eps_letter_set(lab, {20.0}, 1.0);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == 0);
  }
}

TEST_CASE("eps_letter_set soundness on random balls") {
  Labeling lab{{{"a", {0.0, 0.0}, {4.0, 6.0}}, {"b", {3.0, -2.0}, {9.0, 2.0}}}};
  rng::Stream st(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> y{st.uniform() * 12.0 - 2.0, st.uniform() * 12.0 - 4.0};
    double eps = st.uniform() * 2.0;
    auto letters = mdp::eps_letter_set(lab, y, eps);
    CHECK(std::find(letters.begin(), letters.end(), mdp::letter_of(lab, y)) != letters.end());
    for (int k = 0; k < 50; ++k) {
      // random point in the L2 ball
      double a = st.gaussian(), b = st.gaussian();
      double r = eps * std::sqrt(st.uniform());
      double norm = std::hypot(a, b);
      if (norm == 0) continue;
      std::vector<double> y2{y[0] + r * a / norm, y[1] + r * b / norm};
      Letter l = mdp::letter_of(lab, y2);
      CHECK(std::find(letters.begin(), letters.end(), l) != letters.end());
    }
  }
}

TEST_CASE("monotone over-approximation in eps") {
  Labeling lab{{{"a", {0.0}, {1.0}}, {"b", {2.0}, {3.0}}}};
  rng::Stream st(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> y{st.uniform() * 5.0 - 1.0};
    auto small = mdp::eps_letter_set(lab, y, 0.3);
    auto big = mdp::eps_letter_set(lab, y, 0.9);
    for (Letter l : small) CHECK(std::find(big.begin(), big.end(), l) != big.end());
  }
}

TEST_CASE("label cache") {
  auto inst = testing::random_instance(99, 12, 2, 0.0);
  SUBCASE("eps = 0: singleton successors equal the exact ones") {
    for (int q = 0; q < inst.dfa.num_locations; ++q)
      for (int i = 0; i < inst.g.num_states; ++i) {
        auto [b, e] = inst.cache.successors(q, i);
        REQUIRE(e - b == 1);
        CHECK(*b == inst.cache.exact_successor(q, i));
      }
  }
  SUBCASE("growing eps never shrinks the letter sets") {
    auto wide = mdp::build_label_cache(inst.g, inst.lab, inst.dfa, 0.2);
    for (int i = 0; i < inst.g.num_states; ++i)
      CHECK(wide.eps_letters[i].size() >= inst.cache.eps_letters[i].size());
  }
}

TEST_CASE("two-state cache matches hand computation") {
  auto inst = testing::geometric_chain(0.5);
  // state 0 unlabeled, state 1 labeled {a}
  CHECK(inst.cache.letter[0] == 0);
  CHECK(inst.cache.letter[1] == 1);
  int q0 = inst.dfa.initial;
  CHECK(inst.cache.exact_successor(q0, 0) == q0);
  CHECK(inst.dfa.is_accepting(inst.cache.exact_successor(q0, 1)));
}

TEST_CASE("product initial state") {
  auto inst = testing::geometric_chain(0.5);
  auto [i0, q0] = mdp::product_initial(inst.g, inst.dfa, inst.cache);
  CHECK(i0 == 0);
  CHECK(q0 == inst.dfa.initial);
  inst.g.initial_state = 1;  // initial output already accepting-labeled
  auto [i1, q1] = mdp::product_initial(inst.g, inst.dfa, inst.cache);
  CHECK(i1 == 1);
  CHECK(inst.dfa.is_accepting(q1));
}

TEST_CASE("row-stochasticity validation") {
  auto g = testing::random_gmdp(5, 8, 2, 0.1);
  CHECK(g.max_row_sum_error() < 1e-12);
  g.validate();
  g.row(0, 0).probs[0] += 1e-6;
  CHECK_THROWS(g.validate());
}
