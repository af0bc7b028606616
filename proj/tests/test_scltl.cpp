#include <doctest.h>

#include "rsynth/scltl.hpp"

using namespace rsynth::scltl;

namespace {

std::vector<std::vector<Letter>> all_words(int num_aps, int max_len) {
  const int nl = 1 << num_aps;
  std::vector<std::vector<Letter>> words{{}};
  std::vector<std::vector<Letter>> frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::vector<Letter>> next;
    for (const auto& w : frontier)
      for (int a = 0; a < nl; ++a) {
        auto w2 = w;
        w2.push_back(static_cast<Letter>(a));
        next.push_back(w2);
      }
    words.insert(words.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return words;
}

// good prefix <=> some prefix satisfies the strong finite semantics
bool oracle_accepts(const FormulaPtr& f, const std::vector<Letter>& w,
                    const std::vector<std::string>& aps) {
  for (std::size_t k = 0; k <= w.size(); ++k) {
    std::vector<Letter> prefix(w.begin(), w.begin() + k);
    if (sat_strong_oracle(f, prefix, 0, aps)) return true;
  }
  return false;
}

void check_against_oracle(const std::string& text, const std::vector<std::string>& aps,
                          int max_len = 6) {
  FormulaPtr f = desugar(parse_formula(text, aps));
  Dfa d = to_dfa(f, aps);
  for (const auto& w : all_words(static_cast<int>(aps.size()), max_len))
    REQUIRE(run_dfa(d, w).accepted == oracle_accepts(f, w, aps));
}

}  // namespace

TEST_CASE("parser precedence and associativity") {
  std::vector<std::string> aps{"a", "b", "c"};
  CHECK(to_string(*parse_formula("a U b U c", aps)) == "(a U (b U c))");
  // U binds tighter than &, & tighter than |
  CHECK(to_string(*parse_formula("a U b & c", aps)) == "((a U b) & c)");
  CHECK(to_string(*parse_formula("a & b | c", aps)) == "((a & b) | c)");
  CHECK(to_string(*parse_formula("F a", aps)) == "F a");
  CHECK(to_string(*parse_formula("F<=2 a", aps)) == "F<=2 a");

  std::vector<std::string> rob{"obs", "pac", "col"};
  FormulaPtr f = parse_formula("((!obs & !col) U pac) & (!obs U col)", rob);
  CHECK(to_string(*f) == "(((!obs & !col) U pac) & (!obs U col))");
}

TEST_CASE("parser errors carry byte offsets") {
  std::vector<std::string> aps{"a"};
  CHECK_THROWS_AS(parse_formula("a U", aps), ParseError);
  CHECK_THROWS_AS(parse_formula("q", aps), ParseError);          // unknown atom
  CHECK_THROWS_AS(parse_formula("!(a U a)", aps), ParseError);   // negation on non-atom
  CHECK_THROWS_AS(parse_formula("G a", aps), ParseError);        // unbounded always
  CHECK_THROWS_AS(parse_formula("a a", aps), ParseError);        // trailing input
  try {
    parse_formula("a & q", aps);
    FAIL("expected throw");
  } catch (const ParseError& e) {
    CHECK(e.offset == 4);
  }
}

TEST_CASE("desugar") {
  std::vector<std::string> aps{"a"};
  auto a = f_atom("a");
  CHECK(*desugar(f_eventually(a)) == *f_until(f_true(), a));
  CHECK(*desugar(f_bounded_always(0, a)) == *a);
  CHECK(*desugar(f_bounded_eventually(2, a)) == *f_or(a, f_next(f_or(a, f_next(a)))));
  // idempotence
  auto f = parse_formula("F<=3 a & F a", aps);
  CHECK(*desugar(desugar(f)) == *desugar(f));
}

TEST_CASE("eventually-a DFA") {
  std::vector<std::string> aps{"a"};
  Dfa d = to_dfa(desugar(parse_formula("F a", aps)), aps);
  CHECK(d.num_locations == 2);
  int acc = d.step(d.initial, 1);
  CHECK(d.is_accepting(acc));
  CHECK(d.step(d.initial, 0) == d.initial);
  CHECK(d.step(acc, 0) == acc);
  CHECK(d.step(acc, 1) == acc);

  CHECK(run_dfa(d, {1}).accepted);
  CHECK_FALSE(run_dfa(d, {0, 0}).accepted);
}

TEST_CASE("a-until-b DFA has three locations") {
  std::vector<std::string> aps{"a", "b"};
  Dfa d = to_dfa(desugar(parse_formula("a U b", aps)), aps);
  CHECK(d.num_locations == 3);
  CHECK(run_dfa(d, {0b01, 0b10}).accepted);  // a then b
}

TEST_CASE("false has empty language") {
  std::vector<std::string> aps{"a"};
  Dfa d = to_dfa(f_false(), aps);
  CHECK(d.num_locations == 1);
  CHECK_FALSE(d.is_accepting(d.initial));
}

TEST_CASE("strong semantics oracle basics") {
  std::vector<std::string> aps{"a", "b"};
  auto Fa = desugar(parse_formula("F a", aps));
  CHECK(sat_strong_oracle(Fa, {0b01}, 0, aps));
  auto Xa = desugar(parse_formula("X a", aps));
  CHECK_FALSE(sat_strong_oracle(Xa, {0b01}, 0, aps));  // no position 1
  auto ab = desugar(parse_formula("a U b", aps));
  CHECK(sat_strong_oracle(ab, {0b01, 0b01, 0b10}, 0, aps));
}

TEST_CASE("DFA agrees with the oracle exhaustively") {
  check_against_oracle("F a", {"a"});
  check_against_oracle("a U b", {"a", "b"});
  check_against_oracle("X a", {"a"});
  check_against_oracle("(a & !b) U b", {"a", "b"});
  check_against_oracle("F G<=3 a", {"a"}, 8);
  check_against_oracle("((!obs & !col) U pac) & (!obs U col)", {"obs", "pac", "col"}, 4);
}

TEST_CASE("emitted DFAs are total, minimal, with absorbing acceptance") {
  for (const char* text : {"F a", "a U b", "(a & !b) U b", "F G<=2 a", "a | X (b U a)"}) {
    std::vector<std::string> aps{"a", "b"};
    Dfa d = to_dfa(desugar(parse_formula(text, aps)), aps);
    CHECK(minimized_size(d) == d.num_locations);
    for (int q = 0; q < d.num_locations; ++q)
      for (int a = 0; a < d.num_letters(); ++a) {
        int t = d.step(q, static_cast<Letter>(a));
        REQUIRE(t >= 0);
        REQUIRE(t < d.num_locations);
        if (d.is_accepting(q)) REQUIRE(d.is_accepting(t));
      }
  }
}

TEST_CASE("rejecting traps") {
  std::vector<std::string> aps{"a", "b"};
  Dfa d = to_dfa(desugar(parse_formula("a U b", aps)), aps);
  auto traps = d.rejecting_traps();
  int count = 0;
  for (int q = 0; q < d.num_locations; ++q)
    if (traps[q]) ++count;
  CHECK(count == 1);  // the reject sink
}

TEST_CASE("dot emission mentions every location") {
  std::vector<std::string> aps{"a"};
  Dfa d = to_dfa(desugar(parse_formula("F a", aps)), aps);
  std::string dot = to_dot(d, aps);
  CHECK(dot.find("digraph") != std::string::npos);
  CHECK(dot.find("doublecircle") != std::string::npos);
  CHECK(dot.find("{a}") != std::string::npos);
}
