#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsynth::scltl {

// A letter is a subset of the declared atomic propositions, bit i set iff
// ap_list[i] holds. At most 16 propositions.
using Letter = std::uint16_t;

enum class Kind {
  True,
  False,
  Atom,
  NegAtom,
  And,
  Or,
  Next,
  Until,
  // sugar, removed by desugar()
  Eventually,
  BoundedEventually,
  BoundedAlways,
};

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  Kind kind;
  std::string atom;       // Atom / NegAtom
  FormulaPtr lhs, rhs;    // binary nodes use both, unary nodes use lhs
  int bound = 0;          // BoundedEventually / BoundedAlways

  bool is_core() const;
  bool operator==(const Formula& other) const;
};

FormulaPtr f_true();
FormulaPtr f_false();
FormulaPtr f_atom(std::string name);
FormulaPtr f_natom(std::string name);
FormulaPtr f_and(FormulaPtr l, FormulaPtr r);
FormulaPtr f_or(FormulaPtr l, FormulaPtr r);
FormulaPtr f_next(FormulaPtr f);
FormulaPtr f_until(FormulaPtr l, FormulaPtr r);
FormulaPtr f_eventually(FormulaPtr f);
FormulaPtr f_bounded_eventually(int n, FormulaPtr f);
FormulaPtr f_bounded_always(int n, FormulaPtr f);

/// Canonical text form; also used as ordering key internally.
std::string to_string(const Formula& f);

struct ParseError : std::runtime_error {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " (at byte " + std::to_string(off) + ")"), offset(off) {}
};

// Grammar: p | !p | f & f | f "|" f | X f | f U f | F f | F<=N f | G<=N f |
// true | false, with parentheses. Precedence unary > U > & > |, U
// right-associative. Atom names must appear in ap_list.
FormulaPtr parse_formula(const std::string& text, const std::vector<std::string>& ap_list);

/// Rewrites sugar into the six core kinds. Idempotent.
FormulaPtr desugar(const FormulaPtr& f);

// Deterministic finite automaton over the alphabet 2^|AP|, total, with the
// accepting set absorbing.
struct Dfa {
  int num_locations = 0;
  int initial = 0;
  int num_aps = 0;
  std::vector<int> trans;        // [q * num_letters() + letter]
  std::vector<bool> accepting;

  int num_letters() const { return 1 << num_aps; }
  int step(int q, Letter a) const { return trans[static_cast<std::size_t>(q) * num_letters() + a]; }
  bool is_accepting(int q) const { return accepting[static_cast<std::size_t>(q)]; }
  /// Locations from which no accepting location is reachable.
  std::vector<bool> rejecting_traps() const;
};

// Tableau construction: formulas unfold into disjunctions of next-step
// obligation sets, subset construction determinizes, Hopcroft minimizes.
// Accepts exactly the good prefixes of the (desugared) formula. Throws if the
// intermediate automaton exceeds 2^20 states.
Dfa to_dfa(const FormulaPtr& f, const std::vector<std::string>& ap_list);

struct DfaRun {
  int final_location;
  bool accepted;
};
DfaRun run_dfa(const Dfa& d, const std::vector<Letter>& word);

// Strong finite-word semantics: any reference past the end of the word is
// false; Until needs its witness inside the word. Position may exceed the
// word length.
bool sat_strong_oracle(const FormulaPtr& f, const std::vector<Letter>& word,
                       std::size_t position, const std::vector<std::string>& ap_list);

std::string to_dot(const Dfa& d, const std::vector<std::string>& ap_list);

/// Re-runs the minimization; equal location count means the input was minimal.
int minimized_size(const Dfa& d);

}  // namespace rsynth::scltl
