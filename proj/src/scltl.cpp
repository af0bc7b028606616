#include "rsynth/scltl.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

namespace rsynth::scltl {

namespace {

FormulaPtr make(Kind k, std::string atom = {}, FormulaPtr l = nullptr, FormulaPtr r = nullptr,
                int bound = 0) {
  auto f = std::make_shared<Formula>();
  f->kind = k;
  f->atom = std::move(atom);
  f->lhs = std::move(l);
  f->rhs = std::move(r);
  f->bound = bound;
  return f;
}

}  // namespace

bool Formula::is_core() const {
  switch (kind) {
    case Kind::Eventually:
    case Kind::BoundedEventually:
    case Kind::BoundedAlways:
      return false;
    default:
      break;
  }
  bool ok = true;
  if (lhs) ok = ok && lhs->is_core();
  if (rhs) ok = ok && rhs->is_core();
  return ok;
}

bool Formula::operator==(const Formula& other) const {
  if (kind != other.kind || atom != other.atom || bound != other.bound) return false;
  auto eq = [](const FormulaPtr& a, const FormulaPtr& b) {
    if (!a && !b) return true;
    if (!a || !b) return false;
    return *a == *b;
  };
  return eq(lhs, other.lhs) && eq(rhs, other.rhs);
}

FormulaPtr f_true() { return make(Kind::True); }
FormulaPtr f_false() { return make(Kind::False); }
FormulaPtr f_atom(std::string name) { return make(Kind::Atom, std::move(name)); }
FormulaPtr f_natom(std::string name) { return make(Kind::NegAtom, std::move(name)); }
FormulaPtr f_and(FormulaPtr l, FormulaPtr r) { return make(Kind::And, {}, std::move(l), std::move(r)); }
FormulaPtr f_or(FormulaPtr l, FormulaPtr r) { return make(Kind::Or, {}, std::move(l), std::move(r)); }
FormulaPtr f_next(FormulaPtr f) { return make(Kind::Next, {}, std::move(f)); }
FormulaPtr f_until(FormulaPtr l, FormulaPtr r) { return make(Kind::Until, {}, std::move(l), std::move(r)); }
FormulaPtr f_eventually(FormulaPtr f) { return make(Kind::Eventually, {}, std::move(f)); }
FormulaPtr f_bounded_eventually(int n, FormulaPtr f) {
  return make(Kind::BoundedEventually, {}, std::move(f), nullptr, n);
}
FormulaPtr f_bounded_always(int n, FormulaPtr f) {
  return make(Kind::BoundedAlways, {}, std::move(f), nullptr, n);
}

std::string to_string(const Formula& f) {
  switch (f.kind) {
    case Kind::True: return "true";
    case Kind::False: return "false";
    case Kind::Atom: return f.atom;
    case Kind::NegAtom: return "!" + f.atom;
    case Kind::And: return "(" + to_string(*f.lhs) + " & " + to_string(*f.rhs) + ")";
    case Kind::Or: return "(" + to_string(*f.lhs) + " | " + to_string(*f.rhs) + ")";
    case Kind::Next: return "X " + to_string(*f.lhs);
    case Kind::Until: return "(" + to_string(*f.lhs) + " U " + to_string(*f.rhs) + ")";
    case Kind::Eventually: return "F " + to_string(*f.lhs);
    case Kind::BoundedEventually:
      return "F<=" + std::to_string(f.bound) + " " + to_string(*f.lhs);
    case Kind::BoundedAlways:
      return "G<=" + std::to_string(f.bound) + " " + to_string(*f.lhs);
  }
  return "?";
}

// ---------------------------------------------------------------------------
// parser

namespace {

struct Parser {
  const std::string& text;
  const std::vector<std::string>& aps;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  bool at_end() {
    skip_ws();
    return pos >= text.size();
  }

  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }

  bool is_ident_char(char c) const {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  }

  // Operators are the bare single letters X, U, F, G; everything else
  // alphanumeric is an identifier.
  std::string peek_word() {
    skip_ws();
    std::size_t p = pos;
    std::string w;
    while (p < text.size() && is_ident_char(text[p])) w += text[p++];
    return w;
  }

  void consume_word(const std::string& w) { pos += w.size(); }

  void expect_atom_name(std::string& out, std::size_t& off) {
    skip_ws();
    off = pos;
    std::string w = peek_word();
    if (w.empty()) throw ParseError("expected atomic proposition", pos);
    if (w == "X" || w == "U" || w == "F" || w == "G" || w == "true" || w == "false")
      throw ParseError("negation applies only to atomic propositions", off);
    consume_word(w);
    if (std::find(aps.begin(), aps.end(), w) == aps.end())
      throw ParseError("unknown atomic proposition '" + w + "'", off);
    out = w;
  }

  int parse_bound() {
    skip_ws();
    if (pos + 1 >= text.size() || text[pos] != '<' || text[pos + 1] != '=')
      throw ParseError("expected <=", pos);
    pos += 2;
    skip_ws();
    std::size_t start = pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos == start) throw ParseError("expected bound", pos);
    return std::stoi(text.substr(start, pos - start));
  }

  FormulaPtr parse_or() {
    FormulaPtr f = parse_and();
    while (peek() == '|') {
      ++pos;
      f = f_or(f, parse_and());
    }
    return f;
  }

  FormulaPtr parse_and() {
    FormulaPtr f = parse_until();
    while (peek() == '&') {
      ++pos;
      f = f_and(f, parse_until());
    }
    return f;
  }

  FormulaPtr parse_until() {  // right-associative
    FormulaPtr f = parse_unary();
    skip_ws();
    if (peek_word() == "U") {
      consume_word("U");
      return f_until(f, parse_until());
    }
    return f;
  }

  FormulaPtr parse_unary() {
    skip_ws();
    if (pos >= text.size()) throw ParseError("unexpected end of formula", pos);
    char c = text[pos];
    if (c == '(') {
      ++pos;
      FormulaPtr f = parse_or();
      if (peek() != ')') throw ParseError("expected )", pos);
      ++pos;
      return f;
    }
    if (c == '!') {
      ++pos;
      std::string name;
      std::size_t off;
      expect_atom_name(name, off);
      return f_natom(name);
    }
    std::string w = peek_word();
    std::size_t off = pos;
    if (w.empty()) throw ParseError("unexpected character", pos);
    if (w == "X") {
      consume_word(w);
      return f_next(parse_unary());
    }
    if (w == "F") {
      consume_word(w);
      skip_ws();
      if (pos < text.size() && text[pos] == '<') {
        int n = parse_bound();
        return f_bounded_eventually(n, parse_unary());
      }
      return f_eventually(parse_unary());
    }
    if (w == "G") {
      consume_word(w);
      skip_ws();
      if (pos < text.size() && text[pos] == '<') {
        int n = parse_bound();
        return f_bounded_always(n, parse_unary());
      }
      throw ParseError("unbounded G is outside the fragment; use G<=N", off);
    }
    if (w == "U") throw ParseError("U needs a left operand", off);
    if (w == "true") {
      consume_word(w);
      return f_true();
    }
    if (w == "false") {
      consume_word(w);
      return f_false();
    }
    consume_word(w);
    if (std::find(aps.begin(), aps.end(), w) == aps.end())
      throw ParseError("unknown atomic proposition '" + w + "'", off);
    return f_atom(w);
  }
};

}  // namespace

FormulaPtr parse_formula(const std::string& text, const std::vector<std::string>& ap_list) {
  if (ap_list.size() > 16) throw std::invalid_argument("at most 16 atomic propositions");
  Parser p{text, ap_list};
  FormulaPtr f = p.parse_or();
  if (!p.at_end()) throw ParseError("trailing input", p.pos);
  return f;
}

FormulaPtr desugar(const FormulaPtr& f) {
  switch (f->kind) {
    case Kind::True:
    case Kind::False:
    case Kind::Atom:
    case Kind::NegAtom:
      return f;
    case Kind::And: return f_and(desugar(f->lhs), desugar(f->rhs));
    case Kind::Or: return f_or(desugar(f->lhs), desugar(f->rhs));
    case Kind::Next: return f_next(desugar(f->lhs));
    case Kind::Until: return f_until(desugar(f->lhs), desugar(f->rhs));
    case Kind::Eventually: return f_until(f_true(), desugar(f->lhs));
    case Kind::BoundedEventually: {
      FormulaPtr sub = desugar(f->lhs);
      FormulaPtr out = sub;
      for (int i = 0; i < f->bound; ++i) out = f_or(sub, f_next(out));
      return out;
    }
    case Kind::BoundedAlways: {
      FormulaPtr sub = desugar(f->lhs);
      FormulaPtr out = sub;
      for (int i = 0; i < f->bound; ++i) out = f_and(sub, f_next(out));
      return out;
    }
  }
  throw std::logic_error("bad kind");
}

// ---------------------------------------------------------------------------
// DFA construction

namespace {

constexpr std::size_t kStateGuard = std::size_t{1} << 20;

// Obligation set: formulas that must all hold from the next step on,
// canonically ordered by their text form.
using Obligation = std::vector<std::string>;

struct Expander {
  const std::vector<std::string>& aps;
  std::map<std::string, FormulaPtr> table;  // text -> formula

  std::string key_of(const FormulaPtr& f) {
    std::string k = to_string(*f);
    table.emplace(k, f);
    return k;
  }

  static Obligation merge(const Obligation& a, const Obligation& b) {
    Obligation out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
  }

  static std::vector<Obligation> cross(const std::vector<Obligation>& l,
                                       const std::vector<Obligation>& r) {
    std::set<Obligation> out;
    for (const auto& a : l)
      for (const auto& b : r) out.insert(merge(a, b));
    return {out.begin(), out.end()};
  }

  int ap_index(const std::string& name) const {
    return static_cast<int>(std::find(aps.begin(), aps.end(), name) - aps.begin());
  }

  // Disjunction of next-step obligation sets after reading `letter`.
  // An empty vector is "false"; a vector holding the empty obligation is "true".
  std::vector<Obligation> step(const FormulaPtr& f, Letter letter) {
    switch (f->kind) {
      case Kind::True: return {{}};
      case Kind::False: return {};
      case Kind::Atom:
        return (letter >> ap_index(f->atom)) & 1 ? std::vector<Obligation>{{}}
                                                 : std::vector<Obligation>{};
      case Kind::NegAtom:
        return (letter >> ap_index(f->atom)) & 1 ? std::vector<Obligation>{}
                                                 : std::vector<Obligation>{{}};
      case Kind::And: return cross(step(f->lhs, letter), step(f->rhs, letter));
      case Kind::Or: {
        auto l = step(f->lhs, letter);
        auto r = step(f->rhs, letter);
        std::set<Obligation> out(l.begin(), l.end());
        out.insert(r.begin(), r.end());
        return {out.begin(), out.end()};
      }
      case Kind::Next: return {{key_of(f->lhs)}};
      case Kind::Until: {
        // right now, or left now and the whole Until again next step
        auto now = step(f->rhs, letter);
        auto later = step(f->lhs, letter);
        std::set<Obligation> out(now.begin(), now.end());
        Obligation self{key_of(f)};
        for (const auto& a : later) out.insert(merge(a, self));
        return {out.begin(), out.end()};
      }
      default:
        throw std::logic_error("to_dfa requires a desugared formula");
    }
  }
};

struct RawDfa {
  int n = 0;
  int q0 = 0;
  int nletters = 0;
  std::vector<int> trans;
  std::vector<bool> acc;
};

// Hopcroft partition refinement; returns the block index per location.
std::vector<int> hopcroft(const RawDfa& d) {
  const int n = d.n, nl = d.nletters;
  // predecessor lists per letter
  std::vector<std::vector<std::vector<int>>> pred(
      static_cast<std::size_t>(nl), std::vector<std::vector<int>>(static_cast<std::size_t>(n)));
  for (int q = 0; q < n; ++q)
    for (int a = 0; a < nl; ++a) pred[a][d.trans[static_cast<std::size_t>(q) * nl + a]].push_back(q);

  std::vector<int> block(n, 0);
  std::vector<std::vector<int>> blocks;
  {
    std::vector<int> accs, rest;
    for (int q = 0; q < n; ++q) (d.acc[q] ? accs : rest).push_back(q);
    if (!accs.empty()) blocks.push_back(accs);
    if (!rest.empty()) blocks.push_back(rest);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (int q : blocks[b]) block[q] = static_cast<int>(b);
  }
  std::set<std::pair<int, int>> work;  // (block, letter)
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (int a = 0; a < nl; ++a) work.insert({static_cast<int>(b), a});

  while (!work.empty()) {
    auto [bi, a] = *work.begin();
    work.erase(work.begin());
    // X = states with transition on a into block bi
    std::set<int> X;
    for (int q : blocks[bi])
      for (int p : pred[a][q]) X.insert(p);
    if (X.empty()) continue;
    // split every block against X
    std::set<int> touched;
    for (int q : X) touched.insert(block[q]);
    for (int b : touched) {
      std::vector<int> in, out;
      for (int q : blocks[b]) (X.count(q) ? in : out).push_back(q);
      if (in.empty() || out.empty()) continue;
      int nb = static_cast<int>(blocks.size());
      blocks[b] = in;
      blocks.push_back(out);
      for (int q : out) block[q] = nb;
      for (int l = 0; l < nl; ++l) {
        if (work.count({b, l})) {
          work.insert({nb, l});
        } else {
          work.insert(in.size() <= out.size() ? std::pair{b, l} : std::pair{nb, l});
        }
      }
    }
  }
  return block;
}

Dfa finalize(const RawDfa& raw, int num_aps) {
  std::vector<int> block = hopcroft(raw);
  int nb = 1 + *std::max_element(block.begin(), block.end());
  const int nl = raw.nletters;

  // canonical numbering: BFS from the initial block over ascending letters
  std::vector<int> order(nb, -1);
  std::vector<int> bfs{block[raw.q0]};
  order[block[raw.q0]] = 0;
  int next_id = 1;
  // representative raw state per block
  std::vector<int> rep(nb, -1);
  for (int q = raw.n - 1; q >= 0; --q) rep[block[q]] = q;
  for (std::size_t h = 0; h < bfs.size(); ++h) {
    int b = bfs[h];
    for (int a = 0; a < nl; ++a) {
      int tb = block[raw.trans[static_cast<std::size_t>(rep[b]) * nl + a]];
      if (order[tb] < 0) {
        order[tb] = next_id++;
        bfs.push_back(tb);
      }
    }
  }
  // all blocks are reachable (subset construction explores reachable states only)
  Dfa d;
  d.num_aps = num_aps;
  d.num_locations = nb;
  d.initial = order[block[raw.q0]];
  d.trans.assign(static_cast<std::size_t>(nb) * nl, 0);
  d.accepting.assign(nb, false);
  for (int b = 0; b < nb; ++b) {
    int q = rep[b];
    d.accepting[order[b]] = raw.acc[q];
    for (int a = 0; a < nl; ++a)
      d.trans[static_cast<std::size_t>(order[b]) * nl + a] =
          order[block[raw.trans[static_cast<std::size_t>(q) * nl + a]]];
  }
  return d;
}

}  // namespace

Dfa to_dfa(const FormulaPtr& f, const std::vector<std::string>& ap_list) {
  if (ap_list.size() > 16) throw std::invalid_argument("at most 16 atomic propositions");
  if (!f->is_core()) throw std::invalid_argument("to_dfa requires a desugared formula");
  const int nl = 1 << ap_list.size();
  Expander ex{ap_list, {}};

  // Subset state: set of obligation sets. The empty obligation means all
  // requirements were discharged; such a state is accepting and, since the
  // empty obligation reproduces itself, acceptance is absorbing.
  using Subset = std::set<Obligation>;
  std::map<Subset, int> ids;
  std::vector<Subset> states;
  Subset init{{ex.key_of(f)}};
  ids.emplace(init, 0);
  states.push_back(init);

  RawDfa raw;
  raw.nletters = nl;
  for (std::size_t i = 0; i < states.size(); ++i) {
    Subset cur = states[i];
    for (int a = 0; a < nl; ++a) {
      Subset succ;
      for (const Obligation& ob : cur) {
        std::vector<Obligation> ds{{}};
        for (const std::string& key : ob) {
          auto nd = ex.step(ex.table.at(key), static_cast<Letter>(a));
          ds = Expander::cross(ds, nd);
          if (ds.empty()) break;
        }
        succ.insert(ds.begin(), ds.end());
      }
      auto [it, inserted] = ids.emplace(succ, static_cast<int>(states.size()));
      if (inserted) {
        states.push_back(succ);
        if (states.size() > kStateGuard) throw std::runtime_error("DFA construction exceeded 2^20 states");
      }
      raw.trans.push_back(it->second);
    }
  }
  raw.n = static_cast<int>(states.size());
  raw.q0 = 0;
  raw.acc.resize(raw.n);
  for (int q = 0; q < raw.n; ++q) raw.acc[q] = states[q].count(Obligation{}) > 0;
  return finalize(raw, static_cast<int>(ap_list.size()));
}

std::vector<bool> Dfa::rejecting_traps() const {
  std::vector<bool> reach = accepting;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int q = 0; q < num_locations; ++q) {
      if (reach[q]) continue;
      for (int a = 0; a < num_letters(); ++a) {
        if (reach[step(q, static_cast<Letter>(a))]) {
          reach[q] = true;
          changed = true;
          break;
        }
      }
    }
  }
  std::vector<bool> trap(num_locations);
  for (int q = 0; q < num_locations; ++q) trap[q] = !reach[q];
  return trap;
}

DfaRun run_dfa(const Dfa& d, const std::vector<Letter>& word) {
  int q = d.initial;
  for (Letter a : word) q = d.step(q, a);
  return {q, d.is_accepting(q)};
}

bool sat_strong_oracle(const FormulaPtr& f, const std::vector<Letter>& word,
                       std::size_t position, const std::vector<std::string>& ap_list) {
  auto ap_index = [&](const std::string& name) {
    return std::find(ap_list.begin(), ap_list.end(), name) - ap_list.begin();
  };
  switch (f->kind) {
    case Kind::True: return true;
    case Kind::False: return false;
    case Kind::Atom:
      return position < word.size() && ((word[position] >> ap_index(f->atom)) & 1);
    case Kind::NegAtom:
      return position < word.size() && !((word[position] >> ap_index(f->atom)) & 1);
    case Kind::And:
      return sat_strong_oracle(f->lhs, word, position, ap_list) &&
             sat_strong_oracle(f->rhs, word, position, ap_list);
    case Kind::Or:
      return sat_strong_oracle(f->lhs, word, position, ap_list) ||
             sat_strong_oracle(f->rhs, word, position, ap_list);
    case Kind::Next: return sat_strong_oracle(f->lhs, word, position + 1, ap_list);
    case Kind::Until:
      for (std::size_t i = position; i < word.size(); ++i) {
        if (sat_strong_oracle(f->rhs, word, i, ap_list)) {
          bool ok = true;
          for (std::size_t j = position; j < i && ok; ++j)
            ok = sat_strong_oracle(f->lhs, word, j, ap_list);
          if (ok) return true;
        }
      }
      return false;
    default:
      throw std::invalid_argument("oracle requires a desugared formula");
  }
}

std::string to_dot(const Dfa& d, const std::vector<std::string>& ap_list) {
  auto letter_name = [&](int a) {
    if (a == 0) return std::string("{}");
    std::string s = "{";
    bool first = true;
    for (std::size_t i = 0; i < ap_list.size(); ++i) {
      if ((a >> i) & 1) {
        if (!first) s += ",";
        s += ap_list[i];
        first = false;
      }
    }
    return s + "}";
  };
  std::ostringstream os;
  os << "digraph dfa {\n  rankdir=LR;\n  init [shape=point];\n";
  for (int q = 0; q < d.num_locations; ++q)
    os << "  q" << q << " [shape=" << (d.is_accepting(q) ? "doublecircle" : "circle") << "];\n";
  os << "  init -> q" << d.initial << ";\n";
  for (int q = 0; q < d.num_locations; ++q) {
    // merge letters sharing a target
    std::map<int, std::string> edges;
    for (int a = 0; a < d.num_letters(); ++a) {
      int t = d.step(q, static_cast<Letter>(a));
      if (!edges[t].empty()) edges[t] += " ";
      edges[t] += letter_name(a);
    }
    for (const auto& [t, label] : edges)
      os << "  q" << q << " -> q" << t << " [label=\"" << label << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

int minimized_size(const Dfa& d) {
  RawDfa raw;
  raw.n = d.num_locations;
  raw.q0 = d.initial;
  raw.nletters = d.num_letters();
  raw.trans = d.trans;
  raw.acc = d.accepting;
  std::vector<int> block = hopcroft(raw);
  return 1 + *std::max_element(block.begin(), block.end());
}

}  // namespace rsynth::scltl
