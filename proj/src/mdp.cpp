#include "rsynth/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace rsynth::mdp {

double FiniteGmdp::max_row_sum_error() const {
  double worst = 0.0;
  for (const KernelRow& r : kernel) {
    double s = r.sink;
    for (double p : r.probs) s += p;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

void FiniteGmdp::validate() const {
  if (kernel.size() != static_cast<std::size_t>(num_states) * num_actions)
    throw std::invalid_argument("kernel size mismatch");
  for (const KernelRow& r : kernel) {
    if (r.cols.size() != r.probs.size()) throw std::invalid_argument("kernel row shape mismatch");
    if (r.sink < -1e-12 || r.sink > 1.0 + 1e-9) throw std::invalid_argument("bad sink mass");
    for (std::size_t k = 0; k < r.cols.size(); ++k) {
      if (r.cols[k] >= static_cast<std::uint32_t>(num_states))
        throw std::invalid_argument("kernel column out of range");
      if (!(r.probs[k] >= 0.0 && r.probs[k] <= 1.0 + 1e-9))
        throw std::invalid_argument("kernel entry outside [0,1]");
    }
  }
  if (max_row_sum_error() > 1e-9) throw std::invalid_argument("kernel row does not sum to 1");
  if (initial_state < 0 || initial_state >= num_states)
    throw std::invalid_argument("initial state out of range");
}

std::vector<std::string> Labeling::ap_names() const {
  std::vector<std::string> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) out.push_back(b.ap);
  return out;
}

Letter letter_of(const Labeling& lab, const double* y, int dim) {
  if (lab.boxes.size() > 16) throw std::invalid_argument("at most 16 atomic propositions");
  Letter m = 0;
  for (std::size_t b = 0; b < lab.boxes.size(); ++b) {
    const LabelBox& box = lab.boxes[b];
    if (static_cast<int>(box.lo.size()) != dim) throw std::invalid_argument("output dimension mismatch");
    bool inside = true;
    for (int d = 0; d < dim && inside; ++d) inside = box.lo[d] <= y[d] && y[d] <= box.hi[d];
    if (inside) m |= static_cast<Letter>(1u << b);
  }
  return m;
}

Letter letter_of(const Labeling& lab, const std::vector<double>& y) {
  return letter_of(lab, y.data(), static_cast<int>(y.size()));
}

std::vector<Letter> eps_letter_set(const Labeling& lab, const double* y, int dim, double eps) {
  if (lab.boxes.size() > 16) throw std::invalid_argument("at most 16 atomic propositions");
  if (eps < 0) throw std::invalid_argument("eps must be nonnegative");
  Letter always = 0;
  std::vector<int> maybe;
  for (std::size_t b = 0; b < lab.boxes.size(); ++b) {
    const LabelBox& box = lab.boxes[b];
    if (static_cast<int>(box.lo.size()) != dim) throw std::invalid_argument("output dimension mismatch");
    bool all_in = true, disjoint = false;
    for (int d = 0; d < dim; ++d) {
      all_in = all_in && box.lo[d] <= y[d] - eps && y[d] + eps <= box.hi[d];
      disjoint = disjoint || y[d] + eps < box.lo[d] || y[d] - eps > box.hi[d];
    }
    if (all_in)
      always |= static_cast<Letter>(1u << b);
    else if (!disjoint)
      maybe.push_back(static_cast<int>(b));
  }
  std::vector<Letter> out;
  out.reserve(std::size_t{1} << maybe.size());
  for (std::uint32_t sub = 0; sub < (1u << maybe.size()); ++sub) {
    Letter m = always;
    for (std::size_t j = 0; j < maybe.size(); ++j)
      if ((sub >> j) & 1) m |= static_cast<Letter>(1u << maybe[j]);
    out.push_back(m);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Letter> eps_letter_set(const Labeling& lab, const std::vector<double>& y, double eps) {
  return eps_letter_set(lab, y.data(), static_cast<int>(y.size()), eps);
}

LabelCache build_label_cache(const FiniteGmdp& g, const Labeling& lab, const Dfa& d, double eps) {
  if (static_cast<std::size_t>(d.num_aps) != lab.boxes.size())
    throw std::invalid_argument("labeling and DFA disagree on the AP count");
  LabelCache c;
  c.num_states = g.num_states;
  c.num_locations = d.num_locations;
  c.eps = eps;
  c.letter.resize(g.num_states);
  c.eps_letters.resize(g.num_states);
  for (int i = 0; i < g.num_states; ++i) {
    c.letter[i] = letter_of(lab, g.output(i), g.output_dim);
    c.eps_letters[i] = eps_letter_set(lab, g.output(i), g.output_dim, eps);
  }
  c.succ.resize(static_cast<std::size_t>(d.num_locations) * g.num_states);
  c.succ_is_accepting.resize(c.succ.size());
  c.accepting.resize(d.num_locations);
  for (int q = 0; q < d.num_locations; ++q) c.accepting[q] = d.is_accepting(q) ? 1 : 0;
  c.tau_offsets.assign(static_cast<std::size_t>(d.num_locations) * g.num_states + 1, 0);
  for (int q = 0; q < d.num_locations; ++q) {
    for (int i = 0; i < g.num_states; ++i) {
      std::size_t k = static_cast<std::size_t>(q) * g.num_states + i;
      c.succ[k] = d.step(q, c.letter[i]);
      c.succ_is_accepting[k] = c.accepting[c.succ[k]];
      std::set<int> succs;
      for (Letter a : c.eps_letters[i]) succs.insert(d.step(q, a));
      c.tau_offsets[k + 1] = c.tau_offsets[k] + static_cast<std::uint32_t>(succs.size());
      for (int s : succs) c.tau_data.push_back(s);
    }
  }
  return c;
}

std::pair<int, int> product_initial(const FiniteGmdp& g, const Dfa& d, const LabelCache& cache) {
  return {g.initial_state, d.step(d.initial, cache.letter[g.initial_state])};
}

}  // namespace rsynth::mdp
