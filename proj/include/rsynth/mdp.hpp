#pragma once

#include <cstdint>
#include <vector>

#include "rsynth/scltl.hpp"

namespace rsynth::mdp {

using scltl::Dfa;
using scltl::Letter;

// Sparse row-stochastic kernel row: column index n (= state count) is the sink.
struct KernelRow {
  std::vector<std::uint32_t> cols;
  std::vector<double> probs;
  double sink = 0.0;  // mass on the sink column
};

// Finite abstract gMDP. States 0..n-1 plus a distinguished absorbing sink
// with index n that carries no output and no letter.
struct FiniteGmdp {
  int num_states = 0;
  int num_actions = 0;
  int output_dim = 0;
  std::vector<KernelRow> kernel;   // [a * num_states + i]
  std::vector<double> outputs;     // row-major num_states x output_dim
  int initial_state = 0;

  const KernelRow& row(int action, int state) const {
    return kernel[static_cast<std::size_t>(action) * num_states + state];
  }
  KernelRow& row(int action, int state) {
    return kernel[static_cast<std::size_t>(action) * num_states + state];
  }
  const double* output(int state) const { return &outputs[static_cast<std::size_t>(state) * output_dim]; }
  int sink_index() const { return num_states; }

  /// Max |row sum - 1| over all rows, sink mass included.
  double max_row_sum_error() const;
  void validate() const;  // throws on bad probabilities or row sums
};

// Axis-aligned labeling boxes over the output space; boxes are closed, a
// boundary point carries the proposition.
struct LabelBox {
  std::string ap;
  std::vector<double> lo, hi;
};

struct Labeling {
  std::vector<LabelBox> boxes;  // order defines the letter bit order
  int dim() const { return boxes.empty() ? 0 : static_cast<int>(boxes[0].lo.size()); }
  std::vector<std::string> ap_names() const;
};

Letter letter_of(const Labeling& lab, const std::vector<double>& y);
Letter letter_of(const Labeling& lab, const double* y, int dim);

// Over-approximation of the letters reachable within the closed L2 ball of
// radius eps around y, via per-axis interval inflation: each proposition is
// ALWAYS, NEVER or MAYBE, and all subsets of the MAYBE set are emitted.
std::vector<Letter> eps_letter_set(const Labeling& lab, const std::vector<double>& y, double eps);
std::vector<Letter> eps_letter_set(const Labeling& lab, const double* y, int dim, double eps);

// Precomputed letters and DFA successors for every non-sink state. tau_bar
// holds, per (q, state), the sorted distinct successors over the eps-letter
// set; for eps = 0 every entry is the singleton {tau(q, letter(i))}.
struct LabelCache {
  int num_states = 0;
  int num_locations = 0;
  double eps = 0.0;
  std::vector<Letter> letter;                    // exact letter per state
  std::vector<std::vector<Letter>> eps_letters;  // per state
  std::vector<int> succ;                         // [q * n + i] = tau(q, letter(i))
  std::vector<std::uint32_t> tau_offsets;        // CSR over [q * n + i]
  std::vector<int> tau_data;
  std::vector<char> accepting;                   // per DFA location
  std::vector<char> succ_is_accepting;           // [q * n + i]

  int exact_successor(int q, int i) const { return succ[static_cast<std::size_t>(q) * num_states + i]; }
  std::pair<const int*, const int*> successors(int q, int i) const {
    std::size_t k = static_cast<std::size_t>(q) * num_states + i;
    return {tau_data.data() + tau_offsets[k], tau_data.data() + tau_offsets[k + 1]};
  }
};

LabelCache build_label_cache(const FiniteGmdp& g, const Labeling& lab, const Dfa& d, double eps);

// q-bar-0 of the product under the exact letter of the initial state. Robust
// and optimistic satisfaction take min/max over the eps-letter successors of
// the initial state instead; see robust_dp::satisfaction_probability.
std::pair<int, int> product_initial(const FiniteGmdp& g, const Dfa& d, const LabelCache& cache);

}  // namespace rsynth::mdp
