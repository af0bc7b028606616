#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rsynth/pipeline.hpp"

namespace py = pybind11;
using namespace rsynth;

namespace {

mdp::FiniteGmdp gmdp_from_dense(const std::vector<std::vector<std::vector<double>>>& kernels,
                                const std::vector<std::vector<double>>& outputs, int initial) {
  mdp::FiniteGmdp g;
  g.num_actions = static_cast<int>(kernels.size());
  g.num_states = static_cast<int>(outputs.size());
  g.output_dim = outputs.empty() ? 0 : static_cast<int>(outputs[0].size());
  g.initial_state = initial;
  g.outputs.reserve(static_cast<std::size_t>(g.num_states) * g.output_dim);
  for (const auto& row : outputs)
    for (double v : row) g.outputs.push_back(v);
  g.kernel.resize(static_cast<std::size_t>(g.num_states) * g.num_actions);
  for (int a = 0; a < g.num_actions; ++a) {
    if (static_cast<int>(kernels[a].size()) != g.num_states)
      throw std::invalid_argument("kernel row count mismatch");
    for (int i = 0; i < g.num_states; ++i) {
      const auto& dense = kernels[a][i];
      if (static_cast<int>(dense.size()) != g.num_states + 1)
        throw std::invalid_argument("kernel rows need n+1 entries (last = sink mass)");
      mdp::KernelRow& r = g.row(a, i);
      for (int j = 0; j < g.num_states; ++j)
        if (dense[j] != 0.0) {
          r.cols.push_back(static_cast<std::uint32_t>(j));
          r.probs.push_back(dense[j]);
        }
      r.sink = dense[g.num_states];
    }
  }
  g.validate();
  return g;
}

mdp::Labeling labeling_from_boxes(
    const std::vector<std::tuple<std::string, std::vector<double>, std::vector<double>>>& boxes) {
  mdp::Labeling lab;
  for (const auto& [ap, lo, hi] : boxes) lab.boxes.push_back({ap, lo, hi});
  return lab;
}

robust_dp::OperatorKind op_from_name(const std::string& name) {
  if (name == "bellman") return robust_dp::OperatorKind::Bellman;
  if (name == "robust") return robust_dp::OperatorKind::RobustDelta;
  if (name == "eps-robust") return robust_dp::OperatorKind::RobustEpsDelta;
  if (name == "optimistic") return robust_dp::OperatorKind::Optimistic;
  throw std::invalid_argument("operator must be bellman, robust, eps-robust or optimistic");
}

}  // namespace

PYBIND11_MODULE(_rsynth, m) {
  m.doc() = "Robust controller synthesis for scLTL specifications on stochastic systems";

  py::class_<scltl::Dfa>(m, "Dfa")
      .def_readonly("num_locations", &scltl::Dfa::num_locations)
      .def_readonly("initial", &scltl::Dfa::initial)
      .def_readonly("num_aps", &scltl::Dfa::num_aps)
      .def("step", &scltl::Dfa::step)
      .def("is_accepting", &scltl::Dfa::is_accepting)
      .def("rejecting_traps", &scltl::Dfa::rejecting_traps);

  m.def("to_dfa", [](const std::string& text, const std::vector<std::string>& aps) {
    return scltl::to_dfa(scltl::desugar(scltl::parse_formula(text, aps)), aps);
  }, py::arg("formula"), py::arg("ap_list"), "Parse, desugar and translate to a minimal DFA");

  m.def("run_dfa", [](const scltl::Dfa& d, const std::vector<int>& word) {
    std::vector<scltl::Letter> w(word.begin(), word.end());
    auto r = scltl::run_dfa(d, w);
    return py::make_tuple(r.final_location, r.accepted);
  });

  m.def("formula_to_dot", [](const std::string& text, const std::vector<std::string>& aps) {
    return scltl::to_dot(scltl::to_dfa(scltl::desugar(scltl::parse_formula(text, aps)), aps), aps);
  });

  m.def("sat_strong_oracle",
        [](const std::string& text, const std::vector<std::string>& aps,
           const std::vector<int>& word, std::size_t position) {
          std::vector<scltl::Letter> w(word.begin(), word.end());
          return scltl::sat_strong_oracle(scltl::desugar(scltl::parse_formula(text, aps)), w,
                                          position, aps);
        });

  m.def("gamma_bound", &robust_dp::gamma_bound, py::arg("horizon"), py::arg("delta"));

  m.def("set_num_threads", &robust_dp::set_num_threads);

  m.def(
      "value_iteration",
      [](const std::vector<std::vector<std::vector<double>>>& kernels,
         const std::vector<std::vector<double>>& outputs, int initial_state,
         const std::vector<std::tuple<std::string, std::vector<double>, std::vector<double>>>& labels,
         const std::string& formula, const std::vector<std::string>& aps, const std::string& op,
         double delta, double eps, double tol, int max_iter) {
        mdp::FiniteGmdp g = gmdp_from_dense(kernels, outputs, initial_state);
        mdp::Labeling lab = labeling_from_boxes(labels);
        scltl::Dfa dfa = scltl::to_dfa(scltl::desugar(scltl::parse_formula(formula, aps)), aps);
        mdp::LabelCache cache = mdp::build_label_cache(g, lab, dfa, eps);
        robust_dp::ViParams p;
        p.delta = delta;
        p.tol = tol;
        p.max_iter = max_iter;
        auto kind = op_from_name(op);
        auto res = robust_dp::value_iteration(kind, g, cache, p);
        robust_dp::SatMode mode = kind == robust_dp::OperatorKind::Optimistic
                                      ? robust_dp::SatMode::Optimistic
                                      : (eps > 0 ? robust_dp::SatMode::EpsDeltaRobust
                                                 : robust_dp::SatMode::DeltaRobust);
        double sat = robust_dp::satisfaction_probability(res.value, g, dfa, cache, mode);
        std::vector<std::vector<double>> value(g.num_states,
                                               std::vector<double>(dfa.num_locations));
        std::vector<std::vector<int>> policy(g.num_states, std::vector<int>(dfa.num_locations));
        for (int i = 0; i < g.num_states; ++i)
          for (int q = 0; q < dfa.num_locations; ++q) {
            value[i][q] = res.value.at(i, q);
            policy[i][q] = res.policy.at(i, q);
          }
        py::dict out;
        out["value"] = value;
        out["policy"] = policy;
        out["iterations"] = res.report.iterations;
        out["residual"] = res.report.residual;
        out["converged"] = res.report.converged;
        out["satisfaction"] = sat;
        return out;
      },
      py::arg("kernels"), py::arg("outputs"), py::arg("initial_state"), py::arg("labels"),
      py::arg("formula"), py::arg("ap_list"), py::arg("op") = "robust", py::arg("delta") = 0.0,
      py::arg("eps") = 0.0, py::arg("tol") = 1e-9, py::arg("max_iter") = 0,
      "Robust dynamic programming over dense kernels (row entries n+1 with the sink last)");

  py::class_<config::ProblemConfig>(m, "ProblemConfig")
      .def_readonly("name", &config::ProblemConfig::name)
      .def_readonly("formula", &config::ProblemConfig::formula_text)
      .def_readonly("output_dir", &config::ProblemConfig::output_dir);

  m.def("load_config", &config::load_config, py::arg("path"));

  m.def(
      "run_pipeline",
      [](const config::ProblemConfig& cfg, const std::string& stage, const std::string& out_dir,
         std::optional<std::uint64_t> seed) {
        return pipeline::run_pipeline(cfg, pipeline::stage_from_name(stage), out_dir, seed);
      },
      py::arg("config"), py::arg("stage"), py::arg("out_dir") = "", py::arg("seed") = std::nullopt,
      "Run a pipeline stage; returns the process-style exit code (0 ok, 2 certificate "
      "failure, 3 Monte-Carlo sandwich violation)");
}
