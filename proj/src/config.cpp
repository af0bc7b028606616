#include "rsynth/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace rsynth::config {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "\n" : "") << "- " << v[i];
  return os.str();
}

struct Validator {
  std::vector<std::string> errors;

  void fail(const std::string& msg) { errors.push_back(msg); }

  bool has(const json& j, const std::string& key) { return j.contains(key); }

  const json* req(const json& j, const std::string& ctx, const std::string& key) {
    if (!j.contains(key)) {
      fail(ctx + ": missing field '" + key + "'");
      return nullptr;
    }
    return &j.at(key);
  }

  Eigen::MatrixXd matrix(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.empty() || !j[0].is_array()) {
      fail(ctx + ": expected a nested array (row-major matrix)");
      return Eigen::MatrixXd::Zero(0, 0);
    }
    std::size_t cols = j[0].size();
    Eigen::MatrixXd m(j.size(), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
      if (!j[r].is_array() || j[r].size() != cols) {
        fail(ctx + ": ragged matrix rows");
        return Eigen::MatrixXd::Zero(0, 0);
      }
      for (std::size_t c = 0; c < cols; ++c) {
        if (!j[r][c].is_number()) {
          fail(ctx + ": non-numeric entry");
          return Eigen::MatrixXd::Zero(0, 0);
        }
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
      }
    }
    return m;
  }

  Eigen::VectorXd vector(const json& j, const std::string& ctx) {
    if (!j.is_array()) {
      fail(ctx + ": expected an array");
      return Eigen::VectorXd::Zero(0);
    }
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) {
        fail(ctx + ": non-numeric entry");
        return Eigen::VectorXd::Zero(0);
      }
      v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
  }

  std::vector<int> int_list(const json& j, const std::string& ctx) {
    std::vector<int> out;
    if (!j.is_array()) {
      fail(ctx + ": expected an array of integers");
      return out;
    }
    for (const auto& e : j) {
      if (!e.is_number_integer()) {
        fail(ctx + ": expected integers");
        return {};
      }
      out.push_back(e.get<int>());
    }
    return out;
  }

  lti::Box box(const json& j, const std::string& ctx) {
    lti::Box b;
    if (const json* lo = req(j, ctx, "lo")) b.lo = vector(*lo, ctx + ".lo");
    if (const json* hi = req(j, ctx, "hi")) b.hi = vector(*hi, ctx + ".hi");
    if (b.lo.size() != b.hi.size()) fail(ctx + ": lo/hi length mismatch");
    for (int d = 0; d < std::min(b.lo.size(), b.hi.size()); ++d)
      if (!(b.lo[d] <= b.hi[d])) fail(ctx + ": lo > hi in dimension " + std::to_string(d));
    return b;
  }
};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> v)
    : std::runtime_error("configuration invalid:\n" + join(v)), violations(std::move(v)) {}

ProblemConfig parse_config(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({origin + ": " + e.what()});
  }

  Validator v;
  ProblemConfig cfg;
  cfg.name = j.value("name", std::string{});
  cfg.output_dir = j.value("output_dir", std::string{"out"});

  if (const json* sys = v.req(j, "config", "system")) {
    if (const json* A = v.req(*sys, "system", "A")) cfg.system.A = v.matrix(*A, "system.A");
    if (const json* B = v.req(*sys, "system", "B")) cfg.system.B = v.matrix(*B, "system.B");
    if (const json* Bw = v.req(*sys, "system", "B_w")) cfg.system.B_w = v.matrix(*Bw, "system.B_w");
    if (const json* C = v.req(*sys, "system", "C")) cfg.system.C = v.matrix(*C, "system.C");
    if (const json* sb = v.req(*sys, "system", "state_box"))
      cfg.system.state_box = v.box(*sb, "system.state_box");
    if (const json* ib = v.req(*sys, "system", "input_box"))
      cfg.system.input_box = v.box(*ib, "system.input_box");
    if (const json* x0 = v.req(*sys, "system", "x0")) cfg.system.x0 = v.vector(*x0, "system.x0");
  }
  if (const json* K = v.req(j, "config", "feedback")) cfg.feedback = v.matrix(*K, "feedback");

  if (j.contains("reduction") && !j.at("reduction").is_null()) {
    const json& r = j.at("reduction");
    ReductionSpec rs;
    if (r.contains("order")) {
      rs.order = r.at("order").get<int>();
      if (rs.order < 1) v.fail("reduction.order must be >= 1");
    } else if (r.contains("explicit")) {
      const json& e = r.at("explicit");
      lti::ReducedModel m;
      if (const json* x = v.req(e, "reduction.explicit", "A_s")) m.A_s = v.matrix(*x, "A_s");
      if (const json* x = v.req(e, "reduction.explicit", "B_s")) m.B_s = v.matrix(*x, "B_s");
      if (const json* x = v.req(e, "reduction.explicit", "B_sw")) m.B_sw = v.matrix(*x, "B_sw");
      if (const json* x = v.req(e, "reduction.explicit", "C_s")) m.C_s = v.matrix(*x, "C_s");
      rs.explicit_model = std::move(m);
    } else {
      v.fail("reduction: need 'order' or 'explicit'");
    }
    cfg.reduction = std::move(rs);
  }

  if (const json* g = v.req(j, "config", "grid")) {
    if (const json* lo = v.req(*g, "grid", "lo")) cfg.grid.lo = v.vector(*lo, "grid.lo");
    if (const json* hi = v.req(*g, "grid", "hi")) cfg.grid.hi = v.vector(*hi, "grid.hi");
    if (const json* c = v.req(*g, "grid", "cells")) cfg.grid.cells = v.int_list(*c, "grid.cells");
    for (int c : cfg.grid.cells)
      if (c < 1) v.fail("grid.cells entries must be >= 1");
    if (cfg.grid.lo.size() != static_cast<Eigen::Index>(cfg.grid.cells.size()) ||
        cfg.grid.hi.size() != static_cast<Eigen::Index>(cfg.grid.cells.size()))
      v.fail("grid lo/hi/cells length mismatch");
  }
  if (const json* g = v.req(j, "config", "input_grid")) {
    cfg.input_grid_box = v.box(*g, "input_grid");
    if (const json* p = v.req(*g, "input_grid", "points"))
      cfg.input_grid_points = v.int_list(*p, "input_grid.points");
    if (static_cast<Eigen::Index>(cfg.input_grid_points.size()) != cfg.input_grid_box.lo.size())
      v.fail("input_grid points/box length mismatch");
  }

  if (const json* aps = v.req(j, "config", "ap")) {
    if (aps->is_array())
      for (const auto& a : *aps) cfg.ap_list.push_back(a.get<std::string>());
    else
      v.fail("ap: expected an array of names");
    if (cfg.ap_list.size() > 16) v.fail("at most 16 atomic propositions are supported");
  }
  if (const json* labels = v.req(j, "config", "labels")) {
    std::set<std::string> seen;
    for (const auto& lb : *labels) {
      mdp::LabelBox box;
      box.ap = lb.value("ap", std::string{});
      if (box.ap.empty()) v.fail("labels: missing ap name");
      if (!seen.insert(box.ap).second) v.fail("labels: duplicate ap '" + box.ap + "'");
      Eigen::VectorXd lo = v.vector(lb.value("lo", json::array()), "labels.lo");
      Eigen::VectorXd hi = v.vector(lb.value("hi", json::array()), "labels.hi");
      if (lo.size() != hi.size()) v.fail("labels '" + box.ap + "': lo/hi length mismatch");
      for (int d = 0; d < std::min(lo.size(), hi.size()); ++d) {
        if (!(lo[d] <= hi[d])) v.fail("labels '" + box.ap + "': lo > hi");
        box.lo.push_back(lo[d]);
        box.hi.push_back(hi[d]);
      }
      cfg.labeling.boxes.push_back(std::move(box));
    }
  }
  // label order must follow the declared AP order
  {
    std::vector<mdp::LabelBox> ordered;
    for (const std::string& ap : cfg.ap_list) {
      bool found = false;
      for (const auto& b : cfg.labeling.boxes)
        if (b.ap == ap) {
          ordered.push_back(b);
          found = true;
          break;
        }
      if (!found) v.fail("ap '" + ap + "' has no label box");
    }
    for (const auto& b : cfg.labeling.boxes)
      if (std::find(cfg.ap_list.begin(), cfg.ap_list.end(), b.ap) == cfg.ap_list.end())
        v.fail("label box '" + b.ap + "' is not in the ap list");
    if (ordered.size() == cfg.labeling.boxes.size()) cfg.labeling.boxes = std::move(ordered);
  }

  if (const json* f = v.req(j, "config", "formula")) {
    if (f->is_string())
      cfg.formula_text = f->get<std::string>();
    else
      v.fail("formula: expected a string");
  }

  if (const json* r = v.req(j, "config", "relation")) {
    if (r->contains("eps")) {
      const json& e = r->at("eps");
      if (e.is_string()) {
        std::string spelled = e.get<std::string>();
        if (spelled != "minimize" && spelled != "minimize-eps")
          v.fail("relation.eps: number or \"minimize-eps\"");
      } else if (e.is_number()) {
        cfg.relation.eps = e.get<double>();
        if (*cfg.relation.eps < 0) v.fail("relation.eps must be nonnegative");
      } else {
        v.fail("relation.eps: number or \"minimize\"");
      }
    } else {
      v.fail("relation: missing field 'eps'");
    }
    cfg.relation.delta = r->value("delta", 0.0);
    if (cfg.relation.delta < 0 || cfg.relation.delta > 1) v.fail("relation.delta must be in [0,1]");
    std::string mdesign = r->value("m_design", std::string{"lyapunov"});
    if (mdesign == "invariant-ellipsoid")
      cfg.relation.invariant_ellipsoid_m = true;
    else if (mdesign != "lyapunov")
      v.fail("relation.m_design: 'lyapunov' or 'invariant-ellipsoid'");
    cfg.relation.rho = r->value("rho", 1.0);
    cfg.relation.eta = r->value("eta", 1e-9);
    if (r->contains("m_matrix")) cfg.relation.m_matrix = v.matrix(r->at("m_matrix"), "relation.m_matrix");
    cfg.relation.noise_samples = r->value("noise_samples", 200000);
    cfg.relation.noise_seed = r->value("noise_seed", std::uint64_t{1});
  }

  if (j.contains("solver")) {
    const json& s = j.at("solver");
    cfg.solver.tol = s.value("tol", 1e-9);
    cfg.solver.max_iter = s.value("max_iter", 0);
    cfg.solver.policy_delta = s.value("policy_delta", 1e-6);
    if (!(cfg.solver.tol > 0)) v.fail("solver.tol must be positive");
  }
  if (j.contains("simulation")) {
    const json& s = j.at("simulation");
    cfg.simulation.runs = s.value("runs", 500);
    cfg.simulation.horizon = s.value("horizon", 200);
    cfg.simulation.seed = s.value("seed", std::uint64_t{1});
    cfg.simulation.clamp_inputs = s.value("clamp_inputs", false);
    cfg.simulation.trace_runs = s.value("trace_runs", 0);
    if (cfg.simulation.runs < 1) v.fail("simulation.runs must be >= 1");
  }
  if (j.contains("bounds_compare")) {
    const json& s = j.at("bounds_compare");
    cfg.bounds_compare.horizon = s.value("horizon", 100);
    if (s.contains("deltas")) {
      cfg.bounds_compare.deltas.clear();
      for (const auto& d : s.at("deltas")) cfg.bounds_compare.deltas.push_back(d.get<double>());
    }
  }

  // cross-field consistency
  const int n = static_cast<int>(cfg.system.A.rows());
  if (cfg.system.A.size() > 0) {
    if (cfg.system.A.cols() != n) v.fail("system.A must be square");
    if (cfg.system.B.rows() != n) v.fail("system.B row count mismatch");
    if (cfg.system.B_w.rows() != n) v.fail("system.B_w row count mismatch");
    if (cfg.system.C.cols() != n) v.fail("system.C column count mismatch");
    if (cfg.system.x0.size() != n) v.fail("system.x0 length mismatch");
    if (cfg.system.state_box.lo.size() != n) v.fail("state_box dimension mismatch");
    if (cfg.system.input_box.lo.size() != cfg.system.B.cols()) v.fail("input_box dimension mismatch");
    if (cfg.feedback.size() > 0 &&
        (cfg.feedback.rows() != cfg.system.B.cols() || cfg.feedback.cols() != n))
      v.fail("feedback gain must be m x n");
    int ns = n;
    if (cfg.reduction) {
      ns = cfg.reduction->explicit_model ? static_cast<int>(cfg.reduction->explicit_model->A_s.rows())
                                         : cfg.reduction->order;
    }
    if (static_cast<int>(cfg.grid.cells.size()) != ns) v.fail("grid dimension must match the (reduced) state dimension");
    if (cfg.input_grid_box.lo.size() == cfg.system.input_box.lo.size()) {
      for (int d = 0; d < cfg.input_grid_box.dim(); ++d)
        if (cfg.input_grid_box.lo[d] < cfg.system.input_box.lo[d] - 1e-12 ||
            cfg.input_grid_box.hi[d] > cfg.system.input_box.hi[d] + 1e-12)
          v.fail("input_grid box must lie inside the input box");
    } else if (cfg.input_grid_box.lo.size() > 0) {
      v.fail("input_grid dimension mismatch");
    }
    int p = static_cast<int>(cfg.system.C.rows());
    for (const auto& b : cfg.labeling.boxes)
      if (static_cast<int>(b.lo.size()) != p)
        v.fail("label box '" + b.ap + "' dimension differs from the output dimension");
  }

  if (!cfg.formula_text.empty() && !cfg.ap_list.empty()) {
    try {
      (void)scltl::parse_formula(cfg.formula_text, cfg.ap_list);
    } catch (const std::exception& e) {
      v.fail(std::string{"formula: "} + e.what());
    }
  }

  if (!v.errors.empty()) throw ConfigError(std::move(v.errors));
  return cfg;
}

ProblemConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace rsynth::config
