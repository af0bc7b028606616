import json
import math
import os

import pytest

try:
    import rsynth
except ImportError:
    import _rsynth as rsynth


def configs_dir():
    here = os.path.dirname(os.path.abspath(__file__))
    return os.environ.get("RSYNTH_CONFIGS", os.path.join(here, "..", "..", "configs"))


def test_gamma_bound():
    assert rsynth.gamma_bound(0, 0.3) == 0.0
    assert rsynth.gamma_bound(1, 0.1) == pytest.approx(0.1, abs=1e-15)
    assert rsynth.gamma_bound(10, 0.01) == pytest.approx(1 - 0.99**10, abs=1e-14)


def test_dfa_translation():
    d = rsynth.to_dfa("F a", ["a"])
    assert d.num_locations == 2
    final, accepted = rsynth.run_dfa(d, [1])
    assert accepted
    _, rejected = rsynth.run_dfa(d, [0, 0])
    assert not rejected
    dot = rsynth.formula_to_dot("F a", ["a"])
    assert "digraph" in dot

    robot = rsynth.to_dfa("((!obs & !col) U pac) & (!obs U col)", ["obs", "pac", "col"])
    assert robot.num_locations == 4
    assert sum(robot.rejecting_traps()) == 1


def test_oracle():
    assert rsynth.sat_strong_oracle("a U b", ["a", "b"], [0b01, 0b01, 0b10], 0)
    assert not rsynth.sat_strong_oracle("X a", ["a"], [1], 0)


def test_value_iteration_geometric_chain():
    # state 0 hits the labeled state 1 w.p. 0.7; robust fixed point 6/7
    kernels = [[[0.3, 0.7, 0.0], [0.0, 1.0, 0.0]]]
    outputs = [[0.0], [1.0]]
    labels = [("a", [0.5], [1.5])]
    res = rsynth.value_iteration(kernels, outputs, 0, labels, "F a", ["a"],
                                 op="robust", delta=0.1, tol=1e-12)
    assert res["converged"]
    assert res["satisfaction"] == pytest.approx(6.0 / 7.0, abs=1e-9)
    opt = rsynth.value_iteration(kernels, outputs, 0, labels, "F a", ["a"],
                                 op="optimistic", delta=0.1, tol=1e-12)
    assert opt["satisfaction"] >= res["satisfaction"]


def test_pipeline_stages(tmp_path):
    cfg = rsynth.load_config(os.path.join(configs_dir(), "toy.json"))
    assert cfg.name == "toy"
    out = str(tmp_path / "toy")
    assert rsynth.run_pipeline(cfg, "translate", out) == 0
    assert os.path.exists(os.path.join(out, "dfa.dot"))
    assert rsynth.run_pipeline(cfg, "certify", out) == 0
    cert = json.load(open(os.path.join(out, "certificate.json")))
    assert cert["passed"]
    assert math.isclose(cert["eps"], 1.2266, abs_tol=1e-12)
    assert rsynth.run_pipeline(cfg, "synthesize", out) == 0
    assert os.path.exists(os.path.join(out, "values.csv"))
    assert rsynth.run_pipeline(cfg, "simulate", out, seed=777) == 0
    rep = json.load(open(os.path.join(out, "mc_report.json")))
    assert rep["verdict"] == "PASS"
    assert rep["successes"] + rep["failures"] + rep["undecided"] == rep["runs"]
