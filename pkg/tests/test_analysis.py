import dataclasses

import numpy as np
import pytest

from slpopf.analysis import (
    MissingDuals,
    NotRadial,
    extract_prices,
    load_oracle,
    optimality_gap,
    recover_angles,
    verify,
    voltages_from_w,
)
from slpopf.slp import initial_iterate, solve

from conftest import network


def test_recover_angles_tree_walk(case33):
    rng = np.random.default_rng(4)
    th = rng.uniform(-0.1, 0.1, case33.n_bus)
    th -= th[case33.ref_bus]
    it = initial_iterate(case33, rng.uniform(0.95, 1.05, case33.n_bus), th)
    np.testing.assert_allclose(recover_angles(case33, it.wr, it.wi), th, atol=1e-12)
    v, _ = voltages_from_w(case33, it.w, it.wr, it.wi)
    np.testing.assert_allclose(v * v, it.w)


def test_recover_angles_rejects_mesh(case9):
    with pytest.raises(NotRadial):
        recover_angles(case9, np.ones(9), np.zeros(9))


def test_gap_sign():
    assert optimality_gap(100.0, 99.0) == pytest.approx(1.0)
    assert optimality_gap(100.0, 101.0) == pytest.approx(-1.0)
    with pytest.raises(ZeroDivisionError):
        optimality_gap(0.0, 1.0)


def test_prices_units_and_missing():
    pr = extract_prices(100.0, {"nodal_p": np.array([1500.0]), "nodal_q": np.array([10.0])})
    np.testing.assert_allclose(pr.lmp, [15.0])
    np.testing.assert_allclose(pr.qlmp, [0.1])
    assert pr.units["lmp"] == "$/MWh"
    with pytest.raises(MissingDuals):
        extract_prices(100.0, None)
    with pytest.raises(MissingDuals):
        extract_prices(100.0, {"nodal_p": np.zeros(1)})


def test_verify_flags_perturbed_solution(case9):
    rep = solve(case9)
    assert verify(case9, rep.primal).passed
    bad = dataclasses.replace(rep.primal, pg=rep.primal.pg + 0.01)
    check = verify(case9, bad)
    assert not check.passed
    assert any("mismatch" in v for v in check.violations)
    bad = dataclasses.replace(rep.primal, w=rep.primal.w * 1.01)
    assert verify(case9, bad).max_F > 1e-5


def test_verify_accepts_mapping(case9):
    rep = solve(case9)
    d = {k: np.asarray(v) for k, v in rep.primal.to_dict().items() if v is not None}
    assert verify(case9, d).passed


@pytest.mark.parametrize("name", ["case5", "case57", "case300", "case69"])
def test_bundled_oracles(name):
    o = load_oracle(name)
    n = network(name).n_bus
    assert o.objective > 0 and o.tolerance > 0
    assert o.lmp.size == n and o.qlmp.size == n and o.v.size == n
    assert o.theta[network(name).ref_bus] == 0.0


@pytest.mark.parametrize("name", ["case9", "case118", "case33bw"])
def test_socp_oracle_lower_bounds_nlp(name):
    assert load_oracle(f"{name}-socp").objective <= load_oracle(name).objective * (1 + 1e-8)
