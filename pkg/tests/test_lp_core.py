import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from slpopf.lp_core import (
    DuplicateTag,
    HighsBackend,
    LinprogBackend,
    LpModel,
    LpStatus,
    UnknownVariable,
    kkt_residuals,
    solve_lp,
    to_lp_format,
)

BACKENDS = [HighsBackend(), HighsBackend(solver="simplex"), LinprogBackend()]


def small_model():
    m = LpModel("small")
    x, y = m.add_variables(["x", "y"], lower=0.0, upper=10.0, cost=[1.0, 2.0])
    lo = m.add_row({x: 1.0, y: 1.0}, ">=", 3.0, "demand")
    up = m.add_row({x: 1.0}, "<=", 2.0, "cap")
    return m, lo, up


@pytest.mark.parametrize("backend", BACKENDS)
def test_dual_is_derivative_of_objective(backend):
    m, lo, up = small_model()
    sol = solve_lp(m, backend)
    assert sol.optimal
    assert sol.objective == pytest.approx(4.0, abs=1e-7)
    np.testing.assert_allclose(sol.x, [2.0, 1.0], atol=1e-7)
    assert sol.dual(lo) == pytest.approx(2.0, abs=1e-7)
    assert sol.dual(up) == pytest.approx(-1.0, abs=1e-7)


def test_equality_dual_sign():
    m = LpModel()
    x = m.add_variable("x", lower=-math.inf, cost=3.0)
    h = m.add_row({x: 2.0}, "=", 4.0, "eq")
    sol = solve_lp(m)
    assert sol.dual(h) == pytest.approx(1.5, abs=1e-8)


def test_status_infeasible_and_unbounded():
    m = LpModel()
    x = m.add_variable("x", upper=1.0)
    m.add_row({x: 1.0}, ">=", 2.0, "r")
    assert solve_lp(m).status is LpStatus.INFEASIBLE
    m = LpModel()
    x = m.add_variable("x", lower=-math.inf, cost=1.0)
    m.add_row({x: 1.0}, "<=", 0.0, "r")
    assert solve_lp(m).status is LpStatus.UNBOUNDED


def test_tags_and_unknown_variables():
    m, _, _ = small_model()
    with pytest.raises(DuplicateTag):
        m.add_row({0: 1.0}, "<=", 1.0, "cap")
    with pytest.raises(UnknownVariable):
        m.add_row({5: 1.0}, "<=", 1.0, "bad")
    with pytest.raises(ValueError):
        m.add_variable("z", lower=2.0, upper=1.0)


def test_remove_rows_frees_tag():
    m, lo, up = small_model()
    m.remove_rows([up])
    assert not m.is_active(up) and m.n_rows == 1
    sol = solve_lp(m)
    assert sol.objective == pytest.approx(3.0, abs=1e-7)
    m.add_row({0: 1.0}, "<=", 1.0, "cap")


def test_update_rows_and_copy_isolation():
    m = LpModel()
    xs = m.add_variables(["a", "b", "c"], upper=5.0, cost=-1.0)
    handles = m.add_rows(sp.identity(3, format="csr"), "<=", [1.0, 2.0, 3.0],
                         ["r0", "r1", "r2"])
    snapshot = m.copy()
    m.update_rows(handles[[2, 0]], sp.csr_matrix([[0, 0, 2.0], [1.0, 0, 0]]), [1.0, 4.0])
    A, sense, rhs, h, tags = m.rows()
    np.testing.assert_allclose(A.toarray(), np.diag([1.0, 1.0, 2.0]))
    np.testing.assert_allclose(rhs, [4.0, 2.0, 1.0])
    assert tags == ["r0", "r1", "r2"]
    np.testing.assert_allclose(solve_lp(m).x, [4.0, 2.0, 0.5], atol=1e-7)
    # the copy still sees the old rows
    np.testing.assert_allclose(snapshot.rows()[2], [1.0, 2.0, 3.0])
    # whole-block replacement
    m.update_rows(handles, sp.identity(3) * 2.0, 2.0)
    np.testing.assert_allclose(solve_lp(m).x, [1.0, 1.0, 1.0], atol=1e-7)
    m.remove_rows([handles[1]])
    with pytest.raises(KeyError):
        m.update_rows([handles[1]], sp.csr_matrix([[0, 1.0, 0]]), 1.0)
    assert xs.size == 3


def test_lp_format_mentions_everything():
    m, _, _ = small_model()
    text = to_lp_format(m)
    assert "Minimize" in text and "demand:" in text and "cap:" in text
    assert "0.0 <= x <= 10.0" in text


@st.composite
def random_lp(draw):
    n = draw(st.integers(2, 6))
    k = draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(k, n)).round(3)
    x0 = rng.uniform(0, 1, n)  # keeps the model feasible
    senses = rng.choice(["<=", ">=", "="], size=k, p=[0.45, 0.45, 0.1])
    slack = rng.uniform(0, 1, k)
    rhs = A @ x0 + np.where(senses == "<=", slack, np.where(senses == ">=", -slack, 0.0))
    c = rng.normal(size=n).round(3)
    return A, senses, rhs, c


@settings(max_examples=60, deadline=None)
@given(random_lp())
def test_kkt_and_backend_agreement(data):
    A, senses, rhs, c = data
    m = LpModel()
    m.add_variables([f"x{j}" for j in range(len(c))], lower=0.0, upper=2.0, cost=c)
    m.add_rows(sp.csr_matrix(A), list(senses), rhs, [f"r{i}" for i in range(len(rhs))])
    sols = [b.solve(m) for b in (HighsBackend(solver="simplex"), LinprogBackend())]
    for sol in sols:
        assert sol.optimal
        res = kkt_residuals(m, sol)
        assert res["primal"] <= 1e-7
        assert res["dual"] <= 1e-7
        assert res["complementarity"] <= 1e-6
    assert sols[0].objective == pytest.approx(sols[1].objective, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(random_lp())
def test_ipm_objective_matches_simplex(data):
    A, senses, rhs, c = data
    m = LpModel()
    m.add_variables([f"x{j}" for j in range(len(c))], lower=0.0, upper=2.0, cost=c)
    m.add_rows(sp.csr_matrix(A), list(senses), rhs, [f"r{i}" for i in range(len(rhs))])
    a = HighsBackend().solve(m)
    b = HighsBackend(solver="simplex").solve(m)
    assert a.objective == pytest.approx(b.objective, abs=1e-5)
