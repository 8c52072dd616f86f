import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slpopf.cuts import (
    CutKind,
    DegenerateFlow,
    DomainError,
    atan2_taylor,
    atan2_taylor_rows,
    project_to_disk,
    qol_value_grad,
    soc_halfspace,
    soc_hyperplane,
    soc_rows,
    thermal_halfspace,
    thermal_rows,
)

pos = st.floats(0.5, 1.5)
sym = st.floats(-1.5, 1.5)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@settings(max_examples=200, deadline=None)
@given(sym, sym, pos)
def test_qol_gradient_matches_finite_difference(wr, wi, wj):
    _, g = qol_value_grad(wr, wi, wj)
    fd = central_diff(lambda x: (x[0] ** 2 + x[1] ** 2) / x[2], np.array([wr, wi, wj]))
    np.testing.assert_allclose(g, fd, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.2, 1.5), sym)
def test_atan2_gradient_matches_finite_difference(wr, wi):
    _, d_wi, d_wr = atan2_taylor(wi, wr)
    fd = central_diff(lambda x: math.atan2(x[1], x[0]), np.array([wr, wi]))
    assert float(d_wr) == pytest.approx(fd[0], abs=1e-6)
    assert float(d_wi) == pytest.approx(fd[1], abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(sym, sym, pos)
def test_linearisation_is_exact_at_anchor(wr, wi, wj):
    a_wr, a_wi, a_wj = soc_rows(wr, wi, wj)
    assert a_wr * wr + a_wi * wi + a_wj * wj == pytest.approx((wr**2 + wi**2) / wj, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(sym, sym, pos)
def test_hyperplane_touches_at_anchor(wr, wi, wj):
    f = (wr**2 + wi**2) / wj
    cut = soc_hyperplane(wr, wi, wj)
    assert cut.kind is CutKind.SOC_HYPERPLANE
    assert cut.evaluate({"wr": wr, "wi": wi, "w_j": wj, "w_i": f, "r": 0.0}) == \
        pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(sym, sym, pos, st.integers(0, 2**31 - 1))
def test_soc_halfspace_never_cuts_epigraph(wr0, wi0, wj0, seed):
    cut = soc_halfspace(wr0, wi0, wj0)
    rng = np.random.default_rng(seed)
    wr, wi = rng.uniform(-2, 2, (2, 200))
    wj = rng.uniform(1e-3, 2, 200)
    wi_ = (wr**2 + wi**2) / wj + rng.exponential(0.1, 200)
    for p in zip(wr, wi, wj, wi_):
        assert cut.satisfied(dict(zip(("wr", "wi", "w_j", "w_i"), p)), tol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 2), st.integers(0, 2**31 - 1))
def test_thermal_halfspace_never_cuts_disk(p0, q0, s, seed):
    if math.hypot(p0, q0) < 1e-6:
        return
    cut = thermal_halfspace(p0, q0, s)
    up, uq, rhs = thermal_rows(p0, q0, s)
    rng = np.random.default_rng(seed)
    r = s * np.sqrt(rng.uniform(0, 1, 200))
    t = rng.uniform(0, 2 * math.pi, 200)
    for p, q in zip(r * np.cos(t), r * np.sin(t)):
        assert cut.satisfied({"p": p, "q": q}, tol=1e-9)
        assert up * p + uq * q <= rhs + 1e-12


def test_thermal_cut_excludes_outside_anchor():
    cut = thermal_halfspace(3.0, 4.0, 1.0)
    assert not cut.satisfied({"p": 3.0, "q": 4.0})
    assert project_to_disk(3.0, 4.0, 1.0) == pytest.approx((0.6, 0.8))


def test_atan2_pair_contains_exact_value():
    wr0, wi0 = 0.9, 0.2
    cut = atan2_taylor_rows(wr0, wi0)
    d = math.atan2(wi0, wr0)
    assert cut.satisfied({"theta_i": d, "theta_j": 0.0, "wi": wi0, "wr": wr0, "r": 0.0},
                         tol=1e-12)
    assert not cut.satisfied({"theta_i": d + 0.1, "theta_j": 0.0, "wi": wi0, "wr": wr0,
                              "r": 0.05})


def test_domain_errors():
    with pytest.raises(DomainError):
        qol_value_grad(1.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        soc_rows([1.0], [0.0], [-1.0])
    with pytest.raises(DomainError):
        atan2_taylor(0.0, 0.0)
    with pytest.raises(DegenerateFlow):
        project_to_disk(0.0, 0.0, 1.0)
