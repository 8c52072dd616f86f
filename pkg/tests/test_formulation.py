import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slpopf.formulation import (
    Mode,
    Thermal,
    btn_depths,
    build_skeleton,
    current_coefficients,
    dc_opf,
    lifted_cost_rows,
)
from slpopf.lp_core import HighsBackend, LpModel, solve_lp

from conftest import network


def complex_currents(net, v, theta):
    """Squared branch-end currents from the pi-model, independent of the w form."""
    a = net.arrays
    vc = v * np.exp(1j * theta)
    out_f, out_t = np.empty(net.n_branch), np.empty(net.n_branch)
    for l, br in enumerate(net.branches):
        t = br.tau * np.exp(1j * br.theta_shift)
        y, ysh = br.y_series, 0.5j * br.b_ch
        vf, vt = vc[a.f[l]], vc[a.t[l]]
        out_f[l] = abs((y + ysh) / abs(t) ** 2 * vf - y / np.conj(t) * vt) ** 2
        out_t[l] = abs(-y / t * vf + (y + ysh) * vt) ** 2
    return out_f, out_t


@pytest.mark.parametrize("name", ["case9", "case30", "case57", "case118", "case300"])
def test_current_coefficients_match_complex_current(name):
    net = network(name)
    a = net.arrays
    fwd, rev = current_coefficients(net)
    rng = np.random.default_rng(7)
    for _ in range(20):
        v = rng.uniform(a.vmin, a.vmax)
        th = rng.uniform(-0.5, 0.5, net.n_bus)
        d = th[a.f] - th[a.t]
        w = v * v
        wr = v[a.f] * v[a.t] * np.cos(d)
        wi = v[a.f] * v[a.t] * np.sin(d)
        lf = fwd[:, 0] * w[a.f] + fwd[:, 1] * w[a.t] + fwd[:, 2] * wr + fwd[:, 3] * wi
        lt = rev[:, 0] * w[a.f] + rev[:, 1] * w[a.t] + rev[:, 2] * wr + rev[:, 3] * wi
        cf, ct = complex_currents(net, v, th)
        np.testing.assert_allclose(lf, cf, rtol=0, atol=1e-9 * max(1.0, cf.max()))
        np.testing.assert_allclose(lt, ct, rtol=0, atol=1e-9 * max(1.0, ct.max()))


def test_btn_depths_meet_accuracy():
    inner, outer = btn_depths(1e-5)
    assert 1 / math.cos(math.pi / 2 ** (inner + 1)) - 1 <= 1e-5 / 4
    assert 1 / math.cos(math.pi / 2 ** (outer + 1)) - 1 <= 1e-8 / 4
    assert btn_depths(1e-3)[0] < inner


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=5),
       st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5))
def test_lifted_cost_accuracy(c2, frac):
    """Minimising the lifted cost at a fixed dispatch recovers sum c2 p^2."""

    class Arr:
        pass

    n = len(c2)
    a = Arr()
    a.c2 = np.array(c2)
    a.pmin = np.zeros(n)
    a.pmax = np.ones(n)

    class Net:
        arrays = a

    p_fixed = 0.1 + 0.9 * np.array(frac[:n])  # keeps P above the accuracy floor
    m = LpModel()
    pg = m.add_variables([f"pg{g}" for g in range(n)], p_fixed, p_fixed)
    lift = lifted_cost_rows(m, Net, pg, 1e-5)
    # simplex, so that the check sees the construction and not the IPM tolerance
    sol = solve_lp(m, HighsBackend(solver="simplex"))
    exact = float(np.sum(a.c2 * p_fixed**2))
    assert sol.optimal
    assert abs(sol.objective - exact) <= 1e-5 * exact + 1e-9
    assert lift.n_pairs == (n + 1) // 2


@pytest.mark.parametrize("mode", list(Mode))
def test_skeleton_layout(mode):
    net = network("case9")
    sk = build_skeleton(net, mode)
    vm = sk.vars
    assert len(sk.nodal_p) == net.n_bus == len(sk.nodal_q)
    assert sk.row_counts["flow"] == 4 * net.n_branch
    assert (vm.theta is None) == (mode is not Mode.MESHED)
    assert (vm.r is None) == (mode is Mode.SOCP_RELAX)


def test_current_thermal_rows_added():
    net = network("case9")
    sk = build_skeleton(net, Mode.MESHED, Thermal.CURRENT)
    assert sk.row_counts["current"] == 2 * sum(br.s_max > 0 for br in net.branches)


@pytest.mark.parametrize("name", ["case9", "case30", "case118"])
def test_dc_opf_balance(name):
    net = network(name)
    a = net.arrays
    dc = dc_opf(net)
    assert dc.pg.sum() == pytest.approx(a.pd.sum() + a.gsh.sum(), abs=1e-6)
    assert dc.theta[net.ref_bus] == 0.0
    rated = a.smax > 0
    assert np.all(np.abs(dc.flows[rated]) <= a.smax[rated] + 1e-7)
