"""Regenerate the committed reference fixtures in ``src/slpopf/data/oracles``.

Two independent references, neither of which shares code with the SLP
formulation:

* ``<case>.json``: local NLP optimum from PYPOWER's interior point OPF on the
  polar formulation (objective, LMP, Q-LMP, voltages).  Unset angle-difference
  limits are replaced by the same bound the network model uses, so both solve
  the same problem.
* ``<case>-socp.json``: optimum of the SOCP relaxation written directly in
  cvxpy from complex branch admittances and solved with Clarabel.

Run ``python3 tools/make_oracles.py`` after installing the ``oracles`` extra.
The script is deterministic; fixtures only change if the case data does.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from slpopf.case_io import BRANCH_COLUMNS as BRC, load_case
from slpopf.network import build_network

OUT = Path(__file__).resolve().parents[1] / "src" / "slpopf" / "data" / "oracles"
NLP_CASES = ["case5", "case6ww", "case9", "case14", "case24_ieee_rts", "case30", "case39",
             "case57", "case118", "case300", "case33bw", "case69"]
# Clarabel only reaches "optimal_inaccurate" on case69 (tiny impedances)
SOCP_CASES = [c for c in NLP_CASES if c != "case69"]
NLP_TOL = 1e-10


def _dump(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {path.name}: objective {data['objective']:.6f}")


def nlp_oracle(name: str) -> dict:
    from pypower.api import ppoption, runopf
    import pypower

    raw = load_case(name)
    net = build_network(raw)
    branch = raw.branch.copy()
    for br in net.branches:
        branch[br.idx, BRC["ANGMIN"] - 1] = math.degrees(br.theta_min)
        branch[br.idx, BRC["ANGMAX"] - 1] = math.degrees(br.theta_max)
    rate = BRC["RATE_A"] - 1
    if not np.any(branch[raw.branch_in_service, rate] > 0):
        # PYPOWER's interior point code mishandles an empty set of flow limits
        # under recent numpy; a limit no flow can reach avoids that path
        branch[np.flatnonzero(raw.branch_in_service)[0], rate] = 1e5
    ppc = {"version": "2", "baseMVA": raw.base_mva, "bus": raw.bus.copy(),
           "gen": raw.gen.copy(), "branch": branch, "gencost": raw.gencost.copy()}
    opt = ppoption(VERBOSE=0, OUT_ALL=0, PDIPM_GRADTOL=NLP_TOL, PDIPM_COMPTOL=NLP_TOL,
                   PDIPM_COSTTOL=NLP_TOL, PDIPM_FEASTOL=NLP_TOL, PDIPM_MAX_IT=500)
    res = runopf(ppc, opt)
    if not res["success"]:
        raise RuntimeError(f"PYPOWER did not converge on {name}")
    # PYPOWER reports f = 0 for purely linear costs, so evaluate the polynomial
    # at its dispatch instead
    on = res["gen"][:, 7] > 0
    objective = 0.0
    for row, p in zip(res["gencost"][on], res["gen"][on, 1]):
        objective += float(np.polyval(row[4:4 + int(row[3])], p))
    if res["f"] and abs(objective - res["f"]) > 1e-6 * abs(objective):
        raise RuntimeError(f"cost mismatch on {name}: {objective} vs {res['f']}")
    bus = res["bus"]
    keep = raw.bus_in_service
    va = np.radians(bus[keep, 8])
    va -= va[net.ref_bus]
    return {
        "case": net.name,
        "objective": objective,
        "lmp": bus[keep, 13].tolist(),
        "qlmp": bus[keep, 14].tolist(),
        "v": bus[keep, 7].tolist(),
        "theta": va.tolist(),
        "source-solver": f"PYPOWER {getattr(pypower, '__version__', '')} runopf (PIPS)".replace("  ", " "),
        "tolerance": NLP_TOL,
    }


def socp_oracle(name: str) -> dict:
    import cvxpy as cp

    raw = load_case(name)
    net = build_network(raw)
    base = net.base_mva
    nb, nl, ng = net.n_bus, net.n_branch, net.n_gen
    w = cp.Variable(nb)
    wr = cp.Variable(nl)
    wi = cp.Variable(nl)
    pg = cp.Variable(ng)
    qg = cp.Variable(ng)
    cons = []
    p_out = [0] * nb
    q_out = [0] * nb
    vmin = np.array([b.v_min for b in net.buses])
    vmax = np.array([b.v_max for b in net.buses])
    cons += [w >= vmin**2, w <= vmax**2]
    for l, br in enumerate(net.branches):
        f, t = br.from_bus, br.to_bus
        # pi model: I_f = Yff V_f + Yft V_t, I_t = Ytf V_f + Ytt V_t
        tap = br.tau * np.exp(1j * br.theta_shift)
        y = br.y_series
        ysh = 1j * br.b_ch / 2
        yff = (y + ysh) / (tap * np.conj(tap))
        yft = -y / np.conj(tap)
        ytf = -y / tap
        ytt = y + ysh
        # S_f = conj(Yff) w_f + conj(Yft) W,  S_t = conj(Ytt) w_t + conj(Ytf) conj(W)
        # with W = V_f conj(V_t) = wr + j wi
        a, b = np.conj(yff), np.conj(yft)
        x, y_ = wr[l], wi[l]
        pf = a.real * w[f] + b.real * x - b.imag * y_
        qf = a.imag * w[f] + b.imag * x + b.real * y_
        c, d = np.conj(ytt), np.conj(ytf)
        pt = c.real * w[t] + d.real * x + d.imag * y_
        qt = c.imag * w[t] + d.imag * x - d.real * y_
        p_out[f] = p_out[f] + pf
        p_out[t] = p_out[t] + pt
        q_out[f] = q_out[f] + qf
        q_out[t] = q_out[t] + qt
        cons.append(cp.quad_over_lin(cp.hstack([wr[l], wi[l]]), w[t]) <= w[f])
        lo, hi = br.theta_min, br.theta_max
        cons += [wi[l] <= math.tan(hi) * wr[l], wi[l] >= math.tan(lo) * wr[l]]
        # boxes implied by voltage and angle limits, as in the network model
        vlo, vhi = vmin[f] * vmin[t], vmax[f] * vmax[t]
        cmin = min(math.cos(lo), math.cos(hi))
        cmax = 1.0 if lo <= 0 <= hi else max(math.cos(lo), math.cos(hi))
        cons += [wr[l] >= (vlo if cmin >= 0 else vhi) * cmin, wr[l] <= vhi * cmax]
        cons += [wi[l] >= min(vhi * math.sin(lo), vlo * math.sin(lo)),
                 wi[l] <= max(vhi * math.sin(hi), vlo * math.sin(hi))]
        if br.s_max > 0:
            cons += [cp.norm(cp.hstack([pf, qf])) <= br.s_max,
                     cp.norm(cp.hstack([pt, qt])) <= br.s_max]
    gen_at = [[] for _ in range(nb)]
    for g, gen in enumerate(net.generators):
        gen_at[gen.bus].append(g)
    for i, bus in enumerate(net.buses):
        inj_p = sum(pg[g] for g in gen_at[i]) if gen_at[i] else 0
        inj_q = sum(qg[g] for g in gen_at[i]) if gen_at[i] else 0
        cons.append(inj_p == bus.p_d + bus.g_sh * w[i] + p_out[i])
        cons.append(inj_q == bus.q_d - bus.b_sh * w[i] + q_out[i])
    cons += [pg >= [g.p_min for g in net.generators], pg <= [g.p_max for g in net.generators],
             qg >= [g.q_min for g in net.generators], qg <= [g.q_max for g in net.generators]]
    # polynomial gencost rows are in MW: ... + c2 MW^2 + c1 MW + c0
    c2, c1, c0 = np.zeros(ng), np.zeros(ng), np.zeros(ng)
    for g, row in enumerate(raw.gencost[list(net.source_gen_rows)]):
        coeffs = row[4:4 + int(row[3])][::-1]
        for k, arr in enumerate((c0, c1, c2)):
            arr[g] = coeffs[k] if k < coeffs.size else 0.0
    cost = cp.sum(cp.multiply(c2 * base**2, cp.square(pg))) + (c1 * base) @ pg + c0.sum()
    prob = cp.Problem(cp.Minimize(cost), cons)
    tol = 1e-9
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol)
    if prob.status != cp.OPTIMAL:
        tol = 1e-8  # Clarabel defaults
        prob.solve(solver=cp.CLARABEL)
    if prob.status != cp.OPTIMAL:
        raise RuntimeError(f"SOCP oracle status {prob.status} on {name}")
    return {
        "case": net.name,
        "objective": float(prob.value),
        "lmp": [], "qlmp": [],
        "v": np.sqrt(np.maximum(w.value, 0)).tolist(),
        "theta": [],
        "source-solver": f"cvxpy {cp.__version__} + Clarabel (SOCP relaxation)",
        "tolerance": tol,
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", nargs="*", help="restrict to these cases")
    ap.add_argument("--skip-nlp", action="store_true")
    ap.add_argument("--skip-socp", action="store_true")
    args = ap.parse_args(argv)
    OUT.mkdir(parents=True, exist_ok=True)
    if not args.skip_nlp:
        for name in NLP_CASES:
            if not args.only or name in args.only:
                _dump(OUT / f"{name}.json", nlp_oracle(name))
    if not args.skip_socp:
        for name in SOCP_CASES:
            if not args.only or name in args.only:
                _dump(OUT / f"{name}-socp.json", socp_oracle(name))
    return 0


if __name__ == "__main__":
    sys.exit(main())
