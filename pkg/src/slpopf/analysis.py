"""Independent checks of solutions, angle recovery, gaps and nodal prices.

Nothing here trusts LP row activities.  :func:`verify` rebuilds complex
voltages from the ``w`` variables and recomputes every flow with the pi-model
admittances, so a bug in the linear flow rows cannot hide behind itself.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .network import Network, polar_flows

__all__ = [
    "NotRadial",
    "MissingDuals",
    "FeasibilityReport",
    "PricingReport",
    "Oracle",
    "verify",
    "recover_angles",
    "voltages_from_w",
    "optimality_gap",
    "extract_prices",
    "load_oracle",
    "bundled_oracle_path",
]


class NotRadial(ValueError):
    pass


class MissingDuals(ValueError):
    pass


@dataclass(frozen=True)
class FeasibilityReport:
    mean_F: float
    max_F: float
    mean_H: float
    max_H: float
    max_G: float
    mean_FH: float
    max_p_mismatch: float
    max_q_mismatch: float
    worst_loading: float
    passed: bool
    violations: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["violations"] = list(self.violations)
        return d


def recover_angles(net: Network, wr: np.ndarray, wi: np.ndarray) -> np.ndarray:
    """Bus angles of a radial network from the branch products.

    Walks the tree from the reference bus, using ``theta_f - theta_t =
    atan2(wi, wr)`` on every branch.
    """
    if not net.is_radial:
        raise NotRadial(f"{net.name} has cycles; angles are not determined by a tree walk")
    a = net.arrays
    theta = np.full(net.n_bus, np.nan)
    theta[net.ref_bus] = 0.0
    queue = deque([net.ref_bus])
    while queue:
        i = queue.popleft()
        for l in net.branches_at_bus[i]:
            d = math.atan2(wi[l], wr[l])
            if a.f[l] == i and np.isnan(theta[a.t[l]]):
                theta[a.t[l]] = theta[i] - d
                queue.append(a.t[l])
            elif a.t[l] == i and np.isnan(theta[a.f[l]]):
                theta[a.f[l]] = theta[i] + d
                queue.append(a.f[l])
    return theta


def voltages_from_w(net: Network, w: np.ndarray, wr: np.ndarray, wi: np.ndarray,
                    theta: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Polar voltages implied by a ``w`` point (angles via tree walk if not given)."""
    v = np.sqrt(np.asarray(w, dtype=float))
    if theta is None:
        theta = recover_angles(net, wr, wi)
    return v, np.asarray(theta, dtype=float)


def verify(net: Network, primal: Any, eps: float = 1e-5, eps_th: float = 1e-3,
           mismatch_tol: float = 1e-4) -> FeasibilityReport:
    """Recompute residuals and nodal balances of a solution from scratch.

    ``primal`` needs ``w``, ``wr``, ``wi``, ``pg``, ``qg`` and optionally
    ``theta`` (attributes or mapping keys).  Flows come from the complex
    pi-model at ``v = sqrt(w)`` and the supplied or recovered angles.
    """
    get = (lambda k: primal.get(k)) if isinstance(primal, Mapping) else \
        (lambda k: getattr(primal, k, None))
    a = net.arrays
    w = np.asarray(get("w"), dtype=float)
    wr = np.asarray(get("wr"), dtype=float)
    wi = np.asarray(get("wi"), dtype=float)
    pg = np.asarray(get("pg"), dtype=float)
    qg = np.asarray(get("qg"), dtype=float)
    theta = get("theta")
    theta = None if theta is None else np.asarray(theta, dtype=float)

    F = np.array([w[a.f[l]] - (wr[l] ** 2 + wi[l] ** 2) / w[a.t[l]] for l in range(net.n_branch)])
    if theta is None:
        H = np.zeros(0)
        theta = recover_angles(net, wr, wi) if net.is_radial else np.zeros(net.n_bus)
    else:
        H = np.array([theta[a.f[l]] - theta[a.t[l]] - math.atan2(wi[l], wr[l])
                      for l in range(net.n_branch)])
    v = np.sqrt(w)
    pf, qf, pt, qt = polar_flows(net, v, theta)
    loading = []
    G = []
    for l, br in enumerate(net.branches):
        if br.s_max > 0:
            for p, q in ((pf[l], qf[l]), (pt[l], qt[l])):
                G.append(p * p + q * q - br.s_max**2)
                loading.append(math.hypot(p, q) / br.s_max)
    G = np.array(G)

    p_inj = np.zeros(net.n_bus)
    q_inj = np.zeros(net.n_bus)
    np.add.at(p_inj, a.gen_bus, pg)
    np.add.at(q_inj, a.gen_bus, qg)
    p_out = a.pd + a.gsh * v**2
    q_out = a.qd - a.bsh * v**2
    np.add.at(p_out, a.f, pf)
    np.add.at(p_out, a.t, pt)
    np.add.at(q_out, a.f, qf)
    np.add.at(q_out, a.t, qt)
    dp = np.abs(p_inj - p_out)
    dq = np.abs(q_inj - q_out)

    FH = np.concatenate([F, H])
    max_F = float(np.max(np.abs(F))) if F.size else 0.0
    max_H = float(np.max(np.abs(H))) if H.size else 0.0
    max_G = float(np.max(G)) if G.size else -math.inf
    violations = []
    if max_F > eps:
        violations.append(f"cone residual {max_F:.3e} > {eps:g}")
    if max_H > eps:
        violations.append(f"angle residual {max_H:.3e} > {eps:g}")
    if G.size and max_G > eps_th:
        violations.append(f"thermal residual {max_G:.3e} > {eps_th:g}")
    if dp.max(initial=0) > mismatch_tol:
        violations.append(f"active mismatch {dp.max():.3e} pu at bus {int(dp.argmax())}")
    if dq.max(initial=0) > mismatch_tol:
        violations.append(f"reactive mismatch {dq.max():.3e} pu at bus {int(dq.argmax())}")
    for name, val, lo, hi in (("v", v, a.vmin, a.vmax), ("pg", pg, a.pmin, a.pmax),
                              ("qg", qg, a.qmin, a.qmax)):
        over = np.maximum(lo - val, val - hi)
        if over.size and over.max() > mismatch_tol:
            violations.append(f"{name} bound violated by {over.max():.3e} at index {int(over.argmax())}")
    return FeasibilityReport(
        mean_F=float(np.mean(np.abs(F))) if F.size else 0.0,
        max_F=max_F,
        mean_H=float(np.mean(np.abs(H))) if H.size else 0.0,
        max_H=max_H,
        max_G=float(max_G) if G.size else 0.0,
        mean_FH=float(np.mean(np.abs(FH))) if FH.size else 0.0,
        max_p_mismatch=float(dp.max(initial=0.0)),
        max_q_mismatch=float(dq.max(initial=0.0)),
        worst_loading=float(max(loading)) if loading else 0.0,
        passed=not violations,
        violations=tuple(violations),
    )


def optimality_gap(p_ref: float, p_slp: float) -> float:
    """Signed relative gap in percent; negative when the SLP value is lower."""
    if p_ref == 0:
        raise ZeroDivisionError("reference objective is zero")
    return (p_ref - p_slp) / p_ref * 100.0


@dataclass(frozen=True)
class PricingReport:
    lmp: np.ndarray  # $/MWh
    qlmp: np.ndarray  # $/MVArh
    units: dict[str, str] = field(default_factory=lambda: {"lmp": "$/MWh", "qlmp": "$/MVArh"})
    degenerate: tuple[int, ...] = ()


def extract_prices(base_mva: float | Network, duals: Mapping[str, np.ndarray] | None) -> PricingReport:
    """Nodal prices from the balance-row duals of the final LP.

    Balance rows are in per unit with costs in $/h, so a dual is $/h per pu
    and dividing by the base gives $/MWh (or $/MVArh).
    """
    base = base_mva.base_mva if isinstance(base_mva, Network) else float(base_mva)
    if not duals or duals.get("nodal_p") is None or duals.get("nodal_q") is None:
        raise MissingDuals("no nodal balance duals available")
    lmp = np.asarray(duals["nodal_p"], dtype=float) / base
    qlmp = np.asarray(duals["nodal_q"], dtype=float) / base
    return PricingReport(lmp, qlmp)


@dataclass(frozen=True)
class Oracle:
    case: str
    objective: float
    lmp: np.ndarray
    qlmp: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    source_solver: str
    tolerance: float
    extra: dict[str, Any] = field(default_factory=dict)


def bundled_oracle_path(name: str) -> Path:
    return Path(str(resources.files("slpopf") / "data" / "oracles" / f"{name}.json"))


def load_oracle(path_or_name: str | Path) -> Oracle:
    p = Path(path_or_name)
    if not p.exists():
        p = bundled_oracle_path(str(path_or_name))
    data = json.loads(p.read_text())
    known = {"case", "objective", "lmp", "qlmp", "v", "theta", "source-solver", "tolerance"}
    return Oracle(
        case=data["case"],
        objective=float(data["objective"]),
        lmp=np.asarray(data.get("lmp") or [], dtype=float),
        qlmp=np.asarray(data.get("qlmp") or [], dtype=float),
        v=np.asarray(data.get("v") or [], dtype=float),
        theta=np.asarray(data.get("theta") or [], dtype=float),
        source_solver=data.get("source-solver", ""),
        tolerance=float(data.get("tolerance", 0.0)),
        extra={k: v for k, v in data.items() if k not in known},
    )
