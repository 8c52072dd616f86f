"""Sequential LP drivers for the relaxation, radial and meshed problems.

All three drivers share one loop: copy the static skeleton once, then at each
iteration swap in the rows that are anchored at the previous iterate, append
the accumulated cuts, solve, and evaluate the residuals on the new iterate.
The loop always solves at least one LP: a starting point is not a dispatch,
so its residuals say nothing about optimality.
"""

from __future__ import annotations

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from scipy.optimize import brentq

from .cuts import atan2_taylor, soc_rows, thermal_rows
from .formulation import (
    DcInfeasible,
    Mode,
    RowBuilder,
    StaticSkeleton,
    Thermal,
    build_skeleton,
    dc_opf,
)
from .lp_core import (ArraySolution, HighsBackend, LpBackend, LpModel, LpSolution, LpStatus,
                      _highs_status, solve_lp)
from .network import Network

__all__ = [
    "StartKind",
    "Start",
    "SlpParams",
    "Status",
    "SolveReport",
    "Iterate",
    "residuals",
    "starting_point",
    "initial_iterate",
    "penalty_update",
    "default_rho0",
    "run_algorithm1",
    "run_algorithm2",
    "run_algorithm3",
    "solve",
    "AppendixCResult",
    "solve_appendix_c",
    "project_to_ellipse",
    "IterationLimit",
]

log = logging.getLogger(__name__)


class IterationLimit(RuntimeError):
    pass


class StartKind(str, Enum):
    FS1 = "fs1"
    FS2 = "fs2"
    FS3 = "fs3"
    DC = "dc"
    RANDOM = "random"
    GIVEN = "given"


@dataclass(frozen=True)
class Start:
    kind: StartKind = StartKind.FS1
    seed: int | None = None
    v: tuple[float, ...] | None = None
    theta: tuple[float, ...] | None = None

    @classmethod
    def parse(cls, text: str, seed: int | None = None) -> "Start":
        return cls(StartKind(text.lower()), seed)

    @classmethod
    def given(cls, v, theta) -> "Start":
        return cls(StartKind.GIVEN, None, tuple(map(float, v)), tuple(map(float, theta)))

    def label(self) -> str:
        if self.kind is StartKind.RANDOM:
            return f"random({self.seed})"
        return self.kind.value


@dataclass(frozen=True)
class SlpParams:
    eps: float = 1e-5
    eps_th: float = 1e-3
    zeta: float = 0.9
    rho0: float | None = None  # None: 10 * max(c2, c1) over generators
    gamma: float = 5.0
    rho_max_factor: float | None = None  # None: gamma**4
    kmax: int = 50
    start: Start = field(default_factory=Start)
    thermal: Thermal = Thermal.MVA
    prune: bool = False
    prune_window: int = 3
    prune_slack: float = 1e-6
    cost_accuracy: float = 1e-5

    def __post_init__(self):
        for name in ("eps", "eps_th"):
            v = getattr(self, name)
            if not 1e-10 <= v <= 1e-3:
                raise ValueError(f"{name} must lie in [1e-10, 1e-3], got {v}")
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if self.rho0 is not None and not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if self.rho_max_factor is not None and not self.rho_max_factor > 1:
            raise ValueError("rho_max_factor must exceed 1")
        if self.kmax < 1:
            raise ValueError("kmax must be at least 1")
        object.__setattr__(self, "thermal", Thermal(self.thermal))

    def rho_bounds(self, net: Network) -> tuple[float, float]:
        rho0 = self.rho0 if self.rho0 is not None else default_rho0(net)
        factor = self.rho_max_factor if self.rho_max_factor is not None else self.gamma**4
        return rho0, rho0 * factor

    def to_dict(self) -> dict[str, Any]:
        return {
            "eps": self.eps, "eps_th": self.eps_th, "zeta": self.zeta, "rho0": self.rho0,
            "gamma": self.gamma, "rho_max_factor": self.rho_max_factor, "kmax": self.kmax,
            "start": self.start.label(), "thermal": self.thermal.value, "prune": self.prune,
            "cost_accuracy": self.cost_accuracy,
        }


def default_rho0(net: Network) -> float:
    a = net.arrays
    if net.n_gen == 0:
        return 1.0
    top = float(np.max(np.maximum(a.c2, a.c1)))
    return 10.0 * top if top > 0 else 10.0


class Status(str, Enum):
    CONVERGED = "Converged"
    ITERATION_LIMIT = "IterationLimit"
    LP_FAILURE = "LpFailure"


@dataclass
class Iterate:
    """Values of the physical variables at one point."""

    w: np.ndarray
    wr: np.ndarray
    wi: np.ndarray
    pf: np.ndarray
    qf: np.ndarray
    pt: np.ndarray
    qt: np.ndarray
    theta: np.ndarray | None = None
    pg: np.ndarray | None = None
    qg: np.ndarray | None = None
    r: np.ndarray | None = None

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = None if v is None else np.asarray(v).tolist()
        return out


def _flows(net: Network, w, wr, wi):
    a = net.arrays
    F, R = a.fwd, a.rev
    wf, wt = w[a.f], w[a.t]
    pf = F[:, 0] * wf - F[:, 2] * wr + F[:, 3] * wi
    qf = F[:, 1] * wf - F[:, 3] * wr - F[:, 2] * wi
    pt = R[:, 0] * wt - R[:, 2] * wr - R[:, 3] * wi
    qt = R[:, 1] * wt - R[:, 3] * wr + R[:, 2] * wi
    return pf, qf, pt, qt


def initial_iterate(net: Network, v: np.ndarray, theta: np.ndarray) -> Iterate:
    """Lift a polar start into the ``w`` variables and derive its flows."""
    a = net.arrays
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = theta[a.f] - theta[a.t]
    w = v * v
    wr = v[a.f] * v[a.t] * np.cos(d)
    wi = v[a.f] * v[a.t] * np.sin(d)
    pf, qf, pt, qt = _flows(net, w, wr, wi)
    return Iterate(w, wr, wi, pf, qf, pt, qt, theta.copy())


def starting_point(net: Network, start: Start,
                   backend: LpBackend | None = None) -> tuple[np.ndarray, np.ndarray, str]:
    """Voltages and angles for a start strategy, plus the strategy actually used."""
    a = net.arrays
    zeros = np.zeros(net.n_bus)
    kind = start.kind
    if kind is StartKind.FS1:
        return np.ones(net.n_bus), zeros, "fs1"
    if kind is StartKind.FS2:
        return a.vmin.copy(), zeros, "fs2"
    if kind is StartKind.FS3:
        return a.vmax.copy(), zeros, "fs3"
    if kind is StartKind.RANDOM:
        rng = np.random.default_rng(start.seed)
        return rng.uniform(a.vmin, a.vmax), zeros, start.label()
    if kind is StartKind.GIVEN:
        v = np.asarray(start.v, dtype=float)
        th = np.asarray(start.theta, dtype=float)
        if v.shape != (net.n_bus,) or th.shape != (net.n_bus,):
            raise ValueError("given start must have one value per bus")
        return v, th, "given"
    try:
        dc = dc_opf(net, backend)
    except DcInfeasible:
        log.info("DC OPF infeasible on %s, falling back to fs1", net.name)
        return np.ones(net.n_bus), zeros, "fs1"
    return np.ones(net.n_bus), dc.theta, "dc"


def residuals(net: Network, it: Iterate) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``F`` over branches, ``G`` over rated directed branches, ``H`` over branches.

    ``H`` is empty when the iterate carries no angles.
    """
    a = net.arrays
    F = it.w[a.f] - (it.wr**2 + it.wi**2) / it.w[a.t]
    rated = a.smax > 0
    s2 = a.smax[rated] ** 2
    G = np.concatenate([it.pf[rated] ** 2 + it.qf[rated] ** 2 - s2,
                        it.pt[rated] ** 2 + it.qt[rated] ** 2 - s2])
    if it.theta is None:
        H = np.zeros(0)
    else:
        H = it.theta[a.f] - it.theta[a.t] - np.arctan2(it.wi, it.wr)
    return F, G, H


def penalty_update(rho: np.ndarray, r: np.ndarray, params: SlpParams,
                   rho_max: float) -> np.ndarray:
    """Multiply ``rho`` by ``gamma`` where the slack is at least ``eps``, capped."""
    rho = np.asarray(rho, dtype=float)
    grow = np.asarray(r) >= params.eps
    return np.where(grow, np.minimum(rho_max, params.gamma * rho), rho)


def _stats(x: np.ndarray) -> tuple[float, float]:
    """Mean and max of ``|x|``."""
    if x.size == 0:
        return 0.0, 0.0
    return float(np.mean(np.abs(x))), float(np.max(np.abs(x)))


@dataclass
class SolveReport:
    status: Status
    algorithm: str
    case: str
    objective: float
    lp_objective: float
    iterations: int
    start: str
    mean_F: float
    max_F: float
    min_F: float
    max_G: float
    mean_H: float
    max_H: float
    mean_FH: float
    elapsed: float
    trace: list[dict[str, Any]]
    primal: Iterate | None
    duals: dict[str, np.ndarray] | None
    base_mva: float
    params: dict[str, Any]
    gap: float | None = None
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def to_dict(self) -> dict[str, Any]:
        from .analysis import extract_prices

        pricing = None
        if self.duals is not None:
            pr = extract_prices(self.base_mva, self.duals)
            pricing = {"lmp": pr.lmp.tolist(), "qlmp": pr.qlmp.tolist(), "units": pr.units}
        return {
            "meta": {"case": self.case, "algorithm": self.algorithm, "start": self.start,
                     "params": self.params, "base_mva": self.base_mva},
            "solution": {
                "status": self.status.value,
                "objective": self.objective,
                "lp_objective": self.lp_objective,
                "iterations": self.iterations,
                "gap_percent": self.gap,
                "residuals": {"mean_F": self.mean_F, "max_F": self.max_F, "min_F": self.min_F,
                              "max_G": self.max_G, "mean_H": self.mean_H, "max_H": self.max_H,
                              "mean_FH": self.mean_FH},
                "elapsed_s": self.elapsed,
                "message": self.message,
                "primal": None if self.primal is None else self.primal.to_dict(),
            },
            "pricing": pricing,
            "trace": self.trace,
        }


class _Driver:
    """Shared machinery of the three algorithms."""

    def __init__(self, net: Network, params: SlpParams, mode: Mode,
                 backend: LpBackend | None, skeleton: StaticSkeleton | None):
        self.net = net
        self.params = params
        self.mode = mode
        self.backend = backend or HighsBackend()
        sk = skeleton or build_skeleton(net, mode, params.thermal, params.cost_accuracy)
        if sk.mode is not mode:
            raise ValueError(f"skeleton built for {sk.mode.value}, driver needs {mode.value}")
        self.sk = sk
        self.model: LpModel = sk.model.copy()
        self.vm = sk.vars
        a = net.arrays
        self.rated = np.flatnonzero(a.smax > 0) if params.thermal is Thermal.MVA else \
            np.zeros(0, dtype=int)
        self.rho0, self.rho_max = params.rho_bounds(net)
        self.pruneable: dict[int, int] = {}  # handle -> consecutive slack count
        self.anchored: list[int] = []
        self.start_label = ""
        self.thermal_registry: dict[int, list[int]] = {}

    # -- cut rows ------------------------------------------------------------
    def soc_rows(self, branches: np.ndarray, anchor: Iterate, k: int, prefix: str,
                 hyperplane: bool, replace: np.ndarray | None = None) -> np.ndarray:
        if branches.size == 0:
            return np.zeros(0, dtype=int)
        a = self.net.arrays
        vm = self.vm
        a_wr, a_wi, a_wj = soc_rows(anchor.wr[branches], anchor.wi[branches],
                                    anchor.w[a.t[branches]])
        one = np.ones(branches.size)
        cols = [vm.wr[branches], vm.wi[branches], vm.w[a.t[branches]], vm.w[a.f[branches]]]
        vals = [a_wr, a_wi, a_wj, -one]
        if hyperplane:
            cols.append(vm.r[branches])
            vals.append(one)
        rows = RowBuilder(prefix)
        rows.add_block(np.column_stack(cols), np.column_stack(vals), "=" if hyperplane else "<=",
                       0.0, [f"{l}:{k}" for l in branches])
        return rows.commit(self.model) if replace is None else rows.replace(self.model, replace)

    def thermal_rows(self, it: Iterate, k: int) -> int:
        """Thermal cuts at ``it`` for every rated direction loaded above ``zeta``."""
        if self.rated.size == 0:
            return 0
        a = self.net.arrays
        vm = self.vm
        z = self.params.zeta
        rows = RowBuilder("cut-thermal")
        added = 0
        for side, (p, q, pv, qv) in enumerate(((it.pf, it.qf, vm.pf, vm.qf),
                                               (it.pt, it.qt, vm.pt, vm.qt))):
            sel = self.rated[p[self.rated] ** 2 + q[self.rated] ** 2 > (z * a.smax[self.rated]) ** 2]
            if sel.size == 0:
                continue
            up, uq, rhs = thermal_rows(p[sel], q[sel], a.smax[sel])
            rows.add_block(np.column_stack([pv[sel], qv[sel]]), np.column_stack([up, uq]), "<=",
                           rhs, [f"{l}{'ft'[side]}:{k}" for l in sel])
            for reg in sel + side * self.net.n_branch:
                self.thermal_registry.setdefault(int(reg), []).append(k)
            added += sel.size
        handles = rows.commit(self.model)
        if self.params.prune:
            self.pruneable.update({int(h): 0 for h in handles})
        return added

    def atan2_rows(self, anchor: Iterate, k: int, replace: np.ndarray | None = None) -> np.ndarray:
        a = self.net.arrays
        vm = self.vm
        h0, a_wi, a_wr = atan2_taylor(anchor.wi, anchor.wr)
        nl = self.net.n_branch
        one = np.ones(nl)
        rows = RowBuilder("cut-atan2")
        base_c = [vm.theta[a.f], vm.theta[a.t], vm.wi, vm.wr, vm.r]
        rows.add_block(np.column_stack(base_c), np.column_stack([one, -one, -a_wi, -a_wr, -one]),
                       "<=", h0, [f"{l}:{k}:hi" for l in range(nl)])
        rows.add_block(np.column_stack(base_c), np.column_stack([one, -one, -a_wi, -a_wr, one]),
                       ">=", h0, [f"{l}:{k}:lo" for l in range(nl)])
        return rows.commit(self.model) if replace is None else rows.replace(self.model, replace)

    def cost_tangents(self, x: np.ndarray, k: int) -> int:
        """Tangent cuts on ``alpha_n >= p_a^2 + p_b^2`` where the lift is too loose."""
        lift = self.vm.lift
        if lift.n_pairs == 0:
            return 0
        pa, pb = x[lift.pairs[:, 0]], x[lift.pairs[:, 1]]
        P = pa * pa + pb * pb
        alpha = x[lift.alpha]
        acc = self.params.cost_accuracy
        bad = np.flatnonzero(alpha < P - acc * np.maximum(P, 1e-3 * lift.scale))
        if bad.size == 0:
            return 0
        rows = RowBuilder("cost-tangent")
        rows.add_block(np.column_stack([lift.alpha[bad], lift.pairs[bad, 0], lift.pairs[bad, 1]]),
                       np.column_stack([np.ones(bad.size), -2 * pa[bad], -2 * pb[bad]]), ">=",
                       -P[bad], [f"{n}:{k}" for n in bad])
        rows.commit(self.model)
        return int(bad.size)

    # -- iterate bookkeeping ------------------------------------------------
    def extract(self, x: np.ndarray) -> Iterate:
        vm = self.vm
        return Iterate(
            w=x[vm.w], wr=x[vm.wr], wi=x[vm.wi], pf=x[vm.pf], qf=x[vm.qf], pt=x[vm.pt],
            qt=x[vm.qt], theta=None if vm.theta is None else x[vm.theta], pg=x[vm.pg],
            qg=x[vm.qg], r=None if vm.r is None else x[vm.r],
        )

    def true_cost(self, it: Iterate) -> float:
        a = self.net.arrays
        return float(np.sum(a.c2 * it.pg**2 + a.c1 * it.pg + a.c0))

    def prune(self, x: np.ndarray) -> int:
        """Drop halfspaces slack for ``prune_window`` consecutive solves."""
        if not self.pruneable:
            return 0
        A, sense, rhs, handles, _ = self.model.rows()
        pos = {int(h): i for i, h in enumerate(handles)}
        idx = np.array([pos[h] for h in self.pruneable if h in pos], dtype=int)
        slack = np.abs(A[idx] @ x - rhs[idx])
        drop = []
        for i, s in zip(idx, slack):
            h = int(handles[i])
            self.pruneable[h] = self.pruneable[h] + 1 if s > self.params.prune_slack else 0
            if self.pruneable[h] >= self.params.prune_window:
                drop.append(h)
        for h in drop:
            del self.pruneable[h]
        self.model.remove_rows(drop)
        return len(drop)

    def solve_lp(self) -> LpSolution:
        return solve_lp(self.model, self.backend)

    def trace_record(self, k, sol, F, G, H, added, rho, t0) -> dict[str, Any]:
        hist = Counter(np.round(rho / self.rho0, 6).tolist()) if rho is not None else {}
        return {
            "k": k,
            "objective": sol.objective if sol.optimal else None,
            "max_abs_F": float(np.max(np.abs(F))) if F.size else 0.0,
            "min_F": float(np.min(F)) if F.size else 0.0,
            "max_G": float(np.max(G)) if G.size else 0.0,
            "max_abs_H": float(np.max(np.abs(H))) if H.size else 0.0,
            "cuts_added": dict(added),
            "rho_histogram": {f"{key:g}x": int(v) for key, v in sorted(hist.items())},
            "lp_status": sol.status.value,
            "rows": self.model.n_rows,
            "wall_time_s": time.perf_counter() - t0,
        }

    def report(self, status, algorithm, it, sol_obj, k, F, G, H, trace, t0, duals, message=""):
        mean_F, max_F = _stats(F)
        mean_H, max_H = _stats(H)
        FH = np.concatenate([F, H])
        return SolveReport(
            status=status,
            algorithm=algorithm,
            case=self.net.name,
            objective=self.true_cost(it) if it is not None and it.pg is not None else math.nan,
            lp_objective=sol_obj,
            iterations=k,
            start=self.start_label,
            mean_F=mean_F,
            max_F=max_F,
            min_F=float(np.min(F)) if F.size else 0.0,
            max_G=float(np.max(G)) if G.size else 0.0,
            mean_H=mean_H,
            max_H=max_H,
            mean_FH=float(np.mean(np.abs(FH))) if FH.size else 0.0,
            elapsed=time.perf_counter() - t0,
            trace=trace,
            primal=it,
            duals=duals,
            base_mva=self.net.base_mva,
            params=self.params.to_dict(),
            message=message,
        )

    def duals(self, sol: LpSolution) -> dict[str, np.ndarray]:
        return {"nodal_p": sol.dual(self.sk.nodal_p), "nodal_q": sol.dual(self.sk.nodal_q)}

    def start(self) -> Iterate:
        v, th, label = starting_point(self.net, self.params.start, self.backend)
        self.start_label = label
        return initial_iterate(self.net, v, th)


def run_algorithm1(net: Network, params: SlpParams | None = None,
                   backend: LpBackend | None = None,
                   skeleton: StaticSkeleton | None = None) -> SolveReport:
    """Outer approximation of the SOCP relaxation by accumulated halfspaces."""
    params = params or SlpParams()
    t0 = time.perf_counter()
    drv = _Driver(net, params, Mode.SOCP_RELAX, backend, skeleton)
    prev = drv.start()
    all_branches = np.arange(net.n_branch)
    trace: list[dict[str, Any]] = []
    it, sol = None, None
    F = G = H = np.zeros(0)
    status = Status.ITERATION_LIMIT
    for k in range(1, params.kmax + 1):
        added = Counter()
        handles = drv.soc_rows(all_branches, prev, k - 1, "cut-soc", hyperplane=False)
        added["soc"] += len(handles)
        if params.prune:
            drv.pruneable.update({int(h): 0 for h in handles})
        sol = drv.solve_lp()
        if not sol.optimal:
            trace.append(drv.trace_record(k, sol, F, G, H, added, None, t0))
            return drv.report(Status.LP_FAILURE, "socp-relaxation", it, math.nan, k, F, G, H,
                              trace, t0, None, sol.message)
        it = drv.extract(sol.x)
        F, G, H = residuals(net, it)
        H = np.zeros(0)
        added["cost"] += drv.cost_tangents(sol.x, k)
        ok = (F.size == 0 or F.min() >= -params.eps) and (G.size == 0 or G.max() <= params.eps_th)
        if not ok:
            added["thermal"] += drv.thermal_rows(it, k)
        if params.prune:
            added["pruned"] -= drv.prune(sol.x)
        trace.append(drv.trace_record(k, sol, F, G, H, added, None, t0))
        log.debug("alg1 k=%d obj=%.6f minF=%.2e maxG=%.2e", k, sol.objective,
                  F.min() if F.size else 0, G.max() if G.size else 0)
        if ok and added["cost"] == 0:
            status = Status.CONVERGED
            break
        prev = it
    return drv.report(status, "socp-relaxation", it, sol.objective, k, F, G, H, trace, t0,
                      drv.duals(sol))


def _run_penalized(net: Network, params: SlpParams, mode: Mode, backend, skeleton,
                   name: str) -> SolveReport:
    t0 = time.perf_counter()
    drv = _Driver(net, params, mode, backend, skeleton)
    meshed = mode is Mode.MESHED
    prev = drv.start()
    nl = net.n_branch
    rho = np.full(nl, drv.rho0)
    registry: list[set[int]] = [set() for _ in range(nl)]
    anchors: dict[int, Iterate] = {0: prev}
    anchored_rows = np.zeros(0, dtype=int)
    trace: list[dict[str, Any]] = []
    it, sol = None, None
    F = G = H = np.zeros(0)
    status = Status.ITERATION_LIMIT
    for k in range(1, params.kmax + 1):
        added = Counter()
        # rows anchored at the previous iterate are rewritten in place, which
        # lets a persistent backend keep its basis
        first = anchored_rows.size == 0
        hyper = drv.soc_rows(np.arange(nl), prev, k - 1, "hyperplane-soc", hyperplane=True,
                             replace=None if first else anchored_rows[:nl])
        anchored_rows = hyper
        if meshed:
            anchored_rows = np.concatenate(
                [hyper, drv.atan2_rows(prev, k - 1, None if first else anchored_rows_atan)])
            anchored_rows_atan = anchored_rows[nl:]
        drv.model.set_cost(drv.vm.r, rho)
        sol = drv.solve_lp()
        if not sol.optimal:
            trace.append(drv.trace_record(k, sol, F, G, H, added, rho, t0))
            return drv.report(Status.LP_FAILURE, name, it, math.nan, k, F, G, H, trace, t0,
                              None, sol.message)
        it = drv.extract(sol.x)
        F, G, H = residuals(net, it)
        if not meshed:
            H = np.zeros(0)
        added["cost"] += drv.cost_tangents(sol.x, k)
        ok = (np.max(np.abs(np.concatenate([F, H])), initial=0.0) <= params.eps
              and (G.size == 0 or G.max() <= params.eps_th))
        rho_used = rho.copy()
        if not ok:
            # halfspaces at the previous anchor for branches off the cone
            viol = np.flatnonzero(np.abs(F) > params.eps)
            new = np.array([l for l in viol if (k - 1) not in registry[l]], dtype=int)
            for l in new:
                registry[l].add(k - 1)
            hs = drv.soc_rows(new, anchors[k - 1], k - 1, "cut-soc", hyperplane=False)
            added["soc"] += len(hs)
            if params.prune:
                drv.pruneable.update({int(h): 0 for h in hs})
            rho = penalty_update(rho, it.r, params, drv.rho_max)
            added["thermal"] += drv.thermal_rows(it, k)
        if params.prune:
            added["pruned"] -= drv.prune(sol.x)
        trace.append(drv.trace_record(k, sol, F, G, H, added, rho_used, t0))
        log.debug("%s k=%d obj=%.6f max|F|=%.2e max|H|=%.2e maxG=%.2e", name, k, sol.objective,
                  np.abs(F).max(initial=0), np.abs(H).max(initial=0), G.max(initial=0))
        if ok and added["cost"] == 0:
            status = Status.CONVERGED
            break
        anchors[k] = it
        prev = it
    report = drv.report(status, name, it, sol.objective, k, F, G, H, trace, t0, drv.duals(sol))
    if not meshed and it is not None:
        from .analysis import recover_angles

        it.theta = recover_angles(net, it.wr, it.wi)
    return report


def run_algorithm2(net: Network, params: SlpParams | None = None,
                   backend: LpBackend | None = None,
                   skeleton: StaticSkeleton | None = None) -> SolveReport:
    """Radial OPF: penalised hyperplanes plus accumulated halfspaces."""
    if not net.is_radial:
        raise ValueError(f"{net.name} is meshed; use run_algorithm3")
    return _run_penalized(net, params or SlpParams(), Mode.RADIAL, backend, skeleton, "radial")


def run_algorithm3(net: Network, params: SlpParams | None = None,
                   backend: LpBackend | None = None,
                   skeleton: StaticSkeleton | None = None) -> SolveReport:
    """Meshed OPF: adds angle variables and linearised ``atan2`` rows sharing the slack."""
    return _run_penalized(net, params or SlpParams(), Mode.MESHED, backend, skeleton, "meshed")


def solve(net: Network, params: SlpParams | None = None, backend: LpBackend | None = None,
          force_meshed: bool = False) -> SolveReport:
    """Pick the radial driver for trees and the meshed driver otherwise."""
    if net.is_radial and not force_meshed:
        return run_algorithm2(net, params, backend)
    return run_algorithm3(net, params, backend)


# -- two-variable didactic problem ------------------------------------------

_Q = np.array([[3.0, -1.0], [-1.0, 1.0]])


def _g(x: np.ndarray) -> float:
    return float(x @ _Q @ x - 1.0)


def _grad_g(x: np.ndarray) -> np.ndarray:
    return 2.0 * _Q @ x


def project_to_ellipse(x0: np.ndarray) -> np.ndarray:
    """Nearest point to ``x0`` on ``x'Qx = 1``.

    Stationarity gives ``x = (I + 2 mu Q)^-1 x0``.  In the eigenbasis, with
    ``t = 1 + 2 mu lam_max``, the constraint residual falls monotonically in
    ``t`` on ``(0, inf)``; searching in ``t`` keeps full relative precision
    when the root sits next to the pole (``x0`` near the centre).
    """
    x0 = np.asarray(x0, dtype=float)
    lam, vec = np.linalg.eigh(_Q)  # ascending, so lam[1] is the largest
    c = vec.T @ x0
    ratio = lam[0] / lam[1]

    def point(t: float) -> np.ndarray:
        return np.array([c[0] / (1.0 + (t - 1.0) * ratio), c[1] / t])

    # below 1e-150 the on-axis solution is exact to float resolution
    if abs(c[1]) > 1e-150:
        def phi(s: float) -> float:  # in log t, so tiny roots take few steps
            y = point(math.exp(s))
            return float(np.sum(lam * y * y) - 1.0)

        if phi(0.0) > 0:
            lo, hi = 0.0, 1.0
            while phi(hi) > 0:
                hi *= 2.0
        else:
            # phi > 0 once lam_max * (c1/t)^2 alone exceeds one
            lo, hi = math.log(0.5 * abs(c[1]) * math.sqrt(lam[1])), 0.0
        t = math.exp(brentq(phi, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                            maxiter=500))
        return vec @ point(t)
    # x0 on the major axis: either the major-axis end or, inside, a pair of
    # off-axis points at the pole t = 0
    candidates = [np.array([math.copysign(1.0 / math.sqrt(lam[0]), c[0]), 0.0])]
    y0 = c[0] / (1.0 - ratio)
    rest = 1.0 - lam[0] * y0 * y0
    if rest >= 0:
        candidates.append(np.array([y0, math.sqrt(rest / lam[1])]))
    best = min(candidates, key=lambda y: float(np.linalg.norm(y - c)))
    return vec @ best


@dataclass(frozen=True)
class AppendixCResult:
    x: np.ndarray
    iterations: int
    converged: bool
    history: tuple[tuple[float, float], ...]


class _ToyLp:
    """Persistent HiGHS model for the two-variable example.

    The hyperplane is row 0 and is rewritten in place; halfspaces are
    appended, so each solve warm-starts dual simplex from the last basis.
    """

    def __init__(self, rho: float, use_slack: bool):
        import highspy

        self.h = h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("solver", "simplex")
        h.setOptionValue("primal_feasibility_tolerance", 1e-9)
        h.setOptionValue("dual_feasibility_tolerance", 1e-9)
        h.addVars(3, np.array([-2.0, -2.0, 0.0]),
                  np.array([2.0, 2.0, highspy.kHighsInf if use_slack else 0.0]))
        h.changeColsCost(3, np.arange(3, dtype=np.int32),
                         np.array([1.0, -1.0, rho if use_slack else 0.0]))
        h.addRow(0.0, 0.0, 3, np.arange(3, dtype=np.int32),
                 np.array([0.0, 0.0, 1.0 if use_slack else 0.0]))
        self.inf = highspy.kHighsInf

    def add_halfspace(self, grad: np.ndarray, rhs: float) -> None:
        self.h.addRow(-self.inf, rhs, 2, np.arange(2, dtype=np.int32), np.asarray(grad, float))

    def solve(self, grad: np.ndarray, rhs: float):
        h = self.h
        h.changeCoeff(0, 0, float(grad[0]))
        h.changeCoeff(0, 1, float(grad[1]))
        h.changeRowBounds(0, rhs, rhs)
        h.run()
        status, message = _highs_status(h)
        if status is not LpStatus.OPTIMAL:
            return ArraySolution(status, message=message)
        return ArraySolution(status, np.array(h.getSolution().col_value), message=message)


def solve_appendix_c(rho: float, start, use_projection: bool = False, eps: float = 1e-4,
                     kmax: int = 200, backend: HighsBackend | None = None,
                     use_slack: bool = True) -> AppendixCResult:
    """SLP on ``min x1 - x2`` s.t. ``3x1^2 - 2x1x2 + x2^2 = 1``, ``|x| <= 2``.

    Each LP has the penalised hyperplane at the current anchor and halfspaces
    at all previous anchors.  With ``use_projection`` the anchor is the nearest
    point of the curve instead of the iterate itself.  Without an explicit
    ``backend`` one HiGHS model is kept and warm-started across iterations.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    lp = _ToyLp(rho, use_slack) if backend is None else None
    x = np.asarray(start, dtype=float)
    anchors: list[np.ndarray] = []
    history = [tuple(x)]
    for k in range(1, kmax + 1):
        anchor = project_to_ellipse(x) if use_projection else x
        grad = _grad_g(anchor)
        rhs = float(grad @ anchor) - _g(anchor)
        if lp is not None:
            if anchors:
                a_ = anchors[-1]
                ga = _grad_g(a_)
                lp.add_halfspace(ga, float(ga @ a_) - _g(a_))
            raw = lp.solve(grad, rhs)
        else:
            rows = [[grad[0], grad[1], 1.0 if use_slack else 0.0]]
            lo_b, hi_b = [rhs], [rhs]
            for a_ in anchors:
                ga = _grad_g(a_)
                rows.append([ga[0], ga[1], 0.0])
                lo_b.append(-math.inf)
                hi_b.append(float(ga @ a_) - _g(a_))
            raw = backend.solve_arrays(
                np.array([1.0, -1.0, rho if use_slack else 0.0]), np.array(rows),
                np.array(lo_b), np.array(hi_b), np.array([-2.0, -2.0, 0.0]),
                np.array([2.0, 2.0, math.inf if use_slack else 0.0]))
        if raw.status is not LpStatus.OPTIMAL:
            raise RuntimeError(f"LP {raw.status.value} at iteration {k}")
        anchors.append(anchor)
        x = raw.x[:2]
        history.append(tuple(x))
        if abs(_g(x)) <= eps:
            return AppendixCResult(x, k, True, tuple(history))
    raise IterationLimit(f"no convergence within {kmax} iterations")
