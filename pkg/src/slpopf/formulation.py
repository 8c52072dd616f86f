"""Static LP skeleton shared by every SLP iteration, plus the DC OPF.

The skeleton holds everything that does not depend on the iterate: variable
boxes, nodal balances, branch-flow definitions, the ``tan`` angle rows on
``w^r``/``w^i``, the lifted polyhedral cost and, optionally, current limits.
Drivers copy it and append cuts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .lp_core import LpBackend, LpModel, LpStatus, solve_lp
from .network import Network, wi_bounds, wr_bounds

__all__ = [
    "Mode",
    "Thermal",
    "VarMap",
    "LiftedCost",
    "StaticSkeleton",
    "MissingCurrentRating",
    "DcInfeasible",
    "DcSolution",
    "RowBuilder",
    "build_skeleton",
    "lifted_cost_rows",
    "btn_depths",
    "current_coefficients",
    "current_limit_rows",
    "dc_opf",
]


class Mode(str, Enum):
    SOCP_RELAX = "SocpRelax"
    RADIAL = "Radial"
    MESHED = "Meshed"


class Thermal(str, Enum):
    MVA = "mva"
    CURRENT = "current"
    NONE = "none"


class MissingCurrentRating(ValueError):
    pass


class DcInfeasible(RuntimeError):
    """The DC OPF has no feasible dispatch."""


class RowBuilder:
    """Collects a family of sparse rows and adds them to a model in one call."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._r: list[np.ndarray] = []
        self._c: list[np.ndarray] = []
        self._v: list[np.ndarray] = []
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self.tags: list[str] = []

    def __len__(self) -> int:
        return len(self.rhs)

    def add(self, cols, vals, sense: str, rhs: float, tag: str) -> None:
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        self._r.append(np.full(cols.shape, len(self.rhs)))
        self._c.append(cols)
        self._v.append(vals)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.tags.append(f"{self.prefix}:{tag}")

    def add_block(self, cols: np.ndarray, vals: np.ndarray, sense: str, rhs, tags) -> None:
        """Add ``k`` rows at once: ``cols`` and ``vals`` are ``(k, m)`` arrays."""
        cols = np.asarray(cols, dtype=int)
        vals = np.asarray(vals, dtype=float)
        k = cols.shape[0]
        start = len(self.rhs)
        self._r.append(np.repeat(np.arange(start, start + k), cols.shape[1]))
        self._c.append(cols.ravel())
        self._v.append(vals.ravel())
        self.senses.extend([sense] * k)
        self.rhs.extend(np.broadcast_to(np.asarray(rhs, dtype=float), (k,)).tolist())
        self.tags.extend(f"{self.prefix}:{t}" for t in tags)

    def _matrix(self, n_vars: int) -> sp.csr_matrix:
        r = np.concatenate(self._r)
        c = np.concatenate(self._c)
        v = np.concatenate(self._v)
        keep = v != 0
        return sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(len(self.rhs), n_vars))

    def commit(self, model: LpModel) -> np.ndarray:
        if not self.rhs:
            return np.zeros(0, dtype=int)
        return model.add_rows(self._matrix(model.n_vars), self.senses, self.rhs, self.tags)

    def replace(self, model: LpModel, handles: np.ndarray) -> np.ndarray:
        """Overwrite existing rows (same order, same senses) instead of adding."""
        handles = np.asarray(handles, dtype=int)
        if handles.size != len(self.rhs):
            raise ValueError("one existing row per built row required")
        if handles.size:
            model.update_rows(handles, self._matrix(model.n_vars), self.rhs)
        return handles


@dataclass(frozen=True)
class LiftedCost:
    """Variables and parameters of the lifted quadratic cost."""

    gens: np.ndarray  # generator indices with c2 > 0, in pairing order
    p: np.ndarray  # p_g = sqrt(c2) * p_gi, one per entry of ``gens``
    pad: int | None  # fixed-zero variable for an odd count
    pairs: np.ndarray  # (N, 2) variable indices
    alpha: np.ndarray  # (N,)
    scale: np.ndarray  # M_n, squared-norm bound of each pair on the box
    depths: tuple[int, int]

    @property
    def n_pairs(self) -> int:
        return len(self.alpha)


@dataclass(frozen=True)
class VarMap:
    pg: np.ndarray
    qg: np.ndarray
    w: np.ndarray
    wr: np.ndarray
    wi: np.ndarray
    pf: np.ndarray
    qf: np.ndarray
    pt: np.ndarray
    qt: np.ndarray
    theta: np.ndarray | None
    r: np.ndarray | None
    lift: LiftedCost


@dataclass
class StaticSkeleton:
    model: LpModel
    vars: VarMap
    mode: Mode
    thermal: Thermal
    nodal_p: np.ndarray  # row handles, one per bus
    nodal_q: np.ndarray
    row_counts: dict[str, int]
    cost_accuracy: float


def btn_depths(accuracy: float, floor: float = 1e-3) -> tuple[int, int]:
    """Tower depths for the inner ``(p1, p2) -> s`` and outer ``(s, u) -> t`` cones.

    A depth ``nu`` gives ``delta = 1/cos(pi / 2^(nu+1)) - 1``.  The lifted
    error is at most ``2*delta_in*P + 2*delta_out*M`` for ``P = p1^2 + p2^2``
    and box bound ``M``, so the relative accuracy holds for ``P >= floor*M``.
    """

    def depth(delta: float) -> int:
        nu = 1
        while 1.0 / math.cos(math.pi / 2 ** (nu + 1)) - 1.0 > delta:
            nu += 1
        return nu

    return depth(accuracy / 4.0), depth(accuracy * floor / 4.0)


def _btn_tower(model: LpModel, rows: RowBuilder, x1: tuple[dict, float],
               x2: tuple[dict, float], t: tuple[dict, float], depth: int, name: str) -> None:
    """Polyhedral outer approximation of ``||(x1, x2)|| <= t``.

    Each argument is an affine form ``(coeffs, constant)``.
    """
    n = depth + 1
    xi = model.add_variables([f"{name}_xi{j}" for j in range(n)], -math.inf, math.inf)
    eta = model.add_variables([f"{name}_eta{j}" for j in range(n)], 0.0, math.inf)

    def absrow(var, form, tag):
        cols = [var, *form[0].keys()]
        rows.add(cols, [1.0, *(-c for c in form[0].values())], ">=", form[1], f"{tag}+")
        rows.add(cols, [1.0, *form[0].values()], ">=", -form[1], f"{tag}-")

    absrow(xi[0], x1, f"{name}:xi0")
    absrow(eta[0], x2, f"{name}:eta0")
    for j in range(1, n):
        ang = math.pi / 2 ** (j + 1)
        c, s = math.cos(ang), math.sin(ang)
        rows.add([xi[j], xi[j - 1], eta[j - 1]], [1.0, -c, -s], "=", 0.0, f"{name}:xi{j}")
        rows.add([eta[j], xi[j - 1], eta[j - 1]], [1.0, s, -c], ">=", 0.0, f"{name}:eta{j}+")
        rows.add([eta[j], xi[j - 1], eta[j - 1]], [1.0, -s, c], ">=", 0.0, f"{name}:eta{j}-")
    rows.add([xi[depth], *t[0].keys()], [1.0, *(-c for c in t[0].values())], "<=", t[1],
             f"{name}:top")
    rows.add([eta[depth], xi[depth]], [1.0, -math.tan(math.pi / 2 ** (depth + 1))], "<=", 0.0,
             f"{name}:cap")


def lifted_cost_rows(model: LpModel, net: Network, pg: np.ndarray,
                     accuracy: float = 1e-5) -> LiftedCost:
    """Add the lifted polyhedral epigraph of the quadratic cost terms.

    Generators with ``c2 > 0`` get ``p_g = sqrt(c2) * p_gi``; consecutive pairs
    share one ``alpha_n >= p_a^2 + p_b^2``.  Each pair is written as the
    Lorentz cone ``||(p_a, p_b, (alpha - M)/(2 sqrt M))|| <= (alpha + M)/(2 sqrt M)``
    and approximated by two nested towers.
    """
    a = net.arrays
    gens = np.flatnonzero(a.c2 > 0)
    depths = btn_depths(accuracy)
    if gens.size == 0:
        empty = np.zeros(0, dtype=int)
        return LiftedCost(gens, empty, None, np.zeros((0, 2), dtype=int), empty, np.zeros(0),
                          depths)
    rows = RowBuilder("cost")
    sq = np.sqrt(a.c2[gens])
    p = model.add_variables([f"p_g{g}" for g in gens], sq * a.pmin[gens], sq * a.pmax[gens])
    for k, g in enumerate(gens):
        rows.add([p[k], pg[g]], [1.0, -sq[k]], "=", 0.0, f"link:{g}")
    pad = None
    slots = list(p)
    bound = list(np.maximum(np.abs(sq * a.pmin[gens]), np.abs(sq * a.pmax[gens])) ** 2)
    if len(slots) % 2:
        pad = model.add_variable("p_g_pad", 0.0, 0.0)
        slots.append(pad)
        bound.append(0.0)
    pairs = np.array(slots, dtype=int).reshape(-1, 2)
    scale = np.maximum(np.array(bound).reshape(-1, 2).sum(axis=1), 1e-6)
    alpha = model.add_variables([f"alpha{n}" for n in range(len(pairs))], 0.0, math.inf, 1.0)
    for n, (pa, pb) in enumerate(pairs):
        m = float(scale[n])
        rm = math.sqrt(m)
        s = model.add_variable(f"lift_s{n}", 0.0, math.inf)
        _btn_tower(model, rows, ({int(pa): 1.0}, 0.0), ({int(pb): 1.0}, 0.0),
                   ({s: 1.0}, 0.0), depths[0], f"in{n}")
        u = ({int(alpha[n]): 0.5 / rm}, -0.5 * rm)
        t = ({int(alpha[n]): 0.5 / rm}, 0.5 * rm)
        _btn_tower(model, rows, ({s: 1.0}, 0.0), u, t, depths[1], f"out{n}")
    rows.commit(model)
    return LiftedCost(gens, p, pad, pairs, alpha, scale, depths)


def current_coefficients(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of the squared branch currents as ``(nl, 4)`` arrays.

    Row ``l`` holds ``(c_wi, c_wj, c_wr, c_wimag)`` with
    ``l_ij = c_wi*w_i + c_wj*w_j + c_wr*wr + c_wimag*wi`` for each direction.
    """
    fwd = np.zeros((net.n_branch, 4))
    rev = np.zeros((net.n_branch, 4))
    for l, br in enumerate(net.branches):
        t = br.tau * complex(math.cos(br.theta_shift), math.sin(br.theta_shift))
        y = br.y_series
        yc = y + 0.5j * br.b_ch
        ac = yc / br.tau**2
        b = y / t.conjugate()
        c = ac * b.conjugate()
        fwd[l] = (abs(ac) ** 2, abs(b) ** 2, -2 * c.real, 2 * c.imag)
        bt = y / t
        c2 = bt * yc.conjugate()
        rev[l] = (abs(bt) ** 2, abs(yc) ** 2, -2 * c2.real, 2 * c2.imag)
    return fwd, rev


def current_limit_rows(model: LpModel, net: Network, vm: VarMap,
                       branches: Sequence[int] | None = None) -> np.ndarray:
    """Linear rows ``l_ij <= I_max^2`` and ``l_ji <= I_max^2``."""
    a = net.arrays
    if branches is None:
        branches = [l for l, br in enumerate(net.branches) if br.i_max > 0]
    fwd, rev = current_coefficients(net)
    rows = RowBuilder("current")
    for l in branches:
        imax = net.branches[l].i_max
        if not imax > 0:
            raise MissingCurrentRating(f"branch {l} has no current rating")
        cols = [vm.w[a.f[l]], vm.w[a.t[l]], vm.wr[l], vm.wi[l]]
        rows.add(cols, fwd[l], "<=", imax**2, f"{l}:ij")
        rows.add(cols, rev[l], "<=", imax**2, f"{l}:ji")
    return rows.commit(model)


def build_skeleton(net: Network, mode: Mode | str = Mode.MESHED,
                   thermal: Thermal | str = Thermal.MVA,
                   cost_accuracy: float = 1e-5) -> StaticSkeleton:
    mode = Mode(mode)
    thermal = Thermal(thermal)
    a = net.arrays
    nb, nl, ng = net.n_bus, net.n_branch, net.n_gen
    m = LpModel(f"{net.name}-{mode.value}")

    pg = m.add_variables([f"pg{g}" for g in range(ng)], a.pmin, a.pmax, a.c1)
    qg = m.add_variables([f"qg{g}" for g in range(ng)], a.qmin, a.qmax)
    w = m.add_variables([f"w{i}" for i in range(nb)], a.vmin**2, a.vmax**2)
    wr_lo, wr_hi = wr_bounds(net)
    wi_lo, wi_hi = wi_bounds(net)
    wr = m.add_variables([f"wr{l}" for l in range(nl)], wr_lo, wr_hi)
    wi = m.add_variables([f"wi{l}" for l in range(nl)], wi_lo, wi_hi)
    inf = math.inf
    pf = m.add_variables([f"pf{l}" for l in range(nl)], -inf, inf)
    qf = m.add_variables([f"qf{l}" for l in range(nl)], -inf, inf)
    pt = m.add_variables([f"pt{l}" for l in range(nl)], -inf, inf)
    qt = m.add_variables([f"qt{l}" for l in range(nl)], -inf, inf)
    theta = None
    if mode is Mode.MESHED:
        theta = m.add_variables([f"theta{i}" for i in range(nb)], -inf, inf)
    r = None
    if mode is not Mode.SOCP_RELAX:
        r = m.add_variables([f"r{l}" for l in range(nl)], 0.0, inf)
    m.obj_constant = float(a.c0.sum())

    counts: dict[str, int] = {}

    # nodal balances: generation - outgoing flows - shunt = demand
    nodal = RowBuilder("nodal-P")
    nodal_q = RowBuilder("nodal-Q")
    for i in range(nb):
        gens = list(net.gens_at_bus[i])
        outs = [l for l in net.branches_at_bus[i]]
        cols_p = [pg[g] for g in gens] + [w[i]]
        vals_p = [1.0] * len(gens) + [-a.gsh[i]]
        cols_q = [qg[g] for g in gens] + [w[i]]
        vals_q = [1.0] * len(gens) + [a.bsh[i]]
        for l in outs:
            if a.f[l] == i:
                cols_p.append(pf[l])
                cols_q.append(qf[l])
            else:
                cols_p.append(pt[l])
                cols_q.append(qt[l])
            vals_p.append(-1.0)
            vals_q.append(-1.0)
        nodal.add(cols_p, vals_p, "=", a.pd[i], str(i))
        nodal_q.add(cols_q, vals_q, "=", a.qd[i], str(i))
    h_p = nodal.commit(m)
    h_q = nodal_q.commit(m)
    counts["nodal"] = len(h_p) + len(h_q)

    # flow definitions in the w variables
    fl = RowBuilder("flow")
    F, R = a.fwd, a.rev
    wf, wt = w[a.f], w[a.t]
    ids = [str(l) for l in range(nl)]
    one = np.ones(nl)
    fl.add_block(np.column_stack([pf, wf, wr, wi]),
                 np.column_stack([one, -F[:, 0], F[:, 2], -F[:, 3]]), "=", 0.0,
                 [f"pf{l}" for l in ids])
    fl.add_block(np.column_stack([qf, wf, wr, wi]),
                 np.column_stack([one, -F[:, 1], F[:, 3], F[:, 2]]), "=", 0.0,
                 [f"qf{l}" for l in ids])
    fl.add_block(np.column_stack([pt, wt, wr, wi]),
                 np.column_stack([one, -R[:, 0], R[:, 2], R[:, 3]]), "=", 0.0,
                 [f"pt{l}" for l in ids])
    fl.add_block(np.column_stack([qt, wt, wr, wi]),
                 np.column_stack([one, -R[:, 1], R[:, 3], -R[:, 2]]), "=", 0.0,
                 [f"qt{l}" for l in ids])
    counts["flow"] = len(fl.commit(m))

    # tan(theta_min) wr <= wi <= tan(theta_max) wr
    ang = RowBuilder("soc-angle")
    ang.add_block(np.column_stack([wi, wr]), np.column_stack([-one, np.tan(a.angmin)]), "<=",
                  0.0, [f"lo{l}" for l in ids])
    ang.add_block(np.column_stack([wi, wr]), np.column_stack([one, -np.tan(a.angmax)]), "<=",
                  0.0, [f"hi{l}" for l in ids])
    counts["soc-angle"] = len(ang.commit(m))

    if theta is not None:
        box = RowBuilder("angle-box")
        box.add_block(np.column_stack([theta[a.f], theta[a.t]]), np.column_stack([one, -one]),
                      ">=", a.angmin, [f"lo{l}" for l in ids])
        box.add_block(np.column_stack([theta[a.f], theta[a.t]]), np.column_stack([one, -one]),
                      "<=", a.angmax, [f"hi{l}" for l in ids])
        box.add(theta[net.ref_bus], 1.0, "=", 0.0, "ref")
        counts["angle-box"] = len(box.commit(m))

    n_before = m.n_rows
    lift = lifted_cost_rows(m, net, pg, cost_accuracy)
    counts["cost"] = m.n_rows - n_before

    vm = VarMap(pg, qg, w, wr, wi, pf, qf, pt, qt, theta, r, lift)
    if thermal is Thermal.CURRENT:
        counts["current"] = len(current_limit_rows(m, net, vm))
    return StaticSkeleton(m, vm, mode, thermal, h_p, h_q, counts, cost_accuracy)


@dataclass(frozen=True)
class DcSolution:
    pg: np.ndarray
    theta: np.ndarray
    flows: np.ndarray
    objective: float


def dc_opf(net: Network, backend: LpBackend | None = None,
           cost_accuracy: float = 1e-5) -> DcSolution:
    """Lossless B-theta DC OPF with generator boxes, ``|p_ij| <= s_max`` and angle box.

    Shunt conductance is treated as demand at 1 pu voltage.
    """
    a = net.arrays
    nb, nl, ng = net.n_bus, net.n_branch, net.n_gen
    m = LpModel(f"{net.name}-dc")
    pg = m.add_variables([f"pg{g}" for g in range(ng)], a.pmin, a.pmax, a.c1)
    th_lo = np.full(nb, -math.inf)
    th_hi = np.full(nb, math.inf)
    th_lo[net.ref_bus] = th_hi[net.ref_bus] = 0.0
    th = m.add_variables([f"theta{i}" for i in range(nb)], th_lo, th_hi)
    cap = np.where(a.smax > 0, a.smax, math.inf)
    p = m.add_variables([f"p{l}" for l in range(nl)], -cap, cap)
    m.obj_constant = float(a.c0.sum())
    b = np.array([1.0 / (br.y_series ** -1).imag / br.tau for br in net.branches])
    shift = np.array([br.theta_shift for br in net.branches])

    rows = RowBuilder("dc")
    one = np.ones(nl)
    rows.add_block(np.column_stack([p, th[a.f], th[a.t]]), np.column_stack([one, -b, b]), "=",
                   -b * shift, [f"flow{l}" for l in range(nl)])
    rows.add_block(np.column_stack([th[a.f], th[a.t]]), np.column_stack([one, -one]), ">=",
                   a.angmin, [f"lo{l}" for l in range(nl)])
    rows.add_block(np.column_stack([th[a.f], th[a.t]]), np.column_stack([one, -one]), "<=",
                   a.angmax, [f"hi{l}" for l in range(nl)])
    for i in range(nb):
        cols = [pg[g] for g in net.gens_at_bus[i]]
        vals = [1.0] * len(cols)
        for l in net.branches_at_bus[i]:
            cols.append(p[l])
            vals.append(-1.0 if a.f[l] == i else 1.0)
        rows.add(cols, vals, "=", a.pd[i] + a.gsh[i], f"bal{i}")
    rows.commit(m)
    lifted_cost_rows(m, net, pg, cost_accuracy)
    sol = solve_lp(m, backend)
    if sol.status is not LpStatus.OPTIMAL:
        raise DcInfeasible(f"DC OPF status {sol.status.value}: {sol.message}")
    x = sol.x
    cost = float(np.sum(a.c2 * x[pg] ** 2 + a.c1 * x[pg] + a.c0))
    return DcSolution(x[pg], x[th], x[p], cost)
