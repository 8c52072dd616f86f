"""Immutable per-unit network model built from a :class:`RawCase`."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from types import SimpleNamespace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .case_io import BRANCH_COLUMNS as BRC
from .case_io import BUS_COLUMNS as BC
from .case_io import GEN_COLUMNS as GC
from .case_io import RawCase

DEFAULT_ANGLE_BOUND = math.pi / 3


class NetworkError(ValueError):
    pass


class Disconnected(NetworkError):
    pass


class NoReferenceBus(NetworkError):
    pass


class NonPositiveVoltageLowerBound(NetworkError):
    pass


class Topology(str, Enum):
    RADIAL = "radial"
    MESHED = "meshed"


@dataclass(frozen=True)
class Bus:
    id: int
    p_d: float
    q_d: float
    g_sh: float
    b_sh: float
    v_min: float
    v_max: float
    is_ref: bool
    number: int = 0  # bus number in the source case


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    idx: int
    y_series: complex
    b_ch: float
    tau: float
    theta_shift: float
    s_max: float  # 0 means unlimited
    theta_min: float
    theta_max: float
    coeff_fwd: tuple[float, float, float, float]  # (g^c, b^c, g, b) for i->j
    coeff_rev: tuple[float, float, float, float]  # same for j->i
    i_max: float | None = None


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c2: float
    c1: float
    c0: float


def branch_coefficients(
    y_series: complex, b_ch: float, tau: float, theta_shift: float
) -> tuple[float, float, float, float, float, float, float, float]:
    """Flow coefficients for both directions of a pi-model branch.

    Returns ``(gc_ij, bc_ij, g_ij, b_ij, gc_ji, bc_ji, g_ji, b_ji)`` so that

        p_ij = gc_ij*w_i - g_ij*wr_ij + b_ij*wi_ij
        q_ij = bc_ij*w_i - b_ij*wr_ij - g_ij*wi_ij

    and identically for ``ji`` with ``wr_ji = wr_ij`` and ``wi_ji = -wi_ij``.
    """
    t = tau * complex(math.cos(theta_shift), math.sin(theta_shift))
    ys = y_series.conjugate()
    self_f = (ys - 0.5j * b_ch) / tau**2
    mutual_f = ys / t
    self_t = ys - 0.5j * b_ch
    mutual_t = ys / t.conjugate()
    return (
        self_f.real, self_f.imag, mutual_f.real, mutual_f.imag,
        self_t.real, self_t.imag, mutual_t.real, mutual_t.imag,
    )


@dataclass(frozen=True, eq=False)
class Network:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    topology: Topology
    ref_bus: int
    branches_at_bus: tuple[tuple[int, ...], ...] = field(repr=False)
    gens_at_bus: tuple[tuple[int, ...], ...] = field(repr=False)
    arrays: SimpleNamespace = field(repr=False)
    source_branch_rows: tuple[int, ...] = field(repr=False, default=())
    source_gen_rows: tuple[int, ...] = field(repr=False, default=())

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def is_radial(self) -> bool:
        return self.topology is Topology.RADIAL


def _freeze(**arrays: np.ndarray) -> SimpleNamespace:
    for a in arrays.values():
        a.setflags(write=False)
    return SimpleNamespace(**arrays)


def _angle_bounds(lo_deg: float, hi_deg: float) -> tuple[float, float]:
    unbounded = (lo_deg == 0 and hi_deg == 0) or (lo_deg <= -360 and hi_deg >= 360)
    if unbounded:
        return -DEFAULT_ANGLE_BOUND, DEFAULT_ANGLE_BOUND
    lo, hi = math.radians(lo_deg), math.radians(hi_deg)
    # the linearisations need the range strictly inside (-pi/2, pi/2)
    lo = max(lo, -DEFAULT_ANGLE_BOUND) if lo <= -math.pi / 2 else lo
    hi = min(hi, DEFAULT_ANGLE_BOUND) if hi >= math.pi / 2 else hi
    return lo, hi


def build_network(case: RawCase) -> Network:
    """Convert a raw case into the per-unit model, dropping out-of-service elements."""
    base = case.base_mva
    bus_rows = np.flatnonzero(case.bus_in_service)
    index_of = {int(case.bus[r, BC["BUS_I"] - 1]): k for k, r in enumerate(bus_rows)}

    buses = []
    ref = None
    for k, r in enumerate(bus_rows):
        row = case.bus[r]
        v_min, v_max = float(row[BC["VMIN"] - 1]), float(row[BC["VMAX"] - 1])
        if v_min <= 0:
            raise NonPositiveVoltageLowerBound(f"bus {int(row[0])} has VMIN={v_min}")
        is_ref = int(row[BC["BUS_TYPE"] - 1]) == 3
        if is_ref:
            ref = k
        buses.append(Bus(
            id=k,
            p_d=row[BC["PD"] - 1] / base,
            q_d=row[BC["QD"] - 1] / base,
            g_sh=row[BC["GS"] - 1] / base,
            b_sh=row[BC["BS"] - 1] / base,
            v_min=v_min,
            v_max=v_max,
            is_ref=is_ref,
            number=int(row[BC["BUS_I"] - 1]),
        ))
    if ref is None:
        raise NoReferenceBus(case.name)

    branches = []
    branch_rows = []
    ncol = case.branch.shape[1]
    for r in np.flatnonzero(case.branch_in_service):
        row = case.branch[r]
        f, t = int(row[0]), int(row[1])
        if f not in index_of or t not in index_of:
            continue
        z = complex(row[BRC["BR_R"] - 1], row[BRC["BR_X"] - 1])
        if z == 0:
            raise NetworkError(f"branch {f}-{t} has zero impedance")
        y = 1 / z
        tau = float(row[BRC["TAP"] - 1]) or 1.0
        shift = math.radians(row[BRC["SHIFT"] - 1])
        b_ch = float(row[BRC["BR_B"] - 1])
        if ncol >= BRC["ANGMAX"]:
            lo, hi = _angle_bounds(row[BRC["ANGMIN"] - 1], row[BRC["ANGMAX"] - 1])
        else:
            lo, hi = -DEFAULT_ANGLE_BOUND, DEFAULT_ANGLE_BOUND
        rate = float(row[BRC["RATE_A"] - 1]) / base
        c = branch_coefficients(y, b_ch, tau, shift)
        branches.append(Branch(
            from_bus=index_of[f], to_bus=index_of[t], idx=int(r), y_series=y,
            b_ch=b_ch, tau=tau, theta_shift=shift, s_max=rate,
            theta_min=lo, theta_max=hi, coeff_fwd=c[:4], coeff_rev=c[4:],
            i_max=rate if rate > 0 else None,
        ))
        branch_rows.append(int(r))

    gens = []
    gen_rows = []
    cost_rows = case.gencost[: case.gen.shape[0]]
    for r in np.flatnonzero(case.gen_in_service):
        row = case.gen[r]
        b = int(row[GC["GEN_BUS"] - 1])
        if b not in index_of:
            continue
        crow = cost_rows[r]
        n = int(crow[3])
        coeffs = [0.0] * (3 - n) + list(crow[4 : 4 + n])
        c2, c1, c0 = coeffs
        gens.append(Generator(
            bus=index_of[b],
            p_min=row[GC["PMIN"] - 1] / base,
            p_max=row[GC["PMAX"] - 1] / base,
            q_min=row[GC["QMIN"] - 1] / base,
            q_max=row[GC["QMAX"] - 1] / base,
            c2=c2 * base**2,
            c1=c1 * base,
            c0=c0,
        ))
        gen_rows.append(int(r))

    nb, nl = len(buses), len(branches)
    f_idx = np.array([br.from_bus for br in branches], dtype=int)
    t_idx = np.array([br.to_bus for br in branches], dtype=int)
    graph = coo_matrix((np.ones(nl), (f_idx, t_idx)), shape=(nb, nb))
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp > 1:
        raise Disconnected(f"{case.name}: {ncomp} islands")
    topology = Topology.RADIAL if nl == nb - 1 else Topology.MESHED

    at_bus: list[list[int]] = [[] for _ in range(nb)]
    for l, br in enumerate(branches):
        at_bus[br.from_bus].append(l)
        at_bus[br.to_bus].append(l)
    gens_at: list[list[int]] = [[] for _ in range(nb)]
    for g, gen in enumerate(gens):
        gens_at[gen.bus].append(g)

    fwd = np.array([br.coeff_fwd for br in branches]).reshape(nl, 4)
    rev = np.array([br.coeff_rev for br in branches]).reshape(nl, 4)
    arrays = _freeze(
        f=f_idx,
        t=t_idx,
        pd=np.array([b.p_d for b in buses]),
        qd=np.array([b.q_d for b in buses]),
        gsh=np.array([b.g_sh for b in buses]),
        bsh=np.array([b.b_sh for b in buses]),
        vmin=np.array([b.v_min for b in buses]),
        vmax=np.array([b.v_max for b in buses]),
        fwd=fwd,
        rev=rev,
        smax=np.array([br.s_max for br in branches]),
        angmin=np.array([br.theta_min for br in branches]),
        angmax=np.array([br.theta_max for br in branches]),
        gen_bus=np.array([g.bus for g in gens], dtype=int),
        pmin=np.array([g.p_min for g in gens]),
        pmax=np.array([g.p_max for g in gens]),
        qmin=np.array([g.q_min for g in gens]),
        qmax=np.array([g.q_max for g in gens]),
        c2=np.array([g.c2 for g in gens]),
        c1=np.array([g.c1 for g in gens]),
        c0=np.array([g.c0 for g in gens]),
    )
    return Network(
        name=case.name,
        base_mva=base,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        topology=topology,
        ref_bus=ref,
        branches_at_bus=tuple(tuple(x) for x in at_bus),
        gens_at_bus=tuple(tuple(x) for x in gens_at),
        arrays=arrays,
        source_branch_rows=tuple(branch_rows),
        source_gen_rows=tuple(gen_rows),
    )


def wr_bounds(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Box for w^r implied by voltage and angle-difference limits."""
    a = net.arrays
    vmin_p = a.vmin[a.f] * a.vmin[a.t]
    vmax_p = a.vmax[a.f] * a.vmax[a.t]
    lo_ang = np.minimum(np.cos(a.angmin), np.cos(a.angmax))
    lower = np.where(lo_ang >= 0, vmin_p * lo_ang, vmax_p * lo_ang)
    # cos(theta) peaks at 1 when 0 lies in the angle range
    hi_ang = np.where((a.angmin <= 0) & (a.angmax >= 0), 1.0,
                      np.maximum(np.cos(a.angmin), np.cos(a.angmax)))
    return lower, vmax_p * hi_ang


def wi_bounds(net: Network) -> tuple[np.ndarray, np.ndarray]:
    a = net.arrays
    vmin_p = a.vmin[a.f] * a.vmin[a.t]
    vmax_p = a.vmax[a.f] * a.vmax[a.t]
    s_lo, s_hi = np.sin(a.angmin), np.sin(a.angmax)
    lower = np.minimum(vmax_p * s_lo, vmin_p * s_lo)
    upper = np.maximum(vmax_p * s_hi, vmin_p * s_hi)
    return lower, upper


def polar_flows(
    net: Network, v: np.ndarray, theta: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Branch flows from the complex-voltage pi-model (independent of the w form)."""
    a = net.arrays
    vc = v * np.exp(1j * theta)
    pf = np.empty(net.n_branch)
    qf = np.empty(net.n_branch)
    pt = np.empty(net.n_branch)
    qt = np.empty(net.n_branch)
    for l, br in enumerate(net.branches):
        tap = br.tau * np.exp(1j * br.theta_shift)
        y = br.y_series
        yff = (y + 0.5j * br.b_ch) / (tap * tap.conjugate())
        yft = -y / tap.conjugate()
        ytf = -y / tap
        ytt = y + 0.5j * br.b_ch
        vf, vt = vc[a.f[l]], vc[a.t[l]]
        sf = vf * np.conj(yff * vf + yft * vt)
        st = vt * np.conj(ytf * vf + ytt * vt)
        pf[l], qf[l], pt[l], qt[l] = sf.real, sf.imag, st.real, st.imag
    return pf, qf, pt, qt
