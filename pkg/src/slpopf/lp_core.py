"""Linear-program container with incremental rows, and the solver backend seam.

Dual convention used everywhere in the package: for a minimisation the dual of
a row is the derivative of the optimal objective with respect to that row's
right-hand side, whatever the row sense.  So ``x >= 3`` in ``min x`` has dual
``+1``, a binding ``<=`` row has a non-positive dual, and the dual of a nodal
balance row (rhs = demand) is the marginal cost of demand at that bus.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

__all__ = [
    "Sense",
    "LpStatus",
    "LpModel",
    "LpSolution",
    "LpBackend",
    "HighsBackend",
    "LinprogBackend",
    "ArraySolution",
    "UnknownVariable",
    "DuplicateTag",
    "solve_lp",
    "kkt_residuals",
    "to_lp_format",
]


class UnknownVariable(KeyError):
    pass


class DuplicateTag(ValueError):
    pass


class Sense(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class LpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


_SENSE_CODE = {Sense.LE: -1, Sense.EQ: 0, Sense.GE: 1}


@dataclass
class _RowBlock:
    matrix: sp.csr_matrix
    sense: np.ndarray  # -1, 0, +1
    rhs: np.ndarray
    handles: np.ndarray
    tags: list[str]


class LpModel:
    """Variables with bounds, a linear objective, and tagged rows.

    Rows are stored in blocks so that a driver can add a whole family of cuts
    at once and later delete individual rows by handle.
    """

    def __init__(self, name: str = "lp"):
        self.name = name
        self._names: list[str] = []
        self._lower: list[float] = []
        self._upper: list[float] = []
        self._cost: list[float] = []
        self.obj_constant = 0.0
        self._blocks: list[_RowBlock] = []
        self._tags: dict[str, int] = {}
        self._where: dict[int, tuple[int, int]] = {}  # handle -> (block, position)
        self._dead: set[int] = set()
        self._next_handle = 0

    # -- variables ---------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self._names)

    @property
    def n_rows(self) -> int:
        return len(self._where) - len(self._dead)

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def add_variable(self, name: str, lower: float = 0.0, upper: float = math.inf,
                     cost: float = 0.0) -> int:
        return int(self.add_variables([name], lower, upper, cost)[0])

    def add_variables(self, names: Sequence[str], lower=0.0, upper=math.inf,
                      cost=0.0) -> np.ndarray:
        n = len(names)
        lo = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"variable {names[bad]}: lower bound exceeds upper bound")
        start = len(self._names)
        self._names.extend(names)
        self._lower.extend(lo.tolist())
        self._upper.extend(hi.tolist())
        self._cost.extend(np.broadcast_to(np.asarray(cost, dtype=float), (n,)).tolist())
        return np.arange(start, start + n)

    def set_cost(self, idx, values) -> None:
        idx = np.atleast_1d(idx).astype(int)
        values = np.broadcast_to(np.asarray(values, dtype=float), idx.shape)
        for i, v in zip(idx, values):
            self._cost[int(i)] = float(v)

    def set_bounds(self, idx, lower=None, upper=None) -> None:
        idx = np.atleast_1d(idx).astype(int)
        if lower is not None:
            for i, v in zip(idx, np.broadcast_to(lower, idx.shape)):
                self._lower[int(i)] = float(v)
        if upper is not None:
            for i, v in zip(idx, np.broadcast_to(upper, idx.shape)):
                self._upper[int(i)] = float(v)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self._lower)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self._upper)

    @property
    def cost(self) -> np.ndarray:
        return np.array(self._cost)

    # -- rows ----------------------------------------------------------------
    def add_row(self, coefficients: Mapping[int, float], sense: Sense | str, rhs: float,
                tag: str) -> int:
        cols = np.fromiter(coefficients.keys(), dtype=int, count=len(coefficients))
        vals = np.fromiter(coefficients.values(), dtype=float, count=len(coefficients))
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_vars):
            raise UnknownVariable("row references a variable that does not exist")
        mat = sp.csr_matrix((vals, (np.zeros_like(cols), cols)), shape=(1, self.n_vars))
        return int(self.add_rows(mat, [sense], [rhs], [tag])[0])

    def add_rows(self, matrix, senses, rhs, tags: Sequence[str]) -> np.ndarray:
        """Append rows given as a (k x n_vars or fewer columns) sparse matrix."""
        mat = sp.csr_matrix(matrix)
        k = mat.shape[0]
        if mat.shape[1] > self.n_vars or (mat.nnz and mat.indices.max() >= self.n_vars):
            raise UnknownVariable("row references a variable that does not exist")
        if len(tags) != k:
            raise ValueError("one tag per row required")
        seen = set()
        for tag in tags:
            if tag in self._tags or tag in seen:
                raise DuplicateTag(tag)
            seen.add(tag)
        if isinstance(senses, (str, Sense)):
            senses = [senses] * k
        codes = np.array([_SENSE_CODE[Sense(s)] for s in senses], dtype=int)
        handles = np.arange(self._next_handle, self._next_handle + k)
        self._next_handle += k
        block_id = len(self._blocks)
        self._blocks.append(_RowBlock(mat, codes, np.asarray(rhs, dtype=float).reshape(k),
                                      handles, list(tags)))
        for pos, (h, tag) in enumerate(zip(handles, tags)):
            self._tags[tag] = int(h)
            self._where[int(h)] = (block_id, pos)
        return handles

    def remove_rows(self, handles: Iterable[int]) -> None:
        for h in handles:
            h = int(h)
            if h not in self._where or h in self._dead:
                continue
            b, pos = self._where[h]
            self._dead.add(h)
            del self._tags[self._blocks[b].tags[pos]]

    def update_rows(self, handles, matrix, rhs) -> None:
        """Replace coefficients and right-hand sides of existing rows in place.

        Senses and tags are kept.  Blocks are copied on write, so models that
        share blocks through :meth:`copy` are unaffected.
        """
        handles = np.asarray(handles, dtype=int)
        mat = sp.csr_matrix(matrix)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (handles.size,))
        if mat.shape[0] != handles.size:
            raise ValueError("one matrix row per handle required")
        if mat.nnz and mat.indices.max() >= self.n_vars:
            raise UnknownVariable("row references a variable that does not exist")
        for h in handles:
            if int(h) not in self._where or int(h) in self._dead:
                raise KeyError(f"row handle {int(h)} is not active")
        by_block: dict[int, list[int]] = {}
        for k, h in enumerate(handles):
            by_block.setdefault(self._where[int(h)][0], []).append(k)
        for b, ks in by_block.items():
            blk = self._blocks[b]
            pos = np.array([self._where[int(handles[k])][1] for k in ks])
            n = max(blk.matrix.shape[1], mat.shape[1])
            cur = sp.csr_matrix((blk.matrix.data, blk.matrix.indices, blk.matrix.indptr),
                                shape=(blk.matrix.shape[0], n))
            new = sp.csr_matrix((mat.data, mat.indices, mat.indptr), shape=(mat.shape[0], n))[ks]
            if pos.size == cur.shape[0] and np.array_equal(pos, np.arange(pos.size)):
                merged = new
            else:
                keep = np.ones(cur.shape[0], dtype=bool)
                keep[pos] = False
                order = np.empty(cur.shape[0], dtype=int)
                order[np.flatnonzero(keep)] = np.arange(keep.sum())
                order[pos] = keep.sum() + np.arange(pos.size)
                merged = sp.vstack([cur[keep], new], format="csr")[order]
            new_rhs = blk.rhs.copy()
            new_rhs[pos] = rhs[ks]
            self._blocks[b] = _RowBlock(merged.tocsr(), blk.sense, new_rhs, blk.handles, blk.tags)

    def rows(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray, np.ndarray, list[str]]:
        """Active rows as ``(A, sense_codes, rhs, handles, tags)``."""
        mats, senses, rhs, handles, tags = [], [], [], [], []
        n = self.n_vars
        for blk in self._blocks:
            keep = np.array([h not in self._dead for h in blk.handles], dtype=bool)
            if not keep.any():
                continue
            m = blk.matrix[np.flatnonzero(keep)]
            m = sp.csr_matrix((m.data, m.indices, m.indptr), shape=(m.shape[0], n))
            mats.append(m)
            senses.append(blk.sense[keep])
            rhs.append(blk.rhs[keep])
            handles.append(blk.handles[keep])
            tags.extend(t for t, k in zip(blk.tags, keep) if k)
        if not mats:
            return (sp.csr_matrix((0, n)), np.zeros(0, int), np.zeros(0), np.zeros(0, int), [])
        return (sp.vstack(mats, format="csr"), np.concatenate(senses), np.concatenate(rhs),
                np.concatenate(handles), tags)

    def copy(self) -> "LpModel":
        other = LpModel(self.name)
        other._names = list(self._names)
        other._lower = list(self._lower)
        other._upper = list(self._upper)
        other._cost = list(self._cost)
        other.obj_constant = self.obj_constant
        other._blocks = list(self._blocks)  # blocks are never mutated in place
        other._tags = dict(self._tags)
        other._where = dict(self._where)
        other._dead = set(self._dead)
        other._next_handle = self._next_handle
        return other

    def is_active(self, handle: int) -> bool:
        return int(handle) in self._where and int(handle) not in self._dead


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None = None
    objective: float = math.nan
    row_duals: np.ndarray | None = None  # aligned with ``handles``
    handles: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    message: str = ""
    _pos: dict[int, int] = field(default_factory=dict, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def dual(self, handle) -> np.ndarray | float:
        """Dual value(s) for row handle(s)."""
        if not self._pos and self.handles is not None:
            self._pos = {int(h): k for k, h in enumerate(self.handles)}
        if np.ndim(handle) == 0:
            return float(self.row_duals[self._pos[int(handle)]])
        return np.array([self.row_duals[self._pos[int(h)]] for h in handle])


class LpBackend(Protocol):
    def solve(self, model: LpModel) -> LpSolution: ...


def _pow2(x: np.ndarray) -> np.ndarray:
    return np.exp2(np.round(np.log2(x)))


def _equilibrate(A: sp.csr_matrix, passes: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Row/column max-abs scaling factors (powers of two, so exact)."""
    m, n = A.shape
    r = np.ones(m)
    c = np.ones(n)
    absA = abs(A).tocsr()
    for _ in range(passes):
        scaled = sp.diags(r) @ absA @ sp.diags(c)
        rmax = scaled.max(axis=1).toarray().ravel()
        rmax[rmax == 0] = 1.0
        r = r / _pow2(rmax)
        scaled = sp.diags(r) @ absA @ sp.diags(c)
        cmax = scaled.max(axis=0).toarray().ravel()
        cmax[cmax == 0] = 1.0
        c = c / _pow2(cmax)
    return r, c


@dataclass
class ArraySolution:
    """Raw backend output on the row-range form ``row_lo <= A x <= row_hi``."""

    status: LpStatus
    x: np.ndarray | None = None
    row_duals: np.ndarray | None = None
    col_duals: np.ndarray | None = None
    message: str = ""


def _range_form(sense: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.where(sense < 0, -np.inf, rhs)
    hi = np.where(sense > 0, np.inf, rhs)
    return lo, hi


class _ScaledBackend:
    """Shared model handling: equilibration, objective scaling, unscaling.

    Subclasses implement :meth:`solve_arrays` on the range form.  Duals of a
    range row are returned as the derivative of the objective with respect to
    whichever bound is active, which is the package convention.
    """

    def __init__(self, scale: bool = True, tolerance: float = 1e-9,
                 time_limit: float | None = None, solver: str = "ipm",
                 crossover: bool = False, ipm_tolerance: float = 1e-7):
        self.scale = scale
        self.ipm_tolerance = ipm_tolerance
        self.solver = solver
        self.crossover = crossover
        self.tolerance = tolerance
        self.time_limit = time_limit

    def solve_arrays(self, c, A, row_lo, row_hi, lo, hi) -> ArraySolution:
        raise NotImplementedError

    def solve(self, model: LpModel) -> LpSolution:
        A, sense, rhs, handles, _ = model.rows()
        c = model.cost
        lo, hi = model.lower, model.upper
        if self.scale and A.shape[0]:
            r, s = _equilibrate(A)
        else:
            r, s = np.ones(A.shape[0]), np.ones(model.n_vars)
        cmax = float(np.max(np.abs(c))) if c.size and np.any(c) else 1.0
        obj_scale = float(_pow2(np.array([cmax]))[0])
        As = (sp.diags(r) @ A @ sp.diags(s)).tocsr()
        row_lo, row_hi = _range_form(sense, rhs)
        raw = self.solve_arrays(c * s / obj_scale, As, r * row_lo, r * row_hi, lo / s, hi / s)
        if raw.status is not LpStatus.OPTIMAL:
            return LpSolution(status=raw.status, message=raw.message, handles=handles)
        x = raw.x * s
        duals = raw.row_duals * r * obj_scale
        red = raw.col_duals * obj_scale / s
        return LpSolution(
            status=raw.status,
            x=x,
            objective=float(c @ x + model.obj_constant),
            row_duals=duals,
            handles=handles,
            reduced_costs=red,
            message=raw.message,
        )


class HighsBackend(_ScaledBackend):
    """Reference backend: HiGHS through its Python binding.

    Defaults to the interior point method without crossover, which on the SLP
    subproblems is much faster than simplex and returns a point near the
    centre of a degenerate optimal face, so successive iterates move less.
    """

    def solve_arrays(self, c, A, row_lo, row_hi, lo, hi) -> ArraySolution:
        import highspy

        A = sp.csr_matrix(A)
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("primal_feasibility_tolerance", self.tolerance)
        h.setOptionValue("dual_feasibility_tolerance", self.tolerance)
        h.setOptionValue("solver", self.solver)
        if self.solver == "ipm":
            h.setOptionValue("run_crossover", "on" if self.crossover else "off")
            h.setOptionValue("ipm_optimality_tolerance", self.ipm_tolerance)
        if self.time_limit:
            h.setOptionValue("time_limit", float(self.time_limit))
        lp = highspy.HighsLp()
        lp.num_col_ = A.shape[1]
        lp.num_row_ = A.shape[0]
        inf = highspy.kHighsInf
        lp.col_cost_ = np.asarray(c, dtype=float)
        lp.col_lower_ = np.where(np.isinf(lo), -inf, lo)
        lp.col_upper_ = np.where(np.isinf(hi), inf, hi)
        lp.row_lower_ = np.where(np.isinf(row_lo), -inf, row_lo)
        lp.row_upper_ = np.where(np.isinf(row_hi), inf, row_hi)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = A.indptr.astype(np.int32)
        lp.a_matrix_.index_ = A.indices.astype(np.int32)
        lp.a_matrix_.value_ = A.data.astype(float)
        h.passModel(lp)
        h.run()
        status, message = _highs_status(h)
        if status is not LpStatus.OPTIMAL:
            return ArraySolution(status, message=message)
        sol = h.getSolution()
        return ArraySolution(status, np.array(sol.col_value), np.array(sol.row_dual),
                             np.array(sol.col_dual), message)


def _highs_status(h) -> tuple[LpStatus, str]:
    import highspy

    codes = {
        highspy.HighsModelStatus.kOptimal: LpStatus.OPTIMAL,
        highspy.HighsModelStatus.kInfeasible: LpStatus.INFEASIBLE,
        highspy.HighsModelStatus.kUnbounded: LpStatus.UNBOUNDED,
    }
    ms = h.getModelStatus()
    if ms == highspy.HighsModelStatus.kUnboundedOrInfeasible:
        # rerun without presolve to tell the two apart
        h.setOptionValue("presolve", "off")
        h.run()
        h.setOptionValue("presolve", "choose")
        ms = h.getModelStatus()
        codes.pop(highspy.HighsModelStatus.kOptimal)
    return codes.get(ms, LpStatus.NUMERICAL_FAILURE), h.modelStatusToString(ms)


class LinprogBackend(_ScaledBackend):
    """Alternative backend through :func:`scipy.optimize.linprog`."""

    def __init__(self, method: str = "highs", **kwargs):
        super().__init__(**kwargs)
        self.method = method

    def solve_arrays(self, c, A, row_lo, row_hi, lo, hi) -> ArraySolution:
        A = sp.csr_matrix(A)
        eq = row_lo == row_hi
        has_up = ~eq & np.isfinite(row_hi)
        has_lo = ~eq & np.isfinite(row_lo)
        A_ub = sp.vstack([A[has_up], -A[has_lo]], format="csr")
        b_ub = np.concatenate([row_hi[has_up], -row_lo[has_lo]])
        options = {"primal_feasibility_tolerance": self.tolerance,
                   "dual_feasibility_tolerance": self.tolerance}
        if self.time_limit:
            options["time_limit"] = self.time_limit
        bounds = np.column_stack([np.where(np.isinf(lo), None, lo),
                                  np.where(np.isinf(hi), None, hi)])
        res = linprog(c, A_ub=A_ub if A_ub.shape[0] else None,
                      b_ub=b_ub if A_ub.shape[0] else None,
                      A_eq=A[eq] if eq.any() else None, b_eq=row_lo[eq] if eq.any() else None,
                      bounds=bounds, method=self.method, options=options)
        status = {0: LpStatus.OPTIMAL, 2: LpStatus.INFEASIBLE,
                  3: LpStatus.UNBOUNDED}.get(res.status, LpStatus.NUMERICAL_FAILURE)
        if status is not LpStatus.OPTIMAL:
            return ArraySolution(status, message=res.message)
        y = np.zeros(A.shape[0])
        if eq.any():
            y[eq] = res.eqlin.marginals
        if A_ub.shape[0]:
            m = res.ineqlin.marginals
            n_up = int(has_up.sum())
            y[has_up] += m[:n_up]
            y[has_lo] -= m[n_up:]
        z = res.lower.marginals + res.upper.marginals
        return ArraySolution(status, res.x, y, z, res.message)


_default_backend = HighsBackend()


def solve_lp(model: LpModel, backend: LpBackend | None = None) -> LpSolution:
    return (backend or _default_backend).solve(model)


def kkt_residuals(model: LpModel, sol: LpSolution) -> dict[str, float]:
    """Infinity-norm KKT residuals of an optimal solution, computed from scratch."""
    A, sense, rhs, _, _ = model.rows()
    x, lam = sol.x, sol.row_duals
    c, lo, hi = model.cost, model.lower, model.upper
    ax = A @ x
    slack = ax - rhs
    row_viol = np.where(sense < 0, np.maximum(slack, 0),
                        np.where(sense > 0, np.maximum(-slack, 0), np.abs(slack)))
    bound_viol = np.maximum(np.maximum(lo - x, x - hi), 0)
    primal = max(row_viol.max(initial=0.0), bound_viol.max(initial=0.0))

    sign_viol = np.where(sense < 0, np.maximum(lam, 0),
                         np.where(sense > 0, np.maximum(-lam, 0), 0.0))
    d = c - A.T @ lam
    d_pos, d_neg = np.maximum(d, 0), np.maximum(-d, 0)
    # a positive reduced cost needs a finite lower bound, a negative one an upper bound
    d_viol = np.where(np.isinf(lo), d_pos, 0.0) + np.where(np.isinf(hi), d_neg, 0.0)
    dual = max(sign_viol.max(initial=0.0), d_viol.max(initial=0.0))

    gap_lo = np.where(np.isinf(lo), 0.0, x - lo)
    gap_hi = np.where(np.isinf(hi), 0.0, hi - x)
    comp = max(
        np.abs(lam * np.where(sense == 0, 0.0, slack)).max(initial=0.0),
        (d_pos * gap_lo).max(initial=0.0),
        (d_neg * gap_hi).max(initial=0.0),
    )
    return {"primal": float(primal), "dual": float(dual), "complementarity": float(comp)}


def _fmt(v: float) -> str:
    return repr(float(v))


def to_lp_format(model: LpModel) -> str:
    """CPLEX LP text of the active model, for cross-checking with external tools."""
    A, sense, rhs, _, tags = model.rows()
    names = [n.replace(" ", "_") for n in model.names]
    out = io.StringIO()
    out.write(f"\\ {model.name}\nMinimize\n obj:")
    for j, cj in enumerate(model.cost):
        if cj:
            out.write(f" {'+' if cj >= 0 else '-'} {_fmt(abs(cj))} {names[j]}")
    if model.obj_constant:
        out.write(f" + {_fmt(model.obj_constant)} __const")
    out.write("\nSubject To\n")
    ops = {-1: "<=", 0: "=", 1: ">="}
    for i in range(A.shape[0]):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        terms = " ".join(
            f"{'+' if v >= 0 else '-'} {_fmt(abs(v))} {names[j]}"
            for j, v in zip(A.indices[lo:hi], A.data[lo:hi])
        ) or "0 " + names[0]
        out.write(f" {tags[i].replace(' ', '_')}: {terms} {ops[int(sense[i])]} {_fmt(rhs[i])}\n")
    out.write("Bounds\n")
    if model.obj_constant:
        out.write(" __const = 1\n")
    for j, (l, u) in enumerate(zip(model.lower, model.upper)):
        ls = "-inf" if np.isinf(l) else _fmt(l)
        us = "+inf" if np.isinf(u) else _fmt(u)
        out.write(f" {ls} <= {names[j]} <= {us}\n")
    out.write("End\n")
    return out.getvalue()
