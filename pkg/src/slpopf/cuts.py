"""First-order objects used by the SLP drivers.

Every function here is pure and returns plain coefficient data; turning a
:class:`Cut` into LP rows is the driver's job, since only it knows the
variable layout.  Coefficients are keyed by role names (``"w_i"``, ``"wr"``,
``"r"`` and so on) and the vectorised ``*_rows`` helpers return arrays so that
a whole family of branches can be linearised at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "DomainError",
    "DegenerateFlow",
    "CutKind",
    "Cut",
    "qol_value_grad",
    "soc_halfspace",
    "soc_hyperplane",
    "soc_rows",
    "project_to_disk",
    "thermal_halfspace",
    "thermal_rows",
    "atan2_taylor",
    "atan2_taylor_rows",
]

DEGENERATE_FLOW = 1e-9


class DomainError(ValueError):
    """Expansion point outside the domain of the linearised function."""


class DegenerateFlow(ValueError):
    """Flow vector too close to zero for a disk projection."""


class CutKind(str, Enum):
    SOC_HALFSPACE = "SocHalfspace"
    SOC_HYPERPLANE = "SocHyperplane"
    THERMAL_HALFSPACE = "ThermalHalfspace"
    ATAN2_PAIR = "Atan2Pair"


@dataclass(frozen=True)
class Cut:
    """An affine row ``sum(coeffs[v] * v) sense rhs`` over named roles.

    ``Atan2Pair`` carries two rows: ``coeffs``/``rhs`` for the upper side and
    ``coeffs_lower``/``rhs_lower`` for the lower side.
    """

    kind: CutKind
    coeffs: dict[str, float]
    sense: str
    rhs: float
    origin: int = 0
    coeffs_lower: dict[str, float] = field(default_factory=dict)
    rhs_lower: float = 0.0
    sense_lower: str = ">="

    def evaluate(self, values: dict[str, float]) -> float:
        """Left-hand side minus right-hand side at a point."""
        return sum(c * values[k] for k, c in self.coeffs.items()) - self.rhs

    def satisfied(self, values: dict[str, float], tol: float = 1e-12) -> bool:
        lhs = self.evaluate(values)
        if self.sense == "<=":
            ok = lhs <= tol
        elif self.sense == ">=":
            ok = lhs >= -tol
        else:
            ok = abs(lhs) <= tol
        if self.kind is CutKind.ATAN2_PAIR:
            low = sum(c * values[k] for k, c in self.coeffs_lower.items()) - self.rhs_lower
            ok = ok and low >= -tol
        return ok


def qol_value_grad(wr: float, wi: float, wj: float) -> tuple[float, np.ndarray]:
    """Value and gradient of ``(wr^2 + wi^2) / wj`` with respect to ``(wr, wi, wj)``."""
    if not wj > 0:
        raise DomainError(f"w_j must be positive, got {wj}")
    s = wr * wr + wi * wi
    f = s / wj
    return f, np.array([2.0 * wr / wj, 2.0 * wi / wj, -s / (wj * wj)])


def soc_rows(wr0, wi0, wj0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised linearisation coefficients ``(a_wr, a_wi, a_wj)``.

    The function is positively homogeneous of degree one, so the Taylor
    constant vanishes and ``f^a(w) = a_wr*wr + a_wi*wi + a_wj*wj``.
    """
    wr0 = np.asarray(wr0, dtype=float)
    wi0 = np.asarray(wi0, dtype=float)
    wj0 = np.asarray(wj0, dtype=float)
    if np.any(wj0 <= 0):
        raise DomainError("w_j must be positive at every expansion point")
    return 2.0 * wr0 / wj0, 2.0 * wi0 / wj0, -(wr0 * wr0 + wi0 * wi0) / (wj0 * wj0)


def soc_halfspace(wr: float, wi: float, wj: float, origin: int = 0) -> Cut:
    """Supporting halfspace ``f^a(w) <= w_i`` written as ``f^a(w) - w_i <= 0``."""
    a_wr, a_wi, a_wj = (float(v) for v in soc_rows(wr, wi, wj))
    return Cut(CutKind.SOC_HALFSPACE,
               {"wr": a_wr, "wi": a_wi, "w_j": a_wj, "w_i": -1.0}, "<=", 0.0, origin)


def soc_hyperplane(wr: float, wi: float, wj: float, origin: int = 0) -> Cut:
    """Hyperplane ``f^a(w) + r = w_i`` written as ``f^a(w) + r - w_i = 0``."""
    a_wr, a_wi, a_wj = (float(v) for v in soc_rows(wr, wi, wj))
    return Cut(CutKind.SOC_HYPERPLANE,
               {"wr": a_wr, "wi": a_wi, "w_j": a_wj, "w_i": -1.0, "r": 1.0}, "=", 0.0,
               origin)


def project_to_disk(p: float, q: float, s_max: float) -> tuple[float, float]:
    """Map a flow onto the circle of radius ``s_max`` along its own direction."""
    norm = math.hypot(p, q)
    if norm < DEGENERATE_FLOW:
        raise DegenerateFlow(f"flow norm {norm:.3g} too small to project")
    return s_max * p / norm, s_max * q / norm


def thermal_halfspace(p: float, q: float, s_max: float, origin: int = 0) -> Cut:
    """Supporting halfspace of the disk at the projection of ``(p, q)``.

    Kept in the unnormalised form ``2(p*·p + q*·q) <= 2 s_max^2``.
    """
    ps, qs = project_to_disk(p, q, s_max)
    return Cut(CutKind.THERMAL_HALFSPACE, {"p": 2.0 * ps, "q": 2.0 * qs}, "<=",
               2.0 * s_max * s_max, origin)


def thermal_rows(p, q, s_max) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised thermal cuts normalised to ``u_p*p + u_q*q <= s_max``.

    Same halfspace as :func:`thermal_halfspace` divided by ``2 s_max``, which
    keeps row magnitudes near one for the LP.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    norm = np.hypot(p, q)
    if np.any(norm < DEGENERATE_FLOW):
        raise DegenerateFlow("flow norm too small to project")
    return p / norm, q / norm, np.asarray(s_max, dtype=float)


def atan2_taylor(wi0, wr0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-order model of ``atan2(wi, wr)`` as ``(value0, d/dwi, d/dwr)``."""
    wi0 = np.asarray(wi0, dtype=float)
    wr0 = np.asarray(wr0, dtype=float)
    d = wr0 * wr0 + wi0 * wi0
    if np.any(d < 1e-12):
        raise DomainError("atan2 expansion point too close to the origin")
    return np.arctan2(wi0, wr0), wr0 / d, -wi0 / d


def atan2_taylor_rows(wr0: float, wi0: float, origin: int = 0) -> Cut:
    """Rows encoding ``|theta_i - theta_j - h^a(wi, wr)| <= r``.

    With ``h^a = h0 + a_wi*(wi - wi0) + a_wr*(wr - wr0)`` and ``a_wi*wi0 +
    a_wr*wr0 = 0`` the constant collapses to ``h0``:

        theta_i - theta_j - a_wi*wi - a_wr*wr - r <= h0
        theta_i - theta_j - a_wi*wi - a_wr*wr + r >= h0
    """
    h0, a_wi, a_wr = (float(v) for v in atan2_taylor(wi0, wr0))
    base = {"theta_i": 1.0, "theta_j": -1.0, "wi": -a_wi, "wr": -a_wr}
    return Cut(CutKind.ATAN2_PAIR, {**base, "r": -1.0}, "<=", h0, origin,
               coeffs_lower={**base, "r": 1.0}, rhs_lower=h0)
