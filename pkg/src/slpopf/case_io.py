"""Reading MATPOWER/PGLib ``.m`` case files and canonical JSON output.

Only the subset of MATLAB needed by the MATPOWER data files is understood:
matrix literals assigned to ``mpc.<field>``, scalar assignments, and the
column-rescaling statements some distribution cases append after the data
(ohm to per-unit impedance conversion, kW to MW loads, power-factor loads).
"""

from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "CaseError",
    "MalformedMatrix",
    "MissingSection",
    "UnsupportedCostModel",
    "InvalidCase",
    "RawCase",
    "parse_case",
    "load_case",
    "bundled_case_path",
    "emit_json",
    "parse_json",
    "BUS_COLUMNS",
    "BRANCH_COLUMNS",
    "GEN_COLUMNS",
]


class CaseError(ValueError):
    """Base class for case-file problems."""


class MalformedMatrix(CaseError):
    pass


class MissingSection(CaseError):
    pass


class UnsupportedCostModel(CaseError):
    pass


class InvalidCase(CaseError):
    pass


# 1-based MATPOWER column indices (idx_bus / idx_brch / idx_gen / idx_cost).
BUS_COLUMNS = {
    "BUS_I": 1, "BUS_TYPE": 2, "PD": 3, "QD": 4, "GS": 5, "BS": 6,
    "BUS_AREA": 7, "VM": 8, "VA": 9, "BASE_KV": 10, "ZONE": 11,
    "VMAX": 12, "VMIN": 13,
}
BRANCH_COLUMNS = {
    "F_BUS": 1, "T_BUS": 2, "BR_R": 3, "BR_X": 4, "BR_B": 5, "RATE_A": 6,
    "RATE_B": 7, "RATE_C": 8, "TAP": 9, "SHIFT": 10, "BR_STATUS": 11,
    "ANGMIN": 12, "ANGMAX": 13,
}
GEN_COLUMNS = {
    "GEN_BUS": 1, "PG": 2, "QG": 3, "QMAX": 4, "QMIN": 5, "VG": 6,
    "MBASE": 7, "GEN_STATUS": 8, "PMAX": 9, "PMIN": 10,
}
COST_COLUMNS = {"MODEL": 1, "STARTUP": 2, "SHUTDOWN": 3, "NCOST": 4, "COST": 5}
_CONSTANTS = {
    **BUS_COLUMNS, **BRANCH_COLUMNS, **GEN_COLUMNS, **COST_COLUMNS,
    "PQ": 1, "PV": 2, "REF": 3, "NONE": 4, "PW_LINEAR": 1, "POLYNOMIAL": 2,
}
_MIN_COLUMNS = {"bus": 13, "branch": 11, "gen": 10, "gencost": 5}
_REQUIRED = ("bus", "gen", "branch", "gencost")


@dataclass(frozen=True, eq=False)
class RawCase:
    """Case data exactly as read, in MATPOWER units (MW, MVAr, degrees)."""

    name: str
    base_mva: float
    bus: np.ndarray
    branch: np.ndarray
    gen: np.ndarray
    gencost: np.ndarray
    version: str = "2"

    @property
    def branch_in_service(self) -> np.ndarray:
        return self.branch[:, BRANCH_COLUMNS["BR_STATUS"] - 1] > 0

    @property
    def gen_in_service(self) -> np.ndarray:
        return self.gen[:, GEN_COLUMNS["GEN_STATUS"] - 1] > 0

    @property
    def bus_in_service(self) -> np.ndarray:
        return self.bus[:, BUS_COLUMNS["BUS_TYPE"] - 1] != 4

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RawCase):
            return NotImplemented
        return (
            self.name == other.name
            and self.base_mva == other.base_mva
            and self.version == other.version
            and all(
                a.shape == b.shape and np.array_equal(a, b)
                for a, b in zip(
                    (self.bus, self.branch, self.gen, self.gencost),
                    (other.bus, other.branch, other.gen, other.gencost),
                )
            )
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "meta": {
                "kind": "case",
                "name": self.name,
                "base_mva": self.base_mva,
                "version": self.version,
            },
            "network": {
                "bus": self.bus.tolist(),
                "branch": self.branch.tolist(),
                "gen": self.gen.tolist(),
                "gencost": self.gencost.tolist(),
            },
            "solution": None,
            "pricing": None,
            "trace": [],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RawCase":
        meta, net = data["meta"], data["network"]

        def mat(key: str) -> np.ndarray:
            rows = net[key]
            return np.array(rows, dtype=float).reshape(len(rows), -1)

        case = cls(
            name=meta["name"],
            base_mva=float(meta["base_mva"]),
            bus=mat("bus"),
            branch=mat("branch"),
            gen=mat("gen"),
            gencost=mat("gencost"),
            version=str(meta.get("version", "2")),
        )
        _validate(case)
        return case


# ---------------------------------------------------------------------------
# lexical helpers


def _strip_comments(text: str) -> str:
    out = []
    for line in text.splitlines():
        in_str = False
        cut = len(line)
        for pos, ch in enumerate(line):
            if ch == "'":
                # transpose after identifiers is not used in case files
                in_str = not in_str
            elif ch == "%" and not in_str:
                cut = pos
                break
        out.append(line[:cut])
    return "\n".join(out)


def _statements(text: str) -> list[str]:
    """Split at top-level ';' / newlines, honouring brackets and '...'."""
    text = re.sub(r"\.\.\.[^\n]*\n", " ", text)
    stmts, buf, depth = [], [], 0
    for ch in text:
        if ch in "[{(":
            depth += 1
        elif ch in "]})":
            depth -= 1
        if depth == 0 and ch in ";\n":
            stmt = "".join(buf).strip()
            if stmt:
                stmts.append(stmt)
            buf = []
        else:
            buf.append(ch)
    tail = "".join(buf).strip()
    if tail:
        stmts.append(tail)
    return stmts


_NUMBER = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


def _parse_matrix(field_name: str, body: str) -> np.ndarray:
    rows = []
    for raw in re.split(r"[;\n]", body):
        tokens = [t for t in re.split(r"[\s,]+", raw.strip()) if t]
        if not tokens:
            continue
        values = []
        for tok in tokens:
            low = tok.lower()
            if low in ("inf", "+inf"):
                values.append(math.inf)
            elif low == "-inf":
                values.append(-math.inf)
            elif _NUMBER.match(tok):
                values.append(float(tok))
            else:
                raise MalformedMatrix(f"mpc.{field_name}: bad entry {tok!r}")
        rows.append(values)
    if not rows:
        return np.zeros((0, _MIN_COLUMNS.get(field_name, 0)))
    width = len(rows[0])
    for k, row in enumerate(rows):
        if len(row) != width:
            raise MalformedMatrix(
                f"mpc.{field_name}: row {k + 1} has {len(row)} entries, expected {width}"
            )
    return np.array(rows, dtype=float)


# ---------------------------------------------------------------------------
# tiny evaluator for the post-processing statements

_SAFE_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "asin": np.arcsin,
    "acos": np.arccos, "atan": np.arctan, "sqrt": np.sqrt, "abs": np.abs,
    "exp": np.exp, "log": np.log,
}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.List, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
    ast.USub, ast.UAdd,
)
_INDEXED = re.compile(r"mpc\.(\w+)\s*\(")


def _to_python(expr: str) -> str:
    expr = _INDEXED.sub(lambda m: f"_idx('{m.group(1)}', ", expr)
    expr = re.sub(r"mpc\.(\w+)", r"_field('\1')", expr)
    expr = re.sub(r"(?<=[(,])\s*:\s*(?=[,)])", "_ALL", expr)
    # '[A B]' column lists -> '[A, B]'
    expr = re.sub(
        r"\[([^\[\]]*)\]",
        lambda m: "[" + ", ".join(t for t in re.split(r"[\s,]+", m.group(1).strip()) if t) + "]",
        expr,
    )
    expr = expr.replace(".^", "**").replace("^", "**").replace(".*", "*").replace("./", "/")
    return expr


class _Evaluator:
    _ALL = object()

    def __init__(self, fields: dict[str, Any]):
        self.fields = fields
        self.scope: dict[str, Any] = {}

    def _index(self, rows: Any, cols: Any) -> tuple[Any, Any]:
        def conv(sel: Any) -> Any:
            if sel is self._ALL:
                return slice(None)
            if isinstance(sel, list):
                return [int(s) - 1 for s in sel]
            return int(sel) - 1

        return conv(rows), conv(cols)

    def eval(self, expr: str) -> Any:
        tree = ast.parse(_to_python(expr).strip(), mode="eval")
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise MalformedMatrix(f"unsupported expression: {expr!r}")
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name):
                    raise MalformedMatrix(f"unsupported call in {expr!r}")
        namespace = {
            **_CONSTANTS, **_SAFE_FUNCS, **self.scope,
            "_ALL": self._ALL, "pi": math.pi,
            "_field": lambda name: self.fields[name],
            "_idx": lambda name, r, c: self.fields[name][self._index(r, c)],
        }
        try:
            return eval(compile(tree, "<case>", "eval"), {"__builtins__": {}}, namespace)
        except (KeyError, NameError, IndexError, TypeError) as exc:
            raise MalformedMatrix(f"cannot evaluate {expr!r}: {exc}") from exc

    def assign(self, lhs: str, rhs: str) -> None:
        value = self.eval(rhs)
        m = re.fullmatch(r"mpc\.(\w+)\s*\((.*)\)", lhs)
        if m:
            name, args = m.group(1), m.group(2)
            if name not in self.fields:
                raise MissingSection(f"mpc.{name} referenced before definition")
            rows, cols = (self.eval(a) if a.strip() != ":" else self._ALL
                          for a in _split_args(args))
            self.fields[name][self._index(rows, cols)] = value
        elif re.fullmatch(r"mpc\.(\w+)", lhs):
            self.fields[lhs[4:]] = value
        elif re.fullmatch(r"[A-Za-z_]\w*", lhs):
            self.scope[lhs] = value
        else:
            raise MalformedMatrix(f"unsupported assignment target {lhs!r}")


def _split_args(args: str) -> list[str]:
    parts, buf, depth = [], [], 0
    for ch in args:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


# ---------------------------------------------------------------------------


def parse_case(text: str, name: str | None = None) -> RawCase:
    """Parse MATPOWER case-file text into a validated :class:`RawCase`."""
    fields: dict[str, Any] = {}
    evaluator = _Evaluator(fields)
    case_name = name
    version = "2"
    for stmt in _statements(_strip_comments(text)):
        head = stmt.split(None, 1)[0]
        if head == "function":
            m = re.search(r"=\s*(\w+)", stmt)
            if m and case_name is None:
                case_name = m.group(1)
            continue
        if head in ("end", "return", "define_constants"):
            continue
        if "=" not in stmt or stmt.startswith("["):
            # e.g. '[PQ, PV, ...] = idx_bus' -- column names are built in
            continue
        lhs, rhs = (s.strip() for s in stmt.split("=", 1))
        m = re.fullmatch(r"mpc\.(\w+)", lhs)
        if m and rhs.startswith("["):
            if not rhs.endswith("]"):
                raise MalformedMatrix(f"{lhs}: unterminated matrix")
            fields[m.group(1)] = _parse_matrix(m.group(1), rhs[1:-1])
        elif m and rhs.startswith("{"):
            continue  # cell arrays (bus_name etc.)
        elif m and rhs.startswith("'"):
            if m.group(1) == "version":
                version = rhs.strip("'")
        elif m and m.group(1) in ("baseMVA",) and _NUMBER.match(rhs):
            fields["baseMVA"] = float(rhs)
        else:
            evaluator.assign(lhs, rhs)

    if "baseMVA" not in fields:
        raise MissingSection("mpc.baseMVA")
    for key in _REQUIRED:
        if key not in fields:
            raise MissingSection(f"mpc.{key}")
    case = RawCase(
        name=case_name or "case",
        base_mva=float(fields["baseMVA"]),
        bus=np.asarray(fields["bus"], dtype=float),
        branch=np.asarray(fields["branch"], dtype=float),
        gen=np.asarray(fields["gen"], dtype=float),
        gencost=np.asarray(fields["gencost"], dtype=float),
        version=version,
    )
    _validate(case)
    return case


def _validate(case: RawCase) -> None:
    if not case.base_mva > 0:
        raise InvalidCase("baseMVA must be positive")
    for key in _REQUIRED:
        mat = getattr(case, key)
        if mat.ndim != 2 or (mat.shape[0] and mat.shape[1] < _MIN_COLUMNS[key]):
            raise MalformedMatrix(
                f"mpc.{key}: expected at least {_MIN_COLUMNS[key]} columns"
            )
    if case.gencost.shape[0] not in (case.gen.shape[0], 2 * case.gen.shape[0]):
        raise MalformedMatrix("mpc.gencost: row count must match mpc.gen")
    models = case.gencost[:, 0]
    if np.any(models == 1):
        raise UnsupportedCostModel("piecewise-linear generator costs (MODEL=1) are not supported")
    if np.any(models != 2):
        raise UnsupportedCostModel(f"unknown cost model(s) {sorted(set(models) - {2.0})}")
    ncost = case.gencost[:, 3].astype(int)
    if np.any(ncost > 3):
        raise UnsupportedCostModel("polynomial costs above degree 2 are not supported")
    if np.any(4 + ncost > case.gencost.shape[1]):
        raise MalformedMatrix("mpc.gencost: NCOST exceeds row length")
    ids = set(case.bus[:, 0].astype(int).tolist())
    if len(ids) != case.bus.shape[0]:
        raise InvalidCase("duplicate bus numbers")
    for col in (0, 1):
        missing = set(case.branch[:, col].astype(int).tolist()) - ids
        if missing:
            raise InvalidCase(f"branch references unknown bus(es) {sorted(missing)[:5]}")
    missing = set(case.gen[:, 0].astype(int).tolist()) - ids
    if missing:
        raise InvalidCase(f"generator references unknown bus(es) {sorted(missing)[:5]}")
    types = case.bus[:, 1]
    nref = int(np.sum(types == 3))
    if nref != 1:
        raise InvalidCase(f"expected exactly one reference bus, found {nref}")


def load_case(path: str | Path) -> RawCase:
    """Read a case from a ``.m`` or canonical ``.json`` file, or a bundled case name."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_case_path(str(path))
        if bundled is None:
            raise FileNotFoundError(path)
        p = bundled
    text = p.read_text(encoding="utf-8", errors="replace")
    if p.suffix == ".json":
        return parse_json(text)
    return parse_case(text, name=p.stem)


# short names used in the literature for bundled files
CASE_ALIASES = {"case33": "case33bw", "case119": "case118zh", "case24": "case24_ieee_rts",
                "case6": "case6ww"}


def bundled_case_path(name: str) -> Path | None:
    base = Path(__file__).parent / "data" / "cases"
    stem = name[:-2] if name.endswith(".m") else name
    stem = CASE_ALIASES.get(stem, CASE_ALIASES.get(f"case{stem}", stem))
    for candidate in (stem, f"case{stem}"):
        p = base / f"{candidate}.m"
        if p.exists():
            return p
    return None


# ---------------------------------------------------------------------------
# JSON


def _clean(obj: Any) -> Any:
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def emit_json(obj: Any) -> str:
    """Deterministic, key-sorted JSON for a case or any object with ``to_dict``.

    Non-finite floats become ``null``; bare NaN never appears in the output.
    Infinite bounds in case matrices are rare and are not round-tripped.
    """
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    return json.dumps(_clean(data), sort_keys=True, indent=1, allow_nan=False)


def parse_json(text: str) -> RawCase:
    return RawCase.from_dict(json.loads(text))
