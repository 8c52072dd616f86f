"""Command-line front end.

Subcommands: ``solve``, ``relax``, ``check``, ``price``, ``convert``,
``demo2d`` and ``batch``.  Exit codes: 0 on success, 2 on an iteration limit
or a failed check, 3 on an LP failure, 4 on bad input.  The log level comes
from the ``SLPOPF_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .analysis import extract_prices, load_oracle, optimality_gap, verify
from .case_io import CaseError, emit_json, load_case
from .formulation import MissingCurrentRating, Thermal
from .network import NetworkError, build_network
from .slp import (IterationLimit, SlpParams, SolveReport, Start, StartKind, Status,
                  run_algorithm1, solve, solve_appendix_c)

__all__ = ["main", "build_parser", "params_from_args", "batch", "demo2d", "prices_csv"]

log = logging.getLogger("slpopf")

EXIT_OK, EXIT_LIMIT, EXIT_LP, EXIT_INPUT = 0, 2, 3, 4
LOG_ENV = "SLPOPF_LOG_LEVEL"


class InputError(ValueError):
    """Anything wrong with the command line or the files it names."""


# -- argument parsing -------------------------------------------------------

def _add_params(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("algorithm parameters")
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--eps-th", type=float, default=1e-3)
    g.add_argument("--zeta", type=float, default=0.9)
    g.add_argument("--rho0", type=float, default=None,
                   help="initial penalty (default 10 * max(c2, c1))")
    g.add_argument("--gamma", type=float, default=5.0)
    g.add_argument("--rho-max-factor", type=float, default=None,
                   help="penalty cap as a multiple of rho0 (default gamma^4)")
    g.add_argument("--kmax", type=int, default=50)
    g.add_argument("--start", choices=["fs1", "fs2", "fs3", "dc", "random"], default="fs1")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--thermal", choices=[t.value for t in Thermal], default="mva")
    g.add_argument("--prune", action="store_true", help="drop long-slack halfspaces")
    g.add_argument("--cost-accuracy", type=float, default=1e-5)


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--csv-prices", metavar="PATH", help="also write a bus,LMP,QLMP table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slpopf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="AC OPF by sequential linear programming")
    p.add_argument("case")
    _add_params(p)
    _add_output(p)
    p.add_argument("--oracle", help="reference fixture (path or bundled name) for the gap")
    p.add_argument("--force-meshed", action="store_true",
                   help="use the meshed algorithm on radial networks too")

    p = sub.add_parser("relax", help="SOCP relaxation by accumulated halfspaces")
    p.add_argument("case")
    _add_params(p)
    _add_output(p)

    p = sub.add_parser("check", help="verify a solution against a case from scratch")
    p.add_argument("case")
    p.add_argument("solution", help="report JSON from solve, or a bare primal mapping")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--eps-th", type=float, default=1e-3)
    p.add_argument("--mismatch-tol", type=float, default=1e-4)
    p.add_argument("--out")

    p = sub.add_parser("price", help="solve and print nodal prices")
    p.add_argument("case")
    _add_params(p)
    _add_output(p)
    p.add_argument("--force-meshed", action="store_true")

    p = sub.add_parser("convert", help="MATPOWER case to canonical JSON")
    p.add_argument("case")
    p.add_argument("--out")

    p = sub.add_parser("demo2d", help="two-variable example from many random starts")
    p.add_argument("--rho", type=float, default=10.0)
    p.add_argument("--starts", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--out")

    p = sub.add_parser("batch", help="many starts per case; iteration and objective spread")
    p.add_argument("cases", nargs="*", help="cases to run (none gives an empty report)")
    _add_params(p)
    p.add_argument("--runs", type=int, default=100, help="random starts per case")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    return parser


def params_from_args(args: argparse.Namespace) -> SlpParams:
    try:
        return SlpParams(
            eps=args.eps, eps_th=args.eps_th, zeta=args.zeta, rho0=args.rho0,
            gamma=args.gamma, rho_max_factor=args.rho_max_factor, kmax=args.kmax,
            start=Start.parse(args.start, args.seed), thermal=Thermal(args.thermal),
            prune=args.prune, cost_accuracy=args.cost_accuracy,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# -- helpers -------------------------------------------------------------------

def _load_network(case: str):
    try:
        return build_network(load_case(case))
    except FileNotFoundError as exc:
        raise InputError(f"case not found: {exc}") from exc
    except (CaseError, NetworkError) as exc:
        raise InputError(f"{case}: {exc}") from exc


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text + ("" if text.endswith("\n") else "\n"), encoding="utf-8")
    else:
        sys.stdout.write(text + ("" if text.endswith("\n") else "\n"))


def prices_csv(report: SolveReport, bus_ids: Sequence[int]) -> str:
    pr = extract_prices(report.base_mva, report.duals)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bus", "lmp", "qlmp"])
    for b, lmp, qlmp in zip(bus_ids, pr.lmp, pr.qlmp):
        w.writerow([int(b), repr(float(lmp)), repr(float(qlmp))])
    return buf.getvalue()


def _status_code(report: SolveReport) -> int:
    return {Status.CONVERGED: EXIT_OK, Status.ITERATION_LIMIT: EXIT_LIMIT,
            Status.LP_FAILURE: EXIT_LP}[report.status]


def _emit_report(report: SolveReport, net, args) -> int:
    _write(emit_json(report), args.out)
    if getattr(args, "csv_prices", None) and report.duals is not None:
        _write(prices_csv(report, [b.number for b in net.buses]), args.csv_prices)
    if report.status is not Status.CONVERGED:
        print(f"{report.case}: {report.status.value} after {report.iterations} iterations"
              + (f" ({report.message})" if report.message else ""), file=sys.stderr)
    return _status_code(report)


# -- subcommands -----------------------------------------------------------------

def cmd_solve(args) -> int:
    net = _load_network(args.case)
    params = params_from_args(args)
    try:
        report = solve(net, params, force_meshed=args.force_meshed)
    except MissingCurrentRating as exc:
        raise InputError(str(exc)) from exc
    if args.oracle:
        try:
            oracle = load_oracle(args.oracle)
        except (OSError, KeyError, ValueError) as exc:
            raise InputError(f"oracle {args.oracle}: {exc}") from exc
        if report.converged:
            report.gap = optimality_gap(oracle.objective, report.objective)
    return _emit_report(report, net, args)


def cmd_relax(args) -> int:
    net = _load_network(args.case)
    try:
        report = run_algorithm1(net, params_from_args(args))
    except MissingCurrentRating as exc:
        raise InputError(str(exc)) from exc
    return _emit_report(report, net, args)


def _primal_from_json(data: Any) -> dict[str, Any]:
    if isinstance(data, dict) and "solution" in data:
        data = data["solution"].get("primal")
    if not isinstance(data, dict):
        raise InputError("solution file has no primal values")
    missing = [k for k in ("w", "wr", "wi", "pg", "qg") if data.get(k) is None]
    if missing:
        raise InputError(f"solution is missing {', '.join(missing)}")
    return data


def cmd_check(args) -> int:
    net = _load_network(args.case)
    try:
        data = json.loads(Path(args.solution).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read solution: {exc}") from exc
    primal = _primal_from_json(data)
    try:
        rep = verify(net, primal, args.eps, args.eps_th, args.mismatch_tol)
    except (ValueError, IndexError) as exc:
        raise InputError(f"solution does not match {net.name}: {exc}") from exc
    _write(json.dumps(rep.to_dict(), indent=1, sort_keys=True), args.out)
    for v in rep.violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_LIMIT


def cmd_price(args) -> int:
    net = _load_network(args.case)
    report = solve(net, params_from_args(args), force_meshed=args.force_meshed)
    if report.duals is None:
        print(f"{report.case}: {report.status.value}, no prices", file=sys.stderr)
        return _status_code(report)
    text = prices_csv(report, [b.number for b in net.buses])
    _write(text, args.out)
    if args.csv_prices:
        _write(text, args.csv_prices)
    return _status_code(report)


def cmd_convert(args) -> int:
    try:
        case = load_case(args.case)
    except FileNotFoundError as exc:
        raise InputError(f"case not found: {exc}") from exc
    except CaseError as exc:
        raise InputError(f"{args.case}: {exc}") from exc
    _write(emit_json(case), args.out)
    return EXIT_OK


def demo2d(rho: float, starts: int, seed: int | None, eps: float = 1e-4) -> dict[str, Any]:
    """Iteration statistics of the plain and projection variants from random starts."""
    if rho <= 0 or starts < 0:
        raise InputError("rho must be positive and starts non-negative")
    rng = np.random.default_rng(seed)
    points = rng.uniform(-10.0, 10.0, size=(starts, 2))
    out: dict[str, Any] = {"rho": rho, "starts": starts, "seed": seed, "eps": eps}
    for label, proj in (("plain", False), ("projection", True)):
        its, fails = [], 0
        for x0 in points:
            try:
                its.append(solve_appendix_c(rho, x0, use_projection=proj, eps=eps).iterations)
            except (IterationLimit, RuntimeError):
                fails += 1
        out[label] = {
            "converged": len(its), "failed": fails,
            "mean_iterations": float(np.mean(its)) if its else None,
            "min_iterations": int(min(its)) if its else None,
            "max_iterations": int(max(its)) if its else None,
        }
    if out["plain"]["mean_iterations"] and out["projection"]["mean_iterations"]:
        out["ratio"] = out["plain"]["mean_iterations"] / out["projection"]["mean_iterations"]
    return out


def cmd_demo2d(args) -> int:
    summary = demo2d(args.rho, args.starts, args.seed, args.eps)
    _write(json.dumps(summary, indent=1, sort_keys=True), args.out)
    fails = summary["plain"]["failed"] + summary["projection"]["failed"]
    return EXIT_OK if fails == 0 else EXIT_LIMIT


def _batch_job(job: tuple[str, SlpParams]) -> dict[str, Any]:
    case, params = job
    try:
        report = solve(build_network(load_case(case)), params)
        return {"case": case, "start": report.start, "status": report.status.value,
                "iterations": report.iterations, "objective": report.objective}
    except Exception as exc:  # recorded per row, the batch carries on
        return {"case": case, "start": params.start.label(), "status": "Error",
                "error": f"{type(exc).__name__}: {exc}"}


def batch(cases: Sequence[str], params: SlpParams, runs: int, seed: int | None = None,
          workers: int = 1) -> dict[str, Any]:
    """Random starts per case; per-case iteration range and objective spread.

    Run ``r`` uses ``v ~ U(v_min, v_max)`` with seed ``seed + r`` whatever
    start ``params`` names.
    """
    base = 0 if seed is None else seed
    jobs = []
    for case in cases:
        for r in range(runs):
            jobs.append((case, replace(params, start=Start(StartKind.RANDOM, base + r))))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_batch_job, jobs))
    else:
        rows = [_batch_job(j) for j in jobs]
    summary = {}
    for case in cases:
        mine = [r for r in rows if r["case"] == case]
        ok = [r for r in mine if r["status"] == Status.CONVERGED.value]
        entry: dict[str, Any] = {"runs": len(mine), "converged": len(ok),
                                 "failed": len(mine) - len(ok)}
        if ok:
            its = [r["iterations"] for r in ok]
            objs = np.array([r["objective"] for r in ok])
            entry.update(min_iterations=min(its), mean_iterations=float(np.mean(its)),
                         max_iterations=max(its), min_objective=float(objs.min()),
                         max_objective=float(objs.max()),
                         objective_spread=float((objs.max() - objs.min()) / abs(objs.mean()))
                         if objs.mean() else 0.0)
        summary[case] = entry
    return {"summary": summary, "runs": rows}


def cmd_batch(args) -> int:
    if args.runs < 0 or args.workers < 1:
        raise InputError("runs must be non-negative and workers positive")
    params = params_from_args(args)
    result = batch(args.cases, params, args.runs, args.seed, args.workers)
    _write(json.dumps(result, indent=1, sort_keys=True), args.out)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "relax": cmd_relax, "check": cmd_check, "price": cmd_price,
            "convert": cmd_convert, "demo2d": cmd_demo2d, "batch": cmd_batch}


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors itself
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
