"""Batch runner: scenario file in, one report per scenario and a summary CSV out.

Exit codes: 0 when every verdict matched and every residual is within
tolerance, 1 on a mismatch, 2 on I/O or schema errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .bsde import BsdeSolution, Driver, constant_spec, export_csv, random_spec, solve_and_verify
from .enlargement import azema_bundle
from .invariance import invariance_report
from .lattice import MARTINGALE_TOL
from .scenarios import KINDS, ScenarioDescriptor, ScenarioError, generate

SCHEMA_VERSION = 1
SUITES = ("azema", "invariance", "bsde", "all")
ENV_TOL = "FILTRATIONLAB_TOL"
BUNDLED = {"@examples": "worked_examples.json"}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "scenarios"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "scenarios": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "kind": {"enum": list(KINDS)},
                    "params": {"type": "object"},
                    "horizon": {"type": "integer", "minimum": 1},
                    "expected": {
                        "type": "object",
                        "required": ["verdict"],
                        "additionalProperties": False,
                        "properties": {
                            "verdict": {"enum": ["invariant", "not_invariant"]},
                            "pseudo_stopping": {"type": ["boolean", "null"]},
                            "clause": {"type": ["string", "null"]},
                        },
                    },
                    "bsde": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "driver": {"type": "object"},
                            "recovery": {"type": "number"},
                            "random_inputs": {"type": "boolean"},
                        },
                    },
                },
            },
        },
    },
}


class InputError(Exception):
    """Unreadable or invalid scenario file (exit code 2)."""


def _location(err: jsonschema.ValidationError) -> str:
    path = ""
    for p in err.absolute_path:
        path += f"[{p}]" if isinstance(p, int) else (f".{p}" if path else str(p))
    return path or "<root>"


def load_scenarios(path: str) -> list[dict]:
    if path in BUNDLED:
        text = resources.files("filtrationlab").joinpath("data", BUNDLED[path]).read_text()
        path = f"<bundled {path}>"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"{path}: cannot read scenario file: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc
    errors = sorted(jsonschema.Draft202012Validator(SCENARIO_SCHEMA).iter_errors(doc),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"{path}: field {_location(e)}: {e.message}" for e in errors]
        raise InputError("\n".join(lines))
    ids = [s["id"] for s in doc["scenarios"]]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise InputError(f"{path}: field scenarios: duplicate ids {dup}")
    return doc["scenarios"]


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _verdict_ok(expected: dict | None, inv: dict | None) -> tuple[bool, str]:
    if expected is None or inv is None:
        return True, ""
    if expected["verdict"] != inv["verdict"]:
        return False, f"verdict expected {expected['verdict']} got {inv['verdict']}"
    ps = expected.get("pseudo_stopping")
    got = inv["diagnostics"].get("pseudo_stopping")
    if ps is not None and got is not None and ps != got:
        return False, f"pseudo_stopping expected {ps} got {got}"
    return True, ""


def run_one(entry: dict, suite: str, tol: float, seed: int, out: str | None, fmt: str) -> dict:
    """Run the requested suites on one scenario entry and write its report."""
    start = time.perf_counter()
    sid = entry["id"]
    try:
        sc = generate(ScenarioDescriptor(entry["kind"], dict(entry.get("params", {})), sid))
    except (ScenarioError, ValueError, TypeError) as exc:
        return {"id": sid, "error": f"field scenarios[{sid}].params: {exc}"}
    T = int(entry.get("horizon", sc.horizon))
    if T > sc.space.horizon:
        return {"id": sid, "error": f"field scenarios[{sid}].horizon: {T} beyond the space horizon"}
    expected = entry.get("expected") or sc.expected.to_json()
    b = azema_bundle(sc.pair)
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "scenario_id": sid,
        "kind": sc.kind,
        "params": sc.params,
        "horizon": T,
        "space": {"n_atoms": sc.space.n, "space_horizon": sc.space.horizon,
                  "atoms": list(sc.space.atoms)},
        "condition_B": True,
        "expected": expected,
    }
    residuals: dict[str, float] = {}
    if suite in ("azema", "all"):
        az = b.invariant_residuals()
        report["azema"] = {
            "S": _arr(b.S.values), "mart_part": _arr(b.mart_part.values), "D": _arr(b.D.values),
            "pS": _arr(b.pS.values), "Qcal": _arr(b.Qcal.values), "Dcal": _arr(b.Dcal.values),
            "A_dual_opt": _arr(b.A_dual_opt.values), "v": _arr(b.v.values),
            "residuals": {k: float(v) for k, v in sorted(az.items())},
        }
        residuals.update({f"azema.{k}": v for k, v in az.items()})
    inv = None
    rep = None
    if suite in ("invariance", "bsde", "all"):
        rep = invariance_report(sc.pair, T, tol, bundle=b)
        if suite != "bsde":
            inv = rep.to_json()
            report["invariance"] = inv
            residuals.update({f"invariance.{k}": v for k, v in rep.residuals.items()})
    sol: BsdeSolution | None = None
    if suite in ("bsde", "all"):
        cfg = entry.get("bsde", {})
        driver = Driver(**cfg.get("driver", {"name": "funding", "rate": 0.05, "borrow": 0.2, "lend": 0.1}))
        if cfg.get("random_inputs", True):
            rng = np.random.default_rng([seed, zlib.crc32(sid.encode())])
            spec = random_spec(b, rng, driver, T)
        else:
            spec = constant_spec(b, cfg.get("recovery", 1.0), driver, T)
        sol = solve_and_verify(b, spec, rep.witness if rep is not None else None)
        report["bsde"] = {"driver": driver.to_json(),
                          "residuals": {k: float(v) for k, v in sorted(sol.residuals.items())},
                          "Z0": _arr(sol.Z[0])}
        residuals.update({f"bsde.{k}": v for k, v in sol.residuals.items()})
    matched, why = _verdict_ok(expected, inv)
    max_res = max(residuals.values()) if residuals else 0.0
    report["verdict_matched"] = matched
    report["max_residual"] = float(max_res)
    report["within_tolerance"] = bool(max_res <= tol)
    if out:
        _write_outputs(Path(out), sid, report, b, sol, fmt)
    return {
        "id": sid,
        "verdict": inv["verdict"] if inv else "",
        "expected": expected["verdict"] if inv else "",
        "matched": matched,
        "why": why,
        "max_residual": float(max_res),
        "within_tolerance": bool(max_res <= tol),
        "wall_ms": round((time.perf_counter() - start) * 1000.0, 3),
    }


def _safe_name(sid: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in sid)


def _write_outputs(out: Path, sid: str, report: dict, b, sol, fmt: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    name = _safe_name(sid)
    if fmt == "json":
        (out / f"{name}.json").write_text(json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n")
    else:
        flat = {k: v for k, v in report.items() if k not in ("azema", "space")}
        (out / f"{name}.json").write_text(json.dumps(flat, sort_keys=True, separators=(",", ":")) + "\n")
        with open(out / f"{name}.azema.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            cols = ("S", "mart_part", "D", "pS", "Qcal", "Dcal", "A_dual_opt", "v")
            wr.writerow(("t", "atom") + cols)
            procs = [getattr(b, c).values for c in cols]
            for t in range(b.space.horizon + 1):
                for i, atom in enumerate(b.space.atoms):
                    wr.writerow([t, atom] + [repr(float(p[t, i])) for p in procs])
    if sol is not None:
        export_csv(out / f"{name}.bsde.csv", b, sol)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="filtrationlab", description=__doc__.splitlines()[0])
    p.add_argument("--scenarios", required=True,
                   help="scenario JSON file, or @examples for the bundled corpus")
    p.add_argument("--suite", choices=SUITES, default="all")
    p.add_argument("--tol", type=float, default=None,
                   help=f"residual tolerance (default ${ENV_TOL} or {MARTINGALE_TOL})")
    p.add_argument("--seed", type=int, default=0, help="seed for random BSDE inputs")
    p.add_argument("--out", default=None, help="output directory for reports")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def resolve_tol(cli_tol: float | None) -> float:
    if cli_tol is not None:
        return cli_tol
    env = os.environ.get(ENV_TOL)
    if env:
        try:
            return float(env)
        except ValueError as exc:
            raise InputError(f"{ENV_TOL}={env!r} is not a number") from exc
    return MARTINGALE_TOL


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        tol = resolve_tol(args.tol)
        entries = load_scenarios(args.scenarios)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return 2
    job = (args.suite, tol, args.seed, args.out, args.format)
    if args.jobs == 1 or len(entries) <= 1:
        results = [run_one(e, *job) for e in entries]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(run_one, e, *job) for e in entries]
            results = [f.result() for f in futures]

    errors = [r for r in results if "error" in r]
    for r in errors:
        print(f"error: {r['error']}", file=sys.stderr)
    if errors:
        return 2
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["scenario_id", "verdict", "expected", "max_residual", "wall_ms"])
            for r in results:
                wr.writerow([r["id"], r["verdict"], r["expected"], repr(r["max_residual"]), r["wall_ms"]])
    code = 0
    for r in results:
        status = "ok"
        if not r["matched"]:
            status = f"MISMATCH ({r['why']})"
            code = 1
        elif not r["within_tolerance"]:
            status = f"RESIDUAL {r['max_residual']:.3e} > {tol:.1e}"
            code = 1
        print(f"{r['id']}: {r['verdict'] or '-'} [{status}]")
        if status != "ok":
            print(f"mismatch: scenario {r['id']}: {status}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
