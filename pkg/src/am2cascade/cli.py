"""Command-line entry point.

Exit codes: 0 success, 1 a verify property failed, 2 configuration error,
3 internal diagnostic (verdict disagreement), 4 integrator stiffness (the
partial trajectory is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig
from .diagram import (
    Axis,
    GridError,
    boundary_curves,
    hopf_map,
    scan,
    to_svg,
    traced_curves,
    transitions,
)
from .equilibria import enumerate_all, residual
from .model import STATE_NAMES, ParameterError, washout_state
from .sampling import state_in_omega
from .simulate import StiffnessError, attribute_convergence, integrate, monitor_invariants
from .stability import (
    BLOCKS,
    HOPF_FAMILIES,
    StabilityDisagreement,
    classify,
    ordered_branch_stability,
)
from .verify import run_suites

log = logging.getLogger("am2cascade")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIAGNOSTIC, EXIT_STIFF = 0, 1, 2, 3, 4

EQ_COLUMNS = (
    ["label", "family", "branch", "n_branches", "exists", "marginal", "reason"]
    + list(STATE_NAMES)
    + ["residual", "verdict", "table_verdict", "agreement", "hopf_candidate"]
    + [f"{name}_{q}" for name, _ in BLOCKS for q in ("trace", "det")]
)


class DiagnosticError(RuntimeError):
    pass


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float | np.floating):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, list | tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, float | np.floating):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


# commands --------------------------------------------------------------------


def cmd_equilibria(cfg: RunConfig, out: Path, **_) -> int:
    p = cfg.params
    eqs = enumerate_all(p)
    rows, records, problems = [], [], []
    for e in eqs:
        rec = {
            "label": e.label,
            "family": e.family,
            "branch": e.branch,
            "n_branches": e.n_branches,
            "exists": e.exists,
            "marginal": e.marginal,
            "reason": e.reason,
            "state": None,
        }
        row = [e.label, e.family, e.branch, e.n_branches, e.exists, e.marginal, e.reason or ""]
        if e.exists:
            v = classify(p, e)
            if not v.agreement:
                problems.append(f"{e.label}: eigenvalues {v.verdict}, closed form {v.table_verdict}")
            rec.update(
                state=dict(zip(STATE_NAMES, e.state)),
                residual=residual(p, e),
                verdict=v.verdict,
                table_verdict=v.table_verdict,
                agreement=v.agreement,
                hopf_candidate=v.hopf_candidate,
                blocks={b.name: {"trace": b.trace, "det": b.det} for b in v.blocks},
            )
            row += list(e.state) + [rec["residual"], v.verdict, v.table_verdict, v.agreement, v.hopf_candidate]
            row += [x for b in v.blocks for x in (b.trace, b.det)]
        else:
            row += [None] * (len(EQ_COLUMNS) - len(row))
        rows.append([_num(x) for x in row])
        records.append(rec)
    for fam in sorted(HOPF_FAMILIES):
        try:
            ordered_branch_stability(p, fam, eqs, strict=True)
        except StabilityDisagreement as exc:
            problems.append(str(exc))
    if "csv" in cfg.formats:
        _write_csv(out / "equilibria.csv", EQ_COLUMNS, rows)
    if "json" in cfg.formats:
        _dump_json(
            out / "equilibria.json",
            {"command": "equilibria", "seed": cfg.seed, "params": cfgmod.params_to_dict(p),
             "equilibria": records, "diagnostics": problems},  # fmt: skip
        )
    if problems:
        raise DiagnosticError("; ".join(problems))
    return EXIT_OK


def _initial_state(cfg: RunConfig) -> np.ndarray:
    x0 = cfg.simulate.get("x0")
    if x0 is None:
        raise ConfigError("simulate: x0 is required (a list of 8 values, 'washout' or 'random')")
    if x0 == "washout":
        return washout_state(cfg.params).as_array()
    if x0 == "random":
        return state_in_omega(np.random.default_rng(cfg.seed), cfg.params)
    return np.asarray(x0, dtype=float)


def cmd_simulate(cfg: RunConfig, out: Path, **_) -> int:
    p = cfg.params
    sim = cfg.simulate
    x0 = _initial_state(cfg)
    t_end = sim.get("t_end", 200.0 / p.D)
    rtol, atol = sim.get("rtol", 1e-8), sim.get("atol", 1e-10)
    report = {"command": "simulate", "seed": cfg.seed, "params": cfgmod.params_to_dict(p),
              "x0": list(x0), "t_end": t_end, "rtol": rtol, "atol": atol}  # fmt: skip
    try:
        traj = integrate(p, x0, t_end, rtol=rtol, atol=atol, n_samples=sim.get("n_samples", 1001))
        code = EXIT_OK
    except StiffnessError as exc:
        traj = exc.trajectory
        report["error"] = str(exc)
        code = EXIT_STIFF
    except ValueError as exc:
        raise ConfigError(f"simulate: {exc}") from exc
    conv = attribute_convergence(traj, enumerate_all(p), tol=sim.get("attribution_tol", 1e-6))
    report.update(conv.as_dict())
    report["violations"] = [v.__dict__ for v in monitor_invariants(traj, p)]
    report["complete"] = traj.complete
    report["steps"] = traj.stats.__dict__
    if "csv" in cfg.formats:
        traj.to_csv(out / "trajectory.csv")
    if "json" in cfg.formats:
        _dump_json(out / "simulate.json", report)
    if code == EXIT_STIFF:
        log.error("%s", report["error"])
    return code


def _axis(spec: dict) -> Axis:
    return Axis(spec["name"], float(spec["lo"]), float(spec["hi"]), int(spec["n"]), spec.get("anchor", "center"))


def cmd_diagram(cfg: RunConfig, out: Path, threads: int = 1, **_) -> int:
    if not cfg.diagram:
        raise ConfigError("diagram: section with axis1 and axis2 is required")
    a1, a2 = _axis(cfg.diagram["axis1"]), _axis(cfg.diagram["axis2"])
    grid = scan(cfg.params, a1, a2, threads=threads)
    curves = []
    overlay = cfg.diagram.get("overlay", True) and {a1.name, a2.name} & {"S1in", "S2in"}
    if overlay:
        curves = boundary_curves(grid)
        if cfg.diagram.get("traced", True):
            curves += traced_curves(grid, threads=threads)
    trans = transitions(grid, curves) if overlay else []
    hopf = hopf_map(grid)
    summary = {
        "command": "diagram",
        "seed": cfg.seed,
        "params": cfgmod.params_to_dict(cfg.params),
        "axes": [a.__dict__ for a in (a1, a2)],
        "regions": len(grid.regions()),
        "cell_errors": [{"i": i, "j": j, "error": msg} for i, j, msg in grid.errors()],
        "curves": sorted({c.name for c in curves}),
        "transitions": len(trans),
        "unexplained_transitions": [
            {"a": t.cell_a, "b": t.cell_b, "distance": t.distance, "nearest": t.nearest}
            for t in trans
            if t.distance > 1.0
        ],
        "hopf_cells": [list(c) for c in hopf],
        "hopf_note": "exploratory: candidates satisfy det > 0 and trace >= 0 on the X2 block "
        "of reactor 2; no limit cycle is asserted",
    }
    if "csv" in cfg.formats:
        (out / "grid.csv").write_text(grid.to_csv())
    if "svg" in cfg.formats:
        (out / "diagram.svg").write_text(to_svg(grid, curves))
    if "json" in cfg.formats:
        _dump_json(out / "diagram.json", summary)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, threads: int = 1, **_) -> int:
    v = cfg.verify
    try:
        results = run_suites(
            seed=cfg.seed,
            draws=v.get("draws", 100),
            states=v.get("states", 100),
            trajectories=v.get("trajectories", 5),
            names=v.get("properties"),
            threads=threads,
        )
    except ValueError as exc:
        raise ConfigError(f"verify: {exc}") from exc
    ok = all(r.passed for r in results)
    doc = {"command": "verify", "seed": cfg.seed, "passed": ok, "properties": {r.name: r.as_dict() for r in results}}
    _dump_json(out / "verify.json", doc)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.checked} checked, worst {r.worst:.3g}")
        for msg in r.failures:
            print(f"    {msg}")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {
    "equilibria": cmd_equilibria,
    "simulate": cmd_simulate,
    "diagram": cmd_diagram,
    "verify": cmd_verify,
}


# argument handling -----------------------------------------------------------


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, help="worker processes (default: $AM2_THREADS or 1)")
    common.add_argument("--seed", type=_u64, help="random seed (overrides the config seed)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="am2cascade", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("equilibria", parents=[common], help="enumerate steady states with stability verdicts")
    sub.add_parser("simulate", parents=[common], help="integrate from x0 and attribute convergence")
    sub.add_parser("diagram", parents=[common], help="operating-diagram scan with boundary overlay")
    sub.add_parser("verify", parents=[common], help="run the seeded property suites")
    return parser


def _threads(arg: int | None) -> int:
    if arg is None:
        env = os.environ.get("AM2_THREADS")
        if env is None:
            return 1
        try:
            arg = int(env)
        except ValueError as exc:
            raise ConfigError(f"AM2_THREADS must be an integer, got {env!r}") from exc
    if arg < 1:
        raise ConfigError(f"threads must be at least 1, got {arg}")
    return arg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, matching the config-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        threads = _threads(args.threads)
        out = Path(args.out or cfg.output.get("dir", "out"))
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, threads=threads)
    except (ConfigError, ParameterError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DiagnosticError as exc:
        print(f"diagnostic: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTIC


if __name__ == "__main__":
    sys.exit(main())
