"""Command-line front end.

Subcommands
-----------
run [CONFIG] [--config CONFIG] [--out DIR] [--seed N]
    Integrate a scenario and write trajectory, snapshots, spectrum, rate
    report, identity table, summary and plots.
spectrum SNAPSHOT [--k K]
    Lowest Jacobi eigenvalues of a stored snapshot map, printed as JSON.
verify identity TRAJDIR / verify rate TRAJDIR
    Recompute the evolution-identity table or the rate report of a run.
sweep CONFIG [--levels L] [--jobs J]
    Grid/step refinement study; writes a convergence-order table.

Exit codes: 0 all checks pass (or are informational), 1 a check failed,
2 usage or configuration error, 3 numerical failure.  Errors are printed to
stderr as one JSON object.  ``HEATFLOW_OUT`` overrides the output root.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .convergence import (build_rate_report, check_evolution_identity, energy_gap, gap_track)
from .errors import ConfigError, HeatflowError, NonMonotoneEnergy, NotConverged, ParseError, ValidationError
from .flow import run as run_flow
from .io import (load_trajectory_dir, read_snapshot, snapshot_name, write_csv, write_json,
                 write_snapshot, write_trajectory)
from .jacobi import assemble_system, lowest_eigs, weak_strong_residual
from .plotting import render_figures, write_plot_script
from .scenario import Scenario, from_dict, parse_config

WEAK_STRONG_TOL = 1e-6
GAP_TAIL_RATIO = 0.98


@dataclass
class Check:
    name: str
    passed: bool
    value: object
    threshold: object
    informational: bool = False

    def line(self):
        status = "INFO" if self.informational else ("PASS" if self.passed else "FAIL")
        return f"{status:4s}  {self.name:22s} value={self.value!r} threshold={self.threshold!r}"


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    checks: list = field(default_factory=list)
    report: object = None
    spectrum: object = None
    trajectory: object = None


def output_root(scenario: Scenario, out=None):
    if os.environ.get("HEATFLOW_OUT"):
        return Path(os.environ["HEATFLOW_OUT"]) / scenario.name
    if out:
        return Path(out)
    if scenario.output.dir:
        return Path(scenario.output.dir)
    return Path("heatflow_out") / scenario.name


def _meta(scenario):
    return {"config_hash": scenario.config_hash(), "seed": int(scenario.seed)}


def run_scenario(scenario: Scenario, out=None, figures=None) -> RunResult:
    """Run flow and analyses of a scenario and write every artifact."""
    root = output_root(scenario, out)
    root.mkdir(parents=True, exist_ok=True)
    meta = _meta(scenario)
    an = scenario.analysis
    write_json(root / "scenario.json", scenario.to_dict(), meta)

    f0 = scenario.initial()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonMonotoneEnergy)
        traj = run_flow(f0, scenario.flow)
    final = traj.final_map()
    system = assemble_system(final)
    spectrum = lowest_eigs(system, k=min(an.eig_k, system.size), tol=an.eig_tol, seed=scenario.seed)
    ws = weak_strong_residual(system, seed=scenario.seed)

    checks = [Check("converged", traj.converged, float(traj.tension_l2[-1]), scenario.flow.stop_tolerance)]
    checks.append(Check("energy_monotone", not caught and bool(np.all(
        np.diff(traj.energy) <= 1e-12 * abs(traj.energy[0]))), len(caught), 0))
    lam_min = float(np.min(spectrum.values))
    checks.append(Check("spectrum_nonnegative", lam_min >= -10 * an.eig_tol * spectrum.scale,
                        lam_min, -10 * an.eig_tol * spectrum.scale))
    checks.append(Check("weak_strong", ws <= WEAK_STRONG_TOL, ws, WEAK_STRONG_TOL))

    lambda_col = None
    gap = None
    if an.gap_stride > 0:
        gap = gap_track(traj, stride=an.gap_stride, tail_rel=an.tail_rel, seed=scenario.seed)
        lambda_col = np.full(len(traj), np.nan)
        lambda_col[np.searchsorted(traj.times, gap.times)] = gap.lambda1
        if not spectrum.degenerate and np.any(gap.tail):
            ratio = gap.tail_ratio()
            checks.append(Check("gap_tail", ratio >= GAP_TAIL_RATIO, ratio, GAP_TAIL_RATIO))
    traj.lambda1 = lambda_col

    if len(traj) >= 3:
        ident = check_evolution_identity(traj)
        worst = ident.max_residual(an.identity_t_min)
        checks.append(Check("evolution_identity", bool(worst <= an.identity_tol), worst, an.identity_tol))
        write_csv(root / "identity.csv", ["t", "half_dnorm2_dt", "minus_KTT", "residual"],
                  ident.rows(), meta)

    report = None
    try:
        report = build_rate_report(traj, spectrum, system, tol_rate=an.tol_rate,
                                   linearity_tol=an.linearity_tol)
        info = report.verdict == "DEGENERATE"
        checks.append(Check("rate_verdict", report.verdict in ("PASS", "DEGENERATE"),
                            report.verdict, "PASS", informational=info))
        write_json(root / "rate_report.json", report.to_dict(), meta)
        gaps = energy_gap(traj, system)
        write_csv(root / "energy_gap.csv", ["t", "energy_gap"], zip(traj.times, gaps), meta)
    except NotConverged as exc:
        checks.append(Check("rate_verdict", False, str(exc), "converged trajectory"))

    spec_out = spectrum.to_dict()
    spec_out["weak_strong_residual"] = ws
    write_json(root / "spectrum.json", spec_out, meta)
    write_trajectory(root / "trajectory.csv", traj, lambda_col, meta)
    snaps = root / "snapshots"
    snaps.mkdir(exist_ok=True)
    for old in snaps.glob("snapshot_*.csv"):
        old.unlink()
    every = scenario.output.snapshot_every
    picks = sorted(set(range(0, len(traj), every)) | {len(traj) - 1})
    for k in picks:
        write_snapshot(snaps / snapshot_name(k), traj.snapshot(k), traj.times[k], meta)

    failed = [c for c in checks if not c.passed and not c.informational]
    code = 1 if failed else 0
    lines = [f"scenario  {scenario.name}", f"config    {meta['config_hash']}", f"seed      {scenario.seed}",
             f"samples   {len(traj)}  steps {traj.steps}  t_final {float(traj.times[-1])!r}", ""]
    lines += [c.line() for c in checks]
    if report is not None:
        lines += ["", report.summary()]
    lines += ["", f"exit      {code}"]
    (root / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    write_plot_script(root, meta)
    if scenario.output.figures if figures is None else figures:
        render_figures(root, title=scenario.name)
    return RunResult(code, root, checks, report, spectrum, traj)


# sweep ---------------------------------------------------------------------------

def _sweep_level(args):
    data, level, t_end = args
    scen = from_dict(data)
    factor = 2**level
    grid = scen.grid.refined(factor)
    data = scen.to_dict()
    data["grid"] = grid.to_dict()
    data["flow"]["dt"] = scen.flow.dt / factor**2
    data["flow"]["snapshot_stride"] = scen.flow.snapshot_stride * factor**2
    if t_end is not None:
        data["flow"]["t_end"] = t_end
    scen = from_dict(data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonMonotoneEnergy)
        traj = run_flow(scen.initial(), scen.flow)
    lam = lowest_eigs(assemble_system(traj.final_map()), k=1, seed=scen.seed).lambda1
    ident = check_evolution_identity(traj) if len(traj) >= 3 else None
    return {
        "level": level, "nodes": int(np.prod(grid.nodes)), "h": grid.h_min, "dt": scen.flow.dt,
        "t_final": float(traj.times[-1]), "energy": float(traj.energy[-1]), "lambda1": float(lam),
        "identity_max": ident.max_residual(scen.analysis.identity_t_min) if ident else float("nan"),
    }


def sweep(scenario: Scenario, levels=3, jobs=1, t_end=None, out=None):
    args = [(scenario.to_dict(), level, t_end) for level in range(levels)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_level, args))
    else:
        rows = [_sweep_level(a) for a in args]
    for i, row in enumerate(rows):
        order = float("nan")
        if i >= 2:
            d1 = abs(rows[i - 1]["lambda1"] - rows[i - 2]["lambda1"])
            d2 = abs(row["lambda1"] - rows[i - 1]["lambda1"])
            if d1 > 0 and d2 > 0:
                order = math.log2(d1 / d2)
        row["order_lambda1"] = order
    root = output_root(scenario, out)
    header = ["level", "nodes", "h", "dt", "t_final", "energy", "lambda1", "identity_max", "order_lambda1"]
    write_csv(root / "sweep.csv", header, [[r[k] for k in header] for r in rows], _meta(scenario))
    return rows


# entry point ---------------------------------------------------------------------

def _error(exc, code=None):
    payload = {"error": type(exc).__name__, "message": str(exc),
               "exit_code": code if code is not None else getattr(exc, "exit_code", 3)}
    for attr in ("field", "reason", "line", "key", "best_residual", "iterations"):
        if hasattr(exc, attr):
            payload[attr] = getattr(exc, attr)
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)
    return payload["exit_code"]


def build_parser():
    parser = argparse.ArgumentParser(prog="heatflow", description="Harmonic map heat flow lab.")
    parser.add_argument("--version", action="version", version=f"heatflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write all artifacts")
    p.add_argument("config_path", nargs="?", help="scenario JSON (bundled names accepted)")
    p.add_argument("--config", dest="config_opt")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("spectrum", help="Jacobi eigenvalues of a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("verify", help="recompute checks from a run directory")
    p.add_argument("what", choices=["identity", "rate"])
    p.add_argument("trajdir")
    p.add_argument("--t-min", type=float)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("sweep", help="refinement study")
    p.add_argument("config_path", nargs="?")
    p.add_argument("--config", dest="config_opt")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--t-end", type=float)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    return parser


def _load(args):
    path = args.config_opt or args.config_path
    if not path:
        raise ConfigError("no config given (positional CONFIG or --config)")
    scen = parse_config(path)
    if args.seed is not None:
        scen = scen.with_seed(args.seed)
    return scen


def _cmd_run(args):
    scen = _load(args)
    result = run_scenario(scen, out=args.out, figures=False if args.no_figures else None)
    print((result.out_dir / "summary.txt").read_text(encoding="utf-8"), end="")
    return result.exit_code


def _cmd_spectrum(args):
    f, t, meta = read_snapshot(args.snapshot)
    system = assemble_system(f)
    spec = lowest_eigs(system, k=min(args.k, system.size), tol=args.tol, seed=args.seed)
    out = spec.to_dict()
    out.update(t=t, config_hash=meta.get("config_hash"), seed=meta.get("seed"))
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_verify(args):
    traj, scen = load_trajectory_dir(args.trajdir)
    an = scen.get("analysis", {})
    if args.what == "identity":
        ident = check_evolution_identity(traj)
        t_min = args.t_min if args.t_min is not None else an.get("identity_t_min", 0.0)
        tol = args.tol if args.tol is not None else an.get("identity_tol", 1e-2)
        print("t,half_dnorm2_dt,minus_KTT,residual")
        for row in ident.rows():
            print(",".join(repr(v) for v in row))
        worst = ident.max_residual(t_min)
        print(f"# max_residual(t>={t_min!r})={worst!r} tol={tol!r}")
        return 0 if worst <= tol else 1
    system = assemble_system(traj.final_map())
    spec = lowest_eigs(system, k=an.get("eig_k", 4), seed=int(scen.get("seed", 0)))
    report = build_rate_report(traj, spec, system, tol_rate=an.get("tol_rate"),
                               linearity_tol=an.get("linearity_tol", 0.05))
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=str))
    return 0 if report.verdict in ("PASS", "DEGENERATE") else 1


def _cmd_sweep(args):
    scen = _load(args)
    rows = sweep(scen, levels=args.levels, jobs=max(1, args.jobs), t_end=args.t_end, out=args.out)
    header = list(rows[0])
    print(",".join(header))
    for r in rows:
        print(",".join(repr(r[k]) for k in header))
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    handlers = {"run": _cmd_run, "spectrum": _cmd_spectrum, "verify": _cmd_verify, "sweep": _cmd_sweep}
    try:
        return handlers[args.command](args)
    except (ParseError, ValidationError, ConfigError) as exc:
        return _error(exc, 2)
    except HeatflowError as exc:
        return _error(exc)
    except FileNotFoundError as exc:
        return _error(exc, 2)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
