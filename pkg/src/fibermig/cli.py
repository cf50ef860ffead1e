"""Command line entry point: ``fibermig <command> --config FILE [--out DIR] [--quiet]``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigError, FiberMigError
from .harness import (RunArtifacts, ConvergenceReport, converge, kinetic_run, macro_run,
                      moments_table, profile_distance, run_experiment, weak_kinds, write_manifest)
from .records import write_csv
from .weak import build_test_suite, weak_residual

log = logging.getLogger("fibermig")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibermig", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "run the configured pipeline and write CSV artifacts",
        "converge": "epsilon sweep: kinetic density against the macroscopic model",
        "profile-check": "distance of the kinetic velocity profile from the equilibrium closure",
        "weak-check": "weak-form residuals of a dense run",
        "moments": "closure constants, fiber moments and radial profile tables",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def _say(args, text: str):
    if not args.quiet:
        print(text)


def _cmd_run(cfg, out, args):
    art = run_experiment(cfg, out)
    for key in sorted(art.summary):
        _say(args, f"{key}: {art.summary[key]}")
    _say(args, f"wrote {len(art.files)} files to {out}")


def _cmd_converge(cfg, out, args):
    art = RunArtifacts(out)
    start = time.perf_counter()
    rows = []
    for kind in cfg.models():
        report: ConvergenceReport = converge(cfg, kind)
        rows.extend(report.csv_rows())
        for r, ratio in zip(report.rows, [None] + report.ratios):
            tail = "" if ratio is None else f"  ratio {ratio:.3f}"
            _say(args, f"{kind} eps={r.epsilon:g} error={r.error:.4e}{tail}")
        art.summary[f"decreasing_{kind}"] = str(report.strictly_decreasing())
    art.files["convergence"] = write_csv(rows, ConvergenceReport.header, out / "convergence.csv")
    art.runtimes["total"] = time.perf_counter() - start
    write_manifest(cfg, art, "converge")


def _cmd_profile(cfg, out, args):
    art = RunArtifacts(out)
    start = time.perf_counter()
    solver, traj = kinetic_run(cfg)
    rows = [(t, profile_distance(solver, c)) for t, c in zip(traj.times, traj.states)
            if np.max(solver.grid.velocity_integral(c)) > 0]
    art.files["profile"] = write_csv(rows, ["t", "profile_distance"], out / "profile_check.csv")
    if rows:
        art.summary["profile_distance"] = rows[-1][1]
        _say(args, f"profile distance at t={rows[-1][0]:g}: {rows[-1][1]:.4e}")
    art.runtimes["total"] = time.perf_counter() - start
    write_manifest(cfg, art, "profile-check")


def _cmd_weak(cfg, out, args):
    art = RunArtifacts(out)
    start = time.perf_counter()
    solver, ktraj = kinetic_run(cfg, dense=True)
    step = ktraj.times[1] - ktraj.times[0] if len(ktraj.times) > 1 else solver.default_dt()
    macro = {k: macro_run(cfg, k, dense=True, dt=step) for k in cfg.models()}
    tests = build_test_suite(cfg.length, cfg.n, cfg.t_end, 8, seed=cfg.seed)
    rows = []
    for kind, label in weak_kinds(cfg, macro):
        rep = weak_residual(kind, ktraj if label == "kinetic" else macro[label], tests=tests)
        rows.extend(rep.rows())
        _say(args, f"{kind} ({label}): max normalized residual {rep.max_normalized:.4e}")
    art.files["weak"] = write_csv(rows, ["kind", "test_id", "residual", "normalized_residual"],
                                  out / "weak_residuals.csv")
    art.runtimes["total"] = time.perf_counter() - start
    write_manifest(cfg, art, "weak-check")


def _cmd_moments(cfg, out, args):
    art = moments_table(cfg, out)
    for key in sorted(art.summary):
        _say(args, f"{key}: {art.summary[key]:.12g}")


COMMANDS = {
    "run": _cmd_run,
    "converge": _cmd_converge,
    "profile-check": _cmd_profile,
    "weak-check": _cmd_weak,
    "moments": _cmd_moments,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.raw["output.dir"])
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args)
    except FiberMigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
