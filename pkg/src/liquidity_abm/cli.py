"""Command-line entry point.

    liquidity-abm simulate  --config FILE [--paths P] [--seed S] [--out DIR] [--workers W]
    liquidity-abm diagnose  --config FILE [--levels 16,64,256] [--paths P] [--out DIR]
    liquidity-abm validate  --config FILE
    liquidity-abm skorokhod --input Y.csv --q Q.csv [--v V.csv] --out L.csv

Exit codes: 0 ok, 2 invalid configuration or input, 3 numerical failure,
4 I/O failure.  ``LIQUIDITY_ABM_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (
    DiagnosticsReport,
    comparison_check,
    complementarity_audit,
    ou_moment_check,
    weak_convergence_diagnostic,
)
from .clearing import simulate_discrete, simulate_fs
from .config import Model, ScenarioConfig, config_hash, config_to_dict, parse_config
from .errors import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, ConfigurationError, NumericalError, StructuralError
from .paths import STREAM_MARKET, STREAM_PANEL, STREAM_REFERENCE, read_csv_matrix, write_csv_matrix
from .skorokhod import ReflectionSpec, solve_discrete_skorokhod_oblique

OUT_ENV = "LIQUIDITY_ABM_OUT"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _manifest(cfg: ScenarioConfig, out: Path, artifacts, command):
    m = cfg.market
    return {
        "command": command,
        "config_hash": config_hash(cfg),
        "master_seed": m.master_seed,
        "seed_lineage": {
            "generator": "PCG64",
            "path_seed": "SeedSequence(master_seed, spawn_key=(stream, path_index))",
            "streams": {"market": STREAM_MARKET, "panel": STREAM_PANEL, "reference": STREAM_REFERENCE},
        },
        "versions": {
            "liquidity_abm": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "config": config_to_dict(replace(cfg, out_dir=None, workers=None)),
        "artifacts": {name: _sha256(out / name) for name in artifacts},
    }


def _finish(cfg, out, artifacts, report, command):
    _write_text(out / "diagnostics.json", report.to_json())
    artifacts.append("diagnostics.json")
    manifest = _manifest(cfg, out, artifacts, command)
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest


def run_scenario(cfg: ScenarioConfig, out_dir=None, workers=None):
    """Simulate a scenario and write paths, diagnostics and a manifest."""
    out = Path(out_dir or cfg.out_dir or os.environ.get(OUT_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    workers = workers if workers is not None else cfg.workers
    m = cfg.market
    report = DiagnosticsReport()

    if m.model is Model.FS_BASELINE:
        grid = simulate_fs(m, paths=cfg.paths, workers=workers)
        if m.fs.beta_bar <= 0:
            report.ou_moments = asdict(ou_moment_check(m, paths=cfg.paths, workers=workers)) if cfg.paths > 1 else {}
    elif m.model.is_sder:
        stats_, grid, _ = comparison_check(m, paths=cfg.paths, model=m.model.variant, workers=workers)
        report.comparison_stats = {m.model.variant: asdict(stats_)}
        report.complementarity_residuals = {m.model.value: complementarity_audit(grid)}
    else:
        grid = simulate_discrete(m, paths=cfg.paths, workers=workers, record=False)
        if m.model.constrained:
            report.complementarity_residuals = {m.model.value: complementarity_audit(grid)}
            stats_, _, _ = comparison_check(m, paths=cfg.paths, model=m.model.variant, workers=workers)
            report.comparison_stats = {m.model.variant: asdict(stats_)}

    artifacts = []
    if cfg.write_paths:
        grid.to_csv(out / "paths.csv")
        artifacts.append("paths.csv")
    return _finish(cfg, out, artifacts, report, "simulate")


def run_diagnostics(cfg: ScenarioConfig, levels=None, paths=None, out_dir=None, workers=None):
    out = Path(out_dir or cfg.out_dir or os.environ.get(OUT_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    workers = workers if workers is not None else cfg.workers
    paths = paths or cfg.diagnostic_paths
    report = DiagnosticsReport()
    m = cfg.market
    if m.model is Model.FS_BASELINE:
        report.ou_moments = asdict(ou_moment_check(m, paths=paths, workers=workers))
    else:
        wc = weak_convergence_diagnostic(
            m, n_levels=levels or cfg.levels, paths=paths, reference_n=cfg.reference_n, workers=workers
        )
        report.ks_by_n = dict(wc.ks_by_n)
        report.weak_convergence = {k: v for k, v in asdict(wc).items() if k != "ks_by_n"}
        report.weak_convergence["passed"] = wc.passed
    return _finish(cfg, out, [], report, "diagnose")


def run_skorokhod(input_csv, q_csv, out_csv, v_csv=None):
    _, Y = read_csv_matrix(input_csv)
    _, Q = read_csv_matrix(q_csv)
    V = read_csv_matrix(v_csv)[1] if v_csv else None
    sol = solve_discrete_skorokhod_oblique(Y, ReflectionSpec(Q, V))
    n1 = Y.shape[1]
    header = [f"L_{i + 1}" for i in range(n1)] + [f"phi_{i + 1}" for i in range(n1)]
    write_csv_matrix(out_csv, header, np.hstack([sol.L, sol.constrained_path]))
    return sol


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _levels(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from exc


def build_parser():
    p = argparse.ArgumentParser(prog="liquidity-abm", description="Constrained agent-based market simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a scenario and write paths, diagnostics and a manifest")
    s.add_argument("--config", required=True)
    s.add_argument("--paths", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--workers", type=int)

    d = sub.add_parser("diagnose", help="weak-convergence or OU-moment diagnostics")
    d.add_argument("--config", required=True)
    d.add_argument("--levels", type=_levels)
    d.add_argument("--paths", type=int)
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    d.add_argument("--workers", type=int)

    v = sub.add_parser("validate", help="check a scenario against the standing assumptions")
    v.add_argument("--config", required=True)

    k = sub.add_parser("skorokhod", help="solve an oblique discrete Skorokhod problem from CSV")
    k.add_argument("--input", required=True, help="Y: one column per constrained agent, one row per step")
    k.add_argument("--q", required=True, help="reflection matrix Q")
    k.add_argument("--v", help="dominating matrix V (defaults to Q)")
    k.add_argument("--out", required=True)
    return p


def _apply_overrides(cfg: ScenarioConfig, args):
    if getattr(args, "paths", None) is not None:
        cfg = replace(cfg, paths=args.paths)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, market=cfg.market.with_(master_seed=args.seed))
    return cfg


def _fail(code, exc, out_dir=None):
    record = {"exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    violations = getattr(exc, "violations", None)
    if violations:
        record["violations"] = list(violations)
    print(json.dumps(record), file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            _write_text(Path(out_dir) / "failure.json", json.dumps(record, indent=2) + "\n")
        except OSError:
            pass
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = getattr(args, "out", None)
    try:
        if args.command == "skorokhod":
            run_skorokhod(args.input, args.q, args.out, args.v)
            return 0
        cfg = _apply_overrides(parse_config(args.config), args)
        if args.command == "validate":
            print(f"ok: {cfg.market.model.value}, N={cfg.market.roster.n_agents if cfg.market.roster else 0}")
            return 0
        out_dir = out_dir or cfg.out_dir or os.environ.get(OUT_ENV, "out")
        if args.command == "simulate":
            run_scenario(cfg, out_dir, args.workers)
        else:
            run_diagnostics(cfg, args.levels, args.paths, out_dir, args.workers)
        return 0
    except (ConfigurationError, StructuralError) as exc:
        return _fail(EXIT_CONFIG, exc, out_dir if args.command != "validate" else None)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc, out_dir)
    except OSError as exc:
        return _fail(EXIT_IO, exc, None)


if __name__ == "__main__":
    sys.exit(main())
