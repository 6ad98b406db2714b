"""Command-line entry point.

Subcommands::

    dynekf run    Monte Carlo over noise levels, writes RMS reports and a manifest
    dynekf equiv  randomized sub-block agreement between the two backends
    dynekf dump   one run, writes ground truth and estimates per step and entity

Exit status: 0 ok, 1 numeric or equivalence failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, equiv, kernels, sim
from .errors import DynEKFError
from .models import NoiseModel

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
OUT_ENV = "DYNEKF_OUT"
AGREEMENT_TOL = 1e-6


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing


def _levels(text: str) -> list:
    if text == "all":
        return list(sim.LEVELS)
    try:
        w, v = (int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'i,j' or 'all', got {text!r}") from None
    if w not in (1, 2, 3) or v not in (1, 2, 3):
        raise argparse.ArgumentTypeError(f"noise levels must be in 1..3, got {text!r}")
    return [(w, v)]


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")
    return text == "on"


def _matrix2(text: str) -> np.ndarray:
    try:
        vals = [float(p) for p in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"expected four comma-separated numbers, got {text!r}")
    return np.array(vals).reshape(2, 2)


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return n


def _add_experiment_flags(p: argparse.ArgumentParser, backends) -> None:
    # defaults of None mean "take it from --config, else the built-in default"
    p.add_argument("--config", type=Path, help="JSON experiment config or a run manifest")
    p.add_argument("--noise", type=_levels, help="noise levels 'i,j' (process, measurement) or 'all'")
    p.add_argument("--seed", type=int, help="scenario and Monte Carlo seed")
    p.add_argument("--backend", choices=backends)
    p.add_argument("--drop-history", type=_on_off, metavar="{on,off}")
    p.add_argument("--smoothing", type=_on_off, metavar="{on,off}")
    p.add_argument("--object-cost", choices=("feature", "pose"), help="object motion cost of the opt backend")
    p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./dynekf_out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynekf", description="Dynamic EKF SLAM backends and experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo RMS report over noise levels")
    _add_experiment_flags(run, ("std", "opt", "both"))
    run.add_argument("--runs", type=_positive, help="runs per noise level (default 25)")
    run.add_argument("--workers", type=_positive, default=1, help="worker processes")

    eq = sub.add_parser("equiv", help="randomized agreement of backend sub-blocks")
    eq.add_argument("--trials", type=int, default=100, help="random states per sub-block")
    eq.add_argument("--seed", type=int, default=0)
    eq.add_argument("--tol", type=float, default=equiv.DEFAULT_TOL)
    eq.add_argument("--object-cost", choices=("feature", "pose"), default="feature")
    eq.add_argument("--sigma-xi", type=_matrix2, help="feature noise 'a,b,c,d' used by every trial")

    dump = sub.add_parser("dump", help="ground truth and estimate trajectories of one run")
    _add_experiment_flags(dump, ("std", "opt"))
    dump.add_argument("--zero-noise", action="store_true", help="simulate without noise")
    return parser


def _experiment(args) -> sim.ExperimentConfig:
    cfg = sim.load_config(args.config) if args.config else sim.ExperimentConfig()
    changes = {
        "levels": args.noise,
        "seed": args.seed,
        "backend": args.backend,
        "drop_object_history": args.drop_history,
        "smoothing": args.smoothing,
        "object_cost": args.object_cost,
        "runs": getattr(args, "runs", None),
    }
    cfg = replace(cfg, **{k: v for k, v in changes.items() if v is not None})
    cfg.validate()
    return cfg


def _out_dir(args) -> Path:
    out = args.out or Path(os.environ.get(OUT_ENV) or "dynekf_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _versions() -> dict:
    return {
        "dynekf": __version__,
        "kernels": kernels.BACKEND,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _seed_list(seed: int, runs: int) -> list:
    return [{"entropy": s.entropy, "spawn_key": list(s.spawn_key)} for s in sim.run_seeds(seed, runs)]


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg = _experiment(args)
    out = _out_dir(args)
    scenario = sim.build_scenario(cfg.seed, cfg.scenario)
    t0 = time.perf_counter()
    results = sim.run_monte_carlo(
        scenario, cfg.levels, cfg.runs, cfg.backend, cfg.seed, cfg.filter_config(), workers=args.workers
    )
    wall = time.perf_counter() - t0
    meta = {"config": cfg.to_dict(), "versions": _versions()}
    backends = ("std", "opt") if cfg.backend == "both" else (cfg.backend,)
    files = []
    for b in backends:
        path = out / f"report_{b}.csv"
        sim.write_report(path, [r for r in results if r.backend == b], meta)
        files.append(path.name)

    status = EXIT_OK
    levels = []
    for r in results:
        entry = {
            "level": list(r.level),
            "backend": r.backend,
            "failures": [{"run": i, "error": e} for i, e in r.failures],
            "psd_violations": len(r.psd_violations),
            "ego_nees_mean": r.nees_mean,
            "step_time_mean_s": r.step_time_mean,
            "run_time_mean_s": r.run_time_mean,
        }
        if r.agreement is not None:
            entry["agreement"] = r.agreement
        levels.append(entry)
        for i, e in r.failures:
            print(f"level {r.level} {r.backend} run {i}: {e}", file=sys.stderr)
        if r.failures or r.psd_violations:
            status = EXIT_FAILURE
        if r.psd_violations:
            print(f"level {r.level} {r.backend}: {len(r.psd_violations)} covariance snapshots not PSD", file=sys.stderr)
        if r.agreement is not None and r.agreement > AGREEMENT_TOL and r.backend == "std":
            print(f"level {r.level}: backends differ by {r.agreement:.3e} (> {AGREEMENT_TOL:g})", file=sys.stderr)
            status = EXIT_FAILURE
    manifest = {
        **meta,
        "command": "run",
        "seeds": _seed_list(cfg.seed, cfg.runs),
        "files": files,
        "wall_clock_s": wall,
        "levels": levels,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    for r in results:
        if r.report is not None:
            ego = r.report.as_dict()["ego"]
            print(
                f"{r.backend} level {r.level}: ego x {ego['x']:.3e} m, y {ego['y']:.3e} m, "
                f"step {1e3 * r.step_time_mean:.3f} ms"
            )
    print(f"wrote {', '.join(files)} and manifest.json to {out}")
    return status


def cmd_equiv(args) -> int:
    if args.trials < 0:
        raise UsageError("--trials must be non-negative")
    results = equiv.run_suite(args.trials, args.seed, args.object_cost, args.sigma_xi)
    status = EXIT_OK
    for r in results:
        state = r.status(args.tol)
        if state == "skipped":
            print(f"{r.name:24s} skipped ({r.skipped})")
            continue
        print(f"{r.name:24s} {state:4s} trials={r.trials} mean_dev={r.mean_dev:.3e} cov_dev={r.cov_dev:.3e}")
        for i, msg in r.errors:
            print(f"    trial {i}: {msg}")
        if state == "fail":
            status = EXIT_FAILURE
            if r.worst_trial is not None:
                print(f"    worst deviation {r.deviation:.3e} at trial {r.worst_trial}")
    return status


def cmd_dump(args) -> int:
    cfg = _experiment(args)
    if len(cfg.levels) != 1:
        raise UsageError("dump needs a single noise level")
    if cfg.backend == "both":
        raise UsageError("dump runs a single backend")
    out = _out_dir(args)
    scenario = sim.build_scenario(cfg.seed, cfg.scenario)
    level = cfg.levels[0]
    noise = NoiseModel.from_levels(*level)
    run_seed = sim.run_seeds(cfg.seed, 1)[0]
    inject = not args.zero_noise
    fcfg = replace(cfg.filter_config(), noise=noise)
    prior = sim.sample_prior(scenario, noise, run_seed, inject)
    frames = sim.simulate_frames(scenario, noise, run_seed, inject)
    run = sim.run_filter(scenario, frames, prior, fcfg, cfg.backend, check_psd=True)
    truth = sim.ground_truth(scenario)
    meta = {
        "config": cfg.to_dict(),
        "level": list(level),
        "zero_noise": args.zero_noise,
        "seeds": _seed_list(cfg.seed, 1),
        "versions": _versions(),
    }
    path = out / f"trajectories_{cfg.backend}.csv"
    rows = sim.write_trajectories(path, scenario, truth, run.estimate, meta)
    print(f"wrote {rows} rows to {path}")
    if run.psd_violations:
        print(f"{len(run.psd_violations)} covariance snapshots not PSD", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


COMMANDS = {"run": cmd_run, "equiv": cmd_equiv, "dump": cmd_dump}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, TypeError, OSError) as exc:
        print(f"dynekf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DynEKFError as exc:
        print(f"dynekf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
