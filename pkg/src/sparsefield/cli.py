"""Command-line entry point: ``sparsefield --config run.ini [options]``.

Exit status is 0 on success, 1 for configuration errors and 2 for failures
while running.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

from . import __version__
from ._backend import BACKEND
from .config import EXPERIMENTS, ConfigError, config_dict, load_config
from .experiments import run_experiment

THREADS_ENV = "SPARSE_FIELD_THREADS"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsefield",
                                description="Run a sparse Gaussian-process experiment from a config file.")
    p.add_argument("--config", required=True, help="experiment config file (INI)")
    p.add_argument("--experiment", choices=EXPERIMENTS, help="override the configured experiment")
    p.add_argument("--seed", type=int, help="override the master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory (default: the config's out)")
    p.add_argument("--threads", type=int,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("--scale", type=float, default=1.0,
                   help="multiply replications by this factor; below 1 also caps grid sizes")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV, "").strip()
    if not env:
        return 1
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.experiment:
            cfg = replace(cfg, experiment=args.experiment)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out:
            cfg = replace(cfg, out=args.out)
        cfg = cfg.scaled(args.scale).validate()
        threads = _threads(args.threads)
        if threads < 1:
            raise ConfigError("threads must be >= 1")
    except ConfigError as exc:
        print(f"sparsefield: config error: {exc}", file=sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        res = run_experiment(cfg, threads=threads)
    except Exception as exc:  # reported, not re-raised: the exit code carries the failure
        print(f"sparsefield: {cfg.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "experiment": cfg.experiment,
        "config": config_dict(cfg),
        "version": __version__,
        "backend": BACKEND,
        "threads": threads,
        "scale": args.scale,
        "files": sorted(p.name for p in res.files),
        "notes": res.notes,
        "wall_time_s": time.perf_counter() - t0,
    }
    with open(res.out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")
    for note in res.notes:
        print(f"note: {note}", file=sys.stderr)
    print(f"{cfg.experiment}: wrote {len(res.files)} files to {res.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
