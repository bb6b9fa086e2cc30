"""Command-line entry point.

``netform run <config> [--override key=value ...] [--threads N] [--vtk-every K]``

Exit status is 0 on success, 2 for configuration errors and 3 when a solver
fails.  ``NETFORM_LOG_LEVEL`` (e.g. ``DEBUG``, ``INFO``) sets verbosity.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext

from threadpoolctl import threadpool_limits

from .config import bundled_config, defaults, parse_config, RunConfig
from .exceptions import ConfigError, NetformError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
LOG_ENV = "NETFORM_LOG_LEVEL"


def _configure_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netform", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("config", help="config file, or the name of a bundled config")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="set a config key (repeatable)")
    run.add_argument("--threads", type=int, default=None,
                     help="thread limit for BLAS and sparse kernels")
    run.add_argument("--vtk-every", type=int, default=None, metavar="K",
                     help="write a VTK snapshot every K accepted steps")
    show = sub.add_parser("show-config", help="print a config with all defaults filled in")
    show.add_argument("config", nargs="?", default=None)
    return parser


def _load(spec: str) -> RunConfig:
    if os.path.exists(spec):
        return parse_config(spec)
    try:
        path = bundled_config(spec)
    except ConfigError:
        raise ConfigError(f"config file {spec!r} not found") from None
    return parse_config(path)


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    log = logging.getLogger("netform")
    try:
        if args.command == "show-config":
            cfg = _load(args.config) if args.config else RunConfig(defaults())
            sys.stdout.write(cfg.to_text())
            return EXIT_OK
        cfg = _load(args.config)
        overrides = list(args.override)
        if args.vtk_every is not None:
            overrides.append(f"output.vtk_every={args.vtk_every}")
        cfg = cfg.with_overrides(overrides)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        print(f"netform: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .experiments import run_experiment

    limits = threadpool_limits(args.threads) if args.threads else nullcontext()
    try:
        with limits:
            result = run_experiment(cfg)
    except NetformError as exc:
        print(f"netform: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for name, runlog in result.logs.items():
        status = "ok" if runlog.completed else f"FAILED ({runlog.failure})"
        t_final = runlog.rows[-1][0] if runlog.rows else 0.0
        print(f"{name}: {len(runlog)} steps to t={t_final:g}, {status}")
    for path in result.files:
        log.info("wrote %s", path)
    return result.exit_status


if __name__ == "__main__":
    sys.exit(main())
