"""Command-line experiment harness.

Every subcommand reads an INI config, runs one study and writes CSV files
into the configured output directory. ``QBXDIRECT_THREADS`` caps the BLAS
thread pool.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import experiments as ex
from .error_model import write_sweep

THREADS_ENV = "QBXDIRECT_THREADS"


def _out(config, name) -> Path:
    path = Path(config.output)
    path.mkdir(parents=True, exist_ok=True)
    return path / name


def _write(config, name, rows, **extra):
    meta = dict(config.metadata(), study=name.removesuffix(".csv"), **extra)
    path = _out(config, name)
    write_sweep(path, rows, meta)
    print(f"wrote {path}")


def cmd_forward_error(config):
    _write(config, "forward_error.csv", ex.run_forward_error(ex.build_problem(config)))


def cmd_solve_error(config):
    _write(config, "solve_error.csv", ex.run_solve_error(ex.build_problem(config)))


def cmd_ablate_weight(config):
    q = 192 if config.q == "auto" else config.q
    _write(config, "ablate_weight.csv", ex.run_ablate_weight(ex.build_problem(config), q=q))


def cmd_sweep_proxy(config):
    rows, slopes = ex.run_sweep_proxy(ex.build_problem(config))
    _write(config, "sweep_proxy.csv", rows, eps_id=1e-15)
    _write(config, "sweep_proxy_slopes.csv", slopes)


def cmd_estimate_q(config):
    rows, trail, fit = ex.run_estimate_q(ex.build_problem(config))
    _write(config, "estimate_q.csv", rows, fit_residual=fit.residual)
    _write(config, "estimate_q_trail.csv",
           [{"eps": t, "q": q, "alpha": a, "error": e} for t, q, a, e in trail])


def cmd_scaling(config):
    sizes = config.sizes or ex.default_sizes(config.geometry["kind"])
    q = None if config.q == "auto" else config.q
    rows, slope = ex.run_scaling(config, sizes, tol=config.tolerances[0], q=q)
    _write(config, "scaling.csv", rows, loglog_slope=f"{slope:.4f}")
    print(f"log-log slope {slope:.3f}")


COMMANDS = {
    "forward-error": (cmd_forward_error, "forward error of the compressed apply"),
    "solve-error": (cmd_solve_error, "solution error of the compressed solve"),
    "ablate-weight": (cmd_ablate_weight, "forward error with and without the proxy weight"),
    "sweep-proxy": (cmd_sweep_proxy, "error against proxy order for several alpha"),
    "estimate-q": (cmd_estimate_q, "empirical against model proxy counts"),
    "scaling": (cmd_scaling, "wall time against problem size"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbxdirect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="INI file with [geometry], [operator], [experiment]")
        p.add_argument("-o", "--output", help="output directory (overrides the config)")
    return parser


def _threads():
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ex.ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    if n < 1:
        raise ex.ConfigError(f"{THREADS_ENV} must be positive")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ex.load_config(args.config)
        if args.output:
            config = dataclasses.replace(config, output=args.output)
        with threadpool_limits(limits=_threads()):
            COMMANDS[args.command][0](config)
    except Exception as exc:  # reported as one machine-readable line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
