"""Command-line entry point: ``semimarkov-ldp <command> --config PATH``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ..kernel.laws import LawError, QuadratureError
from ..kernel.model import ModelError, TruncationEscape
from ..rate import LegendreError, OptimizationError
from ..simulate import ExplosionError
from ..tilt import TiltError
from ..verify import OracleError
from .commands import COMMANDS
from .config import ConfigError, load_config
from .output import render

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

NUMERICAL_ERRORS = (TruncationEscape, LegendreError, OptimizationError, ExplosionError, QuadratureError, OracleError,
                    TiltError, FloatingPointError, ArithmeticError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semimarkov-ldp",
                                     description="Simulation, rate functions and tilted sampling for semi-Markov processes.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--workers", type=int, default=None, help="parallel workers (default: available cores)")
    parser.add_argument("--out", default=None, help="output path (default: run.out, else stdout)")
    parser.add_argument("--format", choices=("csv", "records"), default=None, help="override run.format")
    parser.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
    return parser


def _plan(args, cfg, task, seed, workers, out, fmt) -> str:
    plan = {"command": args.command, "config": str(args.config), "seed": seed, "workers": workers,
            "out": out, "format": fmt, "model": cfg.model.model_dump(mode="json"),
            "run": cfg.run.model_dump(mode="json"), "task": task.model_dump(mode="json")}
    return json.dumps(plan, indent=2, sort_keys=True)


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        cfg, task = load_config(args.config, args.command)
    except ConfigError as exc:
        print(f"error: {exc}", file=stderr)
        for d in exc.diagnostics:
            print(f"  {d}", file=stderr)
        return EXIT_INVALID
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=stderr)
        return EXIT_INVALID
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be positive", file=stderr)
        return EXIT_INVALID
    seed = cfg.run.seed if args.seed is None else args.seed
    workers = args.workers or os.cpu_count() or 1
    out = args.out if args.out is not None else cfg.run.out
    fmt = args.format or cfg.run.format
    if args.dry_run:
        print(_plan(args, cfg, task, seed, workers, out, fmt), file=stdout)
        return EXIT_OK
    needs_model = not (args.command == "check" and task.condition in ("5", "random-walk"))
    model = None
    if needs_model:
        try:
            model = cfg.model.build()
            model.require_valid()
        except (ModelError, LawError, ValueError) as exc:
            print(f"error: invalid model: {exc}", file=stderr)
            return EXIT_INVALID
    try:
        rows = COMMANDS[args.command](cfg, task, model, seed, workers)
    except NUMERICAL_ERRORS as exc:
        print(f"error: numerical failure: {exc}", file=stderr)
        return EXIT_NUMERICAL
    except (ModelError, LawError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INVALID
    text = render(rows, fmt)
    if out:
        Path(out).write_text(text)
    else:
        stdout.write(text)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))
