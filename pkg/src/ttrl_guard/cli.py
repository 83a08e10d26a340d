"""Command-line entry point: ``ttrl-guard {run,analyze,sweep,report}``.

On failure the process prints a single JSON object ``{"error": ..., "message": ...}``
to stderr and exits nonzero (2 for configuration/usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .config import ExperimentConfig, Method, load_config, load_sweep_grid, parse_grid_values
from .errors import ConfigurationError, GuardError
from .harness import (analyze_log, load_summary, render_report, run_experiment, sweep, sweep_csv,
                      write_text)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _base_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "method", None) is not None:
        changes["method"] = Method(args.method)
    if getattr(args, "steps", None) is not None:
        changes["total_steps"] = args.steps
    return config.replace(**changes) if changes else config


def _emit(obj: dict) -> None:
    print(json.dumps(obj, separators=(",", ":")))


def cmd_run(args: argparse.Namespace) -> int:
    config = _base_config(args)
    result = run_experiment(config, args.out, backend=args.backend)
    fate = result.summary["analysis"].get("fate") or {}
    _emit({
        "log": str(result.log_path) if result.log_path else None,
        "summary": str(result.summary_path) if result.summary_path else None,
        "method": config.method.value,
        "seed": config.seed,
        "final_expected_pass_at_1": result.summary["final_expected_pass_at_1"],
        "total_degraded": fate.get("total_degraded"),
        "ld_ratio": fate.get("ld_ratio"),
    })
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    report = analyze_log(args.log, args.ground_truth)
    text = json.dumps(report, indent=2, allow_nan=False) + "\n"
    if args.out:
        path = write_text(Path(args.out) / "analysis.json", text)
        _emit({"analysis": str(path), "notices": report["notices"]})
    else:
        sys.stdout.write(text)
    return 0


def _parse_grid(items: Sequence[str]) -> dict[str, list[float]]:
    grid: dict[str, list[float]] = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"grid entries look like key=v1,v2 (got {item!r})")
        grid[key.strip()] = parse_grid_values(values)
    return grid


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _base_config(args)
    grid = load_sweep_grid(args.config) if args.config else {}
    grid.update(_parse_grid(args.grid))
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"--seeds must be comma-separated integers (got {args.seeds!r})") from None
    rows = sweep(config, grid, seeds, jobs=args.jobs)
    text = sweep_csv(rows)
    if args.out:
        path = write_text(Path(args.out) / "sweep.csv", text)
        _emit({"sweep": str(path), "cells": len(rows)})
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report = render_report([load_summary(p) for p in args.summaries])
    if args.out:
        write_text(Path(args.out) / "report.csv", report.csv)
        write_text(Path(args.out) / "report.txt", report.text)
    sys.stdout.write(report.text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ttrl-guard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI file with [scenario], [guard], [run] (and [sweep]) sections")
        p.add_argument("--seed", type=int)
        p.add_argument("--method", choices=[m.value for m in Method])
        p.add_argument("--steps", type=int, help="total training steps")

    p = sub.add_parser("run", help="simulate one experiment and write its log and summary")
    common(p)
    p.add_argument("--out", help="output directory for trajectory.jsonl and summary.json")
    p.add_argument("--backend", choices=["numba", "numpy"], help="kernel backend (default: env-selected)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="analyse a stored trajectory log")
    p.add_argument("log")
    p.add_argument("--ground-truth", help="CSV with columns problem_id,ground_truth")
    p.add_argument("--out", help="write analysis.json here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="grid sweep over GuardConfig fields")
    common(p)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                   help="grid axis; repeatable, merged over the config's [sweep] section")
    p.add_argument("--seeds", default="0", help="comma-separated seeds shared by every cell")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="write sweep.csv here instead of stdout")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render summaries as CSV and aligned text tables")
    p.add_argument("summaries", nargs="+", help="summary.json files or run directories")
    p.add_argument("--out", help="write report.csv and report.txt here")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}, separators=(",", ":")), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    except ConfigurationError as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except (GuardError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
