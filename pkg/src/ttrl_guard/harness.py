"""Experiment orchestration: runs, JSONL trajectory logs, log analysis, sweeps, reports.

A run writes two artifacts: ``trajectory.jsonl`` (a header line, then one
record per (step, problem) in step-major order) and ``summary.json``. The
summary's ``analysis`` section is produced by converting the run into a
:class:`~ttrl_guard.analytics.TrajectoryTable`; :func:`analyze_log` rebuilds
the same table from the log, so re-analysing a log reproduces it exactly.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .analytics import TrajectoryTable, analyze_table
from .config import ExperimentConfig, GuardConfig, config_to_dict
from .engine import Trajectory, scenario_rng, simulate
from .errors import ConfigurationError, ContractError, LogParseError, ReportError
from .simulator import generate_scenario, initial_pass_at_1

LOG_SCHEMA = "ttrl-guard-trajectory"
SUMMARY_SCHEMA = "ttrl-guard-summary"
SCHEMA_VERSION = 1
RECORD_KEYS = ("step", "problem_id", "pseudo_label", "mr", "fr", "had_comp", "weight", "beta",
               "skipped", "la", "vote_counts")
LOG_NAME = "trajectory.jsonl"
SUMMARY_NAME = "summary.json"

_dumps = json.JSONEncoder(separators=(",", ":"), allow_nan=False).encode


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    summary: dict
    trajectory: Trajectory
    log_path: Path | None = None
    summary_path: Path | None = None


def simulate_config(config: ExperimentConfig, backend: str | None = None) -> tuple[Trajectory, float]:
    """Generate the scenario and run it; returns the trajectory and initial mean pass@1."""
    guard = config.resolved_guard()
    problems, policy = generate_scenario(config.scenario, scenario_rng(config.scenario_seed),
                                         guard.learning_rate)
    truth = np.array([p.ground_truth for p in problems], dtype=np.int64)
    traj = simulate(policy.logits, truth, guard, config.total_steps, config.seed,
                    checkpoint_every=config.checkpoint_every, backend=backend)
    return traj, initial_pass_at_1(problems)


def trajectory_table(traj: Trajectory, window: int) -> TrajectoryTable:
    return TrajectoryTable(
        problem_ids=list(range(traj.n_problems)),
        steps=traj.steps,
        labels=traj.labels,
        mr=traj.mr,
        fr=traj.fr,
        la=traj.la,
        ground_truth=traj.ground_truth,
        total_steps=traj.total_steps,
        window=window,
    )


def log_header(config: ExperimentConfig, ground_truth: Sequence[int]) -> dict:
    # No method label: the resolved coefficients fully determine a run, so a
    # guard run with every mechanism switched off logs exactly like ttrl.
    return {
        "schema": LOG_SCHEMA,
        "version": SCHEMA_VERSION,
        "config": config_to_dict(config),
        "ground_truth": {str(i): int(a) for i, a in enumerate(ground_truth)},
    }


def iter_log_lines(header: dict, traj: Trajectory) -> Iterator[str]:
    yield _dumps(header)
    n = traj.n_problems
    cols = {name: getattr(traj, name).T.tolist()
            for name in ("labels", "mr", "fr", "had_comp", "weight", "beta", "skipped", "la")}
    votes = traj.votes.transpose(1, 0, 2).tolist()
    for j, step in enumerate(traj.steps.tolist()):
        for i in range(n):
            yield _dumps({
                "step": step,
                "problem_id": i,
                "pseudo_label": cols["labels"][j][i],
                "mr": cols["mr"][j][i],
                "fr": cols["fr"][j][i],
                "had_comp": cols["had_comp"][j][i],
                "weight": cols["weight"][j][i],
                "beta": cols["beta"][j][i],
                "skipped": cols["skipped"][j][i],
                "la": cols["la"][j][i],
                "vote_counts": {str(a): c for a, c in enumerate(votes[j][i]) if c},
            })


def build_summary(config: ExperimentConfig, traj: Trajectory, initial_p1: float) -> dict:
    return {
        "schema": SUMMARY_SCHEMA,
        "version": SCHEMA_VERSION,
        "method": config.method.value,
        "seed": config.seed,
        "config": config_to_dict(config),
        "initial_expected_pass_at_1": initial_p1,
        "final_expected_pass_at_1": float(traj.final_expected_pass_at_1().mean()),
        "analysis": analyze_table(trajectory_table(traj, config.guard.window)),
    }


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None, *,
                   backend: str | None = None) -> RunResult:
    """Run one experiment; write the log and summary when a destination is given.

    The log goes to ``config.log_path`` or ``out_dir/trajectory.jsonl``; the
    summary to ``out_dir/summary.json``. Both files are opened before the
    simulation starts, so an unwritable destination fails fast with
    :class:`OSError` and leaves no summary behind.
    """
    log_path = Path(config.log_path) if config.log_path else (Path(out_dir) / LOG_NAME if out_dir else None)
    summary_path = Path(out_dir) / SUMMARY_NAME if out_dir else None
    if summary_path is not None:
        summary_path.parent.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        traj, p0 = simulate_config(config, backend)
        if log_fh is not None:
            header = log_header(config, traj.ground_truth)
            for line in iter_log_lines(header, traj):
                log_fh.write(line)
                log_fh.write("\n")
    finally:
        if log_fh is not None:
            log_fh.close()
    summary = build_summary(config, traj, p0)
    if summary_path is not None:
        summary_path.write_text(_dump_json(summary), encoding="utf-8")
    return RunResult(summary, traj, log_path, summary_path)


# --------------------------------------------------------------------------
# log ingestion
# --------------------------------------------------------------------------

def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_fraction(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0.0 <= v <= 1.0


def _check_record(rec: Any, line_no: int) -> None:
    if not isinstance(rec, dict):
        raise LogParseError(line_no, "record is not a JSON object")
    missing = [k for k in RECORD_KEYS if k not in rec]
    if missing:
        raise LogParseError(line_no, f"missing keys {missing}")
    if not _is_int(rec["step"]) or rec["step"] < 0:
        raise LogParseError(line_no, "step must be a non-negative integer")
    if not (_is_int(rec["problem_id"]) or isinstance(rec["problem_id"], str)):
        raise LogParseError(line_no, "problem_id must be an integer or string")
    if not _is_int(rec["pseudo_label"]):
        raise LogParseError(line_no, "pseudo_label must be an integer")
    for key in ("mr", "fr", "weight", "beta"):
        if not _is_fraction(rec[key]):
            raise LogParseError(line_no, f"{key} must be a number in [0, 1]")
    if rec["la"] is not None and not _is_fraction(rec["la"]):
        raise LogParseError(line_no, "la must be null or a number in [0, 1]")
    for key in ("had_comp", "skipped"):
        if not isinstance(rec[key], bool):
            raise LogParseError(line_no, f"{key} must be a boolean")
    votes = rec["vote_counts"]
    if (not isinstance(votes, dict) or not votes
            or not all(_is_int(c) and c >= 0 for c in votes.values())
            or sum(votes.values()) == 0):
        raise LogParseError(line_no, "vote_counts must be a non-empty map of non-negative integers")
    try:
        [int(a) for a in votes]
    except ValueError:
        raise LogParseError(line_no, "vote_counts keys must be integer answer ids") from None


def read_ground_truth(path: str | Path) -> dict[str, int]:
    """CSV with header ``problem_id,ground_truth``."""
    out: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"problem_id", "ground_truth"} <= set(reader.fieldnames):
            raise ContractError(f"{path}: expected columns problem_id,ground_truth")
        for row_no, row in enumerate(reader, start=2):
            try:
                out[row["problem_id"].strip()] = int(row["ground_truth"])
            except (TypeError, ValueError):
                raise ContractError(f"{path}: line {row_no}: ground_truth must be an integer") from None
    return out


def read_log(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse and validate a trajectory log; errors name the offending line."""
    records = []
    header = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                raise LogParseError(line_no, "blank line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogParseError(line_no, f"invalid JSON ({exc.msg})") from None
            if line_no == 1:
                if (not isinstance(obj, dict) or obj.get("schema") != LOG_SCHEMA
                        or obj.get("version") != SCHEMA_VERSION):
                    raise LogParseError(1, f"header must declare schema {LOG_SCHEMA!r} version {SCHEMA_VERSION}")
                header = obj
                continue
            _check_record(obj, line_no)
            obj["_line"] = line_no
            records.append(obj)
    if header is None:
        raise LogParseError(1, "empty log")
    if not records:
        raise LogParseError(1, "log has a header but no records")
    return header, records


def table_from_records(header: dict, records: list[dict],
                       ground_truth: Mapping[str, int] | None = None) -> TrajectoryTable:
    config = header.get("config") or {}
    window = int(config.get("guard", {}).get("window", GuardConfig.window))
    if ground_truth is None and header.get("ground_truth") is not None:
        ground_truth = {str(k): int(v) for k, v in header["ground_truth"].items()}

    steps: list[int] = []
    blocks: list[list[dict]] = []
    for rec in records:
        if not steps or rec["step"] != steps[-1]:
            if steps and rec["step"] < steps[-1]:
                raise LogParseError(rec["_line"], "steps must be non-decreasing")
            steps.append(rec["step"])
            blocks.append([])
        blocks[-1].append(rec)

    ids = [r["problem_id"] for r in blocks[0]]
    keys = [str(p) for p in ids]
    if len(set(keys)) != len(keys):
        raise LogParseError(blocks[0][0]["_line"], "duplicate problem_id within a step")
    for block in blocks[1:]:
        seen = [str(r["problem_id"]) for r in block]
        if seen != keys:
            bad = next((r for r, k in zip(block, keys) if str(r["problem_id"]) != k), block[-1])
            raise LogParseError(bad["_line"], f"step {block[0]['step']} does not cover the same "
                                              f"problems as step {steps[0]}")

    n, m = len(ids), len(steps)
    labels = np.array([[b[i]["pseudo_label"] for b in blocks] for i in range(n)], dtype=np.int64)
    mr = np.array([[float(b[i]["mr"]) for b in blocks] for i in range(n)])
    fr = np.array([[float(b[i]["fr"]) for b in blocks] for i in range(n)])

    truth = None
    if ground_truth is not None:
        missing = [k for k in keys if k not in ground_truth]
        if missing:
            raise ContractError(f"ground truth missing for problems {missing[:5]}")
        truth = np.array([ground_truth[k] for k in keys], dtype=np.int64)

    la = None
    if all(r["la"] is not None for r in records):
        la = np.array([[float(b[i]["la"]) for b in blocks] for i in range(n)])
    elif truth is not None:
        la = np.empty((n, m))
        for i in range(n):
            key = str(int(truth[i]))
            for j, b in enumerate(blocks):
                votes = b[i]["vote_counts"]
                la[i, j] = votes.get(key, 0) / sum(votes.values())

    total = int(config.get("run", {}).get("total_steps", steps[-1]))
    return TrajectoryTable(problem_ids=ids, steps=np.array(steps, dtype=np.int64), labels=labels,
                           mr=mr, fr=fr, la=la, ground_truth=truth, total_steps=total, window=window)


def analyze_log(log_path: str | Path, ground_truth_path: str | Path | None = None) -> dict:
    """Analytics report for a stored trajectory log.

    Ground truth comes from ``ground_truth_path`` when given, otherwise from
    the log header. Without it the label-accuracy sections are omitted and
    the report's ``notices`` say so.
    """
    header, records = read_log(log_path)
    truth = read_ground_truth(ground_truth_path) if ground_truth_path is not None else None
    return analyze_table(table_from_records(header, records, truth))


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

def _grid_value(name: str, value: Any) -> Any:
    ftype = {f.name: f.type for f in dataclasses.fields(GuardConfig)}[name]
    if ftype == "int":
        if float(value) != int(float(value)):
            raise ConfigurationError(f"{name} must be an integer, got {value!r}")
        return int(float(value))
    return float(value)


def expand_grid(base: GuardConfig, grid: Mapping[str, Sequence[Any]]) -> list[tuple[dict, GuardConfig]]:
    """Cartesian product of the grid, validated before anything runs."""
    known = {f.name for f in dataclasses.fields(GuardConfig)}
    unknown = sorted(set(grid) - known)
    if unknown:
        raise ConfigurationError(f"unknown sweep parameter(s) {unknown}; expected GuardConfig fields")
    names = sorted(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in names)):
        params = {k: _grid_value(k, v) for k, v in zip(names, combo)}
        cells.append((params, base.replace(**params)))
    return cells


def _summarise_run(config: ExperimentConfig) -> dict:
    return run_experiment(config).summary


@dataclass(frozen=True)
class SweepRow:
    cell: int
    params: dict
    mean_pass_at_1: float
    ld_ratio: float | None
    seeds: tuple[int, ...]


def sweep(base: ExperimentConfig, grid: Mapping[str, Sequence[Any]], seeds: Sequence[int] = (0,),
          *, jobs: int = 1) -> list[SweepRow]:
    """One row per grid cell; every cell runs the same seed set.

    L/D per cell pools counts over seeds (Learned total / Degraded total).
    """
    cells = expand_grid(base.guard, grid)
    if not seeds:
        raise ConfigurationError("sweep needs at least one seed")
    configs = [base.replace(guard=g, seed=int(s), log_path=None) for _, g in cells for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_summarise_run, configs))
    else:
        summaries = [_summarise_run(c) for c in configs]

    rows = []
    per = len(seeds)
    for idx, (params, _) in enumerate(cells):
        chunk = summaries[idx * per:(idx + 1) * per]
        p1 = float(np.mean([s["final_expected_pass_at_1"] for s in chunk]))
        learned = degraded = 0
        for s in chunk:
            fate = s["analysis"].get("fate")
            if fate is None:
                raise ContractError("sweep runs need at least 8 checkpoints for the fate breakdown")
            learned += round(fate["learned"] * fate["n_problems"])
            degraded += round(fate["degraded"] * fate["n_problems"])
        rows.append(SweepRow(idx, params, p1, None if degraded == 0 else learned / degraded,
                             tuple(int(s) for s in seeds)))
    return rows


UNDEFINED = "undefined"


def _num(x: float | None) -> str:
    return UNDEFINED if x is None else repr(float(x))


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "params", "mean_pass_at_1", "ld_ratio"])
    for r in rows:
        w.writerow([r.cell, json.dumps(r.params, sort_keys=True), _num(r.mean_pass_at_1), _num(r.ld_ratio)])
    return buf.getvalue()


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("method", "seed", "pass@1", "Degraded", "Marg.Deg.", "TotalDeg", "Learned",
                  "StableAR", "MargStable", "AlwaysWrong", "L/D")
_FATE_COLUMNS = {
    "Degraded": "degraded",
    "Marg.Deg.": "marginal_degraded",
    "TotalDeg": "total_degraded",
    "Learned": "learned",
    "StableAR": "stable_always_right",
    "MargStable": "marginal_stable",
    "AlwaysWrong": "always_wrong",
}


@dataclass(frozen=True)
class Report:
    rows: list[dict]
    csv: str
    text: str


def _summary_columns(summary: Mapping) -> tuple[set[str], dict]:
    row: dict = {}
    if "method" in summary:
        row["method"] = str(summary["method"])
    if "seed" in summary:
        row["seed"] = summary["seed"]
    if "final_expected_pass_at_1" in summary:
        row["pass@1"] = float(summary["final_expected_pass_at_1"])
    fate = (summary.get("analysis") or {}).get("fate")
    if fate is not None:
        for col, key in _FATE_COLUMNS.items():
            if key in fate:
                row[col] = float(fate[key])
        if "ld_ratio" in fate:
            row["L/D"] = fate["ld_ratio"]
    return set(row), row


def _label(i: int, summary: Mapping) -> str:
    return f"#{i} (method={summary.get('method')!r}, seed={summary.get('seed')!r})"


def _mean_row(method: str, group: list[dict]) -> dict:
    row = {"method": method, "seed": "mean", "pass@1": float(np.mean([r["pass@1"] for r in group]))}
    for col in _FATE_COLUMNS:
        row[col] = float(np.mean([r[col] for r in group]))
    row["L/D"] = None if row["Degraded"] == 0 else row["Learned"] / row["Degraded"]
    return row


def render_report(summaries: Sequence[Mapping]) -> Report:
    """Table of per-seed rows sorted by (method, seed), plus a mean row per multi-seed method.

    Raises :class:`ReportError` naming every summary whose column set differs
    from the full set (for example a run too short for a fate breakdown).
    """
    if not summaries:
        raise ReportError("render_report needs at least one summary")
    parsed = [_summary_columns(s) for s in summaries]
    wanted = set(REPORT_COLUMNS)
    offenders = [f"{_label(i, s)} missing {sorted(wanted - cols, key=REPORT_COLUMNS.index)}"
                 for i, (s, (cols, _)) in enumerate(zip(summaries, parsed)) if cols != wanted]
    if offenders:
        raise ReportError("inconsistent column sets: " + "; ".join(offenders))

    rows = sorted((r for _, r in parsed), key=lambda r: (r["method"], r["seed"]))
    out: list[dict] = []
    for method, group in itertools.groupby(rows, key=lambda r: r["method"]):
        group = list(group)
        out.extend(group)
        if len(group) > 1:
            out.append(_mean_row(method, group))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in out:
        w.writerow([r["method"], r["seed"]] + [_num(r[c]) for c in REPORT_COLUMNS[2:]])

    def fmt(r: dict, c: str) -> str:
        v = r[c]
        if c in ("method", "seed"):
            return str(v)
        if v is None:
            return UNDEFINED
        return f"{v:.2f}" if c == "L/D" else f"{v:.4f}"

    cells = [list(REPORT_COLUMNS)] + [[fmt(r, c) for c in REPORT_COLUMNS] for r in out]
    widths = [max(len(row[k]) for row in cells) for k in range(len(REPORT_COLUMNS))]
    lines = []
    for n, row in enumerate(cells):
        parts = [row[k].ljust(widths[k]) if k < 2 else row[k].rjust(widths[k]) for k in range(len(row))]
        lines.append("  ".join(parts).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w_ for w_ in widths))
    return Report(rows=out, csv=buf.getvalue(), text="\n".join(lines) + "\n")


def load_summary(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / SUMMARY_NAME
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportError(f"{p}: not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ReportError(f"{p}: summary must be a JSON object")
    return data


def write_text(path: str | Path, text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return p


__all__ = [
    "LOG_SCHEMA", "SUMMARY_SCHEMA", "SCHEMA_VERSION", "RECORD_KEYS", "RunResult", "simulate_config",
    "trajectory_table", "log_header", "iter_log_lines", "build_summary", "run_experiment",
    "read_log", "read_ground_truth", "table_from_records", "analyze_log", "expand_grid", "sweep",
    "SweepRow", "sweep_csv", "REPORT_COLUMNS", "Report", "render_report", "load_summary", "write_text",
]
