"""Trajectory analytics: label accuracy, fate categories, vote-rate curves, scissor statistics.

Every function here is read-only over its inputs. The central container is
:class:`TrajectoryTable`, a problem-by-checkpoint view that both the
simulator output and parsed JSONL logs are converted into, so an inline run
summary and a re-analysis of its log go through exactly the same code.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import ContractError, InsufficientHistoryError
from .monitor import AnswerId, RolloutBatch

N_INITIAL = 3
N_FINAL = 5
# Slack on the category boundaries; LA values are ratios of small integers,
# so this only absorbs the rounding of the ILA/FLA means.
BOUNDARY_EPS = 1e-9
MR_BINS = np.linspace(0.0, 1.0, 11)


class Category(str, enum.Enum):
    STABLE_ALWAYS_RIGHT = "Stable Always Right"
    DEGRADED = "Degraded"
    LEARNED = "Learned"
    MARGINAL_DEGRADED = "Marginal Degraded"
    MARGINAL_STABLE = "Marginal Stable"
    ALWAYS_WRONG = "Always Wrong"


FATE_FIELDS = {
    Category.STABLE_ALWAYS_RIGHT: "stable_always_right",
    Category.DEGRADED: "degraded",
    Category.LEARNED: "learned",
    Category.MARGINAL_DEGRADED: "marginal_degraded",
    Category.MARGINAL_STABLE: "marginal_stable",
    Category.ALWAYS_WRONG: "always_wrong",
}


def label_accuracy(batch: RolloutBatch, ground_truth: AnswerId, support_size: int | None = None) -> float:
    """Fraction of the batch's responses that equal the ground truth."""
    batch.validate(support_size)
    if ground_truth < 0 or (support_size is not None and ground_truth >= support_size):
        raise ContractError(f"ground truth {ground_truth!r} outside the answer support")
    return batch.count(ground_truth) / batch.k


def initial_final_accuracy(la_series: Sequence[float]) -> tuple[float, float]:
    """(ILA, FLA): mean of the first three and of the last five checkpoints."""
    la = np.asarray(la_series, dtype=float)
    if la.ndim != 1 or la.size < N_INITIAL + N_FINAL:
        raise InsufficientHistoryError(
            f"need at least {N_INITIAL + N_FINAL} checkpoints, got {la.size if la.ndim == 1 else la.shape}")
    return float(la[:N_INITIAL].mean()), float(la[-N_FINAL:].mean())


def classify(ila: float, fla: float) -> tuple[Category, bool]:
    """Category of an (ILA, FLA) pair and whether it came from the fallback.

    Rows are tried in table order; the first match wins. Pairs that match no
    row (high ILA, FLA just under 0.6, drop of at most 0.2) are binned as
    Marginal Stable with the fallback flag set.
    """
    e = BOUNDARY_EPS
    drop = ila - fla
    mid = 0.15 - e <= ila < 0.7 - e
    if ila >= 0.7 - e and fla >= 0.6 - e:
        return Category.STABLE_ALWAYS_RIGHT, False
    if ila >= 0.5 - e and drop > 0.2 + e:
        return Category.DEGRADED, False
    if ila < 0.15 - e and fla >= 0.5 - e:
        return Category.LEARNED, False
    if mid and drop > 0.15 + e:
        return Category.MARGINAL_DEGRADED, False
    if mid:
        return Category.MARGINAL_STABLE, False
    if ila < 0.15 - e:
        return Category.ALWAYS_WRONG, False
    return Category.MARGINAL_STABLE, True


def categorize_problem(la_series: Sequence[float]) -> Category:
    return classify(*initial_final_accuracy(la_series))[0]


@dataclass(frozen=True)
class FateBreakdown:
    stable_always_right: float
    degraded: float
    learned: float
    marginal_degraded: float
    marginal_stable: float
    always_wrong: float
    total_degraded: float
    ld_ratio: float | None
    n_problems: int
    fallback_count: int = 0

    def fractions(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in FATE_FIELDS.values()}

    def to_dict(self) -> dict:
        out = self.fractions()
        out.update(total_degraded=self.total_degraded, ld_ratio=self.ld_ratio,
                   n_problems=self.n_problems, fallback_count=self.fallback_count)
        return out


def fate_breakdown(categories: Sequence[Category], fallback_count: int = 0) -> FateBreakdown:
    """Category fractions, Total Degraded and the Learned/Degraded ratio.

    ``ld_ratio`` is ``None`` (undefined) when no problem is Degraded.
    """
    if len(categories) == 0:
        raise ContractError("fate breakdown needs at least one categorised problem")
    n = len(categories)
    counts = {c: 0 for c in Category}
    for c in categories:
        counts[Category(c)] += 1
    frac = {FATE_FIELDS[c]: counts[c] / n for c in Category}
    deg = counts[Category.DEGRADED]
    return FateBreakdown(
        **frac,
        total_degraded=frac["degraded"] + frac["marginal_degraded"],
        ld_ratio=None if deg == 0 else counts[Category.LEARNED] / deg,
        n_problems=n,
        fallback_count=fallback_count,
    )


def correct_vote_rate(pseudo_labels: Sequence[AnswerId], ground_truth: AnswerId) -> float:
    """Fraction of steps on which the ground truth won the majority vote."""
    labels = np.asarray(pseudo_labels)
    if labels.size == 0:
        raise ContractError("need at least one record")
    return float(np.mean(labels == ground_truth))


def progress(steps: np.ndarray, total_steps: int) -> np.ndarray:
    """Normalised training progress ``step / total_steps``."""
    if total_steps <= 0:
        return np.zeros(len(steps))
    return np.asarray(steps, dtype=float) / total_steps


def correct_vote_curve(labels: np.ndarray, ground_truth: np.ndarray, steps: np.ndarray,
                       total_steps: int, n_bins: int = 10) -> list[float | None]:
    """Correct-vote rate per progress bin, pooled over the given problems.

    ``labels`` is ``(n_problems, n_checkpoints)``. Bins with no checkpoints
    (or an empty problem subset) are ``None``.
    """
    wins = labels == np.asarray(ground_truth)[:, None]
    bins = np.minimum((progress(steps, total_steps) * n_bins).astype(int), n_bins - 1)
    out: list[float | None] = []
    for b in range(n_bins):
        cols = bins == b
        if wins.shape[0] == 0 or not cols.any():
            out.append(None)
        else:
            out.append(float(wins[:, cols].mean()))
    return out


def sliding_mean_rows(values: np.ndarray, window: int) -> np.ndarray:
    """Row-wise trailing mean over the last ``min(j + 1, window)`` columns."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    for j in range(values.shape[1]):
        lo = max(0, j - window + 1)
        acc = np.zeros(values.shape[0])
        for c in range(lo, j + 1):
            acc = acc + values[:, c]
        out[:, j] = acc / (j + 1 - lo)
    return out


@dataclass(frozen=True)
class PhaseStats:
    n_steps: int
    wrong_mr: tuple[float, ...]
    survival_space: float | None
    correct_majority_steps: int
    window_width: float | None

    def to_dict(self) -> dict:
        """JSON view; the wrong-answer MR distribution is summarised as a 10-bin histogram."""
        values = np.asarray(self.wrong_mr, dtype=float)
        hist = np.histogram(values, bins=MR_BINS)[0] if values.size else np.zeros(len(MR_BINS) - 1, int)
        return {
            "n_steps": self.n_steps,
            "wrong_mr": {
                "count": int(values.size),
                "mean": float(values.mean()) if values.size else None,
                "histogram": [int(h) for h in hist],
            },
            "survival_space": self.survival_space,
            "correct_majority_steps": self.correct_majority_steps,
            "window_width": self.window_width,
        }


def phase_stats(labels: np.ndarray, mr: np.ndarray, mr_bar: np.ndarray,
                ground_truth: np.ndarray, mask: np.ndarray) -> PhaseStats | None:
    """Scissor statistics over the checkpoint columns selected by ``mask``.

    Returns ``None`` when the phase holds no (problem, step) records.
    """
    sel = np.zeros(labels.shape, dtype=bool)
    sel[:, mask] = True
    if not sel.any():
        return None
    wrong = sel & (labels != np.asarray(ground_truth)[:, None])
    wrong_mr = mr[wrong]
    has_wrong = wrong_mr.size > 0
    return PhaseStats(
        n_steps=int(sel.sum()),
        wrong_mr=tuple(float(v) for v in wrong_mr),
        survival_space=float(np.mean(1.0 - mr_bar[wrong])) if has_wrong else None,
        correct_majority_steps=int((sel & ~wrong).sum()),
        window_width=float(np.mean(wrong_mr < 0.5)) if has_wrong else None,
    )


DEFAULT_PHASES = {"early": (0.0, 1.0 / 3.0), "late": (2.0 / 3.0, 1.0)}


def scissor_statistics(labels: np.ndarray, mr: np.ndarray, ground_truth: np.ndarray,
                       steps: np.ndarray, total_steps: int, window: int,
                       phases: dict[str, tuple[float, float]] | None = None) -> dict[str, PhaseStats | None]:
    """Per-phase wrong-answer MR, survival space ``1 - mr_bar``, correct-majority count and window width.

    Phases are half-open progress intervals ``[lo, hi)`` except that a phase
    ending at 1.0 includes the final checkpoint. ``mr_bar`` is recomputed
    from the logged MR with the run's window.
    """
    phases = DEFAULT_PHASES if phases is None else phases
    prog = progress(steps, total_steps)
    mr_bar = sliding_mean_rows(mr, window)
    out: dict[str, PhaseStats | None] = {}
    for name, (lo, hi) in phases.items():
        mask = (prog >= lo) & ((prog < hi) | ((hi >= 1.0) & (prog <= 1.0)))
        out[name] = phase_stats(labels, mr, mr_bar, ground_truth, mask)
    return out


def last_flip_away(labels: Sequence[AnswerId], ground_truth: AnswerId) -> int | None:
    """Index of the last checkpoint where the label moved off the truth, if any."""
    hit = None
    for j in range(1, len(labels)):
        if labels[j - 1] == ground_truth and labels[j] != ground_truth:
            hit = j
    return hit


def fr_peak_precedes_flip_away(labels: Sequence[AnswerId], fr: Sequence[float],
                               ground_truth: AnswerId) -> bool | None:
    """Does the (earliest) FR peak come strictly before the last flip away from the truth?

    ``None`` when the label never left the truth, so the ordering is undefined.
    """
    j = last_flip_away(labels, ground_truth)
    if j is None:
        return None
    return int(np.argmax(np.asarray(fr))) < j


@dataclass
class TrajectoryTable:
    """Problem-by-checkpoint arrays, shape ``(n_problems, n_checkpoints)`` unless noted."""

    problem_ids: list[Hashable]
    steps: np.ndarray              # (n_checkpoints,)
    labels: np.ndarray
    mr: np.ndarray
    fr: np.ndarray
    la: np.ndarray | None
    ground_truth: np.ndarray | None  # (n_problems,)
    total_steps: int
    window: int

    @property
    def n_problems(self) -> int:
        return len(self.problem_ids)


def categorize_table(table: TrajectoryTable) -> tuple[list[Category], int]:
    if table.la is None:
        raise ContractError("label accuracy is unavailable")
    cats, fallbacks = [], 0
    for row in table.la:
        cat, fb = classify(*initial_final_accuracy(row))
        cats.append(cat)
        fallbacks += fb
    return cats, fallbacks


def batch_series(table: TrajectoryTable) -> dict[str, list]:
    """Batch-level flip rate, match rate and label accuracy per checkpoint."""
    fr = [None] + [float(np.mean(table.labels[:, j] != table.labels[:, j - 1]))
                   for j in range(1, len(table.steps))]
    out = {
        "steps": [int(s) for s in table.steps],
        "flip_rate": fr,
        "match_rate": [float(v) for v in table.mr.mean(axis=0)],
    }
    if table.la is not None:
        out["label_accuracy"] = [float(v) for v in table.la.mean(axis=0)]
    return out


def analyze_table(table: TrajectoryTable, n_bins: int = 10) -> dict:
    """Full JSON-ready analytics report for one trajectory."""
    notices: list[str] = []
    report: dict = {
        "n_problems": table.n_problems,
        "n_checkpoints": int(len(table.steps)),
        "total_steps": table.total_steps,
        "batch": batch_series(table),
    }
    cats = None
    if table.la is None:
        notices.append("ground truth unavailable: fate breakdown, correct-vote rates and "
                       "scissor statistics omitted")
    elif len(table.steps) < N_INITIAL + N_FINAL:
        notices.append(f"fewer than {N_INITIAL + N_FINAL} checkpoints: fate breakdown omitted")
    else:
        cats, fallbacks = categorize_table(table)
        report["fate"] = fate_breakdown(cats, fallbacks).to_dict()
        report["categories"] = {str(p): c.value for p, c in zip(table.problem_ids, cats)}

    if table.ground_truth is not None:
        truth = table.ground_truth
        curves = {"all": correct_vote_curve(table.labels, truth, table.steps, table.total_steps, n_bins)}
        if cats is not None:
            sub = np.array([c in (Category.DEGRADED, Category.ALWAYS_WRONG) for c in cats])
            curves["degraded_or_always_wrong"] = correct_vote_curve(
                table.labels[sub], truth[sub], table.steps, table.total_steps, n_bins)
        report["correct_vote_rate"] = curves
        scissor = scissor_statistics(table.labels, table.mr, truth, table.steps,
                                     table.total_steps, table.window)
        report["scissor"] = {k: (None if v is None else v.to_dict()) for k, v in scissor.items()}
    elif table.la is not None:
        notices.append("ground-truth answers unavailable: correct-vote rates and scissor statistics omitted")
    report["notices"] = notices
    return report
