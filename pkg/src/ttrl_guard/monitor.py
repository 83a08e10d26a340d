"""Per-problem state monitor: pseudo-labels, match rate, flip rate and latches.

Everything here is label-free; it only looks at the answers a policy sampled.
Answer ids are plain ``int`` indices into a problem's answer support, so the
natural integer order doubles as the deterministic tie-break order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

from .config import GuardConfig
from .errors import ContractError, MalformedBatchError

AnswerId = int


@dataclass(frozen=True)
class RolloutBatch:
    """Answers sampled for one problem at one step, as vote counts."""

    problem_id: Hashable
    counts: Mapping[AnswerId, int]
    k: int

    def validate(self, support_size: int | None = None) -> None:
        if self.k <= 0 or not self.counts:
            raise MalformedBatchError(f"problem {self.problem_id!r}: empty batch")
        if any(c < 0 for c in self.counts.values()):
            raise MalformedBatchError(f"problem {self.problem_id!r}: negative count")
        if sum(self.counts.values()) != self.k:
            raise MalformedBatchError(
                f"problem {self.problem_id!r}: counts sum to {sum(self.counts.values())}, expected k={self.k}")
        if support_size is not None and any(not 0 <= a < support_size for a in self.counts):
            raise MalformedBatchError(f"problem {self.problem_id!r}: answer outside support")

    def count(self, answer: AnswerId) -> int:
        return self.counts.get(answer, 0)


@dataclass
class ProblemState:
    """Monitoring record for one problem. Mutated in place by :func:`update_problem_state`."""

    pseudo_history: list[AnswerId] = field(default_factory=list)
    mr_history: list[float] = field(default_factory=list)
    fr: float = 0.0
    had_comp: bool = False
    mr_bar: float = 0.0
    steady_below_count: int = 0
    mps_deactivated: bool = False
    delta_trigger_count: int = 0

    @property
    def history_length(self) -> int:
        return len(self.pseudo_history)

    @property
    def pseudo_label(self) -> AnswerId | None:
        return self.pseudo_history[-1] if self.pseudo_history else None

    @property
    def mr(self) -> float:
        return self.mr_history[-1] if self.mr_history else 0.0

    def check(self, config: GuardConfig | None = None) -> None:
        if len(self.pseudo_history) != len(self.mr_history):
            raise ContractError("pseudo_history and mr_history lengths differ")
        for value in (self.fr, self.mr_bar, *self.mr_history):
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"fraction out of [0, 1]: {value}")
        if config is not None and self.delta_trigger_count > config.window:
            raise ContractError("delta_trigger_count exceeds the window cap")


def majority_vote(batch: RolloutBatch) -> tuple[AnswerId, float]:
    """Return the most voted answer and its match rate (top count / k).

    Ties go to the smallest answer id, so the result does not depend on the
    insertion order of ``batch.counts``.
    """
    batch.validate()
    top = max(batch.counts.values())
    label = min(a for a, c in batch.counts.items() if c == top)
    return label, top / batch.k


def windowed_flip_rate(pseudo_history: Sequence[AnswerId], window: int) -> float:
    """Fraction of the last ``min(t, window)`` transitions where the label changed.

    ``t`` is the number of available transitions (``len(history) - 1``); a
    history with fewer than two entries has flip rate 0.
    """
    if window < 1:
        raise ContractError("window must be >= 1")
    n_transitions = min(len(pseudo_history) - 1, window)
    if n_transitions <= 0:
        return 0.0
    tail = pseudo_history[-(n_transitions + 1):]
    flips = sum(1 for prev, cur in zip(tail, tail[1:]) if prev != cur)
    return flips / n_transitions


def sliding_mean(values: Sequence[float], window: int) -> float:
    n = min(len(values), window)
    if n == 0:
        return 0.0
    return sum(values[-n:]) / n


def update_problem_state(state: ProblemState, batch: RolloutBatch, config: GuardConfig) -> ProblemState:
    """Fold one step's vote batch into ``state`` and return it.

    HadComp latches the first time the windowed flip rate exceeds ``tau_fr``.
    The steady-exit counter for minority protection only runs once the
    problem has been contested (HadComp set): a problem that never activated
    protection has nothing to deactivate.
    """
    label, mr = majority_vote(batch)
    state.pseudo_history.append(label)
    state.mr_history.append(mr)
    state.fr = windowed_flip_rate(state.pseudo_history, config.window)
    if state.fr > config.tau_fr:
        state.had_comp = True
    state.mr_bar = sliding_mean(state.mr_history, config.window)
    if state.fr > config.tau_fr:
        state.steady_below_count = 0
    elif state.had_comp:
        state.steady_below_count += 1
    if state.steady_below_count >= config.t_steady:
        state.mps_deactivated = True
    return state


def batch_flip_rate(previous_labels: Mapping[Hashable, AnswerId],
                    current_labels: Mapping[Hashable, AnswerId]) -> float:
    """Fraction of problems whose majority-vote label changed between two steps."""
    if set(previous_labels) != set(current_labels) or not current_labels:
        raise ContractError("label maps must share the same non-empty key set")
    changed = sum(1 for p, label in current_labels.items() if previous_labels[p] != label)
    return changed / len(current_labels)


def batch_match_rate(batches: Sequence[RolloutBatch]) -> float:
    """Pooled fraction of sampled responses that match their problem's winner."""
    if not batches:
        raise ContractError("need at least one batch")
    matched = total = 0
    for batch in batches:
        label, _ = majority_vote(batch)
        matched += batch.count(label)
        total += batch.k
    return matched / total
