"""Guard decision logic: reward scaling, minority sets, sparse updating, routing.

All functions except :func:`build_step_plan` are pure and per-problem.
``build_step_plan`` makes the one step-global choice (which high-risk
problems to skip) from a caller-supplied generator.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Hashable, Mapping

import numpy as np

from .config import GuardConfig
from .errors import ContractError
from .monitor import AnswerId, ProblemState, RolloutBatch


class Path(str, enum.Enum):
    STABLE = "Stable"
    AT_RISK = "AtRisk"
    HIGH_RISK = "HighRisk"


@dataclass(frozen=True)
class FrsWeight:
    alpha: float
    gamma: float
    delta: float
    c1: bool
    c2: bool
    weight: float


def frs_weight(state: ProblemState, mr: float, config: GuardConfig) -> FrsWeight:
    """Flip-rate-aware reward weight ``max(w_min, alpha * gamma * delta)``.

    C1 (confident but flipping) requires HadComp, C2 (never contested, long
    history, confident on average) requires its absence, so the two can never
    fire together. C2 stops firing once it has been applied ``window`` times.
    """
    fr = state.fr
    alpha = 1.0 - config.lambda1 * fr
    c1 = state.had_comp and mr > config.tau_mr and fr > config.tau_fr
    c2 = (not state.had_comp
          and state.history_length >= config.window
          and state.mr_bar > config.tau_mr
          and state.delta_trigger_count < config.window)
    gamma = 1.0 - config.lambda2 if c1 else 1.0
    delta = 1.0 - config.lambda2 / 2.0 if c2 else 1.0
    weight = max(config.w_min, alpha * gamma * delta)
    return FrsWeight(alpha=alpha, gamma=gamma, delta=delta, c1=c1, c2=c2, weight=weight)


def minority_threshold(k: int, config: GuardConfig) -> int:
    return k // config.minority_threshold_divisor


def minority_set(batch: RolloutBatch, pseudo_label: AnswerId, config: GuardConfig) -> frozenset[AnswerId]:
    """Non-winning answers holding at least ``k // 4`` of the votes."""
    batch.validate()
    if batch.count(pseudo_label) == 0:
        raise ContractError(f"pseudo-label {pseudo_label!r} has no votes in the batch")
    threshold = minority_threshold(batch.k, config)
    return frozenset(a for a, c in batch.counts.items() if a != pseudo_label and c >= threshold)


def mps_coefficient(state: ProblemState, config: GuardConfig) -> float:
    """Minority mixing weight, ``beta_max * fr`` while the problem is flipping."""
    if state.mps_deactivated or state.fr <= config.tau_fr:
        return 0.0
    return config.beta_max * state.fr


def rcsu_high_risk(state: ProblemState, config: GuardConfig) -> bool:
    return (state.had_comp
            and state.history_length >= config.window
            and state.mr_bar > config.theta_mr)


def select_skips(high_risk: np.ndarray, p_skip: float, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(p_skip) skip draw for each high-risk problem, trimmed to ``cap``.

    One uniform is drawn per problem regardless of risk, so the stream
    consumption does not depend on the monitor state. When too many problems
    are selected, a uniformly random subset of exactly ``cap`` is kept.
    """
    high_risk = np.asarray(high_risk, dtype=bool)
    u = rng.random(high_risk.shape[0])
    skipped = high_risk & (u < p_skip)
    chosen = np.flatnonzero(skipped)
    if chosen.size > cap:
        keep = rng.choice(chosen, size=cap, replace=False)
        skipped = np.zeros_like(skipped)
        skipped[keep] = True
    return skipped


@dataclass(frozen=True)
class PlanEntry:
    problem_id: Hashable
    pseudo_label: AnswerId
    path: Path
    frs: FrsWeight
    minority_set: frozenset[AnswerId]
    beta: float
    skipped: bool

    @property
    def weight(self) -> float:
        return self.frs.weight


@dataclass(frozen=True)
class StepPlan:
    entries: dict[Hashable, PlanEntry]

    def __getitem__(self, problem_id: Hashable) -> PlanEntry:
        return self.entries[problem_id]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def n_skipped(self) -> int:
        return sum(e.skipped for e in self.entries.values())


def build_step_plan(states: Mapping[Hashable, ProblemState],
                    batches: Mapping[Hashable, RolloutBatch],
                    config: GuardConfig,
                    rng: np.random.Generator) -> StepPlan:
    """Route every problem to Stable / AtRisk / HighRisk and assemble its directives.

    States must already include this step's batch. Problems are processed in
    the iteration order of ``states``. The states are not modified; call
    :func:`record_triggers` afterwards to advance the C2 counters.
    """
    if set(states) != set(batches):
        raise ContractError("states and batches cover different problem sets")
    ids = list(states)
    high = np.array([rcsu_high_risk(states[p], config) for p in ids], dtype=bool)
    skipped = select_skips(high, config.p_skip, config.skip_cap(len(ids)), rng)

    entries = {}
    for i, pid in enumerate(ids):
        state = states[pid]
        if state.pseudo_label is None:
            raise ContractError(f"state of {pid!r} has not been updated for this step")
        label = state.pseudo_label
        frs = frs_weight(state, state.mr, config)
        flipping = state.fr > config.tau_fr
        if high[i]:
            path = Path.HIGH_RISK
        elif flipping:
            path = Path.AT_RISK
        else:
            path = Path.STABLE
        entries[pid] = PlanEntry(
            problem_id=pid,
            pseudo_label=label,
            path=path,
            frs=frs,
            minority_set=minority_set(batches[pid], label, config) if flipping else frozenset(),
            beta=mps_coefficient(state, config) if flipping else 0.0,
            skipped=bool(skipped[i]),
        )
    return StepPlan(entries)


def record_triggers(states: Mapping[Hashable, ProblemState], plan: StepPlan) -> None:
    """Advance each problem's C2 counter where the plan applied ``delta < 1``."""
    for pid, entry in plan.entries.items():
        if entry.frs.c2 and entry.frs.delta < 1.0:
            states[pid].delta_trigger_count += 1
