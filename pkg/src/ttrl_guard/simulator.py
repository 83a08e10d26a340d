"""Synthetic policy surrogate: categorical answer distributions per problem.

The policy for problem ``i`` is ``softmax(logits[i])`` over a small answer
support. Training uses a group-relative update on terminal rewards: each
sampled response's reward is centred on the group mean and pushed onto the
logit of the answer it produced. For a softmax policy with a zero-mean
baseline this is exactly the REINFORCE gradient, so it keeps the
winner-takes-all character of GRPO without any text model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import REGIME_BANDS, GuardConfig, Regime, ScenarioSpec
from .errors import ConfigurationError, ContractError
from .monitor import AnswerId, RolloutBatch
from .policy import PlanEntry

# Logit of the background (implausible) answers relative to the ground truth.
BACKGROUND_LOGIT = -3.0
BACKGROUND_JITTER = 0.25


@dataclass(frozen=True)
class SyntheticProblem:
    problem_id: int
    support_size: int
    ground_truth: AnswerId
    distractor: AnswerId
    initial_logits: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not 0 <= self.ground_truth < self.support_size:
            raise ContractError("ground truth outside the answer support")
        if not np.all(np.isfinite(self.initial_logits)):
            raise ContractError("initial logits must be finite")


@dataclass
class PolicyState:
    logits: np.ndarray
    learning_rate: float

    def probs(self, problem_id: int | None = None) -> np.ndarray:
        if problem_id is None:
            return softmax(self.logits)
        return softmax(self.logits[problem_id:problem_id + 1])[0]

    def copy(self) -> "PolicyState":
        return PolicyState(self.logits.copy(), self.learning_rate)


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    shifted = logits - logits.max(axis=1)[:, None]
    e = np.exp(shifted)
    return e / np.cumsum(e, axis=1)[:, -1:]


def generate_scenario(spec: ScenarioSpec, rng: np.random.Generator,
                      learning_rate: float = GuardConfig.learning_rate
                      ) -> tuple[list[SyntheticProblem], PolicyState]:
    """Draw ``n_problems`` problems with one strong distractor each.

    The ground truth sits at logit 0, the distractor at
    ``strength + spread * z`` and the remaining answers around
    :data:`BACKGROUND_LOGIT`. Raises :class:`ConfigurationError` when the
    realised mean initial pass@1 misses the regime's band.
    """
    n, s = spec.n_problems, spec.support_size
    truth = rng.integers(0, s, size=n)
    offset = rng.integers(1, s, size=n)
    distractor = (truth + offset) % s
    logits = BACKGROUND_LOGIT + BACKGROUND_JITTER * rng.standard_normal((n, s))
    rows = np.arange(n)
    logits[rows, truth] = 0.0
    logits[rows, distractor] = spec.strength + spec.logit_spread * rng.standard_normal(n)

    policy = PolicyState(logits, learning_rate)
    mean_p1 = float(policy.probs()[rows, truth].mean())
    lo, hi = REGIME_BANDS[spec.regime]
    if not lo <= mean_p1 <= hi:
        raise ConfigurationError(
            f"{spec.regime.value}: distractor_strength={spec.strength} gives initial pass@1 "
            f"{mean_p1:.3f}, outside [{lo}, {hi}]")
    problems = [SyntheticProblem(i, s, int(truth[i]), int(distractor[i]), logits[i].copy())
                for i in range(n)]
    return problems, policy


def draw_answers(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Map uniforms to answer ids by inverting the cumulative distribution."""
    cdf = np.cumsum(probs)
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(probs) - 1)


def counts_batch(problem_id: int, answers: np.ndarray) -> RolloutBatch:
    ids, counts = np.unique(answers, return_counts=True)
    return RolloutBatch(problem_id, {int(a): int(c) for a, c in zip(ids, counts)}, int(len(answers)))


def sample_rollouts(policy: PolicyState, problem_id: int, k: int, rng: np.random.Generator) -> RolloutBatch:
    if k < 1:
        raise ContractError("k must be >= 1")
    return counts_batch(problem_id, draw_answers(policy.probs(problem_id), rng.random(k)))


def apply_surrogate_update(policy: PolicyState, batch: RolloutBatch, entry: PlanEntry,
                           config: GuardConfig) -> PolicyState:
    """Return a new policy after one guarded update on ``batch`` (the update subset).

    Two reward channels are centred separately within the group: the
    weighted majority-vote reward ``w * 1[a == label]`` and the minority
    reward ``epsilon * 1[a in M]``. They are mixed ``(1 - beta, beta)`` and
    summed over every sampled response.
    """
    if entry.problem_id != batch.problem_id:
        raise ContractError(f"plan entry for {entry.problem_id!r} applied to batch of {batch.problem_id!r}")
    batch.validate()
    new = policy.copy()
    if entry.skipped:
        return new
    k = batch.k
    w, beta, eps = entry.weight, entry.beta, config.epsilon
    label, minority = entry.pseudo_label, entry.minority_set
    c_min = sum(c for a, c in batch.counts.items() if a in minority)
    mean_mv = w * batch.count(label) / k
    mean_min = eps * c_min / k
    row = new.logits[batch.problem_id]
    for a, c in batch.counts.items():
        a_mv = (w if a == label else 0.0) - mean_mv
        a_min = (eps if a in minority else 0.0) - mean_min
        mix = (1.0 - beta) * a_mv + beta * a_min
        row[a] += policy.learning_rate * c * mix
    return new


def expected_pass_at_1(policy: PolicyState, problem: SyntheticProblem) -> float:
    """Exact single-sample success probability."""
    return float(policy.probs(problem.problem_id)[problem.ground_truth])


def pass_at_1_estimate(policy: PolicyState, problem: SyntheticProblem,
                       rng: np.random.Generator, n: int = 4) -> float:
    """Empirical pass@1 from ``n`` sampled responses."""
    answers = draw_answers(policy.probs(problem.problem_id), rng.random(n))
    return float(np.mean(answers == problem.ground_truth))


def initial_pass_at_1(problems: list[SyntheticProblem]) -> float:
    probs = softmax(np.stack([p.initial_logits for p in problems]))
    return float(np.mean([probs[i, p.ground_truth] for i, p in enumerate(problems)]))


__all__ = [
    "SyntheticProblem", "PolicyState", "Regime", "softmax", "generate_scenario", "draw_answers",
    "counts_batch", "sample_rollouts", "apply_surrogate_update", "expected_pass_at_1",
    "pass_at_1_estimate", "initial_pass_at_1",
]
