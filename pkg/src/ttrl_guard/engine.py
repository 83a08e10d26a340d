"""Vectorised training loop over all problems at once.

Per step: sample ``k_votes`` answers per problem, update the monitor, route,
downsample the first ``k_samples`` answers (draws are i.i.d., so that is a
uniformly random subset), apply the surrogate update. Step ``total_steps``
is a final snapshot with no update after it.

Random streams are keyed by ``(seed, stream, step)`` so every step's draws are
independent of how earlier steps were scheduled; row ``i`` of a step's block
belongs to problem ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GuardConfig
from .kernels import get_backend
from .policy import select_skips

ROLLOUT_STREAM = 1
SKIP_STREAM = 2
SCENARIO_STREAM = 3


def rollout_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, ROLLOUT_STREAM, step])


def skip_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, SKIP_STREAM, step])


def scenario_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, SCENARIO_STREAM])


@dataclass
class Trajectory:
    """Per-(problem, logged step) arrays; shape ``(n_problems, n_logged)`` unless noted."""

    steps: np.ndarray            # (n_logged,)
    labels: np.ndarray
    mr: np.ndarray
    fr: np.ndarray
    had_comp: np.ndarray
    weight: np.ndarray
    beta: np.ndarray
    skipped: np.ndarray
    la: np.ndarray
    votes: np.ndarray            # (n_problems, n_logged, support)
    ground_truth: np.ndarray     # (n_problems,)
    final_logits: np.ndarray     # (n_problems, support)
    total_steps: int

    @property
    def n_problems(self) -> int:
        return self.labels.shape[0]

    def final_expected_pass_at_1(self) -> np.ndarray:
        from .simulator import softmax
        probs = softmax(self.final_logits)
        return probs[np.arange(self.n_problems), self.ground_truth]


def simulate(logits: np.ndarray, ground_truth: np.ndarray, guard: GuardConfig, total_steps: int,
             seed: int, *, checkpoint_every: int = 1, backend: str | None = None) -> Trajectory:
    kern = get_backend(backend)
    logits = np.array(logits, dtype=np.float64, copy=True)
    truth = np.asarray(ground_truth, dtype=np.int64)
    n, s = logits.shape
    T = total_steps
    rows = np.arange(n)

    labels = np.zeros((n, T + 1), dtype=np.int64)
    mrs = np.zeros((n, T + 1))
    fr = np.zeros(n)
    had_comp = np.zeros(n, dtype=bool)
    mr_bar = np.zeros(n)
    steady = np.zeros(n, dtype=np.int64)
    mps_off = np.zeros(n, dtype=bool)
    delta_count = np.zeros(n, dtype=np.int64)

    weight = np.ones(n)
    beta = np.zeros(n)
    minority = np.zeros((n, s), dtype=bool)
    high_risk = np.zeros(n, dtype=bool)

    logged = [t for t in range(T + 1) if t % checkpoint_every == 0 or t == T]
    m = len(logged)
    out = dict(
        fr=np.zeros((n, m)), had_comp=np.zeros((n, m), dtype=bool), weight=np.zeros((n, m)),
        beta=np.zeros((n, m)), skipped=np.zeros((n, m), dtype=bool), la=np.zeros((n, m)),
        votes=np.zeros((n, m, s), dtype=np.int64),
    )
    threshold = guard.k_votes // guard.minority_threshold_divisor
    cap = guard.skip_cap(n)
    col = 0
    for t in range(T + 1):
        u = rollout_rng(seed, t).random((n, guard.k_votes))
        probs = kern.softmax_rows(logits)
        votes, update = kern.sample_counts(probs, u, guard.k_samples)
        kern.monitor_step(votes, t, labels, mrs, fr, had_comp, mr_bar, steady, mps_off,
                          guard.window, guard.tau_fr, guard.t_steady)
        label = labels[:, t].copy()
        kern.plan_step(votes, label, mrs[:, t].copy(), fr, had_comp, mr_bar, mps_off, delta_count, t + 1,
                       guard.lambda1, guard.lambda2, guard.tau_fr, guard.tau_mr, guard.w_min,
                       guard.beta_max, guard.window, guard.theta_mr, threshold,
                       weight, beta, minority, high_risk)
        skipped = select_skips(high_risk, guard.p_skip, cap, skip_rng(seed, t))

        if col < m and logged[col] == t:
            out["fr"][:, col] = fr
            out["had_comp"][:, col] = had_comp
            out["weight"][:, col] = weight
            out["beta"][:, col] = beta
            out["skipped"][:, col] = skipped
            out["la"][:, col] = votes[rows, truth] / guard.k_votes
            out["votes"][:, col] = votes
            col += 1
        if t < T:
            kern.surrogate_update(logits, update, label, weight, beta, minority, skipped,
                                  guard.learning_rate, guard.epsilon)

    idx = np.array(logged, dtype=np.int64)
    return Trajectory(steps=idx, labels=labels[:, idx], mr=mrs[:, idx], ground_truth=truth,
                      final_logits=logits, total_steps=T, **out)
