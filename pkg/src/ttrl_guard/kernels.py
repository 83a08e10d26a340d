"""Array kernels for the simulation engine.

Every kernel exists twice: a loop version compiled with numba ``@njit`` and a
vectorised pure-numpy version. The numpy path is used when numba is missing
or when ``TTRL_GUARD_DISABLE_NUMBA=1`` is set; :func:`get_backend` picks one.

Both paths perform the same floating-point operations in the same order, so
given identical inputs they agree to the last bit except for ``exp`` inside
the softmax, where numba's libm and numpy's SIMD routine may differ by an ulp.

Arrays are row-per-problem. Mutating kernels write into their ``out``-style
arguments in place.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

ENV_FLAG = "TTRL_GUARD_DISABLE_NUMBA"


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def softmax_rows_numpy(logits):
    shifted = logits - logits.max(axis=1)[:, None]
    e = np.exp(shifted)
    total = np.cumsum(e, axis=1)[:, -1]
    return e / total[:, None]


def sample_counts_numpy(probs, u, k_update):
    """Inverse-CDF draws; returns (vote counts over all columns of ``u``, counts over the first ``k_update``)."""
    n, s = probs.shape
    cdf = np.cumsum(probs, axis=1)
    answers = (cdf[:, None, :] <= u[:, :, None]).sum(axis=2)
    np.minimum(answers, s - 1, out=answers)
    onehot = answers[:, :, None] == np.arange(s)[None, None, :]
    votes = onehot.sum(axis=1).astype(np.int64)
    update = onehot[:, :k_update].sum(axis=1).astype(np.int64)
    return votes, update


def monitor_step_numpy(votes, t, labels, mrs, fr, had_comp, mr_bar, steady, mps_off,
                       window, tau_fr, t_steady):
    k = votes[0].sum()
    label = votes.argmax(axis=1)
    labels[:, t] = label
    mrs[:, t] = votes.max(axis=1) / k

    n_tr = min(t, window)
    if n_tr > 0:
        flips = (labels[:, t - n_tr + 1:t + 1] != labels[:, t - n_tr:t]).sum(axis=1)
        fr[:] = flips / n_tr
    else:
        fr[:] = 0.0
    had_comp |= fr > tau_fr

    n_mr = min(t + 1, window)
    acc = np.zeros(labels.shape[0])
    for j in range(t - n_mr + 1, t + 1):
        acc = acc + mrs[:, j]
    mr_bar[:] = acc / n_mr

    flipping = fr > tau_fr
    steady[:] = np.where(flipping, 0, np.where(had_comp, steady + 1, steady))
    mps_off |= steady >= t_steady


def plan_step_numpy(votes, label, mr, fr, had_comp, mr_bar, mps_off, delta_count, hist_len,
                    lambda1, lambda2, tau_fr, tau_mr, w_min, beta_max, window, theta_mr,
                    threshold, weight, beta, minority, high_risk):
    """FRS weights, MPS coefficients and minority masks, RCSU flags; advances C2 counters."""
    alpha = 1.0 - lambda1 * fr
    c1 = had_comp & (mr > tau_mr) & (fr > tau_fr)
    c2 = (~had_comp) & (hist_len >= window) & (mr_bar > tau_mr) & (delta_count < window)
    gamma = np.where(c1, 1.0 - lambda2, 1.0)
    delta = np.where(c2, 1.0 - lambda2 / 2.0, 1.0)
    weight[:] = np.maximum(w_min, alpha * gamma * delta)
    flipping = fr > tau_fr
    beta[:] = np.where(flipping & ~mps_off, beta_max * fr, 0.0)
    not_label = np.arange(votes.shape[1])[None, :] != label[:, None]
    minority[:] = flipping[:, None] & (votes >= threshold) & not_label
    high_risk[:] = had_comp & (hist_len >= window) & (mr_bar > theta_mr)
    delta_count += (c2 & (delta < 1.0)).astype(delta_count.dtype)


def surrogate_update_numpy(logits, update, label, weight, beta, minority, skipped, eta, eps):
    """Group-mean-centred reward-to-logit step, one row per problem."""
    n, s = update.shape
    k = update[0].sum()
    rows = np.arange(n)
    mean_mv = weight * update[rows, label] / k
    mean_min = eps * (update * minority).sum(axis=1) / k
    is_label = np.arange(s)[None, :] == label[:, None]
    a_mv = np.where(is_label, weight[:, None], 0.0) - mean_mv[:, None]
    a_min = np.where(minority, eps, 0.0) - mean_min[:, None]
    mix = (1.0 - beta)[:, None] * a_mv + beta[:, None] * a_min
    step = eta * update * mix
    active = ~skipped
    logits[active] += step[active]


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

def _softmax_rows_loop(logits):
    n, s = logits.shape
    out = np.empty_like(logits)
    for i in range(n):
        m = logits[i, 0]
        for a in range(1, s):
            if logits[i, a] > m:
                m = logits[i, a]
        total = 0.0
        for a in range(s):
            out[i, a] = np.exp(logits[i, a] - m)
            total += out[i, a]
        for a in range(s):
            out[i, a] = out[i, a] / total
    return out


def _sample_counts_loop(probs, u, k_update):
    n, s = probs.shape
    kv = u.shape[1]
    votes = np.zeros((n, s), dtype=np.int64)
    update = np.zeros((n, s), dtype=np.int64)
    cdf = np.empty(s)
    for i in range(n):
        acc = 0.0
        for a in range(s):
            acc += probs[i, a]
            cdf[a] = acc
        for j in range(kv):
            x = u[i, j]
            ans = 0
            for a in range(s):
                if cdf[a] <= x:
                    ans += 1
            if ans > s - 1:
                ans = s - 1
            votes[i, ans] += 1
            if j < k_update:
                update[i, ans] += 1
    return votes, update


def _monitor_step_loop(votes, t, labels, mrs, fr, had_comp, mr_bar, steady, mps_off,
                       window, tau_fr, t_steady):
    n, s = votes.shape
    k = 0
    for a in range(s):
        k += votes[0, a]
    n_tr = min(t, window)
    n_mr = min(t + 1, window)
    for i in range(n):
        best = 0
        for a in range(1, s):
            if votes[i, a] > votes[i, best]:
                best = a
        labels[i, t] = best
        mrs[i, t] = votes[i, best] / k
        if n_tr > 0:
            flips = 0
            for j in range(t - n_tr + 1, t + 1):
                if labels[i, j] != labels[i, j - 1]:
                    flips += 1
            fr[i] = flips / n_tr
        else:
            fr[i] = 0.0
        if fr[i] > tau_fr:
            had_comp[i] = True
        acc = 0.0
        for j in range(t - n_mr + 1, t + 1):
            acc = acc + mrs[i, j]
        mr_bar[i] = acc / n_mr
        if fr[i] > tau_fr:
            steady[i] = 0
        elif had_comp[i]:
            steady[i] += 1
        if steady[i] >= t_steady:
            mps_off[i] = True


def _plan_step_loop(votes, label, mr, fr, had_comp, mr_bar, mps_off, delta_count, hist_len,
                    lambda1, lambda2, tau_fr, tau_mr, w_min, beta_max, window, theta_mr,
                    threshold, weight, beta, minority, high_risk):
    n, s = votes.shape
    for i in range(n):
        alpha = 1.0 - lambda1 * fr[i]
        c1 = had_comp[i] and mr[i] > tau_mr and fr[i] > tau_fr
        c2 = ((not had_comp[i]) and hist_len >= window and mr_bar[i] > tau_mr
              and delta_count[i] < window)
        gamma = 1.0 - lambda2 if c1 else 1.0
        delta = 1.0 - lambda2 / 2.0 if c2 else 1.0
        w = alpha * gamma * delta
        weight[i] = w if w > w_min else w_min
        flipping = fr[i] > tau_fr
        if flipping and not mps_off[i]:
            beta[i] = beta_max * fr[i]
        else:
            beta[i] = 0.0
        for a in range(s):
            minority[i, a] = flipping and votes[i, a] >= threshold and a != label[i]
        high_risk[i] = had_comp[i] and hist_len >= window and mr_bar[i] > theta_mr
        if c2 and delta < 1.0:
            delta_count[i] += 1


def _surrogate_update_loop(logits, update, label, weight, beta, minority, skipped, eta, eps):
    n, s = update.shape
    k = 0
    for a in range(s):
        k += update[0, a]
    for i in range(n):
        if skipped[i]:
            continue
        c_min = 0
        for a in range(s):
            if minority[i, a]:
                c_min += update[i, a]
        mean_mv = weight[i] * update[i, label[i]] / k
        mean_min = eps * c_min / k
        for a in range(s):
            a_mv = (weight[i] if a == label[i] else 0.0) - mean_mv
            a_min = (eps if minority[i, a] else 0.0) - mean_min
            mix = (1.0 - beta[i]) * a_mv + beta[i] * a_min
            logits[i, a] += eta * update[i, a] * mix


_NUMPY = SimpleNamespace(
    name="numpy",
    softmax_rows=softmax_rows_numpy,
    sample_counts=sample_counts_numpy,
    monitor_step=monitor_step_numpy,
    plan_step=plan_step_numpy,
    surrogate_update=surrogate_update_numpy,
)

_NUMBA = None


def _compile_numba() -> SimpleNamespace:
    global _NUMBA
    if _NUMBA is None:
        jit = njit(cache=True)
        _NUMBA = SimpleNamespace(
            name="numba",
            softmax_rows=jit(_softmax_rows_loop),
            sample_counts=jit(_sample_counts_loop),
            monitor_step=jit(_monitor_step_loop),
            plan_step=jit(_plan_step_loop),
            surrogate_update=jit(_surrogate_update_loop),
        )
    return _NUMBA


def default_backend() -> str:
    if not HAVE_NUMBA or os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes"):
        return "numpy"
    return "numba"


def get_backend(name: str | None = None) -> SimpleNamespace:
    """Kernel namespace for ``"numba"`` or ``"numpy"`` (default: env-selected)."""
    name = name or default_backend()
    if name == "numpy":
        return _NUMPY
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return _compile_numba()
    raise ValueError(f"unknown kernel backend {name!r}")
