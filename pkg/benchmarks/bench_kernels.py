"""Time the compiled (numba) kernels against the pure-numpy fallback.

Two measurements per backend: each hot kernel in isolation on a fixed
problem batch, and a full ``simulate`` run. Compilation is triggered by a
warm-up call and excluded. Both backends must produce identical
trajectories; the script exits nonzero if they do not.

    python3 benchmarks/bench_kernels.py --problems 200 --steps 300 --repeat 5
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from ttrl_guard import kernels
from ttrl_guard.config import GuardConfig, ScenarioSpec
from ttrl_guard.engine import rollout_rng, scenario_rng, simulate
from ttrl_guard.simulator import generate_scenario


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(kern, logits, cfg: GuardConfig):
    n, s = logits.shape
    u = rollout_rng(0, 0).random((n, cfg.k_votes))
    probs = kern.softmax_rows(logits)
    votes, update = kern.sample_counts(probs, u, cfg.k_samples)
    labels = np.zeros((n, 8), dtype=np.int64)
    mrs = np.zeros((n, 8))
    state = dict(fr=np.zeros(n), had_comp=np.zeros(n, bool), mr_bar=np.zeros(n),
                 steady=np.zeros(n, np.int64), mps_off=np.zeros(n, bool))
    kern.monitor_step(votes, 0, labels, mrs, state["fr"], state["had_comp"], state["mr_bar"],
                      state["steady"], state["mps_off"], cfg.window, cfg.tau_fr, cfg.t_steady)
    label, mr = labels[:, 0].copy(), mrs[:, 0].copy()
    weight, beta = np.ones(n), np.zeros(n)
    minority, high = np.zeros((n, s), bool), np.zeros(n, bool)
    delta_count, skipped = np.zeros(n, np.int64), np.zeros(n, bool)
    work = logits.copy()
    threshold = cfg.k_votes // cfg.minority_threshold_divisor

    return {
        "softmax_rows": lambda: kern.softmax_rows(logits),
        "sample_counts": lambda: kern.sample_counts(probs, u, cfg.k_samples),
        "monitor_step": lambda: kern.monitor_step(
            votes, 1, labels, mrs, state["fr"].copy(), state["had_comp"].copy(), state["mr_bar"].copy(),
            state["steady"].copy(), state["mps_off"].copy(), cfg.window, cfg.tau_fr, cfg.t_steady),
        "plan_step": lambda: kern.plan_step(
            votes, label, mr, state["fr"], state["had_comp"], state["mr_bar"], state["mps_off"],
            delta_count.copy(), 1, cfg.lambda1, cfg.lambda2, cfg.tau_fr, cfg.tau_mr, cfg.w_min,
            cfg.beta_max, cfg.window, cfg.theta_mr, threshold, weight, beta, minority, high),
        "surrogate_update": lambda: kern.surrogate_update(
            work, update, label, weight, beta, minority, skipped, cfg.learning_rate, cfg.epsilon),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problems", type=int, default=200)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=5, help="best-of repetitions")
    ap.add_argument("--inner", type=int, default=200, help="kernel calls per timing sample")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is available", file=sys.stderr)
        return 1

    cfg = GuardConfig()
    _, policy = generate_scenario(ScenarioSpec(n_problems=args.problems), scenario_rng(args.seed))
    truth = np.zeros(args.problems, dtype=np.int64)
    backends = {name: kernels.get_backend(name) for name in ("numpy", "numba")}

    # warm-up (triggers JIT compilation for numba)
    for name in backends:
        simulate(policy.logits, truth, cfg, 2, args.seed, backend=name)

    print(f"kernels, {args.problems} problems x {policy.logits.shape[1]} answers, "
          f"best of {args.repeat} x {args.inner} calls (microseconds per call)")
    print(f"{'kernel':<18}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    cases = {name: kernel_cases(k, policy.logits, cfg) for name, k in backends.items()}
    for kname in cases["numpy"]:
        per_call = {}
        for bname in backends:
            fn = cases[bname][kname]
            per_call[bname] = best_of(lambda: [fn() for _ in range(args.inner)], args.repeat) / args.inner * 1e6
        print(f"{kname:<18}{per_call['numpy']:>12.1f}{per_call['numba']:>12.1f}"
              f"{per_call['numpy'] / per_call['numba']:>9.1f}x")

    results, seconds = {}, {}
    for name in backends:
        seconds[name] = best_of(lambda: results.__setitem__(
            name, simulate(policy.logits, truth, cfg, args.steps, args.seed, backend=name)), args.repeat)
    print(f"\nsimulate, {args.steps} steps: numpy {seconds['numpy']:.3f}s, numba {seconds['numba']:.3f}s, "
          f"speedup {seconds['numpy'] / seconds['numba']:.1f}x")

    a, b = results["numpy"], results["numba"]
    same = (np.array_equal(a.labels, b.labels) and np.array_equal(a.votes, b.votes)
            and np.array_equal(a.skipped, b.skipped) and np.allclose(a.final_logits, b.final_logits, rtol=0, atol=1e-12))
    print(f"trajectories identical across backends: {same}")
    return 0 if same else 2


if __name__ == "__main__":
    sys.exit(main())
