import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from ttrl_guard.config import ExperimentConfig, GuardConfig, Method  # noqa: E402
from ttrl_guard.engine import Trajectory, scenario_rng  # noqa: E402
from ttrl_guard.harness import build_summary, simulate_config  # noqa: E402
from ttrl_guard.simulator import generate_scenario, softmax  # noqa: E402

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")

N_SEEDS = 20

# Lines collected by the acceptance suite; printed in the terminal summary
# so they show up regardless of output capturing.
ACCEPTANCE_LINES: dict[int, str] = {}
INFO_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
    if INFO_LINES:
        terminalreporter.section("acceptance diagnostics")
        for line in INFO_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(n: int, title: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} -- {detail}"
        return ok
    return record


@pytest.fixture
def record_info():
    def record(line: str) -> None:
        INFO_LINES.append(line)
        print(line)
    return record


@dataclass
class Run:
    method: str
    seed: int
    trajectory: Trajectory
    summary: dict
    initial_p1: np.ndarray   # per-problem expected pass@1 before training
    seconds: float

    @property
    def fate(self) -> dict:
        return self.summary["analysis"]["fate"]

    @property
    def categories(self) -> list[str]:
        return list(self.summary["analysis"]["categories"].values())


def execute(config: ExperimentConfig) -> Run:
    t0 = time.perf_counter()
    traj, p0 = simulate_config(config)
    summary = build_summary(config, traj, p0)
    problems, _ = generate_scenario(config.scenario, scenario_rng(config.scenario_seed))
    init = softmax(np.stack([p.initial_logits for p in problems]))
    initial = init[np.arange(len(problems)), [p.ground_truth for p in problems]]
    return Run(config.method.value, config.seed, traj, summary, initial, time.perf_counter() - t0)


class RunCache:
    """Memoised default-scenario runs shared across test modules."""

    def __init__(self):
        self._runs: dict[tuple, Run] = {}

    def get(self, method: str, seed: int, **guard_changes) -> Run:
        key = (method, seed, tuple(sorted(guard_changes.items())))
        if key not in self._runs:
            guard = GuardConfig().replace(**guard_changes) if guard_changes else GuardConfig()
            self._runs[key] = execute(ExperimentConfig(guard=guard, method=Method(method), seed=seed))
        return self._runs[key]

    def batch(self, method: str, seeds=range(N_SEEDS), **guard_changes) -> list[Run]:
        return [self.get(method, s, **guard_changes) for s in seeds]


@pytest.fixture(scope="session")
def runs() -> RunCache:
    return RunCache()
