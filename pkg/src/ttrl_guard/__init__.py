"""TTRL-Guard over a synthetic categorical policy.

Label-free state monitoring of majority-vote pseudo-labels, flip-rate-aware
reward scaling, minority-preserving sampling and risk-conditioned sparse
updating, plus a simulator, trajectory analytics and an experiment harness.
"""
from .analytics import (Category, FateBreakdown, TrajectoryTable, analyze_table, categorize_problem,
                        classify, correct_vote_rate, fate_breakdown, label_accuracy, scissor_statistics)
from .config import (ExperimentConfig, GuardConfig, Method, Regime, ScenarioSpec, load_config,
                     resolve_method)
from .engine import Trajectory, simulate
from .errors import (ConfigurationError, ContractError, GuardError, InsufficientHistoryError,
                     LogParseError, MalformedBatchError, ReportError)
from .harness import analyze_log, render_report, run_experiment, sweep
from .monitor import (ProblemState, RolloutBatch, batch_flip_rate, majority_vote, update_problem_state,
                      windowed_flip_rate)
from .policy import (FrsWeight, Path, PlanEntry, StepPlan, build_step_plan, frs_weight, minority_set,
                     mps_coefficient, rcsu_high_risk)
from .simulator import (PolicyState, SyntheticProblem, apply_surrogate_update, expected_pass_at_1,
                        generate_scenario, sample_rollouts)

__version__ = "0.1.0"

__all__ = [
    "Category", "FateBreakdown", "TrajectoryTable", "analyze_table", "categorize_problem", "classify",
    "correct_vote_rate", "fate_breakdown", "label_accuracy", "scissor_statistics",
    "ExperimentConfig", "GuardConfig", "Method", "Regime", "ScenarioSpec", "load_config", "resolve_method",
    "Trajectory", "simulate",
    "ConfigurationError", "ContractError", "GuardError", "InsufficientHistoryError", "LogParseError",
    "MalformedBatchError", "ReportError",
    "analyze_log", "render_report", "run_experiment", "sweep",
    "ProblemState", "RolloutBatch", "batch_flip_rate", "majority_vote", "update_problem_state",
    "windowed_flip_rate",
    "FrsWeight", "Path", "PlanEntry", "StepPlan", "build_step_plan", "frs_weight", "minority_set",
    "mps_coefficient", "rcsu_high_risk",
    "PolicyState", "SyntheticProblem", "apply_surrogate_update", "expected_pass_at_1", "generate_scenario",
    "sample_rollouts",
]
