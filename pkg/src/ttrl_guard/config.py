"""Configuration objects and the INI config-file loader.

Defaults of :class:`GuardConfig` are the reference TTRL-Guard hyperparameters;
the scenario and run sections describe the synthetic simulator.
"""
from __future__ import annotations

import configparser
import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigurationError


class Regime(str, enum.Enum):
    MODERATE_MISMATCH = "ModerateMismatch"
    NEAR_ZERO = "NearZero"
    NEAR_PERFECT = "NearPerfect"


class Method(str, enum.Enum):
    TTRL = "ttrl"
    GUARD = "guard"
    FRS_ONLY = "frs_only"
    MPS_ONLY = "mps_only"
    RCSU_ONLY = "rcsu_only"


_UNIT_FIELDS = ("tau_fr", "tau_mr", "w_min", "beta_max", "theta_mr", "p_skip",
                "max_skip_fraction", "lambda1", "lambda2", "epsilon")


@dataclass(frozen=True)
class GuardConfig:
    lambda1: float = 0.5
    lambda2: float = 0.3
    tau_fr: float = 0.3
    tau_mr: float = 0.6
    w_min: float = 0.1
    beta_max: float = 0.3
    minority_threshold_divisor: int = 4
    epsilon: float = 0.1
    t_steady: int = 3
    window: int = 5
    theta_mr: float = 0.5
    p_skip: float = 0.7
    max_skip_fraction: float = 0.25
    k_samples: int = 32
    k_votes: int = 64
    # simulator knob: step size of the surrogate logit update (summed over the
    # K update samples, so the per-sample scale is learning_rate)
    learning_rate: float = 0.0003

    def __post_init__(self) -> None:
        for name in _UNIT_FIELDS:
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0) or math.isnan(value):
                raise ConfigurationError(f"{name}={value!r} must lie in [0, 1]")
        for name in ("minority_threshold_divisor", "t_steady", "window", "k_samples", "k_votes"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.k_samples > self.k_votes:
            raise ConfigurationError("k_samples cannot exceed k_votes (update batch is a subset of the votes)")
        if not (self.learning_rate > 0.0 and math.isfinite(self.learning_rate)):
            raise ConfigurationError("learning_rate must be positive and finite")

    def replace(self, **changes: Any) -> "GuardConfig":
        return dataclasses.replace(self, **changes)

    def skip_cap(self, n_problems: int) -> int:
        """Largest number of problems RCSU may skip in one step."""
        return int(math.floor(self.max_skip_fraction * n_problems + 1e-12))


# Per-regime default logit advantage of the distractor over the ground truth.
REGIME_DEFAULT_STRENGTH = {
    Regime.MODERATE_MISMATCH: 0.0,
    Regime.NEAR_ZERO: 4.0,
    Regime.NEAR_PERFECT: -6.0,
}

# Target bands on the initial mean expected pass@1.
REGIME_BANDS = {
    Regime.MODERATE_MISMATCH: (0.3, 0.7),
    Regime.NEAR_ZERO: (0.0, 0.1),
    Regime.NEAR_PERFECT: (0.9, 1.0),
}


@dataclass(frozen=True)
class ScenarioSpec:
    regime: Regime = Regime.MODERATE_MISMATCH
    n_problems: int = 200
    support_size: int = 4
    distractor_strength: float | None = None
    seed: int | None = None
    logit_spread: float = 0.1

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "regime", Regime(self.regime))
        except ValueError:
            raise ConfigurationError(f"unknown regime {self.regime!r}") from None
        if self.n_problems < 1:
            raise ConfigurationError("n_problems must be >= 1")
        if self.support_size < 2:
            raise ConfigurationError("support_size must be >= 2")
        if self.logit_spread < 0:
            raise ConfigurationError("logit_spread must be non-negative")

    @property
    def strength(self) -> float:
        if self.distractor_strength is None:
            return REGIME_DEFAULT_STRENGTH[self.regime]
        return float(self.distractor_strength)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    guard: GuardConfig = field(default_factory=GuardConfig)
    method: Method = Method.GUARD
    total_steps: int = 300
    seed: int = 0
    log_path: str | None = None
    checkpoint_every: int = 1

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "method", Method(self.method))
        except ValueError:
            raise ConfigurationError(f"unknown method {self.method!r}") from None
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be >= 0")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")

    @property
    def scenario_seed(self) -> int:
        return self.seed if self.scenario.seed is None else self.scenario.seed

    def resolved_guard(self) -> GuardConfig:
        """Guard coefficients after the method's ablation switches are applied."""
        return resolve_method(self.guard, self.method)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def resolve_method(guard: GuardConfig, method: Method | str) -> GuardConfig:
    method = Method(method)
    frs_off = dict(lambda1=0.0, lambda2=0.0)
    mps_off = dict(beta_max=0.0)
    rcsu_off = dict(p_skip=0.0)
    if method is Method.GUARD:
        return guard
    if method is Method.TTRL:
        return guard.replace(**frs_off, **mps_off, **rcsu_off)
    if method is Method.FRS_ONLY:
        return guard.replace(**mps_off, **rcsu_off)
    if method is Method.MPS_ONLY:
        return guard.replace(**frs_off, **rcsu_off)
    return guard.replace(**frs_off, **mps_off)


def _coerce(cls, name: str, raw: str) -> Any:
    ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    text = raw.strip()
    if "None" in str(ftype) and text.lower() in ("", "none", "null"):
        return None
    try:
        if ftype.startswith("int"):
            return int(text)
        if ftype.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigurationError(f"{cls.__name__}.{name}: cannot parse {raw!r}") from None
    return text


def _section(cls, values: Mapping[str, Any], *, skip: tuple[str, ...] = ()) -> dict[str, Any]:
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    out = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigurationError(f"unknown key {key!r} for {cls.__name__}")
        out[key] = _coerce(cls, key, raw) if isinstance(raw, str) else raw
    return out


def config_from_mapping(data: Mapping[str, Mapping[str, Any]]) -> ExperimentConfig:
    unknown = set(data) - {"scenario", "guard", "run", "sweep"}
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {sorted(unknown)}")
    scenario = ScenarioSpec(**_section(ScenarioSpec, data.get("scenario", {})))
    guard = GuardConfig(**_section(GuardConfig, data.get("guard", {})))
    run = _section(ExperimentConfig, data.get("run", {}), skip=("scenario", "guard"))
    return ExperimentConfig(scenario=scenario, guard=guard, **run)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an INI file with ``[scenario]``, ``[guard]`` and ``[run]`` sections."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    return config_from_mapping({name: dict(parser[name]) for name in parser.sections()})


def load_sweep_grid(path: str | Path) -> dict[str, list[float]]:
    """Read the optional ``[sweep]`` section: ``key = v1, v2, ...``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read(path, encoding="utf-8")
    if not parser.has_section("sweep"):
        return {}
    return {k: parse_grid_values(v) for k, v in parser["sweep"].items()}


def parse_grid_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse grid values {text!r}") from None


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    """JSON-ready view of a config; the guard section is the resolved one."""
    scenario = dataclasses.asdict(config.scenario)
    scenario["regime"] = config.scenario.regime.value
    scenario["distractor_strength"] = config.scenario.strength
    scenario["seed"] = config.scenario_seed
    return {
        "scenario": scenario,
        "guard": dataclasses.asdict(config.resolved_guard()),
        "run": {
            "total_steps": config.total_steps,
            "seed": config.seed,
            "checkpoint_every": config.checkpoint_every,
        },
    }
