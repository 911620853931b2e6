"""Run configuration shared by the CLI workflows."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, GuiRLError
from .grpo import GrpoConfig
from .rewards import RewardConfig
from .sim_env import DEFAULT_STEP_CAP, DIFFICULTIES


def _reject_unknown(cls, d: dict, section: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")


@dataclass(frozen=True)
class CsrsConfig:
    low: float = 0.3
    high: float = 0.8
    extractor: str = "template"

    def __post_init__(self):
        if not (0.0 <= self.low <= self.high <= 1.0):
            raise ConfigError(f"csrs thresholds need 0 <= low <= high <= 1, got {self.low}, {self.high}")
        if self.extractor != "template":
            raise ConfigError(f"unknown extractor backend {self.extractor!r}")


@dataclass(frozen=True)
class EnvConfig:
    fixture: str | None = None  # app-graph JSON; None uses the bundled one
    step_cap: int = DEFAULT_STEP_CAP

    def __post_init__(self):
        if not (isinstance(self.step_cap, int) and self.step_cap >= 1):
            raise ConfigError("env.step_cap must be a positive integer")


@dataclass(frozen=True)
class TrainConfig:
    tasks_per_round: int = 8
    difficulty: str = "atomic"
    hindsight: bool = True
    hint_follow_prob: float = 0.9
    init_scale: float = 2.0
    max_steps: int = 6
    eval_tasks: int = 50

    def __post_init__(self):
        if self.difficulty not in DIFFICULTIES:
            raise ConfigError(f"train.difficulty must be one of {DIFFICULTIES}")
        for name in ("tasks_per_round", "max_steps", "eval_tasks"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"train.{name} must be a positive integer")
        if not 0.0 <= self.hint_follow_prob <= 1.0:
            raise ConfigError("train.hint_follow_prob must lie in [0, 1]")
        if not self.init_scale >= 0:
            raise ConfigError("train.init_scale must be non-negative")


# Tabular logits start near zero, so the toy loop needs a far larger step
# than the library default to move within a few hundred rounds.
RUN_GRPO_DEFAULTS = {"learning_rate": 100.0}


def _run_grpo(d: dict | None = None) -> GrpoConfig:
    if d is not None and not isinstance(d, dict):
        raise ConfigError("section 'grpo' must be an object")
    return GrpoConfig.from_dict({**RUN_GRPO_DEFAULTS, **(d or {})})


@dataclass(frozen=True)
class RunConfig:
    reward: RewardConfig = field(default_factory=RewardConfig)
    grpo: GrpoConfig = field(default_factory=_run_grpo)
    csrs: CsrsConfig = field(default_factory=CsrsConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        _reject_unknown(cls, d, "config")
        try:
            kw = {}
            if "reward" in d:
                kw["reward"] = RewardConfig.from_dict(d["reward"])
            if "grpo" in d:
                kw["grpo"] = _run_grpo(d["grpo"])
            for name, sub in (("csrs", CsrsConfig), ("env", EnvConfig), ("train", TrainConfig)):
                if name in d:
                    _reject_unknown(sub, d[name], name)
                    kw[name] = sub(**d[name])
            if "seeds" in d:
                if not isinstance(d["seeds"], list):
                    raise ConfigError("seeds must be a list")
                kw["seeds"] = tuple(d["seeds"])
            return cls(**kw)
        except ConfigError:
            raise
        except (GuiRLError, TypeError) as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        return {
            "reward": self.reward.to_dict(),
            "grpo": asdict(self.grpo),
            "csrs": asdict(self.csrs),
            "env": asdict(self.env),
            "train": asdict(self.train),
            "seeds": list(self.seeds),
        }


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return RunConfig.from_dict(data)
