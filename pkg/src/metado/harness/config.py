"""Run configuration, JSON config files and ablation wiring."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..mdp import N_FEATURES, HyperBounds, Wiring
from ..ppo import TrainConfig

OUTPUT_ENV = "METADO_OUTPUT_DIR"

ABLATIONS = ("no_subpop", "no_archive_feature", "action_c_only", "action_w_only", "binary_reward", "linear_reward")
ALIASES = {
    "sub_pop": "no_subpop", "no_sub_pop": "no_subpop", "archive": "no_archive_feature",
    "no_archive": "no_archive_feature", "action_c": "action_c_only", "action_w": "action_w_only",
    "binary": "binary_reward", "linear": "linear_reward",
}


class ConfigError(ValueError):
    pass


@dataclass
class SuiteParams:
    dim: int = 10
    fe_max: int = 25000
    period_fe: int | None = None
    n_train: int = 64
    n_test: int = 32


@dataclass
class RunConfig:
    seed: int = 0
    suite: SuiteParams = field(default_factory=SuiteParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 256
    runs: int = 10
    episodes: int = 10
    no_subpop: bool = False
    no_archive_feature: bool = False
    action_c_only: bool = False
    action_w_only: bool = False
    binary_reward: bool = False
    linear_reward: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if self.action_c_only and self.action_w_only:
            raise ConfigError("action_c_only and action_w_only are mutually exclusive")
        if self.binary_reward and self.linear_reward:
            raise ConfigError("binary_reward and linear_reward are mutually exclusive")
        if self.runs < 1 or self.episodes < 1:
            raise ConfigError("runs and episodes must be positive")

    @property
    def ablations(self) -> list[str]:
        return [a for a in ABLATIONS if getattr(self, a)]

    def resolved_output(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or "metado_out")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["bounds"] = {"lower": list(self.train.bounds.lower), "upper": list(self.train.bounds.upper)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "suite" in d:
                d["suite"] = SuiteParams(**d["suite"])
            if "train" in d:
                t = dict(d["train"])
                if "bounds" in t:
                    b = t["bounds"]
                    t["bounds"] = HyperBounds(tuple(b["lower"]), tuple(b["upper"]))
                d["train"] = TrainConfig(**t)
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(d)


def canonical_variant(name: str) -> str:
    name = name.replace("-", "_").replace("w/o_", "no_")
    name = ALIASES.get(name, name)
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation variant {name!r}; choose from {', '.join(ABLATIONS)}")
    return name


def with_variant(config: RunConfig, variant: str) -> RunConfig:
    """Config with exactly one ablation flag switched on."""
    flags = {a: False for a in ABLATIONS}
    flags[canonical_variant(variant)] = True
    return replace(config, **flags)


def apply_ablation(config: RunConfig) -> Wiring:
    """Component wiring for the flags in ``config``; flags combine unless they conflict."""
    mask = [True] * N_FEATURES
    if config.no_subpop:
        mask[2] = mask[7] = False
    if config.no_archive_feature:
        mask[0] = False
    action = "c_only" if config.action_c_only else "w_only" if config.action_w_only else "full"
    reward = "binary" if config.binary_reward else "linear" if config.linear_reward else "log"
    return Wiring(tuple(mask), action, reward)
