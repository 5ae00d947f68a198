"""Single-document run configuration.

A run config is one JSON object carrying ``schema_version`` and optional
sections; every section is validated against the dataclass it feeds, and
unknown keys anywhere are rejected.  Example::

    {
      "schema_version": 1,
      "seed": 7,
      "scenario": {"scenario": "slow", "duration": 30, "road_length": 1, "lanes": 3},
      "model": {"d_h": 5, "K": 3, "d_l": 3},
      "train": {"epochs": 500, "batch_size": 64},
      "windows": {"T": 15, "stride": 1, "dx": 0.1, "dl": 1},
      "paths": {"train_data": "normal.csv", "data": "slow.csv"}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .pipeline import WindowConfig
from .simulator import ScenarioConfig, scenario_config
from .training import LossWeights, TrainConfig

SCHEMA_VERSION = 1
_SECTIONS = {"schema_version", "seed", "scenario", "model", "train", "windows", "loss_weights",
             "paths", "ks", "sweep"}
_PATH_KEYS = {"train_data", "data", "checkpoint", "report", "loss_log", "out"}
_MODEL_KEYS = {"d_h", "K", "d_l"}
_SWEEP_KEYS = {"param", "values"}
SWEEPABLE = ("dx", "dl", "T", "d_h", "K")


class ConfigError(ValueError):
    pass


def _only(section: str, d: dict, allowed: set[str]) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"'{section}' must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(sorted(unknown))}")


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


@dataclass
class RunConfig:
    seed: int = 0
    scenario: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    windows: dict = field(default_factory=dict)
    loss_weights: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    ks: tuple[int, ...] = (100, 200, 500)
    sweep: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "RunConfig":
        _only("config", doc, _SECTIONS)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
        _only("scenario", doc.get("scenario", {}), _names(ScenarioConfig) - {"seed"})
        _only("model", doc.get("model", {}), _MODEL_KEYS)
        _only("train", doc.get("train", {}), _names(TrainConfig) - {"seed"})
        _only("windows", doc.get("windows", {}), _names(WindowConfig))
        _only("loss_weights", doc.get("loss_weights", {}), _names(LossWeights))
        _only("paths", doc.get("paths", {}), _PATH_KEYS)
        _only("sweep", doc.get("sweep", {}), _SWEEP_KEYS)
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        ks = doc.get("ks", [100, 200, 500])
        if not isinstance(ks, list) or not all(isinstance(k, int) and k >= 1 for k in ks):
            raise ConfigError("ks must be a list of positive integers")
        sweep = doc.get("sweep", {})
        if sweep and sweep.get("param") not in SWEEPABLE:
            raise ConfigError(f"sweep.param must be one of {SWEEPABLE}")
        cfg = cls(seed, dict(doc.get("scenario", {})), dict(doc.get("model", {})),
                  dict(doc.get("train", {})), dict(doc.get("windows", {})),
                  dict(doc.get("loss_weights", {})), dict(doc.get("paths", {})), tuple(ks),
                  dict(sweep), Path(base_dir))
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    def check(self) -> None:
        """Build every typed section once so value errors surface at startup."""
        try:
            self.scenario_config()
            self.window_config()
            self.train_config()
            self.loss_weight_config()
            self.model_config(n_lanes=1)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def path(self, key: str) -> Path | None:
        p = self.paths.get(key)
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def scenario_config(self, scenario: str | None = None, seed: int | None = None) -> ScenarioConfig:
        kw = dict(self.scenario)
        name = scenario or kw.pop("scenario", "normal")
        kw.pop("scenario", None)
        return scenario_config(name, seed=self.seed if seed is None else seed, **kw)

    def window_config(self) -> WindowConfig:
        return WindowConfig(**self.windows)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(seed=self.seed if seed is None else seed, **self.train)

    def loss_weight_config(self) -> LossWeights:
        return LossWeights(**self.loss_weights)

    def model_config(self, n_lanes: int) -> ModelConfig:
        return ModelConfig(n_lanes=n_lanes, T=self.window_config().T, **self.model)
