"""End-to-end glue: dataset -> windows -> loss grids -> score report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import ModelConfig
from .scoring import BASELINES, DEFAULT_KS, SceneSpec, ScoreReport, build_report
from .trajectory import Dataset, FeatureStats, IncompletePolicy, Window, segment_windows
from .training import LossWeights, TrainConfig, TrainResult, predict, prepare, train

METHODS = ("dsab", "lti", "cvm")


@dataclass(frozen=True)
class WindowConfig:
    """Segmentation and graph thresholds shared by training and detection."""

    T: int = 15
    stride: int = 1
    policy: IncompletePolicy = IncompletePolicy.DISCARD
    dx: float = 0.1  # miles
    dl: float = 1.0  # lanes
    stretch: float = 0.15  # miles per scene

    def __post_init__(self):
        object.__setattr__(self, "policy", IncompletePolicy(self.policy))
        if self.T < 2 or self.stride < 1:
            raise ValueError("T must be >= 2 and stride >= 1")
        if self.dx < 0 or self.dl < 0 or self.stretch <= 0:
            raise ValueError("dx, dl must be >= 0 and stretch > 0")


def windows_of(dataset: Dataset, wcfg: WindowConfig, stride: int | None = None) -> list[Window]:
    return segment_windows(dataset, wcfg.T, wcfg.stride if stride is None else stride, wcfg.policy)


def train_on(dataset: Dataset, wcfg: WindowConfig, train_cfg: TrainConfig,
             model_cfg: ModelConfig | None = None, weights: LossWeights = LossWeights(),
             **kwargs) -> TrainResult:
    windows = windows_of(dataset, wcfg)
    model_cfg = model_cfg or ModelConfig(n_lanes=dataset.n_lanes, T=wcfg.T)
    return train(windows, model_cfg, train_cfg, wcfg.dx, wcfg.dl, weights, **kwargs)


def dsab_grids(windows: list[Window], params: dict[str, np.ndarray], stats: FeatureStats,
               wcfg: WindowConfig, batch_size: int = 64) -> list[np.ndarray]:
    """Per-window (N, T) reconstruction losses under the trained model."""
    prepared = prepare(windows, stats, wcfg.dx, wcfg.dl)
    return [g.total for g in predict(params, prepared, batch_size)]


def detect(dataset: Dataset, wcfg: WindowConfig, method: str = "dsab",
           params: dict[str, np.ndarray] | None = None, stats: FeatureStats | None = None,
           ks: Iterable[int] = DEFAULT_KS) -> ScoreReport:
    """Score every vehicle and scene of ``dataset`` with ``method``."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    windows = windows_of(dataset, wcfg)
    if method == "dsab":
        if params is None or stats is None:
            raise ValueError("dsab detection needs trained parameters and feature stats")
        grids = dsab_grids(windows, params, stats, wcfg)
    else:
        grids = [BASELINES[method](w) for w in windows]
    return build_report(windows, grids, SceneSpec(dataset.road_length, wcfg.stretch), ks)
