"""Anomaly scores, heuristic baselines and ranking metrics.

Loss grids are (N, T) arrays aligned with a window's ``mask``; larger means
more anomalous.  Vehicles are scored by their masked mean loss per window and
the max over windows.  Scenes are (road stretch, window) cells scored by the
max (or mean) loss of the observations falling inside them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .trajectory import SECONDS_PER_HOUR, Window

REPORT_COLUMNS = ["entity_type", "entity_id", "window_start", "score", "label"]
DEFAULT_KS = (100, 200, 500)


@dataclass(frozen=True)
class SceneSpec:
    """Road split into consecutive stretches of ``stretch`` miles."""

    road_length: float
    stretch: float = 0.15

    def __post_init__(self):
        if self.stretch <= 0 or self.road_length <= 0:
            raise ValueError("stretch and road length must be positive")

    @property
    def n_stretches(self) -> int:
        return max(1, math.ceil(self.road_length / self.stretch - 1e-12))

    def index(self, x: np.ndarray) -> np.ndarray:
        """Stretch index of positions in miles; the road end belongs to the last stretch."""
        return np.clip(np.floor(np.asarray(x) / self.stretch), 0, self.n_stretches - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def vehicle_score(loss: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked mean loss over steps, one value per row; NaN for rows with no observed step."""
    loss = np.atleast_2d(np.asarray(loss, dtype=np.float64))
    m = np.atleast_2d(np.asarray(mask, dtype=bool))
    n = m.sum(axis=1)
    total = np.where(m, loss, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, total / np.maximum(n, 1), np.nan)


@dataclass(frozen=True)
class Scene:
    stretch: int
    window_start: int
    score_max: float
    score_mean: float
    label: int


def scene_scores(loss: np.ndarray, x: np.ndarray, mask: np.ndarray, spec: SceneSpec,
                 window_start: int = 0, labels: np.ndarray | None = None) -> list[Scene]:
    """Max and mean loss per stretch for one window; empty stretches are omitted."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return []
    idx = spec.index(np.asarray(x)[m])
    vals = np.asarray(loss, dtype=np.float64)[m]
    labs = np.zeros_like(idx) if labels is None else np.asarray(labels)[m].astype(np.int64)
    out = []
    for s in np.unique(idx):
        sel = idx == s
        out.append(Scene(int(s), int(window_start), float(vals[sel].max()), float(vals[sel].mean()),
                         int(labs[sel].max())))
    return out


# ---------------------------------------------------------------------------
# baselines: squared position error of a single-vehicle reconstruction
# ---------------------------------------------------------------------------

def baseline_lti(window: Window) -> np.ndarray:
    """Chord between each vehicle's first and last observed positions."""
    N, T = window.mask.shape
    out = np.zeros((N, T))
    steps = np.arange(T)
    for i in range(N):
        obs = np.flatnonzero(window.mask[i])
        if len(obs) < 2:
            continue
        t0, t1 = obs[0], obs[-1]
        x0, x1 = window.x[i, t0], window.x[i, t1]
        xhat = x0 + (x1 - x0) * (steps - t0) / (t1 - t0)
        out[i] = np.where(window.mask[i], (window.x[i] - xhat) ** 2, 0.0)
    return out


def baseline_cvm(window: Window) -> np.ndarray:
    """Constant speed taken from each vehicle's first observed step."""
    N, T = window.mask.shape
    out = np.zeros((N, T))
    steps = np.arange(T)
    for i in range(N):
        obs = np.flatnonzero(window.mask[i])
        if not len(obs):
            continue
        t0 = obs[0]
        xhat = window.x[i, t0] + window.v[i, t0] * (steps - t0) / SECONDS_PER_HOUR
        out[i] = np.where(window.mask[i], (window.x[i] - xhat) ** 2, 0.0)
    return out


BASELINES = {"lti": baseline_lti, "cvm": baseline_cvm}


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return s, y


def _midranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    _, first, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    mid = first + (counts - 1) / 2.0 + 1.0
    ranks[order] = np.repeat(mid, counts)
    return ranks


def roc_auc(scores, labels) -> float | None:
    """Mann-Whitney AUC with mid-ranks for ties; ``None`` without both classes."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    r = _midranks(s)
    return float((r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float | None:
    """Sum of precision times recall increment over distinct score thresholds.

    Without ties this is the mean precision at the rank of each positive.
    ``None`` when there are no positives.
    """
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each block of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[ends]
    precision = tp / (ends + 1.0)
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float((precision * recall_gain).sum())


def roc_points(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, threshold) at every distinct score, starting from (0, 0)."""
    s, y = _check(scores, labels)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = ends + 1 - tp
    return (np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos], np.r_[np.inf, s[ends]])


def top_k(scores, k: int, ids: Sequence | None = None) -> np.ndarray:
    """Indices of the ``k`` highest scores; ties go to the smaller id (or earlier position)."""
    s = np.asarray(scores, dtype=np.float64)
    keys = np.arange(len(s)) if ids is None else np.asarray(ids)
    order = np.lexsort((keys, -s))
    return order[:k]


def precision_at_k(scores, labels, k: int, ids: Sequence | None = None) -> float | None:
    """Fraction of positives among the top ``min(k, n)`` entities."""
    s, y = _check(scores, labels)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(s) == 0:
        return None
    top = top_k(s, k, ids)
    return float(y[top].sum() / len(top))


def metrics(scores, labels, ks: Iterable[int] = DEFAULT_KS, ids: Sequence | None = None) -> dict:
    out = {"n": int(len(np.ravel(labels))), "n_pos": int(np.sum(labels)),
           "auc": roc_auc(scores, labels), "ap": average_precision(scores, labels)}
    for k in ks:
        out[f"pre@{k}"] = precision_at_k(scores, labels, k, ids)
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class ScoreReport:
    """Vehicle and scene scores with labels, plus metric summaries."""

    vehicles: pd.DataFrame
    scenes: pd.DataFrame
    scenes_mean: pd.DataFrame
    summary: dict = field(default_factory=dict)

    def table(self) -> pd.DataFrame:
        parts = [self.vehicles.assign(entity_type="vehicle"),
                 self.scenes.assign(entity_type="scene"),
                 self.scenes_mean.assign(entity_type="scene_mean")]
        return pd.concat(parts, ignore_index=True)[REPORT_COLUMNS]

    def write_csv(self, path: str | Path) -> None:
        t = self.table()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(REPORT_COLUMNS) + "\n")
            for row in t.itertuples(index=False):
                fh.write(f"{row.entity_type},{int(row.entity_id)},{int(row.window_start)},"
                         f"{float(row.score)!r},{int(row.label)}\n")

    @classmethod
    def read_csv(cls, path: str | Path) -> "ScoreReport":
        t = pd.read_csv(path)
        if list(t.columns) != REPORT_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(REPORT_COLUMNS)}")
        pick = lambda kind: t[t.entity_type == kind].drop(columns="entity_type").reset_index(drop=True)  # noqa: E731
        return cls(pick("vehicle"), pick("scene"), pick("scene_mean"))

    def evaluate(self, ks: Iterable[int] = DEFAULT_KS) -> dict:
        ks = tuple(ks)
        out = {}
        for name, df in (("vehicle", self.vehicles), ("scene", self.scenes),
                         ("scene_mean", self.scenes_mean)):
            if len(df):
                out[name] = metrics(df.score.to_numpy(), df.label.to_numpy(), ks,
                                    ids=np.arange(len(df)))
        self.summary = out
        return out

    def write_metrics(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def build_report(windows: Sequence[Window], grids: Sequence[np.ndarray], spec: SceneSpec,
                 ks: Iterable[int] = DEFAULT_KS) -> ScoreReport:
    """Aggregate per-window loss grids of raw (unstandardized) windows into a report.

    A vehicle's score is the max over its windows of the masked mean loss; its
    label is 1 if any of its observed steps is labelled.
    """
    best: dict[int, tuple[float, int]] = {}
    vlabel: dict[int, int] = {}
    scene_rows = []
    for w, g in zip(windows, grids):
        if g.shape != w.mask.shape:
            raise ValueError("loss grid does not match its window")
        sc = vehicle_score(g, w.mask)
        labels = w.labels if w.labels is not None else np.zeros_like(w.mask, dtype=int)
        for i, vid in enumerate(w.vehicle_ids.tolist()):
            if np.isnan(sc[i]):
                continue
            prev = best.get(vid)
            if prev is None or sc[i] > prev[0]:
                best[vid] = (float(sc[i]), w.window_start)
            lab = int(labels[i][w.mask[i]].max())
            vlabel[vid] = max(vlabel.get(vid, 0), lab)
        scene_rows.extend(scene_scores(g, w.x, w.mask, spec, w.window_start, labels))
    vids = sorted(best)
    vehicles = pd.DataFrame({"entity_id": np.array(vids, dtype=np.int64),
                             "window_start": np.array([best[v][1] for v in vids], dtype=np.int64),
                             "score": np.array([best[v][0] for v in vids], dtype=np.float64),
                             "label": np.array([vlabel[v] for v in vids], dtype=np.int64)})
    scene_rows.sort(key=lambda s: (s.window_start, s.stretch))

    def scene_frame(attr: str) -> pd.DataFrame:
        return pd.DataFrame({"entity_id": np.array([s.stretch for s in scene_rows], dtype=np.int64),
                             "window_start": np.array([s.window_start for s in scene_rows], dtype=np.int64),
                             "score": np.array([getattr(s, attr) for s in scene_rows], dtype=np.float64),
                             "label": np.array([s.label for s in scene_rows], dtype=np.int64)})

    report = ScoreReport(vehicles, scene_frame("score_max"), scene_frame("score_mean"))
    report.evaluate(ks)
    return report
