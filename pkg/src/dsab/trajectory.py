"""Trajectory tables, fixed-length windows and feature standardization.

A :class:`Dataset` is a long table with one row per (t, vehicle) sampled at
1 Hz.  :func:`segment_windows` cuts it into :class:`Window` objects holding a
fixed vehicle set over ``T`` consecutive steps, which is what the model
consumes.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

CSV_COLUMNS = ["t", "vehicle_id", "x_mi", "y_ft", "lane", "v_mph", "a_mphps", "label"]
_CSV_FORMATS = {
    "t": "{:d}",
    "vehicle_id": "{:d}",
    "x_mi": "{:.9f}",
    "y_ft": "{:.4f}",
    "lane": "{:d}",
    "v_mph": "{:.6f}",
    "a_mphps": "{:.6f}",
    "label": "{:d}",
}
SECONDS_PER_HOUR = 3600.0
STD_FLOOR = 1e-6
# model input channels, in order
FEATURES = ("x", "y", "v", "a")


class DatasetFormatError(ValueError):
    pass


class Observation(NamedTuple):
    vehicle_id: int
    t: int
    x: float  # miles
    y: float  # feet
    lane: int  # 1..L
    v: float  # mph
    a: float  # mph/s


class IncompletePolicy(str, enum.Enum):
    DISCARD = "discard"
    EXTRAPOLATE_MASK = "extrapolate_mask"


@dataclass
class Dataset:
    """Rows sorted by (t, vehicle_id) plus road metadata."""

    frame: pd.DataFrame
    road_length: float
    n_lanes: int

    def __post_init__(self):
        missing = [c for c in CSV_COLUMNS if c not in self.frame.columns]
        if missing:
            raise DatasetFormatError(f"dataset is missing columns {missing}")
        frame = self.frame[CSV_COLUMNS].sort_values(["t", "vehicle_id"], kind="stable")
        self.frame = frame.reset_index(drop=True)
        if self.frame.duplicated(["t", "vehicle_id"]).any():
            raise DatasetFormatError("duplicate (t, vehicle_id) rows")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def labels(self) -> dict[tuple[int, int], int]:
        f = self.frame
        return {(int(v), int(t)): int(l) for v, t, l in zip(f.vehicle_id, f.t, f.label)}

    def observations(self):
        for row in self.frame.itertuples(index=False):
            yield Observation(int(row.vehicle_id), int(row.t), row.x_mi, row.y_ft,
                              int(row.lane), row.v_mph, row.a_mphps)

    def vehicle_labels(self) -> dict[int, int]:
        """1 for every vehicle with at least one abnormal row."""
        g = self.frame.groupby("vehicle_id")["label"].max()
        return {int(k): int(v) for k, v in g.items()}


def write_dataset_csv(dataset: Dataset, path: str | Path) -> None:
    f = dataset.frame
    cols = [f[c].to_numpy() for c in CSV_COLUMNS]
    fmts = [_CSV_FORMATS[c] for c in CSV_COLUMNS]
    line_fmt = ",".join(fmts)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in zip(*cols):
            fh.write(line_fmt.format(int(row[0]), int(row[1]), float(row[2]), float(row[3]),
                                     int(row[4]), float(row[5]), float(row[6]), int(row[7])))
            fh.write("\n")


def read_dataset_csv(path: str | Path, road_length: float | None = None,
                     n_lanes: int | None = None) -> Dataset:
    """Load a dataset CSV.  Road metadata comes from the arguments, else from a
    ``.json`` sidecar next to the CSV, else is inferred from the rows."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise DatasetFormatError(f"{path}: empty file") from exc
    if list(frame.columns) != CSV_COLUMNS:
        raise DatasetFormatError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
    sidecar = path.with_suffix(".json")
    if (road_length is None or n_lanes is None) and sidecar.exists():
        meta = json.loads(sidecar.read_text())
        road_length = road_length if road_length is not None else meta.get("road_length")
        n_lanes = n_lanes if n_lanes is not None else meta.get("lanes")
    if road_length is None:
        road_length = float(frame.x_mi.max()) if len(frame) else 0.0
    if n_lanes is None:
        n_lanes = int(frame.lane.max()) if len(frame) else 1
    return Dataset(frame, float(road_length), int(n_lanes))


@dataclass
class Window:
    """N vehicles x T steps.  Arrays are (N, T); ``mask`` marks real observations."""

    vehicle_ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lane: np.ndarray
    v: np.ndarray
    a: np.ndarray
    mask: np.ndarray
    window_start: int
    labels: np.ndarray | None = None
    x_origin: float = 0.0
    standardized: bool = False

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicle_ids)

    @property
    def n_steps(self) -> int:
        return self.x.shape[1]

    def features(self) -> np.ndarray:
        """(N, T, 4) array of the numeric channels in :data:`FEATURES` order."""
        return np.stack([self.x, self.y, self.v, self.a], axis=-1)

    def observation(self, i: int, t: int) -> Observation:
        return Observation(int(self.vehicle_ids[i]), self.window_start + t, float(self.x[i, t]),
                           float(self.y[i, t]), int(self.lane[i, t]), float(self.v[i, t]),
                           float(self.a[i, t]))

    def validate(self) -> None:
        n, T = self.mask.shape
        for arr in (self.x, self.y, self.lane, self.v, self.a):
            if arr.shape != (n, T):
                raise ValueError("window arrays must share the (N, T) shape")
        if len(np.unique(self.vehicle_ids)) != n:
            raise ValueError("vehicle ids must be unique")
        if n and not self.mask.any(axis=1).all():
            raise ValueError("every vehicle needs at least one observed step")


def _time_blocks(frame: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    """Row ranges per timestep for a frame sorted by t."""
    t = frame.t.to_numpy()
    times, starts = np.unique(t, return_index=True)
    return times, np.append(starts, len(t))


def segment_windows(dataset: Dataset, T: int, stride: int = 1,
                    policy: IncompletePolicy | str = IncompletePolicy.DISCARD) -> list[Window]:
    """Cut the dataset into windows of ``T`` steps every ``stride`` steps.

    Vehicles missing some of the T steps are dropped under ``DISCARD``; under
    ``EXTRAPOLATE_MASK`` the gaps are filled at constant velocity from the
    nearest observed step and masked out.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    policy = IncompletePolicy(policy)
    frame = dataset.frame
    if len(frame) == 0:
        return []
    times, bounds = _time_blocks(frame)
    block_of = {int(t): k for k, t in enumerate(times)}
    cols = {c: frame[c].to_numpy() for c in CSV_COLUMNS}
    t0, t1 = int(times[0]), int(times[-1])
    windows = []
    for start in range(t0, t1 - T + 2, stride):
        blocks = [block_of.get(start + k) for k in range(T)]
        rows = np.concatenate([np.arange(bounds[b], bounds[b + 1]) for b in blocks if b is not None]
                              or [np.zeros(0, dtype=int)])
        if len(rows) == 0:
            continue
        vids = cols["vehicle_id"][rows]
        steps = cols["t"][rows] - start
        ids, row_of = np.unique(vids, return_inverse=True)
        present = np.zeros((len(ids), T), dtype=bool)
        present[row_of, steps] = True
        grids = {}
        for name in ("x_mi", "y_ft", "lane", "v_mph", "a_mphps", "label"):
            g = np.zeros((len(ids), T), dtype=np.float64)
            g[row_of, steps] = cols[name][rows]
            grids[name] = g
        if policy is IncompletePolicy.DISCARD:
            keep = present.all(axis=1)
            if not keep.any():
                continue
            w = Window(ids[keep], grids["x_mi"][keep], grids["y_ft"][keep],
                       grids["lane"][keep].astype(int), grids["v_mph"][keep],
                       grids["a_mphps"][keep], present[keep], start,
                       labels=grids["label"][keep].astype(int))
        else:
            w = Window(ids, grids["x_mi"], grids["y_ft"], grids["lane"].astype(int),
                       grids["v_mph"], grids["a_mphps"], present, start,
                       labels=grids["label"].astype(int))
            _extrapolate(w)
        windows.append(w)
    return windows


def _extrapolate(w: Window) -> None:
    """Fill unobserved steps in place by constant-velocity extrapolation."""
    T = w.n_steps
    steps = np.arange(T)
    for i in np.flatnonzero(~w.mask.all(axis=1)):
        observed = np.flatnonzero(w.mask[i])
        for t in steps[~w.mask[i]]:
            k = observed[np.argmin(np.abs(observed - t))]
            w.x[i, t] = w.x[i, k] + w.v[i, k] * (t - k) / SECONDS_PER_HOUR
            w.y[i, t] = w.y[i, k]
            w.lane[i, t] = w.lane[i, k]
            w.v[i, t] = w.v[i, k]
            w.a[i, t] = 0.0
            w.labels[i, t] = 0


@dataclass
class FeatureStats:
    """Per-channel mean/std for (x offset, y, v, a)."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    std: np.ndarray = field(default_factory=lambda: np.ones(4))

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(np.array(d["mean"]), np.array(d["std"]))


def window_origin(w: Window) -> float:
    return float(w.x[w.mask].min())


def compute_stats(windows: list[Window]) -> FeatureStats:
    """Masked statistics over training windows, x taken relative to each window's origin."""
    if not windows:
        raise ValueError("no windows to compute statistics from")
    chunks = []
    for w in windows:
        m = w.mask
        chunks.append(np.stack([w.x[m] - window_origin(w), w.y[m], w.v[m], w.a[m]], axis=1))
    data = np.concatenate(chunks)
    return FeatureStats(data.mean(axis=0), data.std(axis=0))


def standardize(w: Window, stats: FeatureStats) -> Window:
    """x becomes the offset from the window's smallest observed x, then every
    numeric channel is z-scored.  Lane ids pass through unchanged."""
    if w.standardized:
        raise ValueError("window is already standardized")
    origin = window_origin(w)
    mu, sd = stats.mean, stats.std
    return replace(w, x=(w.x - origin - mu[0]) / sd[0], y=(w.y - mu[1]) / sd[1],
                   v=(w.v - mu[2]) / sd[2], a=(w.a - mu[3]) / sd[3],
                   x_origin=origin, standardized=True)


def unstandardize(w: Window, stats: FeatureStats) -> Window:
    if not w.standardized:
        raise ValueError("window is not standardized")
    mu, sd = stats.mean, stats.std
    return replace(w, x=w.x * sd[0] + mu[0] + w.x_origin, y=w.y * sd[1] + mu[1],
                   v=w.v * sd[2] + mu[2], a=w.a * sd[3] + mu[3], x_origin=0.0,
                   standardized=False)
