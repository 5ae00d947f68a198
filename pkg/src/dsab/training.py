"""Reconstruction losses and the mini-batch training loop."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import DynGraph, build
from .model import (N_GAUSS_OUT, GraphBatch, ModelConfig, as_leaves, forward, init_params,
                    make_batch)
from .optim import AdamState, adam_step, clip_global_norm, step_decay_lr
from .rng import substream
from .trajectory import FeatureStats, Window, compute_stats, standardize

log = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
LOSS_LOG_COLUMNS = ["epoch", "mean_loss", "lx", "lv", "la", "ll", "lr"]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    x: float = 1.0
    v: float = 1.0
    a: float = 2.0
    lane: float = 2.0

    def __post_init__(self):
        if min(self.x, self.v, self.a, self.lane) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    lr0: float = 0.05
    halve_every: int = 50
    clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


# ---------------------------------------------------------------------------
# closed-form per-element losses
# ---------------------------------------------------------------------------

def gaussian_nll(x, mu, sigma):
    """Negative log density of N(mu, sigma^2) at x."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return HALF_LOG_2PI + np.log(sigma) + (np.asarray(x) - mu) ** 2 / (2 * sigma ** 2)


def lane_ce(true_lane: int, probs: np.ndarray) -> float:
    """Cross entropy of a 1-based lane id under ``probs``."""
    return float(-np.log(probs[true_lane - 1]))


def total_loss(components: dict[str, np.ndarray], weights: LossWeights = LossWeights(),
               mask: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Per-element weighted loss and its masked sum.

    ``components`` holds arrays ``x``, ``v``, ``a`` and ``lane`` of equal shape.
    Masked-out elements are exactly zero in the returned grid.
    """
    grid = (weights.x * np.asarray(components["x"]) + weights.v * np.asarray(components["v"])
            + weights.a * np.asarray(components["a"]) + weights.lane * np.asarray(components["lane"]))
    if mask is not None:
        grid = np.where(np.asarray(mask, dtype=bool), grid, 0.0)
    return grid, float(grid.sum())


@dataclass
class LossGrid:
    """Per-vehicle, per-step losses for one window, each (N, T)."""

    total: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    lane: np.ndarray
    mask: np.ndarray

    @property
    def window_loss(self) -> float:
        return float(self.total[self.mask].sum())


# ---------------------------------------------------------------------------
# differentiable loss over a batch
# ---------------------------------------------------------------------------

def _nll_tensor(target: np.ndarray, mu: Tensor, log_sigma: Tensor) -> Tensor:
    z = (Tensor(target) - mu) * ad.exp(-log_sigma)
    return 0.5 * ad.square(z) + log_sigma + HALF_LOG_2PI


def batch_losses(out: Tensor, batch: GraphBatch, weights: LossWeights) -> tuple[Tensor, dict]:
    """Weighted per-(t, node) loss tensor (T, N) and numpy components."""
    f = batch.feats
    lx = _nll_tensor(f[..., 0], out[..., 0], out[..., 1])
    lv = _nll_tensor(f[..., 2], out[..., 2], out[..., 3])
    la = _nll_tensor(f[..., 3], out[..., 4], out[..., 5])
    n_lanes = out.shape[-1] - N_GAUSS_OUT
    onehot = np.eye(n_lanes)[batch.lanes]
    ll = -ad.tsum(ad.log_softmax(out[..., N_GAUSS_OUT:], axis=-1) * onehot, axis=-1)
    grid = weights.x * lx + weights.v * lv + weights.a * la + weights.lane * ll
    comps = {"x": lx.value, "v": lv.value, "a": la.value, "lane": ll.value}
    return grid, comps


def batch_objective(grid: Tensor, batch: GraphBatch) -> Tensor:
    """Mean over windows of each window's masked loss sum."""
    return ad.tsum(grid * batch.mask) * (1.0 / batch.n_windows)


def loss_grids(out: np.ndarray | Tensor, batch: GraphBatch,
               weights: LossWeights = LossWeights()) -> list[LossGrid]:
    """Split a batch's losses back into one (N, T) grid per window."""
    out = out if isinstance(out, Tensor) else Tensor(out)
    grid, comps = batch_losses(out, batch, weights)
    m = batch.mask.astype(bool)
    grids = []
    for sl in batch.window_slices():
        mk = m[:, sl].T
        pick = lambda arr: np.where(mk, arr[:, sl].T, 0.0)  # noqa: E731
        grids.append(LossGrid(pick(grid.value), pick(comps["x"]), pick(comps["v"]),
                              pick(comps["a"]), pick(comps["lane"]), mk))
    return grids


# ---------------------------------------------------------------------------
# preparation
# ---------------------------------------------------------------------------

@dataclass
class PreparedWindows:
    windows: list[Window]  # standardized
    graphs: list[DynGraph]

    def __len__(self) -> int:
        return len(self.windows)


def prepare(raw_windows: list[Window], stats: FeatureStats, dx: float, dl: float) -> PreparedWindows:
    graphs = [build(w, dx, dl) for w in raw_windows]
    return PreparedWindows([standardize(w, stats) for w in raw_windows], graphs)


def iter_batches(prepared: PreparedWindows, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(len(prepared)) if order is None else order
    for lo in range(0, len(idx), batch_size):
        chunk = idx[lo:lo + batch_size]
        yield chunk, make_batch([prepared.windows[i] for i in chunk],
                                [prepared.graphs[i] for i in chunk])


def predict(params: dict[str, np.ndarray], prepared: PreparedWindows, batch_size: int = 64,
            weights: LossWeights = LossWeights()) -> list[LossGrid]:
    """Loss grids for every window, in input order (no gradients recorded)."""
    P = as_leaves(params, requires_grad=False)
    grids: list[LossGrid] = []
    for _, batch in iter_batches(prepared, batch_size):
        grids.extend(loss_grids(forward(P, batch), batch, weights))
    return grids


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    stats: FeatureStats
    model_config: ModelConfig
    loss_log: list[dict] = field(default_factory=list)


def _gradients(params: dict[str, np.ndarray], batch: GraphBatch, weights: LossWeights,
               scale: float) -> tuple[dict[str, np.ndarray], float, dict]:
    P = as_leaves(params)
    with ad.Tape() as tape:
        out = forward(P, batch)
        grid, comps = batch_losses(out, batch, weights)
        obj = ad.tsum(grid * batch.mask) * scale
    tape.backward(obj)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in P.items()}
    sums = {k: float((v * batch.mask).sum()) for k, v in comps.items()}
    return grads, float(obj.value), sums


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("DSAB_THREADS", "1")))
    except ValueError:
        return 1


def fit(prepared: PreparedWindows, model_cfg: ModelConfig, train_cfg: TrainConfig,
        stats: FeatureStats, weights: LossWeights = LossWeights(),
        params: dict[str, np.ndarray] | None = None, workers: int | None = None,
        progress=None) -> TrainResult:
    """Adam over shuffled mini-batches of whole windows.

    The per-batch objective is the mean window loss; gradients are clipped to
    ``train_cfg.clip`` global norm.  With ``workers > 1`` each batch is split
    across threads and the partial gradients are summed before the update.
    """
    if len(prepared) == 0:
        raise TrainingError("no training windows")
    if params is None:
        params = init_params(model_cfg, substream(train_cfg.seed, "init"))
    shuffle_rng = substream(train_cfg.seed, "shuffle")
    workers = workers or _worker_count()
    state = AdamState()
    result = TrainResult(params, stats, model_cfg)
    for epoch in range(1, train_cfg.epochs + 1):
        lr = step_decay_lr(epoch, train_cfg.lr0, train_cfg.halve_every)
        order = shuffle_rng.permutation(len(prepared))
        totals = {"loss": 0.0, "x": 0.0, "v": 0.0, "a": 0.0, "lane": 0.0}
        for b, lo in enumerate(range(0, len(order), train_cfg.batch_size)):
            chunk = order[lo:lo + train_cfg.batch_size]
            parts = np.array_split(chunk, min(workers, len(chunk)))
            batches = [make_batch([prepared.windows[i] for i in p], [prepared.graphs[i] for i in p])
                       for p in parts]
            scale = 1.0 / len(chunk)
            try:
                if len(batches) == 1:
                    results = [_gradients(params, batches[0], weights, scale)]
                else:
                    with ThreadPoolExecutor(len(batches)) as pool:
                        results = list(pool.map(lambda bt: _gradients(params, bt, weights, scale),
                                                batches))
            except ad.NonFiniteError as exc:
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}") from exc
            grads = {k: sum(r[0][k] for r in results) for k in params}
            obj = sum(r[1] for r in results)
            if not math.isfinite(obj):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            totals["loss"] += obj * len(chunk)
            for k in ("x", "v", "a", "lane"):
                totals[k] += sum(r[2][k] for r in results)
            params = adam_step(params, clip_global_norm(grads, train_cfg.clip), state, lr)
        n = len(prepared)
        row = {"epoch": epoch, "mean_loss": totals["loss"] / n, "lx": totals["x"] / n,
               "lv": totals["v"] / n, "la": totals["a"] / n, "ll": totals["lane"] / n, "lr": lr}
        result.loss_log.append(row)
        log.info("epoch %d loss %.4f lr %.5f", epoch, row["mean_loss"], lr)
        if progress is not None:
            progress(row)
    result.params = params
    return result


def train(raw_windows: list[Window], model_cfg: ModelConfig, train_cfg: TrainConfig,
          dx: float = 0.1, dl: float = 1, weights: LossWeights = LossWeights(),
          **kwargs) -> TrainResult:
    """Compute feature statistics on these windows, then :func:`fit`."""
    stats = compute_stats(raw_windows)
    prepared = prepare(raw_windows, stats, dx, dl)
    return fit(prepared, model_cfg, train_cfg, stats, weights, **kwargs)


def write_loss_log(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_LOG_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[c])) for c in LOSS_LOG_COLUMNS[1:]])
