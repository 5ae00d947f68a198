from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsab.model import ModelConfig, as_leaves, distributions, forward, init_params
from dsab.optim import step_decay_lr
from dsab.training import (LOSS_LOG_COLUMNS, LossWeights, TrainConfig, TrainingError,
                           batch_losses, gaussian_nll, iter_batches, lane_ce, loss_grids,
                           predict, prepare, total_loss, train, write_loss_log)
from dsab.trajectory import compute_stats

from conftest import random_window

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def test_gaussian_nll_closed_forms():
    assert gaussian_nll(1.0, 1.0, 1.0) == pytest.approx(0.918939, abs=1e-6)
    assert gaussian_nll(2.0, 1.0, 1.0) == pytest.approx(1.418939, abs=1e-6)
    assert gaussian_nll(1.0, 1.0, 2.0) == pytest.approx(1.612086, abs=1e-6)
    with pytest.raises(ValueError):
        gaussian_nll(0.0, 0.0, 0.0)


def test_lane_ce_closed_forms():
    assert lane_ce(3, np.full(4, 0.25)) == pytest.approx(math.log(4))
    assert lane_ce(2, np.array([0.0, 1.0, 0.0])) == 0.0
    assert lane_ce(1, np.array([0.5, 0.5])) == pytest.approx(math.log(2))


def test_total_loss_examples():
    ones = {k: np.ones(1) for k in ("x", "v", "a", "lane")}
    grid, total = total_loss(ones)
    assert total == 6.0
    assert total_loss({k: np.zeros(3) for k in ones})[1] == 0.0
    comps = {k: np.array([5.0, 7.0]) for k in ones}
    grid, total = total_loss(comps, mask=np.array([True, False]))
    assert grid[1] == 0.0 and total == 30.0


def test_nll_minimisers_on_a_grid():
    x = 0.7
    mus = np.linspace(-2, 3, 5001)
    assert mus[np.argmin(gaussian_nll(x, mus, 0.8))] == pytest.approx(x, abs=1e-3)
    mu = -0.5
    sigmas = np.linspace(0.05, 4, 7901)
    assert sigmas[np.argmin(gaussian_nll(x, mu, sigmas))] == pytest.approx(abs(x - mu), abs=1e-3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=4, max_size=4), st.integers(0, 3),
       st.floats(0, 10), st.floats(0, 10))
def test_total_loss_linear_in_each_weight(comp, which, l1, l2):
    comps = {k: np.array([c]) for k, c in zip(("x", "v", "a", "lane"), comp)}
    names = ("x", "v", "a", "lane")

    def with_weight(val):
        kw = dict(x=1.0, v=1.0, a=2.0, lane=2.0)
        kw[names[which]] = val
        return total_loss(comps, LossWeights(**kw))[1]

    base = with_weight(0.0)
    assert with_weight(l1 + l2) - base == pytest.approx((with_weight(l1) - base) + (with_weight(l2) - base),
                                                        rel=1e-9, abs=1e-9)


def test_weights_must_be_non_negative():
    with pytest.raises(ValueError):
        LossWeights(x=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def _windows(n=12, seed=0, T=6):
    r = np.random.default_rng(seed)
    return [random_window(r, n=int(r.integers(2, 5)), T=T, spread=0.15) for _ in range(n)]


def test_batch_losses_match_closed_form():
    ws = _windows(3, T=4)
    cfg = ModelConfig(n_lanes=3, T=4)
    stats = compute_stats(ws)
    prep = prepare(ws, stats, 0.1, 1)
    _, batch = next(iter_batches(prep, 8))
    out = forward(as_leaves(init_params(cfg, np.random.default_rng(1)), False), batch).value
    grid, comps = batch_losses(forward(as_leaves(init_params(cfg, np.random.default_rng(1)), False),
                                       batch), batch, LossWeights())
    d = distributions(out)
    f = batch.feats
    np.testing.assert_allclose(comps["x"], gaussian_nll(f[..., 0], d.mu_x, d.sigma_x), rtol=1e-10)
    np.testing.assert_allclose(comps["v"], gaussian_nll(f[..., 2], d.mu_v, d.sigma_v), rtol=1e-10)
    np.testing.assert_allclose(comps["a"], gaussian_nll(f[..., 3], d.mu_a, d.sigma_a), rtol=1e-10)
    lane_expect = -np.log(np.take_along_axis(d.lane_probs, batch.lanes[..., None], -1)[..., 0])
    np.testing.assert_allclose(comps["lane"], lane_expect, rtol=1e-10)
    grids = loss_grids(out, batch)
    assert len(grids) == 3
    for g, w in zip(grids, ws):
        assert g.total.shape == w.mask.shape
        assert (g.total[~g.mask] == 0).all()


def test_masked_steps_contribute_nothing():
    r = np.random.default_rng(5)
    ws = [random_window(r, n=3, T=5, partial=True) for _ in range(2)]
    stats = compute_stats(ws)
    prep = prepare(ws, stats, 0.1, 1)
    cfg = ModelConfig(n_lanes=3, T=5)
    P = init_params(cfg, r)
    for g in predict(P, prep):
        assert (g.total[~g.mask] == 0).all() and (g.x[~g.mask] == 0).all()


def test_epoch_101_learning_rate():
    assert step_decay_lr(101, 0.05, 50) == pytest.approx(0.0125)


def test_fixed_seed_reproduces_loss_curve():
    ws = _windows(10)
    cfg = ModelConfig(n_lanes=3, T=6)
    tc = TrainConfig(epochs=3, batch_size=4, seed=11)
    a = train(ws, cfg, tc).loss_log
    b = train(ws, cfg, tc).loss_log
    assert a == b
    c = train(ws, cfg, TrainConfig(epochs=3, batch_size=4, seed=12)).loss_log
    assert a != c


def test_thread_split_matches_single_worker():
    ws = _windows(10)
    cfg = ModelConfig(n_lanes=3, T=6)
    tc = TrainConfig(epochs=2, batch_size=5, seed=3)
    one = train(ws, cfg, tc, workers=1)
    two = train(ws, cfg, tc, workers=2)
    for k in one.params:
        np.testing.assert_allclose(one.params[k], two.params[k], rtol=1e-9, atol=1e-12)


def test_smoothed_early_loss_is_non_increasing():
    ws = _windows(24, seed=4)
    res = train(ws, ModelConfig(n_lanes=3, T=6), TrainConfig(epochs=20, batch_size=8, seed=0))
    losses = np.array([r["mean_loss"] for r in res.loss_log])
    means = losses.reshape(4, 5).mean(axis=1)
    assert np.all(np.diff(means) <= 0)


def test_non_finite_loss_aborts():
    ws = _windows(4)
    cfg = ModelConfig(n_lanes=3, T=6)
    params = init_params(cfg, np.random.default_rng(0))
    params["head.b"][1] = -800.0  # sigma_x = exp(-800) underflows the likelihood
    with pytest.raises(TrainingError):
        train(ws, cfg, TrainConfig(epochs=1), params=params)


def test_loss_log_csv(tmp_path):
    res = train(_windows(4), ModelConfig(n_lanes=3, T=6), TrainConfig(epochs=2, batch_size=2))
    path = tmp_path / "log.csv"
    write_loss_log(res.loss_log, path)
    t = pd.read_csv(path)
    assert list(t.columns) == LOSS_LOG_COLUMNS
    assert t.epoch.tolist() == [1, 2]
    assert t.lr.iloc[0] == 0.05
    comp = t.lx + t.lv + 2 * t.la + 2 * t.ll
    np.testing.assert_allclose(comp, t.mean_loss, rtol=1e-9)
