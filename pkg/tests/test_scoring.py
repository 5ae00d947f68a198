from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsab.scoring import (SceneSpec, ScoreReport, average_precision, baseline_cvm, baseline_lti,
                          build_report, metrics, precision_at_k, roc_auc, roc_points, scene_scores,
                          vehicle_score)
from dsab.trajectory import Window

from oracles import ap_threshold_sweep, auc_all_pairs, precision_at_k_sorting


def test_vehicle_score_examples():
    assert vehicle_score([3, 1, 2], [1, 1, 1])[0] == 2.0
    assert vehicle_score([3, 1, 2], [1, 0, 1])[0] == 2.5
    assert vehicle_score([[4.5]], [[True]])[0] == 4.5
    assert np.isnan(vehicle_score([1.0, 2.0], [0, 0])[0])


def test_scene_score_examples():
    spec = SceneSpec(road_length=1.0, stretch=0.15)
    loss = np.array([[2.0], [7.0], [3.0], [9.0]])
    x = np.array([[0.01], [0.05], [0.10], [0.5]])
    labels = np.array([[0], [1], [0], [0]])
    scenes = scene_scores(loss, x, np.ones_like(loss, bool), spec, 0, labels)
    first = scenes[0]
    assert (first.stretch, first.score_max, first.score_mean, first.label) == (0, 7.0, 4.0, 1)
    assert scenes[1].label == 0 and len(scenes) == 2  # empty stretches omitted


def test_scene_spec_tiles_road():
    spec = SceneSpec(1.0, 0.15)
    assert spec.n_stretches == 7
    assert spec.index(np.array([0.0, 0.149, 0.15, 1.0])).tolist() == [0, 0, 1, 6]
    with pytest.raises(ValueError):
        SceneSpec(1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_scene_max_at_least_mean(seed):
    r = np.random.default_rng(seed)
    n, T = 6, 5
    loss, x = r.normal(size=(n, T)), r.uniform(0, 1, size=(n, T))
    for s in scene_scores(loss, x, r.random((n, T)) > 0.3, SceneSpec(1.0, 0.15)):
        assert s.score_max >= s.score_mean


def _window(x, v, mask=None):
    x, v = np.atleast_2d(x).astype(float), np.atleast_2d(v).astype(float)
    m = np.ones_like(x, bool) if mask is None else np.atleast_2d(mask)
    z = np.zeros_like(x)
    return Window(np.arange(len(x)), x, z, np.ones_like(x, int), v, z, m, 0)


def test_lti_examples():
    t = np.arange(10)
    assert np.allclose(baseline_lti(_window(0.1 + 60 * t / 3600, np.full(10, 60.0))), 0, atol=1e-18)
    x = np.array([0.0, 0.01, 0.02, 0.02, 0.02, 0.03, 0.04])
    err = baseline_lti(_window(x, np.zeros(7)))[0]
    assert err[0] == 0 and err[-1] == 0 and err[1:-1].max() > 0
    assert np.allclose(baseline_lti(_window([0.3, 0.9], [10.0, 99.0])), 0, atol=1e-18)


def test_cvm_examples():
    t = np.arange(8)
    assert np.allclose(baseline_cvm(_window(60 * t / 3600, np.full(8, 60.0))), 0, atol=1e-18)
    v0, decel = 60.0, 4.0
    x = (v0 * t - 0.5 * decel * t ** 2) / 3600
    err = baseline_cvm(_window(x, v0 - decel * t))[0]
    assert err[0] == 0
    assert np.all(np.diff(err) > 0)


def test_baselines_respect_mask():
    x = np.array([0.0, 0.5, 0.02, 0.03])
    w = _window(x, np.full(4, 36.0), mask=[True, False, True, True])
    assert baseline_cvm(w)[0, 1] == 0 and baseline_lti(w)[0, 1] == 0


def test_metric_examples():
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert average_precision([3, 2, 1], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    assert precision_at_k([0.9, 0.8, 0.1], [1, 0, 1], 2) == 0.5
    assert roc_auc([0.1, 0.2], [1, 1]) is None
    assert metrics([0.1, 0.2], [0, 0])["auc"] is None


def test_precision_at_k_ties_use_entity_order():
    scores = [1.0, 1.0, 1.0, 0.0]
    assert precision_at_k(scores, [0, 1, 1, 0], 1) == 0.0
    assert precision_at_k(scores, [0, 1, 1, 0], 1, ids=[9, 3, 5, 1]) == 1.0
    assert precision_at_k(scores, [0, 1, 1, 0], 10) == 0.5


def _instance(r):
    n = int(r.integers(2, 201))
    scores = r.integers(0, max(2, n // 3), size=n) / 7.0 if r.random() < 0.5 else r.normal(size=n)
    labels = (r.random(n) < r.uniform(0.05, 0.6)).astype(int)
    labels[r.integers(n)] = 1
    labels[(np.flatnonzero(labels == 1)[0] + 1) % n] = 0
    if labels.sum() == 0 or labels.sum() == n:
        labels[:2] = [1, 0]
    return scores, labels


def test_metrics_match_brute_force_oracles():
    r = np.random.default_rng(2024)
    for _ in range(100):
        s, y = _instance(r)
        assert abs(roc_auc(s, y) - auc_all_pairs(s, y)) <= 1e-12
        assert abs(average_precision(s, y) - ap_threshold_sweep(s, y)) <= 1e-12
        for k in (1, 5, 20, 500):
            assert abs(precision_at_k(s, y, k) - precision_at_k_sorting(s, y, k)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_metrics_invariant_under_increasing_maps(seed):
    r = np.random.default_rng(seed)
    s, y = _instance(r)
    t = np.exp(2 * s) + 3.0
    for k in (1, 10, 100):
        assert precision_at_k(s, y, k) == precision_at_k(t, y, k)
    assert roc_auc(s, y) == pytest.approx(roc_auc(t, y), abs=1e-15)
    assert average_precision(s, y) == pytest.approx(average_precision(t, y), abs=1e-15)


def test_roc_points_area_equals_auc():
    r = np.random.default_rng(1)
    s, y = _instance(r)
    fpr, tpr, _ = roc_points(s, y)
    assert fpr[0] == tpr[0] == 0 and fpr[-1] == tpr[-1] == 1
    assert np.trapezoid(tpr, fpr) == pytest.approx(roc_auc(s, y), abs=1e-12)


def test_report_aggregates_vehicle_max_and_round_trips(tmp_path):
    w1 = _window([[0.1, 0.11], [0.5, 0.51]], [[60, 60], [60, 60]])
    w1.vehicle_ids = np.array([7, 8])
    w1.labels = np.array([[0, 0], [0, 1]])
    w2 = _window([[0.12, 0.13]], [[60, 60]])
    w2.vehicle_ids, w2.window_start, w2.labels = np.array([7]), 1, np.array([[0, 0]])
    grids = [np.array([[1.0, 3.0], [0.5, 0.5]]), np.array([[5.0, 7.0]])]
    rep = build_report([w1, w2], grids, SceneSpec(1.0), ks=(1,))
    v = rep.vehicles.set_index("entity_id")
    assert v.loc[7, "score"] == 6.0 and v.loc[7, "window_start"] == 1
    assert v.loc[8, "label"] == 1 and v.loc[7, "label"] == 0
    assert rep.summary["vehicle"]["pre@1"] == 0.0
    path = tmp_path / "rep.csv"
    rep.write_csv(path)
    assert path.read_text().splitlines()[0] == "entity_type,entity_id,window_start,score,label"
    back = ScoreReport.read_csv(path)
    assert back.evaluate((1,)) == rep.summary
