from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsab.trajectory import (CSV_COLUMNS, Dataset, DatasetFormatError, FeatureStats,
                             IncompletePolicy, compute_stats, read_dataset_csv, segment_windows,
                             standardize, unstandardize, write_dataset_csv)

from conftest import random_window


def _dataset(rows) -> Dataset:
    return Dataset(pd.DataFrame(rows, columns=CSV_COLUMNS), road_length=5.0, n_lanes=4)


def _straight(vid: int, t0: int, t1: int, v: float = 60.0, x0: float = 0.0, lane: int = 2):
    return [(t, vid, x0 + v * (t - t0) / 3600.0, 18.0, lane, v, 0.0, 0) for t in range(t0, t1 + 1)]


def test_twenty_steps_give_six_windows():
    ds = _dataset(_straight(1, 1, 20))
    ws = segment_windows(ds, T=15, stride=1)
    assert len(ws) == 6
    assert [w.window_start for w in ws] == list(range(1, 7))


def test_discard_drops_incomplete_vehicle():
    rows = _straight(1, 1, 15) + _straight(2, 5, 15, x0=0.5)
    ws = segment_windows(_dataset(rows), T=15, policy=IncompletePolicy.DISCARD)
    assert len(ws) == 1
    assert ws[0].vehicle_ids.tolist() == [1]


def test_extrapolate_fills_at_constant_velocity():
    rows = _straight(1, 1, 15) + _straight(2, 5, 15, v=60.0, x0=0.5)
    (w,) = segment_windows(_dataset(rows), T=15, policy="extrapolate_mask")
    i = w.vehicle_ids.tolist().index(2)
    x5 = w.x[i, 4]
    for t in range(1, 5):
        assert w.x[i, t - 1] == pytest.approx(x5 - 60.0 / 3600.0 * (5 - t), abs=1e-12)
        assert not w.mask[i, t - 1]
    assert w.mask[i, 4:].all()


def test_extrapolate_preserves_observed_count():
    rng = np.random.default_rng(3)
    rows = []
    for vid in range(1, 8):
        t0 = int(rng.integers(1, 10))
        rows += _straight(vid, t0, t0 + int(rng.integers(3, 15)), x0=vid * 0.1)
    ds = _dataset(rows)
    for w in segment_windows(ds, T=6, stride=6, policy="extrapolate_mask"):
        f = ds.frame
        inside = f[(f.t >= w.window_start) & (f.t < w.window_start + 6)]
        assert int(w.mask.sum()) == len(inside)


def test_stride_t_partitions_and_stride_one_overlaps():
    ds = _dataset(_straight(1, 0, 29))
    ws = segment_windows(ds, T=5, stride=5)
    covered = np.concatenate([np.arange(w.window_start, w.window_start + 5) for w in ws])
    assert sorted(covered.tolist()) == list(range(30))
    ws1 = segment_windows(ds, T=5, stride=1)
    for a, b in zip(ws1, ws1[1:]):
        assert len(set(range(a.window_start, a.window_start + 5))
                   & set(range(b.window_start, b.window_start + 5))) == 4


def test_segment_rejects_bad_arguments():
    ds = _dataset(_straight(1, 0, 5))
    with pytest.raises(ValueError):
        segment_windows(ds, T=1)
    with pytest.raises(ValueError):
        segment_windows(ds, T=3, stride=0)


def test_dataset_sorted_and_duplicates_rejected():
    rows = _straight(2, 0, 2) + _straight(1, 0, 2)
    ds = _dataset(rows)
    assert list(zip(ds.frame.t, ds.frame.vehicle_id))[:2] == [(0, 1), (0, 2)]
    with pytest.raises(DatasetFormatError):
        _dataset(rows + rows[:1])


def test_csv_round_trip(tmp_path):
    rows = _straight(1, 0, 4) + _straight(2, 0, 4, x0=0.2, lane=3)
    ds = _dataset(rows)
    path = tmp_path / "d.csv"
    write_dataset_csv(ds, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    back = read_dataset_csv(path, road_length=5.0, n_lanes=4)
    pd.testing.assert_frame_equal(back.frame, ds.frame, check_dtype=False, atol=1e-8)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DatasetFormatError):
        read_dataset_csv(tmp_path / "bad.csv")


def test_standardize_mean_maps_to_zero(rng):
    w = random_window(rng)
    stats = FeatureStats(np.array([0.0, 18.0, 65.0, 0.0]), np.array([1.0, 2.0, 5.0, 1.0]))
    w.v[0, 0], w.y[0, 0] = 65.0, 18.0
    s = standardize(w, stats)
    assert s.v[0, 0] == 0.0 and s.y[0, 0] == 0.0


def test_constant_feature_with_floored_std_is_finite(rng):
    w = random_window(rng)
    w.a[:] = 0.0
    stats = compute_stats([w])
    assert stats.std[3] == 1e-6
    assert np.isfinite(standardize(w, stats).a).all()


def test_shifted_windows_standardize_identically(rng):
    w = random_window(rng)
    stats = compute_stats([w])
    shifted = random_window(np.random.default_rng(12345))
    shifted.x = w.x + 2.5
    np.testing.assert_allclose(standardize(w, stats).x, standardize(shifted, stats).x, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_standardize_round_trip(seed, partial):
    r = np.random.default_rng(seed)
    w = random_window(r, n=5, T=6, partial=partial)
    stats = compute_stats([w, random_window(r)])
    back = unstandardize(standardize(w, stats), stats)
    for name in ("x", "y", "v", "a"):
        assert np.max(np.abs(getattr(back, name) - getattr(w, name))) < 1e-9
    np.testing.assert_array_equal(back.lane, w.lane)
