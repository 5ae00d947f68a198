from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsab.graph import build
from dsab.trajectory import Window

from conftest import random_window


def _two(dx_mi: float, lanes=(2, 2), T: int = 1) -> Window:
    x = np.array([[0.3] * T, [0.3 + dx_mi] * T])
    lane = np.array([[lanes[0]] * T, [lanes[1]] * T])
    ones = np.ones((2, T))
    return Window(np.array([1, 2]), x, ones * 18, lane, ones * 60, ones * 0, ones.astype(bool), 0)


def test_close_cars_same_lane_are_linked():
    g = build(_two(0.05), dx=0.1, dl=1)
    assert g.edge_sets()[0] == {(0, 1)}


def test_cars_two_lanes_apart_are_not_linked():
    assert build(_two(0.01, lanes=(1, 3)), dx=0.1, dl=1).edge_sets()[0] == set()


def test_edge_at_one_step_enters_union():
    w = _two(0.5, T=5)
    w.x[1, 2] = 0.31
    g = build(w, dx=0.1, dl=1)
    assert [len(e) for e in g.edges_t] == [0, 0, 1, 0, 0]
    assert {tuple(e) for e in g.union_edges.tolist()} == {(0, 1)}


def test_zero_distance_threshold_has_no_edges(rng):
    w = random_window(rng, n=6, spread=0.0)
    g = build(w, dx=0.0, dl=3)
    assert all(len(e) == 0 for e in g.edges_t) and len(g.union_edges) == 0


def test_masked_vehicles_are_isolated():
    w = _two(0.01, T=2)
    w.mask[1, 0] = False
    assert [len(e) for e in build(w, dx=0.1).edges_t] == [0, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.integers(0, 2))
def test_edges_monotone_in_threshold_and_within_union(seed, d1, d2, dl):
    w = random_window(np.random.default_rng(seed), n=6, T=4, partial=True)
    lo, hi = sorted((d1, d2))
    g_lo, g_hi = build(w, lo, dl), build(w, hi, dl)
    union = {tuple(e) for e in g_hi.union_edges.tolist()}
    for e_lo, e_hi in zip(g_lo.edge_sets(), g_hi.edge_sets()):
        assert e_lo <= e_hi
        assert e_hi <= union
        assert all(i < j for i, j in e_hi)


def test_build_rejects_standardized_or_negative(rng):
    w = random_window(rng)
    with pytest.raises(ValueError):
        build(w, dx=-1.0)
    from dataclasses import replace
    with pytest.raises(ValueError):
        build(replace(w, standardized=True))
