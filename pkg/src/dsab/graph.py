"""Proximity graphs over a window's vehicles.

Two vehicles are linked at step t when both are observed, their longitudinal
distance is at most ``dx`` miles and they are at most ``dl`` lanes apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .trajectory import Window


@dataclass(frozen=True)
class DynGraph:
    """Undirected edge sets, one per step, stored as (M, 2) arrays with i < j."""

    n_nodes: int
    edges_t: tuple[np.ndarray, ...]
    union_edges: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.edges_t)

    def edge_sets(self) -> list[set[tuple[int, int]]]:
        return [set(map(tuple, e.tolist())) for e in self.edges_t]


def _pairs(x: np.ndarray, lane: np.ndarray, mask: np.ndarray, dx: float, dl: float) -> np.ndarray:
    if dx <= 0 or len(x) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    close = (np.abs(x[:, None] - x[None, :]) <= dx) & (np.abs(lane[:, None] - lane[None, :]) <= dl)
    close &= mask[:, None] & mask[None, :]
    i, j = np.nonzero(np.triu(close, k=1))
    return np.stack([i, j], axis=1).astype(np.int64)


def build(window: Window, dx: float = 0.1, dl: float = 1) -> DynGraph:
    """Per-step edge sets and their union.  ``dx`` in miles on raw (not
    standardized) positions; ``dx == 0`` yields no edges at all."""
    if dx < 0 or dl < 0:
        raise ValueError("thresholds must be non-negative")
    if window.standardized:
        raise ValueError("build the graph from raw positions, before standardizing")
    edges = tuple(_pairs(window.x[:, t], window.lane[:, t], window.mask[:, t], dx, dl)
                  for t in range(window.n_steps))
    stacked = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    union = np.unique(stacked, axis=0) if len(stacked) else np.zeros((0, 2), dtype=np.int64)
    return DynGraph(window.n_vehicles, edges, union)


@dataclass(frozen=True)
class AttentionGraph:
    """Directed message-passing structure derived from undirected pairs.

    Every node receives a self-loop; edges are sorted by destination so that
    ``starts`` delimits each node's incoming segment.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    starts: np.ndarray
    src_scatter: sparse.csr_matrix
    dst_scatter: sparse.csr_matrix
    adj: sparse.csr_matrix  # symmetric 0/1 adjacency including self-loops

    @classmethod
    def from_pairs(cls, n_nodes: int, pairs: np.ndarray) -> "AttentionGraph":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        loops = np.arange(n_nodes, dtype=np.int64)
        src = np.concatenate([pairs[:, 0], pairs[:, 1], loops])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0], loops])
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        starts = np.searchsorted(dst, np.arange(n_nodes))
        e = len(src)
        cols = np.arange(e)
        src_scatter = sparse.csr_matrix((np.ones(e), (src, cols)), shape=(n_nodes, e))
        dst_scatter = sparse.csr_matrix((np.ones(e), (dst, cols)), shape=(n_nodes, e))
        adj = sparse.csr_matrix((np.ones(e), (dst, src)), shape=(n_nodes, n_nodes))
        return cls(n_nodes, src, dst, starts, src_scatter, dst_scatter, adj)

    @property
    def n_edges(self) -> int:
        return len(self.src)


def disjoint_union(graphs: list[tuple[int, np.ndarray]]) -> tuple[int, np.ndarray]:
    """Concatenate (n_nodes, pairs) graphs with node offsets."""
    offset = 0
    parts = []
    for n, pairs in graphs:
        parts.append(np.asarray(pairs, dtype=np.int64).reshape(-1, 2) + offset)
        offset += n
    return offset, (np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64))
