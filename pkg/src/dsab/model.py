"""Recurrent graph-attention autoencoder.

Both encoder and decoder are GRUs whose six gate transforms are multi-head
graph attention convolutions.  The decoder runs backwards in time from the
last step and emits, per vehicle and step, Gaussian parameters for x, v, a
and a categorical distribution over lanes.

Parameters live in a flat ``dict[str, np.ndarray]``; the forward functions
take the same dict with :class:`~dsab.autodiff.Tensor` values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import AttentionGraph, DynGraph, disjoint_union
from .trajectory import FeatureStats, Window

CHECKPOINT_VERSION = 1
INPUT_GATES = ("xz", "xr", "xh")
HIDDEN_GATES = ("hz", "hr", "hh")
# output head columns: (mu_x, log sigma_x, mu_v, log sigma_v, mu_a, log sigma_a, lane logits...)
N_GAUSS_OUT = 6


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_lanes: int
    d_h: int = 5
    K: int = 3
    d_l: int = 3
    T: int = 15

    def __post_init__(self):
        for name in ("n_lanes", "d_h", "K", "d_l", "T"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def d_f(self) -> int:
        return 4 + self.d_l

    @property
    def d_out(self) -> int:
        return N_GAUSS_OUT + self.n_lanes


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    K, d_h = cfg.K, cfg.d_h
    p = {"lane_emb": rng.uniform(-0.1, 0.1, size=(cfg.n_lanes, cfg.d_l))}
    for cell in ("enc", "dec"):
        for gate in INPUT_GATES + HIDDEN_GATES:
            d_in = cfg.d_f if gate.startswith("x") else d_h
            p[f"{cell}.{gate}.W"] = _glorot(rng, (K, d_h, d_in), d_in, d_h)
            p[f"{cell}.{gate}.a"] = _glorot(rng, (K, 2 * d_h), 2 * d_h, 1)
        for b in ("b_z", "b_r", "b_h"):
            p[f"{cell}.{b}"] = np.zeros(d_h)
    p["head.W"] = _glorot(rng, (d_h, cfg.d_out), d_h, cfg.d_out)
    p["head.b"] = np.zeros(cfg.d_out)
    return p


def as_leaves(params: dict[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


# ---------------------------------------------------------------------------
# graph attention convolution
# ---------------------------------------------------------------------------

def gat_conv(x: Tensor, W: Tensor, a: Tensor, graph: AttentionGraph, groups: int = 1) -> Tensor:
    """Multi-head attention convolution for ``groups`` independent head stacks.

    x is (N, d_in); W is (groups*K, d_h, d_in); a is (groups*K, 2*d_h).  Each
    node attends over its neighbours plus itself with
    e_ij = a . LeakyReLU([W x_i || W x_j]); heads of a stack are averaged.
    Returns (N, groups, d_h).

    The LeakyReLU acts on each half of the concatenation separately, so
    e_ij = a_tgt . f(W x_i) + a_nb . f(W x_j).  The target term is shared by
    every entry of node i's softmax and cancels, which turns the weighted sum
    into two products with the constant adjacency matrix.  ``gat_conv_edgewise``
    is the literal per-edge form.
    """
    H, d_h, d_in = W.shape
    n = x.shape[0]
    W_flat = ad.reshape(ad.transpose(W, (2, 0, 1)), (d_in, H * d_h))
    z = ad.reshape(ad.matmul(x, W_flat), (n, H, d_h))
    out = ad.attend(z, a[:, d_h:], graph.adj, 0.2)
    return ad.mean(ad.reshape(out, (n, groups, H // groups, d_h)), axis=2)


def gat_conv_edgewise(x: Tensor, W: Tensor, a: Tensor, graph: AttentionGraph,
                      groups: int = 1) -> Tensor:
    """Reference form of :func:`gat_conv` with explicit per-edge scores and softmax."""
    H, d_h, d_in = W.shape
    n = x.shape[0]
    W_flat = ad.reshape(ad.transpose(W, (2, 0, 1)), (d_in, H * d_h))
    z = ad.reshape(ad.matmul(x, W_flat), (n, H, d_h))
    lz = ad.leaky_relu(z, 0.2)
    score_tgt = ad.tsum(lz * a[:, :d_h], axis=-1)
    score_nb = ad.tsum(lz * a[:, d_h:], axis=-1)
    e = (ad.gather_rows(score_tgt, graph.dst, graph.dst_scatter)
         + ad.gather_rows(score_nb, graph.src, graph.src_scatter))
    alpha = ad.segment_softmax(e, graph.dst, graph.starts)
    out = ad.edge_aggregate(alpha, z, graph.src, graph.starts, graph.src_scatter)
    return ad.mean(ad.reshape(out, (n, groups, H // groups, d_h)), axis=2)


def attention_weights(x: np.ndarray, W: np.ndarray, a: np.ndarray,
                      graph: AttentionGraph) -> np.ndarray:
    """Attention coefficients (E, H) aligned with ``graph.src``/``graph.dst``."""
    scores = gat_scores(x, W, a, graph)
    return ad.segment_softmax(Tensor(scores), graph.dst, graph.starts).value


def gat_scores(x: np.ndarray, W: np.ndarray, a: np.ndarray, graph: AttentionGraph) -> np.ndarray:
    d_h = W.shape[1]
    z = np.einsum("hdi,ni->nhd", W, x)
    lz = np.where(z > 0, z, 0.2 * z)
    return (np.einsum("nhd,hd->nh", lz[graph.dst], a[:, :d_h])
            + np.einsum("nhd,hd->nh", lz[graph.src], a[:, d_h:]))


def _stack_heads(P: dict[str, Tensor], cell: str, gates: tuple[str, ...]) -> tuple[Tensor, Tensor]:
    if len(gates) == 1:
        return P[f"{cell}.{gates[0]}.W"], P[f"{cell}.{gates[0]}.a"]
    W = ad.concat([P[f"{cell}.{g}.W"] for g in gates], axis=0)
    a = ad.concat([P[f"{cell}.{g}.a"] for g in gates], axis=0)
    return W, a


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------

def gru_update(gx: Tensor, h: Tensor, graph: AttentionGraph, P: dict[str, Tensor],
               cell: str) -> Tensor:
    """GRU update given the precomputed input-side convolutions ``gx`` (N, 3, d_h)."""
    W_h, a_h = _stack_heads(P, cell, ("hz", "hr"))
    gh = gat_conv(h, W_h, a_h, graph, groups=2)
    z = ad.sigmoid(gx[:, 0] + gh[:, 0] + P[f"{cell}.b_z"])
    r = ad.sigmoid(gx[:, 1] + gh[:, 1] + P[f"{cell}.b_r"])
    # the candidate bias sits inside the hidden-side convolution
    reset = r * h + P[f"{cell}.b_h"]
    W_hh, a_hh = _stack_heads(P, cell, ("hh",))
    cand = ad.tanh(gx[:, 2] + gat_conv(reset, W_hh, a_hh, graph)[:, 0])
    return z * h + (1.0 - z) * cand


def gru_step(x: Tensor, h: Tensor, graph: AttentionGraph, P: dict[str, Tensor],
             cell: str = "enc") -> Tensor:
    W_x, a_x = _stack_heads(P, cell, INPUT_GATES)
    gx = gat_conv(x, W_x, a_x, graph, groups=3)
    return gru_update(gx, h, graph, P, cell)


# ---------------------------------------------------------------------------
# batched windows
# ---------------------------------------------------------------------------

@dataclass
class GraphBatch:
    """Several standardized windows merged into one disjoint graph.

    Arrays are time-major: ``feats`` is (T, N, 4) over the concatenated nodes.
    """

    feats: np.ndarray
    lanes: np.ndarray  # (T, N), 0-based
    mask: np.ndarray  # (T, N) float
    node_window: np.ndarray  # (N,)
    n_windows: int
    step_graphs: list[AttentionGraph]
    all_steps_graph: AttentionGraph  # T*N nodes, used for input-side convolutions
    union_graph: AttentionGraph

    @property
    def T(self) -> int:
        return self.feats.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.feats.shape[1]

    def window_slices(self) -> list[slice]:
        bounds = np.searchsorted(self.node_window, np.arange(self.n_windows + 1))
        return [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def make_batch(windows: list[Window], graphs: list[DynGraph]) -> GraphBatch:
    if not windows:
        raise ValueError("empty batch")
    T = windows[0].n_steps
    if any(w.n_steps != T for w in windows):
        raise ValueError("all windows in a batch need the same T")
    if not all(w.standardized for w in windows):
        raise ValueError("windows must be standardized")
    feats = np.concatenate([w.features() for w in windows], axis=0).transpose(1, 0, 2)
    lanes = np.concatenate([w.lane for w in windows], axis=0).T - 1
    mask = np.concatenate([w.mask for w in windows], axis=0).T.astype(np.float64)
    node_window = np.concatenate([np.full(w.n_vehicles, k) for k, w in enumerate(windows)])
    n = len(node_window)
    step_graphs = []
    step_pairs = []
    for t in range(T):
        _, pairs = disjoint_union([(g.n_nodes, g.edges_t[t]) for g in graphs])
        step_graphs.append(AttentionGraph.from_pairs(n, pairs))
        step_pairs.append((n, pairs))
    total, all_pairs = disjoint_union(step_pairs)
    _, union_pairs = disjoint_union([(g.n_nodes, g.union_edges) for g in graphs])
    return GraphBatch(feats, np.ascontiguousarray(lanes), np.ascontiguousarray(mask), node_window,
                      len(windows), step_graphs, AttentionGraph.from_pairs(total, all_pairs),
                      AttentionGraph.from_pairs(n, union_pairs))


# ---------------------------------------------------------------------------
# encoder / decoder
# ---------------------------------------------------------------------------

def encoder_inputs(P: dict[str, Tensor], batch: GraphBatch) -> Tensor:
    """(T*N, d_f) input features: numeric channels followed by lane embeddings."""
    T, n = batch.T, batch.n_nodes
    emb = ad.gather_rows(P["lane_emb"], batch.lanes.reshape(-1))
    return ad.concat([Tensor(batch.feats.reshape(T * n, 4)), emb], axis=1)


def encode(P: dict[str, Tensor], batch: GraphBatch, inputs: Tensor | None = None) -> Tensor:
    """Final hidden state H_T (N, d_h), starting from zeros."""
    T, n = batch.T, batch.n_nodes
    d_h = P["enc.b_z"].shape[0]
    if inputs is None:
        inputs = encoder_inputs(P, batch)
    W_x, a_x = _stack_heads(P, "enc", INPUT_GATES)
    # input-side convolutions do not depend on the recurrence: run all steps at once
    gx_all = ad.reshape(gat_conv(inputs, W_x, a_x, batch.all_steps_graph, groups=3),
                        (T, n, 3, d_h))
    h = Tensor(np.zeros((n, d_h)))
    for t in range(T):
        h = gru_update(gx_all[t], h, batch.step_graphs[t], P, "enc")
    return h


def decode(P: dict[str, Tensor], batch: GraphBatch, h: Tensor, init_input: Tensor) -> Tensor:
    """Raw head outputs (T, N, 6 + L) in chronological order.

    Decoding starts at the last step from ``init_input`` (the encoder inputs
    at time T).  Each later input is the predicted means for x, v, a, the
    time-T lateral position, and the embedding of the most likely lane.
    """
    T = batch.T
    y_last = Tensor(batch.feats[T - 1, :, 1:2])
    W_x, a_x = _stack_heads(P, "dec", INPUT_GATES)
    graph = batch.union_graph
    x_in = init_input
    outs: list[Tensor | None] = [None] * T
    for t in range(T - 1, -1, -1):
        gx = gat_conv(x_in, W_x, a_x, graph, groups=3)
        h = gru_update(gx, h, graph, P, "dec")
        o = ad.matmul(h, P["head.W"]) + P["head.b"]
        outs[t] = o
        if t > 0:
            lane_hat = np.argmax(o.value[:, N_GAUSS_OUT:], axis=1)
            x_in = ad.concat([o[:, 0:1], y_last, o[:, 2:3], o[:, 4:5],
                              ad.gather_rows(P["lane_emb"], lane_hat)], axis=1)
    return ad.stack(outs, axis=0)


def forward(P: dict[str, Tensor], batch: GraphBatch) -> Tensor:
    inputs = encoder_inputs(P, batch)
    h = encode(P, batch, inputs)
    n = batch.n_nodes
    init = ad.reshape(inputs, (batch.T, n, -1))[batch.T - 1]
    return decode(P, batch, h, init)


@dataclass
class Distributions:
    """Decoded distribution parameters, each (T, N) or (T, N, L)."""

    mu_x: np.ndarray
    sigma_x: np.ndarray
    mu_v: np.ndarray
    sigma_v: np.ndarray
    mu_a: np.ndarray
    sigma_a: np.ndarray
    lane_probs: np.ndarray


def distributions(out: np.ndarray) -> Distributions:
    logits = out[..., N_GAUSS_OUT:]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=-1, keepdims=True)
    return Distributions(out[..., 0], np.exp(out[..., 1]), out[..., 2], np.exp(out[..., 3]),
                         out[..., 4], np.exp(out[..., 5]), p)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, cfg: ModelConfig, stats: FeatureStats,
                    params: dict[str, np.ndarray], extra: dict | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(cfg),
        "feature_stats": stats.to_dict(),
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in sorted(params.items())},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, FeatureStats, dict[str, np.ndarray], dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint") from exc
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version!r}, expected {CHECKPOINT_VERSION}")
    cfg = ModelConfig(**doc["model_config"])
    stats = FeatureStats.from_dict(doc["feature_stats"])
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in doc["params"].items()}
    expected = init_params(cfg, np.random.default_rng(0))
    if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in params):
        raise CheckpointError(f"{path}: parameter set does not match the model config")
    return cfg, stats, params, doc.get("extra", {})
