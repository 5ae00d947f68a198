"""Tape-based reverse-mode differentiation over dense float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape`.  Outside
a tape nothing is recorded, so the same model code doubles as a cheap
inference path.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = tsum(matmul(w, w))
    >>> tape.backward(loss)

Besides the usual elementwise and linear-algebra primitives there are
graph-specific ones.  ``spmm`` and ``attend`` work on a sparse adjacency
matrix; ``attend`` is the fused neighbour softmax and aggregation used by the
model.  ``gather_rows``, ``segment_softmax`` and ``edge_aggregate`` work on an
edge list sorted by destination node and serve as the edge-wise reference.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit

_local = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tape:
    """Records differentiable ops in execution order; one tape per thread."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def backward(self, loss: "Tensor") -> None:
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        loss._owned = True
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        self.nodes.clear()


def no_tape() -> bool:
    return not _tape_stack()


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_backward", "_owned")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable | None = None
        self._owned = False

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None
        self._owned = False

    # Gradient accumulation.  Arrays handed in by backward closures may be
    # shared with other nodes, so they are only mutated once owned.
    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
            self._owned = False
        elif self._owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._owned = True

    def _accum_index(self, index, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
            self._owned = True
        elif not self._owned:
            self.grad = self.grad.copy()
            self._owned = True
        self.grad[index] += g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    # one reduction instead of an isfinite mask: NaN/Inf propagate through the sum
    if not np.isfinite(value.sum()):
        raise NonFiniteError("non-finite value produced in forward pass")
    out = Tensor(value)
    stack = _tape_stack()
    if stack and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        stack[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _record(a.value + b.value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _record(a.value - b.value, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.value, b.shape))

    return _record(a.value * b.value, (a, b), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(2.0 * a.value * g)

    return _record(a.value * a.value, (a,), backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_value = np.exp(a.value)

    def backward(g):
        a._accum(g * out_value)

    return _record(out_value, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(g / a.value)

    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(a.value)
    return _record(value, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.value)

    def backward(g):
        a._accum(g * s * (1.0 - s))

    return _record(s, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    th = np.tanh(a.value)

    def backward(g):
        a._accum(g * (1.0 - th * th))

    return _record(th, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(a.value > 0, 1.0, slope)

    def backward(g):
        a._accum(g * scale)

    return _record(a.value * scale, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))

    return _record(a.value @ b.value, (a, b), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        a._accum(g.reshape(a.shape))

    return _record(a.value.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accum(np.transpose(g, inverse))

    return _record(np.transpose(a.value, axes), (a,), backward)


def index_select(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; repeated integer indices accumulate."""
    fancy = isinstance(index, (np.ndarray, list)) or (
        isinstance(index, tuple) and any(isinstance(i, (np.ndarray, list)) for i in index)
    )

    def backward(g):
        if fancy:
            full = np.zeros_like(a.value)
            np.add.at(full, index, g)
            a._accum(full)
        else:
            a._accum_index(index, g)

    return _record(a.value[index], (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    axis = axis % parts[0].ndim
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accum(g[tuple(sl)])

    return _record(np.concatenate([p.value for p in parts], axis=axis), parts, backward)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def backward(g):
        for k, p in enumerate(parts):
            if p.requires_grad:
                p._accum(np.take(g, k, axis=axis))

    return _record(np.stack([p.value for p in parts], axis=axis), parts, backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _record(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def masked_mean(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of ``a`` over entries where ``mask`` is nonzero."""
    mask = np.asarray(mask, dtype=np.float64)
    total = mask.sum()
    if total == 0:
        raise ValueError("masked_mean over an empty mask")
    return mul(tsum(mul(a, mask)), 1.0 / total)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accum(p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _record(p, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(out)

    def backward(g):
        a._accum(g - p * g.sum(axis=axis, keepdims=True))

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# graph primitives (edges sorted by destination, every node has >= 1 edge)
# ---------------------------------------------------------------------------

def gather_rows(a: Tensor, idx: np.ndarray, scatter: sparse.csr_matrix | None = None) -> Tensor:
    """``a[idx]`` along axis 0.  ``scatter`` is the (rows x len(idx)) incidence
    matrix used for the adjoint; built on the fly if not supplied."""
    if scatter is None:
        scatter = incidence(idx, a.shape[0])

    def backward(g):
        flat = scatter @ g.reshape(len(idx), -1)
        a._accum(flat.reshape(a.shape))

    return _record(a.value[idx], (a,), backward)


def spmm(S: sparse.csr_matrix, a: Tensor, S_t: sparse.csr_matrix | None = None) -> Tensor:
    """Constant sparse matrix times ``a`` along axis 0; trailing axes are kept."""
    rows = S.shape[0]
    if S_t is None:
        S_t = S.T.tocsr()
    flat = a.value.reshape(a.shape[0], -1)

    def backward(g):
        a._accum((S_t @ g.reshape(rows, -1)).reshape(a.shape))

    return _record((S @ flat).reshape((rows,) + a.shape[1:]), (a,), backward)


def attend(z: Tensor, a_nb: Tensor, adj: sparse.csr_matrix, slope: float = 0.2) -> Tensor:
    """Attention-weighted neighbourhood average with neighbour-only scores.

    z is (N, H, D) transformed node features, a_nb is (H, D) and ``adj`` a
    symmetric 0/1 adjacency (self-loops included).  For every head,
    out_i = sum_j adj_ij w_j z_j / sum_j adj_ij w_j with
    w_j = exp(a_nb . LeakyReLU(z_j)).
    """
    n, H, D = z.shape
    scale = np.where(z.value > 0, 1.0, slope)
    lz = z.value * scale
    s = np.einsum("nhd,hd->nh", lz, a_nb.value)
    w = np.exp(s - s.max(axis=0))
    num = (adj @ (w[:, :, None] * z.value).reshape(n, H * D)).reshape(n, H, D)
    den = adj @ w
    out = num / den[:, :, None]

    def backward(g):
        g_num = g / den[:, :, None]
        g_den = -np.einsum("nhd,nhd->nh", g, out) / den
        g_wz = (adj @ g_num.reshape(n, H * D)).reshape(n, H, D)
        g_w = np.einsum("nhd,nhd->nh", g_wz, z.value) + adj @ g_den
        g_s = g_w * w
        if z.requires_grad:
            z._accum(w[:, :, None] * g_wz + g_s[:, :, None] * a_nb.value[None] * scale)
        if a_nb.requires_grad:
            a_nb._accum(np.einsum("nh,nhd->hd", g_s, lz))

    return _record(out, (z, a_nb), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    q = a.value / b.value

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.value, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * q / b.value, b.shape))

    return _record(q, (a, b), backward)


def incidence(idx: np.ndarray, n_rows: int) -> sparse.csr_matrix:
    m = len(idx)
    return sparse.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n_rows, m))


def segment_softmax(scores: Tensor, dst: np.ndarray, starts: np.ndarray) -> Tensor:
    """Softmax of per-edge ``scores`` (E, H) within each destination segment."""
    peak = np.maximum.reduceat(scores.value, starts, axis=0)
    e = np.exp(scores.value - peak[dst])
    alpha = e / np.add.reduceat(e, starts, axis=0)[dst]

    def backward(g):
        weighted = alpha * g
        scores._accum(weighted - alpha * np.add.reduceat(weighted, starts, axis=0)[dst])

    return _record(alpha, (scores,), backward)


def edge_aggregate(alpha: Tensor, values: Tensor, src: np.ndarray, starts: np.ndarray,
                   src_scatter: sparse.csr_matrix) -> Tensor:
    """out[n, h] = sum over edges e into n of alpha[e, h] * values[src[e], h].

    alpha is (E, H); values is (N, H, D); output is (N, H, D).
    """
    gathered = values.value[src]
    out = np.add.reduceat(alpha.value[:, :, None] * gathered, starts, axis=0)
    counts = np.diff(np.append(starts, len(src)))

    def backward(g):
        g_edge = np.repeat(g, counts, axis=0)
        if alpha.requires_grad:
            alpha._accum((g_edge * gathered).sum(axis=-1))
        if values.requires_grad:
            contrib = (alpha.value[:, :, None] * g_edge).reshape(len(src), -1)
            values._accum((src_scatter @ contrib).reshape(values.shape))

    return _record(out, (alpha, values), backward)


# ---------------------------------------------------------------------------
# checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[np.ndarray],
               eps: float = 1e-5) -> float:
    """Max elementwise |g_tape - g_fd| / max(1, |g_fd|) against central differences.

    ``f`` maps a list of Tensors (same order as ``params``) to a scalar Tensor.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    leaves = [Tensor(p.copy(), requires_grad=True) for p in params]
    with Tape() as tape:
        loss = f(leaves)
    tape.backward(loss)
    worst = 0.0
    for k, p in enumerate(params):
        g_tape = leaves[k].grad if leaves[k].grad is not None else np.zeros_like(p)
        g_fd = np.zeros_like(p)
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = _eval(f, params)
            flat[j] = orig - eps
            lo = _eval(f, params)
            flat[j] = orig
            g_fd.reshape(-1)[j] = (hi - lo) / (2 * eps)
        err = np.abs(g_tape - g_fd) / np.maximum(1.0, np.abs(g_fd))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def _eval(f, params) -> float:
    return float(f([Tensor(p) for p in params]).value)
