"""Minimal dense-tensor kernel with reverse-mode differentiation.

Tensors wrap C-contiguous float64 numpy arrays. Every operation records
its inputs and a vector-Jacobian closure; ``backward`` replays the tape in
reverse creation order, which fixes the gradient reduction order and makes
training deterministic.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

_tape_counter = 0


def _next_tape_id() -> int:
    global _tape_counter
    _tape_counter += 1
    return _tape_counter


class Tensor:
    """A float64 array plus the tape edges needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_inputs", "_tape_id")

    def __init__(
        self,
        data,
        inputs: Sequence[tuple["Tensor", Callable[[np.ndarray], np.ndarray]]] = (),
        requires_grad: bool = False,
    ):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self._inputs = tuple(inputs)
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in self._inputs)
        self._tape_id = _next_tape_id()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Constant view of this tensor; gradients stop here."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(x) -> Tensor:
    return as_tensor(x)


class Parameter:
    """Named learnable tensor with a persistent gradient accumulator."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, data, trainable: bool = True):
        self.name = name
        self.value = Tensor(data, requires_grad=trainable)
        self.value.zero_grad()

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray:
        assert self.value.grad is not None
        return self.value.grad

    @property
    def trainable(self) -> bool:
        return self.value.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.value.requires_grad = bool(flag)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    inputs = []
    if a.requires_grad:
        inputs.append((a, lambda g: _unbroadcast(g, a.data.shape)))
    if b.requires_grad:
        inputs.append((b, lambda g: _unbroadcast(g, b.data.shape)))
    return Tensor(out, inputs)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    inputs = []
    if a.requires_grad:
        inputs.append((a, lambda g: _unbroadcast(g, a.data.shape)))
    if b.requires_grad:
        inputs.append((b, lambda g: _unbroadcast(-g, b.data.shape)))
    return Tensor(out, inputs)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    inputs = []
    if a.requires_grad:
        inputs.append((a, lambda g: _unbroadcast(g * b.data, a.data.shape)))
    if b.requires_grad:
        inputs.append((b, lambda g: _unbroadcast(g * a.data, b.data.shape)))
    return Tensor(out, inputs)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    inputs = []
    if a.requires_grad:
        inputs.append((a, lambda g: g @ b.data.T))
    if b.requires_grad:
        inputs.append((b, lambda g: a.data.T @ g))
    return Tensor(out, inputs)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    inputs = [(a, lambda g: g.T)] if a.requires_grad else []
    return Tensor(a.data.T, inputs)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)
    old = a.data.shape
    inputs = [(a, lambda g: g.reshape(old))] if a.requires_grad else []
    return Tensor(out, inputs)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    inputs = []
    offset = 0
    for p in parts:
        extent = p.data.shape[axis]
        if p.requires_grad:
            lo, hi = offset, offset + extent

            def vjp(g, lo=lo, hi=hi):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                return g[tuple(index)]

            inputs.append((p, vjp))
        offset += extent
    return Tensor(out, inputs)


def gather_rows(a, index) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds (duplicates allowed)."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got {a.shape}")
    idx = np.asarray(index, dtype=np.intp)
    out = a.data[idx]
    inputs = []
    if a.requires_grad:

        def vjp(g):
            z = np.zeros_like(a.data)
            np.add.at(z, idx, g)
            return z

        inputs.append((a, vjp))
    return Tensor(out, inputs)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got {a.shape}")
    out = a.data[:, start:stop]
    inputs = []
    if a.requires_grad:

        def vjp(g):
            z = np.zeros_like(a.data)
            z[:, start:stop] = g
            return z

        inputs.append((a, vjp))
    return Tensor(out, inputs)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply affine."""
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = y * gamma.data + beta.data
    inputs = []
    if x.requires_grad:

        def vjp_x(g):
            gy = g * gamma.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * y).mean(axis=-1, keepdims=True)
            return inv * (gy - m1 - y * m2)

        inputs.append((x, vjp_x))
    if gamma.requires_grad:
        inputs.append((gamma, lambda g: (g * y).reshape(-1, d).sum(axis=0)))
    if beta.requires_grad:
        inputs.append((beta, lambda g: g.reshape(-1, d).sum(axis=0)))
    return Tensor(out, inputs)


def softmax_lastdim(x) -> Tensor:
    """Row-stable softmax along the last axis (max-subtraction)."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    inputs = []
    if x.requires_grad:

        def vjp(g):
            inner = (g * y).sum(axis=-1, keepdims=True)
            return y * (g - inner)

        inputs.append((x, vjp))
    return Tensor(y, inputs)


def gelu(x) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    x = as_tensor(x)
    v = x.data
    v2 = v * v
    t = np.tanh(_GELU_C * (v + _GELU_A * v2 * v))
    out = 0.5 * v * (1.0 + t)
    inputs = []
    if x.requires_grad:

        def vjp(g):
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * v2)
            return g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)

        inputs.append((x, vjp))
    return Tensor(out, inputs)


def multi_head_attention(q, k, v, heads: int, segments: int = 1) -> Tensor:
    """Fused softmax attention over ``heads`` column groups of (S*T, dim)
    projections: rows split into ``segments`` equal blocks that attend only
    within themselves; per head, softmax(q_h k_h^T / sqrt(head_dim)) v_h.
    One tape node; the backward pass is hand-derived."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    rows, dim = q.data.shape
    if k.data.shape != (rows, dim) or v.data.shape != (rows, dim):
        raise ShapeError(f"attention operands disagree: {q.shape}, {k.shape}, {v.shape}")
    if dim % heads:
        raise ShapeError(f"dim {dim} not divisible by {heads} heads")
    if rows % segments:
        raise ShapeError(f"{rows} rows not divisible by {segments} segments")
    t = rows // segments
    hd = dim // heads
    scale = 1.0 / math.sqrt(hd)

    def split(x):  # (S*T, dim) -> (S, H, T, hd)
        return np.ascontiguousarray(x.reshape(segments, t, heads, hd).transpose(0, 2, 1, 3))

    def merge(x):  # (S, H, T, hd) -> (S*T, dim)
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(rows, dim)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ kh.swapaxes(-1, -2)) * scale  # (S, H, T, T)
    scores -= scores.max(axis=3, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=3, keepdims=True)
    out = merge(w @ vh)
    inputs = []
    if q.requires_grad or k.requires_grad or v.requires_grad:
        cache: dict[int, np.ndarray] = {}

        def grad_scores(g):
            key = id(g)
            if key not in cache:
                gw = split(g) @ vh.swapaxes(-1, -2)
                cache[key] = w * (gw - (w * gw).sum(axis=3, keepdims=True))
            return cache[key]

        if v.requires_grad:
            inputs.append((v, lambda g: merge(w.swapaxes(-1, -2) @ split(g))))
        if q.requires_grad:
            inputs.append((q, lambda g: merge((scale * grad_scores(g)) @ kh)))
        if k.requires_grad:
            inputs.append((k, lambda g: merge((scale * grad_scores(g)).swapaxes(-1, -2) @ qh)))
    return Tensor(out, inputs)


def tile_rows(x, reps: int) -> Tensor:
    """Stack ``reps`` copies of a 2-D tensor along axis 0; backward sums them."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"tile_rows expects a 2-D tensor, got {x.shape}")
    r, c = x.data.shape
    out = np.tile(x.data, (reps, 1))
    inputs = []
    if x.requires_grad:
        inputs.append((x, lambda g: g.reshape(reps, r, c).sum(axis=0)))
    return Tensor(out, inputs)


def segment_mean_rows(x, segments: int) -> Tensor:
    """Mean over each of ``segments`` equal row blocks: (S*T, d) -> (S, d)."""
    x = as_tensor(x)
    rows, d = x.data.shape
    if rows % segments:
        raise ShapeError(f"{rows} rows not divisible by {segments} segments")
    t = rows // segments
    out = x.data.reshape(segments, t, d).mean(axis=1)
    inputs = []
    if x.requires_grad:
        inputs.append((x, lambda g: np.repeat(g / t, t, axis=0)))
    return Tensor(out, inputs)


def sum_all(x) -> Tensor:
    """Sum of all elements, returned as a shape-(1,) tensor."""
    x = as_tensor(x)
    out = np.array([x.data.sum()])
    inputs = []
    if x.requires_grad:
        inputs.append((x, lambda g: np.full(x.data.shape, g.reshape(-1)[0])))
    return Tensor(out, inputs)


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    return mul(sum_all(x), 1.0 / x.data.size)


def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable tensor that requires grad.

    Traverses the recorded graph in strictly decreasing creation order, so
    every accumulation happens in the same order on every run.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    # Collect the reachable differentiable subgraph.
    seen: set[int] = {id(loss)}
    nodes: list[Tensor] = [loss]
    stack = [loss]
    while stack:
        node = stack.pop()
        for parent, _ in node._inputs:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                nodes.append(parent)
                stack.append(parent)
    nodes.sort(key=lambda t: t._tape_id, reverse=True)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for node in nodes:
        g = node.grad
        if g is None or not node._inputs:
            continue
        for parent, vjp in node._inputs:
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += vjp(g)


def check_finite(x: np.ndarray | Tensor, what: str = "value") -> None:
    arr = x.data if isinstance(x, Tensor) else x
    if not np.isfinite(arr).all():
        from .errors import NumericError

        raise NumericError(f"non-finite {what} encountered")
