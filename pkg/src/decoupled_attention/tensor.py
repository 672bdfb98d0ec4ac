"""Small dense tensor type with reverse-mode differentiation.

Only the handful of operations the attention model needs are provided.
Arrays are float64 and laid out as (height, width, channels) for spatial
maps. Every op returns a new :class:`Tensor` that remembers its parents and
a closure that pushes the output gradient back to them.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DegenerateNormalizationError, DimensionError

MAX_RANK = 4


class Tensor:
    """A float64 array plus an optional gradient buffer and tape links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds {MAX_RANK}")
        if any(n == 0 for n in arr.shape):
            raise DimensionError(f"zero extent in shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every node's ``grad``.

        ``self`` must be a scalar. Nodes are visited once each, in reverse
        topological order.
        """
        if self.data.size != 1:
            raise ContractError("backward() needs a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (), op=op)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def conv1x1(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel linear map: out[i,j,c] = sum_d x[i,j,d] * weights[d,c] + bias[c]."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.data.ndim != 3 or weights.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(
            f"conv1x1 expects (H,W,D), (D,C), (C,); got {x.shape}, {weights.shape}, {bias.shape}"
        )
    if weights.shape[0] != x.shape[2] or bias.shape[0] != weights.shape[1]:
        raise DimensionError(
            f"conv1x1 extent mismatch: x {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    out = _result(x.data @ weights.data + bias.data, (x, weights, bias), "conv1x1")

    def backward(g):
        _accum(x, g @ weights.data.T)
        if weights.requires_grad:
            weights.grad += np.tensordot(x.data, g, axes=([0, 1], [0, 1]))
        _accum(bias, g.sum(axis=(0, 1)))

    out._backward = backward
    return out


def _log1p_exp(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus_eps(x: Tensor, eps: float) -> Tensor:
    """log(1 + exp(x)) + eps, stable for large |x|."""
    if eps < 0:
        raise ContractError(f"eps must be >= 0, got {eps}")
    x = as_tensor(x)
    out = _result(_log1p_exp(x.data) + eps, (x,), "softplus_eps")

    def backward(g):
        _accum(x, g * sigmoid(x.data))

    out._backward = backward
    return out


def spatial_normalize(z: Tensor) -> Tensor:
    """Divide every channel of an (H,W,C) map by its spatial sum."""
    z = as_tensor(z)
    if z.data.ndim != 3:
        raise DimensionError(f"spatial_normalize expects (H,W,C), got {z.shape}")
    sums = z.data.sum(axis=(0, 1))
    if np.any(sums <= 0):
        bad = np.flatnonzero(sums <= 0).tolist()
        raise DegenerateNormalizationError(f"nonpositive spatial sum in channels {bad}")
    a = z.data / sums
    out = _result(a, (z,), "spatial_normalize")

    def backward(g):
        # quotient rule: d a_k / d z_m = (delta_km - a_k) / s
        _accum(z, (g - (g * a).sum(axis=(0, 1))) / sums)

    out._backward = backward
    return out


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity when not training or when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a generator")
    gate = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return gate_mul(x, gate)


def gate_mul(x: Tensor, gate: np.ndarray) -> Tensor:
    """Multiply by a constant array of the same shape (a frozen dropout mask)."""
    x = as_tensor(x)
    gate = np.asarray(gate, dtype=np.float64)
    if gate.shape != x.shape:
        raise DimensionError(f"gate shape {gate.shape} != tensor shape {x.shape}")
    out = _result(x.data * gate, (x,), "dropout")

    def backward(g):
        _accum(x, g * gate)

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch {a.shape} vs {b.shape}")
    out = _result(a.data * b.data, (a, b), "mul")

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    out._backward = backward
    return out


def spatial_sum(x: Tensor) -> Tensor:
    """(H,W,C) -> (C,) sum over both spatial axes."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"spatial_sum expects (H,W,C), got {x.shape}")
    out = _result(x.data.sum(axis=(0, 1)), (x,), "spatial_sum")

    def backward(g):
        _accum(x, np.broadcast_to(g, x.shape))

    out._backward = backward
    return out


def spatial_avg_pool(x: Tensor) -> Tensor:
    """(H,W,C) -> (C,) mean over both spatial axes."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"spatial_avg_pool expects (H,W,C), got {x.shape}")
    n = x.shape[0] * x.shape[1]
    out = _result(x.data.sum(axis=(0, 1)) / n, (x,), "spatial_avg_pool")

    def backward(g):
        _accum(x, np.broadcast_to(g / n, x.shape))

    out._backward = backward
    return out


def attend_pool(x: Tensor, a: Tensor) -> Tensor:
    """Attention-weighted spatial sum: out[d] = sum_ij x[i,j,d] * a[i,j,0]."""
    x, a = as_tensor(x), as_tensor(a)
    if x.data.ndim != 3 or a.data.ndim != 3 or a.shape[2] != 1 or a.shape[:2] != x.shape[:2]:
        raise DimensionError(f"attend_pool expects (H,W,D) and (H,W,1); got {x.shape}, {a.shape}")
    out = _result((x.data * a.data).sum(axis=(0, 1)), (x, a), "attend_pool")

    def backward(g):
        _accum(x, a.data * g)
        _accum(a, (x.data * g).sum(axis=2, keepdims=True))

    out._backward = backward
    return out


def dense(vec: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """(D,) @ (D,C) + (C,)."""
    vec, weights, bias = as_tensor(vec), as_tensor(weights), as_tensor(bias)
    if vec.data.ndim != 1 or weights.data.ndim != 2 or weights.shape[0] != vec.shape[0] or bias.shape != (
        weights.shape[1],
    ):
        raise DimensionError(f"dense extent mismatch: {vec.shape}, {weights.shape}, {bias.shape}")
    out = _result(vec.data @ weights.data + bias.data, (vec, weights, bias), "dense")

    def backward(g):
        _accum(vec, weights.data @ g)
        if weights.requires_grad:
            weights.grad += np.outer(vec.data, g)
        _accum(bias, g)

    out._backward = backward
    return out


def multilabel_bce(p: Tensor, y) -> Tensor:
    """Summed binary cross-entropy of sigmoid(p) against multi-hot y.

    Uses -log sigmoid(p) = softplus(-p) and -log(1 - sigmoid(p)) = softplus(p),
    so the loss is finite for any finite score.
    """
    p = as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if p.data.ndim != 1 or y.shape != p.shape:
        raise DimensionError(f"multilabel_bce expects matching (C,) vectors; got {p.shape}, {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("labels must be 0/1")
    loss = np.sum(y * _log1p_exp(-p.data) + (1.0 - y) * _log1p_exp(p.data))
    out = _result(np.asarray(loss), (p,), "multilabel_bce")

    def backward(g):
        _accum(p, g * (sigmoid(p.data) - y))

    out._backward = backward
    return out


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the graph from the current ``params`` values on each call
    and must return a scalar. The relative error per coordinate uses the
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-6 <= h <= 1e-3:
        raise ContractError(f"step {h} outside [1e-6, 1e-3]")
    for t in params:
        if not t.requires_grad:
            raise ContractError("grad_check params must require gradients")
        t.zero_grad()
    out = f()
    if out.data.size != 1:
        raise ContractError(f"objective must be scalar, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for t in params:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = f().item()
            flat[k] = orig - h
            fm = f().item()
            flat[k] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
