"""Small neural building blocks shared by the region and context encoders."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractViolation
from .tensor import Tensor
from .weights import ParamStore, trunc_normal


class Linear:
    def __init__(self, store: ParamStore, name: str, rng, d_in: int, d_out: int,
                 bias: bool = True, std: float = 0.02):
        self.w = store.add(f"{name}.w", trunc_normal(rng, (d_in, d_out), std))
        self.b = store.add(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        if self.b is not None:
            y = T.add(y, self.b)
        return y


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int):
        self.gamma = store.add(f"{name}.g", np.ones(d))
        self.beta = store.add(f"{name}.b", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gamma, self.beta)


class Mlp:
    """Two-layer feed-forward with GELU."""

    def __init__(self, store: ParamStore, name: str, rng, d: int, hidden: int):
        self.fc1 = Linear(store, f"{name}.fc1", rng, d, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", rng, hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(n, t, d) -> (n * heads, t, d // heads)."""
    n, t, d = x.shape
    if d % heads:
        raise ContractViolation(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    x = T.reshape(x, (n, t, heads, dh))
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (n * heads, t, dh))


def merge_heads(x: Tensor, heads: int) -> Tensor:
    """Inverse of split_heads."""
    nh, t, dh = x.shape
    n = nh // heads
    x = T.reshape(x, (n, heads, t, dh))
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (n, t, heads * dh))


def exact_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v, computed stably.

    Accepts (n, d) single sequences or tensors with equal leading batch dims.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ContractViolation(
            f"attention dim mismatch: q {q.shape} vs k {k.shape}")
    if k.shape[:-1] != v.shape[:-1]:
        raise ContractViolation(
            f"key/value shapes disagree: {k.shape} vs {v.shape}")
    single = q.ndim == 2
    if single:
        q = T.reshape(q, (1,) + q.shape)
        k = T.reshape(k, (1,) + k.shape)
        v = T.reshape(v, (1,) + v.shape)
    d = q.shape[-1]
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = T.scale(T.matmul(q, T.transpose(k, axes)), 1.0 / np.sqrt(d))
    out = T.matmul(T.softmax(scores, axis=-1), v)
    if single:
        out = T.reshape(out, out.shape[1:])
    return out
