"""Dense tensors with reverse-mode automatic differentiation.

The tape is implicit: every tensor carries a monotonically increasing
construction id, and ``backward`` walks the ancestors of the seed tensor in
strictly decreasing id order, i.e. exact reverse construction order.
Gradients are summed into parents on fan-out and zeroed at the start of
every backward pass.

Broadcasting is deliberately restricted: two operands must either share a
shape, or one operand's shape must equal a trailing suffix of the other's
(leading-axis batch broadcast). Any other mismatch is a ContractViolation.
Use ``repeat_axis`` when an explicit outer-product expansion is needed.

Default dtype is float64 so derivative checks have clean tolerances;
float32 is an opt-in for throughput experiments.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from scipy import special as _special

from . import ledger as _ledger
from .errors import ContractViolation, InvalidNumerics

_ids = itertools.count()
_grad_enabled = True

_DTYPES = {"f64": np.float64, "f32": np.float32}


class Tensor:
    """A dense n-d array plus the bookkeeping for reverse-mode autodiff.

    Tensors are immutable after construction; the only sanctioned mutation
    is an explicit optimizer update of a parameter's buffer.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_tid", "__weakref__")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._tid = next(_ids)
        led = _ledger.active()
        if led is not None:
            led._register(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self, seed=None):
        """Run reverse-mode accumulation from this tensor.

        ``seed`` is the output cotangent; it defaults to ones (the usual
        scalar-loss case). Grads of every reachable node are zeroed first,
        so repeated backward calls do not accumulate across calls.
        """
        if not self.requires_grad:
            raise ContractViolation("backward() on a tensor that does not require grad")
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ContractViolation(
                    f"seed shape {seed.shape} != tensor shape {self.data.shape}")

        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append(p)
        nodes.sort(key=lambda t: t._tid, reverse=True)

        for n in nodes:
            n.grad = np.zeros_like(n.data)
        self.grad = self.grad + seed
        for n in nodes:
            if n._backward is not None:
                n._backward(n.grad)

    # operator sugar; scalars are folded in as constants
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def tensor(values, dtype="f64", requires_grad=False) -> Tensor:
    """Build a leaf tensor from array-like values."""
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ContractViolation(f"unknown dtype {dtype!r}; expected 'f64' or 'f32'")
        dtype = _DTYPES[dtype]
    data = np.ascontiguousarray(values, dtype=dtype)
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, dtype="f64", requires_grad=False) -> Tensor:
    return tensor(np.zeros(shape), dtype=dtype, requires_grad=requires_grad)


@contextmanager
def no_grad():
    """Disable graph recording; intermediate results become plain buffers."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _make(data, parents, backward):
    """Wrap an op result, recording parents only when a grad path exists."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents),
                      _backward=backward)
    return Tensor(data)


def _check_same_dtype(a, b):
    if a.data.dtype != b.data.dtype:
        raise ContractViolation(
            f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")


def _broadcast_ok(sa, sb):
    """True when the smaller shape is a trailing suffix of the larger."""
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    return big[len(big) - len(small):] == small


def _check_binary(a, b, op):
    _check_same_dtype(a, b)
    if a.shape != b.shape and not _broadcast_ok(a.shape, b.shape):
        raise ContractViolation(
            f"{op}: shapes {a.shape} and {b.shape} are neither equal nor "
            "leading-axis broadcastable")


def _unbroadcast(g, shape):
    """Reduce a gradient back onto a suffix-broadcast parent shape."""
    if g.shape == shape:
        return g
    return g.sum(axis=tuple(range(g.ndim - len(shape))))


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)
    return _make(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.shape)
    return _make(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.shape)
    return _make(out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "div")
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
    return _make(out_data, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.grad -= g
    return _make(-x.data, (x,), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)

    def backward(g):
        if x.requires_grad:
            x.grad += g * c
    return _make(x.data * c, (x,), backward)


def shift(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)

    def backward(g):
        if x.requires_grad:
            x.grad += g
    return _make(x.data + c, (x,), backward)


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    """Select elementwise by a constant boolean mask (not differentiated)."""
    _check_same_dtype(a, b)
    cond = np.asarray(cond, dtype=bool)
    if cond.shape != a.shape or a.shape != b.shape:
        raise ContractViolation(
            f"where: mask {cond.shape}, a {a.shape}, b {b.shape} must all match")
    out_data = np.where(cond, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.grad += np.where(cond, g, 0.0)
        if b.requires_grad:
            b.grad += np.where(cond, 0.0, g)
    return _make(out_data, (a, b), backward)


# ---------------------------------------------------------------------------
# transcendental / activation primitives

def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward(g):
        if x.requires_grad:
            x.grad += g * out_data
    return _make(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.grad += g / x.data
    return _make(np.log(x.data), (x,), backward)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def backward(g):
        if x.requires_grad:
            x.grad += g * (0.5 / out_data)
    return _make(out_data, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    out_data = np.logaddexp(0.0, x.data)

    def backward(g):
        if x.requires_grad:
            x.grad += g * _special.expit(x.data)
    return _make(out_data, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    cdf = 0.5 * (1.0 + _special.erf(x.data * inv_sqrt2))
    out_data = x.data * cdf

    def backward(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
            x.grad += g * (cdf + x.data * pdf)
    return _make(out_data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis.

    Raises InvalidNumerics on NaN or infinite input (an infinite max would
    silently produce NaN rows otherwise).
    """
    m = np.max(x.data, axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        raise InvalidNumerics("softmax input contains NaN or infinite values")
    e = np.exp(x.data - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            x.grad += out_data * (g - inner)
    return _make(out_data, (x,), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ContractViolation(
            f"layernorm: gamma/beta must have shape ({d},), got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma.grad += (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            beta.grad += g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gg = g * gamma.data
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            x.grad += inv * (gg - m1 - xhat * m2)
    return _make(out_data, (x, gamma, beta), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax logits."""
    if logits.ndim != 2:
        raise ContractViolation(f"cross_entropy expects (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ContractViolation(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractViolation("label out of range")
    m = logits.data.max(axis=1, keepdims=True)
    if not np.isfinite(m).all():
        raise InvalidNumerics("cross_entropy input contains NaN or infinite values")
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    ll = z[np.arange(n), labels] - lse[:, 0]
    out_data = np.array(-ll.mean(), dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            p = np.exp(z - lse)
            p[np.arange(n), labels] -= 1.0
            logits.grad += (float(g) / n) * p
    return _make(out_data, (logits,), backward)


# ---------------------------------------------------------------------------
# shape / indexing ops

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x.grad += g.reshape(x.shape)
    return _make(out_data, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = np.ascontiguousarray(np.transpose(x.data, axes))

    def backward(g):
        if x.requires_grad:
            x.grad += np.transpose(g, inv)
    return _make(out_data, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractViolation("concat of zero tensors")
    first = tensors[0]
    axis = axis % first.ndim
    for t in tensors[1:]:
        _check_same_dtype(first, t)
        sa = list(first.shape)
        sb = list(t.shape)
        sa[axis] = sb[axis] = -1
        if sa != sb:
            raise ContractViolation(
                f"concat: incompatible shapes {first.shape} vs {t.shape} on axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.grad += g[tuple(idx)]
    return _make(out_data, tuple(tensors), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` elements along one axis."""
    axis = axis % x.ndim
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise ContractViolation(
            f"narrow: [{start}, {start + length}) out of bounds for axis {axis} "
            f"of shape {x.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = np.ascontiguousarray(x.data[idx])

    def backward(g):
        if x.requires_grad:
            x.grad[idx] += g
    return _make(out_data, (x,), backward)


def zero_pad(x: Tensor, axis: int, new_size: int) -> Tensor:
    """Extend one axis to ``new_size`` by appending zeros."""
    axis = axis % x.ndim
    old = x.shape[axis]
    if new_size < old:
        raise ContractViolation(f"zero_pad: new size {new_size} < current {old}")
    widths = [(0, 0)] * x.ndim
    widths[axis] = (0, new_size - old)
    out_data = np.pad(x.data, widths)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(0, old)
    idx = tuple(idx)

    def backward(g):
        if x.requires_grad:
            x.grad += g[idx]
    return _make(out_data, (x,), backward)


def repeat_axis(x: Tensor, axis: int, n: int) -> Tensor:
    """Tile a size-1 axis to length n (explicit outer-product expansion)."""
    axis = axis % x.ndim
    if x.shape[axis] != 1:
        raise ContractViolation(
            f"repeat_axis: axis {axis} of shape {x.shape} must have extent 1")
    out_data = np.repeat(x.data, n, axis=axis)

    def backward(g):
        if x.requires_grad:
            x.grad += g.sum(axis=axis, keepdims=True)
    return _make(out_data, (x,), backward)


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather rows of a (m, d) table, or per-slice rows of a (B, m, d) table.

    For a 2-d table the result has shape idx.shape + (d,). For a 3-d table
    idx must lead with the batch axis and the gather happens per slice.
    Backward scatter-adds into the table.
    """
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractViolation("take_rows: idx must be an integer array")
    if table.ndim == 2:
        m = table.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= m):
            raise ContractViolation("take_rows: index out of range")
        out_data = table.data[idx]

        def backward(g):
            if table.requires_grad:
                np.add.at(table.grad, idx.reshape(-1),
                          g.reshape(-1, table.shape[1]))
        return _make(out_data, (table,), backward)
    if table.ndim == 3:
        b, m, d = table.shape
        if idx.shape[0] != b:
            raise ContractViolation(
                f"take_rows: idx batch {idx.shape[0]} != table batch {b}")
        if idx.size and (idx.min() < 0 or idx.max() >= m):
            raise ContractViolation("take_rows: index out of range")
        flat_idx = idx.reshape(b, -1) + (np.arange(b) * m)[:, None]
        out_data = table.data.reshape(b * m, d)[flat_idx.reshape(-1)]
        out_data = out_data.reshape(idx.shape + (d,))

        def backward(g):
            if table.requires_grad:
                gt = table.grad.reshape(b * m, d)
                np.add.at(gt, flat_idx.reshape(-1), g.reshape(-1, d))
        return _make(out_data, (table,), backward)
    raise ContractViolation(f"take_rows: table must be 2-d or 3-d, got {table.ndim}-d")


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    if np.isscalar(out_data) or out_data.ndim == 0:
        out_data = np.asarray(out_data, dtype=x.data.dtype)

    def backward(g):
        if x.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            x.grad += np.broadcast_to(gg, x.shape)
    return _make(out_data, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        count = x.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (..., n, k) @ (k, m), or batched with equal leading dims."""
    _check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul: ranks {a.ndim} and {b.ndim} must be >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(
            f"matmul: inner dims {a.shape} @ {b.shape} do not agree")
    if b.ndim == 2:
        # fold leading dims into one GEMM; much faster than broadcast matmul
        k, m = b.shape
        lead = a.shape[:-1]
        out_data = (a.data.reshape(-1, k) @ b.data).reshape(lead + (m,))

        def backward(g):
            if a.requires_grad:
                a.grad += (g.reshape(-1, m) @ b.data.T).reshape(a.shape)
            if b.requires_grad:
                b.grad += a.data.reshape(-1, k).T @ g.reshape(-1, m)
        return _make(out_data, (a, b), backward)
    if a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2]:
        out_data = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                a.grad += g @ np.swapaxes(b.data, -1, -2)
            if b.requires_grad:
                b.grad += np.swapaxes(a.data, -1, -2) @ g
        return _make(out_data, (a, b), backward)
    raise ContractViolation(
        f"matmul: shapes {a.shape} @ {b.shape} need equal leading dims or a 2-d rhs")


# ---------------------------------------------------------------------------
# stop-gradient and the finite-difference harness

_SG_MODE = None      # None | "record" | "replay"
_SG_LOG: list = []
_SG_POS = 0


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; contributes exactly zero gradient backward."""
    global _SG_POS
    if _SG_MODE == "replay":
        data = _SG_LOG[_SG_POS]
        _SG_POS += 1
        return Tensor(data.copy())
    if _SG_MODE == "record":
        _SG_LOG.append(x.data.copy())
    return Tensor(x.data.copy())


@contextmanager
def _sg_mode(mode):
    global _SG_MODE, _SG_POS
    prev = _SG_MODE
    _SG_MODE = mode
    _SG_POS = 0
    try:
        yield
    finally:
        _SG_MODE = prev
        _SG_POS = 0


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    Stop-gradient outputs are recorded on the reference pass and replayed
    during the finite-difference evaluations, so only declared-differentiable
    paths are compared; ``f`` must therefore be deterministic and call
    stop_gradient in a fixed order.
    """
    if h <= 0:
        raise ContractViolation("grad_check: h must be positive")
    if not x.requires_grad:
        raise ContractViolation("grad_check: x must require grad")

    _SG_LOG.clear()
    with _sg_mode("record"):
        y = f(x)
    if not isinstance(y, Tensor) or y.size != 1:
        raise ContractViolation("grad_check: f must return a scalar tensor")
    if y.requires_grad:
        y.backward()
        g_ad = x.grad.reshape(-1).copy()
    else:
        g_ad = np.zeros(x.size, dtype=x.data.dtype)

    flat = x.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with _sg_mode("replay"), no_grad():
            yp = f(x).item()
        flat[i] = orig - h
        with _sg_mode("replay"), no_grad():
            ym = f(x).item()
        flat[i] = orig
        fd[i] = (yp - ym) / (2.0 * h)
    _SG_LOG.clear()

    rel = np.abs(g_ad - fd) / (np.abs(fd) + 1e-12)
    return float(rel.max())
