"""Near-linear attention: LSH-located large entries plus random sampling.

Per query, the large attention entries are located with signed-random-
projection hashing (queries and keys sharing every hash bit form a bucket);
a shared random subset of keys is added on top, reweighted by inverse
inclusion probability so the sampled mass is unbiased. Attention is then
normalized over the selected entries only, at O(n * (bucket + samples) * d)
cost.

Hash projections are derived from ``config.hash_seed``, while the caller
seed drives only the sampled subset, so distinct seeds vary nothing but the
sampling. The exact softmax oracle lives in ``nn.exact_attention`` and is
re-exported here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation
from .nn import LayerNorm, Linear, Mlp, exact_attention, merge_heads, split_heads
from .tensor import Tensor

__all__ = [
    "SketchConfig", "AttentionSketch", "exact_attention", "lsh_bucket",
    "build_sketch", "approx_attention", "SketchContextEncoder",
]


@dataclass
class SketchConfig:
    num_hashes: int = 4
    bucket_size: int = 56
    sample_count: int = 8
    hash_seed: int = 0

    def validate(self):
        if self.bucket_size < 1:
            raise ContractViolation("bucket_size must be >= 1")
        if self.sample_count < 0:
            raise ContractViolation("sample_count must be >= 0")
        if self.num_hashes < 0:
            raise ContractViolation("num_hashes must be >= 0")


@dataclass
class AttentionSketch:
    """Per-query selected key indices and their importance weights.

    ``idx`` is (..., n, s); ``weights`` matches it, with 1.0 for bucket
    members, m/samples for sampled keys, and 0.0 for padding or for sampled
    keys already covered by the bucket (bucket priority on collision).
    """
    idx: np.ndarray
    weights: np.ndarray

    @property
    def selected_count(self) -> int:
        return int((self.weights > 0).sum())


def _hash_codes(x: np.ndarray, projections: np.ndarray) -> np.ndarray:
    """Signed-random-projection codes; shape x[..., :-1] of ints."""
    if projections.shape[1] == 0:
        return np.zeros(x.shape[:-1], dtype=np.int64)
    bits = (x @ projections) > 0
    powers = 1 << np.arange(projections.shape[1], dtype=np.int64)
    return bits @ powers


def lsh_bucket(q: np.ndarray, k: np.ndarray, config: SketchConfig,
               seed: int) -> list[np.ndarray]:
    """Candidate key indices per query: keys sharing all hash bits.

    2-d inputs only; returns one ascending index array per query (possibly
    empty). Deterministic given the seed.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ContractViolation(f"lsh_bucket: bad shapes {q.shape}, {k.shape}")
    rng = np.random.default_rng(seed)
    projections = rng.normal(size=(q.shape[1], config.num_hashes))
    qc = _hash_codes(q, projections)
    kc = _hash_codes(k, projections)
    return [np.flatnonzero(kc == code) for code in qc]


def _bucket_arrays(q: np.ndarray, k: np.ndarray, config: SketchConfig):
    """Vectorized bucket candidates: (n, bucket_size) idx + validity mask.

    Keys are sorted by hash code and each query takes the fixed-size block
    of sorted keys centered on its own code range. The block is a superset
    of the equal-code bucket whenever that bucket fits in bucket_size, and
    keeps the per-query candidate count constant as the key count grows.
    """
    rng = np.random.default_rng(config.hash_seed)
    projections = rng.normal(size=(q.shape[1], config.num_hashes))
    qc = _hash_codes(q, projections)
    kc = _hash_codes(k, projections)
    order = np.argsort(kc, kind="stable")
    sorted_codes = kc[order]
    lo = np.searchsorted(sorted_codes, qc, side="left")
    hi = np.searchsorted(sorted_codes, qc, side="right")
    n = q.shape[0]
    m = k.shape[0]
    bs = min(config.bucket_size, m)
    pad = np.maximum(bs - (hi - lo), 0) // 2
    start = np.clip(lo - pad, 0, m - bs)
    offsets = start[:, None] + np.arange(bs)[None, :]
    valid = np.ones((n, bs), dtype=bool)
    idx = order[offsets]
    return idx, valid


def build_sketch(q: np.ndarray, k: np.ndarray, config: SketchConfig,
                 seed: int) -> AttentionSketch:
    """Union of LSH bucket members and one shared sampled key subset."""
    config.validate()
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    single = q.ndim == 2
    if single:
        q = q[None]
        k = k[None]
    if q.ndim != 3 or k.ndim != 3 or q.shape[0] != k.shape[0]:
        raise ContractViolation(f"build_sketch: bad shapes {q.shape}, {k.shape}")
    b, n, _ = q.shape
    m = k.shape[1]
    rng = np.random.default_rng(seed)
    s = min(config.sample_count, m)
    idx_parts, w_parts = [], []
    for i in range(b):
        bidx, bvalid = _bucket_arrays(q[i], k[i], config)
        bw = bvalid.astype(np.float64)
        if s > 0:
            sampled = np.sort(rng.choice(m, size=s, replace=False))
            dup = (bidx[:, :, None] == sampled[None, None, :]) & bvalid[:, :, None]
            sw = np.where(dup.any(axis=1), 0.0, m / s)
            sidx = np.broadcast_to(sampled, (n, s))
            idx_parts.append(np.concatenate([bidx, sidx], axis=1))
            w_parts.append(np.concatenate([bw, sw], axis=1))
        else:
            idx_parts.append(bidx)
            w_parts.append(bw)
    idx = np.stack(idx_parts)
    weights = np.stack(w_parts)
    if single:
        idx, weights = idx[0], weights[0]
    return AttentionSketch(idx=idx, weights=weights)


def approx_attention(q: Tensor, k: Tensor, v: Tensor, config: SketchConfig,
                     seed: int, sketch_out: list | None = None) -> Tensor:
    """Attention restricted to the sketch, normalized over selected entries.

    Accepts (n, d) or (b, n, d) operands. Queries whose sketch is entirely
    empty (possible only with sample_count = 0) fall back to uniform
    attention over row 0 padding weights; with sampling enabled every query
    has at least the sampled keys. Gradients flow through the gathered
    entries; selection itself is data (not differentiated).
    """
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise ContractViolation(
            f"approx_attention: shapes {q.shape}, {k.shape}, {v.shape}")
    single = q.ndim == 2
    if single:
        q = T.reshape(q, (1,) + q.shape)
        k = T.reshape(k, (1,) + k.shape)
        v = T.reshape(v, (1,) + v.shape)
    b, n, d = q.shape
    m = k.shape[1]
    sketch = build_sketch(q.data, k.data, config, seed)
    if sketch_out is not None:
        sketch_out.append(sketch)
    idx, w = sketch.idx, sketch.weights
    s = idx.shape[-1]

    k_sel = T.take_rows(k, idx)                       # (b, n, s, d)
    v_sel = T.take_rows(v, idx)
    qq = T.reshape(q, (b * n, 1, d))
    kk = T.transpose(T.reshape(k_sel, (b * n, s, d)), (0, 2, 1))
    scores = T.scale(T.matmul(qq, kk), 1.0 / np.sqrt(d))
    log_w = np.where(w > 0, np.log(np.maximum(w, 1e-300)), -1e30)
    scores = T.add(scores, T.tensor(log_w.reshape(b * n, 1, s)))
    attn = T.softmax(scores, axis=-1)
    out = T.matmul(attn, T.reshape(v_sel, (b * n, s, d)))
    out = T.reshape(out, (b, n, d))
    if single:
        out = T.reshape(out, (n, d))
    return out


class SketchBlock:
    """Pre-norm transformer block whose mixing is exact or sketched attention."""

    def __init__(self, store, name, rng, d, heads, mlp_ratio, mode, config):
        self.norm1 = LayerNorm(store, f"{name}.norm1", d)
        self.wq = Linear(store, f"{name}.wq", rng, d, d)
        self.wk = Linear(store, f"{name}.wk", rng, d, d)
        self.wv = Linear(store, f"{name}.wv", rng, d, d)
        self.wo = Linear(store, f"{name}.wo", rng, d, d)
        self.norm2 = LayerNorm(store, f"{name}.norm2", d)
        self.mlp = Mlp(store, f"{name}.mlp", rng, d, mlp_ratio * d)
        self.heads = heads
        self.mode = mode
        self.config = config

    def __call__(self, x: Tensor, seed: int) -> Tensor:
        single = x.ndim == 2
        xn = self.norm1(x)
        if single:
            xn3 = T.reshape(xn, (1,) + xn.shape)
        else:
            xn3 = xn
        q = split_heads(self.wq(xn3), self.heads)
        k = split_heads(self.wk(xn3), self.heads)
        v = split_heads(self.wv(xn3), self.heads)
        if self.mode == "exact":
            ctx = exact_attention(q, k, v)
        else:
            ctx = approx_attention(q, k, v, self.config, seed)
        ctx = self.wo(merge_heads(ctx, self.heads))
        if single:
            ctx = T.reshape(ctx, ctx.shape[1:])
        x = T.add(x, ctx)
        return T.add(x, self.mlp(self.norm2(x)))


class SketchContextEncoder:
    """Stage 2 option: full-sequence context with near-linear attention."""

    def __init__(self, store, rng, d, depth=2, heads=4, mlp_ratio=4,
                 mode="approx", config: SketchConfig | None = None, seed=0):
        self.config = config or SketchConfig()
        scope = store.scope("context")
        self.blocks = [
            SketchBlock(scope, f"block{i}", rng, d, heads, mlp_ratio, mode,
                        self.config)
            for i in range(depth)
        ]
        self.seed = seed

    def forward(self, x: Tensor, seed: int | None = None) -> Tensor:
        base = self.seed if seed is None else seed
        for i, blk in enumerate(self.blocks):
            x = blk(x, seed=base + 7919 * i)
        return x
