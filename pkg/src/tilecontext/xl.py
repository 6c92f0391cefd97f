"""Stage 2 option: recurrent-memory transformer over chunks of region tokens.

Each layer keeps a detached cache of its own input from the previous chunk.
Queries come from the current chunk only; keys and values are computed from
the cached states concatenated with the current ones, so attention rows have
length L_mem + L_cur while the output keeps length L_cur. Writing the cache
through a stop gradient means no loss can backpropagate across the chunk
boundary, yet information still flows forward -- and climbs one layer per
chunk, so an N-layer stack reaches N chunks back.

Inside a chunk, attention is bidirectional and either exact softmax or the
sketched near-linear approximation, selected by config.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, ContractViolation
from .nn import LayerNorm, Linear, Mlp, exact_attention, merge_heads, split_heads
from .sketch import SketchConfig, approx_attention
from .tensor import Tensor
from .weights import ParamStore


@dataclass
class XLConfig:
    depth: int = 2
    width: int = 128
    heads: int = 4
    chunk_capacity: int = 4           # regions per chunk
    memory_len: int | None = None     # tokens retained per layer; None = one chunk
    attention: str = "exact"          # "exact" | "approx"
    sketch: SketchConfig | None = None
    mlp_ratio: int = 4

    def validate(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.chunk_capacity < 1:
            raise ConfigError("chunk_capacity must be >= 1")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by {self.heads} heads")
        if self.attention not in ("exact", "approx"):
            raise ConfigError(f"unknown attention mode {self.attention!r}")


class XLLayer:
    """One recurrent-memory attention layer plus feed-forward."""

    def __init__(self, store: ParamStore, name: str, rng, cfg: XLConfig):
        d = cfg.width
        self.norm1 = LayerNorm(store, f"{name}.norm1", d)
        self.wq = Linear(store, f"{name}.wq", rng, d, d)
        self.wk = Linear(store, f"{name}.wk", rng, d, d)
        self.wv = Linear(store, f"{name}.wv", rng, d, d)
        self.wo = Linear(store, f"{name}.wo", rng, d, d)
        self.norm2 = LayerNorm(store, f"{name}.norm2", d)
        self.mlp = Mlp(store, f"{name}.mlp", rng, d, cfg.mlp_ratio * d)
        self.cfg = cfg

    def forward(self, current: Tensor, memory: Tensor | None,
                seed: int = 0, collect: dict | None = None):
        """(current, cached previous states) -> (output, new cache).

        The new cache is a detached copy of this layer's *input*, truncated
        to the configured memory length (most recent tokens kept).
        """
        cfg = self.cfg
        single = current.ndim == 2
        cur = T.reshape(current, (1,) + current.shape) if single else current
        if memory is not None:
            mem = T.reshape(memory, (1,) + memory.shape) if memory.ndim == 2 else memory
            if mem.shape[-1] != cur.shape[-1] or mem.shape[:-2] != cur.shape[:-2]:
                raise ContractViolation(
                    f"memory shape {memory.shape} incompatible with current {current.shape}")
            joined = T.concat([T.stop_gradient(mem), cur], axis=-2)
        else:
            joined = cur

        q_src = self.norm1(cur)
        kv_src = self.norm1(joined)
        q = split_heads(self.wq(q_src), cfg.heads)
        k = split_heads(self.wk(kv_src), cfg.heads)
        v = split_heads(self.wv(kv_src), cfg.heads)
        if collect is not None:
            collect["scores_shape"] = (q.shape[-2], k.shape[-2])
        if cfg.attention == "exact":
            ctx = exact_attention(q, k, v)
        else:
            ctx = approx_attention(q, k, v, cfg.sketch or SketchConfig(), seed)
        x = T.add(cur, self.wo(merge_heads(ctx, cfg.heads)))
        out = T.add(x, self.mlp(self.norm2(x)))

        mem_len = cfg.memory_len if cfg.memory_len is not None else cur.shape[-2]
        if mem_len > 0:
            keep = min(mem_len, cur.shape[-2])
            new_mem = T.stop_gradient(
                T.narrow(cur, cur.ndim - 2, cur.shape[-2] - keep, keep))
        else:
            new_mem = None
        if single:
            out = T.reshape(out, out.shape[1:])
            if new_mem is not None:
                new_mem = T.reshape(new_mem, new_mem.shape[1:])
        return out, new_mem


class XLContextEncoder:
    """Threads per-layer caches across a row-major sequence of chunks."""

    def __init__(self, store: ParamStore, rng, cfg: XLConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        scope = store.scope("context")
        self.layers = [XLLayer(scope, f"layer{i}", rng, cfg)
                       for i in range(cfg.depth)]
        self.seed = seed

    def fresh_memory(self) -> list:
        return [None] * len(self.layers)

    def forward_chunk(self, chunk: Tensor, memories: list,
                      chunk_index: int = 0, seed: int | None = None):
        """One chunk through all layers; memories are updated in place."""
        base = self.seed if seed is None else seed
        x = chunk
        for n, layer in enumerate(self.layers):
            x, memories[n] = layer.forward(
                x, memories[n], seed=base + 104729 * chunk_index + 7919 * n)
        return x

    def forward_chunks(self, chunks, indices=None, seed: int | None = None):
        """Process chunks in order, enforcing ascending chunk indices."""
        if indices is None:
            indices = list(range(len(chunks)))
        if list(indices) != sorted(indices) or len(set(indices)) != len(indices):
            raise ContractViolation(f"chunks arrived out of order: {indices}")
        memories = self.fresh_memory()
        outs = []
        for i, chunk in zip(indices, chunks):
            outs.append(self.forward_chunk(chunk, memories, chunk_index=i,
                                           seed=seed))
        return outs


def effective_context_length(region_px: int, layers: int, chunk: int) -> int:
    """Pixels of context reachable per query: (N + 1) * C * R^2.

    ``layers = 0`` encodes the no-recurrence baseline, giving C * R^2.
    """
    if region_px < 1 or chunk < 1 or layers < 0:
        raise ContractViolation(
            f"effective_context_length: bad arguments ({region_px}, {layers}, {chunk})")
    return (layers + 1) * chunk * region_px * region_px


def context_multiplier(alpha: int, beta: int, layers: int, chunk: int) -> int:
    """Total context multiplication factor alpha * beta * N * C."""
    if min(alpha, beta, layers, chunk) < 1:
        raise ContractViolation("context_multiplier: all arguments must be >= 1")
    return alpha * beta * layers * chunk
