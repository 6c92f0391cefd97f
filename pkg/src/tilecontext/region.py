"""Stage 1: a hierarchical windowed-attention encoder applied per region.

Each region is patchified, embedded, and passed through stages of
non-overlapping window attention blocks separated by 2x2 patch merges, so
the output token grid is several times shorter than the patch sequence.
Windows are never shifted: one layer mixes tokens only inside its window,
and no information crosses region boundaries at all (cross-region mixing is
the context encoder's job). That makes the per-region forward exactly myopic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractViolation, InvalidNumerics
from .nn import LayerNorm, Linear, Mlp, merge_heads, split_heads
from .tensor import Tensor
from .weights import ParamStore


@dataclass
class RegionEncoderConfig:
    patch_size: int = 4
    dims: tuple = (32, 64, 128)
    depths: tuple = (2, 2, 2)
    heads: tuple = (2, 4, 8)
    window: int = 4
    mlp_ratio: int = 4
    in_channels: int = 1

    def validate(self, region_size: int) -> None:
        if not (len(self.dims) == len(self.depths) == len(self.heads)):
            raise ConfigError("dims, depths and heads must have equal length")
        if region_size % self.patch_size:
            raise ConfigError(
                f"patch size {self.patch_size} does not divide region {region_size}")
        side = region_size // self.patch_size
        for i, (d, h) in enumerate(zip(self.dims, self.heads)):
            if d % h:
                raise ConfigError(f"stage {i}: width {d} not divisible by {h} heads")
            if side % self.window:
                raise ConfigError(
                    f"stage {i}: window {self.window} does not divide grid side {side}")
            if i + 1 < len(self.dims):
                if side % 2:
                    raise ConfigError(f"stage {i}: odd grid side {side} cannot merge")
                side //= 2

    def out_side(self, region_size: int) -> int:
        return (region_size // self.patch_size) >> (len(self.dims) - 1)

    @property
    def out_dim(self) -> int:
        return self.dims[-1]


def window_attention(x: Tensor, window: int, heads: int,
                     wq: Linear, wk: Linear, wv: Linear, wo: Linear) -> Tensor:
    """Self-attention inside each non-overlapping window of a token grid.

    ``x`` is (b, h, w, d) or (h, w, d); token mixing is exactly
    block-diagonal over windows.
    """
    single = x.ndim == 3
    if single:
        x = T.reshape(x, (1,) + x.shape)
    b, h, w, d = x.shape
    if h % window or w % window:
        raise ConfigError(f"window {window} does not divide grid {h}x{w}")
    nh, nw = h // window, w // window
    t = window * window
    xw = T.reshape(x, (b, nh, window, nw, window, d))
    xw = T.transpose(xw, (0, 1, 3, 2, 4, 5))
    xw = T.reshape(xw, (b * nh * nw, t, d))

    q = split_heads(wq(xw), heads)
    k = split_heads(wk(xw), heads)
    v = split_heads(wv(xw), heads)
    dh = d // heads
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    ctx = T.matmul(T.softmax(scores, axis=-1), v)
    out = wo(merge_heads(ctx, heads))

    out = T.reshape(out, (b, nh, nw, window, window, d))
    out = T.transpose(out, (0, 1, 3, 2, 4, 5))
    out = T.reshape(out, (b, h, w, d))
    if single:
        out = T.reshape(out, (h, w, d))
    return out


class AttentionBlock:
    """Pre-norm window attention + MLP with residuals."""

    def __init__(self, store, name, rng, d, heads, window, mlp_ratio):
        self.norm1 = LayerNorm(store, f"{name}.norm1", d)
        self.wq = Linear(store, f"{name}.wq", rng, d, d)
        self.wk = Linear(store, f"{name}.wk", rng, d, d)
        self.wv = Linear(store, f"{name}.wv", rng, d, d)
        self.wo = Linear(store, f"{name}.wo", rng, d, d)
        self.norm2 = LayerNorm(store, f"{name}.norm2", d)
        self.mlp = Mlp(store, f"{name}.mlp", rng, d, mlp_ratio * d)
        self.heads = heads
        self.window = window

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, window_attention(self.norm1(x), self.window, self.heads,
                                      self.wq, self.wk, self.wv, self.wo))
        return T.add(x, self.mlp(self.norm2(x)))


class PatchMerge:
    """Concatenate each 2x2 token neighborhood and project 4d -> d_out."""

    def __init__(self, store, name, rng, d_in, d_out):
        self.norm = LayerNorm(store, f"{name}.norm", 4 * d_in)
        self.proj = Linear(store, f"{name}.proj", rng, 4 * d_in, d_out, bias=False)
        self.d_in = d_in

    def __call__(self, x: Tensor) -> Tensor:
        single = x.ndim == 3
        if single:
            x = T.reshape(x, (1,) + x.shape)
        b, h, w, d = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"patch_merge on odd grid {h}x{w}")
        x = T.reshape(x, (b, h // 2, 2, w // 2, 2, d))
        x = T.transpose(x, (0, 1, 3, 2, 4, 5))
        x = T.reshape(x, (b, h // 2, w // 2, 4 * d))
        out = self.proj(self.norm(x))
        if single:
            out = T.reshape(out, out.shape[1:])
        return out


class RegionEncoder:
    """Independent hierarchical encoder for fixed-size region tiles."""

    def __init__(self, region_size: int, cfg: RegionEncoderConfig,
                 store: ParamStore, rng):
        cfg.validate(region_size)
        self.cfg = cfg
        self.region_size = region_size
        p = cfg.patch_size
        self.grid_side = region_size // p
        scope = store.scope("region")
        self.embed = Linear(scope, "embed", rng,
                            cfg.in_channels * p * p, cfg.dims[0])
        self.embed_norm = LayerNorm(scope, "embed_norm", cfg.dims[0])
        self.stages = []
        self.merges = []
        for i, (d, depth, heads) in enumerate(zip(cfg.dims, cfg.depths, cfg.heads)):
            blocks = [
                AttentionBlock(scope, f"stage{i}.block{j}", rng, d, heads,
                               cfg.window, cfg.mlp_ratio)
                for j in range(depth)
            ]
            self.stages.append(blocks)
            if i + 1 < len(cfg.dims):
                self.merges.append(
                    PatchMerge(scope, f"merge{i}", rng, d, cfg.dims[i + 1]))
        self.final_norm = LayerNorm(scope, "final_norm", cfg.dims[-1])

    def forward(self, tiles: Tensor) -> Tensor:
        """(b, c, H, W) region tiles -> (b, th, tw, d) feature maps."""
        b, c, hh, ww = tiles.shape
        if (hh, ww) != (self.region_size, self.region_size):
            raise ContractViolation(
                f"tiles must be exactly {self.region_size}^2, got {hh}x{ww}")
        p = self.cfg.patch_size
        g = self.grid_side
        x = T.reshape(tiles, (b, c, g, p, g, p))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))
        x = T.reshape(x, (b, g, g, c * p * p))
        x = self.embed_norm(self.embed(x))
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                x = blk(x)
            if i < len(self.merges):
                x = self.merges[i](x)
        return self.final_norm(x)

    def encode_region(self, tile: Tensor) -> Tensor:
        """(c, H, W) tile -> (th, tw, d); rejects non-finite pixels."""
        if not np.isfinite(tile.data).all():
            raise InvalidNumerics("region tile contains NaN or infinite pixels")
        out = self.forward(T.reshape(tile, (1,) + tile.shape))
        return T.reshape(out, out.shape[1:])
