"""End-to-end assembly: region encoder + positional + context encoder + head.

The model owns one flat parameter store so training, checkpointing and the
CLI all see the same names. Two forward paths share every layer: the batched
path stacks all regions of a batch for throughput (training), while the
streaming path in ``scheduler`` runs region-at-a-time under a memory budget;
both produce the same sequence up to floating-point associativity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from . import tensorfile
from .errors import ConfigError, ContractViolation
from .nn import Linear
from .positional import LearnedPositional2D, positional_embedding
from .region import RegionEncoder, RegionEncoderConfig
from .sketch import SketchConfig, SketchContextEncoder
from .ssm import SSMContextEncoder
from .tensor import Tensor
from .tokenizer import region_coords
from .weights import ParamStore
from .xl import XLConfig, XLContextEncoder

_DEFAULT_CONTEXT_DEPTH = {"xl": 2, "attn": 2, "ssm": 4, "identity": 0}


@dataclass
class PipelineConfig:
    input_size: int = 64
    region_size: int = 32
    in_channels: int = 1
    patch_size: int = 4
    dims: tuple = (16, 32)
    depths: tuple = (1, 1)
    heads: tuple = (2, 4)
    window: int = 4
    mlp_ratio: int = 2
    context: str = "xl"               # xl | attn | ssm | identity
    context_depth: int | None = None
    context_heads: int = 4
    chunk_capacity: int = 4           # regions per chunk (xl)
    memory_len: int | None = None     # tokens; None = one chunk
    context_length: int | None = None # whole-sequence threshold in tokens (xl)
    attn_mode: str = "exact"          # exact | approx
    num_hashes: int = 4
    bucket_size: int = 56
    sample_count: int = 8
    hash_seed: int = 0
    ssm_state: int = 8
    ssm_skip: bool = True
    ssm_scan: str = "parallel"
    pos_mode: str = "sin"             # sin | learned
    mask_pool: bool = False
    n_classes: int = 2

    def validate(self):
        if self.input_size < self.region_size or self.region_size < 1:
            raise ConfigError(
                f"need input_size >= region_size >= 1, got "
                f"{self.input_size}/{self.region_size}")
        if self.context not in _DEFAULT_CONTEXT_DEPTH:
            raise ConfigError(f"unknown context encoder {self.context!r}")
        self.region_cfg().validate(self.region_size)
        d = self.dims[-1]
        if self.context in ("xl", "attn") and d % self.context_heads:
            raise ConfigError(
                f"context width {d} not divisible by {self.context_heads} heads")
        if self.pos_mode == "sin" and d % 4:
            raise ConfigError(f"sinusoidal positions need width % 4 == 0, got {d}")

    def region_cfg(self) -> RegionEncoderConfig:
        return RegionEncoderConfig(
            patch_size=self.patch_size, dims=tuple(self.dims),
            depths=tuple(self.depths), heads=tuple(self.heads),
            window=self.window, mlp_ratio=self.mlp_ratio,
            in_channels=self.in_channels)

    def sketch_cfg(self) -> SketchConfig:
        return SketchConfig(num_hashes=self.num_hashes,
                            bucket_size=self.bucket_size,
                            sample_count=self.sample_count,
                            hash_seed=self.hash_seed)

    @property
    def d_model(self) -> int:
        return self.dims[-1]

    def tokens_side(self) -> int:
        return self.region_cfg().out_side(self.region_size)

    @property
    def tokens_per_region(self) -> int:
        side = self.tokens_side()
        return side * side

    def grid_shape(self, image_h: int | None = None, image_w: int | None = None):
        h = self.input_size if image_h is None else image_h
        w = self.input_size if image_w is None else image_w
        return -(-h // self.region_size), -(-w // self.region_size)


_TUPLE_FIELDS = {"dims", "depths", "heads"}
_OPTIONAL_INT_FIELDS = {"context_depth", "memory_len", "context_length"}
_BOOL_FIELDS = {"ssm_skip", "mask_pool"}


def parse_config_text(text: str) -> PipelineConfig:
    """key=value lines (# comments) -> PipelineConfig."""
    known = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"malformed config line: {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ContractViolation(f"unknown config key {key!r}")
        if key in _TUPLE_FIELDS:
            values[key] = tuple(int(v) for v in val.split(",") if v.strip())
        elif key in _BOOL_FIELDS:
            values[key] = val.lower() in ("1", "true", "yes", "on")
        elif key in _OPTIONAL_INT_FIELDS:
            values[key] = None if val.lower() == "none" else int(val)
        else:
            default = known[key].default
            values[key] = type(default)(val) if not isinstance(default, str) else val
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    return parse_config_text(Path(path).read_text())


class IdentityContext:
    """Ablation: region features pass through untouched."""

    def forward(self, x: Tensor, seed: int | None = None) -> Tensor:
        return x


class Model:
    """The full two-stage pipeline with a flat parameter store."""

    def __init__(self, config: PipelineConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        store = ParamStore()
        self.store = store
        self.region_encoder = RegionEncoder(
            config.region_size, config.region_cfg(), store, rng)
        d = config.d_model
        depth = (config.context_depth if config.context_depth is not None
                 else _DEFAULT_CONTEXT_DEPTH[config.context])
        self.xl_cfg = None
        if config.context == "xl":
            self.xl_cfg = XLConfig(
                depth=depth, width=d, heads=config.context_heads,
                chunk_capacity=config.chunk_capacity,
                memory_len=config.memory_len,
                attention=config.attn_mode, sketch=config.sketch_cfg(),
                mlp_ratio=config.mlp_ratio)
            self.context = XLContextEncoder(store, rng, self.xl_cfg)
        elif config.context == "attn":
            self.context = SketchContextEncoder(
                store, rng, d, depth=depth, heads=config.context_heads,
                mlp_ratio=config.mlp_ratio, mode=config.attn_mode,
                config=config.sketch_cfg())
        elif config.context == "ssm":
            self.context = SSMContextEncoder(
                store, rng, d, depth=depth, state=config.ssm_state,
                skip=config.ssm_skip, scan=config.ssm_scan)
        else:
            self.context = IdentityContext()
        self.learned_pos = None
        if config.pos_mode == "learned":
            rows, cols = config.grid_shape()
            side = config.tokens_side()
            self.learned_pos = LearnedPositional2D(
                store, rng, d, max_rows=rows, max_cols=cols,
                tokens_h=side, tokens_w=side)
        self.head = Linear(store.scope("head"), "fc", rng, d, config.n_classes)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.as_dict()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    # ------------------------------------------------------------------
    def positional(self, coords: np.ndarray) -> Tensor:
        side = self.config.tokens_side()
        return positional_embedding(
            coords, side, side, self.config.d_model,
            mode=self.config.pos_mode, learned=self.learned_pos)

    def chunk_token_len(self) -> int:
        return self.config.chunk_capacity * self.config.tokens_per_region

    def context_forward(self, x: Tensor, seed: int | None = None) -> Tensor:
        """Contextualize a (..., L, d) sequence, chunking when recurrent."""
        if self.xl_cfg is None:
            return self.context.forward(x, seed=seed)
        length = x.shape[-2]
        step = self.chunk_token_len()
        if self.config.context_length is not None and length <= self.config.context_length:
            step = length
        axis = x.ndim - 2
        chunks = [T.narrow(x, axis, start, min(step, length - start))
                  for start in range(0, length, step)]
        outs = self.context.forward_chunks(chunks, seed=seed)
        return T.concat(outs, axis=axis) if len(outs) > 1 else outs[0]

    # ------------------------------------------------------------------
    def region_tokens(self, images: Tensor):
        """Batched stage 1: (B, C, H, W) -> (B, L, d) region-major tokens.

        Requires the image extent to be an exact multiple of the region size
        (the streaming path handles ragged sizes via padding).
        """
        b, c, h, w = images.shape
        r = self.config.region_size
        if h % r or w % r:
            raise ContractViolation(
                f"batched path needs region-divisible images, got {h}x{w}")
        rows, cols = h // r, w // r
        x = T.reshape(images, (b, c, rows, r, cols, r))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))
        x = T.reshape(x, (b * rows * cols, c, r, r))
        fmap = self.region_encoder.forward(x)        # (B*R, th, tw, d)
        _, th, tw, d = fmap.shape
        return T.reshape(fmap, (b, rows * cols * th * tw, d)), (rows, cols, th, tw)

    def forward_tokens(self, images: Tensor, seed: int | None = None,
                       return_pre_context: bool = False):
        """Batched two-stage forward to contextualized tokens (B, L, d)."""
        tokens, (rows, cols, th, tw) = self.region_tokens(images)
        coords = region_coords(rows, cols, th, tw)
        tokens = T.add(tokens, self.positional(coords))
        ctx = self.context_forward(tokens, seed=seed)
        if return_pre_context:
            return ctx, tokens
        return ctx

    def pool(self, tokens: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Mean over the token axis; a boolean mask excludes padded tokens."""
        if mask is None:
            return T.mean(tokens, axis=-2)
        mask = np.asarray(mask, dtype=tokens.data.dtype)
        if mask.shape != (tokens.shape[-2],):
            raise ContractViolation(
                f"mask shape {mask.shape} != (tokens {tokens.shape[-2]},)")
        total = float(mask.sum())
        if total == 0:
            raise ContractViolation("pooling mask excludes every token")
        weights = np.repeat((mask / total)[:, None], tokens.shape[-1], axis=1)
        return T.reduce_sum(T.mul(tokens, T.tensor(weights)), axis=-2)

    def logits(self, images: Tensor, seed: int | None = None) -> Tensor:
        return self.head(self.pool(self.forward_tokens(images, seed=seed)))

    def loss(self, images: Tensor, labels: np.ndarray, seed: int | None = None) -> Tensor:
        return T.cross_entropy(self.logits(images, seed=seed), labels)

    # ------------------------------------------------------------------
    def save(self, directory):
        tensorfile.save_checkpoint(directory, self.params)

    def load(self, directory):
        self.store.load_values(tensorfile.load_checkpoint(directory))
