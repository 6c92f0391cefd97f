"""Effective receptive field probes.

The cotangent of one output feature -- one channel of one chosen token --
is set to one and everything else to zero; a backward pass then yields the
gradient magnitude per input pixel. Seeding a single scalar matters: every
token ends in a layernorm, so the gradient of a whole-token channel sum is
identically zero and would probe nothing. A myopic, context-free model has
mass only inside the probed token's region, while a contextualized model
reaches every region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scheduler, tensor as T
from .errors import ContractViolation
from .pnm import write_pgm


@dataclass
class ERFMap:
    """Per-pixel normalized gradient magnitude for one probed output feature."""
    grid: np.ndarray          # (h, w) in [0, 1]
    probe: tuple              # global (token_row, token_col, channel)
    probe_stage: str          # "context" | "region"

    def save_pgm(self, path):
        write_pgm(path, self.grid)

    def region_mass(self, region_size: int) -> np.ndarray:
        """Total magnitude per region tile (rows x cols grid)."""
        h, w = self.grid.shape
        rows, cols = h // region_size, w // region_size
        tiles = self.grid[: rows * region_size, : cols * region_size]
        tiles = tiles.reshape(rows, region_size, cols, region_size)
        return tiles.sum(axis=(1, 3))


def erf_map(model, image: np.ndarray, probe: tuple | None = None,
            probe_stage: str = "context", channel: int = 0,
            seed: int | None = None, threads: int = 1) -> ERFMap:
    """Backpropagate a one-hot output-feature cotangent to the input pixels.

    ``probe`` is a global (token_row, token_col) coordinate in the output
    token grid; None means the center token. ``channel`` picks the scalar
    feature of that token to probe. ``probe_stage`` selects contextualized
    features or the pre-context region features.
    """
    if probe_stage not in ("context", "region"):
        raise ContractViolation(f"unknown probe stage {probe_stage!r}")
    img = T.tensor(image, requires_grad=True)
    res = scheduler.stream_forward(model, img, seed=seed, threads=threads)
    seq = res.features if probe_stage == "context" else res.region_features

    token_rows = seq.grid_rows * seq.tokens_h
    token_cols = seq.grid_cols * seq.tokens_w
    if probe is None:
        probe = (token_rows // 2, token_cols // 2)
    pr, pc = probe
    if not (0 <= pr < token_rows and 0 <= pc < token_cols):
        raise ContractViolation(
            f"probe {probe} outside token grid {token_rows}x{token_cols}")
    grow = seq.coords[:, 0] * seq.tokens_h + seq.coords[:, 2]
    gcol = seq.coords[:, 1] * seq.tokens_w + seq.coords[:, 3]
    match = np.flatnonzero((grow == pr) & (gcol == pc))
    if match.size != 1:
        raise ContractViolation(f"probe {probe} matched {match.size} tokens")

    if not (0 <= channel < seq.features.shape[1]):
        raise ContractViolation(
            f"probe channel {channel} outside width {seq.features.shape[1]}")
    seed_cot = np.zeros(seq.features.shape)
    seed_cot[match[0], channel] = 1.0
    seq.features.backward(seed_cot)
    if img.grad is None:
        mag = np.zeros(image.shape[-2:])
    else:
        mag = np.abs(img.grad).sum(axis=0)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return ERFMap(grid=mag, probe=(pr, pc, channel), probe_stage=probe_stage)
