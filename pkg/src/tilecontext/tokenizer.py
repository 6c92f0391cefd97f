"""Nested tokenization: image -> zero-padded regions -> patches.

A large (c, h, w) image is cut into non-overlapping region tiles of a fixed
size; out-of-bounds pixels are zero and flagged in a validity mask. Regions
are ordered row-major: region (r, c) has linear index r * cols + c. Padding
happens after normalization, so padded pixels are exactly 0.0 regardless of
dataset statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ContractViolation(f"image must be (channels, h, w), got {img.shape}")
    c, h, w = img.shape
    if h < 1 or w < 1 or c < 1:
        raise ContractViolation(f"empty image {img.shape}")
    if not np.isfinite(img).all():
        raise ContractViolation("image contains non-finite pixels")
    return img


@dataclass
class RegionGrid:
    """A partitioned image: row-major tiles plus per-pixel validity masks."""
    region_h: int
    region_w: int
    rows: int
    cols: int
    regions: np.ndarray    # (rows*cols, c, region_h, region_w)
    pad_mask: np.ndarray   # (rows*cols, region_h, region_w); True = valid pixel
    image_shape: tuple     # (c, h, w) of the source image

    @property
    def n_regions(self) -> int:
        return self.rows * self.cols

    def index_of(self, r: int, c: int) -> int:
        return r * self.cols + c


def partition_regions(img: np.ndarray, region: tuple[int, int]) -> RegionGrid:
    """Split an image into ceil-cover tiles of exactly ``region`` size."""
    img = check_image(img)
    rh, rw = region
    if rh < 1 or rw < 1:
        raise ContractViolation(f"region extents must be >= 1, got {region}")
    c, h, w = img.shape
    rows = -(-h // rh)
    cols = -(-w // rw)
    padded = np.zeros((c, rows * rh, cols * rw), dtype=img.dtype)
    padded[:, :h, :w] = img
    valid = np.zeros((rows * rh, cols * rw), dtype=bool)
    valid[:h, :w] = True
    # (c, rows, rh, cols, rw) -> (rows, cols, c, rh, rw)
    tiles = padded.reshape(c, rows, rh, cols, rw).transpose(1, 3, 0, 2, 4)
    masks = valid.reshape(rows, rh, cols, rw).transpose(0, 2, 1, 3)
    return RegionGrid(
        region_h=rh, region_w=rw, rows=rows, cols=cols,
        regions=np.ascontiguousarray(tiles.reshape(rows * cols, c, rh, rw)),
        pad_mask=np.ascontiguousarray(masks.reshape(rows * cols, rh, rw)),
        image_shape=(c, h, w),
    )


def reassemble_image(grid: RegionGrid) -> np.ndarray:
    """Inverse of partition_regions restricted to valid pixels."""
    c, h, w = grid.image_shape
    tiles = grid.regions.reshape(grid.rows, grid.cols, c, grid.region_h, grid.region_w)
    padded = tiles.transpose(2, 0, 3, 1, 4).reshape(
        c, grid.rows * grid.region_h, grid.cols * grid.region_w)
    return padded[:, :h, :w].copy()


def extract_region(img: T.Tensor, region: tuple[int, int], r: int, c: int) -> T.Tensor:
    """Differentiable tile extraction from a (channels, h, w) tensor.

    Slices the (r, c) tile and zero-pads it to exactly the region size, so
    gradients flow back to the source pixels (padding contributes none).
    """
    rh, rw = region
    _, h, w = img.shape
    top, left = r * rh, c * rw
    if top >= h or left >= w:
        raise ContractViolation(f"region ({r}, {c}) outside image of shape {img.shape}")
    tile = T.narrow(img, 1, top, min(rh, h - top))
    tile = T.narrow(tile, 2, left, min(rw, w - left))
    if tile.shape[1] < rh:
        tile = T.zero_pad(tile, 1, rh)
    if tile.shape[2] < rw:
        tile = T.zero_pad(tile, 2, rw)
    return tile


def patchify_region(tile: np.ndarray, patch: int) -> np.ndarray:
    """Cut a (c, h, w) tile into row-major patches flattened channel-first.

    Returns (p_count, c * patch * patch). Non-divisibility is a configuration
    error caught at pipeline construction; this function re-checks defensively.
    """
    tile = np.asarray(tile)
    c, h, w = tile.shape
    if h % patch or w % patch:
        raise ContractViolation(
            f"patch {patch} does not divide region {h}x{w}")
    gh, gw = h // patch, w // patch
    p = tile.reshape(c, gh, patch, gw, patch).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(p.reshape(gh * gw, c * patch * patch))


def unpatchify_region(patches: np.ndarray, channels: int, h: int, w: int,
                      patch: int) -> np.ndarray:
    """Inverse of patchify_region; bitwise round-trip."""
    gh, gw = h // patch, w // patch
    p = patches.reshape(gh, gw, channels, patch, patch).transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(p.reshape(channels, h, w))


@dataclass
class FeatureSequence:
    """Concatenated per-region token features with 2-d positional metadata.

    ``coords`` holds one (region_row, region_col, token_row, token_col) row
    per token, in the same order as ``features``.
    """
    features: T.Tensor        # (length, width)
    coords: np.ndarray        # (length, 4) int
    grid_rows: int
    grid_cols: int
    tokens_h: int
    tokens_w: int

    @property
    def tokens_per_region(self) -> int:
        return self.tokens_h * self.tokens_w

    @property
    def length(self) -> int:
        return self.features.shape[0]


def region_coords(rows: int, cols: int, th: int, tw: int) -> np.ndarray:
    """Token coordinates for a full row-major region grid."""
    rr, cc, ir, ic = np.meshgrid(
        np.arange(rows), np.arange(cols), np.arange(th), np.arange(tw),
        indexing="ij")
    return np.stack([rr, cc, ir, ic], axis=-1).reshape(-1, 4)


def reassemble_row_major(per_region, rows: int, cols: int) -> FeatureSequence:
    """Concatenate per-region (th, tw, d) feature maps into one sequence.

    ``per_region`` is indexed by row-major region id; token i of region
    (r, c) lands at offset (r * cols + c) * tokens_per_region + i.
    """
    if len(per_region) != rows * cols:
        raise ContractViolation(
            f"expected {rows * cols} region maps, got {len(per_region)}")
    first = per_region[0]
    if first.ndim != 3:
        raise ContractViolation(f"region features must be (th, tw, d), got {first.shape}")
    th, tw, d = first.shape
    for f in per_region[1:]:
        if f.shape != (th, tw, d):
            raise ContractViolation(
                f"heterogeneous region feature shapes: {f.shape} vs {(th, tw, d)}")
    flat = [T.reshape(f, (th * tw, d)) for f in per_region]
    features = T.concat(flat, axis=0)
    return FeatureSequence(
        features=features,
        coords=region_coords(rows, cols, th, tw),
        grid_rows=rows, grid_cols=cols, tokens_h=th, tokens_w=tw,
    )
