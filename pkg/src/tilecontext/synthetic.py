"""A cross-region task whose single-region Bayes accuracy is chance.

Each sample is a noise image with two 16x16 markers (cross or square)
dropped into two distinct regions; the label says whether the shapes match.
Marker shapes are marginally uniform and the second shape is the first
XOR'd with the label, so no single region carries any label information --
a model must compare regions to beat 50%. That bound is certified by a
brute-force leave-one-out nearest-neighbor classifier on single-region
crops.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .tensorfile import load_tensor, save_tensor

MARKER_SIZE = 16
NOISE_SIGMA = 0.1


def _marker(shape_id: int) -> np.ndarray:
    m = np.zeros((MARKER_SIZE, MARKER_SIZE))
    if shape_id == 0:  # cross: two centered 4-wide bars
        m[6:10, :] = 1.0
        m[:, 6:10] = 1.0
    else:              # square: 4-wide ring
        m[:, :] = 1.0
        m[4:12, 4:12] = 0.0
    return m


@dataclass
class SyntheticDataset:
    images: np.ndarray    # (n, 1, s, s) float64
    labels: np.ndarray    # (n,) int64; 1 = shapes match
    markers: np.ndarray   # (n, 4) int64: region_a, region_b, shape_a, shape_b
    seed: int
    input_size: int
    region_size: int

    def __len__(self):
        return self.images.shape[0]

    @property
    def grid_side(self) -> int:
        return self.input_size // self.region_size

    def region_crop(self, region_index: int) -> np.ndarray:
        """(n, region^2) flattened pixels of one region across the dataset."""
        g = self.grid_side
        r, c = divmod(region_index, g)
        rs = self.region_size
        crop = self.images[:, 0, r * rs:(r + 1) * rs, c * rs:(c + 1) * rs]
        return crop.reshape(len(self), -1)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_tensor(directory / "images.xtt", self.images)
        save_tensor(directory / "labels.xtt", self.labels.astype(np.float64))
        save_tensor(directory / "markers.xtt", self.markers.astype(np.float64))
        (directory / "manifest.txt").write_text(
            f"seed={self.seed}\nn={len(self)}\n"
            f"input_size={self.input_size}\nregion_size={self.region_size}\n"
            "images=images.xtt\nlabels=labels.xtt\nmarkers=markers.xtt\n")

    @classmethod
    def load(cls, directory) -> "SyntheticDataset":
        directory = Path(directory)
        meta = {}
        for line in (directory / "manifest.txt").read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k] = v
        return cls(
            images=load_tensor(directory / meta["images"]),
            labels=load_tensor(directory / meta["labels"]).astype(np.int64),
            markers=load_tensor(directory / meta["markers"]).astype(np.int64),
            seed=int(meta["seed"]), input_size=int(meta["input_size"]),
            region_size=int(meta["region_size"]))


def gen_synthetic_task(seed: int, n: int, input_size: int = 64,
                       region_size: int = 32,
                       region_pair: tuple | None = None) -> SyntheticDataset:
    """Deterministic dataset of marker match/mismatch images.

    Labels are balanced to within one sample. Markers sit at the center of
    their regions; the two regions are either a fixed pair or drawn uniformly
    without replacement. Either way any single region is label-independent
    in isolation (the second shape is the first XOR the label, and shapes are
    marginally uniform).
    """
    if input_size < 2 * region_size:
        raise ContractViolation(
            f"need input_size >= 2 * region_size, got {input_size}/{region_size}")
    if region_size < MARKER_SIZE:
        raise ContractViolation(
            f"region {region_size} cannot hold a {MARKER_SIZE}px marker")
    rng = np.random.default_rng(seed)
    g = input_size // region_size
    n_regions = g * g
    if region_pair is not None:
        ra0, rb0 = region_pair
        if not (0 <= ra0 < n_regions and 0 <= rb0 < n_regions and ra0 != rb0):
            raise ContractViolation(f"bad region pair {region_pair}")
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2] = 1
    rng.shuffle(labels)
    images = rng.normal(0.0, NOISE_SIGMA, size=(n, 1, input_size, input_size))
    markers = np.zeros((n, 4), dtype=np.int64)
    off = (region_size - MARKER_SIZE) // 2
    for i in range(n):
        if region_pair is not None:
            ra, rb = ra0, rb0
        else:
            ra, rb = rng.choice(n_regions, size=2, replace=False)
        sa = int(rng.integers(2))
        sb = sa if labels[i] == 1 else 1 - sa
        markers[i] = (ra, rb, sa, sb)
        for reg, shape_id in ((ra, sa), (rb, sb)):
            r, c = divmod(int(reg), g)
            top = r * region_size + off
            left = c * region_size + off
            images[i, 0, top:top + MARKER_SIZE, left:left + MARKER_SIZE] += \
                _marker(shape_id)
    return SyntheticDataset(images=images, labels=labels, markers=markers,
                            seed=seed, input_size=input_size,
                            region_size=region_size)


def single_region_nn_accuracy(ds: SyntheticDataset, region_index: int) -> float:
    """Leave-one-out 1-nearest-neighbor accuracy from one region's pixels.

    The designed chance bound: this should hover at 0.5 for every region.
    """
    x = ds.region_crop(region_index)
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, np.inf)
    nearest = d2.argmin(axis=1)
    return float((ds.labels[nearest] == ds.labels).mean())
