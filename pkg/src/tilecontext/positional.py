"""2-d positional embeddings added to the reassembled region features.

Token coordinates are (region_row, region_col, token_row, token_col); the
globalized (row, col) pair indexes either fixed sinusoids (half the channels
encode the row, half the col) or learned per-axis tables whose four vectors
are summed. Learned tables start at zero, so they are an exact identity at
init.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractViolation
from .tensor import Tensor
from .weights import ParamStore


def _sinusoid(pos: np.ndarray, d: int) -> np.ndarray:
    """(L,) integer positions -> (L, d) interleaved sin/cos encoding."""
    half = d // 2
    freqs = 1.0 / (10000.0 ** (np.arange(half) / half))
    ang = pos[:, None] * freqs[None, :]
    out = np.zeros((pos.shape[0], d))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def sinusoidal_2d(coords: np.ndarray, tokens_h: int, tokens_w: int, d: int) -> np.ndarray:
    """Fixed embedding per global (row, col) token coordinate."""
    if d % 4:
        raise ConfigError(f"sinusoidal positional width must be divisible by 4, got {d}")
    grow = coords[:, 0] * tokens_h + coords[:, 2]
    gcol = coords[:, 1] * tokens_w + coords[:, 3]
    half = d // 2
    emb = np.concatenate([_sinusoid(grow, half), _sinusoid(gcol, half)], axis=1)
    return emb


class LearnedPositional2D:
    """Zero-initialized per-axis tables summed over the four coordinates."""

    def __init__(self, store: ParamStore, rng, d: int, max_rows: int,
                 max_cols: int, tokens_h: int, tokens_w: int):
        scope = store.scope("pos")
        self.tables = [
            scope.add("region_row", np.zeros((max_rows, d))),
            scope.add("region_col", np.zeros((max_cols, d))),
            scope.add("token_row", np.zeros((tokens_h, d))),
            scope.add("token_col", np.zeros((tokens_w, d))),
        ]

    def lookup(self, coords: np.ndarray) -> Tensor:
        parts = []
        for axis, table in enumerate(self.tables):
            if coords[:, axis].max() >= table.shape[0]:
                raise ContractViolation(
                    f"coordinate axis {axis} exceeds learned table of "
                    f"{table.shape[0]} entries")
            parts.append(T.take_rows(table, coords[:, axis]))
        out = parts[0]
        for p in parts[1:]:
            out = T.add(out, p)
        return out


def positional_embedding(coords: np.ndarray, tokens_h: int, tokens_w: int,
                         d: int, mode: str = "sin",
                         learned: LearnedPositional2D | None = None) -> Tensor:
    """(L, 4) coordinates -> (L, d) embedding tensor."""
    if coords is None:
        raise ContractViolation("token coordinates are missing")
    coords = np.asarray(coords)
    if coords.ndim != 2 or coords.shape[1] != 4:
        raise ContractViolation(f"coords must be (L, 4), got {coords.shape}")
    if mode == "sin":
        return T.tensor(sinusoidal_2d(coords, tokens_h, tokens_w, d))
    if mode == "learned":
        if learned is None:
            raise ContractViolation("learned positional mode needs its tables")
        return learned.lookup(coords)
    raise ConfigError(f"unknown positional mode {mode!r}")
