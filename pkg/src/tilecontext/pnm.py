"""Minimal binary PGM (P5) and PPM (P6) support, maxval 255.

Images are exchanged as float arrays in [0, 1] with channel-first layout
(c, h, w); grayscale has one channel.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(blob):
        if blob[i : i + 1].isspace():
            i += 1
        elif blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(blob) and not blob[j : j + 1].isspace():
                j += 1
            tokens.append(blob[i:j])
            i = j
    if len(tokens) < 4:
        raise ContractViolation(f"{path}: truncated header")
    magic, w_tok, h_tok, max_tok = tokens
    if magic not in (b"P5", b"P6"):
        raise ContractViolation(f"{path}: unsupported magic {magic!r}")
    w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
    if maxval != 255:
        raise ContractViolation(f"{path}: only maxval 255 supported, got {maxval}")
    i += 1  # single whitespace after the header
    channels = 1 if magic == b"P5" else 3
    count = w * h * channels
    raw = np.frombuffer(blob, dtype=np.uint8, count=count, offset=i)
    img = raw.reshape(h, w, channels).astype(np.float64) / 255.0
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def write_pgm(path, grid: np.ndarray) -> None:
    """Write a (h, w) float array in [0, 1] as 8-bit binary PGM."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ContractViolation(f"write_pgm expects (h, w), got {grid.shape}")
    q = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(q.tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    """Write a (3, h, w) float array in [0, 1] as 8-bit binary PPM."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractViolation(f"write_ppm expects (3, h, w), got {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    _, h, w = q.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(q.transpose(1, 2, 0).tobytes())
