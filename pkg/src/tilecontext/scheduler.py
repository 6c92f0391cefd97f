"""The streaming spine: plan chunks, bound stage-1 batches, account memory.

Regions are encoded strictly one at a time (optionally a few in flight on
worker threads) and merged in row-major order, so the result is bitwise
identical for every batch size and thread count. Under ``tensor.no_grad``
each region's intermediates are released as soon as its feature map is
banked, which is what keeps the working set flat as images grow; the bank
of per-region features itself necessarily grows with image area and is
tagged as the "outputs" phase so the ledger can report it separately.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ledger as L
from . import tensor as T
from .errors import ContractViolation, UnsatisfiableBudget
from .tokenizer import FeatureSequence, extract_region, region_coords
from .tensor import Tensor


@dataclass
class ChunkPlan:
    """Row-major contiguous groups of at most ``capacity`` region indices."""
    chunks: list
    capacity: int
    tokens_per_region: int

    @property
    def n_chunks(self) -> int:
        return len(self.chunks)


def plan_chunks(n_regions: int, capacity: int, tokens_per_region: int = 1) -> ChunkPlan:
    if capacity < 1:
        raise ContractViolation(f"chunk capacity must be >= 1, got {capacity}")
    chunks = [list(range(i, min(i + capacity, n_regions)))
              for i in range(0, n_regions, capacity)]
    return ChunkPlan(chunks=chunks, capacity=capacity,
                     tokens_per_region=tokens_per_region)


def add_2d_positional(seq: FeatureSequence, model) -> FeatureSequence:
    """Elementwise addition of the model's positional embedding."""
    emb = model.positional(seq.coords)
    return FeatureSequence(
        features=T.add(seq.features, emb), coords=seq.coords,
        grid_rows=seq.grid_rows, grid_cols=seq.grid_cols,
        tokens_h=seq.tokens_h, tokens_w=seq.tokens_w)


@dataclass
class StreamResult:
    features: FeatureSequence          # contextualized sequence
    region_features: FeatureSequence   # pre-context sequence
    rows: int
    cols: int
    n_chunks: int
    ledger: L.MemoryLedger | None
    token_mask: np.ndarray | None = None


class _OOM(Exception):
    """Internal: a capped run exceeded its simulated memory limit."""


class _CappedLedger(L.MemoryLedger):
    def __init__(self, cap: int):
        super().__init__()
        self.cap = cap
        self.tripped = False

    def _register(self, tensor):
        super()._register(tensor)
        if self.live > self.cap:
            self.tripped = True
            raise _OOM(f"live scalars {self.live} exceed cap {self.cap}")


def _bank(t: Tensor) -> Tensor:
    """Re-register a kept tensor under the current phase (inference only)."""
    if T.grad_enabled():
        return t
    return Tensor(t.data)


def _measure_region_working_set(model, image: Tensor, region: tuple) -> int:
    """Peak live scalars of a single region forward, probed in isolation."""
    probe = L.MemoryLedger()
    with T.no_grad(), L.activate(probe):
        tile = extract_region(image, region, 0, 0)
        model.region_encoder.encode_region(tile)
    return probe.peak


def stream_forward(model, image, *, region_batch: int | None = None,
                   budget_scalars: int | None = None, threads: int = 1,
                   ledger: L.MemoryLedger | None = None,
                   seed: int | None = None) -> StreamResult:
    """Partition -> per-region encode -> reassemble -> positional -> context.

    ``region_batch`` bounds how many regions are in flight at once;
    ``budget_scalars`` derives that bound from an activation budget instead
    (UnsatisfiableBudget if even one region does not fit). Output is bitwise
    independent of both knobs and of the thread count.
    """
    if isinstance(image, np.ndarray):
        image = T.tensor(image)
    cfg = model.config
    r = cfg.region_size
    _, h, w = image.shape
    rows, cols = -(-h // r), -(-w // r)
    n_regions = rows * cols

    if budget_scalars is not None:
        per_region = _measure_region_working_set(model, image, (r, r))
        if budget_scalars < per_region:
            raise UnsatisfiableBudget(
                f"budget {budget_scalars} < one region's working set {per_region}")
        region_batch = max(1, min(budget_scalars // per_region,
                                  region_batch or n_regions))
    if region_batch is None:
        region_batch = n_regions

    ctx = L.activate(ledger) if ledger is not None else None
    if ctx is not None:
        ctx.__enter__()
    try:
        def encode_one(idx: int) -> Tensor:
            rr, cc = divmod(idx, cols)
            tile = extract_region(image, (r, r), rr, cc)
            return model.region_encoder.encode_region(tile)

        fmaps: list = [None] * n_regions
        with L.phase("region"):
            for start in range(0, n_regions, region_batch):
                batch_ids = range(start, min(start + region_batch, n_regions))
                if threads > 1:
                    with ThreadPoolExecutor(max_workers=threads) as pool:
                        encoded = list(pool.map(encode_one, batch_ids))
                else:
                    encoded = [encode_one(i) for i in batch_ids]
                with L.phase("outputs"):
                    for i, fm in zip(batch_ids, encoded):
                        fmaps[i] = _bank(fm)

        th, tw, d = fmaps[0].shape
        with L.phase("outputs"):
            flat = [T.reshape(f, (th * tw, d)) for f in fmaps]
            features = T.concat(flat, axis=0)
            seq = FeatureSequence(
                features=features, coords=region_coords(rows, cols, th, tw),
                grid_rows=rows, grid_cols=cols, tokens_h=th, tokens_w=tw)
            seq = add_2d_positional(seq, model)
            seq = FeatureSequence(
                features=_bank(seq.features), coords=seq.coords,
                grid_rows=rows, grid_cols=cols, tokens_h=th, tokens_w=tw)

        tpr = th * tw
        if model.xl_cfg is not None:
            total = seq.length
            step = model.chunk_token_len()
            if cfg.context_length is not None and total <= cfg.context_length:
                step = total
            plan = plan_chunks(n_regions, max(1, step // tpr), tpr)
            memories = model.context.fresh_memory()
            outs = []
            for ci, chunk_ids in enumerate(plan.chunks):
                with L.phase("context"):
                    lo = chunk_ids[0] * tpr
                    ln = len(chunk_ids) * tpr
                    chunk = T.narrow(seq.features, 0, lo, ln)
                    out = model.context.forward_chunk(chunk, memories,
                                                      chunk_index=ci, seed=seed)
                with L.phase("caches"):
                    memories = [None if m is None else _bank(m) for m in memories]
                with L.phase("outputs"):
                    outs.append(_bank(out))
            n_chunks = plan.n_chunks
            with L.phase("outputs"):
                ctx_features = T.concat(outs, axis=0) if len(outs) > 1 else outs[0]
        else:
            with L.phase("context"):
                ctx_features = model.context.forward(seq.features, seed=seed)
            n_chunks = 1
            with L.phase("outputs"):
                ctx_features = _bank(ctx_features)

        out_seq = FeatureSequence(
            features=ctx_features, coords=seq.coords,
            grid_rows=rows, grid_cols=cols, tokens_h=th, tokens_w=tw)
        return StreamResult(features=out_seq, region_features=seq,
                            rows=rows, cols=cols, n_chunks=n_chunks,
                            ledger=ledger)
    finally:
        if ctx is not None:
            ctx.__exit__(None, None, None)


MEM_CSV_HEADER = "input_px,mode,peak_scalars,peak_excl_outputs,regions,chunks"


def memory_growth_report(model_builder, sizes, *, naive_cap: int | None = None,
                         out_path=None) -> list[dict]:
    """Streamed vs whole-image-as-one-region peaks across input sizes.

    ``model_builder(region_size, input_size)`` must return a ready model;
    the naive baseline is the same pipeline with region size = image size
    (a 1x1 grid), which may trip the simulated memory cap and is then
    recorded as "oom".
    """
    rows = []
    for size in sizes:
        for mode in ("stream", "naive"):
            region = None if mode == "stream" else size
            model = model_builder(region, size)
            if model.config.region_size > size or size % model.config.region_size:
                raise ContractViolation(
                    f"size {size} must be a multiple of region "
                    f"{model.config.region_size}")
            rng = np.random.default_rng(0)
            img = rng.normal(size=(model.config.in_channels, size, size))
            led = L.MemoryLedger() if (naive_cap is None or mode == "stream") \
                else _CappedLedger(naive_cap)
            try:
                with T.no_grad():
                    res = stream_forward(model, img, region_batch=1, ledger=led)
                rows.append({
                    "input_px": size, "mode": mode,
                    "peak_scalars": led.peak,
                    "peak_excl_outputs": led.peak_excl_outputs,
                    "regions": res.rows * res.cols, "chunks": res.n_chunks,
                })
            except _OOM:
                side = -(-size // model.config.region_size)
                rows.append({
                    "input_px": size, "mode": mode, "peak_scalars": "oom",
                    "peak_excl_outputs": "oom", "regions": side * side,
                    "chunks": 0,
                })
    if out_path is not None:
        write_memory_csv(rows, out_path)
    return rows


def write_memory_csv(rows: list[dict], path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MEM_CSV_HEADER.split(","))
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())
