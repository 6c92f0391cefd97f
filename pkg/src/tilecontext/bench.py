"""Throughput measurement: regions per second through the full pipeline.

Wall time is the only non-deterministic output; every timing-derived column
is grouped at the end of the CSV row so downstream comparisons can exclude
them.
"""

from __future__ import annotations

import csv
import io
import time
from pathlib import Path

import numpy as np

from . import scheduler, tensor as T
from .errors import ContractViolation

THROUGHPUT_CSV_HEADER = ("input_px,regions,tokens,runs,median_s,"
                         "regions_per_s,tokens_per_s,rel_spread,warn")
TIMING_COLUMNS = ("median_s", "regions_per_s", "tokens_per_s", "rel_spread", "warn")


def bench_throughput(model_builder, sizes, *, runs: int = 5, warmup: int = 1,
                     spread_limit: float = 0.2, threads: int = 1,
                     out_path=None) -> list[dict]:
    """Median-of-N forward timings for a list of input sizes.

    ``model_builder(input_size)`` returns a ready model; each size is timed
    ``runs`` times after ``warmup`` discarded runs. A row is flagged when the
    relative spread (max-min over median) exceeds ``spread_limit``.
    """
    if warmup < 1:
        raise ContractViolation("warmup must be >= 1")
    if runs < 5:
        raise ContractViolation("need at least 5 timed runs")
    rows = []
    for size in sizes:
        model = model_builder(size)
        rng = np.random.default_rng(0)
        img = rng.normal(size=(model.config.in_channels, size, size))
        times = []
        with T.no_grad():
            for i in range(warmup + runs):
                t0 = time.perf_counter()
                res = scheduler.stream_forward(model, img, threads=threads)
                dt = time.perf_counter() - t0
                if i >= warmup:
                    times.append(dt)
        times = np.array(times)
        median = float(np.median(times))
        spread = float((times.max() - times.min()) / median)
        regions = res.rows * res.cols
        tokens = res.features.length
        rows.append({
            "input_px": size,
            "regions": regions,
            "tokens": tokens,
            "runs": runs,
            "median_s": f"{median:.6g}",
            "regions_per_s": f"{regions / median:.6g}",
            "tokens_per_s": f"{tokens / median:.6g}",
            "rel_spread": f"{spread:.4g}",
            "warn": int(spread > spread_limit),
        })
    if out_path is not None:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=THROUGHPUT_CSV_HEADER.split(","))
        writer.writeheader()
        writer.writerows(rows)
        Path(out_path).write_text(buf.getvalue())
    return rows
