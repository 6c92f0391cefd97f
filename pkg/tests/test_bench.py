import time

import numpy as np
import pytest

from tilecontext import tensor as T
from tilecontext.bench import bench_throughput
from tilecontext.errors import ContractViolation
from tilecontext.pipeline import Model, PipelineConfig
from tilecontext.scheduler import stream_forward


def builder(input_size):
    cfg = PipelineConfig(input_size=input_size, region_size=8, patch_size=2,
                         dims=(8, 16), depths=(1, 1), heads=(2, 4), window=2,
                         mlp_ratio=2, context="xl", context_heads=2,
                         chunk_capacity=4)
    return Model(cfg, seed=0)


def test_bench_rejects_bad_params():
    with pytest.raises(ContractViolation):
        bench_throughput(builder, [16], warmup=0)
    with pytest.raises(ContractViolation):
        bench_throughput(builder, [16], runs=3)


def test_bench_rows_and_spread_flag(tmp_path):
    rows = bench_throughput(builder, [16, 32], runs=5,
                            out_path=tmp_path / "t.csv")
    assert len(rows) == 2
    assert rows[0]["regions"] == 4 and rows[1]["regions"] == 16
    for row in rows:
        assert float(row["regions_per_s"]) > 0
        assert row["warn"] in (0, 1)
        assert float(row["rel_spread"]) >= 0


def test_doubling_regions_scales_wall_time_linearly():
    # the [1.6x, 2.4x] band from doubling the region count at fixed region
    # size; a heavier workload keeps the measurement compute-bound
    cfg_small = PipelineConfig(input_size=128, region_size=64, context="xl",
                               chunk_capacity=2, dims=(16, 32),
                               depths=(2, 2), heads=(2, 4), window=4,
                               patch_size=4)
    cfg_big = PipelineConfig(**{**cfg_small.__dict__, "input_size": 256})

    def timed(cfg, rect_cols):
        model = Model(cfg, seed=0)
        rng = np.random.default_rng(0)
        img = rng.normal(size=(1, 128, 64 * rect_cols))
        with T.no_grad():
            stream_forward(model, img)  # warmup
            times = []
            for _ in range(5):
                t0 = time.perf_counter()
                stream_forward(model, img)
                times.append(time.perf_counter() - t0)
        return float(np.median(times))

    ratios = []
    for _ in range(3):  # retries absorb scheduler noise on loaded machines
        t4 = timed(cfg_small, 2)   # 2x2 grid = 4 regions
        t8 = timed(cfg_small, 4)   # 2x4 grid = 8 regions
        ratios.append(t8 / t4)
        if 1.6 <= ratios[-1] <= 2.4:
            return
    raise AssertionError(f"wall-time ratios {ratios} all outside [1.6, 2.4]")
