"""Command-line probes: tokenize, train, eval, erf, benches, ctxlen.

Exit codes: 0 success, 1 contract violation (including usage errors),
2 invalid numerics. All commands are deterministic for a fixed --seed and
--threads except wall-clock columns in bench-throughput output.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import scheduler, tensorfile
from .bench import bench_throughput
from .erf import erf_map
from .errors import ContractViolation, InvalidNumerics
from .pipeline import Model, PipelineConfig, load_config
from .pnm import read_pnm
from .synthetic import SyntheticDataset, gen_synthetic_task
from .tokenizer import partition_regions
from .training import evaluate, train
from .xl import context_multiplier, effective_context_length


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are contract violations (exit 1), not numeric errors
        raise ContractViolation(message)


def _load_image(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix in (".pgm", ".ppm", ".pnm"):
        return read_pnm(p)
    arr = tensorfile.load_tensor(p)
    if arr.ndim == 2:
        arr = arr[None]
    return arr


def _model_from_args(args, **overrides) -> Model:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return Model(cfg, seed=args.seed)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_tokenize(args) -> int:
    img = _load_image(args.image)
    cfg = load_config(args.config) if args.config else PipelineConfig()
    grid = partition_regions(img, (cfg.region_size, cfg.region_size))
    out = _out_dir(args)
    lines = [f"rows={grid.rows}", f"cols={grid.cols}",
             f"region={cfg.region_size}", f"image={img.shape}"]
    for i in range(grid.n_regions):
        name = f"region_{i:04d}.xtt"
        tensorfile.save_tensor(out / name, grid.regions[i])
        mask_name = f"pad_mask_{i:04d}.xtt"
        tensorfile.save_tensor(out / mask_name, grid.pad_mask[i].astype(np.float64))
        lines.append(f"region_{i}={name}\tmask={mask_name}")
    (out / "grid.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {grid.n_regions} regions ({grid.rows}x{grid.cols}) to {out}")
    return 0


def cmd_train(args) -> int:
    model = _model_from_args(args)
    cfg = model.config
    out = _out_dir(args)
    if args.data:
        ds = SyntheticDataset.load(args.data)
    else:
        ds = gen_synthetic_task(seed=args.seed, n=args.n_train,
                                input_size=cfg.input_size,
                                region_size=min(cfg.region_size, cfg.input_size // 2))
        ds.save(out / "dataset")
    result = train(model, ds, epochs=args.epochs, batch_size=args.batch_size,
                   lr=args.lr, weight_decay=args.weight_decay, seed=args.seed,
                   verbose=True)
    model.save(out / "weights")
    result.write_csv(out / "curve.csv")
    print(f"final train acc {result.curve[-1][2]:.4f}; "
          f"weights + curve.csv in {out}")
    return 0


def cmd_eval(args) -> int:
    model = _model_from_args(args)
    model.load(args.weights)
    ds = SyntheticDataset.load(args.data)
    acc = evaluate(model, ds)
    print(f"accuracy {acc:.4f} over {len(ds)} samples")
    return 0


def cmd_erf(args) -> int:
    model = _model_from_args(args)
    if args.weights:
        model.load(args.weights)
    cfg = model.config
    if args.image:
        img = _load_image(args.image)
    else:
        rng = np.random.default_rng(args.seed)
        img = rng.normal(size=(cfg.in_channels, cfg.input_size, cfg.input_size))
    probe = None
    if args.probe:
        pr, pc = (int(v) for v in args.probe.split(","))
        probe = (pr, pc)
    emap = erf_map(model, img, probe=probe, probe_stage=args.probe_stage,
                   seed=args.seed, threads=args.threads)
    out = _out_dir(args)
    path = out / f"erf_{args.probe_stage}.pgm"
    emap.save_pgm(path)
    mass = emap.region_mass(cfg.region_size)
    print(f"probe token {emap.probe} stage {emap.probe_stage}; "
          f"per-region mass:\n{np.array2string(mass, precision=4)}")
    print(f"wrote {path}")
    return 0


def cmd_bench_mem(args) -> int:
    base = load_config(args.config) if args.config else PipelineConfig(
        region_size=128, dims=(16, 32, 64), depths=(1, 1, 1), heads=(2, 4, 4),
        context="xl", attn_mode="approx", context_length=None)
    sizes = [int(s) for s in args.sizes.split(",")]

    def builder(region_size, input_size):
        import dataclasses
        cfg = dataclasses.replace(
            base, input_size=input_size,
            region_size=region_size if region_size else base.region_size)
        return Model(cfg, seed=args.seed)

    out = _out_dir(args)
    rows = scheduler.memory_growth_report(
        builder, sizes, naive_cap=args.cap, out_path=out / "memory.csv")
    for row in rows:
        print(row)
    print(f"wrote {out / 'memory.csv'}")
    return 0


def cmd_bench_throughput(args) -> int:
    base = load_config(args.config) if args.config else PipelineConfig()
    sizes = [int(s) for s in args.sizes.split(",")]

    def builder(input_size):
        import dataclasses
        return Model(dataclasses.replace(base, input_size=input_size),
                     seed=args.seed)

    out = _out_dir(args)
    rows = bench_throughput(builder, sizes, runs=args.runs,
                            threads=args.threads,
                            out_path=out / "throughput.csv")
    for row in rows:
        print(row)
    print(f"wrote {out / 'throughput.csv'}")
    return 0


def cmd_ctxlen(args) -> int:
    pixels = effective_context_length(args.region, args.layers, args.chunk)
    print(f"effective context: {pixels} px")
    if args.alpha and args.beta:
        mult = context_multiplier(args.alpha, args.beta,
                                  max(args.layers, 1), args.chunk)
        print(f"context multiplier (alpha*beta*N*C): {mult}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tilecontext",
                     description="streaming two-stage large-image probes")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default="out", help="artifact directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="split an image into region tensors")
    p.add_argument("image", help="input image (.pgm/.ppm or tensor file)")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train", help="train on the cross-region marker task")
    p.add_argument("--data", default=None, help="existing dataset directory")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--n-train", type=int, default=2048)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("erf", help="effective receptive field map")
    p.add_argument("--weights", default=None)
    p.add_argument("--image", default=None)
    p.add_argument("--probe", default=None, help="token row,col (default center)")
    p.add_argument("--probe-stage", choices=("region", "context"),
                   default="context")
    p.set_defaults(func=cmd_erf)

    p = sub.add_parser("bench-mem", help="memory growth: streamed vs naive")
    p.add_argument("--sizes", default="256,512,1024")
    p.add_argument("--cap", type=int, default=None,
                   help="simulated memory cap in live scalars")
    p.set_defaults(func=cmd_bench_mem)

    p = sub.add_parser("bench-throughput", help="regions/second measurements")
    p.add_argument("--sizes", default="64,128")
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(func=cmd_bench_throughput)

    p = sub.add_parser("ctxlen", help="effective context length arithmetic")
    p.add_argument("--region", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--chunk", type=int, required=True)
    p.add_argument("--alpha", type=int, default=0)
    p.add_argument("--beta", type=int, default=0)
    p.set_defaults(func=cmd_ctxlen)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvalidNumerics as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
