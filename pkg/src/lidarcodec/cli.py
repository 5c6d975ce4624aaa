"""Command-line front end: encode, decode, train, stats, bench.

Exit codes: 0 ok, 1 runtime error, 2 usage error. Every report is CSV
(schemas in docs/csv.md); nothing is plotted here.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import boe, codec, synthetic
from .morton import MAX_BIT_DEPTH, build_hierarchy, count_sorts, neighbor_stats
from .pointcloud import PlyError, QuantizationError, QuantizedCloud, from_coords, quantize, read_ply, write_ply
from .models.baseline import BaselineModel
from .models.network import NeuralPool
from .models import training

log = logging.getLogger("lidarcodec")


class UsageError(Exception):
    pass


def _bit_depth(text: str) -> int:
    b = int(text)
    if not 2 <= b <= MAX_BIT_DEPTH:
        raise argparse.ArgumentTypeError(f"bit depth must be in [2, {MAX_BIT_DEPTH}], got {b}")
    return b


def _window(text: str) -> int:
    w = int(text)
    if w not in (2, 3):
        raise argparse.ArgumentTypeError("window must be 2 or 3")
    return w


def load_models(name: str):
    if name == "baseline":
        return BaselineModel()
    path = Path(name)
    if not path.is_file():
        raise UsageError(f"model file not found: {name}")
    return NeuralPool.load(path)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _load_cloud(args):
    raw = read_ply(args.input)
    origin = None if args.origin is None else np.asarray(args.origin, dtype=float)
    return quantize(raw, args.bit_depth, origin, args.step)


CENTER_FRAMES = 32  # occupancy histograms from at most this many frames seed the BoE centers

LEVEL_COLUMNS = ["level", "parents", "network", "index_bytes", "stage1_bits", "stage2_bits",
                 "chunk_bytes", "bits_per_parent"]


def cmd_encode(args) -> int:
    cloud = _load_cloud(args)
    models = load_models(args.model)
    res = codec.encode(cloud, models, "pipelined" if args.pipelined else "sync")
    Path(args.output).write_bytes(res.data)
    rows = [[r.level, r.parents, r.network, r.index_bytes, r.stage_bits[0], r.stage_bits[1],
             r.chunk_bytes, f"{r.bits / r.parents:.6f}"] for r in res.levels]
    print(f"{cloud.count} voxels  B={cloud.bit_depth}  {len(res.data)} bytes  {res.bpp:.4f} bpp")
    print(" ".join(f"{c:>12}" for c in LEVEL_COLUMNS))
    for r in rows:
        print(" ".join(f"{v:>12}" for v in r))
    if args.csv:
        _write_csv(args.csv, LEVEL_COLUMNS, rows)
    return 0


def cmd_decode(args) -> int:
    models = load_models(args.model)
    cloud = codec.decode(Path(args.input).read_bytes(), models)
    write_ply(cloud, args.output, binary=args.binary)
    print(f"{cloud.count} voxels  B={cloud.bit_depth}")
    return 0


def _training_clouds(args):
    if args.data:
        files = sorted(Path(args.data).glob("*.ply"))
        if not files:
            raise UsageError(f"no .ply files in {args.data}")
        return [quantize(read_ply(f), args.bit_depth) for f in files]
    n = args.synthetic if args.synthetic is not None else args.steps
    return synthetic.corpus(max(n, 1), seed=args.seed, bit_depth=args.bit_depth)


def cmd_train(args) -> int:
    clouds = _training_clouds(args)
    desc = training.descriptors(clouds[:CENTER_FRAMES])
    if args.pool and len(desc) < args.pool:
        raise UsageError(f"{len(desc)} descriptors cannot seed {args.pool} centers; lower --pool or add data")
    centers = boe.fit_centers(desc, args.pool, seed=args.seed).centers if args.pool else np.zeros((0, 32))
    pool = NeuralPool.create(args.dim, centers, seed=args.seed)
    cfg = training.TrainConfig(steps=args.steps, lr=args.lr, seed=args.seed)
    t0 = time.perf_counter()
    pool, losses = training.train(pool, clouds, cfg)
    pool.save(args.out)
    loss_csv = args.loss_csv or str(Path(args.out).with_suffix(".loss.csv"))
    _write_csv(loss_csv, ["step", "lr", "bpp"],
               [[i, f"{cfg.lr_at(i):.6g}", f"{v:.6f}"] for i, v in enumerate(losses)])
    tail = np.mean(losses[-50:]) if losses else float("nan")
    print(f"trained {args.steps} steps in {time.perf_counter() - t0:.1f}s; "
          f"last-50 mean {tail:.4f} bpp; wrote {args.out} and {loss_csv}")
    return 0


def cmd_stats(args) -> int:
    cloud = _load_cloud(args)
    levels, _ = build_hierarchy(cloud.level())
    lo, hi = 2, cloud.bit_depth
    if args.levels:
        lo, hi = args.levels
        if not 2 <= lo <= hi <= cloud.bit_depth:
            raise UsageError(f"--levels must lie in [2, {cloud.bit_depth}]")
    rows = [[b, levels[b].count, f"{neighbor_stats(levels[b], args.window):.6f}"] for b in range(lo, hi + 1)]
    print(f"{'level':>6} {'voxels':>10} {'avg_neighbors':>14}")
    for r in rows:
        print(f"{r[0]:>6} {r[1]:>10} {r[2]:>14}")
    if args.csv:
        _write_csv(args.csv, ["level", "voxels", f"avg_neighbors_w{args.window}"], rows)
    if args.per_point_bits is not None:
        if args.model is None:
            raise UsageError("--per-point-bits needs --model")
        pb = codec.per_point_bits(cloud, load_models(args.model), args.per_point_bits)
        out = args.per_point_csv or f"per_point_bits_b{pb.level}.csv"
        bits = pb.stage_bits
        _write_csv(out, ["x", "y", "z", "stage1_bits", "stage2_bits", "bits"],
                   [[*map(int, c), f"{s1:.6f}", f"{s2:.6f}", f"{s1 + s2:.6f}"]
                    for c, s1, s2 in zip(pb.coords, bits[0], bits[1])])
        print(f"level {pb.level}: {bits.sum():.1f} ideal bits, "
              f"{sum(pb.chunk_bits)} coded bits; wrote {out}")
    return 0


BENCH_COLUMNS = ["experiment", "variant", "run", "points", "encode_s", "decode_s", "sorts", "bytes"]


def _timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


def bench_ordering(cloud, models, runs: int, seed: int = 0):
    """Morton-ordered hierarchy against the explicit re-sort emulation.

    Both variants start from the same shuffled voxel list, so the sort count
    includes the one initial sort of the Morton path.
    """
    shuffled = cloud.coords[np.random.default_rng(seed).permutation(cloud.count)]
    unsorted = QuantizedCloud(shuffled, cloud.bit_depth, cloud.origin, cloud.step)
    paths = {
        "morton": lambda: codec.encode(from_coords(shuffled, cloud.bit_depth, cloud.origin, cloud.step), models),
        "explicit": lambda: codec.encode(unsorted, models, ordering="explicit"),
    }
    rows = []
    for run in range(runs):
        for variant, path in paths.items():
            with count_sorts() as sorts:
                res, enc = _timed(path)
                n = sorts()
            _, dec = _timed(lambda: codec.decode(res.data, models, ordering=variant))
            rows.append(["ordering", variant, run, cloud.count, enc, dec, n, len(res.data)])
    return rows


def bench_pipeline(frames, models):
    rows = []
    for run, cloud in enumerate(frames):
        for variant in ("sync", "pipelined"):
            res, enc = _timed(lambda: codec.encode(cloud, models, variant))
            rows.append(["pipeline", variant, run, cloud.count, enc, "", "", len(res.data)])
    return rows


def _median(rows, variant, col):
    i = BENCH_COLUMNS.index(col)
    return float(np.median([r[i] for r in rows if r[1] == variant]))


def _mean(rows, variant, col):
    i = BENCH_COLUMNS.index(col)
    return float(np.mean([r[i] for r in rows if r[1] == variant]))


def cmd_bench(args) -> int:
    models = load_models(args.model)
    if args.input:
        cloud = _load_cloud(args)
    else:
        cloud = synthetic.scan_frame(args.seed, bit_depth=args.bit_depth,
                                     rings=64, points_per_ring=args.points // 64)
    rows = bench_ordering(cloud, models, args.runs, args.seed)
    frames = synthetic.corpus(args.frames, seed=args.seed, bit_depth=args.bit_depth)
    rows += bench_pipeline(frames, models)
    print(f"ordering ({cloud.count} voxels, median of {args.runs}): "
          f"morton {_median(rows, 'morton', 'encode_s'):.4f}s "
          f"explicit {_median(rows, 'explicit', 'encode_s'):.4f}s encode")
    print(f"pipeline ({args.frames} frames, mean): sync {_mean(rows, 'sync', 'encode_s'):.4f}s "
          f"pipelined {_mean(rows, 'pipelined', 'encode_s'):.4f}s encode")
    if args.csv:
        _write_csv(args.csv, BENCH_COLUMNS,
                   [[*r[:4], *(f"{v:.6f}" if isinstance(v, float) else v for v in r[4:6]), *r[6:]]
                    for r in rows])
    return 0


def _add_frame_flags(p, required=True):
    p.add_argument("--input", required=required)
    p.add_argument("--bit-depth", type=_bit_depth, default=12)
    p.add_argument("--origin", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--step", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lidarcodec", description="Progressive octree LiDAR geometry codec")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="PLY -> container")
    _add_frame_flags(p)
    p.add_argument("--output", required=True)
    p.add_argument("--model", default="baseline", help="model file, or 'baseline'")
    p.add_argument("--pipelined", action="store_true")
    p.add_argument("--csv", help="per-level bit report")
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="container -> PLY")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--model", default="baseline")
    p.add_argument("--binary", action="store_true", help="write binary little-endian PLY")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("train", help="fit BoE centers and train a network pool")
    p.add_argument("--data", help="directory of PLY files (default: synthetic corpus)")
    p.add_argument("--synthetic", type=int, default=None,
                   help="synthetic frames when --data is absent (default: one per step)")
    p.add_argument("--bit-depth", type=_bit_depth, default=12)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=training.TrainConfig.lr)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--pool", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("stats", help="neighbor statistics and per-point bits")
    _add_frame_flags(p)
    p.add_argument("--levels", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--window", type=_window, default=3)
    p.add_argument("--per-point-bits", type=int, metavar="LEVEL")
    p.add_argument("--model")
    p.add_argument("--csv")
    p.add_argument("--per-point-csv")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("bench", help="Morton vs explicit sorting; sync vs pipelined")
    _add_frame_flags(p, required=False)
    p.add_argument("--model", default="baseline")
    p.add_argument("--points", type=int, default=100_000, help="synthetic cloud size without --input")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors, 0 on --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "dim", 1) < 1 or getattr(args, "steps", 0) < 0 or getattr(args, "pool", 0) < 0:
        print("error: --dim must be positive; --steps and --pool non-negative", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, PlyError, QuantizationError, codec.CodecError, training.TrainingError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
