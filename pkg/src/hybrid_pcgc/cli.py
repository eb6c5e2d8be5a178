"""``hpcg`` command-line interface.

Exit codes: 0 success, 2 usage or input parse error, 3 pretrained-asset
problem (missing, malformed or not the assets a stream was made with),
4 corrupt bitstream, 1 anything else.

Every flag that has an environment form reads its default from
``HPCG_<FLAG>`` (for example ``HPCG_EPOCHS=4``); an explicit flag wins.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets
from .assets import AssetFormatError, ModelAssets, load_ppn, save_ppn
from .coding.arith import CorruptStreamError
from .coding.bitstream import AssetMismatchError
from .dar import DarConfig
from .io import PlyFormatError, read_ply, write_ply
from .metrics import TimeBppCurve, tb_rate
from .octree import DEFAULT_COARSE_THRESHOLD
from .partition import kdtree_partition
from .pipeline import TrainConfig, decode_gopc, encode_gopc, pretrain_ppn, train_base
from .ppn import PpnConfig

__all__ = ["main", "build_parser"]

log = logging.getLogger("hpcg")

EXIT_OK, EXIT_ERROR, EXIT_PARSE, EXIT_ASSETS, EXIT_CORRUPT = 0, 1, 2, 3, 4


class _UsageError(Exception):
    pass


def _env(name: str, default, cast=str):
    raw = os.environ.get(f"HPCG_{name}")
    if raw is None:
        return default
    if cast is bool:
        return raw.strip().lower() in {"1", "true", "yes", "on"}
    try:
        return cast(raw)
    except ValueError:
        raise _UsageError(f"HPCG_{name}={raw!r} is not a valid {cast.__name__}") from None


def _common(p: argparse.ArgumentParser, coding: bool = True) -> None:
    p.add_argument("--assets-dir", default=_env("ASSETS_DIR", "assets"), help="pretrained asset directory")
    p.add_argument("--seed", type=int, default=_env("SEED", 0, int))
    p.add_argument("--coarse-threshold", type=int, default=_env("COARSE_THRESHOLD", DEFAULT_COARSE_THRESHOLD, int))
    p.add_argument("--threads", type=int, default=_env("THREADS", 1, int))
    p.add_argument("--epochs", type=int, default=_env("EPOCHS", None, int))
    p.add_argument("-v", "--verbose", action="store_true")
    if coding:
        p.add_argument("--gopc-size", type=int, default=_env("GOPC_SIZE", 32, int))
        p.add_argument("--no-smc", action="store_true", default=_env("NO_SMC", False, bool))
        p.add_argument("--no-ppn", action="store_true", default=_env("NO_PPN", False, bool))
        p.add_argument("--kd-target", type=int, default=_env("KD_TARGET", None, int), help="split each input into sub-frames of about this many points")


def _inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("inputs", nargs="*", help="PLY files or directories of PLY files (frames in name order)")
    p.add_argument("--synthetic", choices=["toy", "ood"], help="use generated clouds instead of PLY input")
    p.add_argument("--frames", type=int, default=8, help="number of synthetic frames")
    p.add_argument("--bitdepth", type=int, default=None, help="synthetic bitdepth / PLY bitdepth override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpcg", description="Hybrid learned lossless point-cloud geometry codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-ppn", help="pretrain the prior network")
    _inputs(p)
    _common(p, coding=False)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--val-fraction", type=float, default=0.2)

    p = sub.add_parser("train-base", help="train the refiner base layer with the PPN frozen")
    _inputs(p)
    _common(p, coding=False)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--val-fraction", type=float, default=0.2)

    p = sub.add_parser("encode", help="overfit and encode GoPCs")
    _inputs(p)
    _common(p)
    p.add_argument("-o", "--output", required=True, help="output .hpcg (suffixed _NNN when there are several GoPCs)")
    p.add_argument("--report", help="write a JSON rate report here")

    p = sub.add_parser("decode", help="decode a .hpcg file to PLY frames")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p.add_argument("--report", help="write a JSON decode report here")
    p.add_argument("--assets-dir", default=_env("ASSETS_DIR", "assets"))
    p.add_argument("--threads", type=int, default=_env("THREADS", 1, int))
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("bench", help="time/bpp curve over overfitting epochs")
    _inputs(p)
    _common(p)
    p.add_argument("--csv", required=True, help="curve output")
    p.add_argument("--report", help="JSON summary")

    p = sub.add_parser("ablate", help="full vs no-SMC vs no-SMC-and-PPN, with TB-Rate")
    _inputs(p)
    _common(p)
    p.add_argument("--out-dir", required=True, help="curves and report go here")
    return parser


def _load_frames(args) -> list:
    if args.synthetic:
        if args.inputs:
            raise _UsageError("give either input files or --synthetic, not both")
        depth = args.bitdepth or 6
        ood = args.synthetic == "ood"
        if args.command in ("pretrain-ppn", "train-base"):
            # training wants varied shapes and poses, not one moving object
            rng = np.random.default_rng(args.seed)
            make = datasets.ood_cloud if ood else datasets.toy_cloud
            frames = [make(rng, bitdepth=depth) for _ in range(args.frames)]
        else:
            frames = datasets.gopc_sequence(args.frames, seed=args.seed, bitdepth=depth, ood=ood)
    else:
        paths = []
        for item in args.inputs:
            path = Path(item)
            if path.is_dir():
                paths.extend(sorted(path.glob("*.ply")))
            elif path.is_file():
                paths.append(path)
            else:
                raise _UsageError(f"no such input: {item}")
        if not paths:
            raise _UsageError("no input clouds given")
        frames = [read_ply(p, args.bitdepth) for p in paths]
        depth = max(f.bitdepth for f in frames)
        if any(f.bitdepth != depth for f in frames):
            frames = [read_ply(p, depth) for p in paths]
    if getattr(args, "kd_target", None):
        frames = [part for f in frames for part in kdtree_partition(f, args.kd_target)]
    return frames


def _train_cfg(args, pretrain: bool) -> TrainConfig:
    cfg = TrainConfig.pretrain(seed=args.seed) if pretrain else TrainConfig.overfit(seed=args.seed)
    if args.epochs is not None:
        cfg = TrainConfig(cfg.lr, args.epochs, cfg.gamma, cfg.lr_floor, cfg.seed)
    return cfg


def _split(frames, fraction, seed):
    if len(frames) < 2 or fraction <= 0:
        return frames, None
    idx = np.random.default_rng(seed).permutation(len(frames))
    n_val = max(1, int(round(fraction * len(frames))))
    return [frames[i] for i in idx[n_val:]], [frames[i] for i in idx[:n_val]]


def _groups(frames, size: int) -> list:
    if size < 1:
        raise _UsageError("--gopc-size must be >= 1")
    return [frames[k : k + size] for k in range(0, len(frames), size)]


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_pretrain_ppn(args) -> int:
    train, val = _split(_load_frames(args), args.val_fraction, args.seed)
    cfg = PpnConfig(args.k, args.channels)
    result = pretrain_ppn(train, cfg, _train_cfg(args, True), val, args.coarse_threshold)
    path = save_ppn(args.assets_dir, cfg, result.params)
    log.info("PPN written to %s (best epoch %d)", path, result.best_epoch)
    print(json.dumps({"ppn": str(path), "history": result.history, "val_history": result.val_history}))
    return EXIT_OK


def cmd_train_base(args) -> int:
    ppn_cfg, ppn = load_ppn(args.assets_dir)
    train, val = _split(_load_frames(args), args.val_fraction, args.seed)
    dar_cfg = DarConfig(args.k, args.channels, args.hidden)
    result = train_base(train, ppn, ppn_cfg, dar_cfg, _train_cfg(args, True), val, args.coarse_threshold)
    ModelAssets(ppn_cfg, ppn, dar_cfg, result.params).save(args.assets_dir)
    print(json.dumps({"assets": str(args.assets_dir), "history": result.history, "val_history": result.val_history}))
    return EXIT_OK


def _encode_groups(args, assets, groups, track=False, smc=None, use_ppn=None) -> list:
    smc = not args.no_smc if smc is None else smc
    use_ppn = not args.no_ppn if use_ppn is None else use_ppn
    cfg = _train_cfg(args, False)
    return [
        encode_gopc(g, assets, cfg, smc=smc, use_ppn=use_ppn, coarse_threshold=args.coarse_threshold, threads=args.threads, track=track)
        for g in groups
    ]


def cmd_encode(args) -> int:
    assets = ModelAssets.load(args.assets_dir)
    groups = _groups(_load_frames(args), args.gopc_size)
    results = _encode_groups(args, assets, groups)
    out = Path(args.output)
    paths = [out] if len(results) == 1 else [out.with_name(f"{out.stem}_{k:03d}{out.suffix}") for k in range(len(results))]
    for path, r in zip(paths, results):
        path.write_bytes(r.data)
    if args.report:
        _write_json(
            args.report,
            {
                "files": [str(p) for p in paths],
                "config": {"epochs": _train_cfg(args, False).epochs, "seed": args.seed, "smc": not args.no_smc, "ppn": not args.no_ppn, "gopc_size": args.gopc_size},
                "gopcs": [r.report.to_dict() for r in results],
                "bpp": sum(r.report.total_bits for r in results) / sum(r.report.n_points for r in results),
            },
        )
    for path, r in zip(paths, results):
        print(f"{path}: {r.report.n_frames} frames, {r.report.n_points} points, {r.report.bpp:.4f} bpp")
    return EXIT_OK


def cmd_decode(args) -> int:
    assets = ModelAssets.load(args.assets_dir)
    result = decode_gopc(Path(args.input).read_bytes(), assets, args.threads)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(result.frames):
        write_ply(frame, out / f"frame_{k:04d}.ply", binary=not args.ascii)
    if args.report:
        _write_json(args.report, result.report.to_dict())
    print(f"{len(result.frames)} frames written to {out}")
    return EXIT_OK


def _curve(result) -> TimeBppCurve:
    # encoding starts with the PPN prior pass; overfitting time follows it
    return TimeBppCurve.from_trajectory(result.overfit.trajectory, offset=result.report.times.get("prior", 0.0))


def cmd_bench(args) -> int:
    assets = ModelAssets.load(args.assets_dir)
    groups = _groups(_load_frames(args), args.gopc_size)
    results = _encode_groups(args, assets, groups, track=True)
    curve = _curve(results[0]) if len(results) == 1 else _merge_curves([_curve(r) for r in results], [r.report.n_points for r in results])
    curve.to_csv(args.csv)
    if args.report:
        _write_json(args.report, {"curve_csv": str(args.csv), "gopcs": [r.report.to_dict() for r in results], "final_bpp": curve.bpps[-1]})
    print(f"{len(curve.times)} checkpoints written to {args.csv}; final {curve.bpps[-1]:.4f} bpp")
    return EXIT_OK


def _merge_curves(curves, weights) -> TimeBppCurve:
    """Point-weighted bpp of several GoPCs with their times summed per checkpoint."""
    n = min(len(c.times) for c in curves)
    w = np.asarray(weights, dtype=np.float64) / np.sum(weights)
    times = np.sum([np.asarray(c.times[:n]) for c in curves], axis=0)
    bpps = np.sum([wk * np.asarray(c.bpps[:n]) for wk, c in zip(w, curves)], axis=0)
    return TimeBppCurve(tuple(times), tuple(bpps))


ABLATIONS = {"full": (True, True), "no_smc": (False, True), "no_smc_no_ppn": (False, False)}


def _tb_rate_or_none(curve, reference):
    try:
        return tb_rate(curve, reference)
    except ValueError:
        log.warning("curves do not overlap in time; TB-Rate undefined (raise --epochs)")
        return None


def cmd_ablate(args) -> int:
    assets = ModelAssets.load(args.assets_dir)
    groups = _groups(_load_frames(args), args.gopc_size)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curves, summary = {}, {}
    for name, (smc, use_ppn) in ABLATIONS.items():
        results = _encode_groups(args, assets, groups, track=True, smc=smc, use_ppn=use_ppn)
        curve = _curve(results[0]) if len(results) == 1 else _merge_curves([_curve(r) for r in results], [r.report.n_points for r in results])
        curve.to_csv(out / f"{name}.csv")
        curves[name] = curve
        summary[name] = {
            "final_bpp": sum(r.report.total_bits for r in results) / sum(r.report.n_points for r in results),
            "model_bits": sum(r.report.model_bits for r in results),
        }
    for name in ABLATIONS:
        summary[name]["tb_rate_vs_full"] = _tb_rate_or_none(curves[name], curves["full"])
    _write_json(out / "ablation.json", summary)
    for name, row in summary.items():
        rate = row["tb_rate_vs_full"]
        shown = "n/a (no time overlap)" if rate is None else f"{rate:+.2f}%"
        print(f"{name:>14}: {row['final_bpp']:.4f} bpp, TB-Rate vs full {shown}")
    return EXIT_OK


COMMANDS = {
    "pretrain-ppn": cmd_pretrain_ppn,
    "train-base": cmd_train_base,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except _UsageError as e:
        print(f"hpcg: {e}", file=sys.stderr)
        return EXIT_PARSE
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (_UsageError, PlyFormatError) as e:
        print(f"hpcg: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (AssetMismatchError, AssetFormatError, FileNotFoundError) as e:
        print(f"hpcg: asset error: {e}", file=sys.stderr)
        return EXIT_ASSETS
    except CorruptStreamError as e:
        print(f"hpcg: corrupt stream: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except Exception as e:  # noqa: BLE001 - last-resort CLI guard
        log.debug("unhandled error", exc_info=True)
        print(f"hpcg: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
