"""Command-line surface: inspect | features | synth | train | detect | eval | bench.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from time import perf_counter

import numpy as np

from . import evaluate, nn, pipeline, synth, train
from .errors import (
    ConfigError,
    FacedetError,
    FormatError,
    InsufficientDataError,
    NumericError,
    TrainingError,
)
from .tensor import dfw_load, dfw_save
from .windows import NmsParams, load_bank, save_bank


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's exit 2
        raise _UsageError(message)


def _add_weight_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", help="DFW weight file")
    p.add_argument("--random-weights", type=int, metavar="SEED",
                   help="seeded random conv weights instead of a weight file")
    p.add_argument("--net", help="network JSON (default: shipped conv5 stack)")


def _resolve_weights(args) -> tuple[nn.NetworkSpec, dict]:
    net = nn.load_network(args.net)
    if args.weights is not None:
        return net, dfw_load(args.weights)
    if args.random_weights is not None:
        return net, nn.random_weights(net, args.random_weights)
    raise _UsageError("one of --weights or --random-weights is required")


def _train_config(args) -> train.TrainConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = train.config_from_json(f.read())
    else:
        cfg = train.TrainConfig()
    return cfg.with_overrides(
        seed=args.seed, t_p=args.t_p, t_n=args.t_n,
        negatives_per_image=args.negatives_per_image,
        min_positives=args.min_positives, negative_batch=args.negative_batch,
        mining_cycles=args.mining_cycles, lam=args.lam, epochs=args.epochs,
    )


def _nms_params(args) -> NmsParams:
    defaults = NmsParams()
    return NmsParams(
        overlap_thresh=args.nms_overlap if args.nms_overlap is not None
        else defaults.overlap_thresh,
        big_score_gap=args.nms_big_gap if args.nms_big_gap is not None
        else defaults.big_score_gap,
        small_score_gap=args.nms_small_gap if args.nms_small_gap is not None
        else defaults.small_score_gap,
        containment_thresh=args.nms_containment if args.nms_containment is not None
        else defaults.containment_thresh,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="facedet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print DFW entry names and shapes")
    p.add_argument("dfw")

    p = sub.add_parser("features", help="image -> conv feature map as DFW")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    _add_weight_args(p)

    p = sub.add_parser("synth", help="emit a synthetic dataset plus manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="manifest -> model bank")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TrainConfig JSON file (flags override)")
    p.add_argument("--threshold", type=float, default=1.0,
                   help="detection threshold stored in the bank")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    _add_weight_args(p)
    for flag, typ in (("--seed", int), ("--t-p", int), ("--t-n", int),
                      ("--negatives-per-image", int), ("--min-positives", int),
                      ("--negative-batch", int), ("--mining-cycles", int),
                      ("--epochs", int)):
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    for flag in ("--nms-overlap", "--nms-big-gap", "--nms-small-gap",
                 "--nms-containment"):
        p.add_argument(flag, type=float, default=None)

    p = sub.add_parser("detect", help="manifest or single image -> detections JSONL")
    p.add_argument("--manifest")
    p.add_argument("--image")
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None,
                   help="override the bank's detection threshold")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    _add_weight_args(p)

    p = sub.add_parser("eval", help="detections + manifest -> CSV reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--precision-target", type=float, default=0.95)

    p = sub.add_parser("bench", help="repeat forward passes, report timings")
    p.add_argument("--image", required=True)
    p.add_argument("--repeat", type=int, default=3)
    _add_weight_args(p)
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_inspect(args) -> int:
    store = dfw_load(args.dfw)
    for name, arr in store.items():
        print(f"{name}  {'x'.join(str(d) for d in arr.shape)}")
    return 0


def _cmd_features(args) -> int:
    net, weights = _resolve_weights(args)
    image = nn.load_image(args.image)
    feature = nn.forward(net, weights, nn.preprocess(image))
    dfw_save({"conv5": feature}, args.out)
    print(f"wrote {args.out}: {feature.shape[0]}x{feature.shape[1]}x{feature.shape[2]}")
    return 0


def _cmd_synth(args) -> int:
    manifest = synth.write_synthetic(args.out_dir, args.count, args.seed)
    print(manifest)
    return 0


def _cmd_train(args) -> int:
    net, weights = _resolve_weights(args)
    manifest = train.read_manifest(args.manifest)
    bank = train.train_bank(
        manifest, net, weights, _train_config(args),
        detection_threshold=args.threshold, nms_params=_nms_params(args),
        workers=args.workers,
    )
    save_bank(bank, args.out)
    print(f"wrote {args.out}: {len(bank.models)} window models")
    return 0


def _cmd_detect(args) -> int:
    if (args.manifest is None) == (args.image is None):
        raise _UsageError("detect needs exactly one of --manifest or --image")
    net, weights = _resolve_weights(args)
    bank = load_bank(args.bank)
    if args.threshold is not None:
        bank.detection_threshold = args.threshold
    paths = ([args.image] if args.image else
             [a.path for a in train.read_manifest(args.manifest)])
    dets = pipeline.detect_paths(paths, net, weights, bank, workers=args.workers)
    pipeline.write_detections(list(zip(paths, dets)), args.out)
    print(f"wrote {args.out}: {sum(d.present for d in dets)}/{len(dets)} present")
    return 0


def _cmd_eval(args) -> int:
    annotations = train.read_manifest(args.manifest)
    detections = pipeline.read_detections(args.detections)
    records = evaluate.join_records(annotations, detections)
    os.makedirs(args.out_dir, exist_ok=True)
    curve = evaluate.pr_curve(records)
    evaluate.write_pr_csv(curve, os.path.join(args.out_dir, "pr.csv"))
    sweep = evaluate.iou_sweep(records)
    evaluate.write_sweep_csv(sweep, os.path.join(args.out_dir, "sweep.csv"))
    s = evaluate.summary(records, precision_target=args.precision_target)
    rp = "-" if s.recall_at_precision is None else f"{s.recall_at_precision:.4f}"
    print(f"max_f1={s.max_f1:.4f} max_accuracy={s.max_accuracy:.4f} "
          f"recall_at_{args.precision_target:g}_precision={rp}")
    return 0


def _cmd_bench(args) -> int:
    net, weights = _resolve_weights(args)
    tensor = nn.preprocess(nn.load_image(args.image))
    totals: dict[str, list[float]] = {}
    wall: list[float] = []
    for _ in range(max(1, args.repeat)):
        t0 = perf_counter()
        _, times = nn.timed_forward(net, weights, tensor)
        wall.append(perf_counter() - t0)
        for kind, dt in times:
            totals.setdefault(kind, []).append(dt)
    print(f"forward wall time: mean {np.mean(wall):.4f}s min {min(wall):.4f}s "
          f"over {len(wall)} runs")
    per_run = {k: sum(v) / len(wall) for k, v in totals.items()}
    total = sum(per_run.values())
    for kind in ("conv", "relu", "lrn", "maxpool"):
        if kind in per_run:
            print(f"  {kind:8s} {per_run[kind]:.4f}s  {100 * per_run[kind] / total:5.1f}%")
    conv_share = per_run.get("conv", 0.0) / total
    print(f"convolution share of forward time: {100 * conv_share:.1f}%")
    return 0


_COMMANDS = {
    "inspect": _cmd_inspect, "features": _cmd_features, "synth": _cmd_synth,
    "train": _cmd_train, "detect": _cmd_detect, "eval": _cmd_eval,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (FormatError, ConfigError, InsufficientDataError, TrainingError,
            FacedetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
