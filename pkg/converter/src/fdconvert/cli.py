"""Command line for the weight exporter.

Exit codes: 0 success, 1 usage error, 2 conversion error.
"""

from __future__ import annotations

import argparse
import sys

from .convert import ConversionError, convert, emit_reference, load_source


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdconvert", description=__doc__)
    parser.add_argument("--checkpoint",
                        help="torch state-dict file (conv1..conv5 or "
                             "torchvision features.N key styles)")
    parser.add_argument("--seed-init", type=int, default=None, metavar="SEED",
                        help="seeded deterministic weights instead of a checkpoint")
    parser.add_argument("--out", required=True, help="output DFW path")
    parser.add_argument("--report", help="write the conversion report JSON here")
    parser.add_argument("--reference-dir",
                        help="also emit the reference image/activation pair")
    parser.add_argument("--net", help="engine network JSON (default: shipped stack)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if (args.checkpoint is None) == (args.seed_init is None):
        parser.print_usage(sys.stderr)
        print("fdconvert: exactly one of --checkpoint or --seed-init is required",
              file=sys.stderr)
        return 1
    from facedet.nn import load_network
    try:
        net = load_network(args.net)
        seed = args.seed_init if args.seed_init is not None else 0
        report = convert(args.checkpoint, args.out, seed=seed, net=net)
        if args.reference_dir:
            _, state = load_source(args.checkpoint, seed=seed, net=net)
            report.reference_files = list(emit_reference(state, args.reference_dir,
                                                         net=net))
        text = report.to_json()
        if args.report:
            with open(args.report, "w", encoding="utf-8") as f:
                f.write(text + "\n")
        print(text)
        return 0
    except (ConversionError, OSError) as exc:
        print(f"conversion error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
