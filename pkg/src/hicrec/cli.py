"""Command-line entry point.

    hicrec prepare|train|evaluate|sweep|gen-synthetic --config <path>
           [--model <kind>] [--checkpoint <path>] [--seed <int>] [--quiet]

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. The HICREC_THREADS environment variable caps evaluation
parallelism (default 1 for bit-reproducible reports).
"""
from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, DataError, NumericError
from .model import MODEL_KINDS
from .pipeline import (evaluate_command, gen_synthetic_command, prepare,
                       sweep_command, train_command)


class _ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="hicrec",
        description="Train and evaluate meta-path interest-composition recommenders.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_ArgumentParser)

    def common(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    common(sub.add_parser("prepare", help="build graph, split and aspect caches"))

    p_train = sub.add_parser("train", help="fit a model and write checkpoints")
    common(p_train)
    p_train.add_argument("--model", default="hicrec", choices=list(MODEL_KINDS),
                         help="model kind to train")

    p_eval = sub.add_parser("evaluate", help="rank test items from a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", default=None,
                        help="checkpoint file (default: <output_dir>/<model>/ckpt-best.bin)")
    p_eval.add_argument("--model", default=None, choices=list(MODEL_KINDS),
                        help="model kind (default: read from the run manifest)")

    p_sweep = sub.add_parser("sweep", help="retrain across a parameter grid")
    common(p_sweep)
    p_sweep.add_argument("--kind", required=True, choices=["aspects", "dimension"])
    p_sweep.add_argument("--model", default="hicrec", choices=list(MODEL_KINDS))

    common(sub.add_parser("gen-synthetic", help="write the synthetic dataset files"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.train.seed = args.seed
        if args.command == "prepare":
            prep = prepare(cfg, quiet=args.quiet)
            if not args.quiet:
                print(f"prepared {len(prep.aspects)} aspect(s), "
                      f"{len(prep.split.train_pairs)} train pairs, "
                      f"{len(prep.split.test_pairs)} test users "
                      f"({'cache hit' if prep.cache_hit else 'built fresh'})")
        elif args.command == "train":
            train_command(cfg, model_kind=args.model, quiet=args.quiet)
        elif args.command == "evaluate":
            evaluate_command(cfg, checkpoint=args.checkpoint, model_kind=args.model,
                             quiet=args.quiet)
        elif args.command == "sweep":
            sweep_command(cfg, kind=args.kind, model_kind=args.model, quiet=args.quiet)
        elif args.command == "gen-synthetic":
            gen_synthetic_command(cfg, quiet=args.quiet)
        return 0
    except ConfigError as exc:
        print(f"hicrec: config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"hicrec: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"hicrec: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
