"""Command line entry point: ``sgan {generate,train,evaluate,theory,report}``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..fileformat import IntegrityError
from . import pipeline
from .config import PRESETS, ConfigError, load_config


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", required=True, metavar="PATH", help="experiment YAML file")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--out", metavar="DIR", default=None, help="run directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgan", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a transition dataset")
    _add_common(p)

    p = sub.add_parser("train", help="train a learner on a dataset")
    _add_common(p)
    p.add_argument("--dataset", metavar="PATH", default=None, help="default: DIR/dataset.sgd")
    p.add_argument("--log-every", type=int, default=100)

    p = sub.add_parser("evaluate", help="score a checkpoint (L1, validity)")
    _add_common(p)
    p.add_argument("--checkpoint", metavar="PATH", default=None, help="default: DIR/checkpoint.sgc")
    p.add_argument("--dataset", metavar="PATH", default=None,
                   help="training data to hold out from random-background evaluation")

    p = sub.add_parser("run", help="generate, train and evaluate in one go")
    _add_common(p)

    p = sub.add_parser("theory", help="numerical checks in 1D")
    p.add_argument("check", choices=pipeline.THEORY_CHECKS)
    _add_common(p, config=False)
    p.add_argument("--budget", type=int, default=20_000, help="training steps (theorem1)")
    p.add_argument("--trials", type=int, default=100_000, help="Monte Carlo trials (lemma1)")
    p.add_argument("--seeds", type=int, default=3, help="independent runs (theorem1)")

    p = sub.add_parser("report", help="aggregate metrics tables into L1/validity columns")
    p.add_argument("runs", nargs="+", metavar="RUN", help="run directories or metrics.tsv files")
    p.add_argument("--out", metavar="FILE", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            sys.stdout.write(pipeline.cmd_report(args.runs, args.out))
        elif args.command == "theory":
            out = args.out or f"theory_{args.check}"
            summary = pipeline.cmd_theory(args.check, out, seed=args.seed or 0, budget=args.budget,
                                          trials=args.trials, seeds=args.seeds)
            for k, v in summary.items():
                print(f"{k}: {v}")
        else:
            cfg = load_config(args.config, preset=args.preset, seed=args.seed, out=args.out)
            if args.command in ("generate", "run"):
                print(pipeline.cmd_generate(cfg))
            if args.command in ("train", "run"):
                pipeline.cmd_train(cfg, dataset=getattr(args, "dataset", None),
                                   log_every=getattr(args, "log_every", 100))
            if args.command in ("evaluate", "run"):
                _, row = pipeline.cmd_evaluate(cfg, checkpoint=getattr(args, "checkpoint", None),
                                               dataset=getattr(args, "dataset", None))
                print("\t".join(pipeline.METRICS_HEADER))
                print(row)
    except (ConfigError, pipeline.UsageError) as exc:
        print(f"sgan {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except IntegrityError as exc:
        print(f"sgan {args.command}: integrity error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
