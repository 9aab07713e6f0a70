"""Command line entry point.

    lwrobust generate --config exp.ini [--out DIR] [--seed N]
    lwrobust split|train|evaluate|report --config exp.ini [--out DIR]
    lwrobust run --config exp.ini [--out DIR] [--seed N]

Each verb reads the outputs of the earlier ones from ``--out``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiment import run_experiment

log = logging.getLogger("lwrobust")

STAGES = {
    "generate": ("generate",),
    "split": ("split",),
    "train": ("train",),
    "evaluate": ("evaluate",),
    "report": ("report",),
    "run": ("split", "train", "evaluate", "report"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lwrobust", description="Label-wise group-robust training experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in STAGES:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--out", help="output directory (default: [experiment] output, else ./out)")
        p.add_argument("--seed", type=int, help="top-level seed, overrides the config")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out or cfg.output or "out")
        if not args.out and cfg.output and not out.is_absolute():
            out = cfg.base_dir / out
        run_experiment(cfg, out, STAGES[args.verb])
    except Exception as exc:  # any failure becomes a diagnostic and a nonzero exit
        if args.verbose:
            log.exception("%s failed", args.verb)
        print(f"lwrobust {args.verb}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    log.info("%s finished; outputs in %s", args.verb, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
