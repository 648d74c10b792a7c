"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import ConfigError, StdicError
from .experiments import CANNED, canned_config, run_analyze, run_metrics, run_reproduce, run_synth

log = logging.getLogger("stdic")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--out", type=Path, default=Path("stdic_out"), help="output directory")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (does not change results)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--quantize-8bit", action="store_true",
                        help="round and clip frames to 8-bit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="stdic", description="Spatial-temporal digital image correlation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="render a synthetic image sequence")
    sub.add_parser("analyze", parents=[common], help="measure displacement fields")
    sub.add_parser("metrics", parents=[common], help="error and strain statistics")
    rep = sub.add_parser("reproduce", parents=[common], help="run a canned experiment")
    rep.add_argument("name", help=f"one of: {', '.join(CANNED)}")
    return parser


def _config(args) -> ExperimentConfig:
    if args.command == "reproduce":
        if args.name not in CANNED:
            raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(CANNED)}")
        cfg = load_config(args.config) if args.config else canned_config(args.name)
    else:
        cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.quantize_8bit:
        cfg.noise.quantize_8bit = True
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return cfg.validate()


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"stdic: config error: {exc}", file=sys.stderr)
        return 1

    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "effective_config.json").write_text(cfg.dumps())
        if args.command == "synth":
            run_synth(cfg, out)
        elif args.command == "analyze":
            run_analyze(cfg, out, args.threads)
        elif args.command == "metrics":
            run_metrics(cfg, out)
        else:
            run_reproduce(cfg, out, args.threads)
            sys.stdout.write((out / "summary.txt").read_text())
    except (StdicError, OSError) as exc:
        print(f"stdic: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
