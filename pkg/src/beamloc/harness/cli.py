"""Command-line entry point: ``beamloc simulate|train|evaluate|smooth|report``.

On failure the last stderr line is a JSON object
``{"error": <type>, "command": <name>, "message": <text>}`` and the exit code
is nonzero (2 configuration, 3 data, 4 I/O, 5 training aborted).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..attnet import ConfigError
from . import commands
from .config import ExperimentConfig
from .dataset import DatasetError

EXIT_CODES = [
    (ConfigError, 2),
    (commands.TrainingAborted, 5),
    (DatasetError, 3),
    (OSError, 4),
    (ValueError, 3),
]


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: run)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="beamloc", description="Beam-fingerprint positioning pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="synthesize a dataset into <out>/dataset")
    t = sub.add_parser("train", parents=[common], help="train and write <out>/checkpoint")
    t.add_argument("--dataset", type=Path, help="dataset directory (default: <out>/dataset)")
    e = sub.add_parser("evaluate", parents=[common], help="score the held-out lap")
    e.add_argument("--dataset", type=Path)
    e.add_argument("--checkpoint", type=Path, help="checkpoint stem (default: <out>/checkpoint)")
    s = sub.add_parser("smooth", parents=[common], help="Kalman-filter <out>/estimates.csv")
    s.add_argument("--estimates", type=Path)
    s.add_argument("--eps1", type=float)
    s.add_argument("--eps2", type=float)
    sub.add_parser("report", parents=[common], help="render SVG plots from <out>")
    return p


def run(args) -> object:
    out = args.out
    if args.command == "simulate":
        return commands.cmd_simulate(_config(args), out)
    if args.command == "train":
        return commands.cmd_train(_config(args), out, args.dataset)
    if args.command == "evaluate":
        res = commands.cmd_evaluate(out, args.checkpoint, args.dataset)
        print(f"rmse {res['rmse']:.4f} m")
        return res
    if args.command == "smooth":
        cfg = _config(args)
        eps1 = args.eps1 if args.eps1 is not None else cfg.eps1
        eps2 = args.eps2 if args.eps2 is not None else cfg.eps2
        rep = commands.cmd_smooth(args.estimates or out / "estimates.csv", out, eps1, eps2)
        print(f"raw rmse {rep['raw_rmse']:.4f} m, filtered rmse {rep['filtered_rmse']:.4f} m")
        return rep
    return commands.cmd_report(out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        run(args)
    except Exception as e:
        for kind, code in EXIT_CODES:
            if isinstance(e, kind):
                break
        else:
            raise
        print(json.dumps({"error": type(e).__name__, "command": args.command, "message": str(e)}),
              file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
