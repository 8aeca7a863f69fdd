"""Command-line front end.

Exit codes: 0 success, 1 usage error (bad arguments, unreadable or invalid
config, missing input file), 2 runtime failure. The TILTOPT_OUT environment
variable, when set, overrides every --out directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from . import harness


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the documented usage code is 1
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tiltopt",
                description="Antenna-tilt Q-learning: train, evaluate, and "
                            "inspect attention.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one seeded training run")
    t.add_argument("--config", required=True, help="YAML run config")
    t.add_argument("--agent", required=True, choices=["gaq", "dqn", "ndqn"])
    t.add_argument("--seed", required=True, type=int)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--steps", type=int, default=None,
                   help="override the configured step count (smoke runs)")

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", required=True, type=int)
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--neighbors", type=int, default=None,
                   help="evaluate on a graph with this neighbor count")
    e.add_argument("--rings", type=int, default=None,
                   help="evaluate on a layout with this many site rings")
    e.add_argument("--seed", type=int, default=None,
                   help="override the evaluation environment seed")

    x = sub.add_parser("export-attention",
                       help="dump head-averaged attention for one snapshot")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--out", required=True, help="output directory")
    x.add_argument("--config", default=None,
                   help="take the environment from this config instead of "
                        "the checkpoint")
    x.add_argument("--seed", type=int, default=None)

    a = sub.add_parser("aggregate",
                       help="mean/std reward curves across run directories")
    a.add_argument("--out", required=True, help="output CSV file")
    a.add_argument("runs", nargs="+", help="run directories with metrics.csv")
    return p


def _out_dir(args) -> str:
    return os.environ.get("TILTOPT_OUT", args.out)


def _require_file(path) -> None:
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")


def _cmd_train(args) -> None:
    cfg = load_config(args.config)
    harness.train_run(cfg, args.agent, args.seed, _out_dir(args),
                      steps_override=args.steps)


def _cmd_eval(args) -> None:
    _require_file(args.checkpoint)
    harness.eval_run(args.checkpoint, _out_dir(args), args.episodes,
                     neighbors=args.neighbors, rings=args.rings,
                     seed=args.seed)


def _cmd_export(args) -> None:
    _require_file(args.checkpoint)
    sim = None
    if args.config is not None:
        sim = load_config(args.config).sim
    harness.export_attention(args.checkpoint, _out_dir(args), sim=sim,
                             seed=args.seed)


def _cmd_aggregate(args) -> None:
    for d in args.runs:
        _require_file(Path(d) / "metrics.csv")
    harness.aggregate_runs(args.runs, args.out)


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export-attention": _cmd_export,
    "aggregate": _cmd_aggregate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"tiltopt: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"tiltopt: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
