"""
Command line entry point.

    seqwm [--log-level L] train --config FILE [--section.key VALUE ...]
    seqwm eval --checkpoint FILE [--config FILE] [--episodes N] [--drop-prob P]
    seqwm ablate-prediction [--config FILE] [--out FILE]
    seqwm export-traj --log FILE --out FILE
    seqwm schema

Every config key is also a flag and overrides the config file.
"""

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from seqwm.config import format_schema, from_flat, load_config, schema
from seqwm.exceptions import SeqwmError

logger = logging.getLogger("seqwm")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML config file")
    group = parser.add_argument_group("config overrides")
    for key, kind, default in schema():
        group.add_argument(f"--{key}", dest=key, default=argparse.SUPPRESS, metavar=kind.__name__.upper(),
                           help=f"default {default!r}")


def _overrides(args: argparse.Namespace) -> dict:
    keys = {key for key, _, _ in schema()}
    return {k: v for k, v in vars(args).items() if k in keys}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqwm", description="Sequential world-model planning for agent teams.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="collect and update until train.total_steps")
    _add_config_flags(train)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint with the deterministic planner")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--episodes", type=int, default=None)
    evaluate.add_argument("--drop-prob", type=float, default=None)
    _add_config_flags(evaluate)

    ablate = commands.add_parser("ablate-prediction", help="sequential vs decentralized prediction error")
    ablate.add_argument("--out", type=Path, default=None, help="CSV file for the table")
    _add_config_flags(ablate)

    export = commands.add_parser("export-traj", help="episode log to plot-ready CSV")
    export.add_argument("--log", type=Path, required=True)
    export.add_argument("--out", type=Path, required=True)

    commands.add_parser("schema", help="print every config key with its type and default")
    return parser


def _write_rows(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=[f.name for f in dataclasses.fields(rows[0])])
        writer.writeheader()
        for row in rows:
            writer.writerow(dataclasses.asdict(row))


def run(args: argparse.Namespace) -> int:
    # harness imports are deferred so `seqwm schema` stays light
    from seqwm import harness

    if args.command == "schema":
        print(format_schema())
        return 0
    if args.command == "export-traj":
        harness.export_trajectory(args.log, args.out)
        return 0

    if args.command == "eval" and args.config is None:
        # the checkpoint remembers the config it was trained with
        cfg = from_flat(_overrides(args), harness.stored_config(args.checkpoint))
    else:
        cfg = load_config(args.config, _overrides(args))
    if args.command == "train":
        summary = harness.train(cfg)
        print(json.dumps({"steps": summary.steps, "episodes": summary.episodes,
                          "checkpoint": str(summary.checkpoint)}))
    elif args.command == "eval":
        summary = harness.evaluate(args.checkpoint, cfg, episodes=args.episodes, drop_prob=args.drop_prob)
        print(json.dumps(summary.as_dict(), indent=2))
    elif args.command == "ablate-prediction":
        rows = harness.ablate_prediction(cfg)
        out = args.out or Path(cfg.output_dir) / "ablation.csv"
        _write_rows(out, rows)
        print(json.dumps([dataclasses.asdict(r) for r in rows], indent=2))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        return run(args)
    except SeqwmError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
