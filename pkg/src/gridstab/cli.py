"""``gridstab`` command line: one subcommand per pipeline stage.

Exit status is 0 on success. Failures print one JSON error record
``{"error": ..., "message": ..., "command": ...}`` to stderr and exit with 2
for input, configuration and data errors or 1 for anything unexpected.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import GridStabError
from .evaluation import BENCHMARK
from .ml import KINDS


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON pipeline config")
    common.add_argument("--out", default="gridstab-out", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, help="global seed; overrides the config")
    common.add_argument("--workers", type=int,
                        help=f"parallel jobs (default: config, then ${pipeline.WORKERS_ENV}, then 1)")
    common.add_argument("--family", action="append",
                        help="restrict to this family; repeatable (default: every configured family)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gridstab", description="Line-failure desynchronisation screening pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="draw grid ensembles")
    sub.add_parser("simulate", parents=[common], help="label every single-line failure")
    sub.add_parser("featurize", parents=[common], help="compute line features and join labels")
    for name, text in (("train", "tune and fit a model on a whole family"),
                       ("evaluate", "cross-validated AP, curves and importances")):
        sp = sub.add_parser(name, parents=[common], help=text)
        choices = KINDS + ((BENCHMARK,) if name == "evaluate" else ())
        sp.add_argument("--model", choices=choices, action="append", help="model kind; repeatable (default: all)")
    sp = sub.add_parser("transfer", parents=[common], help="train on one family, score another")
    sp.add_argument("--pair", nargs=2, action="append", metavar=("TRAIN", "TEST"),
                    help="family pair; repeatable (default: pairs from the config)")
    sp = sub.add_parser("reproduce", parents=[common], help="write plot-data CSVs")
    sp.add_argument("--figure", choices=pipeline.FIGURES, action="append", help="repeatable (default: config)")
    sub.add_parser("pipeline", parents=[common], help="run every stage")
    return p


def _families(args, config) -> list[str]:
    fams = args.family or list(config.families)
    unknown = [f for f in fams if f not in config.families]
    if unknown:
        # a family named only on the command line runs with its default scenario
        for f in unknown:
            config.families[f] = {}
        config.__post_init__()
    return fams


def run_command(args) -> object:
    config = pipeline.load_config(args.config, args.seed)
    run = pipeline.Run(config, args.out, args.workers)
    fams = _families(args, config)
    cmd = args.command
    if cmd in ("generate", "simulate", "featurize"):
        fn = getattr(pipeline, f"cmd_{cmd}")
        return [str(fn(run, f)) for f in fams]
    if cmd in ("train", "evaluate"):
        fn = getattr(pipeline, f"cmd_{cmd}")
        kinds = args.model or (list(config.kinds) + ([BENCHMARK] if cmd == "evaluate" else []))
        return [str(fn(run, f, k)) for f in fams for k in kinds]
    if cmd == "transfer":
        pairs = [tuple(p) for p in args.pair] if args.pair else None
        for p in pairs or []:
            _families(argparse.Namespace(family=list(p)), config)
        return str(pipeline.cmd_transfer(run, pairs))
    if cmd == "reproduce":
        figs = args.figure or list(config.figures)
        return [str(p) for fig in figs for p in pipeline.cmd_reproduce(run, fig, fams)]
    if cmd == "pipeline":
        return str(pipeline.cmd_pipeline(run, fams))
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run_command(args)
    except GridStabError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc), "command": args.command}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort error record
        logging.getLogger(__name__).debug("unexpected failure", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, "outputs": result}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
