"""Command line entry point: ``anosov <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import AmbiguityError, AnosovError
from .experiments import ExperimentConfig, run, run_enumerate
from .fitting import dumps
from .fixtures import FIXTURES
from .words import CACHE_ENV, save_table

# subcommand -> experiment kind
SUBCOMMANDS = {
    "enumerate": "enumerate",
    "limit-cone": "limit-cone",
    "growth-indicator": "growth-indicator",
    "count": "cone-count",
    "bisector": "bisector-count",
    "symmetric-count": "symmetric-count",
    "ps-measure": "ps-measure",
    "verify": "verify",
}

EXIT_OK, EXIT_FAILED, EXIT_ERROR, EXIT_ABORTED = 0, 1, 2, 3


def _param(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anosov",
        description="Cartan projections, limit cones and orbit counting experiments "
                    "for Anosov subgroups of products of SL(n, R).")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, kind in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {kind} experiment")
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--fixture", choices=sorted(FIXTURES),
                       help="use a built-in generator fixture instead of the configured group")
        p.add_argument("--depth", type=int, help="word length L of the enumerated ball")
        p.add_argument("--out", type=Path, help="output directory (default: print the report only)")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--threads", type=int, help="worker count")
        p.add_argument("--cache-dir", help=f"orbit table cache (overrides {CACHE_ENV})")
        p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=JSON",
                       help="set an experiment parameter, e.g. --param aperture=0.1")
        p.add_argument("--scatter", action="store_true", help="also write scatter.svg")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    kind = SUBCOMMANDS[args.command]
    data = json.loads(args.config.read_text()) if args.config else {}
    if not isinstance(data, dict):
        data = {}
    experiment = dict(data.get("experiment") or {})
    experiment["kind"] = kind
    params = dict(experiment.get("params") or {})
    params.update(dict(args.param))
    experiment["params"] = params
    data["experiment"] = experiment
    if args.fixture:
        data["group"] = {"fixture": args.fixture}
    for key in ("depth", "seed", "threads"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    cache = args.cache_dir or data.get("cache_dir") or os.environ.get(CACHE_ENV)
    data["cache_dir"] = cache
    return ExperimentConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if cfg.kind == "enumerate":
            result, table = run_enumerate(cfg)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                save_table(table, args.out / "ball.bin")
        else:
            result = run(cfg)
    except AmbiguityError as exc:
        print(f"anosov: aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except (AnosovError, OSError, json.JSONDecodeError) as exc:
        print(f"anosov: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.out:
        result.write(args.out, scatter=args.scatter)
    print(dumps(result.report))
    return EXIT_OK if result.passed else EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
