#!/usr/bin/env python3
"""
Command-line interface for the pytrimlab experiments.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from pytrimlab.catalog import REGISTRY, catalog, catalog_names
from pytrimlab.config import ExperimentConfig
from pytrimlab.errors import TrimLabError
from pytrimlab.experiments import RUNNERS

EXPERIMENTS = ("sweep", "spectrum", "solve", "project", "wave")


def _parse_value(text):
    """Catalog parameter values: JSON literals, otherwise plain strings."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _configure_logging(args):
    level = logging.WARNING
    if args.verbose:
        level = logging.INFO
    if args.debug:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration file")
    common.add_argument("--out", help="Output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="Random seed (overrides seed)")
    common.add_argument("--dense-cap", type=int, help="Largest dense eigenproblem size")
    common.add_argument("--jobs", type=int, help="Worker processes for sweep points")
    common.add_argument(
        "--export-matrices", action="store_true", help="Write Matrix Market files"
    )
    common.add_argument("-v", "--verbose", action="store_true", help="Log progress")
    common.add_argument("-d", "--debug", action="store_true", help="Log debug details")

    parser = argparse.ArgumentParser(
        prog="trimlab",
        description="pytrimlab - conditioning of trimmed finite element discretizations",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s catalog list                          # Named geometries and defaults
  %(prog)s catalog show ridge --param delta=0.01 # Geometry document as JSON
  %(prog)s sweep --config ridge.json --jobs 4    # Condition numbers over a delta sweep
  %(prog)s solve --config slot.json --out run1   # PCG/DPCG histories against a direct solve
        """,
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        commands.add_parser(name, parents=[common], help=f"Run the {name} experiment")

    catalog_parser = commands.add_parser("catalog", help="Inspect the geometry catalog")
    actions = catalog_parser.add_subparsers(dest="action", required=True)
    actions.add_parser("list", help="List geometries and their default parameters")
    show = actions.add_parser("show", help="Print a geometry document")
    show.add_argument("name", help="Geometry name")
    show.add_argument(
        "--param",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Builder parameter (repeatable)",
    )
    return parser


def _catalog_command(args):
    if args.action == "list":
        for name in catalog_names():
            _, defaults = REGISTRY[name]
            params = ", ".join(f"{k}={v!r}" for k, v in sorted(defaults.items()))
            print(f"{name:<18} {params}")
        return 0

    params = {}
    for item in args.param:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"Error: parameter '{item}' is not KEY=VALUE.", file=sys.stderr)
            return 1
        params[key] = _parse_value(value)
    geometry = catalog(args.name, **params)
    print(json.dumps(geometry.to_dict(), indent=2, sort_keys=True))
    return 0


def _experiment_command(args):
    _configure_logging(args)
    if args.config:
        config_path = Path(args.config)
        if not config_path.exists():
            print(f"Error: Config file '{args.config}' not found.", file=sys.stderr)
            return 1
        config = ExperimentConfig.load(config_path)
    else:
        config = ExperimentConfig()

    config = config.with_overrides(
        experiment=args.command,
        output_dir=args.out,
        seed=args.seed,
        dense_cap=args.dense_cap,
        jobs=args.jobs,
        export_matrices=True if args.export_matrices else None,
    )
    result = RUNNERS[args.command](config)
    print(f"{args.command} finished. Config hash {config.config_hash()}")
    for path in result.outputs:
        print(f"  wrote {path}")
    return 0


def main(argv=None):
    """Command-line interface for pytrimlab."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "catalog":
            return _catalog_command(args)
        return _experiment_command(args)
    except TrimLabError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
