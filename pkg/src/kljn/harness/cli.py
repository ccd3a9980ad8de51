"""Command line entry point: ``kljn run <config>`` and per-experiment aliases."""

from __future__ import annotations

import argparse
import sys
from importlib import resources

from .config import EXPERIMENTS, ConfigError, load_config, parse_config
from .experiments import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def default_config_text(experiment):
    """Shipped TOML for ``experiment``."""
    return resources.files("kljn.harness").joinpath("defaults", f"{experiment}.toml").read_text("utf-8")


def _add_overrides(p):
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--out", help="directory for CSV and summary files")
    p.add_argument("--trials", type=int, help="override n_trials")
    p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")


def build_parser():
    parser = argparse.ArgumentParser(prog="kljn", description="KLJN key exchange simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment named in a config file")
    run.add_argument("config", help="path to a TOML config")
    _add_overrides(run)
    for name in EXPERIMENTS:
        alias = sub.add_parser(name, help=f"run {name} (shipped defaults unless --config is given)")
        alias.add_argument("--config", help="path to a TOML config; its experiment key is overridden")
        _add_overrides(alias)
    show = sub.add_parser("show-config", help="print the shipped config of an experiment")
    show.add_argument("experiment", choices=EXPERIMENTS)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "show-config":
        sys.stdout.write(default_config_text(args.experiment))
        return EXIT_OK
    try:
        if args.command == "run":
            config = load_config(args.config)
        elif args.config:
            config = load_config(args.config).replace(experiment=args.command)
        else:
            config = parse_config(default_config_text(args.command))
        changes = {}
        if args.seed is not None:
            changes["master_seed"] = args.seed
        if args.trials is not None:
            changes["n_trials"] = args.trials
        if args.workers is not None:
            changes["workers"] = args.workers
        if changes:
            config = config.replace(**changes)
        from .config import validate

        validate(config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_experiment(config, out_dir=args.out)
    except Exception as exc:  # noqa: BLE001 - any module failure maps to exit 2
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(report.summary_text())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
