"""Command line: ``slrprune <subcommand> [--config FILE] [--field value ...]``.

Exit codes: 0 success, 1 configuration error, 2 non-finite values during a
run, 3 accuracy threshold not reached (only with ``--require-threshold``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .config import field_help, field_names, field_type, load_config
from .exceptions import CheckpointError, ConfigError, IdxFormatError, NonFiniteError

EXIT_OK, EXIT_CONFIG, EXIT_NONFINITE, EXIT_THRESHOLD = 0, 1, 2, 3

SUBCOMMANDS = {
    "train": "train the dense baseline and save baseline.ckpt",
    "prune": "prune the baseline with --method (slr, admm or baseline)",
    "retrain": "masked retraining of a pruned checkpoint",
    "evaluate": "accuracy and compression rate of a checkpoint",
    "compare": "paired ADMM/SLR runs from one baseline; writes summary.tsv",
    "ablate": "one SLR run per value of --param; one metrics log per value",
    "report": "summarize every metrics log in the output directory",
}


class _ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_fields(parser):
    group = parser.add_argument_group("configuration overrides")
    for name in field_names():
        help_text, choices, default = field_help(name)
        flag = "--" + name.replace("_", "-")
        aliases = [flag] if "_" not in name else [flag, "--" + name]
        group.add_argument(*aliases, dest=f"cfg_{name}", metavar=field_type(name).__name__.upper(),
                           choices=choices, default=None,
                           help=f"{help_text} (default: {default})")


def build_parser():
    parser = _ArgParser(prog="slrprune", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgParser)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, allow_abbrev=False)
        p.add_argument("--config", help="INI-style config file ([section] key = value)")
        if name in ("prune", "compare"):
            p.add_argument("--require-threshold", action="store_true",
                           help="exit 3 unless the pruned accuracy reached baseline - threshold_drop")
        if name == "ablate":
            p.add_argument("--param", required=True, choices=experiments.ABLATABLE,
                           help="parameter to vary")
            p.add_argument("--values", required=True, help="comma-separated values")
        _add_fields(p)
    return parser


def _print_table(rows, columns):
    print("\t".join(columns))
    for row in rows:
        print("\t".join(experiments.fmt(row.get(c)) for c in columns))


def _dispatch(args, config):
    command = args.command
    if command == "train":
        _, accuracy = experiments.run_train(config)
        print(f"baseline accuracy {accuracy:.4f}")
        return EXIT_OK
    if command == "prune":
        outcome, base_acc = experiments.run_prune(config)
        print(json.dumps({"method": outcome.method, "baseline_accuracy": base_acc,
                          "hardprune_accuracy": outcome.hardprune_accuracy,
                          "compression_rate": outcome.compression_rate,
                          "epochs_to_threshold": outcome.epochs_to_threshold}))
        if args.require_threshold and not outcome.reached:
            return EXIT_THRESHOLD
        return EXIT_OK
    if command == "retrain":
        before, after = experiments.run_retrain(config)
        print(f"hardprune accuracy {before:.4f} -> retrained {after:.4f}")
        return EXIT_OK
    if command == "evaluate":
        print(json.dumps(experiments.run_evaluate(config)))
        return EXIT_OK
    if command == "compare":
        row, outcomes = experiments.run_compare(config)
        _print_table([row], experiments.SUMMARY_COLUMNS)
        if args.require_threshold and not all(o.reached for o in outcomes.values()):
            return EXIT_THRESHOLD
        return EXIT_OK
    if command == "ablate":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("ablate.values", "at least one value is required")
        rows = experiments.run_ablate(config, args.param, values)
        _print_table(rows, ("param", "value", "slr_acc", "epochs_to_threshold"))
        return EXIT_OK
    rows, columns = experiments.run_report(config)
    _print_table(rows, columns)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    try:
        config = load_config(args.config, overrides).validate()
        return _dispatch(args, config)
    except (ConfigError, IdxFormatError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
