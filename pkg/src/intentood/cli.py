"""Command-line entry point: ``intentood run`` and ``intentood compare``."""

import argparse
import json
import logging
import sys

from .errors import IntentOODError
from .harness import MODES, ExperimentConfig, compare, format_delta_table, load_report, run


def _apply_override(raw, assignment):
    """Apply ``section.key=value`` (value parsed as JSON when possible)."""
    key, sep, value = assignment.partition("=")
    if not sep:
        raise IntentOODError(f"--set expects key=value, got {assignment!r}")
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass
    *path, leaf = key.split(".")
    node = raw
    for part in path:
        node = node.setdefault(part, {})
    node[leaf] = value


def _build_config(args):
    raw = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            raw = json.load(f)
    for flag in ("mode", "data", "seed", "out"):
        value = getattr(args, flag)
        if value is not None:
            raw[flag] = value
    for assignment in args.set or []:
        _apply_override(raw, assignment)
    return ExperimentConfig.from_dict(raw)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="intentood", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--mode", help=f"one of {', '.join(MODES)}")
    p_run.add_argument("--data", help="path to a CLINC150-style data_full.json")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, e.g. train.epochs=5")

    p_cmp = sub.add_parser("compare", help="metric deltas between two reports (b - a)")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            report = run(_build_config(args))
            metrics = (report.get("metrics") or {}).get("percent", {})
            print(json.dumps({"test_ind_accuracy": report["test_ind_accuracy"], **metrics}))
        else:
            rows = compare(load_report(args.report_a), load_report(args.report_b))
            print(format_delta_table(rows))
    except (IntentOODError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
