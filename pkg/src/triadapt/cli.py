"""Command-line entry point: ``triadapt {run, export-rank-table, verify} PATH``.

Exit codes: 0 success, 1 usage or schema error, 2 numerical failure,
3 verification mismatch.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .audit import verify_record
from .config import load_config
from .exceptions import ConfigurationError
from .experiment import export_rank_table, rank_table, run_experiment
from .records import load_record

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_MISMATCH = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _record_dirs(path):
    path = Path(path)
    if (path / "record.json").is_file() or path.name == "record.json":
        return [path]
    found = sorted(p.parent for p in path.glob("*/record.json"))
    if not found:
        raise FileNotFoundError(f"no run record under {path}")
    return found


def cmd_run(args):
    try:
        cfg = load_config(args.path)
    except (ConfigurationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        records = run_experiment(cfg, args.output_dir)
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.output_dir or cfg.output_dir
    for rec in records:
        print(f"seed {rec.seed}: run {rec.run_id[:12]} final eval loss {rec.eval_loss['final']:.6g}, "
              f"{len(rec.growth_events)} growth events -> {out}/seed_{rec.seed}")
    return EXIT_OK


def cmd_export(args):
    try:
        dirs = _record_dirs(args.path)
        for d in dirs:
            wide, long = export_rank_table(d, args.out)
            layers, roles, cells = rank_table(load_record(d).final_ranks)
            print(f"# {d}")
            print("\t".join(["layer"] + roles))
            for layer in layers:
                print("\t".join([str(layer)] + [str(cells.get((layer, r), "")) for r in roles]))
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def cmd_verify(args):
    try:
        dirs = _record_dirs(args.path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    ok = True
    for d in dirs:
        report = verify_record(d)
        print(report.summary())
        ok = ok and report.passed
    return EXIT_OK if ok else EXIT_MISMATCH


def build_parser():
    parser = _Parser(prog="triadapt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="train every seed of a config file")
    p.add_argument("path", help="YAML experiment config")
    p.add_argument("--output-dir", default=None, help="override output_dir from the config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("export-rank-table", help="write final ranks as layer x role tables")
    p.add_argument("path", help="run directory, record.json, or a directory of seed runs")
    p.add_argument("--out", default=None, help="directory for the tables (default: next to the record)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("verify", help="audit records against their checkpoints")
    p.add_argument("path", help="run directory, record.json, or a directory of seed runs")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
