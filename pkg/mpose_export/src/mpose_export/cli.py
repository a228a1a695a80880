"""Command-line entry point: one `export` subcommand.

Failures print a single "error:<category>: message" line to stderr and
exit nonzero, matching the consumer CLI's convention.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError
from .export import DETECTOR_WIDTHS, SPLITS, export


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error:usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mpose-export",
                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser(
        "export", help="write one split as a POSEPACK v1 directory",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--split", type=int, required=True, choices=SPLITS,
                   help="published train/test partition scheme")
    p.add_argument("--detector", required=True,
                   choices=sorted(DETECTOR_WIDTHS),
                   help="upstream pose detector whose features to export")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        counts = export(args.split, args.detector, args.out,
                        force=args.force)
    except ExportError as err:
        print(f"error:{err.category}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error:io: {err}", file=sys.stderr)
        return 1
    parts = ", ".join(f"{counts[p]} {p}" for p in ("train", "val", "test"))
    print(f"wrote {counts['total']} samples ({parts}) -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
