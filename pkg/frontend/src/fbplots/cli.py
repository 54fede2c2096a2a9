"""Standalone figure command.

    fbplots --kind sigma_vs_x --out fig3.png random.csv superlattice.csv
    fbplots --kind sigma_vs_alpha --xscale log --yscale log --out fig4.png \
            y010.csv y005.csv y001.csv

Exit codes: 0 written, 1 unexpected failure, 2 bad inputs (unknown
columns, empty file, unusable rows; the message names the columns).
"""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, SCALES, FigureSpec, render
from .io import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbplots",
        description="Render figures from fbtransport output files.",
    )
    parser.add_argument("inputs", nargs="+", help="output files (.csv or .json)")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--out", required=True, help="image path to write")
    parser.add_argument("--xscale", default="linear", choices=SCALES)
    parser.add_argument("--yscale", default="linear", choices=SCALES)
    parser.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        inputs=tuple(args.inputs),
        kind=args.kind,
        out_path=args.out,
        xscale=args.xscale,
        yscale=args.yscale,
    )
    try:
        path = render(spec)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: {err}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
