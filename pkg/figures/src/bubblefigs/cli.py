"""Command-line figure renderer.

    bubblefigs render --kind price_paths --input plot_data/prices.csv --out fig.svg
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .render import FIGURE_KINDS, FigureInputError, PlotSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubblefigs")
    sub = parser.add_subparsers(dest="command", required=True)
    p_render = sub.add_parser("render", help="render one figure from plot-data files")
    p_render.add_argument("--kind", required=True, choices=list(FIGURE_KINDS))
    p_render.add_argument("--input", action="append", required=True, dest="inputs")
    p_render.add_argument("--out", required=True)
    p_render.add_argument("--title", default="")
    p_render.add_argument("--x", default="rd", dest="x_column")
    p_render.add_argument("--y", default="iqr", dest="y_column")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(
            kind=args.kind, inputs=args.inputs, output=args.out,
            title=args.title, x_column=args.x_column, y_column=args.y_column,
        )
        manifest = render(spec)
    except FigureInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out} ({manifest['kind']}, {len(manifest['inputs'])} input file(s))")
    return 0


if __name__ == "__main__":
    sys.exit(main())
