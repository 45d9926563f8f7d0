"""Command-line entry point: render the standard figures for a run."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FigureError, make_figures


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="make_figs",
        description="Render the standard figures (time-series panels, "
                    "percent-of-target heatmap, wealth histogram) from a "
                    "simulator run directory's CSV files.")
    parser.add_argument("--in", dest="run_dir", required=True,
                        metavar="RUNDIR",
                        help="run directory holding timeseries.csv, "
                             "sam_pct.csv and wealth_hist.csv")
    parser.add_argument("--out", required=True, metavar="DIR",
                        help="directory to write the images into "
                             "(created if absent)")
    parser.add_argument("--format", choices=("png", "svg"), default="png",
                        help="image format (default: png)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        written = make_figures(Path(args.run_dir), Path(args.out),
                               args.format)
    except FigureError as exc:
        print(f"make_figs: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
