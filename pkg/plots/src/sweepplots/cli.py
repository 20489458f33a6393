"""`render`: contour figures from sweep CSV files.

render --csv PATH [--csv PATH ...] --out PATH [--tau0 FLOAT] [--raster]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib

from . import SweepFormatError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render", description="Render improvement contours from sweep CSVs."
    )
    parser.add_argument(
        "--csv", action="append", required=True, type=Path,
        help="sweep CSV; repeat for a multi-panel composite",
    )
    parser.add_argument("--out", required=True, type=Path, help="output image path")
    parser.add_argument(
        "--tau0", type=float, default=None,
        help="equilibrium setpoint for the dashed line on a tau axis "
        "(default: read from effective_config.ini next to the CSV)",
    )
    parser.add_argument(
        "--raster", action="store_true",
        help="force raster output (.png) instead of vector graphics",
    )
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args(argv)
    matplotlib.use("Agg")
    out = args.out
    if args.raster and out.suffix.lower() != ".png":
        out = out.with_suffix(".png")
    try:
        render(args.csv, out, tau0=args.tau0, dpi=args.dpi)
    except (SweepFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
