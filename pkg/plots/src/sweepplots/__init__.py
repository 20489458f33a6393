"""Contour rendering for forecast-improvement sweep CSV files.

A sweep file has a header naming its two axes followed by the fixed columns
cost_no_forecast, cost_forecast, D_percent, status, with one row per grid
cell in row-major order over (axis1, axis2). Cells whose status is not "ok"
carry no usable value and render as blank regions.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FIXED_COLUMNS = ("cost_no_forecast", "cost_forecast", "D_percent", "status")


class SweepFormatError(ValueError):
    """The file does not follow the sweep CSV schema."""


@dataclass(frozen=True)
class SweepGrid:
    """Parsed sweep: axis names, axis values, and the D matrix in percent.

    d has shape (len(values1), len(values2)); cells without a valid value
    are NaN.
    """

    axis1: str
    axis2: str
    values1: np.ndarray
    values2: np.ndarray
    d: np.ndarray


def parse_sweep_csv(path: str | Path) -> SweepGrid:
    path = Path(path)
    lines = path.read_text().strip().split("\n")
    if not lines:
        raise SweepFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) != 6 or tuple(header[2:]) != FIXED_COLUMNS:
        raise SweepFormatError(
            f"{path}: header must be '<axis1>,<axis2>,{','.join(FIXED_COLUMNS)}', "
            f"got {lines[0]!r}"
        )
    axis1, axis2 = header[0], header[1]
    v1_list: list[float] = []
    v2_list: list[float] = []
    cells: list[tuple[float, float, float]] = []
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 6:
            raise SweepFormatError(f"{path}:{ln}: expected 6 fields, got {len(parts)}")
        try:
            v1, v2 = float(parts[0]), float(parts[1])
            d = float(parts[4])
        except ValueError as exc:
            raise SweepFormatError(f"{path}:{ln}: unparsable number: {exc}") from exc
        if parts[5] != "ok":
            d = np.nan
        if v1 not in v1_list:
            v1_list.append(v1)
        if len(v1_list) == 1:
            v2_list.append(v2)
        cells.append((v1, v2, d))
    n1, n2 = len(v1_list), len(v2_list)
    if n1 * n2 != len(cells):
        raise SweepFormatError(
            f"{path}: {len(cells)} rows do not form a {n1} x {n2} row-major grid"
        )
    d = np.full((n1, n2), np.nan)
    for idx, (v1, v2, val) in enumerate(cells):
        i, j = idx // n2, idx % n2
        if v1 != v1_list[i] or v2 != v2_list[j]:
            raise SweepFormatError(f"{path}: grid is not row-major over its axes")
        d[i, j] = val
    return SweepGrid(axis1, axis2, np.array(v1_list), np.array(v2_list), d)


def tau0_from_config_echo(csv_path: str | Path) -> float | None:
    """Equilibrium setpoint from the effective-config echo next to the CSV."""
    echo = Path(csv_path).parent / "effective_config.ini"
    if not echo.exists():
        return None
    cp = configparser.ConfigParser()
    cp.read(echo)
    if cp.has_section("derived") and "tau0" in cp["derived"]:
        return cp["derived"].getfloat("tau0")
    return None


def draw_panel(ax, grid: SweepGrid, tau0: float | None, levels: int = 10):
    """Filled contours of D on one axes; returns the contour set.

    The setpoint axis, when present, is drawn horizontally with a dashed
    vertical line at tau0. Missing cells stay blank.
    """
    if grid.axis2 == "tau" and grid.axis1 != "tau":
        grid = SweepGrid(grid.axis2, grid.axis1, grid.values2, grid.values1, grid.d.T)
    x, y = grid.values1, grid.values2
    z = np.ma.masked_invalid(grid.d.T)  # contourf wants (len(y), len(x))
    finite = grid.d[np.isfinite(grid.d)]
    if finite.size == 0:
        raise SweepFormatError("no valid cells to contour")
    lo, hi = float(finite.min()), float(finite.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    contour_levels = np.linspace(lo, hi, levels)
    cs = ax.contourf(x, y, z, levels=contour_levels, extend="neither")
    ax.set_xlabel(grid.axis1)
    ax.set_ylabel(grid.axis2)
    if grid.axis1 == "tau":
        if tau0 is None:
            raise SweepFormatError(
                "tau axis present but no tau0 available; pass --tau0 or keep "
                "effective_config.ini next to the CSV"
            )
        ax.axvline(tau0, linestyle="--", color="black", linewidth=1.0)
    return cs


def render(csv_paths: list[str | Path], out_path: str | Path, tau0: float | None = None, dpi: int = 150):
    """Render one figure with one panel per CSV; returns the Figure.

    Identical inputs produce identical figures (up to file metadata).
    """
    import matplotlib.pyplot as plt

    if not csv_paths:
        raise SweepFormatError("need at least one CSV")
    count = len(csv_paths)
    ncols = 1 if count == 1 else 2
    nrows = (count + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(5.2 * ncols, 4.2 * nrows), squeeze=False)
    for idx, path in enumerate(csv_paths):
        ax = axes[idx // ncols][idx % ncols]
        grid = parse_sweep_csv(path)
        t0 = tau0 if tau0 is not None else tau0_from_config_echo(path)
        cs = draw_panel(ax, grid, t0)
        fig.colorbar(cs, ax=ax, label="D (%)")
    for idx in range(count, nrows * ncols):
        axes[idx // ncols][idx % ncols].set_axis_off()
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi)
    return fig
