"""Build the three standard figures from a run directory's CSV files.

Everything here binds to the delimited file formats alone: the time
series columns, the percent matrix with blank cells where the target
table has no entry, and the wealth histogram rows.  The simulator
itself is never imported, so the figures can be rebuilt from archived
run directories long after the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FigureError(Exception):
    """A run directory file is missing, truncated, or malformed."""


@dataclass(frozen=True)
class FigureSpec:
    """What one figure consumes and produces.

    ``inputs`` are filenames relative to the run directory; a figure is
    refused (with a diagnostic naming the file and the offending column
    or row) rather than rendered from incomplete data.
    """

    name: str
    inputs: tuple[str, ...]
    panels: int
    title: str


FIGURES: tuple[FigureSpec, ...] = (
    FigureSpec("fig2", ("timeseries.csv",), 8,
               "monthly evolution of the economy"),
    FigureSpec("fig3", ("sam_pct.csv",), 1,
               "recorded flows as % of target"),
    FigureSpec("fig4", ("wealth_hist.csv",), 1,
               "household wealth distribution"),
)

# fixed time-series columns every run directory must provide; the
# per-sector employment columns are discovered by their emp_ prefix
TIMESERIES_COLUMNS = ("month", "unemployment_pct", "hh_cons", "gov_cons",
                      "ext_cons", "ic_total", "inv_goods", "inv_inputs",
                      "hh_wealth")


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise FigureError(f"{path}: no such file")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise FigureError(f"{path}: file is empty")
    return lines


def _parse_number(field: str, path: Path, lineno: int, column: str) -> float:
    try:
        return float(field)
    except ValueError:
        raise FigureError(f"{path} line {lineno}, column {column}: "
                          f"could not parse {field!r} as a number") from None


@dataclass
class TimeSeries:
    months: list[float]
    columns: dict[str, list[float]]   # the fixed columns
    employment: dict[str, list[float]]  # sector name -> series


def load_timeseries(path: Path) -> TimeSeries:
    lines = _read_lines(path)
    header = lines[0].split(",")
    missing = [c for c in TIMESERIES_COLUMNS if c not in header]
    if missing:
        raise FigureError(
            f"{path}: missing required column(s): {', '.join(missing)}")
    emp_cols = [c for c in header if c.startswith("emp_")]
    if not emp_cols:
        raise FigureError(f"{path}: no per-sector employment columns (emp_*)")
    if len(lines) < 2:
        raise FigureError(f"{path}: expected at least 1 data row, found 0")
    idx = {c: header.index(c) for c in header}
    columns: dict[str, list[float]] = {c: [] for c in TIMESERIES_COLUMNS}
    employment: dict[str, list[float]] = {c[len("emp_"):]: [] for c in emp_cols}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(header):
            raise FigureError(f"{path} line {lineno}: expected "
                              f"{len(header)} fields, found {len(fields)}")
        for c in TIMESERIES_COLUMNS:
            columns[c].append(_parse_number(fields[idx[c]], path, lineno, c))
        for c in emp_cols:
            employment[c[len("emp_"):]].append(
                _parse_number(fields[idx[c]], path, lineno, c))
    return TimeSeries(months=columns["month"], columns=columns,
                      employment=employment)


def load_percent_matrix(path: Path) -> tuple[list[str], np.ndarray]:
    """Accounts and the percent matrix, NaN where cells are blank."""
    lines = _read_lines(path)
    accounts = lines[0].split(",")[1:]
    if not accounts:
        raise FigureError(f"{path}: header names no accounts")
    n = len(accounts)
    if len(lines) - 1 != n:
        raise FigureError(f"{path}: header names {n} accounts but the file "
                          f"has {len(lines) - 1} data rows")
    matrix = np.full((n, n), np.nan)
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        if len(fields) != n + 1:
            raise FigureError(f"{path} line {i + 2} ({fields[0]}): expected "
                              f"{n + 1} fields, found {len(fields)}")
        for j, field in enumerate(fields[1:]):
            if field.strip() == "":
                continue
            matrix[i, j] = _parse_number(field, path, i + 2, accounts[j])
    return accounts, matrix


@dataclass
class WealthHistogram:
    edges: list[float]     # len(counts) + 1 bin edges
    counts: list[float]
    stats: dict[str, float]  # trailing name,value rows such as gini


def load_wealth_histogram(path: Path) -> WealthHistogram:
    lines = _read_lines(path)
    header = lines[0].split(",")
    if header[:3] != ["bin_low", "bin_high", "count"]:
        raise FigureError(f"{path}: expected header bin_low,bin_high,count, "
                          f"got {lines[0]!r}")
    edges: list[float] = []
    counts: list[float] = []
    stats: dict[str, float] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        try:
            low = float(fields[0])
        except ValueError:
            # first field is a name: a summary-statistic footer row
            if len(fields) != 2:
                raise FigureError(f"{path} line {lineno}: expected "
                                  f"name,value, got {line!r}") from None
            stats[fields[0]] = _parse_number(fields[1], path, lineno,
                                             fields[0])
            continue
        if len(fields) != 3:
            raise FigureError(f"{path} line {lineno}: expected "
                              f"bin_low,bin_high,count, got {line!r}")
        high = _parse_number(fields[1], path, lineno, "bin_high")
        counts.append(_parse_number(fields[2], path, lineno, "count"))
        if not edges:
            edges.append(low)
        edges.append(high)
    if not counts:
        raise FigureError(f"{path}: expected at least 1 histogram bin, found 0")
    return WealthHistogram(edges=edges, counts=counts, stats=stats)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _plot(ax, xs, ys, **kwargs):
    # a single-month series still renders: mark the point, since a line
    # segment needs two of them
    marker = "o" if len(xs) < 2 else None
    ax.plot(xs, ys, lw=0.9, marker=marker, markersize=3, **kwargs)


def _render_fig2(ts: TimeSeries, path: Path) -> None:
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(4, 2, figsize=(11, 12), sharex=True)
    (a, b), (c, d), (e, f), (g, h) = axes
    months = ts.months

    _plot(a, months, ts.columns["unemployment_pct"])
    a.set_title("(a) unemployment", fontsize=10)
    a.set_ylabel("% of labor force")

    for name, series in ts.employment.items():
        _plot(b, months, series, label=name)
    b.set_title("(b) employees per sector", fontsize=10)
    b.set_ylabel("employees")
    b.legend(fontsize=6, ncol=2)

    _plot(c, months, ts.columns["hh_cons"])
    c.set_title("(c) households' consumption", fontsize=10)
    c.set_ylabel("per month")

    _plot(d, months, ts.columns["gov_cons"])
    d.set_title("(d) government", fontsize=10)
    d.set_ylabel("per month")

    _plot(e, months, ts.columns["ext_cons"])
    e.set_title("(e) external sector", fontsize=10)
    e.set_ylabel("per month")

    _plot(f, months, ts.columns["ic_total"])
    f.set_title("(f) intermediate consumption", fontsize=10)
    f.set_ylabel("per month")

    _plot(g, months, ts.columns["inv_goods"], label="goods for sale")
    _plot(g, months, ts.columns["inv_inputs"], label="inputs")
    g.set_title("(g) inventories", fontsize=10)
    g.set_ylabel("value held")
    g.set_xlabel("month")
    g.legend(fontsize=7)

    _plot(h, months, ts.columns["hh_wealth"])
    h.set_title("(h) households' wealth", fontsize=10)
    h.set_ylabel("total")
    h.set_xlabel("month")

    fig.tight_layout()
    _save(fig, path)


def _render_fig3(accounts: list[str], matrix: np.ndarray, path: Path) -> None:
    import matplotlib.pyplot as plt

    n = len(accounts)
    fig, ax = plt.subplots(figsize=(0.55 * n + 3.0, 0.5 * n + 2.5))
    data = np.ma.masked_invalid(matrix)
    cmap = plt.get_cmap("RdYlGn").copy()
    cmap.set_bad(color="white")
    im = ax.imshow(data, cmap=cmap, vmin=50.0, vmax=150.0)
    ax.set_xticks(range(n))
    ax.set_xticklabels(accounts, rotation=90, fontsize=7)
    ax.set_yticks(range(n))
    ax.set_yticklabels(accounts, fontsize=7)
    ax.set_xlabel("buyer (column) account")
    ax.set_ylabel("seller (row) account")
    mask = np.ma.getmaskarray(data)
    if n <= 24:
        for i in range(n):
            for j in range(n):
                if not mask[i, j]:
                    ax.text(j, i, f"{matrix[i, j]:.0f}", ha="center",
                            va="center", fontsize=5)
    fig.colorbar(im, ax=ax, label="% of target", shrink=0.8)
    fig.tight_layout()
    _save(fig, path)


def _render_fig4(hist: WealthHistogram, path: Path) -> None:
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    edges = np.asarray(hist.edges)
    ax.bar(edges[:-1], hist.counts, width=np.diff(edges), align="edge",
           edgecolor="black", lw=0.4)
    ax.set_xlabel("household wealth")
    ax.set_ylabel("households")
    label = ", ".join(f"{k} {v:.3g}" for k, v in sorted(hist.stats.items()))
    ax.set_title(label or "household wealth distribution", fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def _save(fig, path: Path) -> None:
    import matplotlib.pyplot as plt

    # SVG output embeds a creation date and salts its element ids;
    # silence both so identical inputs give identical bytes
    meta = {"Date": None} if path.suffix == ".svg" else None
    fig.savefig(path, dpi=150, metadata=meta)
    plt.close(fig)


def make_figures(run_dir: Path, out_dir: Path, fmt: str = "png") -> list[Path]:
    """Render every figure from ``run_dir``'s CSVs into ``out_dir``.

    Returns the written image paths.  Raises :class:`FigureError` when a
    required file is missing or malformed; the run directory itself is
    never written to.
    """
    if fmt not in ("png", "svg"):
        raise FigureError(f"unsupported format {fmt!r} (png or svg)")
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FigureError(f"no such run directory: {run_dir}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "samfigs"

    # parse every input up front so a malformed file refuses the whole
    # batch before anything is written
    ts = load_timeseries(run_dir / "timeseries.csv")
    accounts, matrix = load_percent_matrix(run_dir / "sam_pct.csv")
    hist = load_wealth_histogram(run_dir / "wealth_hist.csv")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for spec, render in ((FIGURES[0], lambda p: _render_fig2(ts, p)),
                         (FIGURES[1], lambda p: _render_fig3(accounts, matrix, p)),
                         (FIGURES[2], lambda p: _render_fig4(hist, p))):
        path = out_dir / f"{spec.name}.{fmt}"
        render(path)
        written.append(path)
    return written
