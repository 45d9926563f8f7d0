"""Double-entry flow ledger, SAM reconstruction and report emission.

Every money movement in the simulation is recorded against a pair of SAM
accounts (receiver row, spender column) plus a kind tag.  The ledger keeps
monthly aggregates: a cell matrix per month, gross volume and net
money-supply effect per kind, and a running chain hash so two runs can be
compared for bit-identical trajectories without storing individual entries.

Reports derived here are the computed SAM over a trailing window, the
percent comparison against a target table, the monthly time series, the
wealth histogram and the money conservation audit.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from samdeploy.sam import SamTable

AUDIT_RTOL = 1e-9

# Kinds whose flows cross the boundary of audited money (household, firm,
# government and investment-pool balances).  Positive means the flow adds
# to audited money.  Everything else is internal and nets to zero.
KIND_EXPECTED_SIGN = {
    "loan_grant": +1,
    "loan_principal": -1,
    "loan_interest": -1,
    "cb_loan_grant": +1,
    "cb_loan_principal": -1,
    "cb_advance_interest": +1,
    "bank_dividend": +1,
    "bank_equity_in": -1,
    "export": +1,
    "import": -1,
    "ext_transfer": +1,
    "ext_gfcf": +1,
    "ext_tax": -1,
}


@dataclass
class LedgerEntry:
    """One recorded flow.  ``row`` / ``col`` index SAM accounts, or are None
    for flows outside the matrix (loans, equity trades, interest)."""

    month: int
    day: int
    row: int | None
    col: int | None
    amount: float
    kind: str
    payer_id: int | None = None
    payee_id: int | None = None


@dataclass
class _MonthBook:
    cells: np.ndarray
    kind_volume: dict[str, float] = field(default_factory=dict)
    kind_m_delta: dict[str, float] = field(default_factory=dict)
    entries: int = 0


class Ledger:
    """Append-only monthly aggregation of simulation flows."""

    def __init__(self, n_accounts: int):
        self.n_accounts = n_accounts
        self._open = _MonthBook(cells=np.zeros((n_accounts, n_accounts)))
        self.months: list[_MonthBook] = []
        self.chain_hash = hashlib.sha256(b"ledger-v1").hexdigest()

    # -- recording ---------------------------------------------------------

    def record(self, entry: LedgerEntry) -> None:
        """Record one entry.  Cell aggregation only; the engine adds money
        supply effects separately through :meth:`add_m_delta`."""
        self.flow(entry.row, entry.col, entry.amount)
        book = self._open
        book.kind_volume[entry.kind] = book.kind_volume.get(entry.kind, 0.0) + abs(entry.amount)
        book.entries += 1

    def flow(self, row: int | None, col: int | None, amount: float) -> None:
        if row is not None and col is not None:
            self._open.cells[row, col] += amount

    def add_kind(self, kind: str, amount: float, m_delta: float) -> None:
        book = self._open
        book.kind_volume[kind] = book.kind_volume.get(kind, 0.0) + abs(amount)
        if m_delta != 0.0:
            book.kind_m_delta[kind] = book.kind_m_delta.get(kind, 0.0) + m_delta
        book.entries += 1

    def close_month(self) -> None:
        book = self._open
        self.months.append(book)
        h = hashlib.sha256()
        h.update(bytes.fromhex(self.chain_hash))
        h.update(struct.pack("<q", len(self.months)))
        h.update(np.ascontiguousarray(book.cells).tobytes())
        for name in sorted(book.kind_volume):
            h.update(name.encode())
            h.update(struct.pack("<d", book.kind_volume[name]))
        for name in sorted(book.kind_m_delta):
            h.update(b"@" + name.encode())
            h.update(struct.pack("<d", book.kind_m_delta[name]))
        h.update(struct.pack("<q", book.entries))
        self.chain_hash = h.hexdigest()
        self._open = _MonthBook(cells=np.zeros((self.n_accounts, self.n_accounts)))

    # -- access ------------------------------------------------------------

    @property
    def closed_months(self) -> int:
        return len(self.months)

    def month_cells(self, month: int) -> np.ndarray:
        """Aggregated cell matrix of a closed month (1-indexed)."""
        return self.months[month - 1].cells

    def month_m_delta(self, month: int) -> dict[str, float]:
        return self.months[month - 1].kind_m_delta

    def open_cells(self) -> np.ndarray:
        return self._open.cells

    def open_volume(self, kind: str) -> float:
        """Gross volume of a kind accumulated in the month being recorded."""
        return self._open.kind_volume.get(kind, 0.0)

    # -- snapshot support --------------------------------------------------

    def state(self) -> dict:
        return {
            "n_accounts": self.n_accounts,
            "chain_hash": self.chain_hash,
            "months": [
                {
                    "cells": book.cells.flatten().tolist(),
                    "kind_volume": dict(sorted(book.kind_volume.items())),
                    "kind_m_delta": dict(sorted(book.kind_m_delta.items())),
                    "entries": book.entries,
                }
                for book in self.months
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Ledger":
        n = state["n_accounts"]
        ledger = cls(n)
        ledger.chain_hash = state["chain_hash"]
        for m in state["months"]:
            ledger.months.append(_MonthBook(
                cells=np.array(m["cells"]).reshape(n, n),
                kind_volume=dict(m["kind_volume"]),
                kind_m_delta=dict(m["kind_m_delta"]),
                entries=m["entries"],
            ))
        return ledger


# ---------------------------------------------------------------------------
# computed SAM and comparison
# ---------------------------------------------------------------------------


@dataclass
class ComputedSam:
    """Flows summed over a trailing monthly window, in table units."""

    matrix: np.ndarray
    end_month: int
    window: int


def computed_sam(ledger: Ledger, end_month: int, window: int = 12) -> ComputedSam:
    if window < 1:
        raise ValueError("window must be at least one month")
    if end_month > ledger.closed_months:
        raise ValueError(
            f"month {end_month} not closed yet ({ledger.closed_months} months recorded)")
    if end_month - window < 0:
        raise ValueError(f"window {window} reaches before month 1")
    total = np.zeros((ledger.n_accounts, ledger.n_accounts))
    for m in range(end_month - window + 1, end_month + 1):
        total += ledger.month_cells(m)
    return ComputedSam(matrix=total, end_month=end_month, window=window)


@dataclass
class PercentMatrix:
    """Computed flows as a percentage of target flows, NaN where the target
    cell is zero."""

    percent: np.ndarray
    accounts: list[str]

    def cell(self, row: int, col: int) -> float:
        return float(self.percent[row, col])


def compare_sam(computed: ComputedSam, target: SamTable) -> PercentMatrix:
    if computed.matrix.shape != target.flows.shape:
        raise ValueError("computed matrix and target table have different shapes")
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = 100.0 * computed.matrix / target.flows
    pct[target.flows == 0.0] = np.nan
    return PercentMatrix(percent=pct, accounts=list(target.accounts))


def major_cells(target: SamTable, threshold_frac: float = 0.005) -> list[tuple[int, int]]:
    """Cells whose target magnitude is at least ``threshold_frac`` of the
    combined producing-sector output."""
    cutoff = threshold_frac * target.total_output()
    out = []
    for i in range(target.n_accounts):
        for j in range(target.n_accounts):
            if abs(target.flows[i, j]) >= cutoff:
                out.append((i, j))
    return out


# ---------------------------------------------------------------------------
# time series
# ---------------------------------------------------------------------------


@dataclass
class TimeSeriesRow:
    month: int
    unemployment_pct: float
    employment: list[int]
    hh_cons: float
    gov_cons: float
    ext_cons: float
    ic_total: float
    inv_goods: float
    inv_inputs: float
    hh_wealth: float


def timeseries_header(sector_names: list[str] | int) -> list[str]:
    """Column names for the time-series CSV.  Sectors may be given by
    name (preferred; employment columns become ``emp_<name>``) or, for
    anonymous data, by count (columns become ``emp_s1..emp_sN``)."""
    if isinstance(sector_names, int):
        sector_names = [f"s{k + 1}" for k in range(sector_names)]
    cols = ["month", "unemployment_pct"]
    cols += [f"emp_{name}" for name in sector_names]
    cols += ["hh_cons", "gov_cons", "ext_cons", "ic_total",
             "inv_goods", "inv_inputs", "hh_wealth"]
    return cols


def emit_timeseries(rows: list[TimeSeriesRow], path,
                    sector_names: list[str] | None = None) -> None:
    if not rows:
        raise ValueError("no time series rows to emit")
    n_sectors = len(rows[0].employment)
    if sector_names is not None and len(sector_names) != n_sectors:
        raise ValueError(
            f"{len(sector_names)} sector names for {n_sectors} employment series")
    lines = [",".join(timeseries_header(sector_names
                                        if sector_names is not None
                                        else n_sectors))]
    for r in rows:
        fields = [str(r.month), _num(r.unemployment_pct)]
        fields += [str(e) for e in r.employment]
        fields += [_num(r.hh_cons), _num(r.gov_cons), _num(r.ext_cons),
                   _num(r.ic_total), _num(r.inv_goods), _num(r.inv_inputs),
                   _num(r.hh_wealth)]
        lines.append(",".join(fields))
    _write(path, lines)


def _num(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _write(path, lines: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# matrix CSV emission
# ---------------------------------------------------------------------------


def emit_sam_matrix(matrix: np.ndarray, accounts: list[str], path,
                    blank_nan: bool = True) -> None:
    """Write an (N+1) x (N+1) CSV with account names on both margins.
    NaN cells become blanks."""
    lines = ["," + ",".join(accounts)]
    for i, name in enumerate(accounts):
        cells = [name]
        for j in range(len(accounts)):
            v = matrix[i, j]
            if blank_nan and (isinstance(v, float) or isinstance(v, np.floating)) and math.isnan(v):
                cells.append("")
            else:
                cells.append(_num(v))
        lines.append(",".join(cells))
    _write(path, lines)


def emit_ledger_cells(ledger: Ledger, accounts: list[str], path) -> None:
    """Monthly nonzero cell aggregates, one row per (month, row, col)."""
    lines = ["month,row_account,col_account,amount"]
    for m in range(1, ledger.closed_months + 1):
        cells = ledger.month_cells(m)
        rows, cols = np.nonzero(cells)
        for i, j in zip(rows.tolist(), cols.tolist()):
            lines.append(f"{m},{accounts[i]},{accounts[j]},{_num(cells[i, j])}")
    _write(path, lines)


# ---------------------------------------------------------------------------
# wealth distribution
# ---------------------------------------------------------------------------


@dataclass
class WealthHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    gini: float
    skewness: float


def gini_coefficient(values) -> float:
    """Mean absolute difference Gini, zero for an empty or all-zero sample."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if n == 0:
        return 0.0
    mean = x.mean()
    if mean == 0.0:
        return 0.0
    i = np.arange(1, n + 1)
    return float(((2 * i - n - 1) * x).sum() / (n * n * mean))


def sample_skewness(values) -> float:
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        return 0.0
    d = x - x.mean()
    m2 = (d ** 2).mean()
    if m2 == 0.0:
        return 0.0
    return float((d ** 3).mean() / m2 ** 1.5)


def wealth_histogram(values, bins: int = 20) -> WealthHistogram:
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        raise ValueError("no wealth observations")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        hi = lo + 1.0
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    return WealthHistogram(
        bin_edges=edges,
        counts=counts,
        gini=gini_coefficient(x),
        skewness=sample_skewness(x),
    )


def emit_wealth_histogram(hist: WealthHistogram, path) -> None:
    lines = ["bin_low,bin_high,count"]
    for k in range(len(hist.counts)):
        lines.append(f"{_num(hist.bin_edges[k])},{_num(hist.bin_edges[k + 1])},{int(hist.counts[k])}")
    lines.append(f"gini,{_num(hist.gini)}")
    lines.append(f"skewness,{_num(hist.skewness)}")
    _write(path, lines)


# ---------------------------------------------------------------------------
# money audit
# ---------------------------------------------------------------------------


@dataclass
class AuditReport:
    month: int
    money_start: float
    money_end: float
    delta: float
    explained: float
    residual: float
    terms: dict[str, float]
    passed: bool


def audit_money(ledger: Ledger, money_history: list[float], month: int,
                rtol: float = AUDIT_RTOL) -> AuditReport:
    """Check that the change in audited money over ``month`` equals the sum
    of recorded boundary-crossing flows (loans, repayments, external and
    central bank operations).

    ``money_history[m]`` is the audited money total at the end of month m,
    with index 0 holding the initial stock.
    """
    if month < 1 or month > ledger.closed_months:
        raise ValueError(f"month {month} outside recorded range")
    start = money_history[month - 1]
    end = money_history[month]
    terms = dict(ledger.month_m_delta(month))
    explained = math.fsum(terms.values())
    delta = end - start
    residual = delta - explained
    scale = max(abs(start), abs(end), 1.0)
    return AuditReport(
        month=month,
        money_start=start,
        money_end=end,
        delta=delta,
        explained=explained,
        residual=residual,
        terms=terms,
        passed=bool(abs(residual) <= rtol * scale),
    )
