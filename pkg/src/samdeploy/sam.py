"""Social accounting matrix ingestion, validation and calibration tables.

A SAM file is a square flow matrix with one account per row/column.  Cell
(i, j) is the annual payment from account j (the spender, column) to account
i (the receiver, row), so every account's row total must equal its column
total.  Account roles are inferred from the first letter of the account name:

    P, N   producing sector (N marks non-market services, still a producer)
    F      gross fixed capital formation (investment pass-through)
    X      external sector
    L      labor compensation pass-through
    K      gross operating surplus pass-through
    T      tax account (the only rows where negative cells are allowed)
    G      government
    H      households

File grammar (tabs or commas separate cells, "." is the decimal mark,
no thousands separators):

    line 1            "SAM_table {" SP name
    line 2            whitespace-separated "key: value" pairs
    line 3            header with the ordered account names
    lines 4 .. 3+N    account name, N cells, row total
    last line         "colSUM", N column totals
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

# Relative tolerance for declared sums and row/column balance.
BALANCE_RTOL = 1e-9

PRODUCER_PREFIXES = ("P", "N")

_CELL_SEP = re.compile(r"[\t,]+")

_HEADER_KEYS = ("Year", "Population", "Active", "InitUnemp", "Nproducers", "Naccounts", "Units")


class SamFormatError(ValueError):
    """Raised when a SAM file violates the grammar or its declared sums."""


# ---------------------------------------------------------------------------
# core table
# ---------------------------------------------------------------------------


@dataclass
class SamTable:
    """Parsed SAM with declared totals and role indices.

    ``flows`` is the N x N annual flow matrix in table units.  ``row_sums``
    and ``col_sums`` are the totals as declared in the file; parsing verifies
    that they match the cells.
    """

    name: str
    year: int
    population: int
    active_count: int
    init_unemp_pct: float
    n_producers: int
    n_accounts: int
    units_scale: int
    units_label: str
    accounts: list[str]
    flows: np.ndarray
    row_sums: np.ndarray
    col_sums: np.ndarray

    # role indices, filled in __post_init__
    sectors: list[int] = field(default_factory=list, repr=False)
    tax_rows: list[int] = field(default_factory=list, repr=False)
    gfcf: int = field(default=-1, repr=False)
    external: int = field(default=-1, repr=False)
    labor: int = field(default=-1, repr=False)
    capital: int = field(default=-1, repr=False)
    government: int = field(default=-1, repr=False)
    household: int = field(default=-1, repr=False)

    def __post_init__(self) -> None:
        self.sectors = [i for i, a in enumerate(self.accounts) if a[0] in PRODUCER_PREFIXES]
        self.tax_rows = [i for i, a in enumerate(self.accounts) if a[0] == "T"]
        for attr, prefix in (("gfcf", "F"), ("external", "X"), ("labor", "L"),
                             ("capital", "K"), ("government", "G"), ("household", "H")):
            matches = [i for i, a in enumerate(self.accounts) if a[0] == prefix]
            if len(matches) != 1:
                raise SamFormatError(
                    f"expected exactly one account with role prefix {prefix!r}, "
                    f"found {len(matches)}")
            setattr(self, attr, matches[0])
        if not self.sectors:
            raise SamFormatError("no producing sector accounts (prefix P or N)")

    @property
    def n_sectors(self) -> int:
        return len(self.sectors)

    def account_index(self, name: str) -> int:
        try:
            return self.accounts.index(name)
        except ValueError:
            raise KeyError(f"unknown account {name!r}") from None

    def total_output(self) -> float:
        """Combined gross output of the producing sectors."""
        return float(sum(self.col_sums[j] for j in self.sectors))


# ---------------------------------------------------------------------------
# parsing and serialization
# ---------------------------------------------------------------------------


def _split_cells(line: str) -> list[str]:
    return [tok for tok in _CELL_SEP.split(line.strip()) if tok != ""]


def _parse_number(token: str, where: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise SamFormatError(f"{where}: cannot parse number {token!r}") from None


def parse_sam(text: str) -> SamTable:
    """Parse SAM file text into a :class:`SamTable`.

    Raises :class:`SamFormatError` on grammar violations, duplicate account
    names, non-numeric cells, negative cells outside tax rows, or declared
    row/column totals that do not match the cells.
    """
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip() != ""]
    if len(lines) < 4:
        raise SamFormatError("file too short to be a SAM table")

    first = lines[0].split()
    if len(first) != 3 or first[0] != "SAM_table" or first[1] != "{":
        raise SamFormatError('line 1 must be "SAM_table { <name>"')
    name = first[2]

    meta = _parse_meta(lines[1])

    accounts = _split_cells(lines[2])
    n = meta["Naccounts"]
    if len(accounts) != n:
        raise SamFormatError(
            f"header names {len(accounts)} accounts, Naccounts declares {n}")
    if len(set(accounts)) != len(accounts):
        raise SamFormatError("duplicate account name in header")
    if meta["Nproducers"] > n:
        raise SamFormatError("Nproducers exceeds Naccounts")

    if len(lines) != 3 + n + 1:
        raise SamFormatError(
            f"expected {3 + n + 1} non-empty lines for {n} accounts, got {len(lines)}")

    flows = np.zeros((n, n))
    row_sums = np.zeros(n)
    tax_like = {i for i, a in enumerate(accounts) if a[0] == "T"}
    for i in range(n):
        cells = _split_cells(lines[3 + i])
        if len(cells) != n + 2:
            raise SamFormatError(
                f"row {accounts[i]!r}: expected name, {n} cells and a row total, "
                f"got {len(cells)} fields")
        if cells[0] != accounts[i]:
            raise SamFormatError(
                f"row {i + 1} is named {cells[0]!r} but header position {i + 1} "
                f"is {accounts[i]!r}")
        for j in range(n):
            v = _parse_number(cells[1 + j], f"row {accounts[i]!r}")
            if v < 0 and i not in tax_like:
                raise SamFormatError(
                    f"row {accounts[i]!r}: negative cell {v} outside a tax row")
            flows[i, j] = v
        row_sums[i] = _parse_number(cells[n + 1], f"row {accounts[i]!r} total")
        computed = math.fsum(flows[i])
        if not _close(computed, row_sums[i]):
            raise SamFormatError(
                f"row {accounts[i]!r}: cells sum to {computed!r} but rowSUM "
                f"declares {row_sums[i]!r}")

    tail = _split_cells(lines[3 + n])
    if len(tail) != n + 1 or tail[0] != "colSUM":
        raise SamFormatError('last line must be "colSUM" followed by the column totals')
    col_sums = np.zeros(n)
    for j in range(n):
        col_sums[j] = _parse_number(tail[1 + j], f"column {accounts[j]!r} total")
        computed = math.fsum(flows[:, j])
        if not _close(computed, col_sums[j]):
            raise SamFormatError(
                f"column {accounts[j]!r}: cells sum to {computed!r} but colSUM "
                f"declares {col_sums[j]!r}")

    return SamTable(
        name=name,
        year=meta["Year"],
        population=meta["Population"],
        active_count=meta["Active"],
        init_unemp_pct=meta["InitUnemp"],
        n_producers=meta["Nproducers"],
        n_accounts=n,
        units_scale=meta["Units"][0],
        units_label=meta["Units"][1],
        accounts=accounts,
        flows=flows,
        row_sums=row_sums,
        col_sums=col_sums,
    )


def _parse_meta(line: str) -> dict:
    tokens = line.split()
    meta: dict = {}
    pos = 0
    while pos < len(tokens):
        key = tokens[pos]
        if not key.endswith(":"):
            raise SamFormatError(f'line 2: expected "key:" token, got {key!r}')
        key = key[:-1]
        if key == "Units":
            if pos + 2 >= len(tokens):
                raise SamFormatError("line 2: Units needs a scale and a label")
            scale = int(_parse_number(tokens[pos + 1], "Units scale"))
            meta["Units"] = (scale, tokens[pos + 2])
            pos += 3
        else:
            if pos + 1 >= len(tokens):
                raise SamFormatError(f"line 2: missing value for {key}")
            value = _parse_number(tokens[pos + 1], f"header {key}")
            meta[key] = value
            pos += 2
    missing = [k for k in _HEADER_KEYS if k not in meta]
    if missing:
        raise SamFormatError(f"line 2: missing header keys {missing}")
    for k in ("Year", "Population", "Active", "Nproducers", "Naccounts"):
        meta[k] = int(meta[k])
    return meta


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= BALANCE_RTOL * max(abs(a), abs(b), 1.0)


def _format_cell(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def serialize_sam(sam: SamTable) -> str:
    """Render a :class:`SamTable` back to file text.

    Numeric cells round-trip bit-identically through ``parse_sam``.
    """
    out = [f"SAM_table {{ {sam.name}"]
    out.append(
        f"Year: {sam.year} Population: {sam.population} Active: {sam.active_count} "
        f"InitUnemp: {_format_cell(sam.init_unemp_pct)} Nproducers: {sam.n_producers} "
        f"Naccounts: {sam.n_accounts} Units: {sam.units_scale} {sam.units_label}")
    out.append("\t".join(sam.accounts))
    for i, acct in enumerate(sam.accounts):
        cells = [acct] + [_format_cell(v) for v in sam.flows[i]]
        cells.append(_format_cell(sam.row_sums[i]))
        out.append("\t".join(cells))
    out.append("\t".join(["colSUM"] + [_format_cell(v) for v in sam.col_sums]))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------


@dataclass
class BalanceReport:
    """Per-account comparison of row totals against column totals."""

    accounts: list[str]
    row_totals: np.ndarray
    col_totals: np.ndarray
    rel_imbalance: np.ndarray
    max_rel_imbalance: float
    passed: bool

    def worst(self) -> tuple[str, float]:
        k = int(np.argmax(self.rel_imbalance))
        return self.accounts[k], float(self.rel_imbalance[k])


def validate_balance(sam: SamTable, rtol: float = BALANCE_RTOL) -> BalanceReport:
    """Check receipts == expenditures for every account at relative ``rtol``."""
    rel = np.zeros(sam.n_accounts)
    for i in range(sam.n_accounts):
        r, c = float(sam.row_sums[i]), float(sam.col_sums[i])
        denom = max(abs(r), abs(c), 1.0)
        rel[i] = abs(r - c) / denom
    worst = float(rel.max()) if sam.n_accounts else 0.0
    return BalanceReport(
        accounts=list(sam.accounts),
        row_totals=sam.row_sums.copy(),
        col_totals=sam.col_sums.copy(),
        rel_imbalance=rel,
        max_rel_imbalance=worst,
        passed=bool(worst <= rtol),
    )


# ---------------------------------------------------------------------------
# calibration tables
# ---------------------------------------------------------------------------


@dataclass
class MonthlyTargets:
    """Annual flows divided into twelve equal monthly flow targets.

    ``consumption_shares`` holds, for each buyer column, the share of that
    column's producer-plus-GFCF spending that lands on each of those rows.
    """

    monthly: np.ndarray
    consumption_shares: dict[int, np.ndarray]

    def cell(self, row: int, col: int) -> float:
        return float(self.monthly[row, col])


def monthly_targets(sam: SamTable) -> MonthlyTargets:
    monthly = sam.flows / 12.0
    demand_rows = sam.sectors + [sam.gfcf]
    shares: dict[int, np.ndarray] = {}
    for col in range(sam.n_accounts):
        spend = np.array([sam.flows[r, col] for r in demand_rows])
        total = spend.sum()
        if total > 0:
            shares[col] = spend / total
    return MonthlyTargets(monthly=monthly, consumption_shares=shares)


@dataclass
class TechnicalCoefficients:
    """Input and primary-cost shares per producing-sector column.

    All shares are fractions of the sector's gross output value.  For every
    sector column the intermediate, import, labor, surplus and tax shares sum
    to one.
    """

    sectors: list[int]
    sector_names: list[str]
    ic_share: np.ndarray        # (n_sectors, n_sectors), seller x buyer
    import_share: np.ndarray    # (n_sectors,)
    labor_share: np.ndarray
    surplus_share: np.ndarray
    tax_rows: list[int]
    tax_share: np.ndarray       # (n_tax_rows, n_sectors)

    def column_total(self, j: int) -> float:
        return float(self.ic_share[:, j].sum() + self.import_share[j]
                     + self.labor_share[j] + self.surplus_share[j]
                     + self.tax_share[:, j].sum())


def technical_coefficients(sam: SamTable) -> TechnicalCoefficients:
    """Derive per-sector cost shares from the sector columns.

    Raises ``ValueError`` for a zero-output sector column, or when a sector
    column spends on rows outside the supported set (sectors, external,
    labor, surplus, taxes); such a table is outside the supported class.
    """
    ns = sam.n_sectors
    ic = np.zeros((ns, ns))
    imp = np.zeros(ns)
    lab = np.zeros(ns)
    sur = np.zeros(ns)
    tax = np.zeros((len(sam.tax_rows), ns))
    allowed = set(sam.sectors) | set(sam.tax_rows) | {sam.external, sam.labor, sam.capital}
    for jj, j in enumerate(sam.sectors):
        total = float(sam.col_sums[j])
        if total <= 0:
            raise ValueError(f"sector column {sam.accounts[j]!r} has no output")
        for r in range(sam.n_accounts):
            if sam.flows[r, j] != 0 and r not in allowed:
                raise ValueError(
                    f"sector column {sam.accounts[j]!r} pays row "
                    f"{sam.accounts[r]!r}, which is not a supported input row")
        for ii, i in enumerate(sam.sectors):
            ic[ii, jj] = sam.flows[i, j] / total
        imp[jj] = sam.flows[sam.external, j] / total
        lab[jj] = sam.flows[sam.labor, j] / total
        sur[jj] = sam.flows[sam.capital, j] / total
        for tt, t in enumerate(sam.tax_rows):
            tax[tt, jj] = sam.flows[t, j] / total
    return TechnicalCoefficients(
        sectors=list(sam.sectors),
        sector_names=[sam.accounts[j] for j in sam.sectors],
        ic_share=ic,
        import_share=imp,
        labor_share=lab,
        surplus_share=sur,
        tax_rows=list(sam.tax_rows),
        tax_share=tax,
    )


@dataclass
class GfcfWeights:
    """How one unit of investment demand splits across sector goods and taxes."""

    sector_weight: np.ndarray   # (n_sectors,), aligned with SamTable.sectors
    tax_rows: list[int]
    tax_weight: np.ndarray      # (n_tax_rows,)

    def total(self) -> float:
        return float(self.sector_weight.sum() + self.tax_weight.sum())


def gfcf_weights(sam: SamTable) -> GfcfWeights:
    """Column weights of the GFCF account, normalized to sum to one.

    Raises ``ValueError`` when the GFCF column is all zero or spends on rows
    other than sector goods and taxes.
    """
    col = sam.gfcf
    total = float(sam.col_sums[col])
    if total == 0:
        raise ValueError("GFCF column is all zero, no investment split defined")
    allowed = set(sam.sectors) | set(sam.tax_rows)
    for r in range(sam.n_accounts):
        if sam.flows[r, col] != 0 and r not in allowed:
            raise ValueError(
                f"GFCF column pays row {sam.accounts[r]!r}, expected only "
                f"sector goods and tax rows")
    sector_w = np.array([sam.flows[i, col] / total for i in sam.sectors])
    tax_w = np.array([sam.flows[t, col] / total for t in sam.tax_rows])
    return GfcfWeights(sector_weight=sector_w, tax_rows=list(sam.tax_rows), tax_weight=tax_w)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------


@dataclass
class ScalePlan:
    """Mapping between the real economy and the simulated agent population.

    One simulated agent stands for ``s`` real active individuals, and the
    model money unit is the table unit divided by ``s``.  Under that
    convention a simulated flow is numerically equal to the real flow it
    represents, so SAM annual values double as simulation targets without
    further conversion: simulated monthly target times ``s``, expressed in
    model units per real unit, recovers the real monthly flow.
    """

    s: float
    n_sim_agents: int
    employed_target: int
    wage_monthly: float

    def monthly_target(self, annual_value: float) -> float:
        return annual_value / 12.0


def scale_factors(sam: SamTable, n_sim_agents: int) -> ScalePlan:
    """Build the :class:`ScalePlan` for ``n_sim_agents`` simulated households.

    The single economy-wide monthly wage is the labor row total divided by
    twelve months and by the number of simulated workers employed at the
    table's initial unemployment rate.
    """
    if n_sim_agents < 100:
        raise ValueError(f"n_sim_agents must be at least 100, got {n_sim_agents}")
    s = sam.active_count / n_sim_agents
    employed = round(n_sim_agents * (1.0 - sam.init_unemp_pct / 100.0))
    if employed <= 0:
        raise ValueError("initial unemployment leaves no employed workers")
    wage = float(sam.row_sums[sam.labor]) / 12.0 / employed
    return ScalePlan(
        s=s,
        n_sim_agents=n_sim_agents,
        employed_target=employed,
        wage_monthly=wage,
    )
