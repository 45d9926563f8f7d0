"""World construction and the simulation step loop.

A world is built from a parsed SAM and a configuration.  Months run as a
fixed sequence: a day loop where institutions, firms and households shop,
then a settlement block where wages, debt service, taxes, dividends,
transfers, demography (firm entry and exit, bank founding, listings) and
the equity market clear, always in the same order.  During the deployment
phase household spending is steered toward the table's consumption level
through the budget factor; once the phase ends the factor freezes and
households follow the buffer-stock rule unassisted.

Every money movement goes through a single transfer primitive that keeps
bank balance sheets and the flow ledger in sync, so the monthly audit
identity holds by construction.  All randomness comes from named streams
seeded from the configuration, and a world can be checksummed or written
to a snapshot that reproduces the trajectory exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, fields

from samdeploy.accounting import Ledger, TimeSeriesRow, audit_money
from samdeploy.agents import (
    Bank,
    CapitalPool,
    CentralBank,
    ExternalSector,
    Firm,
    Government,
    Household,
    Loan,
    consumption_budget,
    distribute_profits,
    firm_entry_decision,
    firm_exit_check,
    household_tax_rows,
    input_requirements,
    plan_production,
    portfolio_split,
)
from samdeploy.markets import (
    EquityOrder,
    clearing_house,
    credit_request,
    default_probability,
    labor_match,
    select_seller_logit,
    shopping_round,
)
from samdeploy.sam import (
    SamTable,
    gfcf_weights,
    monthly_targets,
    parse_sam,
    scale_factors,
    serialize_sam,
    technical_coefficients,
)

DUST = 1e-9

SNAPSHOT_FORMAT = 1

RNG_STREAMS = ("placement", "buydays", "proddays", "shopping",
               "labor", "entry", "clearing")


class EngineError(RuntimeError):
    """Raised when the simulation violates one of its own invariants."""


class SnapshotError(ValueError):
    """Raised for unreadable, corrupted or incompatible snapshot files."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class SimConfig:
    """All tunables of a run.  Defaults are the calibration used for the
    bundled table; every field can be overridden from a flat mapping."""

    n_sim_agents: int = 2000
    days_per_month: int = 30
    deployment_months: int = 360
    total_months: int = 480
    seed: int = 42

    # household behavior; starting cash must stay below phi months of net
    # income, or households collectively dissave the moment budgets float
    # free, and far below it they all save at once and demand slumps
    kappa: float = 0.02
    phi: float = 12.0
    income_window: int = 12
    deposit_fraction: float = 0.8
    sell_fraction: float = 0.1
    initial_cash_months: float = 8.0

    # price formation and search
    epsilon: float = 0.01
    gamma: float = 10.0
    max_trials: int = 5
    radius: float = 0.1
    radius_expansions: int = 4
    max_candidates: int = 12
    inst_candidates: int = 40

    # firm demography and planning; money thresholds are in multiples of
    # the monthly wage so they carry across agent counts
    p_open: float = 0.004
    loss_months: int = 6
    demand_window: int = 6
    stock_buffer: float = 0.1
    startup_wage_months: float = 20.0
    dividend_fraction: float = 1.0
    listing_wage_months: float = 100.0

    # banking
    car: float = 0.08
    rrr: float = 0.10
    r0: float = 0.003
    spread: float = 0.01
    loan_term: int = 12
    bank_min_wage_months: float = 40.0
    max_banks: int = 3
    allow_cb_credit: bool = True

    # deployment steering
    beta_damping: float = 0.1

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SimConfig":
        """Build a config from string or native values, rejecting unknown
        keys so typos in config files fail loudly."""
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(value, known[key], key)
        return cls(**kwargs)


def _coerce(value, type_name: str, key: str):
    if not isinstance(value, str):
        return value
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    if type_name == "bool":
        low = value.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: cannot read {value!r} as a flag")
    return value


# ---------------------------------------------------------------------------
# world
# ---------------------------------------------------------------------------


class World:
    """Mutable simulation state plus the tables derived from the SAM.

    Construction wires up the derived coefficients and empty containers;
    :func:`init_world` populates the agents for a fresh run and
    :func:`load_snapshot` restores them from a file.
    """

    def __init__(self, sam: SamTable, config: SimConfig):
        self.sam = sam
        self.config = config
        self.targets = monthly_targets(sam)
        self.coeffs = technical_coefficients(sam)
        self.scale = scale_factors(sam, config.n_sim_agents)
        self.wage = self.scale.wage_monthly

        ns = sam.n_sectors
        self.ns = ns
        self.sector_row = list(sam.sectors)
        self.gfcf_row = sam.gfcf
        self.ext_row = sam.external
        self.labor_row = sam.labor
        self.capital_row = sam.capital
        self.gov_row = sam.government
        self.hh_row = sam.household

        # sparse per-sector cost structure, positions follow sam.sectors
        self.ic_pairs = [
            [(i, float(self.coeffs.ic_share[i, j])) for i in range(ns)
             if self.coeffs.ic_share[i, j] > 0.0]
            for j in range(ns)
        ]
        self.import_share = [float(v) for v in self.coeffs.import_share]
        self.labor_share = [float(v) for v in self.coeffs.labor_share]
        self.surplus_share = [float(v) for v in self.coeffs.surplus_share]
        self.tax_pairs = [
            [(t, float(self.coeffs.tax_share[tt, j]))
             for tt, t in enumerate(sam.tax_rows)
             if self.coeffs.tax_share[tt, j] != 0.0]
            for j in range(ns)
        ]

        self.hh_shares = self._share_list(sam.household)
        self.gov_shares = self._share_list(sam.government)
        self.ext_shares = self._share_list(sam.external)

        self.hh_base_m = self._purchase_base(sam.household) / 12.0
        self.gov_base_m = self._purchase_base(sam.government) / 12.0
        self.ext_base_m = self._purchase_base(sam.external) / 12.0
        self.pool_base_m = math.fsum(
            float(sam.flows[i, sam.gfcf]) for i in sam.sectors) / 12.0
        self.subsidy_m = float(sam.flows[sam.household, sam.government]) / 12.0
        self.ext_hh_m = float(sam.flows[sam.household, sam.external]) / 12.0
        self.ext_tax_pairs = [
            (t, float(sam.flows[t, sam.external]) / 12.0)
            for t in sam.tax_rows if sam.flows[t, sam.external] != 0.0
        ]
        gov_base_a = self._purchase_base(sam.government)
        self.gov_ptax_pairs = [
            (t, float(sam.flows[t, sam.government]) / gov_base_a)
            for t in sam.tax_rows
            if sam.flows[t, sam.government] != 0.0 and gov_base_a > 0.0
        ]

        # a table with no external trade describes a closed economy, so
        # nothing may fall back to buying abroad
        self.ext_active = (float(sam.row_sums[sam.external])
                           + float(sam.col_sums[sam.external])) != 0.0
        self.gfcf_active = float(sam.col_sums[sam.gfcf]) != 0.0
        if self.gfcf_active:
            gw = gfcf_weights(sam)
            sector_total = float(gw.sector_weight.sum())
            self.pool_weights = [float(v) / sector_total if sector_total > 0.0 else 0.0
                                 for v in gw.sector_weight]
            self.gfcf_tax_pairs = [
                (t, float(gw.tax_weight[tt]))
                for tt, t in enumerate(gw.tax_rows) if gw.tax_weight[tt] != 0.0
            ]
        else:
            self.pool_weights = [0.0] * ns
            self.gfcf_tax_pairs = []

        self.hh_tax_rows = household_tax_rows(sam)

        # monthly gross output per sector at simulation scale, the yardstick
        # for deciding when unmet demand is large enough to invite entrants
        self.sector_out_m = [float(sam.row_sums[j]) / 12.0 for j in sam.sectors]

        self.startup_cash = config.startup_wage_months * self.wage
        self.bank_min_net_worth = config.bank_min_wage_months * self.wage
        self.listing_net_worth = config.listing_wage_months * self.wage

        # agents and run state
        self.households: list[Household] = []
        self.firms: dict[int, Firm] = {}
        self.banks: dict[int, Bank] = {}
        self.government = Government(subsidy_budget_monthly=self.subsidy_m,
                                     reservation=[1.0] * ns)
        self.external = ExternalSector(sell_price=[1.0] * ns,
                                       reservation=[1.0] * ns)
        self.pool = CapitalPool(reservation=[1.0] * ns)
        self.central_bank = CentralBank(policy_rate=config.r0,
                                        bank_min_net_worth=self.bank_min_net_worth,
                                        max_banks=config.max_banks)
        self.next_firm_id = 0
        self.next_bank_id = 0
        self.month = 0
        self.phase = "deploy" if config.deployment_months > 0 else "free"
        self.beta = 1.0

        self.ledger = Ledger(sam.n_accounts)
        self.money_history: list[float] = []
        self.series: list[TimeSeriesRow] = []
        self.audit_residuals: list[float] = []
        # consecutive months each sector's unmet demand stayed above the
        # entry threshold; persists across months, so snapshotted
        self.unmet_streak: list[int] = [0] * ns

        self.rngs = {name: random.Random(f"{config.seed}:{name}")
                     for name in RNG_STREAMS}

        # transient structures, rebuilt as needed and never snapshotted
        self.buyers_by_day: dict[int, list[int]] = {}
        self.hh_grid: dict[tuple[int, int], list[int]] = {}
        self.firm_grid: dict[tuple[tuple[int, int], int], list[int]] = {}
        self.sector_firms: list[list[int]] = [[] for _ in range(ns)]
        self._cand_cache: dict = {}
        self._unmet_local: dict[tuple[int, int], list[float]] = {}
        self._unmet_global: list[float] = [0.0] * ns
        self._budget_month: list[float] = []
        self._producers_by_day: dict[int, list[int]] = {}

    def rng(self, name: str) -> random.Random:
        return self.rngs[name]

    def _share_list(self, col: int) -> list[float] | None:
        shares = self.targets.consumption_shares.get(col)
        if shares is None:
            return None
        return [float(v) for v in shares]

    def _purchase_base(self, col: int) -> float:
        base = math.fsum(float(self.sam.flows[i, col]) for i in self.sam.sectors)
        return base + float(self.sam.flows[self.sam.gfcf, col])


def init_world(sam: SamTable, config: SimConfig) -> World:
    """Place households on the unit square and hand out starting cash.

    The economy starts with no firms and no banks, so unemployment is
    total until entrepreneurs respond to unmet demand.
    """
    world = World(sam, config)
    n = config.n_sim_agents
    ns = world.ns
    place = world.rng("placement")
    days = world.rng("buydays")
    endow = config.initial_cash_months * float(sam.row_sums[sam.household]) / 12.0 / n
    for i in range(n):
        x, y = place.random(), place.random()
        h = Household(id=i, x=x, y=y,
                      buy_day=days.randrange(1, config.days_per_month + 1),
                      money=endow, reservation=[1.0] * ns)
        world.households.append(h)
    _rebuild_indexes(world)
    world.money_history.append(_audited_money(world))
    return world


def _rebuild_indexes(world: World) -> None:
    world.buyers_by_day = {}
    for h in world.households:
        world.buyers_by_day.setdefault(h.buy_day, []).append(h.id)
    world.hh_grid = {}
    for h in world.households:
        world.hh_grid.setdefault(_grid_key(world, h.x, h.y), []).append(h.id)
    world.firm_grid = {}
    world.sector_firms = [[] for _ in range(world.ns)]
    for fid in sorted(world.firms):
        _index_firm(world, world.firms[fid])


# ---------------------------------------------------------------------------
# money primitive
# ---------------------------------------------------------------------------

_MEMBER_TYPES = (Household, Firm, Government, CapitalPool)


def _audited_money(world: World) -> float:
    parts = [h.money for h in world.households]
    parts.extend(world.firms[fid].money for fid in sorted(world.firms))
    parts.append(world.government.money)
    parts.append(world.pool.money)
    return math.fsum(parts)


def _member_bank(world: World, agent) -> Bank | None:
    bid = getattr(agent, "bank_id", None)
    return world.banks.get(bid) if bid is not None else None


def _cover_reserves(bank: Bank) -> None:
    if bank.reserves < 0.0:
        bank.cb_advance += -bank.reserves
        bank.reserves = 0.0


def _pay(world: World, payer, payee, amount: float, kind: str,
         cells: tuple = ()) -> None:
    """Move ``amount`` from payer to payee, mirror it on the banks'
    balance sheets, and record the flow.

    Payers and payees are agents; the external sector and the central bank
    act as money sources and sinks, banks pay out of and receive into
    equity.  ``cells`` are signed (row, col, value) triples for the flow
    matrix; the money amount itself is always positive.
    """
    if amount < 0.0:
        raise EngineError(f"negative transfer amount {amount} for kind {kind!r}")
    if amount == 0.0:
        return
    if payer is world.external:
        world.external.net_flow -= amount
    elif payee is world.external:
        world.external.net_flow += amount
    m_sign = 0
    if isinstance(payer, _MEMBER_TYPES):
        payer.money -= amount
        m_sign -= 1
        bank = _member_bank(world, payer)
        if bank is not None:
            bank.total_deposits -= amount
            bank.reserves -= amount
            _cover_reserves(bank)
    elif isinstance(payer, Bank):
        payer.equity -= amount
        payer.reserves -= amount
        _cover_reserves(payer)
    if isinstance(payee, _MEMBER_TYPES):
        payee.money += amount
        m_sign += 1
        bank = _member_bank(world, payee)
        if bank is not None:
            bank.total_deposits += amount
            bank.reserves += amount
    elif isinstance(payee, Bank):
        payee.equity += amount
        payee.reserves += amount
    for row, col, value in cells:
        world.ledger.flow(row, col, value)
    world.ledger.add_kind(kind, amount, m_sign * amount)


def _grant_loan(world: World, firm: Firm, amount: float, rate: float,
                bank: Bank | None) -> None:
    """Credit creation: a bank loan adds a deposit at the lender, a
    central-bank loan credits the firm directly."""
    if bank is not None:
        bank.loan_principal += amount
        bank.total_deposits += amount
        firm.money += amount
        world.ledger.add_kind("loan_grant", amount, amount)
        lender_id = bank.id
    else:
        firm.money += amount
        fb = _member_bank(world, firm)
        if fb is not None:
            fb.total_deposits += amount
            fb.reserves += amount
        world.ledger.add_kind("cb_loan_grant", amount, amount)
        lender_id = None
    firm.loans.append(Loan(principal=amount, monthly_rate=rate,
                           months_left=world.config.loan_term,
                           lender_id=lender_id))


def _repay_principal(world: World, firm: Firm, loan: Loan,
                     lender: Bank | None, amount: float) -> None:
    firm.money -= amount
    fb = _member_bank(world, firm)
    if fb is not None:
        fb.total_deposits -= amount
        fb.reserves -= amount
        _cover_reserves(fb)
    if lender is not None:
        lender.reserves += amount
        lender.loan_principal -= amount
        world.ledger.add_kind("loan_principal", amount, -amount)
    else:
        world.ledger.add_kind("cb_loan_principal", amount, -amount)
    loan.principal -= amount


# ---------------------------------------------------------------------------
# space and search
# ---------------------------------------------------------------------------


def _grid_key(world: World, x: float, y: float) -> tuple[int, int]:
    cell = world.config.radius
    last = max(int(math.ceil(1.0 / cell)) - 1, 0)
    return (min(int(x / cell), last), min(int(y / cell), last))


def _index_firm(world: World, firm: Firm) -> None:
    world.firm_grid.setdefault((_grid_key(world, firm.x, firm.y), firm.sector),
                               []).append(firm.id)
    world.sector_firms[firm.sector].append(firm.id)


def _deindex_firm(world: World, firm: Firm) -> None:
    key = (_grid_key(world, firm.x, firm.y), firm.sector)
    world.firm_grid[key].remove(firm.id)
    if not world.firm_grid[key]:
        del world.firm_grid[key]
    world.sector_firms[firm.sector].remove(firm.id)


def _box_cells(world: World, x: float, y: float, r: float):
    cell = world.config.radius
    last = max(int(math.ceil(1.0 / cell)) - 1, 0)
    gx0 = max(int((x - r) / cell), 0)
    gx1 = min(int((x + r) / cell), last)
    gy0 = max(int((y - r) / cell), 0)
    gy1 = min(int((y + r) / cell), last)
    for gx in range(gx0, gx1 + 1):
        for gy in range(gy0, gy1 + 1):
            yield gx, gy


# a buyer whose list holds a single nearby seller is stuck the moment that
# seller runs dry mid-month, and firms then cover the gap with imports, so
# the search keeps widening until a small choice set exists
MIN_CANDIDATES = 3


def _goods_candidates(world: World, buyer_key: tuple, x: float, y: float,
                      sector: int, exclude: int | None = None) -> list[int]:
    """Nearby firms of one sector, nearest first, refreshed monthly.  The
    search square doubles while too few sellers are in range, up to the
    configured expansions."""
    cached = world._cand_cache.get(buyer_key)
    if cached is not None:
        return cached
    cfg = world.config
    r = cfg.radius
    found: list[tuple[float, int]] = []
    for _ in range(cfg.radius_expansions + 1):
        found = []
        r2 = r * r
        for gx, gy in _box_cells(world, x, y, r):
            for fid in world.firm_grid.get(((gx, gy), sector), ()):
                if fid == exclude:
                    continue
                f = world.firms[fid]
                d2 = (f.x - x) ** 2 + (f.y - y) ** 2
                if d2 <= r2:
                    found.append((d2, fid))
        if len(found) >= MIN_CANDIDATES:
            break
        r *= 2.0
    found.sort()
    ids = [fid for _, fid in found[:cfg.max_candidates]]
    world._cand_cache[buyer_key] = ids
    return ids


def _inst_candidates(world: World, sector: int) -> list[int]:
    """Institutions have no location; they draw a fresh sample of the
    sector's firms every round so demand spreads over the whole economy."""
    ids = world.sector_firms[sector]
    k = world.config.inst_candidates
    if len(ids) <= k:
        return list(ids)
    return world.rng("shopping").sample(ids, k)


def _labor_candidates(world: World, firm: Firm,
                      vacancies: int) -> list[int]:
    cfg = world.config
    r = cfg.radius
    result: list[tuple[float, int]] = []
    for _ in range(cfg.radius_expansions + 1):
        result = []
        r2 = r * r
        for gx, gy in _box_cells(world, firm.x, firm.y, r):
            for hid in world.hh_grid.get((gx, gy), ()):
                h = world.households[hid]
                if h.employer_id is not None:
                    continue
                d2 = (h.x - firm.x) ** 2 + (h.y - firm.y) ** 2
                if d2 <= r2:
                    result.append((d2, hid))
        if len(result) >= vacancies:
            break
        r *= 2.0
    result.sort()
    return [hid for _, hid in result]


def _register_unmet(world: World, cell: tuple[int, int] | None,
                    sector: int, amount: float) -> None:
    # the economy-wide tally gates firm entry, so every buyer feeds it;
    # located buyers additionally mark their neighborhood
    world._unmet_global[sector] += amount
    if cell is None:
        return
    bucket = world._unmet_local.get(cell)
    if bucket is None:
        bucket = [0.0] * world.ns
        world._unmet_local[cell] = bucket
    bucket[sector] += amount


# ---------------------------------------------------------------------------
# goods purchases
# ---------------------------------------------------------------------------


def _spend_on_sector(world: World, buyer, sector: int, budget: float,
                     reservation: float, candidates: list[int], col: int,
                     kind: str, unmet_cell: tuple[int, int] | None
                     ) -> tuple[float, float, float]:
    """Run one shopping round against firm sellers and settle the fills.
    Returns (spent, updated reservation, units bought)."""
    if budget <= DUST:
        return 0.0, reservation, 0.0
    if not candidates:
        _register_unmet(world, unmet_cell, sector, budget)
        return 0.0, reservation, 0.0
    cfg = world.config
    firms = world.firms
    asks = [firms[fid].ask_price for fid in candidates]
    stocks = [firms[fid].goods_inventory for fid in candidates]
    out = shopping_round(budget, reservation, asks, stocks, cfg.epsilon,
                         cfg.gamma, cfg.max_trials, world.rng("shopping"))
    row = world.sector_row[sector]
    units = 0.0
    for f in out.fills:
        seller = firms[candidates[f.seller]]
        if seller.goods_inventory > 0.0:
            relief = seller.goods_cost_value * min(f.qty / seller.goods_inventory, 1.0)
            seller.goods_cost_value = max(seller.goods_cost_value - relief, 0.0)
            seller.cogs_m += relief
        seller.goods_inventory = max(seller.goods_inventory - f.qty, 0.0)
        seller.revenue_m += f.spend
        seller.sold_units_m += f.qty
        units += f.qty
        _pay(world, buyer, seller, f.spend, kind, ((row, col, f.spend),))
    for k, fid in enumerate(candidates):
        firms[fid].ask_price = out.asks[k]
    if out.unmet > DUST:
        _register_unmet(world, unmet_cell, sector, out.unmet)
        # credit the shortfall to sellers whose shelves are bare now that
        # the round is over -- whether they started empty or were drained
        # during it -- so their production plans can react to demand they
        # never got to serve.  Stored in units at each seller's own ask
        empty = [fid for fid in candidates
                 if firms[fid].goods_inventory <= DUST]
        if empty:
            part = out.unmet / len(empty)
            for fid in empty:
                f = firms[fid]
                f.missed_m += part / max(f.ask_price, 0.1)
    return out.spent, out.reservation, units


def _pool_contribute(world: World, payer, amount: float, col: int,
                     kind: str) -> None:
    """Route an investment contribution into the pool, peeling off the
    product-tax share of the GFCF column on the way in."""
    _pay(world, payer, world.pool, amount, kind,
         ((world.gfcf_row, col, amount),))
    for t, weight in world.gfcf_tax_pairs:
        tax = amount * weight
        _pay(world, world.pool, world.government, tax, "gfcf_tax",
             ((t, world.gfcf_row, tax), (world.gov_row, t, tax)))


# ---------------------------------------------------------------------------
# day steps
# ---------------------------------------------------------------------------


BACKLOG_RATE = 0.2

# share of the external sector's accumulated net receipts spent back per
# month, and the cap on that extra demand as a fraction of the base flow
TRADE_REFLUX_RATE = 0.25
TRADE_REFLUX_CAP = 0.04


def _institution_day(world: World, inst, shares: list[float] | None,
                     base_m: float, day: int, col: int, kind: str,
                     contrib_kind: str) -> None:
    """Daily catch-up purchases for the government or the external sector:
    spend the gap between the pro-rata plan and what has been realized.
    Budget unspent in earlier months is retried at a bounded extra rate."""
    if shares is None or base_m <= 0.0:
        return
    cfg = world.config
    month_cap = base_m + min(inst.backlog, BACKLOG_RATE * base_m)
    if inst is world.external and inst.net_flow > 0.0:
        # the table balances trade, so import payments the rest of the
        # world has accumulated flow back as extra export demand instead
        # of leaking out of circulation for good
        month_cap += min(TRADE_REFLUX_RATE * inst.net_flow,
                         TRADE_REFLUX_CAP * base_m)
    budget = month_cap * day / cfg.days_per_month - inst.spent_m
    if budget <= DUST:
        return
    for jj in range(world.ns):
        part = budget * shares[jj]
        spent, res, _ = _spend_on_sector(world, inst, jj, part,
                                         inst.reservation[jj],
                                         _inst_candidates(world, jj),
                                         col, kind, None)
        inst.reservation[jj] = res
        inst.spent_m += spent
    gfcf_part = budget * shares[world.ns]
    if gfcf_part > DUST and world.gfcf_active:
        _pool_contribute(world, inst, gfcf_part, col, contrib_kind)
        inst.spent_m += gfcf_part


POOL_CATCHUP = 1.2


def _pool_day(world: World, day: int) -> None:
    """The pool spends its balance on investment goods at up to twice the
    table's monthly rate, so a backlog built while supply was short drains
    gradually instead of flooding the goods market in one day."""
    if not world.gfcf_active:
        return
    pool = world.pool
    cap = POOL_CATCHUP * world.pool_base_m * day / world.config.days_per_month
    budget = min(max(pool.money, 0.0), cap - pool.spent_m)
    if budget <= DUST:
        return
    for jj in range(world.ns):
        w = world.pool_weights[jj]
        if w <= 0.0:
            continue
        part = min(budget * w, max(pool.money, 0.0))
        spent, res, _ = _spend_on_sector(world, pool, jj, part,
                                         pool.reservation[jj],
                                         _inst_candidates(world, jj),
                                         world.gfcf_row, "gfcf_purchase", None)
        pool.reservation[jj] = res
        pool.spent_m += spent


def _household_day(world: World, h: Household) -> None:
    if world.hh_shares is None:
        return
    budget = min(world._budget_month[h.id], max(h.money, 0.0))
    if budget <= DUST:
        return
    cell = _grid_key(world, h.x, h.y)
    for jj in range(world.ns):
        part = budget * world.hh_shares[jj]
        cands = _goods_candidates(world, ("h", h.id, jj), h.x, h.y, jj)
        spent, res, _ = _spend_on_sector(world, h, jj, part, h.reservation[jj],
                                         cands, world.hh_row, "consumption", cell)
        h.reservation[jj] = res
        h.spent_m += spent
    gfcf_part = budget * world.hh_shares[world.ns]
    if gfcf_part > DUST and world.gfcf_active:
        _pool_contribute(world, h, gfcf_part, world.hh_row, "gfcf_contrib")
        h.spent_m += gfcf_part


# ---------------------------------------------------------------------------
# production
# ---------------------------------------------------------------------------


def _firm_production(world: World, firm: Firm) -> None:
    cfg = world.config
    wage = world.wage
    j = firm.sector
    target = plan_production(firm, cfg.stock_buffer, firm.seed_units)
    req = input_requirements(j, target, world.coeffs, wage)

    gap = req.funding_gap(firm.money, wage)
    if gap > DUST:
        bank = world.banks.get(firm.bank_id) if firm.bank_id is not None else None
        granted = False
        if bank is not None:
            decision = credit_request(bank, firm.debt(), firm.net_worth(), gap,
                                      cfg.car, cfg.rrr, cfg.r0, cfg.spread)
            if decision.granted:
                _grant_loan(world, firm, gap, decision.monthly_rate, bank)
                granted = True
        if not granted and cfg.allow_cb_credit and (
                bank is None or world.phase == "deploy"):
            # while the economy is being built out, firms the banking
            # system cannot yet carry borrow from the central bank
            rate = cfg.r0 + cfg.spread * default_probability(firm.debt() + gap,
                                                             firm.net_worth())
            _grant_loan(world, firm, gap, rate, None)
        if req.funding_gap(firm.money, wage) > DUST:
            cost = req.total_cost(wage)
            if cost > 0.0:
                target *= max(firm.money, 0.0) / cost
                req = input_requirements(j, target, world.coeffs, wage)

    # staff to the labor budget with stochastic rounding: always rounding
    # the fractional head up would bias the wage bill high by half a head
    # per firm, which adds up across firms.  A zero plan sheds the whole
    # payroll; the owner rejoins the labor pool and the shell idles until
    # demand returns or the firm exits.
    head_need = req.labor_budget / wage if wage > 0.0 else 0.0
    needed = int(head_need)
    frac = head_need - needed
    if frac > 0.0 and world.rng("labor").random() < frac:
        needed += 1
    if head_need > DUST:
        # a sector whose whole output fits in a fraction of one worker
        # still needs that worker every month, or its firms flicker
        # between producing and idle and can die out entirely
        needed = max(needed, 1)
    current = len(firm.employees)
    if current < needed:
        cands = _labor_candidates(world, firm, needed - current)
        for hid in labor_match(needed - current, cands, world.rng("labor")):
            world.households[hid].employer_id = firm.id
            firm.employees.append(hid)
    elif current > needed:
        for _ in range(current - needed):
            fired = firm.employees.pop()
            world.households[fired].employer_id = None

    ls = world.labor_share[j]
    capacity = len(firm.employees) * wage / ls if ls > 0.0 else target
    q_plan = min(target, capacity)
    if q_plan <= DUST:
        return

    cell = _grid_key(world, firm.x, firm.y)
    for i, share in world.ic_pairs[j]:
        need = share * q_plan - firm.input_inventory[i]
        if need <= DUST:
            continue
        budget = min(need * firm.input_reservation[i], max(firm.money, 0.0))
        cands = _goods_candidates(world, ("f", firm.id, i), firm.x, firm.y, i,
                                  exclude=firm.id)
        spent, res, units = _spend_on_sector(world, firm, i, budget,
                                             firm.input_reservation[i], cands,
                                             world.sector_row[j], "ic", cell)
        firm.input_reservation[i] = res
        firm.input_inventory[i] += units
        firm.input_cost_value += spent
        firm.input_spend_m += spent
        # unfilled requirements are substituted with imports at par
        short = share * q_plan - firm.input_inventory[i]
        if short > DUST and world.ext_active:
            spend = min(short, max(firm.money, 0.0))
            if spend > DUST:
                _pay(world, firm, world.external, spend, "import",
                     ((world.ext_row, world.sector_row[j], spend),))
                firm.input_inventory[i] += spend
                firm.input_cost_value += spend
                firm.input_spend_m += spend

    if world.import_share[j] > 0.0:
        need = world.import_share[j] * q_plan - firm.import_inventory
        if need > DUST:
            spend = min(need, max(firm.money, 0.0))
            if spend > DUST:
                _pay(world, firm, world.external, spend, "import",
                     ((world.ext_row, world.sector_row[j], spend),))
                firm.import_inventory += spend
                firm.input_cost_value += spend
                firm.input_spend_m += spend

    q_real = q_plan
    for i, share in world.ic_pairs[j]:
        q_real = min(q_real, firm.input_inventory[i] / share)
    if world.import_share[j] > 0.0:
        q_real = min(q_real, firm.import_inventory / world.import_share[j])
    if q_real <= DUST:
        return

    total_before = math.fsum(firm.input_inventory) + firm.import_inventory
    consumed = 0.0
    for i, share in world.ic_pairs[j]:
        use = share * q_real
        firm.input_inventory[i] = max(firm.input_inventory[i] - use, 0.0)
        consumed += use
    use = world.import_share[j] * q_real
    firm.import_inventory = max(firm.import_inventory - use, 0.0)
    consumed += use
    if total_before > 0.0 and consumed > 0.0:
        relief = firm.input_cost_value * min(consumed / total_before, 1.0)
        firm.input_cost_value = max(firm.input_cost_value - relief, 0.0)
        firm.goods_cost_value += relief
    firm.goods_inventory += q_real


# ---------------------------------------------------------------------------
# month-end settlement
# ---------------------------------------------------------------------------


def _pay_wages(world: World) -> None:
    wage = world.wage
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        if not firm.employees:
            continue
        bill = wage * len(firm.employees)
        factor = min(max(firm.money, 0.0) / bill, 1.0) if bill > 0.0 else 0.0
        if factor <= 0.0:
            continue
        col = world.sector_row[firm.sector]
        per = wage * factor
        for hid in firm.employees:
            h = world.households[hid]
            _pay(world, firm, h, per, "wage",
                 ((world.labor_row, col, per),
                  (world.hh_row, world.labor_row, per)))
            h.wage_m += per
            firm.wage_bill_m += per


def _service_loans(world: World) -> None:
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        if not firm.loans:
            continue
        kept = []
        for loan in firm.loans:
            due_p, due_i = loan.installment()
            lender = (world.banks.get(loan.lender_id)
                      if loan.lender_id is not None else None)
            pay_i = min(due_i, max(firm.money, 0.0))
            if pay_i > DUST:
                if lender is not None:
                    _pay(world, firm, lender, pay_i, "loan_interest")
                    lender.interest_income_m += pay_i
                else:
                    _pay(world, firm, world.government, pay_i, "cb_loan_interest")
                firm.interest_m += pay_i
            pay_p = min(due_p, max(firm.money, 0.0))
            if pay_p > DUST:
                _repay_principal(world, firm, loan, lender, pay_p)
            loan.months_left = max(loan.months_left - 1, 0)
            if loan.principal > DUST:
                if loan.months_left == 0:
                    loan.months_left = 1  # arrears stay due until repaid
                kept.append(loan)
        firm.loans = kept


def _advance_interest(world: World) -> None:
    r = world.central_bank.policy_rate
    for bid in sorted(world.banks):
        bank = world.banks[bid]
        due = r * bank.cb_advance
        if due > DUST:
            _pay(world, bank, world.government, due, "cb_advance_interest")
            bank.advance_interest_m += due


def _firm_taxes(world: World) -> None:
    gov = world.government
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        if firm.revenue_m <= 0.0:
            continue
        col = world.sector_row[firm.sector]
        for t, rate in world.tax_pairs[firm.sector]:
            amount = rate * firm.revenue_m
            if amount > 0.0:
                pay = min(amount, max(firm.money, 0.0))
                if pay > DUST:
                    _pay(world, firm, gov, pay, "firm_tax",
                         ((t, col, pay), (world.gov_row, t, pay)))
                    firm.tax_m += pay
            elif amount < 0.0:
                _pay(world, gov, firm, -amount, "firm_tax",
                     ((t, col, amount), (world.gov_row, t, amount)))
                firm.tax_m += amount


def _holders_map(world: World) -> dict[int, dict[int, float]]:
    holders: dict[int, dict[int, float]] = {}
    for h in world.households:
        for fid, qty in h.shares.items():
            if qty > 0.0:
                holders.setdefault(fid, {})[h.id] = qty
    return holders


# working capital kept back from the cash payout, as months of outlays
CASH_RESERVE_MONTHS = 2.0
# fraction of cash above the reserve paid out per month
EXCESS_CASH_RATE = 0.5


def _firm_dividends(world: World, holders: dict[int, dict[int, float]]) -> None:
    cfg = world.config
    cap_row = world.capital_row
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        # inputs count against profit when the goods they went into are
        # sold, so building up inventory is not booked as a loss
        profit = (firm.revenue_m - firm.cogs_m - firm.wage_bill_m
                  - firm.tax_m - firm.interest_m)
        firm.note_profit(profit, cfg.loss_months)
        # earnings retire scheduled debt before anything is distributed,
        # otherwise indebted firms roll their principal forever and the
        # interest drain permanently eats the sector's surplus
        sched = sum(l.principal / max(l.months_left, 1) for l in firm.loans)
        payout_base = max(profit - sched, 0.0)
        if len(firm.profit_hist) >= cfg.loss_months:
            # established firms also return cash beyond a working-capital
            # reserve, so retained earnings keep circulating to owners
            reserve = CASH_RESERVE_MONTHS * (firm.wage_bill_m
                                             + firm.input_spend_m
                                             + firm.tax_m + firm.interest_m)
            excess = firm.money - payout_base - firm.debt() - reserve
            if excess > 0.0:
                payout_base += EXCESS_CASH_RATE * excess
        if payout_base <= DUST:
            continue
        holding = holders.get(fid) if firm.listed else None
        if not holding:
            holding = {firm.owner_id: 1.0}
        dividends, _ = distribute_profits(payout_base, cfg.dividend_fraction,
                                          holding)
        total = math.fsum(dividends.values())
        if total <= DUST:
            continue
        factor = min(max(firm.money, 0.0) / total, 1.0)
        col = world.sector_row[firm.sector]
        for hid in sorted(dividends):
            d = dividends[hid] * factor
            if d <= DUST:
                continue
            h = world.households[hid]
            _pay(world, firm, h, d, "dividend",
                 ((cap_row, col, d), (world.hh_row, cap_row, d)))
            h.capital_m += d


def _bank_dividends(world: World) -> None:
    cfg = world.config
    for bid in sorted(world.banks):
        bank = world.banks[bid]
        profit = bank.interest_income_m - bank.advance_interest_m - bank.writeoff_m
        if profit <= DUST:
            continue
        headroom = bank.equity - cfg.car * bank.loan_principal
        payout = min(profit, headroom)
        if payout <= DUST:
            continue
        owner = world.households[bank.owner_id]
        _pay(world, bank, owner, payout, "bank_dividend")
        owner.capital_m += payout


def _subsidies(world: World) -> None:
    if world.subsidy_m <= 0.0:
        return
    group = [h for h in world.households if h.employer_id is None]
    if not group:
        group = world.households
    per = world.subsidy_m / len(group)
    gov = world.government
    for h in group:
        _pay(world, gov, h, per, "subsidy",
             ((world.hh_row, world.gov_row, per),))
        h.transfer_m += per


def _external_settlement(world: World) -> None:
    """Monthly transfers on the external column and the government's own
    product tax, which moves no money but fills its matrix cells."""
    ext = world.external
    gov = world.government
    if world.ext_hh_m > 0.0:
        per = world.ext_hh_m / len(world.households)
        for h in world.households:
            _pay(world, ext, h, per, "ext_transfer",
                 ((world.hh_row, world.ext_row, per),))
            h.transfer_m += per
    for t, monthly in world.ext_tax_pairs:
        cells = ((t, world.ext_row, monthly), (world.gov_row, t, monthly))
        if monthly > 0.0:
            _pay(world, ext, gov, monthly, "ext_tax", cells)
        else:
            _pay(world, gov, ext, -monthly, "ext_tax", cells)
    for t, rate in world.gov_ptax_pairs:
        amount = rate * gov.spent_m
        if amount != 0.0:
            _pay(world, gov, gov, abs(amount), "gov_product_tax",
                 ((t, world.gov_row, amount), (world.gov_row, t, amount)))


def _household_settlement(world: World) -> list[EquityOrder]:
    """Direct taxes, income bookkeeping and equity order placement, in
    household id order."""
    cfg = world.config
    gov = world.government
    listed = [fid for fid in sorted(world.firms) if world.firms[fid].listed]
    listed_prices = [world.firms[fid].share_price for fid in listed]
    orders: list[EquityOrder] = []
    arrival = 0
    for h in world.households:
        direct_tax = 0.0
        spend_tax = 0.0
        for tr in world.hh_tax_rows:
            if tr.base == "income":
                amount, kind = tr.rate * (h.wage_m + h.capital_m), "income_tax"
            elif tr.base == "wage":
                amount, kind = tr.rate * h.wage_m, "social_tax"
            else:
                amount, kind = tr.rate * h.spent_m, "product_tax"
            if amount > 0.0:
                pay = min(amount, max(h.money, 0.0))
                if pay > DUST:
                    _pay(world, h, gov, pay, kind,
                         ((tr.row, world.hh_row, pay), (world.gov_row, tr.row, pay)))
                    if kind == "product_tax":
                        spend_tax += pay
                    else:
                        direct_tax += pay
            elif amount < 0.0:
                _pay(world, gov, h, -amount, kind,
                     ((tr.row, world.hh_row, amount), (world.gov_row, tr.row, amount)))
                direct_tax += amount
        net = h.wage_m + h.capital_m + h.transfer_m - direct_tax
        h.note_income(net, cfg.income_window)
        surplus = net - h.spent_m - spend_tax
        equity_budget = 0.0
        if surplus > 0.0:
            _, equity_budget = portfolio_split(surplus, cfg.deposit_fraction)
        if equity_budget > DUST and listed:
            pick = listed[select_seller_logit(listed_prices, cfg.gamma,
                                              world.rng("clearing"))]
            limit = h.equity_reservation.get(pick, world.firms[pick].share_price)
            if limit > 0.0:
                orders.append(EquityOrder("buy", pick, limit,
                                          equity_budget / limit, h.id, arrival))
                arrival += 1
        for fid in sorted(h.shares):
            firm = world.firms.get(fid)
            if firm is None or not firm.listed:
                continue
            qty = h.shares[fid] * cfg.sell_fraction
            if qty <= DUST:
                continue
            limit = h.equity_reservation.get(fid, firm.share_price)
            if limit > 0.0:
                orders.append(EquityOrder("sell", fid, limit, qty, h.id, arrival))
                arrival += 1
    return orders


def _firm_exits(world: World, holders: dict[int, dict[int, float]]) -> None:
    cfg = world.config
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        if (not firm_exit_check(firm, cfg.loss_months)
                and firm.idle_months < cfg.loss_months):
            continue
        for hid in firm.employees:
            world.households[hid].employer_id = None
        firm.employees = []
        firm.goods_inventory = 0.0
        firm.goods_cost_value = 0.0
        firm.input_inventory = [0.0] * world.ns
        firm.import_inventory = 0.0
        firm.input_cost_value = 0.0
        for loan in firm.loans:
            lender = (world.banks.get(loan.lender_id)
                      if loan.lender_id is not None else None)
            pay = min(loan.principal, max(firm.money, 0.0))
            if pay > DUST:
                _repay_principal(world, firm, loan, lender, pay)
            if loan.principal > DUST:
                if lender is not None:
                    lender.equity -= loan.principal
                    lender.loan_principal -= loan.principal
                    lender.writeoff_m += loan.principal
                    world.ledger.add_kind("loan_writeoff", loan.principal, 0.0)
                else:
                    world.ledger.add_kind("cb_loan_writeoff", loan.principal, 0.0)
        firm.loans = []
        if firm.money > DUST:
            holding = holders.get(fid) if firm.listed else None
            if holding:
                total = math.fsum(holding.values())
                residual = firm.money
                for hid in sorted(holding):
                    part = residual * holding[hid] / total
                    _pay(world, firm, world.households[hid],
                         min(part, max(firm.money, 0.0)), "liquidation")
            else:
                _pay(world, firm, world.households[firm.owner_id],
                     firm.money, "liquidation")
        for hid in sorted(holders.get(fid, ())):
            world.households[hid].shares.pop(fid, None)
            world.households[hid].equity_reservation.pop(fid, None)
        owner = world.households[firm.owner_id]
        if owner.owns_firm_id == fid:
            owner.owns_firm_id = None
        _deindex_firm(world, firm)
        del world.firms[fid]


# unmet demand below this share of a sector's monthly output is treated as
# frictional noise rather than room for another firm
ENTRY_GAP_RATIO = 0.05


# a sector invites entrants only once its demand gap has persisted this
# many consecutive months, and admits at most this many per month.  A lone
# stock-out in a sector with a handful of firms otherwise reads as a gap,
# and because entrants buy their own sector's inputs, a founding wave
# deepens the very shortage that triggered it
ENTRY_STREAK_MONTHS = 3
ENTRY_SECTOR_CAP = 2


def _firm_entries(world: World) -> None:
    cfg = world.config
    n = len(world.households)
    for k in range(world.ns):
        if world._unmet_global[k] >= ENTRY_GAP_RATIO * world.sector_out_m[k]:
            world.unmet_streak[k] += 1
        else:
            world.unmet_streak[k] = 0
    open_sector = [world.unmet_streak[k] >= ENTRY_STREAK_MONTHS
                   for k in range(world.ns)]
    if not any(open_sector):
        return
    founded = [0] * world.ns
    for h in world.households:
        if h.owns_firm_id is not None or h.owns_bank_id is not None:
            continue
        local = world._unmet_local.get(_grid_key(world, h.x, h.y))
        # economy-wide gaps enter each household's view at per-capita
        # scale so neighborhood demand is not drowned out
        signal = [(world._unmet_global[k] / n + (local[k] if local else 0.0))
                  if open_sector[k] and founded[k] < ENTRY_SECTOR_CAP else 0.0
                  for k in range(world.ns)]
        sector = firm_entry_decision(signal, cfg.p_open, world.rng("entry"))
        if sector is None:
            continue
        _found_firm(world, h, sector)
        founded[sector] += 1


def _found_firm(world: World, founder: Household, sector: int) -> None:
    cfg = world.config
    fid = world.next_firm_id
    world.next_firm_id += 1
    firm = Firm(id=fid, owner_id=founder.id, sector=sector,
                x=founder.x, y=founder.y,
                production_day=world.rng("proddays").randrange(1, cfg.days_per_month + 1),
                input_inventory=[0.0] * world.ns,
                input_reservation=[1.0] * world.ns,
                bank_id=_nearest_bank_id(world, founder.x, founder.y))
    startup = min(max(founder.money, 0.0), world.startup_cash)
    world.firms[fid] = firm
    if startup > 0.0:
        _pay(world, founder, firm, startup, "share_issue")
    firm.seed_units = startup / max(1.0 - world.surplus_share[sector], 0.1)
    if founder.employer_id is not None:
        world.firms[founder.employer_id].employees.remove(founder.id)
    founder.employer_id = fid
    founder.owns_firm_id = fid
    firm.employees = [founder.id]
    _index_firm(world, firm)


def _nearest_bank_id(world: World, x: float, y: float) -> int | None:
    best = None
    best_key = None
    for bid in sorted(world.banks):
        bank = world.banks[bid]
        key = ((bank.x - x) ** 2 + (bank.y - y) ** 2, bid)
        if best_key is None or key < best_key:
            best, best_key = bid, key
    return best


def _maybe_found_bank(world: World) -> None:
    cb = world.central_bank
    if len(world.banks) >= cb.max_banks:
        return
    best = None
    for h in world.households:
        if h.owns_bank_id is not None:
            continue
        if h.money >= cb.bank_min_net_worth and (best is None or h.money > best.money):
            best = h
    if best is None:
        return
    bid = world.next_bank_id
    world.next_bank_id += 1
    bank = Bank(id=bid, owner_id=best.id, x=best.x, y=best.y)
    equity_in = min(best.money, cb.bank_min_net_worth)
    _pay(world, best, bank, equity_in, "bank_equity_in")
    best.owns_bank_id = bid
    world.banks[bid] = bank
    _migrate_deposits(world)


def _migrate_deposits(world: World) -> None:
    """Every household and firm banks with its nearest branch; deposits
    and reserves are restated from member balances so each bank's balance
    sheet identity holds exactly."""
    for h in world.households:
        h.bank_id = _nearest_bank_id(world, h.x, h.y)
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        firm.bank_id = _nearest_bank_id(world, firm.x, firm.y)
    deposits = {bid: [] for bid in world.banks}
    for h in world.households:
        if h.bank_id is not None:
            deposits[h.bank_id].append(h.money)
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        if firm.bank_id is not None:
            deposits[firm.bank_id].append(firm.money)
    for bid in sorted(world.banks):
        bank = world.banks[bid]
        bank.total_deposits = math.fsum(deposits[bid])
        bank.reserves = (bank.equity + bank.total_deposits + bank.cb_advance
                         - bank.loan_principal)
        _cover_reserves(bank)


def _listings(world: World) -> None:
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        if firm.listed or firm.net_worth() < world.listing_net_worth:
            continue
        firm.listed = True
        firm.shares_outstanding = 100.0
        firm.share_price = firm.net_worth() / 100.0
        world.households[firm.owner_id].shares[fid] = 100.0


def _settle_equity(world: World, orders: list[EquityOrder]) -> None:
    if not orders:
        return
    result = clearing_house(orders, world.config.epsilon)
    for trade in result.trades:
        firm = world.firms.get(trade.firm_id)
        if firm is None or not firm.listed:
            continue
        buyer = world.households[trade.buyer_id]
        seller = world.households[trade.seller_id]
        qty = min(trade.qty, seller.shares.get(trade.firm_id, 0.0))
        if trade.price > 0.0:
            qty = min(qty, max(buyer.money, 0.0) / trade.price)
        if qty <= DUST:
            continue
        _pay(world, buyer, seller, qty * trade.price, "equity_trade")
        seller.shares[trade.firm_id] = seller.shares.get(trade.firm_id, 0.0) - qty
        if seller.shares[trade.firm_id] <= DUST:
            del seller.shares[trade.firm_id]
        buyer.shares[trade.firm_id] = buyer.shares.get(trade.firm_id, 0.0) + qty
    for fid in sorted(result.quoted):
        firm = world.firms.get(fid)
        if firm is not None:
            firm.share_price = result.quoted[fid]
    for order, limit in zip(orders, result.new_limits):
        agent = world.households[order.agent_id]
        agent.equity_reservation[order.firm_id] = limit


# ---------------------------------------------------------------------------
# month loop
# ---------------------------------------------------------------------------


BETA_MIN = 0.125
BETA_MAX = 8.0


def beta_update(beta: float, target: float, realized: float,
                damping: float) -> float:
    """One deployment correction of the budget factor: move toward the
    target-to-realized ratio, at most ``damping`` per month.  The factor
    is kept inside fixed bounds so a supply-constrained stretch cannot
    push it beyond recovery."""
    if realized <= 0.0:
        return beta
    ratio = target / realized
    step = min(max(ratio, 1.0 - damping), 1.0 + damping)
    return min(max(beta * step, BETA_MIN), BETA_MAX)


def household_wealth(world: World, h: Household) -> float:
    """Deposits plus listed shares at quoted prices plus the book value of
    an owned unlisted firm or bank, floored at zero for the book parts."""
    total = h.money
    for fid, qty in h.shares.items():
        firm = world.firms.get(fid)
        if firm is not None:
            total += qty * firm.share_price
    if h.owns_firm_id is not None:
        firm = world.firms.get(h.owns_firm_id)
        if firm is not None and not firm.listed:
            total += max(firm.net_worth(), 0.0)
    if h.owns_bank_id is not None:
        bank = world.banks.get(h.owns_bank_id)
        if bank is not None:
            total += max(bank.equity, 0.0)
    return total


# monthly pull of posted prices and reservations toward the fixed
# wage-and-import numeraire; the haggling steps are multiplicative, so a
# balanced mix of trades and failures drifts prices down by epsilon^2
# per pair, and without an anchor that bias compounds over decades
PRICE_ANCHOR_RATE = 0.05


def _anchor_prices(world: World) -> None:
    a = PRICE_ANCHOR_RATE
    for h in world.households:
        h.reservation = [r + a * (1.0 - r) for r in h.reservation]
    for f in world.firms.values():
        f.ask_price += a * (1.0 - f.ask_price)
        f.input_reservation = [r + a * (1.0 - r) for r in f.input_reservation]
    for inst in (world.government, world.external, world.pool):
        inst.reservation = [r + a * (1.0 - r) for r in inst.reservation]


def _begin_month(world: World) -> None:
    cfg = world.config
    world._cand_cache = {}
    world._unmet_local = {}
    world._unmet_global = [0.0] * world.ns
    world._producers_by_day = {}
    _anchor_prices(world)
    for fid in sorted(world.firms):
        world._producers_by_day.setdefault(world.firms[fid].production_day,
                                           []).append(fid)
    if world.phase == "deploy":
        incomes = [h.income_avg() for h in world.households]
        total = math.fsum(incomes)
        if total > DUST:
            world._budget_month = [world.beta * world.hh_base_m * inc / total
                                   for inc in incomes]
        else:
            even = world.beta * world.hh_base_m / len(world.households)
            world._budget_month = [even] * len(world.households)
    else:
        world._budget_month = [
            world.beta * consumption_budget(h.income_avg(),
                                            household_wealth(world, h),
                                            cfg.kappa, cfg.phi)
            for h in world.households
        ]


# demand forecast multiplier for a firm that ends the month with nothing
# left on the shelf: selling out means demand was at least what was seen,
# and compounding monthly lets an undersized firm find its level within a
# year instead of inching up by its thin share of the miss credit
STOCKOUT_GROWTH = 1.5


def _finish_month(world: World, month: int) -> None:
    cfg = world.config
    ledger = world.ledger

    sector_emp = [0] * world.ns
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        sector_emp[firm.sector] += len(firm.employees)
    employed = sum(sector_emp)
    n = len(world.households)
    row = TimeSeriesRow(
        month=month,
        unemployment_pct=100.0 * (n - employed) / n,
        employment=sector_emp,
        hh_cons=math.fsum(h.spent_m for h in world.households),
        gov_cons=world.government.spent_m,
        ext_cons=world.external.spent_m,
        ic_total=ledger.open_volume("ic") + ledger.open_volume("import"),
        inv_goods=math.fsum(world.firms[fid].goods_inventory
                            for fid in sorted(world.firms)),
        inv_inputs=math.fsum(math.fsum(world.firms[fid].input_inventory)
                             + world.firms[fid].import_inventory
                             for fid in sorted(world.firms)),
        hh_wealth=math.fsum(household_wealth(world, h) for h in world.households),
    )
    world.series.append(row)

    world.money_history.append(_audited_money(world))
    ledger.close_month()
    report = audit_money(ledger, world.money_history, month)
    world.audit_residuals.append(report.residual)
    if not report.passed:
        raise EngineError(
            f"money audit failed in month {month}: residual {report.residual!r}")

    for bid in sorted(world.banks):
        bank = world.banks[bid]
        repay = min(bank.cb_advance, bank.reserves)
        if repay > 0.0:
            bank.cb_advance -= repay
            bank.reserves -= repay
        bank.interest_income_m = 0.0
        bank.advance_interest_m = 0.0
        bank.writeoff_m = 0.0
    for fid in sorted(world.firms):
        firm = world.firms[fid]
        # demand seen this month is what the firm sold plus what buyers
        # asked of its bare shelf; extrapolating the sell-out rate instead
        # would run every capacity-bound firm permanently hot.  A firm
        # that sold its whole stock grows multiplicatively on top of
        # that: per-buyer miss credit is split across every bare-shelved
        # candidate, a signal too dilute to pull any one firm up to
        # efficient scale in a sector full of undersized starters.  A
        # firm that stood empty all month but was asked for goods
        # re-plans at founding scale instead of decaying to zero
        if firm.sold_units_m > 0.0:
            demand = firm.sold_units_m + firm.missed_m
            if firm.goods_inventory <= DUST:
                demand = max(demand, STOCKOUT_GROWTH * firm.sold_units_m)
        elif firm.missed_m > DUST:
            hist = firm.demand_hist
            mean = math.fsum(hist) / len(hist) if hist else 0.0
            demand = max(firm.seed_units, 1.1 * mean, firm.missed_m)
        else:
            demand = 0.0
        firm.note_demand(demand, cfg.demand_window)
        firm.idle_months = 0 if firm.revenue_m > DUST else firm.idle_months + 1
        firm.revenue_m = 0.0
        firm.sold_units_m = 0.0
        firm.missed_m = 0.0
        firm.cogs_m = 0.0
        firm.input_spend_m = 0.0
        firm.wage_bill_m = 0.0
        firm.tax_m = 0.0
        firm.interest_m = 0.0
    for h in world.households:
        h.wage_m = 0.0
        h.capital_m = 0.0
        h.transfer_m = 0.0
        h.spent_m = 0.0
    gov = world.government
    gov.backlog = max(gov.backlog + world.gov_base_m - gov.spent_m, 0.0)
    ext = world.external
    ext.backlog = max(ext.backlog + world.ext_base_m - ext.spent_m, 0.0)
    gov.spent_m = 0.0
    ext.spent_m = 0.0
    world.pool.spent_m = 0.0


def run_month(world: World) -> None:
    cfg = world.config
    month = world.month + 1
    _begin_month(world)
    for day in range(1, cfg.days_per_month + 1):
        _institution_day(world, world.government, world.gov_shares,
                         world.gov_base_m, day, world.gov_row,
                         "gov_purchase", "gfcf_contrib")
        _institution_day(world, world.external, world.ext_shares,
                         world.ext_base_m, day, world.ext_row,
                         "export", "ext_gfcf")
        _pool_day(world, day)
        for fid in world._producers_by_day.get(day, ()):
            firm = world.firms.get(fid)
            if firm is not None:
                _firm_production(world, firm)
        for hid in world.buyers_by_day.get(day, ()):
            _household_day(world, world.households[hid])
    _pay_wages(world)
    _service_loans(world)
    _advance_interest(world)
    _firm_taxes(world)
    holders = _holders_map(world)
    _firm_dividends(world, holders)
    _bank_dividends(world)
    _subsidies(world)
    _external_settlement(world)
    orders = _household_settlement(world)
    _firm_exits(world, holders)
    _firm_entries(world)
    _maybe_found_bank(world)
    _listings(world)
    _settle_equity(world, orders)
    if world.phase == "deploy":
        realized = math.fsum(h.spent_m for h in world.households)
        world.beta = beta_update(world.beta, world.hh_base_m, realized,
                                 cfg.beta_damping)
        if month >= cfg.deployment_months:
            world.phase = "free"
    _finish_month(world, month)
    world.month = month


def run(world: World, months: int) -> World:
    if months < 0:
        raise ValueError("months must be non-negative")
    for _ in range(months):
        run_month(world)
    return world


# ---------------------------------------------------------------------------
# snapshots and hashing
# ---------------------------------------------------------------------------


def _pairs(d: dict) -> list:
    return [[k, d[k]] for k in sorted(d)]


def _hh_state(h: Household) -> dict:
    return {
        "id": h.id, "x": h.x, "y": h.y, "buy_day": h.buy_day,
        "money": h.money, "bank_id": h.bank_id, "employer_id": h.employer_id,
        "wage_monthly": h.wage_monthly, "shares": _pairs(h.shares),
        "income_hist": list(h.income_hist), "reservation": list(h.reservation),
        "equity_reservation": _pairs(h.equity_reservation),
        "owns_firm_id": h.owns_firm_id, "owns_bank_id": h.owns_bank_id,
        "wage_m": h.wage_m, "capital_m": h.capital_m,
        "transfer_m": h.transfer_m, "spent_m": h.spent_m,
    }


def _hh_from(d: dict) -> Household:
    return Household(
        id=d["id"], x=d["x"], y=d["y"], buy_day=d["buy_day"], money=d["money"],
        bank_id=d["bank_id"], employer_id=d["employer_id"],
        wage_monthly=d["wage_monthly"], shares={k: v for k, v in d["shares"]},
        income_hist=list(d["income_hist"]), reservation=list(d["reservation"]),
        equity_reservation={k: v for k, v in d["equity_reservation"]},
        owns_firm_id=d["owns_firm_id"], owns_bank_id=d["owns_bank_id"],
        wage_m=d["wage_m"], capital_m=d["capital_m"],
        transfer_m=d["transfer_m"], spent_m=d["spent_m"],
    )


def _firm_state(f: Firm) -> dict:
    return {
        "id": f.id, "owner_id": f.owner_id, "sector": f.sector,
        "x": f.x, "y": f.y, "production_day": f.production_day,
        "ask_price": f.ask_price, "goods_inventory": f.goods_inventory,
        "goods_cost_value": f.goods_cost_value,
        "input_inventory": list(f.input_inventory),
        "import_inventory": f.import_inventory,
        "input_cost_value": f.input_cost_value,
        "input_reservation": list(f.input_reservation),
        "seed_units": f.seed_units, "employees": list(f.employees),
        "money": f.money, "bank_id": f.bank_id,
        "loans": [[l.principal, l.monthly_rate, l.months_left, l.lender_id]
                  for l in f.loans],
        "shares_outstanding": f.shares_outstanding,
        "share_price": f.share_price, "listed": f.listed,
        "demand_hist": list(f.demand_hist), "profit_hist": list(f.profit_hist),
        "idle_months": f.idle_months,
        "revenue_m": f.revenue_m, "sold_units_m": f.sold_units_m,
        "missed_m": f.missed_m, "cogs_m": f.cogs_m,
        "input_spend_m": f.input_spend_m, "wage_bill_m": f.wage_bill_m,
        "tax_m": f.tax_m, "interest_m": f.interest_m,
    }


def _firm_from(d: dict) -> Firm:
    return Firm(
        id=d["id"], owner_id=d["owner_id"], sector=d["sector"],
        x=d["x"], y=d["y"], production_day=d["production_day"],
        ask_price=d["ask_price"], goods_inventory=d["goods_inventory"],
        goods_cost_value=d["goods_cost_value"],
        input_inventory=list(d["input_inventory"]),
        import_inventory=d["import_inventory"],
        input_cost_value=d["input_cost_value"],
        input_reservation=list(d["input_reservation"]),
        seed_units=d["seed_units"], employees=list(d["employees"]),
        money=d["money"], bank_id=d["bank_id"],
        loans=[Loan(principal=l[0], monthly_rate=l[1], months_left=l[2],
                    lender_id=l[3]) for l in d["loans"]],
        shares_outstanding=d["shares_outstanding"],
        share_price=d["share_price"], listed=d["listed"],
        demand_hist=list(d["demand_hist"]), profit_hist=list(d["profit_hist"]),
        idle_months=d["idle_months"],
        revenue_m=d["revenue_m"], sold_units_m=d["sold_units_m"],
        missed_m=d["missed_m"], cogs_m=d["cogs_m"],
        input_spend_m=d["input_spend_m"], wage_bill_m=d["wage_bill_m"],
        tax_m=d["tax_m"], interest_m=d["interest_m"],
    )


def _bank_state(b: Bank) -> dict:
    return {
        "id": b.id, "owner_id": b.owner_id, "x": b.x, "y": b.y,
        "reserves": b.reserves, "total_deposits": b.total_deposits,
        "loan_principal": b.loan_principal, "equity": b.equity,
        "cb_advance": b.cb_advance,
    }


def _bank_from(d: dict) -> Bank:
    return Bank(id=d["id"], owner_id=d["owner_id"], x=d["x"], y=d["y"],
                reserves=d["reserves"], total_deposits=d["total_deposits"],
                loan_principal=d["loan_principal"], equity=d["equity"],
                cb_advance=d["cb_advance"])


def _series_state(rows: list[TimeSeriesRow]) -> list:
    return [[r.month, r.unemployment_pct, list(r.employment), r.hh_cons,
             r.gov_cons, r.ext_cons, r.ic_total, r.inv_goods, r.inv_inputs,
             r.hh_wealth] for r in rows]


def _series_from(data: list) -> list[TimeSeriesRow]:
    return [TimeSeriesRow(month=r[0], unemployment_pct=r[1],
                          employment=list(r[2]), hh_cons=r[3], gov_cons=r[4],
                          ext_cons=r[5], ic_total=r[6], inv_goods=r[7],
                          inv_inputs=r[8], hh_wealth=r[9]) for r in data]


def _rng_state(rng: random.Random) -> list:
    version, internal, gauss = rng.getstate()
    return [version, list(internal), gauss]


def _state_body(world: World) -> dict:
    return {
        "sam": serialize_sam(world.sam),
        "config": world.config.to_mapping(),
        "month": world.month,
        "phase": world.phase,
        "beta": world.beta,
        "next_firm_id": world.next_firm_id,
        "next_bank_id": world.next_bank_id,
        "households": [_hh_state(h) for h in world.households],
        "firms": [_firm_state(world.firms[fid]) for fid in sorted(world.firms)],
        "banks": [_bank_state(world.banks[bid]) for bid in sorted(world.banks)],
        "government": {"money": world.government.money,
                       "backlog": world.government.backlog},
        "external": {"net_flow": world.external.net_flow,
                     "reservation": list(world.external.reservation),
                     "backlog": world.external.backlog},
        "gov_reservation": list(world.government.reservation),
        "pool": {"money": world.pool.money,
                 "reservation": list(world.pool.reservation),
                 "spent_m": world.pool.spent_m},
        "rng": {name: _rng_state(world.rngs[name]) for name in RNG_STREAMS},
        "ledger": world.ledger.state(),
        "money_history": list(world.money_history),
        "series": _series_state(world.series),
        "audit_residuals": list(world.audit_residuals),
        "unmet_streak": list(world.unmet_streak),
    }


def _canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def world_hash(world: World) -> str:
    """Checksum over the complete serialized state; two worlds with equal
    hashes will evolve identically."""
    return hashlib.sha256(_canonical(_state_body(world)).encode()).hexdigest()


def save_snapshot(world: World, path) -> None:
    """Write the world to a month-boundary snapshot file."""
    body = _state_body(world)
    doc = {
        "format": SNAPSHOT_FORMAT,
        "checksum": hashlib.sha256(_canonical(body).encode()).hexdigest(),
        "body": body,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_snapshot(path) -> World:
    """Rebuild a world from a snapshot, verifying the embedded checksum."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"unsupported snapshot format in {path}")
    body = doc.get("body")
    checksum = doc.get("checksum")
    if body is None or checksum is None:
        raise SnapshotError(f"snapshot {path} is missing body or checksum")
    if hashlib.sha256(_canonical(body).encode()).hexdigest() != checksum:
        raise SnapshotError(f"snapshot {path} failed its checksum")

    sam = parse_sam(body["sam"])
    config = SimConfig.from_mapping(body["config"])
    world = World(sam, config)
    world.month = body["month"]
    world.phase = body["phase"]
    world.beta = body["beta"]
    world.next_firm_id = body["next_firm_id"]
    world.next_bank_id = body["next_bank_id"]
    world.households = [_hh_from(d) for d in body["households"]]
    world.households.sort(key=lambda h: h.id)
    world.firms = {d["id"]: _firm_from(d) for d in body["firms"]}
    world.banks = {d["id"]: _bank_from(d) for d in body["banks"]}
    world.government.money = body["government"]["money"]
    world.government.backlog = body["government"]["backlog"]
    world.government.reservation = list(body["gov_reservation"])
    world.external.net_flow = body["external"]["net_flow"]
    world.external.reservation = list(body["external"]["reservation"])
    world.external.backlog = body["external"]["backlog"]
    world.pool.money = body["pool"]["money"]
    world.pool.reservation = list(body["pool"]["reservation"])
    world.pool.spent_m = body["pool"]["spent_m"]
    for name in RNG_STREAMS:
        version, internal, gauss = body["rng"][name]
        world.rngs[name].setstate((version, tuple(internal), gauss))
    world.ledger = Ledger.from_state(body["ledger"])
    world.money_history = list(body["money_history"])
    world.series = _series_from(body["series"])
    world.audit_residuals = list(body["audit_residuals"])
    world.unmet_streak = [int(v) for v in body["unmet_streak"]]
    _rebuild_indexes(world)
    return world
