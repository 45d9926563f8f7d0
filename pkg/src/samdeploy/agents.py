"""Agent state records and per-agent decision rules.

Agents are plain mutable records; every field is a JSON-friendly scalar or
container so worlds can be checkpointed without custom encoders.  The
decision rules here are pure functions of their arguments.  Anything that
moves money or mutates more than one agent lives in the engine, which owns
the single-threaded step loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from samdeploy.sam import SamTable, TechnicalCoefficients


# ---------------------------------------------------------------------------
# state records
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class Household:
    id: int
    x: float
    y: float
    buy_day: int
    money: float = 0.0
    bank_id: int | None = None
    employer_id: int | None = None
    wage_monthly: float = 0.0
    shares: dict[int, float] = field(default_factory=dict)
    income_hist: list[float] = field(default_factory=list)
    # One buyer reservation price per producing sector.
    reservation: list[float] = field(default_factory=list)
    # Last limit price used per listed firm; new quotes seed missing entries.
    equity_reservation: dict[int, float] = field(default_factory=dict)
    owns_firm_id: int | None = None
    owns_bank_id: int | None = None
    # intra-month accumulators, reset by the engine at each month end
    wage_m: float = 0.0
    capital_m: float = 0.0
    transfer_m: float = 0.0
    spent_m: float = 0.0

    @property
    def employed(self) -> bool:
        return self.employer_id is not None

    def note_income(self, amount: float, window: int) -> None:
        self.income_hist.append(amount)
        if len(self.income_hist) > window:
            del self.income_hist[: len(self.income_hist) - window]

    def income_avg(self) -> float:
        if not self.income_hist:
            return 0.0
        return math.fsum(self.income_hist) / len(self.income_hist)

    def wealth(self, share_price_of) -> float:
        """Cash-plus-deposits balance plus shareholdings at quoted prices.
        ``share_price_of`` maps a firm id to its last share price."""
        total = self.money
        for firm_id, qty in self.shares.items():
            total += qty * share_price_of(firm_id)
        return total


@dataclass(slots=True)
class Loan:
    principal: float
    monthly_rate: float
    months_left: int
    lender_id: int | None  # bank id, or None for the central bank

    def installment(self) -> tuple[float, float]:
        """(principal due, interest due) for one month of equal-principal
        amortization."""
        if self.months_left <= 0 or self.principal <= 0.0:
            return 0.0, 0.0
        return self.principal / self.months_left, self.principal * self.monthly_rate


@dataclass(slots=True)
class Firm:
    id: int
    owner_id: int
    sector: int
    x: float
    y: float
    production_day: int
    ask_price: float = 1.0
    goods_inventory: float = 0.0
    goods_cost_value: float = 0.0
    input_inventory: list[float] = field(default_factory=list)
    import_inventory: float = 0.0
    input_cost_value: float = 0.0
    # One buyer reservation price per producing sector for input purchases.
    input_reservation: list[float] = field(default_factory=list)
    # Output level assigned at founding, used until sales history exists.
    seed_units: float = 0.0
    employees: list[int] = field(default_factory=list)
    money: float = 0.0
    bank_id: int | None = None
    loans: list[Loan] = field(default_factory=list)
    shares_outstanding: float = 1.0
    share_price: float = 1.0
    listed: bool = False
    demand_hist: list[float] = field(default_factory=list)
    profit_hist: list[float] = field(default_factory=list)
    # Months in a row without any sales revenue; exits when it persists.
    idle_months: int = 0
    # intra-month accumulators, reset by the engine at each month end
    revenue_m: float = 0.0
    sold_units_m: float = 0.0
    # Units buyers asked for while this firm's shelf stood bare, valued
    # at its own ask price; added to sales when forecasting demand.
    missed_m: float = 0.0
    # Input cost of the units actually sold, for the profit statement.
    cogs_m: float = 0.0
    input_spend_m: float = 0.0
    wage_bill_m: float = 0.0
    tax_m: float = 0.0
    interest_m: float = 0.0

    def debt(self) -> float:
        return math.fsum(loan.principal for loan in self.loans)

    def net_worth(self) -> float:
        return self.money + self.goods_cost_value + self.input_cost_value - self.debt()

    def note_demand(self, units: float, window: int) -> None:
        self.demand_hist.append(units)
        if len(self.demand_hist) > window:
            del self.demand_hist[: len(self.demand_hist) - window]

    def note_profit(self, profit: float, window: int) -> None:
        self.profit_hist.append(profit)
        if len(self.profit_hist) > window:
            del self.profit_hist[: len(self.profit_hist) - window]


@dataclass(slots=True)
class Bank:
    id: int
    owner_id: int
    x: float
    y: float
    reserves: float = 0.0
    total_deposits: float = 0.0
    loan_principal: float = 0.0
    equity: float = 0.0
    cb_advance: float = 0.0
    interest_income_m: float = 0.0
    advance_interest_m: float = 0.0
    writeoff_m: float = 0.0

    def balance_gap(self) -> float:
        """Deviation from the balance-sheet identity; zero when consistent."""
        return (self.reserves + self.loan_principal
                - self.total_deposits - self.cb_advance - self.equity)

    def capital_ratio(self, extra_loan: float = 0.0) -> float:
        loans = self.loan_principal + extra_loan
        if loans <= 0.0:
            return math.inf
        return self.equity / loans


@dataclass(slots=True)
class Government:
    money: float = 0.0
    tax_received_m: dict[str, float] = field(default_factory=dict)
    subsidy_budget_monthly: float = 0.0
    reservation: list[float] = field(default_factory=list)
    spent_m: float = 0.0
    # Purchase budget left unspent in earlier months, retried gradually.
    backlog: float = 0.0

    def note_tax(self, account: str, amount: float) -> None:
        self.tax_received_m[account] = self.tax_received_m.get(account, 0.0) + amount


@dataclass(slots=True)
class CentralBank:
    policy_rate: float
    bank_min_net_worth: float
    max_banks: int


@dataclass(slots=True)
class ExternalSector:
    sell_price: list[float] = field(default_factory=list)
    net_flow: float = 0.0
    reservation: list[float] = field(default_factory=list)
    spent_m: float = 0.0
    # Purchase budget left unspent in earlier months, retried gradually.
    backlog: float = 0.0


@dataclass(slots=True)
class CapitalPool:
    """Pass-through account pooling investment-good contributions before
    they are spent on producer output."""
    money: float = 0.0
    reservation: list[float] = field(default_factory=list)
    spent_m: float = 0.0


# ---------------------------------------------------------------------------
# household rules
# ---------------------------------------------------------------------------


def consumption_budget(income_avg: float, wealth: float, kappa: float,
                       phi: float, budget_factor: float = 1.0) -> float:
    """Buffer-stock spending rule: spend average income, corrected by a
    fraction of the gap between wealth and the target buffer of ``phi``
    months of income.  Clamped at zero, then scaled by ``budget_factor``."""
    return budget_factor * max(0.0, income_avg + kappa * (wealth - phi * income_avg))


def portfolio_split(surplus: float, deposit_fraction: float) -> tuple[float, float]:
    """Split a monthly surplus into a deposit change and an equity-order
    budget.  Deficits are covered entirely from deposits."""
    if surplus <= 0.0:
        return surplus, 0.0
    deposit = deposit_fraction * surplus
    return deposit, surplus - deposit


# ---------------------------------------------------------------------------
# firm rules
# ---------------------------------------------------------------------------


def plan_production(firm: Firm, stock_buffer: float, seed_output: float) -> float:
    """Units to produce so that stock returns to (1+buffer) x mean recent
    demand.  A firm with no sales history yet produces ``seed_output``."""
    if not firm.demand_hist:
        return seed_output
    target_stock = (1.0 + stock_buffer) * (math.fsum(firm.demand_hist) / len(firm.demand_hist))
    return max(0.0, target_stock - firm.goods_inventory)


@dataclass(slots=True)
class Requirements:
    sector: int
    output_value: float
    ic_budget: list[float]       # money to spend on each producing sector
    import_budget: float
    labor_heads: int
    labor_budget: float
    tax_provision: float
    labor_elasticity: float

    def total_cost(self, wage: float) -> float:
        return (math.fsum(self.ic_budget) + self.import_budget
                + self.labor_heads * wage + self.tax_provision)

    def funding_gap(self, available: float, wage: float) -> float:
        return max(0.0, self.total_cost(wage) - available)


def input_requirements(sector: int, output_units: float,
                       coeffs: TechnicalCoefficients, wage: float,
                       mode: str = "leontief", unit_value: float = 1.0) -> Requirements:
    """Inputs needed for ``output_units`` of production, from the per-value
    cost structure of the sector's column.

    Budgets are money amounts per the column shares.  Headcount rounds the
    labor budget up to whole workers.  ``mode`` selects how the primary
    input budget is interpreted; the labor/surplus exponent split gives the
    same labor budget as the fixed-share form, so both modes agree and the
    elasticity is reported for inspection.
    """
    if sector < 0 or sector >= len(coeffs.sectors):
        raise ValueError(f"unknown sector index {sector}")
    if mode not in ("leontief", "cobb-douglas"):
        raise ValueError(f"unknown production mode {mode!r}")
    if output_units < 0:
        raise ValueError("output must be non-negative")
    value = output_units * unit_value
    ic = [float(coeffs.ic_share[i, sector]) * value for i in range(len(coeffs.sectors))]
    labor_budget = float(coeffs.labor_share[sector]) * value
    primary = labor_budget + float(coeffs.surplus_share[sector]) * value
    alpha = labor_budget / primary if primary > 0.0 else 0.0
    heads = 0 if labor_budget <= 0.0 or wage <= 0.0 else math.ceil(labor_budget / wage - 1e-9)
    tax = float(coeffs.tax_share[:, sector].sum()) * value
    return Requirements(
        sector=sector,
        output_value=value,
        ic_budget=ic,
        import_budget=float(coeffs.import_share[sector]) * value,
        labor_heads=heads,
        labor_budget=labor_budget,
        tax_provision=tax,
        labor_elasticity=alpha,
    )


def firm_entry_decision(local_unmet: list[float], p_open: float, rng) -> int | None:
    """Open a firm with probability ``p_open``, picking the sector with
    chance proportional to its unmet neighborhood demand so entrants
    spread across gaps instead of piling into the single largest one.
    No signal means no entry."""
    total = math.fsum(c for c in local_unmet if c > 0.0)
    if total <= 0.0:
        return None
    if rng.random() >= p_open:
        return None
    pick = rng.random() * total
    acc = 0.0
    for k, count in enumerate(local_unmet):
        if count > 0.0:
            acc += count
            if pick < acc:
                return k
    return max(range(len(local_unmet)), key=lambda k: local_unmet[k])


def firm_exit_check(firm: Firm, loss_months: int, min_net_worth: float = 0.0) -> bool:
    """Close after ``loss_months`` consecutive losses with net worth below
    the threshold."""
    if len(firm.profit_hist) < loss_months:
        return False
    if any(p >= 0.0 for p in firm.profit_hist[-loss_months:]):
        return False
    return firm.net_worth() < min_net_worth


def distribute_profits(profit: float, dividend_fraction: float,
                       holdings: dict[int, float]) -> tuple[dict[int, float], float]:
    """Split a positive profit into pro-rata dividends and retention.
    Dividends plus retention always equal the profit exactly."""
    if profit <= 0.0 or not holdings:
        return {}, profit
    total_shares = math.fsum(holdings.values())
    if total_shares <= 0.0:
        return {}, profit
    payout = dividend_fraction * profit
    dividends = {owner: payout * qty / total_shares for owner, qty in holdings.items()}
    return dividends, profit - math.fsum(dividends.values())


# ---------------------------------------------------------------------------
# bank and listing rules
# ---------------------------------------------------------------------------


def bank_founding_check(wealth: float, cb: CentralBank, current_banks: int) -> bool:
    return current_banks < cb.max_banks and wealth >= cb.bank_min_net_worth


def stockmarket_entry_check(firm: Firm, threshold: float) -> bool:
    """Listing test for unlisted firms; listing itself latches in the
    engine and never reverts."""
    return firm.net_worth() >= threshold


# ---------------------------------------------------------------------------
# household-side tax rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HouseholdRates:
    """Flat rates reproducing the household column of the table: income tax
    on wage plus capital income, employee social contributions on wages,
    and product tax on consumption spending."""

    income_tax: float
    employee_social: float
    product_tax: float


@dataclass(frozen=True)
class HouseholdTaxRow:
    """One tax row the household column pays into, with the base the flat
    rate applies to: total income, wage income, or consumption spending."""

    row: int
    base: str  # "income" | "wage" | "spending"
    rate: float


def household_tax_rows(sam: SamTable) -> list[HouseholdTaxRow]:
    """Classify each tax row the household pays into by its other payers:
    a row that also collects from the investment or external column is a
    tax on purchases, a row that otherwise also collects from producer
    columns rides on wages, and a row fed by the household alone is a tax
    on income."""
    h = sam.household
    wage_income = sam.flows[h, sam.labor]
    income_base = wage_income + sam.flows[h, sam.capital]
    spending_base = math.fsum(sam.flows[i, h] for i in sam.sectors)
    spending_base += sam.flows[sam.gfcf, h]

    out: list[HouseholdTaxRow] = []
    for t in sam.tax_rows:
        paid = sam.flows[t, h]
        if paid == 0.0:
            continue
        on_purchases = (sam.flows[t, sam.gfcf] != 0.0
                        or sam.flows[t, sam.external] != 0.0)
        on_production = any(sam.flows[t, j] != 0.0 for j in sam.sectors)
        if on_purchases:
            base, denom = "spending", spending_base
        elif on_production:
            base, denom = "wage", wage_income
        else:
            base, denom = "income", income_base
        out.append(HouseholdTaxRow(row=t, base=base,
                                   rate=paid / denom if denom > 0.0 else 0.0))
    return out


def household_rates(sam: SamTable) -> HouseholdRates:
    """Aggregate per-row household tax rates into one rate per base."""
    income = social = product = 0.0
    for tr in household_tax_rows(sam):
        if tr.base == "income":
            income += tr.rate
        elif tr.base == "wage":
            social += tr.rate
        else:
            product += tr.rate
    return HouseholdRates(income_tax=income, employee_social=social,
                          product_tax=product)
