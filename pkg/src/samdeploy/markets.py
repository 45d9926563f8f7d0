"""Matching and price formation.

Four mechanisms: bilateral goods trade with reservation-price haggling,
neighborhood labor hiring, bank credit scored by a debt-to-equity default
probability, and a monthly batch clearing of equity orders.  All of them
are deterministic functions of their inputs and the supplied random
stream; callers apply the returned state changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from samdeploy.agents import Bank


# ---------------------------------------------------------------------------
# bilateral price rule
# ---------------------------------------------------------------------------


def attempt_transaction(buyer_price: float, seller_price: float,
                        epsilon: float) -> tuple[bool, float, float]:
    """One haggling step.  The trade happens at the seller's price whenever
    the buyer's reservation covers it; afterwards a successful buyer bids
    lower and a successful seller asks more, while a failed attempt moves
    both toward each other."""
    if buyer_price >= seller_price:
        return True, buyer_price * (1.0 - epsilon), seller_price * (1.0 + epsilon)
    return False, buyer_price * (1.0 + epsilon), seller_price * (1.0 - epsilon)


# ---------------------------------------------------------------------------
# seller choice
# ---------------------------------------------------------------------------


def logit_weights(prices: list[float], gamma: float) -> list[float]:
    """Unnormalized choice weights exp(-gamma * price), shifted by the
    minimum price so large gammas cannot underflow every weight."""
    if not prices:
        raise ValueError("no candidate sellers")
    p_min = min(prices)
    return [math.exp(-gamma * (p - p_min)) for p in prices]


def logit_probabilities(prices: list[float], gamma: float) -> list[float]:
    w = logit_weights(prices, gamma)
    total = math.fsum(w)
    return [x / total for x in w]


def select_seller_logit(prices: list[float], gamma: float, rng) -> int:
    """Draw a seller index with probability proportional to
    exp(-gamma * price), by inverse CDF over the weights."""
    w = logit_weights(prices, gamma)
    u = rng.random() * math.fsum(w)
    acc = 0.0
    for k, x in enumerate(w):
        acc += x
        if u < acc:
            return k
    return len(w) - 1


# ---------------------------------------------------------------------------
# shopping
# ---------------------------------------------------------------------------

BUDGET_DUST = 1e-9


@dataclass(slots=True)
class Fill:
    seller: int      # position in the sellers list passed in
    price: float
    qty: float
    spend: float


@dataclass(slots=True)
class RoundOutcome:
    fills: list[Fill]
    reservation: float
    asks: list[float]
    spent: float
    unmet: float
    attempts: int


def shopping_round(budget: float, reservation: float, asks: list[float],
                   stocks: list[float], epsilon: float, gamma: float,
                   max_trials: int, rng) -> RoundOutcome:
    """Spend ``budget`` on one good type over repeated seller visits.

    ``asks`` and ``stocks`` describe the candidate sellers positionally and
    are not modified.  Each trial picks a stocked seller by price logit and
    haggles once.  A successful trade takes as many units as the remaining
    budget buys, up to the seller's stock.  Whatever budget is left when
    trials run out, stock runs dry, or no seller exists is reported as
    unmet demand.
    """
    asks = list(asks)
    stock = list(stocks)
    fills: list[Fill] = []
    spent = 0.0
    attempts = 0
    left = budget
    while left > BUDGET_DUST and attempts < max_trials:
        stocked = [k for k in range(len(asks)) if stock[k] > 0.0]
        if not stocked:
            break
        pick = stocked[select_seller_logit([asks[k] for k in stocked], gamma, rng)]
        price = asks[pick]
        traded, reservation, asks[pick] = attempt_transaction(reservation, price, epsilon)
        attempts += 1
        if not traded:
            continue
        affordable = left / price
        if stock[pick] >= affordable:
            qty, spend = affordable, left
        else:
            qty = stock[pick]
            spend = qty * price
        stock[pick] -= qty
        left -= spend
        spent += spend
        fills.append(Fill(seller=pick, price=price, qty=qty, spend=spend))
    unmet = left if left > BUDGET_DUST else 0.0
    return RoundOutcome(fills=fills, reservation=reservation, asks=asks,
                        spent=spent, unmet=unmet, attempts=attempts)


# ---------------------------------------------------------------------------
# labor
# ---------------------------------------------------------------------------


def labor_match(vacancies: int, candidate_ids: list[int], rng) -> list[int]:
    """Hire up to ``vacancies`` workers from the candidate pool, chosen in
    random order."""
    if vacancies <= 0 or not candidate_ids:
        return []
    return rng.sample(candidate_ids, min(vacancies, len(candidate_ids)))


# ---------------------------------------------------------------------------
# credit
# ---------------------------------------------------------------------------

EQUITY_FLOOR = 1.0


def default_probability(debt: float, net_worth: float,
                        floor: float = EQUITY_FLOOR) -> float:
    """Debt-to-balance-sheet ratio D/(D+E) with the equity term floored so
    bankrupt-on-paper borrowers score near one rather than dividing by
    zero."""
    equity = max(net_worth, floor)
    ratio = debt / (debt + equity)
    return min(max(ratio, 0.0), 1.0)


@dataclass(slots=True)
class LoanDecision:
    granted: bool
    amount: float
    monthly_rate: float
    reason: str  # ok | CAR | RRR | noBank


def credit_request(bank: Bank | None, firm_debt: float, firm_net_worth: float,
                   amount: float, car: float, rrr: float, r0: float,
                   spread: float) -> LoanDecision:
    """Score and check one loan application.

    The rate prices the borrower's post-loan default probability over the
    policy rate.  The grant must leave the bank's equity-to-loans ratio at
    or above the capital requirement and, since the borrower's deposit is
    held at the lending bank, its reserves must cover the requirement on
    the enlarged deposit base.
    """
    if amount <= 0.0:
        raise ValueError("loan amount must be positive")
    pd = default_probability(firm_debt + amount, firm_net_worth)
    rate = r0 + spread * pd
    if bank is None:
        return LoanDecision(False, amount, rate, "noBank")
    if bank.capital_ratio(extra_loan=amount) < car:
        return LoanDecision(False, amount, rate, "CAR")
    if bank.reserves < rrr * (bank.total_deposits + amount):
        return LoanDecision(False, amount, rate, "RRR")
    return LoanDecision(True, amount, rate, "ok")


# ---------------------------------------------------------------------------
# equity clearing
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class EquityOrder:
    side: str            # "buy" | "sell"
    firm_id: int
    limit: float
    qty: float
    agent_id: int
    arrival: int

    def __post_init__(self):
        if self.side not in ("buy", "sell"):
            raise ValueError(f"bad order side {self.side!r}")
        if self.limit <= 0.0 or self.qty <= 0.0:
            raise ValueError("orders need positive limit and quantity")


@dataclass(slots=True)
class EquityTrade:
    firm_id: int
    buyer_id: int
    seller_id: int
    price: float
    qty: float


@dataclass(slots=True)
class ClearingResult:
    trades: list[EquityTrade]
    quoted: dict[int, float]      # last execution price, traded firms only
    new_limits: list[float]       # parallel to the input order list


def clearing_house(orders: list[EquityOrder], epsilon: float) -> ClearingResult:
    """Batch-match a month of equity orders per firm.

    Buys are served from the highest limit down, sells from the lowest up,
    ties in arrival order; each match executes at the seller's limit with
    partial fills carried forward.  Orders that got any fill adjust their
    price like a successful bilateral trade, unfilled ones like a failed
    attempt.
    """
    by_firm: dict[int, list[int]] = {}
    for pos, order in enumerate(orders):
        by_firm.setdefault(order.firm_id, []).append(pos)

    trades: list[EquityTrade] = []
    quoted: dict[int, float] = {}
    filled = [0.0] * len(orders)

    for firm_id in sorted(by_firm):
        positions = by_firm[firm_id]
        buys = sorted((p for p in positions if orders[p].side == "buy"),
                      key=lambda p: (-orders[p].limit, orders[p].arrival))
        sells = sorted((p for p in positions if orders[p].side == "sell"),
                       key=lambda p: (orders[p].limit, orders[p].arrival))
        remaining = {p: orders[p].qty for p in positions}
        b = s = 0
        while b < len(buys) and s < len(sells):
            pb, ps = buys[b], sells[s]
            if orders[pb].limit < orders[ps].limit:
                break
            qty = min(remaining[pb], remaining[ps])
            price = orders[ps].limit
            trades.append(EquityTrade(firm_id=firm_id, buyer_id=orders[pb].agent_id,
                                      seller_id=orders[ps].agent_id,
                                      price=price, qty=qty))
            quoted[firm_id] = price
            remaining[pb] -= qty
            remaining[ps] -= qty
            filled[pb] += qty
            filled[ps] += qty
            if remaining[pb] <= 0.0:
                b += 1
            if remaining[ps] <= 0.0:
                s += 1

    new_limits = []
    for pos, order in enumerate(orders):
        got_fill = filled[pos] > 0.0
        if order.side == "buy":
            factor = (1.0 - epsilon) if got_fill else (1.0 + epsilon)
        else:
            factor = (1.0 + epsilon) if got_fill else (1.0 - epsilon)
        new_limits.append(order.limit * factor)
    return ClearingResult(trades=trades, quoted=quoted, new_limits=new_limits)
