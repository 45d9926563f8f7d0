"""Generator for balanced synthetic SAM tables.

Builds an internally consistent table from randomly drawn cost structures and
final demand, then closes the account circuit so that every row total equals
the matching column total by construction.  Used for property tests and for
exercising the simulator on table shapes other than the bundled one.
"""

from __future__ import annotations

import math
import random

import numpy as np

from samdeploy.sam import SamTable


def synthetic_sam(
    n_sectors: int = 12,
    seed: int = 0,
    total_consumption: float = 600_000.0,
    active_count: int = 2_000_000,
    init_unemp_pct: float = 10.0,
    name: str = "SYNTH",
) -> SamTable:
    """Create a balanced SAM with ``n_sectors`` producing sectors.

    The account list is: sectors, GFCF, external, labor, surplus, a payroll
    tax row, a product tax row, government, households.  Draws are taken from
    a private ``random.Random(seed)`` so repeated calls are reproducible.
    """
    if n_sectors < 1:
        raise ValueError("need at least one producing sector")
    rng = random.Random(seed)
    ns = n_sectors

    # cost structure per sector column (value shares of gross output)
    ic = np.zeros((ns, ns))
    for j in range(ns):
        suppliers = rng.sample(range(ns), k=min(ns, rng.randint(2, max(2, ns // 2))))
        raw = np.zeros(ns)
        for i in suppliers:
            raw[i] = rng.uniform(0.2, 1.0)
        raw[j] = max(raw[j], rng.uniform(0.2, 0.8))
        ic[:, j] = raw / raw.sum() * rng.uniform(0.20, 0.38)
    imp = np.array([rng.uniform(0.06, 0.16) for _ in range(ns)])
    lab = np.array([rng.uniform(0.22, 0.38) for _ in range(ns)])
    tax_payroll = lab * np.array([rng.uniform(0.18, 0.30) for _ in range(ns)])
    tax_products = np.array([rng.uniform(0.01, 0.05) for _ in range(ns)])
    surplus = 1.0 - ic.sum(axis=0) - imp - lab - tax_payroll - tax_products
    if surplus.min() <= 0.04:
        # rescale intermediate shares until every sector keeps a margin
        squeeze = ic.sum(axis=0) + (0.04 - surplus).clip(min=0.0)
        ic *= (squeeze - (0.04 - surplus).clip(min=0.0)) / np.where(squeeze > 0, squeeze, 1.0)
        surplus = 1.0 - ic.sum(axis=0) - imp - lab - tax_payroll - tax_products
    assert surplus.min() > 0.0

    # final demand: consumption plus public, export and investment purchases
    cons_w = np.array([rng.uniform(0.3, 1.0) for _ in range(ns)])
    consumption = cons_w / cons_w.sum() * total_consumption
    gov_goods = np.array([rng.uniform(0.0, 0.12) for _ in range(ns)]) * total_consumption / ns
    exports = np.array([rng.uniform(0.0, 0.10) for _ in range(ns)]) * total_consumption / ns
    gfcf_sector_w = np.array([rng.uniform(0.1, 1.0) for _ in range(ns)])
    gfcf_tax_frac = rng.uniform(0.03, 0.08)
    gfcf_total = rng.uniform(0.18, 0.30) * total_consumption
    gfcf_goods = gfcf_sector_w / gfcf_sector_w.sum() * gfcf_total * (1.0 - gfcf_tax_frac)

    final = consumption + gov_goods + exports + gfcf_goods
    gross = np.linalg.solve(np.eye(ns) - ic, final)
    assert gross.min() > 0.0

    wages = lab * gross
    surplus_flow = surplus * gross
    imports = imp * gross
    payroll_firm = tax_payroll * gross
    products_firm = tax_products * gross

    # household-side taxes
    payroll_hh_rate = rng.uniform(0.03, 0.07)
    vat_hh_rate = rng.uniform(0.06, 0.12)
    wages_total = float(wages.sum())
    surplus_total = float(surplus_flow.sum())
    payroll_hh = payroll_hh_rate * wages_total
    vat_hh = vat_hh_rate * float(consumption.sum())
    gfcf_tax = gfcf_total * gfcf_tax_frac

    tax_payroll_total = float(payroll_firm.sum()) + payroll_hh
    tax_products_total = float(products_firm.sum()) + vat_hh + gfcf_tax
    tax_total = tax_payroll_total + tax_products_total

    # close government: receipts are taxes, spending is goods + investment + transfer
    gov_gfcf = 0.2 * gfcf_total
    transfer_to_hh = tax_total - float(gov_goods.sum()) - gov_gfcf
    if transfer_to_hh <= 0:
        raise ValueError("tax take too small to close the government account")

    # close external: imports fund exports, investment and a household transfer
    ext_gfcf = 0.15 * gfcf_total
    ext_to_hh = float(imports.sum()) - float(exports.sum()) - ext_gfcf
    if ext_to_hh <= 0:
        raise ValueError("import volume too small to close the external account")

    hh_gfcf = gfcf_total - gov_gfcf - ext_gfcf
    assert hh_gfcf > 0

    # assemble accounts
    sector_names = [f"P{j + 1:02d}_Sector{chr(ord('A') + j % 26)}" for j in range(ns)]
    accounts = sector_names + [
        "F90_GFCF", "X91_External", "L92_Labor", "K93_Surplus",
        "T94_Payroll", "T95_Products", "G96_Government", "H97_Households",
    ]
    n = len(accounts)
    F, X, L, K, T1, T2, G, H = range(ns, n)

    flows = np.zeros((n, n))
    flows[:ns, :ns] = ic * gross[np.newaxis, :]
    for j in range(ns):
        flows[X, j] = imports[j]
        flows[L, j] = wages[j]
        flows[K, j] = surplus_flow[j]
        flows[T1, j] = payroll_firm[j]
        flows[T2, j] = products_firm[j]
        flows[j, G] = gov_goods[j]
        flows[j, X] = exports[j]
        flows[j, H] = consumption[j]
        flows[j, F] = gfcf_goods[j]
    flows[T2, F] = gfcf_tax
    flows[F, G] = gov_gfcf
    flows[F, X] = ext_gfcf
    flows[F, H] = hh_gfcf
    flows[H, X] = ext_to_hh
    flows[H, L] = wages_total
    flows[H, K] = surplus_total
    flows[T1, H] = payroll_hh
    flows[T2, H] = vat_hh
    flows[G, T1] = tax_payroll_total
    flows[G, T2] = tax_products_total
    flows[H, G] = transfer_to_hh

    row_sums = np.array([math.fsum(flows[i]) for i in range(n)])
    col_sums = np.array([math.fsum(flows[:, j]) for j in range(n)])
    assert np.allclose(row_sums, col_sums, rtol=1e-9, atol=1e-6)

    return SamTable(
        name=name,
        year=2020,
        population=2 * active_count,
        active_count=active_count,
        init_unemp_pct=init_unemp_pct,
        n_producers=ns + 2,
        n_accounts=n,
        units_scale=1_000_000,
        units_label="units",
        accounts=accounts,
        flows=flows,
        row_sums=row_sums,
        col_sums=col_sums,
    )
