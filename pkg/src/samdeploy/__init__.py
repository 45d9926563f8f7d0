"""Agent-based macroeconomic simulator calibrated from a social accounting matrix.

The package reads a square social accounting matrix (SAM), derives technical
coefficients and monthly flow targets from it, deploys an agent economy whose
steady state reproduces the matrix, and then lets the economy evolve freely
under behavioral rules.  Reports compare the flows recorded by the simulation
ledger against the source matrix.
"""

from samdeploy.accounting import (
    AuditReport,
    ComputedSam,
    Ledger,
    PercentMatrix,
    TimeSeriesRow,
    WealthHistogram,
    audit_money,
    compare_sam,
    computed_sam,
    gini_coefficient,
    major_cells,
    sample_skewness,
    wealth_histogram,
)
from samdeploy.engine import (
    EngineError,
    SimConfig,
    World,
    household_wealth,
    init_world,
    load_snapshot,
    run,
    run_month,
    save_snapshot,
    world_hash,
)
from samdeploy.sam import (
    BalanceReport,
    GfcfWeights,
    MonthlyTargets,
    SamFormatError,
    SamTable,
    ScalePlan,
    TechnicalCoefficients,
    gfcf_weights,
    monthly_targets,
    parse_sam,
    scale_factors,
    serialize_sam,
    technical_coefficients,
    validate_balance,
)
from samdeploy.synthetic import synthetic_sam

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "BalanceReport",
    "ComputedSam",
    "EngineError",
    "GfcfWeights",
    "Ledger",
    "MonthlyTargets",
    "PercentMatrix",
    "SamFormatError",
    "TimeSeriesRow",
    "SamTable",
    "ScalePlan",
    "SimConfig",
    "TechnicalCoefficients",
    "WealthHistogram",
    "World",
    "audit_money",
    "compare_sam",
    "computed_sam",
    "gfcf_weights",
    "gini_coefficient",
    "household_wealth",
    "init_world",
    "load_snapshot",
    "major_cells",
    "monthly_targets",
    "parse_sam",
    "run",
    "run_month",
    "sample_skewness",
    "save_snapshot",
    "scale_factors",
    "serialize_sam",
    "synthetic_sam",
    "technical_coefficients",
    "validate_balance",
    "wealth_histogram",
    "world_hash",
    "__version__",
]
