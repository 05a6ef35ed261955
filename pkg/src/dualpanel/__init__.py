"""Dual-listing premium analysis: spreads, panel assembly, system GMM.

The package turns raw daily price CSVs for cross-listed firm pairs into a
firm-month analysis panel and estimates dynamic panel regressions of the
listing premium on a market-access policy dummy, with a range-based
transaction cost estimator feeding the efficiency regressors.
"""

from .gmm import (
    EstimationError,
    GmmFit,
    MarginalEffect,
    ModelSpec,
    build_instruments,
    fit_twostep,
    marginal_effect,
)
from .ingest import (
    DailyBar,
    Drop,
    FxRate,
    IngestError,
    MonthlyAttrs,
    build_skeleton,
    read_attrs,
    read_daily_bars,
    read_fx,
    read_panel,
    write_panel,
)
from .months import Month, month_range, weekdays
from .simulate import (
    MarketConfig,
    McResult,
    PanelDgp,
    PriceDgp,
    mc_driver,
    simulate_panel,
    simulate_prices,
    write_dataset,
)
from .spreads import (
    alt_spread,
    beta_gamma,
    cs_spread,
    efficiency_rows,
    floor_and_monthly,
    monthly_spread_table,
)
from .study import (
    SUITE,
    descriptives,
    interaction_consistency_note,
    run_suite,
    trend_export,
)
from .variables import (
    PolicyCalendar,
    build_panel_full,
    policy_dummies,
    premium,
    read_panel_full,
    write_panel_full,
)

__version__ = "0.1.0"

__all__ = [
    "DailyBar", "Drop", "EstimationError", "FxRate", "GmmFit", "IngestError",
    "MarginalEffect", "MarketConfig", "McResult", "ModelSpec", "Month",
    "MonthlyAttrs", "PanelDgp", "PolicyCalendar", "PriceDgp", "SUITE",
    "alt_spread", "beta_gamma", "build_instruments", "build_panel_full",
    "build_skeleton", "cs_spread", "descriptives", "efficiency_rows",
    "fit_twostep", "floor_and_monthly", "interaction_consistency_note",
    "marginal_effect", "mc_driver", "month_range", "monthly_spread_table",
    "policy_dummies", "premium", "read_attrs", "read_daily_bars", "read_fx",
    "read_panel", "read_panel_full", "run_suite", "simulate_panel",
    "simulate_prices", "trend_export", "weekdays", "write_dataset",
    "write_panel", "write_panel_full",
]
