"""High-low bid-ask spread estimation and monthly efficiency measures.

The primary estimator infers the proportional spread of each market from
overlapping two-day windows of daily highs and lows. For a pair of adjacent
trading days with ranges H_t/L_t and H_{t+1}/L_{t+1}:

    beta  = ln(H_t/L_t)^2 + ln(H_{t+1}/L_{t+1})^2
    gamma = ln(max(H_t, H_{t+1}) / min(L_t, L_{t+1}))^2
    alpha = (sqrt(2 beta) - sqrt(beta)) / (3 - 2 sqrt(2))
            - sqrt(gamma / (3 - 2 sqrt(2)))
    S     = 2 (exp(alpha) - 1) / (1 + exp(alpha))

Daily estimates can be negative; the monthly statistic floors negatives at
zero first and then averages. The secondary (model-free) measure is the daily
range over the midpoint, (H - L) / ((H + L) / 2), averaged by month.

Efficiency proxies flip sign so that larger values mean more efficient
pricing: eff = -spread per market, effboth = eff_a + eff_h, and likewise
effboth2 for the range-based measure. Both are never positive.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .ingest import Drop
from .months import Month

_CONST = 3.0 - 2.0 * np.sqrt(2.0)

SPREAD_COLUMNS = ["firm_id", "market", "month", "cs_spread", "alt_spread", "n_pairs"]
EFFICIENCY_COLUMNS = ["firm_id", "month", "eff_a", "eff_h", "effboth", "eff2_a", "eff2_h", "effboth2"]


def beta_gamma(day1: tuple[float, float], day2: tuple[float, float]) -> tuple[float, float]:
    """(beta, gamma) for one two-day window of (high, low) pairs."""
    h1, l1 = day1
    h2, l2 = day2
    if min(h1, l1, h2, l2) <= 0:
        raise ValueError("prices must be positive")
    if l1 > h1 or l2 > h2:
        raise ValueError("low above high")
    beta = np.log(h1 / l1) ** 2 + np.log(h2 / l2) ** 2
    gamma = np.log(max(h1, h2) / min(l1, l2)) ** 2
    return float(beta), float(gamma)


def cs_spread(beta, gamma):
    """Closed-form proportional spread from (beta, gamma); array-friendly.

    Negative values are meaningful here and are floored only during monthly
    aggregation.
    """
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(beta < 0) or np.any(gamma < 0):
        raise ValueError("beta and gamma are sums of squares, must be >= 0")
    alpha = (np.sqrt(2.0 * beta) - np.sqrt(beta)) / _CONST - np.sqrt(gamma / _CONST)
    expa = np.exp(alpha)
    result = 2.0 * (expa - 1.0) / (1.0 + expa)
    return float(result) if result.ndim == 0 else result


def alt_spread(high, low):
    """Daily range over midpoint: (H - L) / ((H + L) / 2); array-friendly."""
    high = np.asarray(high, dtype=float)
    low = np.asarray(low, dtype=float)
    if np.any(low <= 0) or np.any(high < low):
        raise ValueError("need 0 < low <= high")
    result = (high - low) / ((high + low) / 2.0)
    return float(result) if result.ndim == 0 else result


def floor_and_monthly(daily_spreads) -> float:
    """Monthly spread: negatives floored to zero, then the plain mean."""
    values = np.asarray(daily_spreads, dtype=float)
    if values.size == 0:
        raise ValueError("no daily spreads in month")
    return float(np.mean(np.clip(values, 0.0, None)))


def monthly_spread_table(bars: pd.DataFrame, overnight_adjust: bool = False) -> pd.DataFrame:
    """Per firm-market-month spread statistics from daily bars.

    ``bars`` needs columns firm_id, market, date, high, low (extra columns
    are ignored). Consecutive-day pairs are formed within each firm-market
    series in date order; calendar gaps still count as adjacent trading days,
    and a pair is assigned to the month of its first day. Months that never
    open a pair (single-day months at the end of a series) produce no row.

    ``overnight_adjust`` is reserved for an overnight-gap correction to the
    two-day window and must stay False.
    """
    if overnight_adjust:
        raise NotImplementedError("overnight-gap adjustment is reserved, not implemented")
    df = bars.sort_values(["firm_id", "market", "date"], kind="stable").reset_index(drop=True)
    if (df["low"] <= 0).any() or (df["low"] > df["high"]).any():
        raise ValueError("bars must satisfy 0 < low <= high")

    same_series = (
        df["firm_id"].eq(df["firm_id"].shift(-1)) & df["market"].eq(df["market"].shift(-1))
    ).to_numpy()
    h1 = df["high"].to_numpy()
    l1 = df["low"].to_numpy()
    h2 = df["high"].shift(-1).to_numpy()
    l2 = df["low"].shift(-1).to_numpy()

    pair = same_series.copy()
    idx = np.flatnonzero(pair)
    beta = np.log(h1[idx] / l1[idx]) ** 2 + np.log(h2[idx] / l2[idx]) ** 2
    gamma = np.log(np.maximum(h1[idx], h2[idx]) / np.minimum(l1[idx], l2[idx])) ** 2
    daily = cs_spread(beta, gamma)

    month = df["date"].map(lambda d: f"{d.year:04d}-{d.month:02d}")
    pair_frame = pd.DataFrame(
        {
            "firm_id": df["firm_id"].to_numpy()[idx],
            "market": df["market"].to_numpy()[idx],
            "month": month.to_numpy()[idx],
            "floored": np.clip(daily, 0.0, None),
        }
    )
    cs_monthly = (
        pair_frame.groupby(["firm_id", "market", "month"], sort=True)["floored"]
        .agg(cs_spread="mean", n_pairs="size")
        .reset_index()
    )

    day_frame = pd.DataFrame(
        {
            "firm_id": df["firm_id"],
            "market": df["market"],
            "month": month,
            "alt": alt_spread(h1, l1),
        }
    )
    alt_monthly = (
        day_frame.groupby(["firm_id", "market", "month"], sort=True)["alt"]
        .mean()
        .rename("alt_spread")
        .reset_index()
    )

    table = cs_monthly.merge(alt_monthly, on=["firm_id", "market", "month"], how="inner")
    table["n_pairs"] = table["n_pairs"].astype(int)
    return table[SPREAD_COLUMNS]


def efficiency_rows(spreads: pd.DataFrame) -> tuple[pd.DataFrame, list[Drop]]:
    """Join the two markets' monthly spreads into firm-month efficiency rows.

    eff = -spread per market, effboth = eff_a + eff_h (never positive), and
    the same for the range-based measure. Firm-months with only one market's
    spread are dropped with the missing side named.
    """
    wide = spreads.pivot_table(
        index=["firm_id", "month"],
        columns="market",
        values=["cs_spread", "alt_spread"],
        aggfunc="first",
    )
    rows = []
    drops: list[Drop] = []
    for (firm, month), rec in wide.iterrows():
        cs_a = rec.get(("cs_spread", "A"), float("nan"))
        cs_h = rec.get(("cs_spread", "H"), float("nan"))
        alt_a = rec.get(("alt_spread", "A"), float("nan"))
        alt_h = rec.get(("alt_spread", "H"), float("nan"))
        missing = []
        if pd.isna(cs_a) or pd.isna(alt_a):
            missing.append("missing_spread_a")
        if pd.isna(cs_h) or pd.isna(alt_h):
            missing.append("missing_spread_h")
        if missing:
            drops.append(Drop(firm, Month.parse(month), tuple(missing)))
            continue
        rows.append(
            {
                "firm_id": firm,
                "month": month,
                "eff_a": -cs_a,
                "eff_h": -cs_h,
                "effboth": -(cs_a + cs_h),
                "eff2_a": -alt_a,
                "eff2_h": -alt_h,
                "effboth2": -(alt_a + alt_h),
            }
        )
    frame = pd.DataFrame(rows, columns=EFFICIENCY_COLUMNS)
    return frame.sort_values(["firm_id", "month"], kind="stable").reset_index(drop=True), drops
