"""Regression variable construction on the firm-month panel.

Builds the analysis table (panel_full) from the panel skeleton and the
monthly efficiency rows: the A-over-H premium, event dummies, control
ratios, the one-month lag of the premium, and policy-by-efficiency
interaction columns.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .ingest import Drop, IngestError, _fail
from .months import Month


@dataclass(frozen=True)
class PolicyCalendar:
    """Event months for the policy dummies.

    ``boundary`` decides whether the event month itself counts as post-event:
    "inclusive" (default) marks the event month as 1, "exclusive" shifts every
    dummy by one month.
    """

    policy: Month = Month(2014, 11)
    announcement: Month = Month(2014, 4)
    placebo: Month = Month(2016, 11)
    boundary: str = "inclusive"

    def __post_init__(self) -> None:
        if self.boundary not in ("inclusive", "exclusive"):
            raise ValueError(f"boundary must be inclusive or exclusive, got {self.boundary!r}")


DEFAULT_CALENDAR = PolicyCalendar()

PANEL_FULL_COLUMNS = [
    "firm_id", "month", "prem", "prem_lag1",
    "shhk_policy", "announcement", "fake_policy",
    "effboth", "effboth2",
    "shhk_x_effboth", "shhk_x_effboth2", "announcement_x_effboth", "fake_x_effboth",
    "turnover", "soe", "demand", "size", "interest_rate",
]
_INT_COLUMNS = {"shhk_policy", "announcement", "fake_policy", "soe"}


def premium(p_a: float, p_h: float, fx: float) -> float:
    """A-share premium over the H share: p_a / (p_h * fx) - 1.

    ``fx`` is CNY per 1 HKD, so p_h * fx is the H price in CNY. The result
    exceeds -1 whenever all inputs are positive.
    """
    if p_a <= 0 or p_h <= 0 or fx <= 0:
        raise ValueError("prices and FX must be positive")
    return p_a / (p_h * fx) - 1.0


def _after(month: Month, event: Month, boundary: str) -> int:
    if boundary == "inclusive":
        return int(month >= event)
    return int(month > event)


def policy_dummies(month: Month, calendar: PolicyCalendar = DEFAULT_CALENDAR) -> tuple[int, int, int]:
    """(policy, announcement, placebo) step dummies for one month."""
    return (
        _after(month, calendar.policy, calendar.boundary),
        _after(month, calendar.announcement, calendar.boundary),
        _after(month, calendar.placebo, calendar.boundary),
    )


def controls(row) -> dict[str, float]:
    """Control variables from one skeleton row (a mapping or named tuple).

    turnover: relative trading activity, A over H monthly mean turnover.
    soe:      state-ownership flag, passed through.
    demand:   relative float, A over H.
    size:     log CNY market capitalization.
    interest_rate: 3-month SHIBOR over 3-month HIBOR.

    Raises ValueError on a zero denominator or a non-positive ratio; the
    panel builder converts that into a logged drop.
    """
    get = row.get if hasattr(row, "get") else lambda k: getattr(row, k)
    turnover_a, turnover_h = get("turnover_a"), get("turnover_h")
    if turnover_h <= 0:
        raise ValueError("zero_turnover_h")
    if turnover_a <= 0:
        raise ValueError("zero_turnover_a")
    return {
        "turnover": turnover_a / turnover_h,
        "soe": int(get("soe_flag")),
        "demand": get("float_a") / get("float_h"),
        "size": math.log(get("mktcap_cny")),
        "interest_rate": get("shibor_3m") / get("hibor_3m"),
    }


def add_lag_and_interactions(frame: pd.DataFrame, calendar: PolicyCalendar = DEFAULT_CALENDAR) -> pd.DataFrame:
    """Add prem_lag1 and the dummy-by-efficiency interaction columns.

    The lag is defined only across consecutive calendar months within a firm;
    a row that follows a gap keeps a missing lag and later falls out of the
    estimation sample.
    """
    df = frame.sort_values(["firm_id", "month"], kind="stable").reset_index(drop=True)
    idx = df["month"].map(lambda m: Month.parse(m).index())
    prev_same = df["firm_id"].eq(df["firm_id"].shift(1)) & idx.eq(idx.shift(1) + 1)
    df["prem_lag1"] = df["prem"].shift(1).where(prev_same, np.nan)
    df["shhk_x_effboth"] = df["shhk_policy"] * df["effboth"]
    df["shhk_x_effboth2"] = df["shhk_policy"] * df["effboth2"]
    df["announcement_x_effboth"] = df["announcement"] * df["effboth"]
    df["fake_x_effboth"] = df["fake_policy"] * df["effboth"]
    return df


def build_panel_full(
    skeleton: pd.DataFrame,
    efficiency: pd.DataFrame,
    calendar: PolicyCalendar = DEFAULT_CALENDAR,
) -> tuple[pd.DataFrame, list[Drop]]:
    """Assemble the analysis table; returns (panel_full, drops).

    Listwise deletion: a firm-month survives only with every variable
    present, so estimation samples differ across model columns only through
    lag availability, never through control availability.
    """
    eff_by_key = {
        (rec.firm_id, rec.month): rec for rec in efficiency.itertuples(index=False)
    }
    rows = []
    drops: list[Drop] = []
    for rec in skeleton.itertuples(index=False):
        month = Month.parse(rec.month)
        eff = eff_by_key.get((rec.firm_id, rec.month))
        if eff is None:
            drops.append(Drop(rec.firm_id, month, ("missing_efficiency",)))
            continue
        try:
            ctrl = controls(rec)
        except ValueError as exc:
            drops.append(Drop(rec.firm_id, month, (str(exc),)))
            continue
        shhk, announce, fake = policy_dummies(month, calendar)
        rows.append(
            {
                "firm_id": rec.firm_id,
                "month": rec.month,
                "prem": premium(rec.p_a, rec.p_h, rec.fx),
                "shhk_policy": shhk,
                "announcement": announce,
                "fake_policy": fake,
                "effboth": eff.effboth,
                "effboth2": eff.effboth2,
                **ctrl,
            }
        )
    frame = pd.DataFrame(rows)
    if frame.empty:
        raise ValueError("no complete firm-months: panel_full would be empty")
    frame = add_lag_and_interactions(frame, calendar)
    return frame[PANEL_FULL_COLUMNS], drops


def write_panel_full(frame: pd.DataFrame, path: str | Path) -> None:
    """panel_full as CSV; the missing lag serializes as an empty field."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(PANEL_FULL_COLUMNS)
        for row in frame[PANEL_FULL_COLUMNS].itertuples(index=False):
            out = []
            for name, value in zip(PANEL_FULL_COLUMNS, row):
                if name in ("firm_id", "month"):
                    out.append(str(value))
                elif name in _INT_COLUMNS:
                    out.append(str(int(value)))
                elif isinstance(value, float) and math.isnan(value):
                    out.append("")
                else:
                    out.append(repr(float(value)))
            writer.writerow(out)


def read_panel_full(path: str | Path) -> pd.DataFrame:
    records = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != PANEL_FULL_COLUMNS:
            raise IngestError(f"{path}:1: unexpected panel_full header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PANEL_FULL_COLUMNS):
                _fail(path, lineno, f"expected {len(PANEL_FULL_COLUMNS)} fields")
            record = {}
            for name, raw in zip(PANEL_FULL_COLUMNS, row):
                if name in ("firm_id", "month"):
                    record[name] = raw
                elif name in _INT_COLUMNS:
                    record[name] = int(raw)
                elif raw == "":
                    record[name] = np.nan
                else:
                    record[name] = float(raw)
            records.append(record)
    return pd.DataFrame(records, columns=PANEL_FULL_COLUMNS)
