"""Input validation and monthly panel skeleton construction.

Three raw inputs arrive as CSV:

* daily_prices.csv: firm_id, market, date, high, low, close, volume, turnover
* fx.csv:           date, hkd_cny            (CNY per 1 HKD)
* monthly_attrs.csv: firm_id, month, soe_flag, float_a, float_h,
                     mktcap_cny, shibor_3m, hibor_3m

Every row becomes a typed record or the reader raises IngestError naming the
file and line. The skeleton builder collapses daily data to firm-month means,
joins FX on the firm's A-share trading dates, and drops incomplete cells with
an explicit reason; silent drops are forbidden, so row count plus drop count
always equals the number of candidate (firm, month) cells.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd

from .months import Month

MARKETS = ("A", "H")

DAILY_COLUMNS = ["firm_id", "market", "date", "high", "low", "close", "volume", "turnover"]
FX_COLUMNS = ["date", "hkd_cny"]
ATTR_COLUMNS = [
    "firm_id", "month", "soe_flag", "float_a", "float_h",
    "mktcap_cny", "shibor_3m", "hibor_3m",
]

# One row per complete firm-month; written to panel.csv in this order.
PANEL_COLUMNS = [
    "firm_id", "month", "p_a", "p_h", "fx", "turnover_a", "turnover_h",
    "n_days_a", "n_days_h", "soe_flag", "float_a", "float_h",
    "mktcap_cny", "shibor_3m", "hibor_3m",
]
_PANEL_INT_COLUMNS = {"n_days_a", "n_days_h", "soe_flag"}

# Reported in this priority order.
DROP_REASONS = ["missing_a", "missing_h", "missing_fx", "missing_attrs"]


class IngestError(ValueError):
    """Malformed or inconsistent input, with file/line context."""


@dataclass(frozen=True, slots=True)
class DailyBar:
    firm_id: str
    market: str
    date: dt.date
    high: float
    low: float
    close: float
    volume: float
    turnover: float


@dataclass(frozen=True, slots=True)
class FxRate:
    date: dt.date
    hkd_cny: float


@dataclass(frozen=True, slots=True)
class MonthlyAttrs:
    firm_id: str
    month: Month
    soe_flag: int
    float_a: float
    float_h: float
    mktcap_cny: float
    shibor_3m: float
    hibor_3m: float


@dataclass(frozen=True, slots=True)
class Drop:
    """A candidate firm-month excluded from the panel."""

    firm_id: str
    month: Month
    reasons: tuple[str, ...]


def _fail(path: str | Path, lineno: int, message: str) -> None:
    raise IngestError(f"{path}:{lineno}: {message}")


def _float(path, lineno, field: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        _fail(path, lineno, f"malformed number in {field}: {raw!r}")
    if value != value or value in (float("inf"), float("-inf")):
        _fail(path, lineno, f"non-finite value in {field}: {raw!r}")
    return value


def _date(path, lineno, raw: str) -> dt.date:
    try:
        return dt.date.fromisoformat(raw.strip())
    except ValueError:
        _fail(path, lineno, f"malformed date: {raw!r}")


def _rows(path: str | Path, columns: Sequence[str]):
    """Yield (lineno, row dict) for a CSV with the exact expected header."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            _fail(path, 1, "empty file")
        if header != list(columns):
            _fail(path, 1, f"expected header {','.join(columns)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                _fail(path, lineno, f"expected {len(columns)} fields, got {len(row)}")
            yield lineno, dict(zip(columns, row))


def read_daily_bars(path: str | Path) -> list[DailyBar]:
    """Parse and validate the daily price file."""
    bars = []
    seen: set[tuple[str, str, dt.date]] = set()
    for lineno, row in _rows(path, DAILY_COLUMNS):
        firm = row["firm_id"].strip()
        market = row["market"].strip()
        if not firm:
            _fail(path, lineno, "empty firm_id")
        if market not in MARKETS:
            _fail(path, lineno, f"market must be one of {MARKETS}, got {market!r}")
        date = _date(path, lineno, row["date"])
        key = (firm, market, date)
        if key in seen:
            _fail(path, lineno, f"duplicate bar for {firm}/{market}/{date}")
        seen.add(key)
        high = _float(path, lineno, "high", row["high"])
        low = _float(path, lineno, "low", row["low"])
        close = _float(path, lineno, "close", row["close"])
        if low <= 0 or high <= 0 or close <= 0:
            _fail(path, lineno, "non-positive price")
        if low > high:
            _fail(path, lineno, f"low {low} above high {high}")
        volume = _float(path, lineno, "volume", row["volume"])
        turnover = _float(path, lineno, "turnover", row["turnover"])
        if volume < 0 or turnover < 0:
            _fail(path, lineno, "negative volume or turnover")
        bars.append(DailyBar(firm, market, date, high, low, close, volume, turnover))
    return bars


def read_fx(path: str | Path) -> list[FxRate]:
    rates = []
    seen: set[dt.date] = set()
    for lineno, row in _rows(path, FX_COLUMNS):
        date = _date(path, lineno, row["date"])
        if date in seen:
            _fail(path, lineno, f"duplicate FX quote for {date}")
        seen.add(date)
        rate = _float(path, lineno, "hkd_cny", row["hkd_cny"])
        if rate <= 0:
            _fail(path, lineno, "non-positive FX rate")
        rates.append(FxRate(date, rate))
    return rates


def read_attrs(path: str | Path) -> list[MonthlyAttrs]:
    attrs = []
    seen: set[tuple[str, Month]] = set()
    for lineno, row in _rows(path, ATTR_COLUMNS):
        firm = row["firm_id"].strip()
        if not firm:
            _fail(path, lineno, "empty firm_id")
        try:
            month = Month.parse(row["month"])
        except ValueError as exc:
            _fail(path, lineno, str(exc))
        key = (firm, month)
        if key in seen:
            _fail(path, lineno, f"duplicate attributes for {firm}/{month}")
        seen.add(key)
        soe_raw = row["soe_flag"].strip()
        if soe_raw not in ("0", "1"):
            _fail(path, lineno, f"soe_flag must be 0 or 1, got {soe_raw!r}")
        values = {
            name: _float(path, lineno, name, row[name])
            for name in ("float_a", "float_h", "mktcap_cny", "shibor_3m", "hibor_3m")
        }
        if any(v <= 0 for v in values.values()):
            _fail(path, lineno, "attributes must be positive")
        attrs.append(MonthlyAttrs(firm, month, int(soe_raw), **values))
    return attrs


def monthly_mean(values: Sequence[float]) -> tuple[float, int]:
    """Arithmetic mean of one month's daily values, with the day count."""
    n = len(values)
    if n == 0:
        raise ValueError("monthly_mean of an empty month")
    return sum(values) / n, n


def bars_frame(bars: Iterable[DailyBar]) -> pd.DataFrame:
    """Daily bars as a DataFrame sorted by (firm, market, date)."""
    df = pd.DataFrame(
        {
            "firm_id": [b.firm_id for b in bars],
            "market": [b.market for b in bars],
            "date": [b.date for b in bars],
            "high": [b.high for b in bars],
            "low": [b.low for b in bars],
            "close": [b.close for b in bars],
            "volume": [b.volume for b in bars],
            "turnover": [b.turnover for b in bars],
        }
    )
    return df.sort_values(["firm_id", "market", "date"], kind="stable").reset_index(drop=True)


def build_skeleton(
    bars: Sequence[DailyBar],
    fx: Sequence[FxRate],
    attrs: Sequence[MonthlyAttrs],
    start: Month | None = None,
    end: Month | None = None,
) -> tuple[pd.DataFrame, list[Drop]]:
    """Collapse daily data to a firm-month panel skeleton.

    A candidate cell is any (firm, month) with at least one daily bar or an
    attribute row inside the window. A cell enters the panel only when it has
    bars in both markets, an FX mean over the firm's A-share trading dates,
    and attributes; otherwise it is dropped with every missing ingredient
    listed. Returns the panel sorted by (firm_id, month) plus the drops.
    """
    fx_by_date = {r.date: r.hkd_cny for r in fx}
    attrs_by_key = {(a.firm_id, a.month): a for a in attrs}

    def in_window(month: Month) -> bool:
        if start is not None and month < start:
            return False
        if end is not None and month > end:
            return False
        return True

    # Per-cell daily accumulators, keyed by (firm, month) then market.
    closes: dict[tuple[str, Month], dict[str, list[float]]] = {}
    turnovers: dict[tuple[str, Month], dict[str, list[float]]] = {}
    a_dates: dict[tuple[str, Month], list[dt.date]] = {}
    candidates: set[tuple[str, Month]] = set()

    for bar in bars:
        month = Month.of_date(bar.date)
        if not in_window(month):
            continue
        key = (bar.firm_id, month)
        candidates.add(key)
        closes.setdefault(key, {"A": [], "H": []})[bar.market].append(bar.close)
        turnovers.setdefault(key, {"A": [], "H": []})[bar.market].append(bar.turnover)
        if bar.market == "A":
            a_dates.setdefault(key, []).append(bar.date)

    for (firm, month) in attrs_by_key:
        if in_window(month):
            candidates.add((firm, month))

    rows = []
    drops: list[Drop] = []
    for firm, month in sorted(candidates, key=lambda k: (k[0], k[1])):
        key = (firm, month)
        cell_closes = closes.get(key, {"A": [], "H": []})
        missing = []
        if not cell_closes["A"]:
            missing.append("missing_a")
        if not cell_closes["H"]:
            missing.append("missing_h")
        fx_quotes = [fx_by_date[d] for d in a_dates.get(key, []) if d in fx_by_date]
        if not fx_quotes:
            missing.append("missing_fx")
        attr = attrs_by_key.get(key)
        if attr is None:
            missing.append("missing_attrs")
        if missing:
            drops.append(Drop(firm, month, tuple(missing)))
            continue
        p_a, n_days_a = monthly_mean(cell_closes["A"])
        p_h, n_days_h = monthly_mean(cell_closes["H"])
        rows.append(
            {
                "firm_id": firm,
                "month": str(month),
                "p_a": p_a,
                "p_h": p_h,
                "fx": monthly_mean(fx_quotes)[0],
                "turnover_a": monthly_mean(turnovers[key]["A"])[0],
                "turnover_h": monthly_mean(turnovers[key]["H"])[0],
                "n_days_a": n_days_a,
                "n_days_h": n_days_h,
                "soe_flag": attr.soe_flag,
                "float_a": attr.float_a,
                "float_h": attr.float_h,
                "mktcap_cny": attr.mktcap_cny,
                "shibor_3m": attr.shibor_3m,
                "hibor_3m": attr.hibor_3m,
            }
        )

    panel = pd.DataFrame(rows, columns=PANEL_COLUMNS)
    return panel, drops


def _format_cell(column: str, value) -> str:
    if column in ("firm_id", "month", "market", "spec_id", "term", "stars"):
        return str(value)
    if column in _PANEL_INT_COLUMNS or column in ("n_pairs", "n_firms", "n_obs", "n_instruments"):
        return str(int(value))
    return repr(float(value))


def write_table(df: pd.DataFrame, path: str | Path, columns: Sequence[str]) -> None:
    """Write a frame as CSV with loss-free float formatting."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in df.itertuples(index=False):
            writer.writerow([_format_cell(c, v) for c, v in zip(columns, row)])


def read_table(path: str | Path, columns: Sequence[str]) -> pd.DataFrame:
    """Inverse of write_table; floats round-trip exactly."""
    records = []
    for lineno, row in _rows(path, columns):
        record = {}
        for name, raw in row.items():
            if name in ("firm_id", "month", "market", "spec_id", "term", "stars"):
                record[name] = raw
            elif name in _PANEL_INT_COLUMNS or name in ("n_pairs", "n_firms", "n_obs", "n_instruments"):
                try:
                    record[name] = int(raw)
                except ValueError:
                    _fail(path, lineno, f"malformed integer in {name}: {raw!r}")
            else:
                record[name] = _float(path, lineno, name, raw)
        records.append(record)
    return pd.DataFrame(records, columns=columns)


def write_panel(panel: pd.DataFrame, path: str | Path) -> None:
    write_table(panel, path, PANEL_COLUMNS)


def read_panel(path: str | Path) -> pd.DataFrame:
    return read_table(path, PANEL_COLUMNS)


def write_drops(drops: Sequence[Drop], path: str | Path) -> None:
    """One line per dropped firm-month: firm,month,reason1|reason2."""
    with open(path, "w") as handle:
        for drop in drops:
            handle.write(f"{drop.firm_id},{drop.month},{'|'.join(drop.reasons)}\n")


def drop_counts(drops: Sequence[Drop]) -> dict[str, int]:
    """Rows missing each ingredient; a row may count under several reasons."""
    counts = {reason: 0 for reason in DROP_REASONS}
    for drop in drops:
        for reason in drop.reasons:
            counts.setdefault(reason, 0)
            counts[reason] += 1
    return counts
