"""Synthetic data generation for estimator validation.

Two generators with known ground truth:

* simulate_prices: a latent log-price random walk sampled on a fine
  intraday grid; observed high/low are the extreme quote prices (mid times
  1 +/- S/2), so the high/low spread estimator can be validated against the
  known proportional spread S.
* simulate_panel: a dynamic firm-month premium panel following
  prem_it = a_i + b*prem_{i,t-1} + theta*Policy_t + be*eff_it
            + bi*Policy_t*eff_it + controls + eps_it,
  with a discarded burn-in so the process starts at its stationary law.

write_dataset drives both to emit the raw CSV trio (daily_prices.csv,
fx.csv, monthly_attrs.csv) that the ingest pipeline consumes, steering the
A-share path so realised monthly premiums track the panel law.

mc_driver runs seeded replications with deterministic per-rep seed
derivation; failed replications are recorded and excluded, never hidden.
Set DUALPANEL_THREADS to cap worker threads (default 1, sequential).
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import pandas as pd
from scipy import stats

from .gmm import EstimationError
from .months import Month, month_range, weekdays
from .variables import PANEL_FULL_COLUMNS, PolicyCalendar, add_lag_and_interactions, policy_dummies

PANEL_DGP_TRUTH_KEYS = ("beta_lag", "theta_policy", "beta_eff", "beta_interaction")


@dataclass(frozen=True)
class PriceDgp:
    """Single-series price process with a known proportional spread."""

    true_spread: float = 0.01
    daily_vol: float = 0.03
    months: int = 250
    days_per_month: int = 21
    steps_per_day: int = 100
    start_price: float = 10.0
    seed: int = 0


def simulate_prices(dgp: PriceDgp) -> pd.DataFrame:
    """Daily bars (day, month, high, low, close) with spread ``true_spread``.

    The latent mid price is a driftless log random walk on a grid of
    ``steps_per_day`` points per day, continuous across days (no overnight
    gaps). Highs and lows are the grid extremes shifted outward by half the
    spread in proportional terms; the close is the mid price at the last
    grid point, so low <= close <= high always holds.
    """
    if dgp.steps_per_day < 100:
        raise ValueError("need at least 100 intraday steps for the grid approximation")
    rng = np.random.default_rng(np.random.SeedSequence(dgp.seed))
    n_days = dgp.months * dgp.days_per_month
    step_sd = dgp.daily_vol / np.sqrt(dgp.steps_per_day)
    steps = rng.normal(0.0, step_sd, size=n_days * dgp.steps_per_day)
    path = np.log(dgp.start_price) + np.cumsum(steps)
    path = path.reshape(n_days, dgp.steps_per_day)
    half = dgp.true_spread / 2.0
    high = np.exp(path.max(axis=1)) * (1.0 + half)
    low = np.exp(path.min(axis=1)) * (1.0 - half)
    close = np.exp(path[:, -1])
    return pd.DataFrame(
        {
            "day": np.arange(n_days),
            "month": np.arange(n_days) // dgp.days_per_month,
            "high": high,
            "low": low,
            "close": close,
        }
    )


@dataclass(frozen=True)
class PanelDgp:
    """Ground-truth law for the firm-month premium panel."""

    n_firms: int = 67
    n_months: int = 101
    start: Month = Month(2011, 1)
    beta_lag: float = 0.7
    theta_policy: float = 0.18
    beta_eff: float = 0.0
    beta_interaction: float = 0.0
    control_coefs: tuple[tuple[str, float], ...] = ()
    intercept: float = 0.107
    firm_effect_sd: float = 0.15
    noise_sd: float = 0.1
    error_ar: float = 0.0
    eff_mean: float = -0.015
    eff_sd: float = 0.006
    eff_lo: float = -0.067
    eff_hi: float = -0.002
    calendar: PolicyCalendar = field(default_factory=PolicyCalendar)
    burn_in: int = 60
    seed: int = 0

    def truth(self) -> dict[str, float]:
        return {key: getattr(self, key) for key in PANEL_DGP_TRUTH_KEYS}


def _truncated_normal(rng, mean, sd, lo, hi, size):
    a, b = (lo - mean) / sd, (hi - mean) / sd
    return stats.truncnorm.rvs(a, b, loc=mean, scale=sd, size=size, random_state=rng)


def _draw_controls(dgp: PanelDgp, rng, n_periods: int):
    """Firm- and month-level control paths, calibrated to realistic scales."""
    n = dgp.n_firms
    soe = (rng.random(n) < 0.92).astype(int)
    demand = np.exp(rng.normal(np.log(2.614), 0.55, size=n))
    size_level = rng.normal(25.0, 1.4, size=n)
    turnover = np.exp(rng.normal(np.log(1.035), 1.0, size=(n, n_periods)))
    log_rate = np.empty(n_periods)
    log_rate[0] = np.log(8.0)
    for t in range(1, n_periods):
        log_rate[t] = np.log(8.0) + 0.9 * (log_rate[t - 1] - np.log(8.0)) + rng.normal(0.0, 0.25)
    interest = np.exp(log_rate)
    return {
        "soe": np.repeat(soe[:, None], n_periods, axis=1),
        "demand": np.repeat(demand[:, None], n_periods, axis=1),
        "size": np.repeat(size_level[:, None], n_periods, axis=1),
        "turnover": turnover,
        "interest_rate": np.broadcast_to(interest, (n, n_periods)).copy(),
    }


def simulate_panel(dgp: PanelDgp) -> pd.DataFrame:
    """A panel_full-compatible table whose premium follows the known law.

    Burn-in periods are simulated and discarded, so the first emitted month
    has no lag inside the table. The generating parameters stay available as
    ``frame.attrs['dgp']``.
    """
    if dgp.burn_in < 50:
        raise ValueError("burn-in must be at least 50 periods")
    rng = np.random.default_rng(np.random.SeedSequence(dgp.seed))
    n_periods = dgp.burn_in + dgp.n_months
    first = dgp.start.plus(-dgp.burn_in)
    months = [first.plus(k) for k in range(n_periods)]
    policy = np.array([policy_dummies(m, dgp.calendar)[0] for m in months], dtype=float)

    alpha = rng.normal(dgp.intercept, dgp.firm_effect_sd, size=dgp.n_firms)
    eff = _truncated_normal(rng, dgp.eff_mean, dgp.eff_sd, dgp.eff_lo, dgp.eff_hi,
                            size=(dgp.n_firms, n_periods))
    eff2 = eff * 6.4 * np.exp(rng.normal(0.0, 0.2, size=eff.shape))
    controls = _draw_controls(dgp, rng, n_periods)
    coefs = dict(dgp.control_coefs)
    drive = np.zeros((dgp.n_firms, n_periods))
    for name, c in coefs.items():
        drive += c * controls[name]

    noise = rng.normal(0.0, dgp.noise_sd, size=(dgp.n_firms, n_periods))
    if dgp.error_ar:
        for t in range(1, n_periods):
            noise[:, t] += dgp.error_ar * noise[:, t - 1]

    prem = np.empty((dgp.n_firms, n_periods))
    state = alpha / (1.0 - dgp.beta_lag)
    for t in range(n_periods):
        state = (
            alpha
            + dgp.beta_lag * state
            + dgp.theta_policy * policy[t]
            + dgp.beta_eff * eff[:, t]
            + dgp.beta_interaction * policy[t] * eff[:, t]
            + drive[:, t]
            + noise[:, t]
        )
        prem[:, t] = state

    keep = slice(dgp.burn_in, n_periods)
    sample_months = [str(m) for m in months[keep]]
    width = len(str(dgp.n_firms))
    firm_ids = [f"F{k + 1:0{width}d}" for k in range(dgp.n_firms)]
    rows = []
    for i, firm in enumerate(firm_ids):
        for j, month in enumerate(sample_months):
            t = dgp.burn_in + j
            shhk, announce, fake = policy_dummies(months[t], dgp.calendar)
            rows.append(
                {
                    "firm_id": firm,
                    "month": month,
                    "prem": prem[i, t],
                    "shhk_policy": shhk,
                    "announcement": announce,
                    "fake_policy": fake,
                    "effboth": eff[i, t],
                    "effboth2": eff2[i, t],
                    "turnover": controls["turnover"][i, t],
                    "soe": int(controls["soe"][i, t]),
                    "demand": controls["demand"][i, t],
                    "size": controls["size"][i, t],
                    "interest_rate": controls["interest_rate"][i, t],
                }
            )
    frame = add_lag_and_interactions(pd.DataFrame(rows), dgp.calendar)
    frame = frame[PANEL_FULL_COLUMNS]
    frame.attrs["dgp"] = dgp
    return frame


def thread_count() -> int:
    """Worker cap from DUALPANEL_THREADS (default 1)."""
    raw = os.environ.get("DUALPANEL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"DUALPANEL_THREADS must be an integer, got {raw!r}")


@dataclass
class McResult:
    """Replication records plus the failure log."""

    reps: int
    records: pd.DataFrame
    failures: tuple[str, ...]

    @property
    def completed(self) -> int:
        return len(self.records)

    def mean(self, column: str) -> float:
        return float(self.records[column].mean())


def mc_driver(run_rep: Callable[[int, int], Mapping[str, float]], reps: int,
              seed: int = 0) -> McResult:
    """Run ``run_rep(rep_index, rep_seed)`` for each replication.

    Per-rep seeds are derived by SeedSequence spawning, so results do not
    depend on the worker count or execution order. A replication that raises
    EstimationError is recorded as a failure and excluded from the records.
    """
    children = np.random.SeedSequence(seed).spawn(reps)
    rep_seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]

    def one(k: int):
        try:
            return dict(run_rep(k, rep_seeds[k])), None
        except EstimationError as exc:
            return None, f"rep {k}: {exc}"

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(reps)))
    else:
        outcomes = [one(k) for k in range(reps)]

    records = [rec for rec, _ in outcomes if rec is not None]
    failures = tuple(msg for _, msg in outcomes if msg is not None)
    return McResult(reps=reps, records=pd.DataFrame(records), failures=failures)


# ---------------------------------------------------------------------------
# Raw CSV dataset emission (feeds the ingest pipeline end to end).

@dataclass(frozen=True)
class MarketConfig:
    """Price-level machinery for emitting raw daily CSVs."""

    daily_vol: float = 0.025
    steps_per_day: int = 100
    fx_level: float = 0.82
    fx_vol: float = 0.0015
    holiday_rate: float = 0.04
    missing_rate: float = 0.0
    spread_split: float = 0.4  # share of joint spread assigned to the A market


def _month_key(d) -> str:
    return f"{d.year:04d}-{d.month:02d}"


def _simulate_market_series(rng, log_start: float, n_days: int, vol: float,
                            steps: int, drift_per_day: np.ndarray | None = None):
    """Daily (high_mid, low_mid, close_mid) log extremes of a fine-grid walk."""
    step_sd = vol / np.sqrt(steps)
    inc = rng.normal(0.0, step_sd, size=(n_days, steps))
    if drift_per_day is not None:
        inc += (drift_per_day / steps)[:, None]
    path = log_start + np.cumsum(inc.reshape(-1)).reshape(n_days, steps)
    return path.max(axis=1), path.min(axis=1), path[:, -1]


def write_dataset(dgp: PanelDgp, market: MarketConfig, out_dir: str | Path,
                  seed: int | None = None) -> dict[str, int]:
    """Emit daily_prices.csv, fx.csv and monthly_attrs.csv under ``out_dir``.

    The panel law comes from simulate_panel(dgp); daily prices embed
    per-market spreads that add up to the panel's joint efficiency, and the
    A-share path carries a small within-month drift toward the level that
    reproduces the target premium from monthly mean closes. Returns row
    counts per file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        dgp = PanelDgp(**{**_dataclass_kv(dgp), "seed": seed})
    panel = simulate_panel(dgp)
    rng = np.random.default_rng(np.random.SeedSequence((dgp.seed, 1)))

    months = month_range(dgp.start, dgp.start.plus(dgp.n_months - 1))
    month_strs = [str(m) for m in months]
    all_days = [d for m in months for d in weekdays(m)]

    # Per-market trading calendars: weekdays minus independent holidays.
    calendars = {}
    for mkt in ("A", "H"):
        drop = rng.random(len(all_days)) < market.holiday_rate
        calendars[mkt] = [d for d, gone in zip(all_days, drop) if not gone]

    # Global daily FX (CNY per HKD), quoted every weekday.
    fx_noise = rng.normal(0.0, market.fx_vol, size=len(all_days))
    log_fx = np.log(market.fx_level) + np.cumsum(fx_noise) - np.cumsum(fx_noise).mean()
    fx_by_date = {d: float(np.exp(v)) for d, v in zip(all_days, log_fx)}

    by_key = {(r.firm_id, r.month): r for r in panel.itertuples(index=False)}
    firms = sorted(panel["firm_id"].unique())
    missing = {
        (firm, month, mkt): bool(rng.random() < market.missing_rate)
        for firm in firms for month in month_strs for mkt in ("A", "H")
    }

    a_days_by_month: dict[str, list] = {}
    for d in calendars["A"]:
        a_days_by_month.setdefault(_month_key(d), []).append(d)
    h_days_by_month: dict[str, list] = {}
    for d in calendars["H"]:
        h_days_by_month.setdefault(_month_key(d), []).append(d)

    price_rows = []
    attr_rows = []
    hibor = np.exp(rng.normal(np.log(0.9), 0.3, size=len(month_strs)))
    for firm in firms:
        h_start = float(rng.uniform(np.log(5.0), np.log(40.0)))
        # H market: free random walk with the firm's H spread.
        h_dates = [d for d in calendars["H"] if not missing[(firm, _month_key(d), "H")]]
        h_closes_by_month: dict[str, float] = {}
        if h_dates:
            hi, lo, cl = _simulate_market_series(
                rng, h_start, len(h_dates), market.daily_vol, market.steps_per_day
            )
            h_monthly: dict[str, list[float]] = {}
            for k, d in enumerate(h_dates):
                mon = _month_key(d)
                row = by_key.get((firm, mon))
                if row is None:
                    continue
                spread_h = max(0.0, -row.effboth) * (1.0 - market.spread_split)
                price_rows.append(
                    (
                        firm, "H", d,
                        np.exp(hi[k]) * (1.0 + spread_h / 2.0),
                        np.exp(lo[k]) * (1.0 - spread_h / 2.0),
                        np.exp(cl[k]),
                        float(np.exp(rng.normal(13.0, 0.5))),
                        float(np.exp(rng.normal(np.log(0.004), 0.3))),
                    )
                )
                h_monthly.setdefault(mon, []).append(float(np.exp(cl[k])))
            h_closes_by_month = {m: float(np.mean(v)) for m, v in h_monthly.items()}

        # A market: drift-steered walk tracking the target premium.
        log_level = None
        for mon in month_strs:
            row = by_key.get((firm, mon))
            if row is None or missing[(firm, mon, "A")]:
                continue
            days = [d for d in a_days_by_month.get(mon, [])]
            h_bar = h_closes_by_month.get(mon)
            if not days or h_bar is None:
                continue
            fx_bar = float(np.mean([fx_by_date[d] for d in days]))
            target = max(1.0 + row.prem, 0.05) * h_bar * fx_bar
            if log_level is None:
                log_level = np.log(target)
            drift_total = np.log(target) - log_level
            drift = np.full(len(days), 2.0 * drift_total / (len(days) + 1))
            hi, lo, cl = _simulate_market_series(
                rng, log_level, len(days), market.daily_vol, market.steps_per_day,
                drift_per_day=drift,
            )
            log_level = float(cl[-1])
            spread_a = max(0.0, -row.effboth) * market.spread_split
            ratio = row.turnover
            for k, d in enumerate(days):
                price_rows.append(
                    (
                        firm, "A", d,
                        np.exp(hi[k]) * (1.0 + spread_a / 2.0),
                        np.exp(lo[k]) * (1.0 - spread_a / 2.0),
                        np.exp(cl[k]),
                        float(np.exp(rng.normal(15.0, 0.5))),
                        float(ratio * np.exp(rng.normal(np.log(0.004), 0.3))),
                    )
                )

        for j, mon in enumerate(month_strs):
            row = by_key.get((firm, mon))
            if row is None:
                continue
            float_h = float(np.exp(rng.normal(np.log(8e8), 0.8)))
            attr_rows.append(
                (
                    firm, mon, int(row.soe),
                    row.demand * float_h, float_h,
                    float(np.exp(row.size)),
                    row.interest_rate * float(hibor[j]), float(hibor[j]),
                )
            )

    price_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(out / "daily_prices.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["firm_id", "market", "date", "high", "low", "close", "volume", "turnover"])
        for firm, mkt, d, high, low, close, volume, turnover in price_rows:
            writer.writerow([firm, mkt, d.isoformat(), repr(float(high)), repr(float(low)),
                             repr(float(close)), repr(volume), repr(turnover)])
    with open(out / "fx.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", "hkd_cny"])
        for d in all_days:
            writer.writerow([d.isoformat(), repr(fx_by_date[d])])
    with open(out / "monthly_attrs.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["firm_id", "month", "soe_flag", "float_a", "float_h",
                         "mktcap_cny", "shibor_3m", "hibor_3m"])
        for firm, mon, soe, fa, fh, cap, shibor, hib in attr_rows:
            writer.writerow([firm, mon, soe, repr(float(fa)), repr(float(fh)),
                             repr(float(cap)), repr(float(shibor)), repr(float(hib))])
    return {
        "daily_prices": len(price_rows),
        "fx": len(all_days),
        "monthly_attrs": len(attr_rows),
    }


def _dataclass_kv(obj) -> dict:
    import dataclasses

    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
