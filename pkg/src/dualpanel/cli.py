"""Command line front end for the dual-listing premium pipeline.

Subcommands cover the full path from raw daily CSVs to rendered tables:

    ingest       daily bars + FX + monthly attributes -> panel skeleton
    spread       daily bars -> monthly spread table per firm and market
    build-panel  skeleton + spreads -> analysis panel with policy dummies
    estimate     fit one named spec on a panel
    suite        fit a set of named specs, write tables and descriptives
    simulate     generate synthetic prices, panels, or a full raw dataset
    report       render report.txt from stored results

Options may come from the command line or from a ``--manifest`` file with
one ``key=value`` per line; explicit flags win over manifest entries. Every
command appends a block to ``run.log`` in its output directory recording the
package and library versions, the resolved configuration and its SHA-256
hash, and row/drop counts. The log carries no timestamps, so repeated runs
with the same inputs produce byte-identical output trees.

Exit codes: 0 success, 1 invalid input or usage, 2 estimation failure,
3 I/O failure (the message names the offending path).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .gmm import EstimationError, fit_twostep
from .ingest import (
    IngestError, bars_frame, build_skeleton, drop_counts, read_attrs,
    read_daily_bars, read_fx, read_panel, read_table, write_drops,
    write_panel, write_table,
)
from .months import Month
from .simulate import (
    MarketConfig, PanelDgp, PriceDgp, simulate_panel, simulate_prices,
    write_dataset,
)
from .spreads import SPREAD_COLUMNS, efficiency_rows, monthly_spread_table
from .study import (
    SUITE, TABLE_GROUPS, TREND_COLUMNS, descriptives, diagnostics_frame,
    interaction_consistency_note, read_descriptives, read_diagnostics,
    read_results, render_descriptives, render_table, render_trend,
    results_frame, run_suite, spec_names, trend_export, write_descriptives,
    write_diagnostics, write_results,
)
from .variables import PolicyCalendar, build_panel_full, read_panel_full, write_panel_full


class CliError(Exception):
    """Bad usage or bad option values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want exit 1
        raise CliError(message)


def _read_manifest(path: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    try:
        handle = open(path)
    except FileNotFoundError:
        raise CliError(f"manifest not found: {path}")
    with handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise CliError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, _, value = text.partition("=")
            mapping[key.strip()] = value.strip()
    return mapping


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise CliError(f"expected a boolean, got {raw!r}")


class _Options:
    """Resolved option values: flag > manifest > default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.manifest = _read_manifest(args.manifest) if getattr(args, "manifest", None) else {}
        self.resolved: dict[str, str] = {}

    def get(self, name: str, cast=str, default=None, required: bool = False):
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is None and name in self.manifest:
            value = self.manifest[name]
        if value is None:
            value = default
        if value is None:
            if required:
                raise CliError(f"missing required option --{name} (or manifest key {name})")
            return None
        if isinstance(value, str) and cast is not str:
            if cast is bool:
                value = _parse_bool(value)
            else:
                try:
                    value = cast(value)
                except ValueError as exc:
                    raise CliError(f"bad value for {name}: {exc}")
        self.resolved[name] = str(value)
        return value

    def flag(self, name: str, default: bool = False) -> bool:
        value = getattr(self.args, name.replace("-", "_"), None)
        if value:  # explicitly set on the command line
            self.resolved[name] = "True"
            return True
        if name in self.manifest:
            value = _parse_bool(self.manifest[name])
            self.resolved[name] = str(value)
            return value
        self.resolved[name] = str(default)
        return default


def _out_dir(opts: _Options) -> Path:
    out = Path(opts.get("out", required=True))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _append_run_log(out: Path, command: str, opts: _Options, extra: list[str]) -> None:
    config = dict(sorted(opts.resolved.items()))
    payload = "".join(f"{k}={v}\n" for k, v in config.items())
    digest = hashlib.sha256(payload.encode()).hexdigest()
    lines = [
        f"command: {command}",
        f"package: dualpanel {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"pandas: {pd.__version__}",
        f"scipy: {scipy.__version__}",
    ]
    lines += [f"config {k}={v}" for k, v in config.items()]
    lines.append(f"config_sha256: {digest}")
    lines += extra
    with open(out / "run.log", "a") as handle:
        handle.write("\n".join(lines) + "\n\n")


def _calendar(opts: _Options) -> PolicyCalendar:
    return PolicyCalendar(
        policy=opts.get("policy-month", Month.parse, default=Month(2014, 11)),
        announcement=opts.get("announcement-month", Month.parse, default=Month(2014, 4)),
        placebo=opts.get("placebo-month", Month.parse, default=Month(2016, 11)),
        boundary=opts.get("boundary", default="inclusive"),
    )


def _drop_lines(drops) -> list[str]:
    counts = drop_counts(drops)
    return [f"drops {reason}={count}" for reason, count in sorted(counts.items()) if count]


# ---------------------------------------------------------------------------
# Subcommand bodies.

def cmd_ingest(args) -> None:
    opts = _Options(args)
    daily_path = opts.get("daily", required=True)
    fx_path = opts.get("fx", required=True)
    attrs_path = opts.get("attrs", required=True)
    start = opts.get("start", Month.parse)
    end = opts.get("end", Month.parse)
    out = _out_dir(opts)

    bars = read_daily_bars(daily_path)
    fx = read_fx(fx_path)
    attrs = read_attrs(attrs_path)
    skeleton, drops = build_skeleton(bars, fx, attrs, start, end)
    write_panel(skeleton, out / "panel_skeleton.csv")
    write_drops(drops, out / "drops_skeleton.csv")

    extra = [
        f"rows daily={len(bars)}", f"rows fx={len(fx)}", f"rows attrs={len(attrs)}",
        f"rows skeleton={len(skeleton)}", f"rows dropped={len(drops)}",
    ] + _drop_lines(drops)
    _append_run_log(out, "ingest", opts, extra)
    print(f"ingest: {len(skeleton)} firm-months kept, {len(drops)} dropped -> {out}")


def cmd_spread(args) -> None:
    opts = _Options(args)
    daily_path = opts.get("daily", required=True)
    out = _out_dir(opts)

    bars = read_daily_bars(daily_path)
    spreads = monthly_spread_table(bars_frame(bars))
    write_table(spreads, out / "spreads.csv", SPREAD_COLUMNS)
    extra = [f"rows daily={len(bars)}", f"rows spreads={len(spreads)}"]
    _append_run_log(out, "spread", opts, extra)
    print(f"spread: {len(spreads)} firm-market-months -> {out}")


def cmd_build_panel(args) -> None:
    opts = _Options(args)
    skeleton_path = opts.get("skeleton", required=True)
    spreads_path = opts.get("spreads", required=True)
    calendar = _calendar(opts)
    out = _out_dir(opts)

    skeleton = read_panel(skeleton_path)
    spreads = read_table(spreads_path, SPREAD_COLUMNS)
    efficiency, eff_drops = efficiency_rows(spreads)
    panel, panel_drops = build_panel_full(skeleton, efficiency, calendar)
    drops = list(eff_drops) + list(panel_drops)
    write_panel_full(panel, out / "panel.csv")
    write_drops(drops, out / "drops_panel.csv")
    write_table(trend_export(panel), out / "trend.csv", TREND_COLUMNS)

    extra = [
        f"rows skeleton={len(skeleton)}", f"rows efficiency={len(efficiency)}",
        f"rows panel={len(panel)}", f"rows dropped={len(drops)}",
    ] + _drop_lines(drops)
    _append_run_log(out, "build-panel", opts, extra)
    print(f"build-panel: {len(panel)} firm-months -> {out}")


def cmd_estimate(args) -> None:
    opts = _Options(args)
    panel_path = opts.get("panel", required=True)
    name = opts.get("spec", required=True)
    collapse = opts.flag("collapse")
    out = _out_dir(opts)

    if name not in SUITE:
        raise CliError(f"unknown spec {name!r}; valid: {', '.join(spec_names())}")
    spec = SUITE[name]
    if collapse:
        spec = dataclasses.replace(spec, collapse=True)
    panel = read_panel_full(panel_path)
    fit = fit_twostep(panel, spec)
    write_results([fit], out / "results.csv")
    write_diagnostics([fit], out / "diagnostics.csv")
    table = render_table(f"Model: {name}", [name], results_frame([fit]), diagnostics_frame([fit]))
    (out / "table.txt").write_text(table)

    extra = [
        f"spec {name}: n_obs={fit.n_obs} n_firms={fit.n_firms} n_instruments={fit.n_instruments}",
    ]
    extra += [f"warning: {w}" for w in fit.warnings]
    _append_run_log(out, "estimate", opts, extra)
    print(table, end="")


def cmd_suite(args) -> None:
    opts = _Options(args)
    panel_path = opts.get("panel", required=True)
    spec_list = opts.get("specs")
    collapse = opts.flag("collapse")
    out = _out_dir(opts)

    names = spec_names() if spec_list is None else [s.strip() for s in spec_list.split(",") if s.strip()]
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise CliError(f"unknown spec(s) {', '.join(unknown)}; valid: {', '.join(spec_names())}")

    panel = read_panel_full(panel_path)
    fits = run_suite(panel, names, collapse=collapse)
    write_results(fits, out / "results.csv")
    write_diagnostics(fits, out / "diagnostics.csv")
    desc = descriptives(panel)
    write_descriptives(desc, out / "descriptives.csv")
    write_table(trend_export(panel), out / "trend.csv", TREND_COLUMNS)

    results = results_frame(fits)
    diagnostics = diagnostics_frame(fits)
    fitted = {f.spec.name for f in fits}
    sections = [render_descriptives(desc)]
    for group, ids in TABLE_GROUPS.items():
        present = [i for i in ids if i in fitted]
        if present:
            sections.append(render_table(f"Table: {group}", present, results, diagnostics))
    (out / "tables.txt").write_text("\n".join(sections))

    extra = []
    for fit in fits:
        extra.append(
            f"spec {fit.spec.name}: n_obs={fit.n_obs} n_firms={fit.n_firms} "
            f"n_instruments={fit.n_instruments}"
        )
        extra += [f"warning: {fit.spec.name}: {w}" for w in fit.warnings]
    _append_run_log(out, "suite", opts, extra)
    print(f"suite: fitted {len(fits)} specs on {len(panel)} firm-months -> {out}")


_PRICE_FIELDS = {
    "true_spread": float, "daily_vol": float, "months": int, "days_per_month": int,
    "steps_per_day": int, "start_price": float, "seed": int,
}
_PANEL_FIELDS = {
    "n_firms": int, "n_months": int, "start": Month.parse, "beta_lag": float,
    "theta_policy": float, "beta_eff": float, "beta_interaction": float,
    "intercept": float, "firm_effect_sd": float, "noise_sd": float, "error_ar": float,
    "eff_mean": float, "eff_sd": float, "eff_lo": float, "eff_hi": float,
    "burn_in": int, "seed": int,
}
_MARKET_FIELDS = {
    "daily_vol": float, "steps_per_day": int, "fx_level": float, "fx_vol": float,
    "holiday_rate": float, "missing_rate": float, "spread_split": float,
}


def _collect_overrides(opts: _Options, field_maps: list[dict]) -> list[dict]:
    """Split --set/manifest simulation parameters across the dataclasses."""
    raw: dict[str, str] = {}
    known = set().union(*[m.keys() for m in field_maps])
    for key, value in opts.manifest.items():
        if key in known:
            raw[key] = value
    for item in getattr(opts.args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise CliError(f"unknown simulation parameter {key!r}")
        raw[key] = value
    out = []
    for field_map in field_maps:
        block = {}
        for key, value in raw.items():
            if key in field_map:
                try:
                    block[key] = field_map[key](value)
                except ValueError as exc:
                    raise CliError(f"bad value for {key}: {exc}")
                opts.resolved[key] = value
        out.append(block)
    return out


def _apply_seed(overrides: dict, opts: _Options, seed: int) -> None:
    """Seed precedence: --set seed=... > --seed flag > manifest > default.

    _collect_overrides copies a manifest ``seed`` into ``overrides``, which
    would otherwise shadow an explicit --seed flag.
    """
    explicit = any(item.partition("=")[0].strip() == "seed"
                   for item in (getattr(opts.args, "set", None) or []))
    if not explicit:
        overrides["seed"] = seed
        opts.resolved["seed"] = str(seed)


def _write_prices_csv(frame: pd.DataFrame, path: Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["day", "month", "high", "low", "close"])
        for rec in frame.itertuples(index=False):
            writer.writerow([int(rec.day), int(rec.month),
                             repr(float(rec.high)), repr(float(rec.low)), repr(float(rec.close))])


def cmd_simulate(args) -> None:
    opts = _Options(args)
    mode = opts.get("mode", required=True)
    if mode not in ("prices", "panel", "dataset"):
        raise CliError(f"mode must be prices, panel or dataset, got {mode!r}")
    seed = opts.get("seed", int, default=0)
    out = _out_dir(opts)

    if mode == "prices":
        (overrides,) = _collect_overrides(opts, [_PRICE_FIELDS])
        _apply_seed(overrides, opts, seed)
        dgp = PriceDgp(**overrides)
        frame = simulate_prices(dgp)
        _write_prices_csv(frame, out / "prices.csv")
        extra = [f"rows prices={len(frame)}"]
    elif mode == "panel":
        (overrides,) = _collect_overrides(opts, [_PANEL_FIELDS])
        _apply_seed(overrides, opts, seed)
        dgp = PanelDgp(**overrides)
        frame = simulate_panel(dgp)
        write_panel_full(frame, out / "panel.csv")
        with open(out / "truth.csv", "w") as handle:
            handle.write("key,value\n")
            for key, value in dgp.truth().items():
                handle.write(f"{key},{repr(float(value))}\n")
        extra = [f"rows panel={len(frame)}"]
    else:
        panel_over, market_over = _collect_overrides(opts, [_PANEL_FIELDS, _MARKET_FIELDS])
        _apply_seed(panel_over, opts, seed)
        dgp = PanelDgp(**panel_over)
        market = MarketConfig(**market_over)
        counts = write_dataset(dgp, market, out)
        extra = [f"rows {name}={count}" for name, count in sorted(counts.items())]

    _append_run_log(out, "simulate", opts, extra)
    print(f"simulate {mode}: -> {out}")


def cmd_report(args) -> None:
    opts = _Options(args)
    results_path = opts.get("results", required=True)
    diagnostics_path = opts.get("diagnostics", required=True)
    descriptives_path = opts.get("descriptives")
    trend_path = opts.get("trend")
    out = _out_dir(opts)

    results = read_results(results_path)
    diagnostics = read_diagnostics(diagnostics_path)
    sections = []
    if descriptives_path is not None:
        sections.append(render_descriptives(read_descriptives(descriptives_path)))
    fitted = set(results["spec_id"])
    for group, ids in TABLE_GROUPS.items():
        present = [i for i in ids if i in fitted]
        if present:
            sections.append(render_table(f"Table: {group}", present, results, diagnostics))
    if trend_path is not None:
        sections.append(render_trend(read_table(trend_path, TREND_COLUMNS)))
    sections.append(interaction_consistency_note())
    text = "\n".join(sections)
    (out / "report.txt").write_text(text)

    extra = [f"sections={len(sections)}"]
    _append_run_log(out, "report", opts, extra)
    print(f"report: {len(sections)} sections -> {out}")


# ---------------------------------------------------------------------------
# Parser assembly.

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--manifest", help="key=value config file; flags override it")
    sub.add_argument("--out", help="output directory (created if absent)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualpanel", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"dualpanel {__version__}")
    commands = parser.add_subparsers(dest="command")

    sub = commands.add_parser("ingest", help="raw CSVs -> panel skeleton")
    sub.add_argument("--daily", help="daily bars CSV")
    sub.add_argument("--fx", help="daily FX CSV (CNY per HKD)")
    sub.add_argument("--attrs", help="monthly firm attributes CSV")
    sub.add_argument("--start", help="first month YYYY-MM (optional)")
    sub.add_argument("--end", help="last month YYYY-MM (optional)")
    _add_common(sub)
    sub.set_defaults(func=cmd_ingest)

    sub = commands.add_parser("spread", help="daily bars -> monthly spreads")
    sub.add_argument("--daily", help="daily bars CSV")
    _add_common(sub)
    sub.set_defaults(func=cmd_spread)

    sub = commands.add_parser("build-panel", help="skeleton + spreads -> analysis panel")
    sub.add_argument("--skeleton", help="panel_skeleton.csv from ingest")
    sub.add_argument("--spreads", help="spreads.csv from spread")
    sub.add_argument("--policy-month", help="policy event month (default 2014-11)")
    sub.add_argument("--announcement-month", help="announcement month (default 2014-04)")
    sub.add_argument("--placebo-month", help="placebo event month (default 2016-11)")
    sub.add_argument("--boundary", help="inclusive or exclusive event month (default inclusive)")
    _add_common(sub)
    sub.set_defaults(func=cmd_build_panel)

    sub = commands.add_parser("estimate", help="fit one named spec")
    sub.add_argument("--panel", help="panel.csv from build-panel")
    sub.add_argument("--spec", help="spec name (see suite --help for the list)")
    sub.add_argument("--collapse", action="store_true", default=None,
                     help="collapse the instrument matrix over periods")
    _add_common(sub)
    sub.set_defaults(func=cmd_estimate)

    sub = commands.add_parser("suite", help="fit the named specs and render tables")
    sub.add_argument("--panel", help="panel.csv from build-panel")
    sub.add_argument("--specs", help=f"comma-separated subset of: {', '.join(spec_names())}")
    sub.add_argument("--collapse", action="store_true", default=None,
                     help="collapse the instrument matrix over periods")
    _add_common(sub)
    sub.set_defaults(func=cmd_suite)

    sub = commands.add_parser("simulate", help="synthetic prices, panels, or raw datasets")
    sub.add_argument("--mode", help="prices, panel, or dataset")
    sub.add_argument("--seed", help="base RNG seed (default 0)")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a simulation parameter (repeatable)")
    _add_common(sub)
    sub.set_defaults(func=cmd_simulate)

    sub = commands.add_parser("report", help="render report.txt from stored results")
    sub.add_argument("--results", help="results.csv from estimate/suite")
    sub.add_argument("--diagnostics", help="diagnostics.csv from estimate/suite")
    sub.add_argument("--descriptives", help="descriptives.csv (optional)")
    sub.add_argument("--trend", help="trend.csv (optional)")
    _add_common(sub)
    sub.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except IngestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename else exc
        print(f"error: file not found: {name}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
