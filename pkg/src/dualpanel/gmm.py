"""Two-step system GMM for short dynamic panels.

Estimates y_it = b1 * y_{i,t-1} + delta' x_it + alpha_i + eps_it by stacking
first-differenced and level equations per firm:

* difference equation at period t (needs t, t-1, t-2): endogenous variables
  are instrumented by their own levels dated t-2 and t-3, one instrument
  column per (variable, period, lag) cell, zeros where a firm lacks the cell;
  ``collapse=True`` folds the period dimension away.
* level equation at period t (needs t, t-1): endogenous variables are
  instrumented by their lag-1 first difference (v_{t-1} - v_{t-2}), again one
  column per period cell unless collapsed.
* exogenous regressors and year dummies instrument themselves through shared
  columns (differenced on difference rows, levels on level rows); the
  constant lives in the level equation with its own column.

Step 1 uses the canonical initial weighting (tridiagonal band for the
difference block, identity for levels). Step 2 weights with the clustered
moment covariance from step-1 residuals, and reported standard errors always
carry the Windmeijer finite-sample correction. Inversions go through the
pseudo-inverse at a relative tolerance of 1e-10; the automatic collinearity
scan drops dependent design columns (year dummies before anything else) and
logs every drop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .months import Month

RCOND = 1e-10


class EstimationError(RuntimeError):
    """The model cannot be estimated on the given panel."""


@dataclass(frozen=True)
class ModelSpec:
    """One estimation: regressors, endogeneity split, instrument plan knobs.

    The lagged dependent variable is always included and always endogenous.
    ``endogenous`` names the subset of ``regressors`` that are instrumented
    by their own lags; the rest self-instrument. ``instrument_lags`` is the
    (min, max) level lag range for the difference equation. ``level_gmm``
    switches the level-equation GMM block; with it off, a lag-only spec is
    exactly identified.
    """

    name: str
    regressors: tuple[str, ...] = ()
    dependent: str = "prem"
    endogenous: tuple[str, ...] = ()
    instrument_lags: tuple[int, int] = (2, 3)
    year_dummies: bool = False
    collapse: bool = False
    level_gmm: bool = True

    def __post_init__(self) -> None:
        lo, hi = self.instrument_lags
        if lo < 2 or hi < lo:
            raise ValueError(f"instrument_lags must satisfy 2 <= min <= max, got {self.instrument_lags}")
        unknown = set(self.endogenous) - set(self.regressors)
        if unknown:
            raise ValueError(f"endogenous variables not among regressors: {sorted(unknown)}")
        if self.dependent in self.regressors:
            raise ValueError("the dependent variable cannot also be a regressor")


@dataclass(frozen=True)
class InstrumentPlan:
    """Realised instrument layout, after pruning identically-zero columns."""

    diff_cells: tuple[tuple, ...]   # (var, period, lag) or (var, lag) collapsed
    level_cells: tuple[tuple, ...]  # (var, period) or (var,) collapsed
    iv_names: tuple[str, ...]       # shared self-instrument columns
    has_constant: bool
    collapse: bool
    pruned_zero_columns: int

    @property
    def n_instruments(self) -> int:
        return (
            len(self.diff_cells) + len(self.level_cells) + len(self.iv_names)
            + (1 if self.has_constant else 0)
        )


@dataclass
class SystemData:
    """Stacked difference+level system for one spec on one panel."""

    spec: ModelSpec
    terms: tuple[str, ...]          # design columns: lag, regressors, year dummies, const
    X: np.ndarray                   # (n_rows, K)
    y: np.ndarray                   # (n_rows,)
    Z: np.ndarray                   # (n_rows, L)
    plan: InstrumentPlan
    firm_ids: tuple[str, ...]
    # per firm: (diff_start, diff_stop, level_start, level_stop) row slices
    firm_rows: tuple[tuple[int, int, int, int], ...]
    diff_periods: tuple[np.ndarray, ...]   # per firm, period index of each diff row
    dropped: tuple[str, ...]
    warnings: tuple[str, ...]

    @property
    def n_level_rows(self) -> int:
        return sum(ls_le[3] - ls_le[2] for ls_le in self.firm_rows)

    @property
    def n_diff_rows(self) -> int:
        return sum(ls_le[1] - ls_le[0] for ls_le in self.firm_rows)


@dataclass
class GmmFit:
    """Two-step estimates with corrected inference and diagnostics."""

    spec: ModelSpec
    terms: tuple[str, ...]
    coef: dict[str, float]
    se: dict[str, float]
    z: dict[str, float]
    p: dict[str, float]
    stars: dict[str, str]
    vcov: np.ndarray
    step1_coef: dict[str, float]
    n_obs: int
    n_diff_obs: int
    n_firms: int
    n_instruments: int
    hansen_j: float
    hansen_df: int
    hansen_p: float | None
    ar1_stat: float | None
    ar1_p: float | None
    ar2_stat: float | None
    ar2_p: float | None
    cond_step1: float
    cond_step2: float
    dropped: tuple[str, ...]
    warnings: tuple[str, ...]
    plan: InstrumentPlan | None = field(repr=False, default=None)

    def param_index(self, term: str) -> int:
        try:
            return self.terms.index(term)
        except ValueError:
            raise KeyError(f"term {term!r} not in fit (terms: {self.terms})")


@dataclass(frozen=True)
class MarginalEffect:
    effect: float
    se: float | None
    z: float | None
    p: float | None


def significance_stars(p: float) -> str:
    """***, **, * at the 1, 5, 10 percent two-sided levels."""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def _period_index(value) -> int:
    if isinstance(value, Month):
        return value.index()
    if isinstance(value, str):
        return Month.parse(value).index()
    return int(value)


def _pinv_with_cond(matrix: np.ndarray) -> tuple[np.ndarray, float, int]:
    """Pseudo-inverse at RCOND plus the condition number of the kept part."""
    if matrix.size == 0:
        raise EstimationError("empty weighting matrix")
    sv = np.linalg.svd(matrix, compute_uv=False, hermitian=True)
    top = sv[0] if sv.size else 0.0
    if top <= 0:
        raise EstimationError("weighting matrix is identically zero")
    kept = sv[sv > RCOND * top]
    cond = float(top / kept[-1])
    return np.linalg.pinv(matrix, rcond=RCOND, hermitian=True), cond, kept.size


def _solve_design(matrix: np.ndarray) -> tuple[np.ndarray, float, int]:
    """Invert a PSD design matrix after diagonal equilibration.

    Regressor columns differ in units by orders of magnitude, so the raw
    condition number of C'WC mixes scale with identification. Rescaling to
    unit diagonal first makes the rank decision scale-invariant: a direction
    only counts as lost when it stays degenerate after normalization. Rows
    with a zero diagonal are genuinely unidentified and left unscaled.
    """
    diag = np.sqrt(np.clip(np.diag(matrix), 0.0, None))
    scale = np.where(diag > 0, diag, 1.0)
    inv_scale = 1.0 / scale
    equilibrated = matrix * inv_scale[:, None] * inv_scale[None, :]
    pinv_eq, cond, rank = _pinv_with_cond(equilibrated)
    return pinv_eq * inv_scale[:, None] * inv_scale[None, :], cond, rank


def _greedy_keep(X: np.ndarray, order: Sequence[int]) -> list[int]:
    """Indices (in original order) of a maximal independent column subset.

    Columns are admitted greedily in the given priority order; a column that
    does not raise the numerical rank (relative tolerance RCOND) is dropped.
    """
    kept: list[int] = []
    basis: np.ndarray | None = None  # orthonormal basis of kept columns
    scale = None
    for j in order:
        col = X[:, j]
        norm = np.linalg.norm(col)
        if norm <= 0:
            continue
        if basis is None:
            kept.append(j)
            basis = (col / norm)[:, None]
            scale = norm
            continue
        resid = col - basis @ (basis.T @ col)
        if np.linalg.norm(resid) > RCOND * max(norm, scale):
            kept.append(j)
            basis = np.hstack([basis, (resid / np.linalg.norm(resid))[:, None]])
            scale = max(scale, norm)
    return sorted(kept)


def build_instruments(panel: pd.DataFrame, spec: ModelSpec,
                      firm_col: str = "firm_id", month_col: str = "month") -> SystemData:
    """Assemble the stacked system (X, y, Z) and the instrument plan.

    The month column may hold YYYY-MM strings, Month values, or plain
    integer period indices; adjacency and lags always follow that index.
    A panel row is usable only if the dependent variable and every regressor
    are finite; the one-period lag is reconstructed internally.
    """
    needed = [spec.dependent, *spec.regressors]
    for name in needed:
        if name not in panel.columns:
            raise EstimationError(f"panel lacks column {name!r}")

    firms = sorted(panel[firm_col].astype(str).unique())
    periods_by_firm: dict[str, dict[int, np.ndarray]] = {}
    values = panel[needed].to_numpy(dtype=float)
    usable = np.isfinite(values).all(axis=1)
    firm_arr = panel[firm_col].astype(str).to_numpy()
    period_arr = np.array([_period_index(m) for m in panel[month_col]])
    for i in range(len(panel)):
        if not usable[i]:
            continue
        periods_by_firm.setdefault(firm_arr[i], {})[int(period_arr[i])] = values[i]

    lag_name = f"{spec.dependent}_lag1"
    warnings: list[str] = []

    # Enumerate equation rows per firm.
    diff_rows_by_firm: dict[str, list[int]] = {}
    level_rows_by_firm: dict[str, list[int]] = {}
    silent_firms: list[str] = []
    no_diff_firms: list[str] = []
    for firm in firms:
        cells = periods_by_firm.get(firm, {})
        level_rows = [t for t in sorted(cells) if (t - 1) in cells]
        diff_rows = [t for t in level_rows if (t - 2) in cells]
        if not level_rows:
            silent_firms.append(firm)
            continue
        if not diff_rows:
            no_diff_firms.append(firm)
        level_rows_by_firm[firm] = level_rows
        diff_rows_by_firm[firm] = diff_rows
    if silent_firms:
        warnings.append(
            f"{len(silent_firms)} firm(s) contribute no observations (no consecutive months): "
            + ", ".join(silent_firms[:5]) + ("..." if len(silent_firms) > 5 else "")
        )
    if no_diff_firms:
        warnings.append(
            f"{len(no_diff_firms)} firm(s) contribute no difference-equation moments: "
            + ", ".join(no_diff_firms[:5]) + ("..." if len(no_diff_firms) > 5 else "")
        )
    active_firms = [f for f in firms if f in level_rows_by_firm]
    if not active_firms:
        raise EstimationError("no firm has two consecutive usable months")

    # Year dummies over the level-row periods (diff rows are a subset).
    year_cols: list[str] = []
    if spec.year_dummies:
        years = sorted({t // 12 for f in active_firms for t in level_rows_by_firm[f]})
        year_cols = [f"year_{y}" for y in years[1:]]  # first year is the base

    def year_value(period: int, col: str) -> float:
        return 1.0 if period // 12 == int(col.split("_")[1]) else 0.0

    # Stack design rows firm-major: difference rows first, then level rows.
    terms_all = [lag_name, *spec.regressors, *year_cols, "const"]
    reg_pos = {name: needed.index(name) for name in needed}
    x_rows: list[np.ndarray] = []
    y_rows: list[float] = []
    firm_rows: list[tuple[int, int, int, int]] = []
    diff_periods: list[np.ndarray] = []
    row_cursor = 0
    for firm in active_firms:
        cells = periods_by_firm[firm]
        d_rows = diff_rows_by_firm[firm]
        l_rows = level_rows_by_firm[firm]
        d_start = row_cursor
        for t in d_rows:
            dep_t, dep_1, dep_2 = cells[t][0], cells[t - 1][0], cells[t - 2][0]
            row = np.empty(len(terms_all))
            row[0] = dep_1 - dep_2
            for k, name in enumerate(spec.regressors, start=1):
                row[k] = cells[t][reg_pos[name]] - cells[t - 1][reg_pos[name]]
            for k, col in enumerate(year_cols, start=1 + len(spec.regressors)):
                row[k] = year_value(t, col) - year_value(t - 1, col)
            row[-1] = 0.0
            x_rows.append(row)
            y_rows.append(dep_t - dep_1)
        l_start = row_cursor + len(d_rows)
        for t in l_rows:
            row = np.empty(len(terms_all))
            row[0] = cells[t - 1][0]
            for k, name in enumerate(spec.regressors, start=1):
                row[k] = cells[t][reg_pos[name]]
            for k, col in enumerate(year_cols, start=1 + len(spec.regressors)):
                row[k] = year_value(t, col)
            row[-1] = 1.0
            x_rows.append(row)
            y_rows.append(cells[t][0])
        row_cursor += len(d_rows) + len(l_rows)
        firm_rows.append((d_start, l_start, l_start, row_cursor))
        diff_periods.append(np.array(d_rows, dtype=int))

    X_full = np.vstack(x_rows)
    y = np.array(y_rows)

    # Collinearity scan: keep the lag and constant first, then regressors in
    # declaration order, year dummies last so they are dropped first.
    const_idx = len(terms_all) - 1
    priority = [0, const_idx, *range(1, 1 + len(spec.regressors)),
                *range(1 + len(spec.regressors), const_idx)]
    kept = _greedy_keep(X_full, priority)
    dropped = tuple(terms_all[j] for j in range(len(terms_all)) if j not in kept)
    for name in dropped:
        warnings.append(f"dropped collinear design column: {name}")
    if 0 not in kept:
        raise EstimationError("lagged dependent variable is collinear; model is degenerate")
    terms = tuple(terms_all[j] for j in kept)
    X = X_full[:, kept]

    kept_regressors = [r for r in spec.regressors if r in terms]
    kept_years = [c for c in year_cols if c in terms]
    endo = [spec.dependent, *[r for r in kept_regressors if r in spec.endogenous]]
    exog = [r for r in kept_regressors if r not in spec.endogenous]
    has_constant = "const" in terms

    # Instrument columns.
    lo, hi = spec.instrument_lags
    diff_cells: list[tuple] = []
    level_cells: list[tuple] = []
    if spec.collapse:
        diff_cells = [(v, lag) for v in endo for lag in range(lo, hi + 1)]
        if spec.level_gmm:
            level_cells = [(v,) for v in endo]
    else:
        diff_period_union = sorted({int(t) for arr in diff_periods for t in arr})
        level_period_union = sorted({t for f in active_firms for t in level_rows_by_firm[f]})
        for v in endo:
            for t in diff_period_union:
                for lag in range(lo, hi + 1):
                    diff_cells.append((v, t, lag))
            if spec.level_gmm:
                for t in level_period_union:
                    level_cells.append((v, t))

    n_iv = len(exog) + len(kept_years)
    L = len(diff_cells) + len(level_cells) + n_iv + (1 if has_constant else 0)
    Z = np.zeros((X.shape[0], L))
    col_of_diff = {cell: j for j, cell in enumerate(diff_cells)}
    col_of_level = {cell: len(diff_cells) + j for j, cell in enumerate(level_cells)}
    iv_base = len(diff_cells) + len(level_cells)
    iv_names = [*exog, *kept_years]

    for f_idx, firm in enumerate(active_firms):
        cells = periods_by_firm[firm]
        d_start, d_stop, l_start, l_stop = firm_rows[f_idx]
        for r, t in zip(range(d_start, d_stop), diff_rows_by_firm[firm]):
            for v in endo:
                vi = reg_pos[v]
                for lag in range(lo, hi + 1):
                    rec = cells.get(t - lag)
                    if rec is None:
                        continue
                    key = (v, lag) if spec.collapse else (v, t, lag)
                    Z[r, col_of_diff[key]] = rec[vi]
            # shared IV columns: differenced exogenous regressors and dummies
            for j, name in enumerate(exog):
                Z[r, iv_base + j] = cells[t][reg_pos[name]] - cells[t - 1][reg_pos[name]]
            for j, col in enumerate(kept_years, start=len(exog)):
                Z[r, iv_base + j] = year_value(t, col) - year_value(t - 1, col)
        for r, t in zip(range(l_start, l_stop), level_rows_by_firm[firm]):
            if spec.level_gmm:
                for v in endo:
                    vi = reg_pos[v]
                    rec1, rec2 = cells.get(t - 1), cells.get(t - 2)
                    if rec1 is None or rec2 is None:
                        continue
                    key = (v,) if spec.collapse else (v, t)
                    Z[r, col_of_level[key]] = rec1[vi] - rec2[vi]
            for j, name in enumerate(exog):
                Z[r, iv_base + j] = cells[t][reg_pos[name]]
            for j, col in enumerate(kept_years, start=len(exog)):
                Z[r, iv_base + j] = year_value(t, col)
            if has_constant:
                Z[r, L - 1] = 1.0

    # Prune instrument columns that are identically zero (no realised cell),
    # so the instrument count reflects actual moment conditions.
    nonzero = np.flatnonzero(np.any(Z != 0.0, axis=0))
    pruned = L - nonzero.size
    n_diff = len(diff_cells)
    n_level = len(level_cells)
    diff_cells = [diff_cells[j] for j in nonzero if j < n_diff]
    level_cells = [level_cells[j - n_diff] for j in nonzero if n_diff <= j < n_diff + n_level]
    iv_kept = [iv_names[j - iv_base] for j in nonzero if iv_base <= j < iv_base + n_iv]
    const_kept = has_constant and bool(np.any(nonzero == L - 1))
    Z = Z[:, nonzero]

    plan = InstrumentPlan(
        diff_cells=tuple(diff_cells),
        level_cells=tuple(level_cells),
        iv_names=tuple(iv_kept),
        has_constant=const_kept,
        collapse=spec.collapse,
        pruned_zero_columns=pruned,
    )
    return SystemData(
        spec=spec,
        terms=terms,
        X=X,
        y=y,
        Z=Z,
        plan=plan,
        firm_ids=tuple(active_firms),
        firm_rows=tuple(firm_rows),
        diff_periods=tuple(diff_periods),
        dropped=dropped,
        warnings=tuple(warnings),
    )


def _step1_weighting(system: SystemData) -> np.ndarray:
    """S1 = sum_i Z_i' H_i Z_i with the band/identity block structure.

    The difference block has 2 on the diagonal and -1 between difference
    rows exactly one period apart (they share an innovation); the level
    block is the identity; cross blocks are zero.
    """
    Z = system.Z
    prev_idx: list[int] = []
    next_idx: list[int] = []
    diff_mask = np.zeros(Z.shape[0], dtype=bool)
    for (d_start, d_stop, _, _), periods in zip(system.firm_rows, system.diff_periods):
        diff_mask[d_start:d_stop] = True
        for k in range(len(periods) - 1):
            if periods[k + 1] - periods[k] == 1:
                prev_idx.append(d_start + k)
                next_idx.append(d_start + k + 1)
    Zd = Z[diff_mask]
    Zl = Z[~diff_mask]
    S1 = 2.0 * (Zd.T @ Zd) + Zl.T @ Zl
    if prev_idx:
        cross = Z[prev_idx].T @ Z[next_idx]
        S1 -= cross + cross.T
    return S1


def _firm_moments(system: SystemData, residuals: np.ndarray) -> np.ndarray:
    """Stack g_i = Z_i' u_i as rows: (n_firms, L)."""
    G = np.empty((len(system.firm_ids), system.Z.shape[1]))
    for i, (d_start, _, _, l_stop) in enumerate(system.firm_rows):
        sl = slice(d_start, l_stop)
        G[i] = system.Z[sl].T @ residuals[sl]
    return G


def _ar_test(system: SystemData, order: int, u2: np.ndarray, G2: np.ndarray,
             bridge: np.ndarray, vcov: np.ndarray) -> tuple[float | None, float | None]:
    """Serial-correlation test of the given order on differenced residuals.

    ``bridge`` maps stacked moments to coefficient space: A2 C' W2.
    Returns (statistic, p) or (None, None) when undefined.
    """
    n_rows = system.Z.shape[0]
    w = np.zeros(n_rows)
    pairs = 0
    for (d_start, d_stop, _, _), periods in zip(system.firm_rows, system.diff_periods):
        pos = {int(t): d_start + k for k, t in enumerate(periods)}
        for k, t in enumerate(periods):
            lagged = pos.get(int(t) - order)
            if lagged is not None:
                w[d_start + k] = u2[lagged]
                pairs += 1
    if pairs == 0:
        return None, None
    s = np.empty(len(system.firm_ids))
    for i, (d_start, _, _, l_stop) in enumerate(system.firm_rows):
        sl = slice(d_start, l_stop)
        s[i] = w[sl] @ u2[sl]
    num = float(s.sum())
    wX = w @ system.X
    term1 = float(s @ s)
    term2 = -2.0 * float(wX @ (bridge @ (G2.T @ s)))
    term3 = float(wX @ vcov @ wX)
    den = term1 + term2 + term3
    if den <= 0:
        return None, None
    stat = num / np.sqrt(den)
    return float(stat), float(2.0 * stats.norm.sf(abs(stat)))


def _degenerate_fit(system: SystemData, beta1: np.ndarray, cond1: float) -> GmmFit:
    """Finalize a perfect step-1 fit (all residual moments exactly zero)."""
    K = system.X.shape[1]
    L = system.Z.shape[1]
    terms = system.terms
    nan = float("nan")
    hansen_df = L - K
    return GmmFit(
        spec=system.spec,
        terms=terms,
        coef={t: float(b) for t, b in zip(terms, beta1)},
        se={t: 0.0 for t in terms},
        z={t: nan for t in terms},
        p={t: nan for t in terms},
        stars={t: "" for t in terms},
        vcov=np.zeros((K, K)),
        step1_coef={t: float(b) for t, b in zip(terms, beta1)},
        n_obs=system.n_level_rows,
        n_diff_obs=system.n_diff_rows,
        n_firms=len(system.firm_ids),
        n_instruments=L,
        hansen_j=0.0,
        hansen_df=hansen_df,
        hansen_p=1.0 if hansen_df > 0 else None,
        ar1_stat=None,
        ar1_p=None,
        ar2_stat=None,
        ar2_p=None,
        cond_step1=cond1,
        cond_step2=float("inf"),
        dropped=system.dropped,
        warnings=(*system.warnings, "step-1 residual moments are identically zero; two-step equals one-step"),
        plan=system.plan,
    )


def fit_twostep(panel: pd.DataFrame, spec: ModelSpec,
                firm_col: str = "firm_id", month_col: str = "month") -> GmmFit:
    """Two-step system GMM with Windmeijer-corrected standard errors."""
    system = build_instruments(panel, spec, firm_col, month_col)
    X, y, Z = system.X, system.y, system.Z
    K = X.shape[1]
    L = Z.shape[1]
    if K > L:
        raise EstimationError(f"{K} parameters but only {L} instruments")

    C = Z.T @ X
    if not np.any(C):
        raise EstimationError("instruments are orthogonal to every regressor; model is not identified")
    b_vec = Z.T @ y

    S1 = _step1_weighting(system)
    W1, cond1, _ = _pinv_with_cond(S1)
    CW1C = C.T @ W1 @ C
    A1, _, rank1 = _solve_design(CW1C)
    if rank1 < K:
        raise EstimationError("step-1 weighted design is rank deficient; instruments do not identify the parameters")
    beta1 = A1 @ (C.T @ (W1 @ b_vec))
    u1 = y - X @ beta1

    G1 = _firm_moments(system, u1)
    S2 = G1.T @ G1

    if not np.any(S2):
        # Step 1 already fits every moment exactly (noise-free data), so the
        # second step has nothing to reweight: report the one-step solution
        # with zero sampling variance.
        return _degenerate_fit(system, beta1, cond1)

    W2, cond2, _ = _pinv_with_cond(S2)
    CW2C = C.T @ W2 @ C
    A2, _, rank2 = _solve_design(CW2C)
    if rank2 < K:
        raise EstimationError("step-2 weighted design is rank deficient; instruments do not identify the parameters")
    beta2 = A2 @ (C.T @ (W2 @ b_vec))
    u2 = y - X @ beta2
    G2 = _firm_moments(system, u2)
    m2 = G2.sum(axis=0)

    # Windmeijer correction. With w = W2 m2 and step-1 moments g1_i,
    # column j of the derivative term is sum_i [zx_ij (g1_i'w) + g1_i (zx_ij'w)].
    ZX = np.empty((len(system.firm_ids), L, K))
    for i, (d_start, _, _, l_stop) in enumerate(system.firm_rows):
        sl = slice(d_start, l_stop)
        ZX[i] = Z[sl].T @ X[sl]
    w_vec = W2 @ m2
    p_i = G1 @ w_vec
    q_ik = np.einsum("nlk,l->nk", ZX, w_vec)
    Gw = np.einsum("nlk,n->lk", ZX, p_i) + G1.T @ q_ik
    D = A2 @ (C.T @ (W2 @ Gw))
    V1r = A1 @ (C.T @ W1 @ S2 @ W1 @ C) @ A1
    vcov = A2 + D @ A2 + A2 @ D.T + D @ V1r @ D.T
    vcov = (vcov + vcov.T) / 2.0

    hansen_j = float(m2 @ W2 @ m2)
    hansen_df = L - K
    hansen_p = float(stats.chi2.sf(hansen_j, hansen_df)) if hansen_df > 0 else None

    bridge = A2 @ (C.T @ W2)
    ar1_stat, ar1_p = _ar_test(system, 1, u2, G2, bridge, vcov)
    ar2_stat, ar2_p = _ar_test(system, 2, u2, G2, bridge, vcov)

    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    zvals = np.divide(beta2, se, out=np.full(K, np.nan), where=se > 0)
    pvals = 2.0 * stats.norm.sf(np.abs(zvals))

    terms = system.terms
    return GmmFit(
        spec=spec,
        terms=terms,
        coef={t: float(b) for t, b in zip(terms, beta2)},
        se={t: float(v) for t, v in zip(terms, se)},
        z={t: float(v) for t, v in zip(terms, zvals)},
        p={t: float(v) for t, v in zip(terms, pvals)},
        stars={t: significance_stars(float(v)) for t, v in zip(terms, pvals)},
        vcov=vcov,
        step1_coef={t: float(b) for t, b in zip(terms, beta1)},
        n_obs=system.n_level_rows,
        n_diff_obs=system.n_diff_rows,
        n_firms=len(system.firm_ids),
        n_instruments=L,
        hansen_j=hansen_j,
        hansen_df=hansen_df,
        hansen_p=hansen_p,
        ar1_stat=ar1_stat,
        ar1_p=ar1_p,
        ar2_stat=ar2_stat,
        ar2_p=ar2_p,
        cond_step1=cond1,
        cond_step2=cond2,
        dropped=system.dropped,
        warnings=system.warnings,
        plan=system.plan,
    )


def marginal_effect(fit: GmmFit | Mapping[str, float], at: float,
                    policy_term: str = "shhk_policy",
                    interaction_term: str = "shhk_x_effboth",
                    vcov: np.ndarray | None = None) -> MarginalEffect:
    """Policy effect b_policy + b_interaction * at, with a delta-method SE.

    Accepts a fitted model or a bare coefficient mapping; without a fit (or
    an explicit vcov aligned to the fit's terms) the SE is None.
    """
    if isinstance(fit, GmmFit):
        coef = fit.coef
        if vcov is None:
            vcov = fit.vcov
        i = fit.param_index(policy_term)
        j = fit.param_index(interaction_term)
    else:
        coef = dict(fit)
        i = j = None
    for term in (policy_term, interaction_term):
        if term not in coef:
            raise KeyError(f"term {term!r} not in coefficients")
    effect = coef[policy_term] + coef[interaction_term] * at
    if vcov is None or i is None:
        return MarginalEffect(float(effect), None, None, None)
    var = vcov[i, i] + at * at * vcov[j, j] + 2.0 * at * vcov[i, j]
    if var <= 0:
        return MarginalEffect(float(effect), None, None, None)
    se = float(np.sqrt(var))
    z = float(effect / se)
    return MarginalEffect(float(effect), se, z, float(2.0 * stats.norm.sf(abs(z))))
