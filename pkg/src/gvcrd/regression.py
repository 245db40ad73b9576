"""Two-way fixed-effects regressions with industry-clustered errors.

Estimation demeans the outcome and regressors over unit
(country-industry) and time groups until both sets of group means
vanish, which reproduces dummy-variable least squares exactly, then
solves the slope coefficients by orthogonal decomposition. Covariance
is the cluster-robust sandwich

    (X'X)^{-1} (sum_c X_c' u_c u_c' X_c) (X'X)^{-1},

optionally scaled by the small-sample factor G/(G-1) * (N-1)/(N-K);
with a cluster count around a dozen the factor is material, so the
corrected covariance is reported and the raw one kept alongside.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.stats

from .errors import SpecificationError, ValidationError

logger = logging.getLogger(__name__)

DEMEAN_TOL = 1e-11
DEMEAN_MAX_SWEEPS = 500


def _group_codes(df: pd.DataFrame, cols) -> np.ndarray:
    if isinstance(cols, str):
        cols = [cols]
    key = df[cols[0]].astype(str)
    for c in cols[1:]:
        key = key + "\x1f" + df[c].astype(str)
    return pd.factorize(key, sort=True)[0]


def _demean(values: np.ndarray, unit: np.ndarray, time: np.ndarray):
    """Alternating-projection two-way demeaning; exact for balanced panels
    in one sweep, iterated to DEMEAN_TOL otherwise."""
    v = values.astype(float, copy=True)
    n_unit = unit.max() + 1
    n_time = time.max() + 1
    unit_counts = np.bincount(unit, minlength=n_unit).astype(float)
    time_counts = np.bincount(time, minlength=n_time).astype(float)
    scale = max(float(np.max(np.abs(v), initial=0.0)), 1.0)
    for _ in range(DEMEAN_MAX_SWEEPS):
        if v.ndim == 1:
            v -= (np.bincount(unit, weights=v, minlength=n_unit) / unit_counts)[unit]
            tm = np.bincount(time, weights=v, minlength=n_time) / time_counts
            v -= tm[time]
            worst = np.max(np.abs(np.bincount(unit, weights=v, minlength=n_unit) / unit_counts))
        else:
            for j in range(v.shape[1]):
                v[:, j] -= (
                    np.bincount(unit, weights=v[:, j], minlength=n_unit) / unit_counts
                )[unit]
            for j in range(v.shape[1]):
                v[:, j] -= (
                    np.bincount(time, weights=v[:, j], minlength=n_time) / time_counts
                )[time]
            worst = max(
                np.max(np.abs(np.bincount(unit, weights=v[:, j], minlength=n_unit) / unit_counts))
                for j in range(v.shape[1])
            )
        if worst < DEMEAN_TOL * scale:
            return v
    raise SpecificationError(
        f"two-way demeaning did not converge (residual group mean {worst:.3e})"
    )


def within_transform(df: pd.DataFrame, columns, unit_cols=("country", "industry"),
                     time_col: str = "year"):
    """Demean the named columns over unit and time groups.

    Returns (demeaned ndarray, unit codes, time codes). Groups of size
    one are legal; they simply contribute no within variation.
    """
    unit = _group_codes(df, list(unit_cols))
    time = _group_codes(df, time_col)
    values = df[list(columns)].to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValidationError("within transform requires finite values; drop missing rows first")
    return _demean(values, unit, time), unit, time


def _collinear_columns(X: np.ndarray, names) -> list:
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max(initial=0.0) * max(X.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    return [names[j] for j in sorted(piv[rank:])]


@dataclass
class FitResult:
    """One estimated specification."""

    spec: dict
    params: pd.Series
    se: pd.Series
    tstats: pd.Series
    pvalues: pd.Series
    cov: pd.DataFrame
    cov_uncorrected: pd.DataFrame
    se_classical: pd.Series
    r2: float
    r2_within: float
    nobs: int
    n_clusters: int
    n_units: int
    n_times: int
    dropped: dict = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        """Machine-readable layout: term,estimate,se,t,p,stars."""
        return pd.DataFrame(
            {
                "term": self.params.index,
                "estimate": self.params.to_numpy(),
                "se": self.se.to_numpy(),
                "t": self.tstats.to_numpy(),
                "p": self.pvalues.to_numpy(),
                "stars": [stars(p) for p in self.pvalues],
            }
        )


def stars(p: float) -> str:
    return "***" if p < 0.01 else ("**" if p < 0.05 else ("*" if p < 0.1 else ""))


def cluster_robust_cov(
    X: np.ndarray, residuals: np.ndarray, clusters: np.ndarray, small_sample: bool = True
) -> np.ndarray:
    """Sandwich covariance with arbitrary within-cluster correlation."""
    n, k = X.shape
    codes, uniques = pd.factorize(clusters, sort=True)
    g = len(uniques)
    if g < 2:
        raise SpecificationError("clustered covariance requires at least 2 clusters")
    xtx_inv = np.linalg.inv(X.T @ X)
    # scores per cluster: S[c] = X_c' u_c, accumulated without per-cluster slicing
    scores = np.zeros((g, k))
    np.add.at(scores, codes, X * residuals[:, np.newaxis])
    meat = scores.T @ scores
    cov = xtx_inv @ meat @ xtx_inv
    if small_sample:
        if n - k <= 0:
            raise SpecificationError("no residual degrees of freedom for the cluster correction")
        cov = cov * (g / (g - 1.0)) * ((n - 1.0) / (n - k))
    return (cov + cov.T) / 2.0


def fit_fixed_effects(
    df: pd.DataFrame,
    y_col: str,
    x_cols,
    unit_cols=("country", "industry"),
    time_col: str = "year",
    cluster_col: str = "industry",
    spec: dict | None = None,
) -> FitResult:
    """Two-way FE regression of y on the named regressors.

    Rows with missing outcome or regressors are dropped listwise (count
    recorded per column). R^2 is computed against the raw outcome, so
    it includes the explanatory power of the absorbed effects; the
    within-R^2 is reported alongside.
    """
    x_cols = list(x_cols)
    needed = [y_col] + x_cols
    usable = df[needed].notna().all(axis=1)
    dropped = {
        col: int(df[col].isna().sum()) for col in needed if df[col].isna().any()
    }
    data = df[usable]
    n = len(data)
    if n == 0:
        raise SpecificationError("no usable observations after listwise deletion")

    demeaned, unit, time = within_transform(data, needed, unit_cols, time_col)
    y_t = demeaned[:, 0]
    X_t = demeaned[:, 1:]

    n_units = int(unit.max()) + 1
    n_times = int(time.max()) + 1
    if n - n_units - (n_times - 1) < len(x_cols):
        raise SpecificationError(
            f"insufficient degrees of freedom: {n} rows, {n_units} units, {n_times} periods, "
            f"{len(x_cols)} regressors"
        )

    beta, _, rank, _ = np.linalg.lstsq(X_t, y_t, rcond=None)
    if rank < len(x_cols):
        bad = _collinear_columns(X_t, x_cols)
        raise SpecificationError(f"collinear regressors after demeaning: {bad}")

    residuals = y_t - X_t @ beta
    ssr = float(residuals @ residuals)
    y_raw = data[y_col].to_numpy(dtype=float)
    sst = float(np.sum((y_raw - y_raw.mean()) ** 2))
    sst_within = float(y_t @ y_t)
    r2 = 1.0 - ssr / sst if sst > 0 else np.nan
    r2_within = 1.0 - ssr / sst_within if sst_within > 0 else np.nan

    clusters = data[cluster_col].to_numpy()
    g = len(pd.unique(clusters))
    cov = cluster_robust_cov(X_t, residuals, clusters, small_sample=True)
    cov_raw = cluster_robust_cov(X_t, residuals, clusters, small_sample=False)
    sigma2 = ssr / max(n - len(x_cols), 1)
    se_classical = np.sqrt(np.diag(sigma2 * np.linalg.inv(X_t.T @ X_t)))

    se = np.sqrt(np.diag(cov))
    tstats = np.divide(beta, se, out=np.full_like(beta, np.nan), where=se > 0)
    pvalues = 2.0 * scipy.stats.t.sf(np.abs(tstats), df=max(g - 1, 1))

    idx = pd.Index(x_cols, name="term")
    return FitResult(
        spec=dict(spec or {}),
        params=pd.Series(beta, index=idx),
        se=pd.Series(se, index=idx),
        tstats=pd.Series(tstats, index=idx),
        pvalues=pd.Series(pvalues, index=idx),
        cov=pd.DataFrame(cov, index=idx, columns=idx),
        cov_uncorrected=pd.DataFrame(cov_raw, index=idx, columns=idx),
        se_classical=pd.Series(se_classical, index=idx),
        r2=r2,
        r2_within=r2_within,
        nobs=n,
        n_clusters=g,
        n_units=n_units,
        n_times=n_times,
        dropped=dropped,
    )


def add_interactions(df: pd.DataFrame, x_cols, breakpoint_year: int,
                     time_col: str = "year") -> pd.DataFrame:
    """Append regressor x 1{year >= breakpoint} columns (one per regressor)."""
    years = df[time_col].to_numpy()
    if years.min() >= breakpoint_year or years.max() < breakpoint_year:
        raise ValidationError(
            f"interaction breakpoint {breakpoint_year} must split the sample years"
        )
    out = df.copy()
    dummy = (out[time_col] >= breakpoint_year).astype(float)
    for col in x_cols:
        out[f"{col}_x_post{breakpoint_year}"] = out[col] * dummy
    return out


def lag_regressors(df: pd.DataFrame, x_cols, lag: int = 1,
                   unit_cols=("country", "industry"), time_col: str = "year") -> pd.DataFrame:
    """Replace the named regressors with their value ``lag`` years earlier.

    A row survives only if the same unit has a row exactly ``lag`` years
    before; first years (and rows after a gap) drop out.
    """
    if lag < 0:
        raise ValidationError("lag must be nonnegative")
    if lag == 0:
        return df.copy()
    unit_cols = list(unit_cols)
    donor = df[unit_cols + [time_col] + list(x_cols)].copy()
    donor[time_col] = donor[time_col] + lag
    out = df.drop(columns=list(x_cols)).merge(
        donor, on=unit_cols + [time_col], how="inner", validate="one_to_one"
    )
    return out.sort_values(unit_cols + [time_col]).reset_index(drop=True)


def format_text_table(fits, title: str, term_order=None) -> str:
    """Paper-style text table: coefficient rows with SEs beneath, then N/R2/FE."""
    fits = list(fits)
    if term_order is None:
        term_order = []
        for fit in fits:
            for term in fit.params.index:
                if term not in term_order:
                    term_order.append(term)
    headers = [fit.spec.get("column", f"({i + 1})") for i, fit in enumerate(fits)]
    width = max(24, max((len(t) for t in term_order), default=0) + 2)
    colw = max(16, max(len(h) for h in headers) + 2)

    lines = [title, "=" * (width + colw * len(fits))]
    lines.append(" " * width + "".join(h.rjust(colw) for h in headers))
    lines.append("-" * (width + colw * len(fits)))
    for term in term_order:
        coef_cells, se_cells = [], []
        for fit in fits:
            if term in fit.params.index:
                coef_cells.append(f"{fit.params[term]:.3f}{stars(fit.pvalues[term])}")
                se_cells.append(f"({fit.se[term]:.3f})")
            else:
                coef_cells.append("")
                se_cells.append("")
        lines.append(term.ljust(width) + "".join(c.rjust(colw) for c in coef_cells))
        lines.append(" " * width + "".join(c.rjust(colw) for c in se_cells))
    lines.append("-" * (width + colw * len(fits)))
    lines.append("N".ljust(width) + "".join(str(f.nobs).rjust(colw) for f in fits))
    lines.append("R2".ljust(width) + "".join(f"{f.r2:.3f}".rjust(colw) for f in fits))
    lines.append(
        "R2 (within)".ljust(width) + "".join(f"{f.r2_within:.3f}".rjust(colw) for f in fits)
    )
    lines.append("Country-Industry FE".ljust(width) + "".join("Yes".rjust(colw) for _ in fits))
    lines.append("Year FE".ljust(width) + "".join("Yes".rjust(colw) for _ in fits))
    lines.append("Clusters (industry)".ljust(width)
                 + "".join(str(f.n_clusters).rjust(colw) for f in fits))
    return "\n".join(lines) + "\n"
