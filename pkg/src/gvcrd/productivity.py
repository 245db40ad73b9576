"""Industry-level multilateral TFP with smoothed cost-based labor shares.

The index measures each country's log deviation from the cross-country
mean of value added, net of share-weighted deviations of labor and
capital, within every (industry, year) cell:

    ln TFP_i = (ln Y_i - m_Y) - w_i (ln L_i - m_L) - (1 - w_i)(ln K_i - m_K),
    w_i = (sigma_i + mean_i sigma) / 2.

Raw cost shares (labor compensation over nominal value added) can
exceed one when capital compensation is negative, so the shares fed to
the index are fitted values from a smoothing regression on country,
industry, and year effects plus industry-specific slopes in
log(capital per worker), following Harrigan (1997).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import SpecificationError, ValidationError

logger = logging.getLogger(__name__)

SEA_COLUMNS = [
    "country", "industry", "year",
    "va_nominal", "va_real", "employment", "capital_real", "labor_comp",
]
TFP_COLUMNS = ["country", "industry", "year", "ln_tfp", "sigma_fitted"]

SHARE_CLAMP = (0.01, 0.99)


def validate_sea(sea: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in SEA_COLUMNS if c not in sea.columns]
    if missing:
        raise ValidationError(f"SEA panel missing columns {missing}")
    dup = sea.duplicated(subset=["country", "industry", "year"])
    if dup.any():
        bad = sea[dup].iloc[0]
        raise ValidationError(
            f"duplicate SEA record for {bad['country']}/{bad['industry']}/{bad['year']}"
        )
    return sea


@dataclass
class LaborShareModel:
    """Fitted smoothing regression and its per-observation predictions."""

    coefficients: pd.Series
    fitted: pd.DataFrame  # country, industry, year, sigma_raw, sigma_fitted
    clamped: pd.DataFrame
    rank: int
    n_params: int

    def lookup(self) -> dict:
        return {
            (r.country, r.industry, int(r.year)): r.sigma_fitted
            for r in self.fitted.itertuples(index=False)
        }


def _design(panel: pd.DataFrame):
    """Intercept + dummies (first level dropped) + per-industry ln(K/L) slopes."""
    countries = sorted(panel["country"].unique())
    industries = sorted(panel["industry"].unique())
    years = sorted(panel["year"].unique())
    lnkl = np.log(panel["capital_real"].to_numpy() / panel["employment"].to_numpy())
    columns = {"intercept": np.ones(len(panel))}
    for c in countries[1:]:
        columns[f"country[{c}]"] = (panel["country"] == c).to_numpy(float)
    for g in industries[1:]:
        columns[f"industry[{g}]"] = (panel["industry"] == g).to_numpy(float)
    for y in years[1:]:
        columns[f"year[{y}]"] = (panel["year"] == y).to_numpy(float)
    for g in industries:
        columns[f"ln_kl[{g}]"] = lnkl * (panel["industry"] == g).to_numpy(float)
    names = list(columns)
    X = np.column_stack([columns[n] for n in names])
    return X, names


def smooth_labor_shares(sea: pd.DataFrame) -> LaborShareModel:
    """Fit the share-smoothing regression and predict a share for every usable row."""
    sea = validate_sea(sea)
    usable = (
        (sea["va_nominal"] > 0) & (sea["employment"] > 0) & (sea["capital_real"] > 0)
    )
    if not usable.any():
        raise ValidationError("no usable observations for the share regression")
    dropped = int((~usable).sum())
    if dropped:
        logger.info("share regression: %d rows unusable (nonpositive VA, L, or K)", dropped)
    panel = sea[usable].copy()
    if panel["country"].nunique() < 2 or panel["year"].nunique() < 2:
        logger.warning("share regression has a degenerate dummy structure; fit is least-norm")
    panel["sigma_raw"] = panel["labor_comp"] / panel["va_nominal"]

    X, names = _design(panel)
    y = panel["sigma_raw"].to_numpy(dtype=float)
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < len(names):
        logger.warning(
            "collinear share-regression design (rank %d of %d); predictions remain exact "
            "projections", rank, len(names),
        )
    predicted = X @ beta

    lo, hi = SHARE_CLAMP
    clamped_mask = (predicted <= lo) | (predicted >= hi)
    fitted = panel[["country", "industry", "year"]].copy()
    fitted["sigma_raw"] = y
    fitted["sigma_fitted"] = np.clip(predicted, lo, hi)
    clamped = fitted[clamped_mask].copy()
    if len(clamped):
        logger.warning("%d fitted shares clamped into (%.2f, %.2f)", len(clamped), lo, hi)
    return LaborShareModel(
        coefficients=pd.Series(beta, index=names),
        fitted=fitted.reset_index(drop=True),
        clamped=clamped.reset_index(drop=True),
        rank=int(rank),
        n_params=len(names),
    )


def caves_tfp(sea: pd.DataFrame, shares: LaborShareModel):
    """Multilateral TFP per (country, industry, year).

    Cross-country means are taken within each (industry, year) cell over
    the countries actually present there; observations with nonpositive
    Y, L, or K are excluded with a reason code, and cells with fewer
    than two remaining countries are dropped.

    Returns (tfp, drops).
    """
    sea = validate_sea(sea)
    share_map = shares.lookup()
    drops = []
    rows = []
    for (industry, year), cell in sea.groupby(["industry", "year"], sort=True):
        valid = []
        for r in cell.itertuples(index=False):
            key = (r.country, industry, int(year))
            if r.va_real <= 0 or r.employment <= 0 or r.capital_real <= 0:
                drops.append((*key, "nonpositive Y, L, or K"))
                continue
            if key not in share_map:
                drops.append((*key, "no fitted labor share"))
                continue
            valid.append((r.country, r.va_real, r.employment, r.capital_real, share_map[key]))
        if len(valid) < 2:
            for v in valid:
                drops.append((v[0], industry, int(year), "cell has fewer than 2 countries"))
            continue
        countries = [v[0] for v in valid]
        ln_y = np.log([v[1] for v in valid])
        ln_l = np.log([v[2] for v in valid])
        ln_k = np.log([v[3] for v in valid])
        sigma = np.array([v[4] for v in valid])
        w = 0.5 * (sigma + sigma.mean())
        ln_tfp = (
            (ln_y - ln_y.mean())
            - w * (ln_l - ln_l.mean())
            - (1.0 - w) * (ln_k - ln_k.mean())
        )
        for c, v, s in zip(countries, ln_tfp, sigma):
            rows.append((c, industry, int(year), float(v), float(s)))
    if not rows:
        raise SpecificationError("no (industry, year) cell has two or more usable countries")
    tfp = pd.DataFrame(rows, columns=TFP_COLUMNS)
    tfp = tfp.sort_values(["country", "industry", "year"]).reset_index(drop=True)
    drops = pd.DataFrame(drops, columns=["country", "industry", "year", "reason"])
    return tfp, drops


def tfp_summary(tfp: pd.DataFrame) -> pd.DataFrame:
    """Per-industry Obs/Min/Max/Mean/Std of ln TFP (summary-table layout)."""
    rows = []
    for industry, chunk in tfp.groupby("industry", sort=True):
        v = chunk["ln_tfp"].to_numpy()
        rows.append(
            {
                "industry": industry,
                "obs": len(v),
                "min": v.min(),
                "max": v.max(),
                "mean": v.mean(),
                "std": v.std(ddof=1) if len(v) > 1 else 0.0,
            }
        )
    return pd.DataFrame(rows)
