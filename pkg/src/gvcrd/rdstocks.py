"""R&D expenditure deflation, perpetual-inventory stocks, and intensities.

Stocks follow S_t = (1 - delta) * S_{t-1} + R_t with the initial level
S_0 = R_0 / (delta + g), where g is the average log growth rate of real
expenditure over the full period the series is available. Intensity is
the stock per unit of gross output, with non-manufacturing industries
forced to zero (their reported R&D is too noisy to use).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ValidationError
from .iotable import IOTable, NodeIndex

logger = logging.getLogger(__name__)

RD_COLUMNS = ["country", "industry", "year", "expenditure_nominal"]
DEFLATOR_COLUMNS = ["country", "industry", "year", "index_base1995"]
STOCK_COLUMNS = ["country", "industry", "year", "stock_real", "delta", "g"]

DEFAULT_DELTA = 0.15


@dataclass
class IntensityVector:
    """Per-node R&D stock per unit of gross output for one year."""

    year: int
    index: NodeIndex
    D: np.ndarray


def deflate_expenditure(rd: pd.DataFrame, deflators: pd.DataFrame) -> pd.DataFrame:
    """Convert nominal expenditure to constant prices.

    Industry-level value-added deflators are preferred; rows with a
    blank industry in the deflator table act as the country's GDP
    deflator fallback.
    """
    for col in RD_COLUMNS:
        if col not in rd.columns:
            raise ValidationError(f"R&D input missing column {col!r}")
    if (rd["expenditure_nominal"] < 0).any():
        bad = rd[rd["expenditure_nominal"] < 0].iloc[0]
        raise ValidationError(
            f"negative R&D expenditure for {bad['country']}/{bad['industry']}/{bad['year']}"
        )
    defl = deflators.copy()
    defl["industry"] = defl["industry"].fillna("").astype(str)
    if (defl["index_base1995"] <= 0).any():
        raise ValidationError("deflator indices must be positive")
    industry_level = defl[defl["industry"] != ""]
    gdp_level = defl[defl["industry"] == ""][["country", "year", "index_base1995"]]

    out = rd.merge(
        industry_level, on=["country", "industry", "year"], how="left", validate="many_to_one"
    ).rename(columns={"index_base1995": "_ind_defl"})
    out = out.merge(gdp_level, on=["country", "year"], how="left", validate="many_to_one")
    out = out.rename(columns={"index_base1995": "_gdp_defl"})
    chosen = out["_ind_defl"].fillna(out["_gdp_defl"])
    if chosen.isna().any():
        bad = out[chosen.isna()].iloc[0]
        raise ValidationError(
            f"no deflator for {bad['country']}/{bad['industry']}/{bad['year']}"
        )
    out["expenditure_real"] = out["expenditure_nominal"] / chosen
    return out.drop(columns=["_ind_defl", "_gdp_defl"])


def _interpolate_gaps(years, values, label, notes):
    """Fill missing interior years by log-linear interpolation."""
    full_years = np.arange(years[0], years[-1] + 1)
    if len(full_years) == len(years):
        return years, values
    series = pd.Series(values, index=years).reindex(full_years)
    missing = series.isna()
    if (values <= 0)[np.isin(years, full_years[~missing.to_numpy()])].any() and missing.any():
        # log interpolation needs positive anchor points
        if values.min() <= 0:
            raise ValidationError(
                f"cannot log-interpolate gaps in series {label}: nonpositive anchors"
            )
    logged = np.log(series.to_numpy(dtype=float))
    filled = pd.Series(logged, index=full_years).interpolate(method="index")
    out = np.where(missing.to_numpy(), np.exp(filled.to_numpy()), series.to_numpy())
    for y in full_years[missing.to_numpy()]:
        notes.append((*label, int(y), "interpolated"))
    return full_years, out


def perpetual_inventory(rd: pd.DataFrame, delta: float = DEFAULT_DELTA):
    """Build stock series per (country, industry).

    Returns (stocks, notes): the stock panel in STOCK_COLUMNS layout and
    a DataFrame of per-observation notes (interpolations, warnings).
    Expenditure must be in real terms (column ``expenditure_real``).
    """
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    if "expenditure_real" not in rd.columns:
        raise ValidationError("perpetual inventory needs real expenditure; deflate first")
    records = []
    notes = []
    for (country, industry), chunk in rd.groupby(["country", "industry"], sort=True):
        chunk = chunk.sort_values("year")
        years = chunk["year"].to_numpy(dtype=int)
        values = chunk["expenditure_real"].to_numpy(dtype=float)
        if len(years) != len(set(years)):
            raise ValidationError(f"duplicate years in R&D series {country}/{industry}")
        label = (country, industry)
        if len(years) < 2:
            raise ValidationError(
                f"R&D series {country}/{industry} needs at least 2 years to compute growth"
            )
        if np.all(values == 0.0):
            logger.warning("all-zero R&D series %s/%s; stock is zero", country, industry)
            notes.append((country, industry, int(years[0]), "all-zero series"))
            for y in years:
                records.append((country, industry, int(y), 0.0, delta, 0.0))
            continue
        years, values = _interpolate_gaps(years, values, label, notes)
        positive = values > 0
        pair = positive[:-1] & positive[1:]
        if pair.any():
            diffs = np.diff(np.log(values, out=np.zeros_like(values), where=positive))
            g = float(np.mean(diffs[pair]))
        else:
            g = 0.0
            notes.append((country, industry, int(years[0]), "no positive growth pairs; g=0"))
        if delta + g <= 0:
            raise ValidationError(
                f"growth rate {g:.4f} <= -delta for series {country}/{industry}; "
                "initial stock undefined"
            )
        stock = values[0] / (delta + g)
        records.append((country, industry, int(years[0]), stock, delta, g))
        for y, r in zip(years[1:], values[1:]):
            stock = (1.0 - delta) * stock + r
            records.append((country, industry, int(y), stock, delta, g))
    stocks = pd.DataFrame(records, columns=STOCK_COLUMNS)
    notes = pd.DataFrame(notes, columns=["country", "industry", "year", "note"])
    return stocks, notes


def intensity(
    stocks: pd.DataFrame, table: IOTable, manufacturing=None
) -> IntensityVector:
    """Stock per unit of gross output for the table's year.

    Nodes without a stock record get zero; zero-output nodes get zero;
    industries outside ``manufacturing`` are forced to zero even if a
    stock was supplied (with a warning).
    """
    if (stocks["stock_real"] < 0).any():
        bad = stocks[stocks["stock_real"] < 0].iloc[0]
        raise ValidationError(
            f"negative stock for {bad['country']}/{bad['industry']}/{bad['year']}"
        )
    index = table.index
    manufacturing = set(index.industries) if manufacturing is None else set(manufacturing)
    year_stocks = stocks[stocks["year"] == table.year]
    s = np.zeros(index.size)
    for row in year_stocks.itertuples(index=False):
        if row.country not in index._country_pos or row.industry not in index._industry_pos:
            continue
        n = index.position(row.country, row.industry)
        if row.industry not in manufacturing:
            if row.stock_real > 0:
                logger.warning(
                    "non-manufacturing R&D stock for %s/%s set to zero", row.country, row.industry
                )
            continue
        s[n] = row.stock_real
    q = table.gross_output
    D = np.divide(s, q, out=np.zeros_like(s), where=q > 0)
    return IntensityVector(year=table.year, index=index, D=D)
