"""Synthetic economies with known ground truth, plus independent oracles.

The generator builds a hub-and-spoke world economy (a few large
countries supply a disproportionate share of everyone's inputs), R&D
series, and a socio-economic panel whose productivity index reproduces
a planted linear model in the content regressors exactly:

    ln TFP = a_ih + a_t + b_dom ln(domestic) + b_high ln(High)
             + b_mid ln(Middle) + b_low ln(Low) + noise,

where the class regressors sum over both industry groups. The
regressors are computed with the package's own machinery, so a pipeline
run over the emitted files reproduces them bit for bit, and the noise
is the only slack between the planted and estimated coefficients.

Planting through the productivity index needs care: the index enforces
a share-weighted zero-sum across countries within each (industry, year)
cell, so arbitrary target values are unreachable with symmetric
inputs. Labor shares are fixed per country and the employment vector of
each cell is solved along the share direction so the weighted sum
constraint lands exactly on the planted values; capital is constant.

Oracles here are deliberately naive re-implementations (power series,
explicit summation loops) used by tests to cross-check the solver
paths; they must stay free of factorization shortcuts.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from . import centrality as ct
from . import content as cn
from . import rdstocks as rs
from .errors import ValidationError
from .iotable import IOTable, MaskSpec, NodeIndex, apply_mask, build_coefficients, \
    aggregate_final_demand, write_io_table, _fmt
from .samples import MANUFACTURING_INDUSTRIES, PAPER_COUNTRIES, ROW_CODE, importer_sets

logger = logging.getLogger(__name__)

PLANTED_REGRESSORS = ["ln_domestic", "ln_high", "ln_middle", "ln_low"]


@dataclass
class SynthConfig:
    """Everything the generator needs; the seed fully determines the output."""

    countries: int = 21
    industries: int = 14
    start_year: int = 1995
    end_year: int = 2007
    hub_count: int = 2
    hub_strength: float = 8.0
    size_noise: float = 0.35
    direction_noise: float = 0.2
    industry_spread: float = 0.5
    intermediate_share: float = 0.45
    home_bias: float = 3.0
    sourcing_noise: float = 0.3
    output_noise: float = 0.05
    output_growth: float = 0.03
    suppliers_per_buyer: int | None = None
    rd_intensity_low: float = 0.05
    rd_intensity_high: float = 0.3
    rd_growth: float = 0.05
    delta: float = 0.15
    lam: float = 0.5
    betas: dict = field(
        default_factory=lambda: {
            "ln_domestic": 0.0, "ln_high": 0.040, "ln_middle": 0.034, "ln_low": 0.015,
        }
    )
    noise_sigma: float = 0.01
    fe_unit_sigma: float = 0.05
    fe_year_sigma: float = 0.02
    labor_share_low: float = 0.45
    labor_share_high: float = 0.75
    inflation_low: float = 0.0
    inflation_high: float = 0.04
    gdp_only_countries: int = 2
    include_row: bool = False
    row_scale: float = 5.0
    max_spectral_radius: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.end_year < self.start_year:
            raise ValidationError("end_year must not precede start_year")
        if not 0.0 < self.intermediate_share < self.max_spectral_radius:
            raise ValidationError(
                f"intermediate share {self.intermediate_share} violates the spectral-radius "
                f"bound {self.max_spectral_radius} (economy would not be productive)"
            )
        if self.countries < 3:
            raise ValidationError("need at least 3 countries to classify tertiles")
        if self.industries < 2:
            raise ValidationError("need at least 2 industries to split groups")
        if set(self.betas) != set(PLANTED_REGRESSORS):
            raise ValidationError(f"betas must be keyed by {PLANTED_REGRESSORS}")
        if self.labor_share_high <= self.labor_share_low:
            raise ValidationError("labor share range must be nondegenerate")

    @property
    def years(self):
        return list(range(self.start_year, self.end_year + 1))

    def country_codes(self):
        if self.countries <= len(PAPER_COUNTRIES):
            codes = PAPER_COUNTRIES[: self.countries]
        else:
            codes = PAPER_COUNTRIES + [
                f"C{i:02d}" for i in range(self.countries - len(PAPER_COUNTRIES))
            ]
        return sorted(codes)

    def industry_codes(self):
        if self.industries <= len(MANUFACTURING_INDUSTRIES):
            codes = MANUFACTURING_INDUSTRIES[: self.industries]
        else:
            codes = MANUFACTURING_INDUSTRIES + [
                f"ind{i:02d}" for i in range(self.industries - len(MANUFACTURING_INDUSTRIES))
            ]
        return sorted(codes)


@dataclass
class SynthEconomy:
    """Generated inputs plus the ground truth behind them."""

    config: SynthConfig
    tables: dict
    sea: pd.DataFrame
    rd: pd.DataFrame
    deflators: pd.DataFrame
    truth: dict
    labels: pd.DataFrame
    regressors: pd.DataFrame

    @property
    def sample_countries(self):
        return self.truth["sample_countries"]

    def write(self, directory):
        """Emit the CSV schemas the ingestion stages consume, plus truth.json."""
        os.makedirs(directory, exist_ok=True)
        _write_tables(self.tables, directory)
        _write_csv(self.sea, os.path.join(directory, "sea.csv"))
        _write_csv(self.rd, os.path.join(directory, "rd.csv"))
        _write_csv(self.deflators, os.path.join(directory, "deflators.csv"))
        truth = dict(self.truth)
        truth["config"] = asdict(self.config)
        with open(os.path.join(directory, "truth.json"), "w", encoding="utf-8") as fh:
            json.dump(truth, fh, indent=2, sort_keys=True, default=float)
            fh.write("\n")


def _write_csv(df: pd.DataFrame, path):
    """Deterministic CSV writing: repr floats, LF endings, no index."""
    df = df.copy()
    for col in df.columns:
        if df[col].dtype == float:
            df[col] = df[col].map(_fmt)
    df.to_csv(path, index=False, lineterminator="\n")


def _write_tables(tables, directory):
    """All years into the three canonical table files."""
    parts = {"flows": [], "final_demand": [], "gross_output": []}
    tmp = os.path.join(directory, "_year")
    for year in sorted(tables):
        write_io_table(tables[year], tmp)
        for name in parts:
            with open(os.path.join(tmp, f"{name}.csv"), encoding="utf-8") as fh:
                lines = fh.read().splitlines()
            parts[name].append(lines if not parts[name] else lines[1:])
    for name, chunks in parts.items():
        with open(os.path.join(directory, f"{name}.csv"), "w", encoding="utf-8") as fh:
            for chunk in chunks:
                fh.write("\n".join(chunk) + "\n")
    for name in parts:
        os.remove(os.path.join(tmp, f"{name}.csv"))
    os.rmdir(tmp)


def _lognormal(rng, sigma, shape):
    return np.exp(rng.normal(0.0, sigma, size=shape))


def gen_economy(config: SynthConfig) -> SynthEconomy:
    """Generate tables, SEA panel, R&D series, and the planted truth."""
    rng = np.random.default_rng(config.seed)
    sample = config.country_codes()
    industries = config.industry_codes()
    countries = sorted(sample + [ROW_CODE]) if config.include_row else sample
    index = NodeIndex(countries, industries)
    n_c, n_g, ng = len(countries), len(industries), index.size
    years = config.years
    n_t = len(years)

    # Persistent structure: sizes with designated hubs, industry scales,
    # direction-specific propensities (decorrelates forward from backward).
    size = _lognormal(rng, config.size_noise, n_c)
    hubs = rng.choice(n_c, size=min(config.hub_count, n_c), replace=False)
    size[hubs] *= 1.0 + config.hub_strength
    if config.include_row:
        size[countries.index(ROW_CODE)] *= config.row_scale
    ind_scale = _lognormal(rng, config.industry_spread, n_g)
    export_tilt = _lognormal(rng, config.direction_noise, n_c)
    node_size = np.repeat(size, n_g) * np.tile(ind_scale, n_c)
    node_export = np.repeat(size * export_tilt, n_g) * np.tile(ind_scale, n_c)
    country_of = index.country_of()

    # Deflators: industry-level rows except for the GDP-fallback
    # countries, plus a GDP row for everyone.
    inflation = rng.uniform(config.inflation_low, config.inflation_high, n_c)
    ind_tweak = rng.uniform(-0.005, 0.005, (n_c, n_g))
    gdp_only = set(sample[: config.gdp_only_countries])
    defl_rows = []
    defl_index = {}
    for ci, c in enumerate(countries):
        for t, year in enumerate(years):
            gdp = (1.0 + inflation[ci]) ** t
            defl_rows.append((c, "", year, gdp))
            for gi, g in enumerate(industries):
                value = (1.0 + inflation[ci] + ind_tweak[ci, gi]) ** t
                if c in gdp_only:
                    value = gdp  # no industry rows reported; fallback applies
                else:
                    defl_rows.append((c, g, year, value))
                defl_index[(c, g, year)] = value
    deflators = pd.DataFrame(defl_rows, columns=rs.DEFLATOR_COLUMNS)

    # R&D levels chosen so intensity lands in the configured range.
    kappa = rng.uniform(config.rd_intensity_low, config.rd_intensity_high, ng)
    growth_factor = np.exp(config.rd_growth)

    tables = {}
    rd_rows = []
    q0 = None
    for t, year in enumerate(years):
        gamma = (1.0 + config.output_growth) ** t
        q_planned = node_size * gamma * _lognormal(rng, config.output_noise, ng)
        purchases = config.intermediate_share * q_planned

        weights = node_export[:, np.newaxis] * _lognormal(
            rng, config.sourcing_noise, (ng, ng)
        )
        domestic = country_of[:, np.newaxis] == country_of[np.newaxis, :]
        weights = np.where(domestic, weights * config.home_bias, weights)
        if config.suppliers_per_buyer is not None:
            k = min(config.suppliers_per_buyer, ng)
            # weighted sampling without replacement via Gumbel top-k keys
            keys = np.log(weights) + rng.gumbel(size=weights.shape)
            cutoff = np.partition(keys, ng - k, axis=0)[ng - k]
            weights = np.where(keys >= cutoff[np.newaxis, :], weights, 0.0)
        flows = weights / weights.sum(axis=0, keepdims=True) * purchases[np.newaxis, :]

        sales = flows.sum(axis=1)
        # keep a final-demand margin on every node; lifting gross output
        # only lowers the buyer's input shares, so productivity is kept
        q = np.maximum(q_planned, sales / (1.0 - 0.1))
        final_total = q - sales

        dest_weights = size[np.newaxis, :] * _lognormal(rng, 0.3, (ng, n_c))
        dest = dest_weights / dest_weights.sum(axis=1, keepdims=True)
        dest = dest * final_total[:, np.newaxis]

        tables[year] = IOTable(
            year=year, index=index, flows=flows, gross_output=q, final_demand_dest=dest
        )
        if t == 0:
            q0 = q

        for n, (c, g) in enumerate(index.nodes()):
            if config.include_row and c == ROW_CODE:
                continue  # no reported R&D for the aggregate region
            real = kappa[n] * q0[n] * (config.delta + config.rd_growth) * growth_factor**t
            rd_rows.append((c, g, year, real * defl_index[(c, g, year)]))
    rd = pd.DataFrame(rd_rows, columns=rs.RD_COLUMNS)

    # Everything downstream uses the package machinery, so a pipeline
    # run over the emitted files reproduces these regressors exactly.
    rd_real = rs.deflate_expenditure(rd, deflators)
    stocks, _ = rs.perpetual_inventory(rd_real, delta=config.delta)

    mask = MaskSpec(
        drop_countries={ROW_CODE} if config.include_row else frozenset(), drop_domestic=True
    )
    scores = [
        ct.compute_centrality(apply_mask(tables[y], mask), lam=config.lam) for y in years
    ]
    labels = ct.build_labels(scores, sample_countries=sample, mode="tertile")

    sets = importer_sets(sample)
    reg_frames = []
    for year in years:
        coeff = build_coefficients(tables[year])
        D = rs.intensity(stocks, tables[year], manufacturing=industries).D
        f = aggregate_final_demand(tables[year])
        _, T = cn.rd_content(D, coeff, f)
        reg_frames.append(
            cn.partition_content(
                T, D, labels, index, year, importer_sets=sets, importer_countries=sample
            )
        )
    regressors = pd.concat(reg_frames, ignore_index=True)
    for klass in ("high", "middle", "low"):
        total = regressors[f"{klass}_A"] + regressors[f"{klass}_B"]
        regressors[f"ln_{klass}"] = np.where(total > 0, np.log(total), np.nan)
    x = regressors[PLANTED_REGRESSORS].to_numpy()
    if not np.all(np.isfinite(x)):
        raise ValidationError(
            "generated economy has empty content buckets; increase connectivity "
            "(hub_strength/home_bias down, sourcing breadth up)"
        )

    # Planted outcome: regressors enter centered per industry (absorbed
    # by the unit effects, so slopes are untouched) to keep magnitudes sane.
    betas = np.array([config.betas[k] for k in PLANTED_REGRESSORS])
    centered = regressors.copy()
    for k in PLANTED_REGRESSORS:
        centered[k + "_c"] = centered[k] - centered.groupby("industry")[k].transform("mean")
    xc = centered[[k + "_c" for k in PLANTED_REGRESSORS]].to_numpy()

    unit_alpha = {
        (c, g): rng.normal(0.0, config.fe_unit_sigma) for c in sample for g in industries
    }
    year_alpha = {y: rng.normal(0.0, config.fe_year_sigma) for y in years}
    noise = rng.normal(0.0, config.noise_sigma, len(regressors))
    v = (
        xc @ betas
        + np.array([unit_alpha[(r.country, r.industry)] for r in regressors.itertuples()])
        + np.array([year_alpha[r.year] for r in regressors.itertuples()])
        + noise
    )
    planted = regressors[["country", "industry", "year"]].copy()
    planted["ln_tfp_planted"] = v

    sea = _invert_productivity_index(config, index, sample, tables, planted, defl_index)

    truth = {
        "betas": dict(config.betas),
        "noise_sigma": config.noise_sigma,
        "seed": config.seed,
        "sample_countries": sample,
        "industries": industries,
        "years": years,
        "hub_countries": sorted(countries[h] for h in hubs),
    }
    return SynthEconomy(
        config=config,
        tables=tables,
        sea=sea,
        rd=rd,
        deflators=deflators,
        truth=truth,
        labels=labels,
        regressors=regressors.merge(
            planted, on=["country", "industry", "year"], validate="one_to_one"
        ),
    )


def _invert_productivity_index(config, index, sample, tables, planted, defl_index):
    """SEA records whose productivity index equals the planted values.

    Within each (industry, year) cell the index computes deviations from
    cross-country means with weights w_i = (sigma_i + mean sigma)/2, so
    its outputs always satisfy sum_i TFP_i = -sum_i w_i (lnL_i - mean lnL)
    when capital is constant. Choosing employment along the w direction,

        lnL_i = base_i + cscale * (w_i - mean w),

    with cscale solving sum_i w_i (lnL_i - mean lnL) = -sum_i v_i, and
    ln Y_i = v_i + w_i (lnL_i - mean lnL) + level, makes the index
    reproduce v exactly. Raw shares are constant per country, so the
    smoothing regression returns them untouched (they lie in the span of
    its country dummies).
    """
    sigma = dict(
        zip(sample, np.linspace(config.labor_share_low, config.labor_share_high, len(sample)))
    )
    sig = np.array([sigma[c] for c in sample])
    w = 0.5 * (sig + sig.mean())
    w_dev = w - w.mean()
    s2w = float(w_dev @ w_dev)

    sizes = {}
    for c in sample:
        s = index.country_slice(c)
        sizes[c] = float(np.mean([tables[y].gross_output[s].mean() for y in [min(tables)]]))
    base = np.log([sizes[c] for c in sample])
    kappa_b = float(w @ (base - base.mean()))

    v_map = {
        (r.country, r.industry, r.year): r.ln_tfp_planted for r in planted.itertuples(index=False)
    }
    rows = []
    for g in index.industries:
        for year in sorted(tables):
            v = np.array([v_map[(c, g, year)] for c in sample])
            cscale = -(v.sum() + kappa_b) / s2w
            ln_l = base + cscale * w_dev
            level = float(
                np.log(0.4 * np.mean([tables[year].gross_output[index.position(c, g)]
                                      for c in sample]))
            )
            ln_y = v + w * (ln_l - base.mean()) + level
            for c, ly, ll, sg in zip(sample, ln_y, ln_l, sig):
                defl = defl_index[(c, g, year)]
                va_real = float(np.exp(ly))
                rows.append(
                    (c, g, year, va_real * defl, va_real, float(np.exp(ll)), 1.0,
                     sg * va_real * defl)
                )
    sea = pd.DataFrame(
        rows,
        columns=["country", "industry", "year", "va_nominal", "va_real", "employment",
                 "capital_real", "labor_comp"],
    )
    return sea.sort_values(["country", "industry", "year"]).reset_index(drop=True)


def oracle_neumann(B: np.ndarray, f: np.ndarray, D: np.ndarray, order: int) -> np.ndarray:
    """Truncated power-series content: D (sum_{n<=order} B^n) diag(f).

    Independent check for the factorized Leontief path; evaluated by
    row-vector iteration, no solves.
    """
    if order < 1:
        raise ValidationError("order must be at least 1")
    B = np.asarray(B, dtype=float)
    D = np.asarray(D, dtype=float)
    f = np.asarray(f, dtype=float)
    acc = D.copy()
    term = D.copy()
    for _ in range(order):
        term = term @ B
        acc = acc + term
    return acc * f


def oracle_sandwich(X: np.ndarray, residuals: np.ndarray, clusters, small_sample: bool = True):
    """Cluster-robust covariance by explicit summation.

    Same estimator as the production path, computed with plain python
    loops over observations and clusters (the only linear-algebra call
    is the final inverse).
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(residuals, dtype=float)
    n, k = X.shape
    xtx = np.zeros((k, k))
    for r in range(n):
        for a in range(k):
            for b in range(k):
                xtx[a, b] += X[r, a] * X[r, b]
    bread = np.linalg.inv(xtx)
    meat = np.zeros((k, k))
    labels = list(dict.fromkeys(clusters))
    if len(labels) < 2:
        raise ValidationError("need at least 2 clusters")
    for lab in labels:
        s = np.zeros(k)
        for r in range(n):
            if clusters[r] == lab:
                for a in range(k):
                    s[a] += X[r, a] * u[r]
        for a in range(k):
            for b in range(k):
                meat[a, b] += s[a] * s[b]
    cov = bread @ meat @ bread
    if small_sample:
        g = len(labels)
        cov = cov * (g / (g - 1.0)) * ((n - 1.0) / (n - k))
    return (cov + cov.T) / 2.0
