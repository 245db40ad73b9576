"""Katz-Bonacich centrality on the world input-output network.

Forward centrality ranks key suppliers: a node is central when it
provides a large share of the inputs of other central nodes. Backward
centrality ranks key buyers: a node is central when it absorbs a large
share of the sales of other central nodes. Both solve

    c = eta * 1 + lambda * M c,

with eta = 1 - lambda and M built from share-normalized trade weights.

Orientation note: pairing the row-stochastic (seller-share) weights
directly with the forward recursion collapses to the constant vector 1
on any fully stochastic network, which cannot produce the observed
cross-node heterogeneity. The default, non-degenerate pairing is
buyer-share weights for the forward direction and transposed
seller-share weights for the backward direction; the degenerate literal
pairing stays available behind ``literal=True`` for comparison.

The table must already be masked (rest-of-world dropped, domestic
blocks zeroed): a huge aggregate region or active internal transactions
would inflate every trading partner's score.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse
import scipy.sparse.linalg

from .errors import NumericalError, SpecificationError, ValidationError
from .iotable import SPARSE_THRESHOLD, IOTable, NodeIndex

logger = logging.getLogger(__name__)

SELLER_SHARE = "seller-share"
BUYER_SHARE = "buyer-share"

CLASS_ORDER = ("high", "middle", "low")
MIDDLE_SUBCATEGORIES = (
    "high-middle", "high-low", "middle-high", "middle-middle",
    "middle-low", "low-high", "low-middle",
)

LABEL_COLUMNS = [
    "year", "country", "industry", "forward", "backward",
    "fwd_class", "back_class", "total_class", "middle_subcategory", "industry_group",
]


@dataclass
class WeightMatrix:
    """Share-normalized trade weights for one year.

    seller-share: every nonzero row sums to 1 (how a seller's shipments
    split across buyers). buyer-share: every nonzero column sums to 1
    (how a buyer's purchases split across sellers). Nodes without trade
    keep zero rows/columns.
    """

    year: int
    index: NodeIndex
    W: np.ndarray
    normalization: str


@dataclass
class CentralityScores:
    """Forward (key-supplier) and backward (key-buyer) scores for one year."""

    year: int
    index: NodeIndex
    forward: np.ndarray
    backward: np.ndarray
    lam: float

    @property
    def eta(self):
        return 1.0 - self.lam

    def frame(self) -> pd.DataFrame:
        nodes = self.index.nodes()
        return pd.DataFrame(
            {
                "year": self.year,
                "country": [c for c, _ in nodes],
                "industry": [g for _, g in nodes],
                "forward": self.forward,
                "backward": self.backward,
            }
        )


def normalize_weights(table: IOTable, normalization: str, strict: bool = False) -> WeightMatrix:
    """Normalize the flow matrix to seller-share or buyer-share weights."""
    if normalization not in (SELLER_SHARE, BUYER_SHARE):
        raise ValidationError(f"unknown normalization {normalization!r}")
    if strict:
        for c in table.index.countries:
            s = table.index.country_slice(c)
            if np.any(table.flows[s, s]):
                raise ValidationError(
                    f"domestic flows present for {c} in year {table.year}; mask internal "
                    "transactions before computing centrality (or disable strict mode)"
                )
    flows = table.flows
    axis = 1 if normalization == SELLER_SHARE else 0
    totals = flows.sum(axis=axis, keepdims=True)
    W = np.divide(flows, totals, out=np.zeros_like(flows), where=totals > 0)
    return WeightMatrix(year=table.year, index=table.index, W=W, normalization=normalization)


def _solve_series(M: np.ndarray, rhs: np.ndarray, lam: float, tol=1e-12, max_iter=10_000):
    """Fixed-point iteration c <- rhs + lam*M c; convergent for sub-stochastic M."""
    c = rhs.copy()
    for _ in range(max_iter):
        nxt = rhs + lam * (M @ c)
        if np.max(np.abs(nxt - c)) < tol:
            return nxt
    residual = float(np.max(np.abs(nxt - rhs - lam * (M @ nxt))))
    raise NumericalError(f"centrality iteration did not converge; residual {residual:.3e}")


def katz_bonacich(
    weights: WeightMatrix, lam: float = 0.5, direction: str = "forward", literal: bool = False
) -> np.ndarray:
    """Solve one orientation of the centrality recursion via a linear solve.

    forward uses the weights as given; backward uses their transpose.
    Every score is at least eta = 1 - lam, with equality exactly for
    nodes that have no in-edges under the applied orientation.
    """
    if not 0.0 < lam < 1.0:
        raise ValidationError(f"lambda must lie in (0, 1), got {lam}")
    if direction not in ("forward", "backward"):
        raise ValidationError(f"unknown direction {direction!r}")
    expected = {
        (False, "forward"): BUYER_SHARE,
        (False, "backward"): SELLER_SHARE,
        (True, "forward"): SELLER_SHARE,
        (True, "backward"): BUYER_SHARE,
    }[(literal, direction)]
    if weights.normalization != expected:
        raise ValidationError(
            f"{direction} centrality ({'literal' if literal else 'default'} pairing) needs "
            f"{expected} weights, got {weights.normalization}"
        )
    W = weights.W
    ng = W.shape[0]
    eta = 1.0 - lam
    rhs = np.full(ng, eta)
    M = W if direction == "forward" else W.T
    if ng > SPARSE_THRESHOLD:
        return _solve_series(M, rhs, lam)
    c = np.linalg.solve(np.eye(ng) - lam * M, rhs)
    residual = np.max(np.abs(c - rhs - lam * (M @ c)))
    if residual > 1e-9 * max(float(np.max(np.abs(c))), 1.0):
        raise NumericalError(f"centrality solve residual too large: {residual:.3e}")
    return c


def compute_centrality(table: IOTable, lam: float = 0.5, literal: bool = False) -> CentralityScores:
    """Both orientations for one (already masked) table."""
    if literal:
        fwd_w = normalize_weights(table, SELLER_SHARE)
        back_w = normalize_weights(table, BUYER_SHARE)
    else:
        fwd_w = normalize_weights(table, BUYER_SHARE)
        back_w = normalize_weights(table, SELLER_SHARE)
    return CentralityScores(
        year=table.year,
        index=table.index,
        forward=katz_bonacich(fwd_w, lam, "forward", literal=literal),
        backward=katz_bonacich(back_w, lam, "backward", literal=literal),
        lam=lam,
    )


def _ranked(scores):
    # Descending score, ties broken by country code for determinism.
    return sorted(scores, key=lambda c: (-scores[c], c))


def classify_tertiles(scores) -> dict:
    """Top third high, next third middle, rest low (per industry-year vector)."""
    n = len(scores)
    if n < 3:
        raise SpecificationError(f"need at least 3 countries to form tertiles, got {n}")
    cut = math.ceil(n / 3)
    order = _ranked(scores)
    labels = {}
    for pos, country in enumerate(order):
        labels[country] = "high" if pos < cut else ("middle" if pos < 2 * cut else "low")
    return labels


def classify_topk(scores, k: int) -> dict:
    """Top k high, next k middle, rest low; same tie rule as tertiles."""
    n = len(scores)
    if k < 1:
        raise SpecificationError("k must be at least 1")
    if 2 * k >= n:
        raise SpecificationError(f"top-k classification needs 2k < N, got k={k}, N={n}")
    order = _ranked(scores)
    labels = {}
    for pos, country in enumerate(order):
        labels[country] = "high" if pos < k else ("middle" if pos < 2 * k else "low")
    return labels


def total_class(fwd_class: str, back_class: str):
    """Combine per-direction labels; Middle carries a back-fwd subcategory.

    High needs high in both directions, Low needs low in both; every
    other combination is Middle, named backward-forward (seven in all).
    """
    for label in (fwd_class, back_class):
        if label not in CLASS_ORDER:
            raise ValidationError(f"unknown class label {label!r}")
    if fwd_class == "high" and back_class == "high":
        return "High", None
    if fwd_class == "low" and back_class == "low":
        return "Low", None
    return "Middle", f"{back_class}-{fwd_class}"


def split_industry_groups(
    scores_by_year, sample_countries=None, direction: str = "both"
) -> dict:
    """Group industries by their maximum centrality anywhere in the panel.

    The top half (by max over years, sample countries, and the chosen
    direction(s)) is Group B, the more centralized industries; the rest
    is Group A. Ties break lexicographically on the industry code.
    """
    if direction not in ("both", "forward", "backward"):
        raise ValidationError(f"unknown direction {direction!r}")
    scores_by_year = list(scores_by_year)
    if not scores_by_year:
        raise ValidationError("no centrality scores supplied")
    index = scores_by_year[0].index
    industries = index.industries
    if len(industries) < 2:
        raise SpecificationError("need at least 2 industries to split into groups")
    if sample_countries is None:
        rows = np.arange(index.size)
    else:
        missing = sorted(set(sample_countries) - set(index.countries))
        if missing:
            raise ValidationError(f"sample countries absent from registry: {missing}")
        rows = np.concatenate(
            [np.arange(index.size)[index.country_slice(c)] for c in sorted(sample_countries)]
        )
    ind_of = index.industry_of()[rows]
    maxima = np.full(len(industries), -np.inf)
    for scores in scores_by_year:
        if scores.index != index:
            raise ValidationError("industry grouping needs a common registry across years")
        pools = []
        if direction in ("both", "forward"):
            pools.append(scores.forward[rows])
        if direction in ("both", "backward"):
            pools.append(scores.backward[rows])
        for pool in pools:
            np.maximum.at(maxima, ind_of, pool)
    order = sorted(range(len(industries)), key=lambda g: (-maxima[g], industries[g]))
    n_b = len(industries) // 2
    top = {industries[g] for g in order[:n_b]}
    return {g: ("B" if g in top else "A") for g in industries}


def build_labels(
    scores_by_year,
    sample_countries=None,
    mode: str = "tertile",
    k: int | None = None,
    group_direction: str = "both",
) -> pd.DataFrame:
    """Full classification table for the regression stage.

    Classification runs within ``sample_countries`` (default: every
    country in the registry) per industry and year, separately for each
    direction, then combines into the total class and tags each industry
    with its A/B group.
    """
    scores_by_year = sorted(scores_by_year, key=lambda s: s.year)
    if mode not in ("tertile", "topk"):
        raise ValidationError(f"unknown classification mode {mode!r}")
    if mode == "topk" and (k is None or k < 1):
        raise SpecificationError("top-k classification requires k >= 1")
    index = scores_by_year[0].index
    countries = sorted(sample_countries) if sample_countries is not None else index.countries
    missing = sorted(set(countries) - set(index.countries))
    if missing:
        raise ValidationError(f"sample countries absent from registry: {missing}")
    groups = split_industry_groups(scores_by_year, countries, direction=group_direction)

    records = []
    for scores in scores_by_year:
        for g in index.industries:
            fwd = {c: float(scores.forward[index.position(c, g)]) for c in countries}
            back = {c: float(scores.backward[index.position(c, g)]) for c in countries}
            if mode == "tertile":
                fwd_cls, back_cls = classify_tertiles(fwd), classify_tertiles(back)
            else:
                fwd_cls, back_cls = classify_topk(fwd, k), classify_topk(back, k)
            for c in countries:
                total, sub = total_class(fwd_cls[c], back_cls[c])
                records.append(
                    (scores.year, c, g, fwd[c], back[c], fwd_cls[c], back_cls[c],
                     total, sub or "", groups[g])
                )
    return pd.DataFrame(records, columns=LABEL_COLUMNS)


def centrality_summary(labels: pd.DataFrame) -> pd.DataFrame:
    """Per-industry Obs/Min/Max/Mean/Std for both directions (summary-table layout)."""
    rows = []
    for industry, chunk in labels.groupby("industry", sort=True):
        row = {"industry": industry}
        for direction, col in [("back", "backward"), ("fwd", "forward")]:
            values = chunk[col].to_numpy()
            row[f"{direction}_obs"] = len(values)
            row[f"{direction}_min"] = values.min()
            row[f"{direction}_max"] = values.max()
            row[f"{direction}_mean"] = values.mean()
            row[f"{direction}_std"] = values.std(ddof=1) if len(values) > 1 else 0.0
        rows.append(row)
    return pd.DataFrame(rows)
