"""R&D content of final goods and its partitions.

The content delivered to a buying node is the R&D stock embodied,
directly and through all intermediate rounds, in that node's shipments
to final demand:

    V = D (I - B)^{-1} f,

with D the per-node intensity row vector, B the global input-share
matrix, and f the diagonal of per-node final-demand totals. The scaled
inverse T = (I - B)^{-1} diag(f) is kept because the regressors slice
it by exporter: the domestic term sums a buyer country's own rows, and
each foreign term sums the rows of exporters in one centrality class
and industry group.

The foreign part further splits into the first input round (through B
alone) and everything beyond it (the inverse net of I + B), with the
within-country blocks of the bracketed matrix zeroed after it is
formed. The own-final-output term D f stays on the domestic side.
"""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import NumericalError, ValidationError
from .iotable import SPARSE_THRESHOLD, CoefficientMatrix, NodeIndex

logger = logging.getLogger(__name__)

CLASS_BUCKETS = ["high_A", "high_B", "middle_A", "middle_B", "low_A", "low_B"]
SUBCATEGORY_BUCKETS = [
    "high-middle", "high-low", "middle-high", "middle-middle",
    "middle-low", "low-high", "low-middle",
]
REGRESSOR_COLUMNS = (
    ["country", "industry", "year", "importer_flags"]
    + [f"ln_{b}" for b in ["domestic"] + CLASS_BUCKETS]
    + ["domestic"] + CLASS_BUCKETS + ["unclassified", "v_total"]
)

LEONTIEF_RTOL = 1e-9


class LeontiefSystem:
    """One factorization of (I - B), reused for every solve in a year."""

    def __init__(self, coeff: CoefficientMatrix):
        self.index = coeff.index
        self.year = coeff.year
        self.B = coeff.B
        ng = coeff.B.shape[0]
        if ng > SPARSE_THRESHOLD:
            sparse = scipy.sparse.csc_matrix(scipy.sparse.identity(ng) - coeff.B)
            self._sparse_lu = scipy.sparse.linalg.splu(sparse)
            self._dense_lu = None
        else:
            self._sparse_lu = None
            try:
                self._dense_lu = scipy.linalg.lu_factor(np.eye(ng) - coeff.B)
            except scipy.linalg.LinAlgError as exc:
                raise NumericalError(f"(I - B) is singular in year {coeff.year}: {exc}") from None
        self._inverse = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Residual-checked solution of (I - B) x = rhs."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.B.shape[0]:
            raise ValidationError(
                f"rhs has {rhs.shape[0]} rows, system has {self.B.shape[0]}"
            )
        if self._sparse_lu is not None:
            x = self._sparse_lu.solve(rhs)
        else:
            x = scipy.linalg.lu_solve(self._dense_lu, rhs)
        residual = np.max(np.abs(x - self.B @ x - rhs), initial=0.0)
        scale = np.max(np.abs(rhs), initial=0.0)
        if residual > LEONTIEF_RTOL * max(scale, 1e-300):
            raise NumericalError(
                f"Leontief solve residual {residual:.3e} exceeds {LEONTIEF_RTOL:.0e} * {scale:.3e}"
            )
        return x

    def inverse(self) -> np.ndarray:
        if self._inverse is None:
            self._inverse = self.solve(np.eye(self.B.shape[0]))
        return self._inverse


def leontief_solve(coeff: CoefficientMatrix, rhs: np.ndarray) -> np.ndarray:
    """Convenience wrapper: factorize once and solve."""
    return LeontiefSystem(coeff).solve(rhs)


def total_requirements(coeff: CoefficientMatrix, f: np.ndarray) -> np.ndarray:
    """T = (I - B)^{-1} diag(f): total requirements scaled by final demand."""
    f = np.asarray(f, dtype=float)
    if f.shape != (coeff.B.shape[0],):
        raise ValidationError("final-demand vector does not match the coefficient matrix")
    return LeontiefSystem(coeff).inverse() * f[np.newaxis, :]


def rd_content(D: np.ndarray, coeff: CoefficientMatrix, f: np.ndarray):
    """Content per buying node, plus T for the partition stage.

    Returns (V, T) with V[i] = sum_j D[j] * T[j, i].
    """
    D = np.asarray(D, dtype=float)
    if D.shape != (coeff.B.shape[0],):
        raise ValidationError("intensity vector does not match the coefficient matrix")
    T = total_requirements(coeff, f)
    return D @ T, T


def _label_arrays(labels: pd.DataFrame, index: NodeIndex, year: int):
    """Dense per-node class/group/subcategory arrays for one year.

    Countries outside the labeled sample stay unclassified; a labeled
    country missing any industry's label is an error.
    """
    chunk = labels[labels["year"] == year]
    classified = sorted(set(chunk["country"]) & set(index.countries))
    cls = np.array([""] * index.size, dtype=object)
    grp = np.array([""] * index.size, dtype=object)
    sub = np.array([""] * index.size, dtype=object)
    seen = {}
    for r in chunk.itertuples(index=False):
        if r.country not in index._country_pos or r.industry not in index._industry_pos:
            continue
        n = index.position(r.country, r.industry)
        cls[n] = r.total_class
        grp[n] = r.industry_group
        sub[n] = r.middle_subcategory or ""
        seen[(r.country, r.industry)] = True
    for c in classified:
        for g in index.industries:
            if (c, g) not in seen:
                raise ValidationError(f"missing class label for ({c}, {g}) in year {year}")
    return cls, grp, sub, classified


def _weighted(mat: np.ndarray, D: np.ndarray, f: np.ndarray | None = None) -> np.ndarray:
    out = D[:, np.newaxis] * mat
    if f is not None:
        out = out * f[np.newaxis, :]
    return out


def _foreign_sum(weighted: np.ndarray, row_mask: np.ndarray, index: NodeIndex) -> np.ndarray:
    """Per-column sum over masked rows, excluding rows of the column's own country."""
    total = weighted[row_mask].sum(axis=0) if row_mask.any() else np.zeros(weighted.shape[1])
    out = total.copy()
    for c in index.countries:
        s = index.country_slice(c)
        mask_c = row_mask[s]
        if mask_c.any():
            rows = np.arange(s.start, s.stop)[mask_c]
            out[s] -= weighted[np.ix_(rows, np.arange(s.start, s.stop))].sum(axis=0)
    return out


def _domestic_sum(weighted: np.ndarray, index: NodeIndex) -> np.ndarray:
    out = np.zeros(weighted.shape[1])
    for c in index.countries:
        s = index.country_slice(c)
        out[s] = weighted[s, s].sum(axis=0)
    return out


def partition_content(
    T: np.ndarray,
    D: np.ndarray,
    labels: pd.DataFrame,
    index: NodeIndex,
    year: int,
    importer_sets: dict | None = None,
    importer_countries=None,
) -> pd.DataFrame:
    """Regressor table: domestic term plus one term per class x group bucket.

    For importer (i, h): domestic sums the buyer country's own rows of
    D-weighted T; the bucket for class c and group G sums foreign rows
    whose exporter carries total class c in an industry of group G.
    Content from exporters outside the classified sample lands in
    ``unclassified`` so the buckets always add up to the total.
    """
    cls, grp, _, classified = _label_arrays(labels, index, year)
    weighted = _weighted(T, D)
    v_total = weighted.sum(axis=0)
    domestic = _domestic_sum(weighted, index)

    buckets = {}
    for name in CLASS_BUCKETS:
        klass, group = name.split("_")
        mask = (cls == klass.capitalize()) & (grp == group)
        buckets[name] = _foreign_sum(weighted, mask, index)
    unmask = cls == ""
    buckets["unclassified"] = _foreign_sum(weighted, unmask, index)

    if importer_countries is None:
        importer_countries = classified
    importer_sets = importer_sets or {}

    records = []
    for c in importer_countries:
        flags = "|".join(sorted(name for name, members in importer_sets.items() if c in members))
        s = index.country_slice(c)
        for g, n in zip(index.industries, range(s.start, s.stop)):
            row = {
                "country": c, "industry": g, "year": year, "importer_flags": flags,
                "domestic": domestic[n], "unclassified": buckets["unclassified"][n],
                "v_total": v_total[n],
            }
            for name in CLASS_BUCKETS:
                row[name] = buckets[name][n]
            for name in ["domestic"] + CLASS_BUCKETS:
                value = row[name]
                row[f"ln_{name}"] = np.log(value) if value > 0 else np.nan
            records.append(row)
    return pd.DataFrame(records, columns=REGRESSOR_COLUMNS)


def direct_indirect_split(
    coeff: CoefficientMatrix,
    D: np.ndarray,
    f: np.ndarray,
    labels: pd.DataFrame,
    importer_countries=None,
) -> pd.DataFrame:
    """Split every bucket's content into the first input round and the rest.

    direct flows through B alone; indirect through (I - B)^{-1} - (I + B),
    both with within-country blocks dropped for the foreign buckets. The
    own-final-output term D f is booked as domestic direct content, so
    total = direct + indirect holds bucket by bucket.
    """
    index = coeff.index
    year = coeff.year
    cls, grp, sub, _ = _label_arrays(labels, index, year)
    system = LeontiefSystem(coeff)
    L = system.inverse()
    indirect_mat = L - coeff.B
    np.fill_diagonal(indirect_mat, indirect_mat.diagonal() - 1.0)

    w_total = _weighted(L, D, f)
    w_direct = _weighted(coeff.B, D, f)
    w_indirect = _weighted(indirect_mat, D, f)

    if importer_countries is None:
        importer_countries = index.countries

    parts = {"v_total": w_total, "v_direct": w_direct, "v_indirect": w_indirect}
    bucket_masks = {}
    for name in CLASS_BUCKETS:
        klass, group = name.split("_")
        bucket_masks[name] = (cls == klass.capitalize()) & (grp == group)
    for name in SUBCATEGORY_BUCKETS:
        bucket_masks[name] = sub == name
    bucket_masks["unclassified"] = cls == ""

    columns = {}
    for bname, mask in bucket_masks.items():
        for pname, w in parts.items():
            columns[(bname, pname)] = _foreign_sum(w, mask, index)
    dom = {pname: _domestic_sum(w, index) for pname, w in parts.items()}
    # book D*f (own final output) with the first-round domestic content
    dom["v_direct"] = dom["v_direct"] + D * f

    records = []
    all_buckets = ["domestic"] + CLASS_BUCKETS + SUBCATEGORY_BUCKETS + ["unclassified"]
    for c in importer_countries:
        s = index.country_slice(c)
        for g, n in zip(index.industries, range(s.start, s.stop)):
            for bname in all_buckets:
                if bname == "domestic":
                    total, direct, indirect = (
                        dom["v_total"][n], dom["v_direct"][n], dom["v_indirect"][n]
                    )
                else:
                    total = columns[(bname, "v_total")][n]
                    direct = columns[(bname, "v_direct")][n]
                    indirect = columns[(bname, "v_indirect")][n]
                records.append((c, g, year, bname, total, direct, indirect))
    return pd.DataFrame(
        records,
        columns=["country", "industry", "year", "bucket", "v_total", "v_direct", "v_indirect"],
    )


def _class_of(bucket: str) -> str | None:
    if bucket.endswith("_A") or bucket.endswith("_B"):
        return bucket.split("_")[0].capitalize()
    if bucket == "unclassified":
        return "unclassified"
    return None


def shares_report(decomposition: pd.DataFrame, group_by: str = "industry") -> pd.DataFrame:
    """Percentage composition of foreign content.

    group_by 'industry': per (year, industry), averaged over importer
    countries, the share of each class in direct and indirect foreign
    content (shares-table layout; every row sums to 100 unless flagged
    empty). 'year' additionally averages over industries. group_by
    'middle_subcategory': the seven subcategory shares of total Middle
    content (time-series layout).
    """
    if group_by not in ("industry", "year", "middle_subcategory"):
        raise ValidationError(f"unknown grouping {group_by!r}")
    df = decomposition.copy()

    if group_by == "middle_subcategory":
        subs = df[df["bucket"].isin(SUBCATEGORY_BUCKETS)].copy()
        totals = subs.groupby(["country", "industry", "year"])["v_total"].transform("sum")
        subs["share"] = np.where(totals > 0, 100.0 * subs["v_total"] / totals, 0.0)
        subs["empty"] = (totals <= 0).astype(int)
        out = (
            subs.pivot_table(
                index=["year", "industry"], columns="bucket", values="share", aggfunc="mean",
                observed=True,
            )
            .reindex(columns=SUBCATEGORY_BUCKETS)
            .reset_index()
        )
        flags = subs.groupby(["year", "industry"])["empty"].max().reset_index()
        return out.merge(flags, on=["year", "industry"], validate="one_to_one")

    foreign = df[df["bucket"].isin(CLASS_BUCKETS + ["unclassified"])].copy()
    foreign["class"] = foreign["bucket"].map(_class_of)
    grouped = (
        foreign.groupby(["country", "industry", "year", "class"], observed=True)[
            ["v_direct", "v_indirect"]
        ]
        .sum()
        .reset_index()
    )
    totals = grouped.groupby(["country", "industry", "year"])[["v_direct", "v_indirect"]].transform(
        "sum"
    )
    denom = totals["v_direct"] + totals["v_indirect"]
    grouped["direct"] = np.where(denom > 0, 100.0 * grouped["v_direct"] / denom, 0.0)
    grouped["indirect"] = np.where(denom > 0, 100.0 * grouped["v_indirect"] / denom, 0.0)
    grouped["empty"] = (denom <= 0).astype(int)

    keys = ["year"] if group_by == "year" else ["year", "industry"]
    shaped = grouped.pivot_table(
        index=["year", "industry", "country"], columns="class",
        values=["direct", "indirect"], aggfunc="first", observed=True,
    )
    shaped.columns = [f"{part}_{klass}" for part, klass in shaped.columns]
    averaged = shaped.groupby(level=keys).mean().reset_index()
    order = [
        f"{part}_{klass}"
        for part in ("direct", "indirect")
        for klass in ("High", "Middle", "Low", "unclassified")
        if f"{part}_{klass}" in averaged.columns
    ]
    flags = grouped.groupby(keys)["empty"].max().reset_index()
    out = averaged[keys + order].merge(flags, on=keys, validate="one_to_one")
    return out
