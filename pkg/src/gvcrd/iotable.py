"""World input-output tables: loading, validation, masking, coefficients.

A table for one year is a dense NG x NG matrix of intermediate flows
(row = selling node, column = buying node, a node being a
(country, industry) pair), together with each node's shipments to
final demand and its gross output. Registries are kept sorted so that
every representation of the same economy is canonical: loading a file,
writing it back, and loading it again is byte-stable.

Tables are nominal-in, nominal-out; deflation belongs to the R&D and
productivity stages.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import NumericalError, ParseError, ValidationError

logger = logging.getLogger(__name__)

# Above this node count, solvers switch to sparse/iterative paths.
SPARSE_THRESHOLD = 5000

FLOW_COLUMNS = ["year", "src_country", "src_industry", "dst_country", "dst_industry", "value"]
FINAL_DEMAND_COLUMNS = ["year", "src_country", "src_industry", "dst_country", "value"]
OUTPUT_COLUMNS = ["year", "country", "industry", "gross_output"]


class NodeIndex:
    """Bijection between (country, industry) pairs and dense indices.

    Ordering is country-major over sorted registries, so index
    ``c * n_industries + g`` holds country ``c``'s industry ``g``.
    """

    def __init__(self, countries, industries):
        countries = list(countries)
        industries = list(industries)
        if countries != sorted(set(countries)):
            raise ValidationError("country registry must be sorted and duplicate-free")
        if industries != sorted(set(industries)):
            raise ValidationError("industry registry must be sorted and duplicate-free")
        if not countries or not industries:
            raise ValidationError("registries must be nonempty")
        self.countries = countries
        self.industries = industries
        self._country_pos = {c: i for i, c in enumerate(countries)}
        self._industry_pos = {g: i for i, g in enumerate(industries)}

    @property
    def n_countries(self):
        return len(self.countries)

    @property
    def n_industries(self):
        return len(self.industries)

    @property
    def size(self):
        return len(self.countries) * len(self.industries)

    def position(self, country, industry):
        try:
            c = self._country_pos[country]
        except KeyError:
            raise ValidationError(f"unknown country {country!r}") from None
        try:
            g = self._industry_pos[industry]
        except KeyError:
            raise ValidationError(f"unknown industry {industry!r}") from None
        return c * len(self.industries) + g

    def node(self, position):
        c, g = divmod(position, len(self.industries))
        return self.countries[c], self.industries[g]

    def nodes(self):
        return [(c, g) for c in self.countries for g in self.industries]

    def country_slice(self, country):
        """Contiguous index range covering one country's industries."""
        c = self._country_pos[country]
        n = len(self.industries)
        return slice(c * n, (c + 1) * n)

    def country_of(self) -> np.ndarray:
        """Country ordinal for every dense index."""
        return np.repeat(np.arange(len(self.countries)), len(self.industries))

    def industry_of(self) -> np.ndarray:
        """Industry ordinal for every dense index."""
        return np.tile(np.arange(len(self.industries)), len(self.countries))

    def __eq__(self, other):
        return (
            isinstance(other, NodeIndex)
            and self.countries == other.countries
            and self.industries == other.industries
        )


@dataclass
class IOTable:
    """One year's world input-output snapshot.

    ``flows[j, i]`` is the shipment from selling node j to buying node i
    for intermediate use. ``final_demand_dest[n, c]`` is node n's
    shipment to country c's final demand (industry of use not tracked);
    ``final_demand`` is its row sum. Destination detail may be absent
    for programmatically built tables, in which case only world-total
    aggregation is available. All values are current-price.
    """

    year: int
    index: NodeIndex
    flows: np.ndarray
    gross_output: np.ndarray
    final_demand: np.ndarray | None = None
    final_demand_dest: np.ndarray | None = None

    def __post_init__(self):
        ng = self.index.size
        self.flows = np.asarray(self.flows, dtype=float)
        self.gross_output = np.asarray(self.gross_output, dtype=float)
        if self.flows.shape != (ng, ng):
            raise ValidationError(f"flows must be {ng}x{ng}, got {self.flows.shape}")
        if self.gross_output.shape != (ng,):
            raise ValidationError("gross_output must be an NG-vector")
        if self.final_demand_dest is not None:
            self.final_demand_dest = np.asarray(self.final_demand_dest, dtype=float)
            if self.final_demand_dest.shape != (ng, self.index.n_countries):
                raise ValidationError("final_demand_dest must be NG x countries")
            dest_total = self.final_demand_dest.sum(axis=1)
            if self.final_demand is None:
                self.final_demand = dest_total
            elif not np.allclose(np.asarray(self.final_demand, float), dest_total,
                                 rtol=1e-12, atol=1e-9):
                raise ValidationError("final_demand inconsistent with destination detail")
        if self.final_demand is None:
            raise ValidationError("final_demand (or destination detail) is required")
        self.final_demand = np.asarray(self.final_demand, dtype=float)
        if self.final_demand.shape != (ng,):
            raise ValidationError("final_demand must be an NG-vector")
        arrays = {"flows": self.flows, "final_demand": self.final_demand,
                  "gross_output": self.gross_output}
        if self.final_demand_dest is not None:
            arrays["final_demand_dest"] = self.final_demand_dest
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values (year {self.year})")
            if np.any(arr < 0):
                raise ValidationError(f"{name} contains negative values (year {self.year})")
        dead = self.gross_output == 0.0
        if np.any(dead):
            if np.any(self.flows[dead, :]) or np.any(self.flows[:, dead]):
                bad = int(np.flatnonzero(dead)[0])
                node = self.index.node(bad)
                raise ValidationError(
                    f"node {node} has zero gross output but nonzero flows (year {self.year})"
                )
        # Shared read-only across parallel year workers.
        for arr in arrays.values():
            arr.flags.writeable = False

    @property
    def ng(self):
        return self.index.size


@dataclass
class CoefficientMatrix:
    """Unitless input shares per unit of gross output of the buying node."""

    year: int
    index: NodeIndex
    B: np.ndarray


@dataclass
class MaskSpec:
    """What to remove from a table before network computations.

    ``drop_countries`` removes whole countries (rows and columns,
    including their final-demand destinations); ``drop_domestic`` zeroes
    every within-country flow block; ``foreign_only_for`` restricts the
    domestic zeroing to one importer country.
    """

    drop_countries: frozenset = frozenset()
    drop_domestic: bool = False
    foreign_only_for: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "drop_countries", frozenset(self.drop_countries))


def _read_csv(path, columns):
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise ValidationError(f"input file not found: {path}") from None
    except Exception as exc:  # malformed CSV structure
        raise ParseError(f"cannot parse CSV: {exc}", path=path) from None
    if list(df.columns) != columns:
        raise ParseError(
            f"expected header {','.join(columns)}, got {','.join(df.columns)}", path=path
        )
    return df


def _numeric(df, col, path):
    values = pd.to_numeric(df[col], errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        # +2: header line plus 1-based numbering.
        raise ParseError(f"non-numeric {col} value {df[col].iloc[row]!r}", path=path, row=row + 2)
    return values.to_numpy(dtype=float)


def _check_nonnegative(values, col, path):
    neg = values < 0
    if neg.any():
        row = int(np.flatnonzero(neg)[0])
        raise ValidationError(f"negative {col} ({values[row]}) in {path}, row {row + 2}")


def _check_years(years, path):
    frac = years != np.floor(years)
    if frac.any():
        row = int(np.flatnonzero(frac)[0])
        raise ParseError("year must be an integer", path=path, row=row + 2)
    return years.astype(int)


def read_flow_file(path) -> pd.DataFrame:
    """Long-format intermediate flows; unreported cells are zero."""
    df = _read_csv(path, FLOW_COLUMNS)
    df = df.assign(
        year=_check_years(_numeric(df, "year", path), path),
        value=_numeric(df, "value", path),
    )
    _check_nonnegative(df["value"].to_numpy(), "value", path)
    keys = ["year", "src_country", "src_industry", "dst_country", "dst_industry"]
    dup = df.duplicated(subset=keys)
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise ValidationError(
            f"duplicate flow record {tuple(df.iloc[row][keys])} in {path}, row {row + 2}"
        )
    return df


def read_final_demand_file(path) -> pd.DataFrame:
    df = _read_csv(path, FINAL_DEMAND_COLUMNS)
    df = df.assign(
        year=_check_years(_numeric(df, "year", path), path),
        value=_numeric(df, "value", path),
    )
    _check_nonnegative(df["value"].to_numpy(), "value", path)
    dup = df.duplicated(subset=["year", "src_country", "src_industry", "dst_country"])
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise ValidationError(f"duplicate final-demand record in {path}, row {row + 2}")
    return df


def read_output_file(path) -> pd.DataFrame:
    df = _read_csv(path, OUTPUT_COLUMNS)
    df = df.assign(
        year=_check_years(_numeric(df, "year", path), path),
        gross_output=_numeric(df, "gross_output", path),
    )
    _check_nonnegative(df["gross_output"].to_numpy(), "gross_output", path)
    dup = df.duplicated(subset=["year", "country", "industry"])
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise ValidationError(f"duplicate gross-output record in {path}, row {row + 2}")
    return df


def assemble_table(year, flows_df, fd_df, out_df) -> IOTable:
    """Build a dense table for one year.

    The gross-output file declares the node registry: every flow or
    final-demand record must reference nodes present there.
    """
    out_y = out_df[out_df["year"] == year]
    if out_y.empty:
        raise ValidationError(f"no gross-output records for year {year}")
    index = NodeIndex(sorted(out_y["country"].unique()), sorted(out_y["industry"].unique()))
    ng = index.size
    if len(out_y) != ng:
        seen = set(zip(out_y["country"], out_y["industry"]))
        missing = [n for n in index.nodes() if n not in seen]
        raise ValidationError(
            f"gross-output file must cover the full country x industry grid for "
            f"year {year}; missing {missing[:5]}"
        )

    gross_output = np.zeros(ng)
    gross_output[_positions(out_y, "country", "industry", index, "gross-output")] = (
        out_y["gross_output"].to_numpy()
    )

    flows = np.zeros((ng, ng))
    fl_y = flows_df[flows_df["year"] == year]
    if not fl_y.empty:
        src = _positions(fl_y, "src_country", "src_industry", index, "flow")
        dst = _positions(fl_y, "dst_country", "dst_industry", index, "flow")
        flows[src, dst] = fl_y["value"].to_numpy()

    dest = np.zeros((ng, index.n_countries))
    fd_y = fd_df[fd_df["year"] == year]
    if not fd_y.empty:
        unknown = ~fd_y["dst_country"].isin(index.countries)
        if unknown.any():
            bad = fd_y["dst_country"][unknown].iloc[0]
            raise ValidationError(f"final-demand record references unknown country {bad!r}")
        src = _positions(fd_y, "src_country", "src_industry", index, "final-demand")
        dst_c = fd_y["dst_country"].map(index._country_pos).to_numpy()
        dest[src, dst_c] = fd_y["value"].to_numpy()

    return IOTable(
        year=year, index=index, flows=flows, gross_output=gross_output, final_demand_dest=dest
    )


def _positions(df, country_col, industry_col, index, what):
    unknown = ~df[country_col].isin(index.countries)
    if unknown.any():
        bad = df[country_col][unknown].iloc[0]
        raise ValidationError(f"{what} record references unknown country {bad!r}")
    unknown = ~df[industry_col].isin(index.industries)
    if unknown.any():
        bad = df[industry_col][unknown].iloc[0]
        raise ValidationError(f"{what} record references unknown industry {bad!r}")
    pos = df[country_col].map(index._country_pos).to_numpy() * index.n_industries
    return pos + df[industry_col].map(index._industry_pos).to_numpy()


def load_io_table(directory, year) -> IOTable:
    """Load one year from a directory holding flows.csv, final_demand.csv, gross_output.csv."""
    return load_io_tables(
        os.path.join(directory, "flows.csv"),
        os.path.join(directory, "final_demand.csv"),
        os.path.join(directory, "gross_output.csv"),
        years=[year],
    )[year]


def load_io_tables(flows_path, final_demand_path, output_path, years=None) -> dict:
    """Load every requested year into {year: IOTable}."""
    start = time.perf_counter()
    flows_df = read_flow_file(flows_path)
    fd_df = read_final_demand_file(final_demand_path)
    out_df = read_output_file(output_path)
    available = sorted(out_df["year"].unique())
    if years is None:
        years = available
    else:
        missing = sorted(set(years) - set(available))
        if missing:
            raise ValidationError(f"years {missing} absent from {output_path}")
    tables = {int(y): assemble_table(int(y), flows_df, fd_df, out_df) for y in years}
    logger.info(
        "loaded %d year(s), NG=%d, in %.2fs",
        len(tables),
        next(iter(tables.values())).ng if tables else 0,
        time.perf_counter() - start,
    )
    return tables


def _fmt(x: float) -> str:
    """Shortest decimal string that round-trips the float exactly."""
    return repr(float(x))


def write_io_table(table: IOTable, directory):
    """Write the canonical serialization (sorted rows, nonzero records only)."""
    os.makedirs(directory, exist_ok=True)
    idx = table.index

    lines = [",".join(FLOW_COLUMNS)]
    for j, (cj, gj) in enumerate(idx.nodes()):
        row = table.flows[j]
        for i in np.flatnonzero(row):
            ci, gi = idx.node(int(i))
            lines.append(f"{table.year},{cj},{gj},{ci},{gi},{_fmt(row[i])}")
    with open(os.path.join(directory, "flows.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    lines = [",".join(FINAL_DEMAND_COLUMNS)]
    for n, (c, g) in enumerate(idx.nodes()):
        if table.final_demand_dest is not None:
            row = table.final_demand_dest[n]
            for ci in np.flatnonzero(row):
                lines.append(f"{table.year},{c},{g},{idx.countries[ci]},{_fmt(row[ci])}")
        elif table.final_demand[n]:
            # Without destination detail the canonical form books the
            # total against the producing country itself.
            lines.append(f"{table.year},{c},{g},{c},{_fmt(table.final_demand[n])}")
    with open(os.path.join(directory, "final_demand.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    lines = [",".join(OUTPUT_COLUMNS)]
    for n, (c, g) in enumerate(idx.nodes()):
        lines.append(f"{table.year},{c},{g},{_fmt(table.gross_output[n])}")
    with open(os.path.join(directory, "gross_output.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def spectral_radius(matrix: np.ndarray) -> float:
    """Largest |eigenvalue|, with cheap bounds for the common cases."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    amax = np.abs(m).max(initial=0.0)
    if amax == 0.0:
        return 0.0
    # For nonnegative matrices the radius is bounded by max row/column sum.
    if np.all(m >= 0):
        bound = min(m.sum(axis=0).max(), m.sum(axis=1).max())
        if bound < 1.0:
            return float(bound)
    if n <= 800:
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    rng = np.random.default_rng(0)
    v = rng.random(n) + 0.5
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(500):
        w = m @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - rho) < 1e-12 * max(norm, 1.0):
            return norm
        rho = norm
    return rho


def build_coefficients(table: IOTable) -> CoefficientMatrix:
    """Input shares B = flows / gross output of the buyer.

    Zero-output columns are defined as zero rather than an error (dead
    sectors stay in the grid). Productivity is validated: the spectral
    radius of B must lie below one for total requirements to converge.
    """
    q = table.gross_output
    B = np.divide(
        table.flows, q[np.newaxis, :], out=np.zeros_like(table.flows), where=q[np.newaxis, :] > 0
    )
    if B.max(initial=0.0) > 1.0 + 1e-12:
        j, i = np.unravel_index(int(np.argmax(B)), B.shape)
        raise ValidationError(
            f"input share above 1 for {table.index.node(j)} -> {table.index.node(i)} "
            f"(year {table.year}): flow exceeds buyer gross output"
        )
    rho = spectral_radius(B)
    if rho >= 1.0 - 1e-9:
        raise NumericalError(
            f"non-productive economy in year {table.year}: spectral radius {rho:.6f} >= 1"
        )
    return CoefficientMatrix(year=table.year, index=table.index, B=B)


def apply_mask(table: IOTable, spec: MaskSpec) -> IOTable:
    """Remove countries and/or zero within-country flow blocks."""
    idx = table.index
    unknown = spec.drop_countries - set(idx.countries)
    if unknown:
        raise ValidationError(f"cannot drop countries absent from registry: {sorted(unknown)}")
    keep_countries = [c for c in idx.countries if c not in spec.drop_countries]
    if not keep_countries:
        raise ValidationError("mask removes every country (empty network)")

    if spec.drop_countries:
        keep = np.concatenate([np.arange(idx.size)[idx.country_slice(c)] for c in keep_countries])
        keep_c = np.array([idx._country_pos[c] for c in keep_countries])
        new_index = NodeIndex(keep_countries, idx.industries)
        flows = table.flows[np.ix_(keep, keep)].copy()
        gross_output = table.gross_output[keep].copy()
        if table.final_demand_dest is not None:
            dest = table.final_demand_dest[np.ix_(keep, keep_c)].copy()
            final_demand = None
        else:
            dest = None
            final_demand = table.final_demand[keep].copy()
    else:
        new_index = idx
        flows = table.flows.copy()
        gross_output = table.gross_output.copy()
        dest = None if table.final_demand_dest is None else table.final_demand_dest.copy()
        final_demand = table.final_demand.copy() if dest is None else None

    if spec.drop_domestic:
        targets = (
            [spec.foreign_only_for] if spec.foreign_only_for is not None else new_index.countries
        )
        for c in targets:
            if c not in new_index.countries:
                raise ValidationError(f"foreign_only_for country {c!r} not in registry")
            s = new_index.country_slice(c)
            flows[s, s] = 0.0

    return IOTable(
        year=table.year,
        index=new_index,
        flows=flows,
        gross_output=gross_output,
        final_demand=final_demand,
        final_demand_dest=dest,
    )


def aggregate_final_demand(table: IOTable, foreign_only: bool = False) -> np.ndarray:
    """Per-node shipments to final demand: world total, or excluding own country."""
    if not foreign_only:
        return table.final_demand.copy()
    if table.final_demand_dest is None:
        raise ValidationError(
            "foreign-only final demand requested but destination detail is not available"
        )
    own = table.final_demand_dest[np.arange(table.ng), table.index.country_of()]
    return table.final_demand - own


def scale_flows_and_output(table: IOTable, factor: float) -> IOTable:
    """Uniformly rescale the economy; input shares are invariant to this."""
    if factor <= 0:
        raise ValidationError("scale factor must be positive")
    return IOTable(
        year=table.year,
        index=table.index,
        flows=table.flows * factor,
        gross_output=table.gross_output * factor,
        final_demand=None if table.final_demand_dest is not None else table.final_demand * factor,
        final_demand_dest=(
            None if table.final_demand_dest is None else table.final_demand_dest * factor
        ),
    )
