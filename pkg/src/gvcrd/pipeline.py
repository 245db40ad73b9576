"""End-to-end orchestration from a declarative run configuration.

Stages: ingest tables -> TFP -> R&D stocks -> centrality -> labels ->
content regressors -> regressions -> tables. Year-level computations
run in parallel (threads; the heavy work is BLAS); everything else is
sequential and deterministic. Artifacts never embed timestamps, so two
runs over the same inputs and configuration are byte-identical.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from . import centrality as ct
from . import content as cn
from . import productivity as pr
from . import rdstocks as rs
from . import regression as rg
from .errors import SpecificationError, ValidationError
from .iotable import IOTable, MaskSpec, apply_mask, aggregate_final_demand, \
    build_coefficients, load_io_tables, _fmt
from .samples import IMPORTER_SET_NAMES, ROW_CODE, importer_sets

logger = logging.getLogger(__name__)

COMBINED_REGRESSORS = ["ln_domestic", "ln_high", "ln_middle", "ln_low"]
GROUP_REGRESSORS = {
    "A": ["ln_domestic", "ln_high_A", "ln_middle_A", "ln_low_A"],
    "B": ["ln_domestic", "ln_high_B", "ln_middle_B", "ln_low_B"],
    "combined": COMBINED_REGRESSORS,
}

DISPLAY_NAMES = {"ln_domestic": "domestic"}
for _k in ("high", "middle", "low"):
    for _suffix, _label in [("", ""), ("_A", ""), ("_B", "")]:
        DISPLAY_NAMES[f"ln_{_k}{_suffix}"] = _k.capitalize()


def display_name(term: str) -> str:
    if "_x_post" in term:
        base, year = term.split("_x_post")
        return f"{display_name(base)} x Year^{year[2:] if len(year) == 4 else year}-"
    return DISPLAY_NAMES.get(term, term)


@dataclass
class RunConfig:
    """Declarative description of one pipeline run."""

    flows: str | None = None
    final_demand: str | None = None
    gross_output: str | None = None
    sea: str | None = None
    rd: str | None = None
    deflators: str | None = None
    output_dir: str = "artifacts"
    start_year: int | None = None
    end_year: int | None = None
    sample_countries: list | None = None
    drop_countries: list = field(default_factory=lambda: [ROW_CODE])
    lam: float = 0.5
    delta: float = 0.15
    classification: str = "tertile"
    topk: int = 5
    classify_within_sample: bool = True
    group_direction: str = "both"
    group_mode: str = "split"
    importer_splits: list = field(default_factory=lambda: list(IMPORTER_SET_NAMES))
    f_aggregation: str = "world"
    manufacturing: list | None = None
    lag_robustness: bool = True
    topk_robustness: bool = True
    interaction_year: int | None = 2002
    centrality_literal: bool = False
    workers: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.classification not in ("tertile", "topk"):
            raise ValidationError(f"unknown classification {self.classification!r}")
        if self.group_mode not in ("split", "combined", "both"):
            raise ValidationError(f"unknown group_mode {self.group_mode!r}")
        if self.f_aggregation not in ("world", "foreign"):
            raise ValidationError(f"unknown f_aggregation {self.f_aggregation!r}")
        if self.start_year is not None and self.end_year is not None:
            if self.end_year < self.start_year:
                raise ValidationError("empty sample window")
        unknown = set(self.importer_splits) - set(IMPORTER_SET_NAMES)
        if unknown:
            raise ValidationError(f"unknown importer splits: {sorted(unknown)}")

    @property
    def group_modes(self):
        if self.group_mode == "split":
            return ["A", "B"]
        if self.group_mode == "combined":
            return ["combined"]
        return ["A", "B", "combined"]

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        """Parse a plain key = value file; explicit overrides win."""
        values = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in fields:
                    raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _parse_config_value(key, value, fields[key])
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**values)


def _parse_config_value(key, value, field_def):
    if value.lower() in ("none", ""):
        return None
    ftype = str(field_def.type)
    if "bool" in ftype:
        if value.lower() in ("true", "yes", "1"):
            return True
        if value.lower() in ("false", "no", "0"):
            return False
        raise ValidationError(f"config key {key}: expected boolean, got {value!r}")
    if "list" in ftype:
        return [v.strip() for v in value.split(",") if v.strip()]
    if "int" in ftype:
        return int(value)
    if "float" in ftype:
        return float(value)
    return value


@dataclass
class PipelineInputs:
    """In-memory inputs; the file-based path loads into this."""

    tables: dict
    sea: pd.DataFrame
    rd: pd.DataFrame
    deflators: pd.DataFrame


@dataclass
class PipelineResult:
    config: RunConfig
    tfp: pd.DataFrame
    tfp_summary: pd.DataFrame
    share_model: pr.LaborShareModel
    stocks: pd.DataFrame
    labels: pd.DataFrame
    centrality_summary: pd.DataFrame
    regressors: pd.DataFrame
    decomposition: pd.DataFrame
    panel: pd.DataFrame
    fits: list
    drop_log: pd.DataFrame


def _map_years(fn, years, workers):
    years = sorted(years)
    if workers is None:
        workers = min(len(years), os.cpu_count() or 1)
    if workers <= 1 or len(years) <= 1:
        return {y: fn(y) for y in years}
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(fn, years))
    return dict(zip(years, results))


def load_inputs(config: RunConfig) -> PipelineInputs:
    for name in ("flows", "final_demand", "gross_output", "sea", "rd", "deflators"):
        if getattr(config, name) is None:
            raise ValidationError(f"config is missing the {name} input path")
    tables = load_io_tables(config.flows, config.final_demand, config.gross_output)
    years = sorted(tables)
    lo = config.start_year if config.start_year is not None else years[0]
    hi = config.end_year if config.end_year is not None else years[-1]
    tables = {y: t for y, t in tables.items() if lo <= y <= hi}
    if not tables:
        raise ValidationError(f"no tables inside the window {lo}-{hi}")
    sea = pd.read_csv(config.sea)
    rd = pd.read_csv(config.rd)
    deflators = pd.read_csv(config.deflators)
    sea = sea[(sea["year"] >= lo) & (sea["year"] <= hi)]
    rd_window = rd[(rd["year"] >= lo) & (rd["year"] <= hi)]
    if rd_window.empty:
        raise ValidationError(f"no R&D records inside the window {lo}-{hi}")
    # stocks need the full history for initial levels and growth rates
    return PipelineInputs(tables=tables, sea=sea.reset_index(drop=True), rd=rd,
                          deflators=deflators)


def compute_scores(inputs: PipelineInputs, config: RunConfig) -> dict:
    drop = set(config.drop_countries or [])

    def one(year):
        table = inputs.tables[year]
        spec = MaskSpec(drop_countries=drop & set(table.index.countries), drop_domestic=True)
        masked = apply_mask(table, spec)
        return ct.compute_centrality(masked, lam=config.lam, literal=config.centrality_literal)

    return _map_years(one, inputs.tables, config.workers)


def compute_labels(scores: dict, config: RunConfig, sample) -> pd.DataFrame:
    return ct.build_labels(
        scores.values(),
        sample_countries=sample if config.classify_within_sample else None,
        mode=config.classification,
        k=config.topk if config.classification == "topk" else None,
        group_direction=config.group_direction,
    )


def build_regressors(inputs: PipelineInputs, config: RunConfig, labels: pd.DataFrame,
                     stocks: pd.DataFrame, sample):
    """Per-year content partitions and direct/indirect decompositions."""
    sets = {
        name: members
        for name, members in importer_sets(sample).items()
        if name in config.importer_splits
    }
    manufacturing = config.manufacturing
    if manufacturing is None:
        manufacturing = sorted(stocks["industry"].unique())

    def one(year):
        table = inputs.tables[year]
        coeff = build_coefficients(table)
        D = rs.intensity(stocks, table, manufacturing=manufacturing).D
        f = aggregate_final_demand(table, foreign_only=config.f_aggregation == "foreign")
        _, T = cn.rd_content(D, coeff, f)
        part = cn.partition_content(
            T, D, labels, table.index, year, importer_sets=sets, importer_countries=sample
        )
        decomp = cn.direct_indirect_split(coeff, D, f, labels, importer_countries=sample)
        return part, decomp

    results = _map_years(one, inputs.tables, config.workers)
    regressors = pd.concat([results[y][0] for y in sorted(results)], ignore_index=True)
    decomposition = pd.concat([results[y][1] for y in sorted(results)], ignore_index=True)
    regressors = regressors.sort_values(["country", "industry", "year"]).reset_index(drop=True)
    return regressors, decomposition


def prepare_panel(regressors: pd.DataFrame, tfp: pd.DataFrame) -> pd.DataFrame:
    """Merge outcomes with regressors and add the group-combined terms."""
    panel = regressors.merge(
        tfp[["country", "industry", "year", "ln_tfp"]],
        on=["country", "industry", "year"],
        how="inner",
        validate="one_to_one",
    )
    for klass in ("high", "middle", "low"):
        total = panel[f"{klass}_A"] + panel[f"{klass}_B"]
        panel[f"ln_{klass}"] = np.where(total > 0, np.log(total), np.nan)
    panel["importer_flags"] = panel["importer_flags"].fillna("")
    return panel.sort_values(["country", "industry", "year"]).reset_index(drop=True)


def _in_split(panel: pd.DataFrame, name: str) -> pd.Series:
    return panel["importer_flags"].str.split("|", regex=False).map(lambda fl: name in fl)


def run_specifications(panel: pd.DataFrame, config: RunConfig, table_name: str,
                       lag: int = 0, interactions: bool = False) -> list:
    """One FitResult per (group mode, importer split), in table order."""
    fits = []
    for group in config.group_modes:
        x_cols = list(GROUP_REGRESSORS[group])
        for split in config.importer_splits:
            rows = panel[_in_split(panel, split)]
            if rows.empty:
                logger.info("importer split %s is empty; specification skipped", split)
                continue
            data = rows
            cols = x_cols
            if lag:
                data = rg.lag_regressors(data, x_cols, lag=lag)
            if interactions:
                if config.interaction_year is None:
                    raise SpecificationError("interaction table requested without a break year")
                class_cols = [c for c in x_cols if c != "ln_domestic"]
                data = rg.add_interactions(data, class_cols, config.interaction_year)
                cols = x_cols + [
                    f"{c}_x_post{config.interaction_year}" for c in class_cols
                ]
            spec = {
                "table": table_name,
                "group": group,
                "importer_set": split,
                "column": f"{group}/{split}",
                "lag": lag,
                "classification": config.classification
                if table_name != f"top{config.topk}" else "topk",
            }
            try:
                fits.append(
                    rg.fit_fixed_effects(data, "ln_tfp", cols, cluster_col="industry", spec=spec)
                )
            except SpecificationError as exc:
                logger.warning("specification %s skipped: %s", spec["column"], exc)
    if not fits:
        raise SpecificationError(f"no estimable specifications for table {table_name}")
    return fits


def run_pipeline_data(inputs: PipelineInputs, config: RunConfig) -> PipelineResult:
    """All stages over in-memory inputs."""
    share_model = pr.smooth_labor_shares(inputs.sea)
    tfp, tfp_drops = pr.caves_tfp(inputs.sea, share_model)
    tfp_summary = pr.tfp_summary(tfp)

    rd_real = rs.deflate_expenditure(inputs.rd, inputs.deflators)
    stocks, stock_notes = rs.perpetual_inventory(rd_real, delta=config.delta)

    sample = config.sample_countries
    if sample is None:
        sample = sorted(inputs.sea["country"].unique())
    registry = next(iter(inputs.tables.values())).index.countries
    missing = sorted(set(sample) - set(registry))
    if missing:
        raise ValidationError(f"sample countries missing from the tables: {missing}")

    scores = compute_scores(inputs, config)
    labels = compute_labels(scores, config, sample)
    centrality_summary = ct.centrality_summary(labels)

    regressors, decomposition = build_regressors(inputs, config, labels, stocks, sample)
    panel = prepare_panel(regressors, tfp)

    fits = run_specifications(panel, config, "main")
    if config.interaction_year is not None:
        fits += run_specifications(panel, config, "interactions", interactions=True)
    if config.lag_robustness:
        fits += run_specifications(panel, config, "lag1", lag=1)
    if config.topk_robustness and config.classification != "topk":
        alt = dataclasses.replace(config, classification="topk")
        alt_labels = compute_labels(scores, alt, sample)
        alt_regressors, _ = build_regressors(inputs, alt, alt_labels, stocks, sample)
        alt_panel = prepare_panel(alt_regressors, tfp)
        fits += run_specifications(alt_panel, alt, f"top{config.topk}")

    drop_rows = [
        ("tfp", f"{r.country}/{r.industry}/{r.year}", r.reason)
        for r in tfp_drops.itertuples(index=False)
    ]
    drop_rows += [
        ("rd_stock", f"{r.country}/{r.industry}/{r.year}", r.note)
        for r in stock_notes.itertuples(index=False)
    ]
    for fit in fits:
        for col, count in sorted(fit.dropped.items()):
            drop_rows.append(
                (f"regression:{fit.spec['table']}:{fit.spec['column']}", col,
                 f"{count} rows missing")
            )
    drop_log = pd.DataFrame(drop_rows, columns=["stage", "key", "reason"])

    return PipelineResult(
        config=config,
        tfp=tfp,
        tfp_summary=tfp_summary,
        share_model=share_model,
        stocks=stocks,
        labels=labels,
        centrality_summary=centrality_summary,
        regressors=regressors,
        decomposition=decomposition,
        panel=panel,
        fits=fits,
        drop_log=drop_log,
    )


def write_frame(df: pd.DataFrame, path):
    """Deterministic CSV: repr floats (exact round-trip), empty for NaN."""
    out = df.copy()
    for col in out.columns:
        if out[col].dtype == float:
            out[col] = out[col].map(lambda x: "" if pd.isna(x) else _fmt(x))
    out.to_csv(path, index=False, lineterminator="\n")


def fits_frame(fits) -> pd.DataFrame:
    rows = []
    for fit in fits:
        for term in fit.params.index:
            rows.append(
                {
                    "table": fit.spec.get("table", ""),
                    "group": fit.spec.get("group", ""),
                    "importer_set": fit.spec.get("importer_set", ""),
                    "term": term,
                    "display": display_name(term),
                    "estimate": fit.params[term],
                    "se": fit.se[term],
                    "t": fit.tstats[term],
                    "p": fit.pvalues[term],
                    "stars": rg.stars(fit.pvalues[term]),
                    "n": fit.nobs,
                    "r2": fit.r2,
                    "r2_within": fit.r2_within,
                    "clusters": fit.n_clusters,
                }
            )
    return pd.DataFrame(rows)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_artifacts(result: PipelineResult, output_dir=None) -> str:
    """Write every table plus the manifest; no timestamps anywhere."""
    config = result.config
    out = output_dir or config.output_dir
    data_dir = os.path.join(out, "data")
    tab_dir = os.path.join(out, "tables")
    os.makedirs(data_dir, exist_ok=True)
    os.makedirs(tab_dir, exist_ok=True)

    write_frame(result.tfp, os.path.join(data_dir, "tfp.csv"))
    write_frame(result.share_model.fitted, os.path.join(data_dir, "labor_shares.csv"))
    write_frame(result.stocks, os.path.join(data_dir, "rd_stocks.csv"))
    write_frame(result.labels, os.path.join(data_dir, "centrality.csv"))
    write_frame(result.regressors, os.path.join(data_dir, "regressors.csv"))
    write_frame(result.decomposition, os.path.join(data_dir, "decomposition.csv"))
    write_frame(result.drop_log, os.path.join(data_dir, "drop_log.csv"))

    write_frame(result.tfp_summary, os.path.join(tab_dir, "tfp_summary.csv"))
    write_frame(result.centrality_summary, os.path.join(tab_dir, "centrality_summary.csv"))
    write_frame(
        cn.shares_report(result.decomposition, "industry"),
        os.path.join(tab_dir, "shares_by_industry.csv"),
    )
    write_frame(
        cn.shares_report(result.decomposition, "year"),
        os.path.join(tab_dir, "shares_by_year.csv"),
    )
    write_frame(
        cn.shares_report(result.decomposition, "middle_subcategory"),
        os.path.join(tab_dir, "middle_subcategories.csv"),
    )

    frame = fits_frame(result.fits)
    write_frame(frame, os.path.join(tab_dir, "regressions.csv"))
    for table in sorted({f.spec["table"] for f in result.fits}):
        chunk = [f for f in result.fits if f.spec["table"] == table]
        for fit in chunk:
            fit.spec["column"] = f"{fit.spec['group']}/{fit.spec['importer_set']}"
        text = rg.format_text_table(
            chunk, title=f"Specification: {table}", term_order=None
        )
        with open(os.path.join(tab_dir, f"regression_{table}.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(text)

    manifest = {
        "package": {"name": "gvcrd", "version": __version__},
        "config": dataclasses.asdict(config),
        "inputs": {},
        "counts": {
            "tfp_rows": int(len(result.tfp)),
            "stock_rows": int(len(result.stocks)),
            "label_rows": int(len(result.labels)),
            "regressor_rows": int(len(result.regressors)),
            "panel_rows": int(len(result.panel)),
            "specifications": len(result.fits),
            "dropped": int(len(result.drop_log)),
        },
        "status": "complete",
    }
    for name in ("flows", "final_demand", "gross_output", "sea", "rd", "deflators"):
        path = getattr(config, name)
        if path and os.path.exists(path):
            manifest["inputs"][name] = _digest(path)
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def run_pipeline(config: RunConfig) -> PipelineResult:
    """File-based entry point: load, run, write artifacts."""
    inputs = load_inputs(config)
    result = run_pipeline_data(inputs, config)
    write_artifacts(result)
    return result
