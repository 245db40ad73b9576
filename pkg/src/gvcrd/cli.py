"""Command-line interface.

Each subcommand runs one pipeline stage on explicit files, so staged,
file-mediated execution composes to exactly the same artifacts as the
monolithic ``pipeline`` command. Exit codes: 0 success, 2 validation
error, 3 numerical error, 4 specification/rank error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import pandas as pd

from . import __version__
from . import centrality as ct
from . import content as cn
from . import productivity as pr
from . import rdstocks as rs
from .errors import NumericalError, SpecificationError, ValidationError
from .iotable import MaskSpec, apply_mask, aggregate_final_demand, build_coefficients, \
    load_io_tables, write_io_table
from .pipeline import RunConfig, fits_frame, load_inputs, prepare_panel, run_pipeline, \
    run_specifications, write_frame
from .samples import ROW_CODE
from .synthetic import SynthConfig, gen_economy

logger = logging.getLogger(__name__)


def _table_args(p):
    p.add_argument("--flows", required=True)
    p.add_argument("--final-demand", required=True)
    p.add_argument("--gross-output", required=True)
    p.add_argument("--years", type=int, nargs="*", default=None)


def _add_ingest(sub):
    p = sub.add_parser("ingest", help="validate tables and write their canonical form")
    _table_args(p)
    p.add_argument("--out", required=True)


def _add_centrality(sub):
    p = sub.add_parser("centrality", help="masked Katz-Bonacich scores plus default labels")
    _table_args(p)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--drop", nargs="*", default=[ROW_CODE], help="countries to drop")
    p.add_argument("--keep-domestic", action="store_true")
    p.add_argument("--literal", action="store_true",
                   help="pair the stated normalization with each direction (degenerate)")
    p.add_argument("--sample", nargs="*", default=None, help="classification countries")
    p.add_argument("--mode", choices=["tertile", "topk"], default="tertile")
    p.add_argument("--k", type=int, default=5)


def _add_classify(sub):
    p = sub.add_parser("classify", help="relabel a centrality score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample", nargs="*", default=None)
    p.add_argument("--mode", choices=["tertile", "topk"], default="tertile")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--group-direction", choices=["both", "forward", "backward"], default="both")


def _add_tfp(sub):
    p = sub.add_parser("tfp", help="smoothed labor shares and the multilateral TFP index")
    p.add_argument("--sea", required=True)
    p.add_argument("--out", required=True, help="TFP CSV")
    p.add_argument("--summary", default=None)
    p.add_argument("--shares", default=None, help="fitted labor shares CSV")


def _add_rdstock(sub):
    p = sub.add_parser("rdstock", help="deflate expenditures and build perpetual-inventory stocks")
    p.add_argument("--rd", required=True)
    p.add_argument("--deflators", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delta", type=float, default=0.15)


def _add_content(sub):
    p = sub.add_parser("content", help="content of final goods, partitioned by exporter class")
    _table_args(p)
    p.add_argument("--stocks", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="regressor CSV")
    p.add_argument("--decomposition", default=None)
    p.add_argument("--shares-out", default=None, help="directory for the share tables")
    p.add_argument("--sample", nargs="*", default=None, help="importer countries")
    p.add_argument("--foreign-f", action="store_true", help="foreign-only final demand")
    p.add_argument("--manufacturing", nargs="*", default=None)


def _add_regress(sub):
    p = sub.add_parser("regress", help="fixed-effects spillover regressions")
    p.add_argument("--regressors", required=True)
    p.add_argument("--tfp", required=True)
    p.add_argument("--out", required=True, help="output CSV of estimates")
    p.add_argument("--text-out", default=None)
    p.add_argument("--group-mode", choices=["split", "combined", "both"], default="split")
    p.add_argument("--splits", nargs="*", default=None)
    p.add_argument("--lag", type=int, default=0)
    p.add_argument("--interactions", type=int, default=None, metavar="BREAK_YEAR")


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic economy with planted truth")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--countries", type=int, default=21)
    p.add_argument("--industries", type=int, default=14)
    p.add_argument("--start-year", type=int, default=1995)
    p.add_argument("--end-year", type=int, default=2007)
    p.add_argument("--hub-count", type=int, default=2)
    p.add_argument("--hub-strength", type=float, default=8.0)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--suppliers-per-buyer", type=int, default=None)
    p.add_argument("--include-row", action="store_true")


def _add_pipeline(sub):
    p = sub.add_parser("pipeline", help="run every stage from a config file")
    p.add_argument("--config", default=None, help="key = value file")
    p.add_argument("--flows")
    p.add_argument("--final-demand", dest="final_demand")
    p.add_argument("--gross-output", dest="gross_output")
    p.add_argument("--sea")
    p.add_argument("--rd")
    p.add_argument("--deflators")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--classification", choices=["tertile", "topk"], default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--group-mode", dest="group_mode",
                   choices=["split", "combined", "both"], default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--start-year", dest="start_year", type=int, default=None)
    p.add_argument("--end-year", dest="end_year", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gvcrd",
        description="R&D spillovers through global value chains",
    )
    parser.add_argument("--version", action="version", version=f"gvcrd {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_ingest, _add_centrality, _add_classify, _add_tfp, _add_rdstock,
                _add_content, _add_regress, _add_synth, _add_pipeline):
        add(sub)
    return parser


def _load_tables(args):
    return load_io_tables(args.flows, args.final_demand, args.gross_output, years=args.years)


def cmd_ingest(args):
    tables = _load_tables(args)
    for year in sorted(tables):
        write_io_table(tables[year], os.path.join(args.out, str(year)))
    print(f"ingested {len(tables)} year(s) into {args.out}")


def _scores_for(tables, args):
    drop = set(args.drop) if getattr(args, "drop", None) else set()
    scores = []
    for year in sorted(tables):
        table = tables[year]
        spec = MaskSpec(
            drop_countries=drop & set(table.index.countries),
            drop_domestic=not args.keep_domestic,
        )
        scores.append(ct.compute_centrality(apply_mask(table, spec), lam=args.lam,
                                            literal=args.literal))
    return scores


def cmd_centrality(args):
    tables = _load_tables(args)
    scores = _scores_for(tables, args)
    labels = ct.build_labels(
        scores, sample_countries=args.sample, mode=args.mode,
        k=args.k if args.mode == "topk" else None,
    )
    write_frame(labels, args.out)
    print(f"wrote centrality for {len(scores)} year(s) to {args.out}")


def cmd_classify(args):
    raw = pd.read_csv(args.scores)
    needed = {"year", "country", "industry", "forward", "backward"}
    missing = needed - set(raw.columns)
    if missing:
        raise ValidationError(f"scores file missing columns {sorted(missing)}")
    scores = []
    for year, chunk in raw.groupby("year", sort=True):
        index = ct.NodeIndex(sorted(chunk["country"].unique()),
                             sorted(chunk["industry"].unique()))
        fwd = pd.Series(
            chunk["forward"].to_numpy(),
            index=[index.position(c, g) for c, g in zip(chunk["country"], chunk["industry"])],
        ).sort_index()
        back = pd.Series(
            chunk["backward"].to_numpy(),
            index=[index.position(c, g) for c, g in zip(chunk["country"], chunk["industry"])],
        ).sort_index()
        if len(fwd) != index.size:
            raise ValidationError(f"scores for year {year} do not cover the full grid")
        scores.append(
            ct.CentralityScores(
                year=int(year), index=index, forward=fwd.to_numpy(),
                backward=back.to_numpy(), lam=0.5,
            )
        )
    labels = ct.build_labels(
        scores, sample_countries=args.sample, mode=args.mode,
        k=args.k if args.mode == "topk" else None, group_direction=args.group_direction,
    )
    write_frame(labels, args.out)
    print(f"classified {len(scores)} year(s) into {args.out}")


def cmd_tfp(args):
    sea = pd.read_csv(args.sea)
    model = pr.smooth_labor_shares(sea)
    tfp, drops = pr.caves_tfp(sea, model)
    write_frame(tfp, args.out)
    if args.summary:
        write_frame(pr.tfp_summary(tfp), args.summary)
    if args.shares:
        write_frame(model.fitted, args.shares)
    print(f"wrote {len(tfp)} TFP rows to {args.out} ({len(drops)} dropped)")


def cmd_rdstock(args):
    rd = pd.read_csv(args.rd)
    deflators = pd.read_csv(args.deflators)
    stocks, notes = rs.perpetual_inventory(rs.deflate_expenditure(rd, deflators),
                                           delta=args.delta)
    write_frame(stocks, args.out)
    print(f"wrote {len(stocks)} stock rows to {args.out} ({len(notes)} notes)")


def cmd_content(args):
    tables = _load_tables(args)
    stocks = pd.read_csv(args.stocks)
    labels = pd.read_csv(args.labels, keep_default_na=False)
    sample = args.sample or sorted(set(labels["country"]))
    manufacturing = args.manufacturing or sorted(stocks["industry"].unique())
    from .samples import importer_sets

    sets = importer_sets(sample)
    parts, decomps = [], []
    for year in sorted(tables):
        table = tables[year]
        coeff = build_coefficients(table)
        D = rs.intensity(stocks, table, manufacturing=manufacturing).D
        f = aggregate_final_demand(table, foreign_only=args.foreign_f)
        _, T = cn.rd_content(D, coeff, f)
        parts.append(
            cn.partition_content(T, D, labels, table.index, year,
                                 importer_sets=sets, importer_countries=sample)
        )
        decomps.append(cn.direct_indirect_split(coeff, D, f, labels,
                                                importer_countries=sample))
    regressors = (
        pd.concat(parts, ignore_index=True)
        .sort_values(["country", "industry", "year"]).reset_index(drop=True)
    )
    decomposition = pd.concat(decomps, ignore_index=True)
    write_frame(regressors, args.out)
    if args.decomposition:
        write_frame(decomposition, args.decomposition)
    if args.shares_out:
        os.makedirs(args.shares_out, exist_ok=True)
        for name, grouping in [
            ("shares_by_industry", "industry"),
            ("shares_by_year", "year"),
            ("middle_subcategories", "middle_subcategory"),
        ]:
            write_frame(cn.shares_report(decomposition, grouping),
                        os.path.join(args.shares_out, f"{name}.csv"))
    print(f"wrote {len(regressors)} regressor rows to {args.out}")


def cmd_regress(args):
    regressors = pd.read_csv(args.regressors)
    tfp = pd.read_csv(args.tfp)
    panel = prepare_panel(regressors, tfp)
    config = RunConfig(
        group_mode=args.group_mode,
        importer_splits=args.splits or ["ALL", "EUR", "NA", "G5", "nonG5"],
        interaction_year=args.interactions,
        lag_robustness=False,
        topk_robustness=False,
    )
    fits = run_specifications(
        panel, config, "cli",
        lag=args.lag, interactions=args.interactions is not None,
    )
    write_frame(fits_frame(fits), args.out)
    if args.text_out:
        from .regression import format_text_table

        with open(args.text_out, "w", encoding="utf-8") as fh:
            fh.write(format_text_table(fits, title="Specification: cli"))
    print(f"estimated {len(fits)} specification(s) into {args.out}")


def cmd_synth(args):
    config = SynthConfig(
        seed=args.seed,
        countries=args.countries,
        industries=args.industries,
        start_year=args.start_year,
        end_year=args.end_year,
        hub_count=args.hub_count,
        hub_strength=args.hub_strength,
        noise_sigma=args.noise_sigma,
        suppliers_per_buyer=args.suppliers_per_buyer,
        include_row=args.include_row,
    )
    economy = gen_economy(config)
    economy.write(args.out)
    print(f"wrote synthetic economy (seed {args.seed}) to {args.out}")


def cmd_pipeline(args):
    overrides = {
        k: getattr(args, k)
        for k in (
            "flows", "final_demand", "gross_output", "sea", "rd", "deflators", "output_dir",
            "lam", "delta", "classification", "topk", "group_mode", "workers",
            "start_year", "end_year",
        )
        if getattr(args, k, None) is not None
    }
    if args.config:
        config = RunConfig.from_file(args.config, overrides)
    else:
        config = RunConfig(**overrides)
    result = run_pipeline(config)
    print(
        f"pipeline complete: {len(result.fits)} specification(s), "
        f"{len(result.panel)} panel rows, artifacts in {config.output_dir}"
    )


COMMANDS = {
    "ingest": cmd_ingest,
    "centrality": cmd_centrality,
    "classify": cmd_classify,
    "tfp": cmd_tfp,
    "rdstock": cmd_rdstock,
    "content": cmd_content,
    "regress": cmd_regress,
    "synth": cmd_synth,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except SpecificationError as exc:
        print(f"specification error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
