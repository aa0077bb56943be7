"""``delaylens`` command line.

Every command writes its artifact plus a ``<name>.manifest.json`` beside
it. Exit codes: 0 success, 1 fatal error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from datetime import date
from pathlib import Path

from . import __version__
from ._parallel import set_threads
from .config import config_hash, load_config
from .evaluation import CVError
from .fixture import dump_json, write_fixture
from .geo import (
    GeometryError,
    build_queen_weights,
    dumps_geojson,
    feature_collection,
    membership_by_centroid,
    membership_by_overlap,
    read_areas,
    read_crosswalk,
)
from .gp import GPFactorizationError
from .ingest import (
    PREMISES,
    SchemaError,
    filter_scope,
    load_schema,
    normalized_text,
    parse_crime_records,
    read_feature_table,
    read_normalized,
)
from .manifest import RunManifest
from .moran import permutation_pseudo_p
from .pipeline import (
    GROUP_LABELS,
    PipelineError,
    build_areas,
    build_event_dataset,
    importance_report,
    run_aggregated,
    run_disaggregated,
)
from .report import aggregated_table, disaggregated_table, importance_table
from .temporal import median_delay_profile, profile_csv

log = logging.getLogger("delaylens")

FATAL = (SchemaError, GeometryError, PipelineError, GPFactorizationError, CVError, OSError, ValueError, KeyError)


def _write(path, text) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _finish(manifest: RunManifest, *artifacts) -> None:
    for a in artifacts:
        manifest.add_output(a)
    manifest.write_for(artifacts[0])


def _resolve_config(args):
    cfg = load_config(args.config)
    cfg["seed"] = int(args.seed)
    return cfg


def _diagnostics_csv(diags) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "reason", "source"])
    for d in diags:
        w.writerow([d.row, d.reason, d.source])
    return buf.getvalue()


# commands -------------------------------------------------------------------


def cmd_ingest(args) -> int:
    schema = load_schema(args.schema)
    records, diags = parse_crime_records(args.crimes, schema, Path(args.crimes).name)
    premises = [p.strip() for p in args.premises.split(",") if p.strip()]
    bad = set(premises) - set(PREMISES)
    if bad:
        raise ValueError(f"unknown premise(s) {sorted(bad)}; choose from {PREMISES}")
    start = date.fromisoformat(args.start) if args.start else date.min
    end = date.fromisoformat(args.end) if args.end else date.max
    scoped = filter_scope(records, (start, end), premises)
    out = Path(args.out)
    events = _write(out / "events.csv", normalized_text(scoped))
    diag_path = _write(out / "diagnostics.csv", _diagnostics_csv(diags))
    m = RunManifest.for_inputs(
        "ingest",
        [args.crimes, args.schema],
        diagnostics=len(diags),
        extra={"parsed": len(records), "retained": len(scoped), "premises": sorted(premises)},
    )
    _finish(m, events, diag_path)
    print(f"ingest: {len(scoped)} events retained, {len(records) - len(scoped)} out of scope, {len(diags)} rejected rows")
    return 0


def cmd_aggregate(args) -> int:
    records = read_normalized(args.events)
    districts = read_areas(args.areas, args.id_property)
    table = read_feature_table(args.tract_features, args.tract_key)
    if args.crosswalk:
        membership = read_crosswalk(args.crosswalk)
    else:
        tracts = read_areas(args.tracts, args.tract_id_property)
        fn = membership_by_overlap if args.membership == "overlap" else membership_by_centroid
        membership = fn([t.area_id for t in tracts], [t.geometry for t in tracts], districts)
    areas, diags = build_areas(records, districts, table, membership, args.population_column)
    out = _write(args.out, dumps_geojson(feature_collection(areas)))
    m = RunManifest.for_inputs(
        "aggregate",
        [args.events, args.areas, args.tract_features, args.tracts or args.crosswalk],
        diagnostics=len(diags),
        extra={"membership": "crosswalk" if args.crosswalk else args.membership, "areas": len(areas)},
    )
    _finish(m, out)
    print(f"aggregate: {len(areas)} areas, {sum(a.m for a in areas)} events located, {len(diags)} unlocated")
    return 0


def cmd_moran(args) -> int:
    areas = read_areas(args.areas, args.id_property)
    usable = [a for a in areas if math.isfinite(getattr(a, args.value))]
    if len(usable) < len(areas):
        log.warning("%d areas without a %s value are left out", len(areas) - len(usable), args.value)
    usable.sort(key=lambda a: a.area_id)
    W = build_queen_weights(usable, connect_islands=args.connect_islands)
    res = permutation_pseudo_p([getattr(a, args.value) for a in usable], W, args.permutations, args.seed, args.mode)
    ids = [a.area_id for a in usable]
    extra = [{"I": r["I"], "pseudo_p": r["pseudo_p"], "quadrant": r["quadrant"]} for r in res.rows(ids)]
    out = _write(args.out, dumps_geojson(feature_collection(usable, extra)))
    table = _write(Path(args.out).with_suffix(".csv"), res.to_csv(ids))
    m = RunManifest.for_inputs(
        "moran",
        [args.areas],
        seed=args.seed,
        extra={"value": args.value, "permutations": args.permutations, "mode": args.mode},
    )
    _finish(m, out, table)
    sig = sum(1 for p in res.pseudo_p if p <= 0.05)
    print(f"moran: {len(ids)} areas, {sig} with pseudo p <= 0.05")
    return 0


def cmd_temporal_profile(args) -> int:
    records = read_normalized(args.events)
    rows = median_delay_profile(records, args.grouping)
    out = _write(args.out, profile_csv(rows))
    _finish(RunManifest.for_inputs("temporal-profile", [args.events], extra={"grouping": args.grouping}), out)
    print(f"temporal-profile: {len(rows)} buckets, {sum(r.gap for r in rows)} empty")
    return 0


def cmd_fit_aggregated(args) -> int:
    cfg = _resolve_config(args)
    if args.kfold is not None:
        cfg["aggregated"]["cv"] = int(args.kfold)
    elif args.loo:
        cfg["aggregated"]["cv"] = "loo"
    areas = read_areas(args.areas, args.id_property)
    report = run_aggregated(areas, cfg, args.seed)
    doc = report.to_dict()
    doc["config_hash"] = config_hash(cfg)
    if not args.no_importance:
        doc["importance"] = importance_report(report, areas, cfg, args.seed)
    out = _write(args.out, dump_json(doc))
    _finish(RunManifest.for_inputs("fit-aggregated", [args.areas, args.config], config_hash(cfg), args.seed), out)
    for t, res in doc["targets"].items():
        print(f"fit-aggregated: {t} step1 {res['step1']['model_id']} R2={res['step1']['R2']}, step2 R2={res['step2']['R2']}")
    return 0


def cmd_fit_disaggregated(args) -> int:
    cfg = _resolve_config(args)
    if args.kfold is not None:
        cfg["disaggregated"]["k"] = int(args.kfold)
    if args.groups:
        cfg["disaggregated"]["groups"] = [g.strip() for g in args.groups.split(",")]
        bad = set(cfg["disaggregated"]["groups"]) - set(GROUP_LABELS)
        if bad:
            raise ValueError(f"unknown feature group(s) {sorted(bad)}")
    records = read_normalized(args.events)
    table = read_feature_table(args.tract_features, args.tract_key)
    data = build_event_dataset(records, table, x_columns=cfg["disaggregated"].get("x_columns"))
    report = run_disaggregated(data, config=cfg, seed=args.seed)
    doc = report.to_dict()
    doc["config_hash"] = config_hash(cfg)
    doc["n_events"] = len(data.ids)
    doc["victim_missing_rate"] = data.victim_missing_rate
    doc["join_diagnostics"] = len(data.diagnostics)
    if not args.no_importance:
        doc["importance"] = importance_report(report, data, cfg, args.seed)
    out = _write(args.out, dump_json(doc))
    m = RunManifest.for_inputs(
        "fit-disaggregated", [args.events, args.tract_features, args.config], config_hash(cfg), args.seed,
        diagnostics=len(data.diagnostics),
    )
    _finish(m, out)
    print(f"fit-disaggregated: {len(report.cells)} cells over {len(data.ids)} events")
    return 0


def cmd_report(args) -> int:
    if not (args.aggregated or args.disaggregated):
        raise ValueError("give --aggregated and/or --disaggregated")
    parts, inputs = [], []
    for path, fmt in ((args.aggregated, aggregated_table), (args.disaggregated, disaggregated_table)):
        if path:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            parts.append(fmt(doc, references=not args.no_references))
            if doc.get("importance"):
                parts.append("Permutation importance\n" + importance_table(doc["importance"], args.top))
            inputs.append(path)
    text = "\n".join(parts)
    if args.out:
        out = _write(args.out, text)
        _finish(RunManifest.for_inputs("report", inputs), out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_make_fixture(args) -> int:
    paths = write_fixture(args.out, args.seed)
    m = RunManifest.for_inputs("make-fixture", [], seed=args.seed)
    for v in paths.values():
        m.add_output(v)
    m.write_for(Path(args.out) / "fixture")
    for k, v in paths.items():
        print(f"{k}: {v}")
    return 0


# parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (default: $DELAYLENS_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="delaylens", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"delaylens {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=fn)
        return sp

    sp = add("ingest", cmd_ingest, "parse a raw city extract into the normalized event file")
    sp.add_argument("--crimes", required=True, help="raw delimited extract")
    sp.add_argument("--schema", required=True, help="city schema descriptor (YAML)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--start", help="first occurrence date kept (YYYY-MM-DD)")
    sp.add_argument("--end", help="last occurrence date kept (YYYY-MM-DD)")
    sp.add_argument("--premises", default="domestic,professional", help="comma-separated premise classes kept")

    sp = add("aggregate", cmd_aggregate, "attach event proportions and tract features to areas")
    sp.add_argument("--events", required=True, help="normalized event file")
    sp.add_argument("--areas", required=True, help="district polygons (GeoJSON)")
    sp.add_argument("--tract-features", required=True, help="tract feature table (CSV)")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--tracts", help="tract polygons (GeoJSON)")
    src.add_argument("--crosswalk", help="tract,district,fraction crosswalk (CSV)")
    sp.add_argument("--membership", choices=("centroid", "overlap"), default="centroid")
    sp.add_argument("--population-column", default="population")
    sp.add_argument("--tract-key", default="tract_id")
    sp.add_argument("--id-property", default="area_id")
    sp.add_argument("--tract-id-property", default="area_id")
    sp.add_argument("--out", required=True, help="output GeoJSON")

    sp = add("moran", cmd_moran, "local Moran's I with permutation pseudo p-values")
    sp.add_argument("--areas", required=True, help="areas GeoJSON carrying p_day/p_month")
    sp.add_argument("--value", choices=("p_day", "p_month"), required=True)
    sp.add_argument("--permutations", type=int, default=999)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--mode", choices=("standard", "paper-literal"), default="standard")
    sp.add_argument("--connect-islands", action="store_true", help="link isolated areas to their nearest neighbour")
    sp.add_argument("--id-property", default="area_id")
    sp.add_argument("--out", required=True, help="output GeoJSON (a .csv table is written beside it)")

    sp = add("temporal-profile", cmd_temporal_profile, "median delay per report month or day of year")
    sp.add_argument("--events", required=True)
    sp.add_argument("--grouping", choices=("report-month", "occurrence-day-of-year"), default="report-month")
    sp.add_argument("--out", required=True, help="output CSV")

    sp = add("fit-aggregated", cmd_fit_aggregated, "two-step area-level model")
    sp.add_argument("--areas", required=True, help="aggregated areas GeoJSON")
    sp.add_argument("--config", help="run configuration (YAML)")
    sp.add_argument("--seed", type=int, required=True)
    cv = sp.add_mutually_exclusive_group()
    cv.add_argument("--loo", action="store_true", help="leave-one-out CV (default)")
    cv.add_argument("--kfold", type=int, metavar="K")
    sp.add_argument("--no-importance", action="store_true")
    sp.add_argument("--id-property", default="area_id")
    sp.add_argument("--out", required=True, help="output JSON report")

    sp = add("fit-disaggregated", cmd_fit_disaggregated, "event-level classifiers per feature group")
    sp.add_argument("--events", required=True)
    sp.add_argument("--tract-features", required=True)
    sp.add_argument("--tract-key", default="tract_id")
    sp.add_argument("--config", help="run configuration (YAML)")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--kfold", type=int, metavar="K", help="override the configured fold count")
    sp.add_argument("--groups", help=f"comma-separated subset of {','.join(GROUP_LABELS)}")
    sp.add_argument("--no-importance", action="store_true")
    sp.add_argument("--out", required=True, help="output JSON report")

    sp = add("report", cmd_report, "aligned-text tables from JSON reports")
    sp.add_argument("--aggregated")
    sp.add_argument("--disaggregated")
    sp.add_argument("--top", type=int, default=10, help="importance rows per table")
    sp.add_argument("--no-references", action="store_true")
    sp.add_argument("--out", help="output text file (default stdout)")

    sp = add("make-fixture", cmd_make_fixture, "write the synthetic fixture city")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(getattr(args, "threads", None))
    except ValueError as exc:
        parser.error(str(exc))
    try:
        return args.func(args)
    except FATAL as exc:
        print(f"delaylens {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        set_threads(None)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
