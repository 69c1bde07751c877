"""Command-line entry point wiring every stage of the pipeline.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 backend error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from wastemap import __version__
from wastemap.errors import WastemapError


@click.group()
@click.version_option(__version__)
def cli():
    """UAV orthomosaic open-dump mapping pipeline."""


def _parse_bbox(text: str) -> tuple[float, float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 4:
        raise click.UsageError("--bbox needs w,s,e,n")
    return tuple(parts)  # type: ignore[return-value]


# --- ingest -----------------------------------------------------------------


@cli.group()
def ingest():
    """Catalog search and imagery download."""


@ingest.command("search")
@click.option("--bbox", required=True, help="w,s,e,n in lon/lat")
@click.option("--max-gsd", default=0.06, show_default=True, help="max GSD in m/px (strict)")
@click.option("--min-area", default=1.0, show_default=True, help="min coverage in km2 (strict)")
@click.option("--base-url", default=None, help="catalog endpoint override")
def ingest_search(bbox, max_gsd, min_area, base_url):
    from wastemap import ingest as ing

    client = ing.CatalogClient(base_url=base_url) if base_url else ing.CatalogClient()
    policy = ing.AdmissionPolicy(max_gsd_m=max_gsd, min_area_km2=min_area)
    entries = ing.search_catalog(_parse_bbox(bbox), policy, client)
    click.echo(json.dumps([e.to_sidecar() for e in entries], indent=2, sort_keys=True))


@ingest.command("fetch")
@click.option("--oam-id", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--base-url", default=None)
def ingest_fetch(oam_id, out_dir, base_url):
    from wastemap import ingest as ing

    client = ing.CatalogClient(base_url=base_url) if base_url else ing.CatalogClient()
    path, entry = ing.fetch_entry(oam_id, out_dir, client)
    click.echo(f"{entry.oam_id} -> {path} ({entry.gsd_m} m/px, {entry.area_km2} km2)")


# --- grid -------------------------------------------------------------------


@cli.group()
def grid():
    """Analysis grid generation."""


@grid.command("make")
@click.option("--raster", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tile-size", default=5.0, show_default=True, help="tile edge in meters")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--include-partials", is_flag=True)
@click.option("--min-valid-fraction", default=0.5, show_default=True)
@click.option("--geojson", "geojson_path", default=None, type=click.Path(dir_okay=False))
def grid_make(raster, tile_size, out_path, include_partials, min_valid_fraction, geojson_path):
    from wastemap.geogrid import GridSpec, compute_valid_fractions, grid_to_geojson, make_grid, write_grid_csv
    from wastemap.raster import RasterDataset

    ds = RasterDataset(raster)
    g = make_grid(
        ds.meta,
        GridSpec(
            tile_size_m=tile_size,
            include_partials=include_partials,
            min_valid_fraction=min_valid_fraction,
        ),
    )
    compute_valid_fractions(g, ds)
    write_grid_csv(g, out_path)
    if geojson_path:
        grid_to_geojson(g, geojson_path)
    click.echo(f"{len(g)} tiles ({g.n_rows} rows x {g.n_cols} cols) -> {out_path}")


# --- tiles ------------------------------------------------------------------


@cli.group()
def tiles():
    """Tile extraction utilities."""


@tiles.command("extract")
@click.option("--raster", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--size", default=128, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--region", "region_id", default=None)
def tiles_extract(raster, grid_path, size, out_dir, region_id):
    from wastemap.geogrid import read_grid_csv
    from wastemap.raster import RasterDataset
    from wastemap.tiles import dump_tiles_png

    ds = RasterDataset(raster)
    g = read_grid_csv(grid_path)
    region = region_id or Path(raster).stem
    index = dump_tiles_png(ds, g, region, out_dir, size=size)
    click.echo(f"wrote tile PNGs and index -> {index}")


# --- dataset ----------------------------------------------------------------


@cli.group()
def dataset():
    """Annotation import and split management."""


@dataset.command("import")
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_path", default=None, type=click.Path(exists=True, dir_okay=False))
def dataset_import(labels, grid_path):
    from wastemap.dataset import import_annotations
    from wastemap.geogrid import read_grid_csv

    g = read_grid_csv(grid_path) if grid_path else None
    records, balance = import_annotations(labels, grid=g)
    click.echo(json.dumps({"n_records": len(records), "balance": balance.per_region}, indent=2, sort_keys=True))


@dataset.command("split")
@click.option("--labels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ratios", default="0.7,0.15,0.15", show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def dataset_split(labels, ratios, seed, out_path):
    from wastemap.dataset import export_manifest, import_annotations, make_splits

    ratio_tuple = tuple(float(r) for r in ratios.split(","))
    records, _balance = import_annotations(labels)
    manifest = make_splits(records, ratio_tuple, seed)
    export_manifest(manifest, out_path)
    click.echo(json.dumps(manifest.split_counts(), sort_keys=True))


# --- infer ------------------------------------------------------------------


@cli.group()
def infer():
    """Tile classification."""


@infer.command("run")
@click.option("--raster", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", default=None, type=click.Choice(["reference"]), help="oracle backend switch")
@click.option("--batch-size", default=64, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--region", "region_id", default=None)
@click.option("--checkpoint", "checkpoint_path", default=None, type=click.Path(dir_okay=False))
def infer_run(raster, grid_path, model_path, backend, batch_size, out_path, region_id, checkpoint_path):
    from wastemap.errors import ConfigError
    from wastemap.geogrid import read_grid_csv
    from wastemap.infer import ReferenceClassifier, load_model, run_inference, write_predictions_csv
    from wastemap.raster import RasterDataset

    if backend == "reference":
        clf = ReferenceClassifier()
    elif model_path:
        clf = load_model(model_path)
    else:
        raise ConfigError("provide --model or --backend reference")
    ds = RasterDataset(raster)
    g = read_grid_csv(grid_path)
    region = region_id or Path(raster).stem
    preds, skipped = run_inference(
        ds, g, clf, batch_size=batch_size, region_id=region, checkpoint_path=checkpoint_path
    )
    write_predictions_csv(preds, region, out_path)
    click.echo(f"{len(preds)} predictions ({len(skipped)} skipped) -> {out_path}")


# --- eval -------------------------------------------------------------------


@cli.group("eval")
def eval_group():
    """Metrics and bootstrap stability."""


def _load_joined(preds_path, truth_path):
    from wastemap.infer import read_predictions_csv

    preds = read_predictions_csv(preds_path)
    truth_rows = read_predictions_csv(truth_path)
    pred_map = {(p.region_id, *p.tile_id): p for p in preds}
    truth_map = {(t.region_id, *t.tile_id): t.predicted_class for t in truth_rows}
    return pred_map, truth_map


@eval_group.command("metrics")
@click.option("--preds", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-json", default=None, type=click.Path(dir_okay=False))
@click.option("--per-region", is_flag=True, help="also report waste-F1 per region")
def eval_metrics(preds, truth, out_json, per_region):
    from wastemap.evalsuite import confusion, per_region_f1, prf1, report_to_markdown, write_report_json

    pred_map, truth_map = _load_joined(preds, truth)
    counts = confusion({k: p.predicted_class for k, p in pred_map.items()}, truth_map)
    report = prf1(counts)
    click.echo(report_to_markdown(report))
    if per_region:
        rows, summary = per_region_f1(
            {k: p.predicted_class for k, p in pred_map.items()},
            truth_map,
            {k: k[0] for k in truth_map},
        )
        for r in rows:
            f1_part = "flagged(single-class)" if r.flagged else f"{r.f1:.4f}"
            click.echo(f"region {r.region_id}: F1 {f1_part} (n={r.n})")
        click.echo(json.dumps({"per_region_summary": summary}, sort_keys=True))
    if out_json:
        write_report_json(report, out_json)


@eval_group.command("bootstrap")
@click.option("--preds", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--sizes", default="50,100,200,400,full", show_default=True)
@click.option("--replicates", default=200, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def eval_bootstrap(preds, truth, sizes, replicates, seed, out_path):
    import numpy as np

    from wastemap.evalsuite import bootstrap_curves, write_curve_csv

    pred_map, truth_map = _load_joined(preds, truth)
    scores, labels = [], []
    for key, p in sorted(pred_map.items()):
        if key not in truth_map:
            continue
        scores.append(p.confidence if p.predicted_class == "waste" else 1.0 - p.confidence)
        labels.append(truth_map[key] == "waste")
    size_list = [len(scores) if s.strip() == "full" else int(s) for s in sizes.split(",")]
    curve = bootstrap_curves(np.array(scores), np.array(labels), size_list, replicates, seed)
    write_curve_csv(curve, out_path)
    click.echo(f"point estimates: {json.dumps(curve.point_estimates, sort_keys=True)}")


# --- map --------------------------------------------------------------------


@cli.group("map")
def map_group():
    """Regional contamination scoring and export."""


@map_group.command("oddmswc")
@click.option("--preds", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--regions", "regions_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="restrict scoring to region ids listed in this CSV/GeoJSON")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def map_oddmswc(preds, regions_path, out_path):
    from wastemap.infer import read_predictions_csv
    from wastemap.scoring import rank_regions, summaries_from_predictions, write_summary_csv

    predictions = read_predictions_csv(preds)
    if regions_path:
        keep = _region_ids_from_file(regions_path)
        predictions = [p for p in predictions if p.region_id in keep]
    summaries = rank_regions(summaries_from_predictions(predictions))
    write_summary_csv(summaries, out_path)
    for s in summaries:
        click.echo(f"#{s.rank} {s.region_id}: {s.oddmswc:.4f}% ({s.n_waste}/{s.n_tiles_analyzed})")


def _region_ids_from_file(path: str) -> set:
    import csv as _csv

    if str(path).endswith((".geojson", ".json")):
        with open(path) as f:
            doc = json.load(f)
        return {
            str((feat.get("properties") or {}).get("region_id"))
            for feat in doc.get("features", [])
        }
    with open(path, newline="") as f:
        reader = _csv.DictReader(f)
        if not reader.fieldnames or "region_id" not in reader.fieldnames:
            raise click.UsageError(f"{path}: regions file needs a region_id column")
        return {rec["region_id"] for rec in reader}


@map_group.command("export")
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--preds", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--format", "fmt", default="geojson", type=click.Choice(["geojson"]), show_default=True)
@click.option("--waste-only", is_flag=True)
def map_export(grid_path, preds, out_path, fmt, waste_only):
    from wastemap.geogrid import read_grid_csv
    from wastemap.infer import read_predictions_csv
    from wastemap.scoring import export_map

    g = read_grid_csv(grid_path)
    export_map(g, read_predictions_csv(preds), out_path, waste_only=waste_only)
    click.echo(f"map -> {out_path}")


# --- corr -------------------------------------------------------------------


@cli.group()
def corr():
    """Socio-spatial correlation analysis."""


@corr.command("run")
@click.option("--summary", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--layers", required=True, help="name=path[,name=path...]")
@click.option("--regions", "regions_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--exclude", default="", help="comma-separated region ids")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def corr_run(summary, layers, regions_path, exclude, out_dir):
    from wastemap.scoring import read_summary_csv
    from wastemap.sociocorr import (
        bivariate_report,
        layer_from_path,
        load_regions_geojson,
        write_correlation_report,
        write_scatter_csvs,
    )

    layer_objs = []
    for item in layers.split(","):
        if "=" not in item:
            raise click.UsageError(f"--layers entry {item!r} is not name=path")
        name, path = item.split("=", 1)
        layer_objs.append(layer_from_path(name.strip(), path.strip()))
    regions = load_regions_geojson(regions_path) if regions_path else None
    excl = [r.strip() for r in exclude.split(",") if r.strip()]
    report = bivariate_report(read_summary_csv(summary), layer_objs, regions=regions, exclude=excl)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_correlation_report(report, out / "correlations.json")
    write_scatter_csvs(report, out)
    for r in report.results:
        click.echo(f"{r.pair}: rho={r.rho:.4f} (n={r.n})")


# --- synth ------------------------------------------------------------------


@cli.group()
def synth():
    """Synthetic verification fixtures."""


@synth.command("make")
@click.option("--rows", default=10, show_default=True)
@click.option("--cols", default=10, show_default=True)
@click.option("--plant", default=13, show_default=True, help="number of waste tiles")
@click.option("--gsd", default=0.05, show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--region", "region_id", default="fixture", show_default=True)
def synth_make(rows, cols, plant, gsd, seed, out_dir, region_id):
    from wastemap.synthbench import make_fixture, random_plan

    plan = random_plan(rows, cols, plant, seed=seed, gsd_m=gsd, region_id=region_id)
    fx = make_fixture(plan, out_dir)
    click.echo(f"raster: {fx.raster}")
    click.echo(f"truth:  {fx.truth_csv}")
    click.echo(f"score:  {plan.oddmswc}")


@synth.command("verify")
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--preds", required=True, type=click.Path(exists=True, dir_okay=False))
def synth_verify(truth, preds):
    from wastemap.synthbench import verify_pipeline

    rep = verify_pipeline(truth, preds)
    click.echo(
        json.dumps(
            {
                "exact_match": rep.exact_match,
                "tp": rep.tp,
                "fp": rep.fp,
                "fn": rep.fn,
                "tn": rep.tn,
                "n_flipped": len(rep.flipped),
                "n_missing": len(rep.missing),
            },
            sort_keys=True,
        )
    )
    if not rep.exact_match:
        sys.exit(3)


# --- run --------------------------------------------------------------------


@cli.command("run")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "sets", multiple=True, help="override: section.key=value")
@click.option("--run-dir", default=None, type=click.Path(file_okay=False))
def run_cmd(config_path, sets, run_dir):
    """Execute the configured pipeline stages in dependency order."""
    from wastemap.pipeline import load_config, run_pipeline

    cfg = load_config(config_path, list(sets))
    run = run_pipeline(cfg, run_dir=run_dir)
    click.echo(f"run dir: {run.run_dir}")
    for res in run.results:
        click.echo(f"  {res.stage}: {res.seconds:.2f}s -> {', '.join(res.artifacts) or '-'}")


def main():
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    except WastemapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()
