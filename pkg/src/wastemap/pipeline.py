"""End-to-end pipeline runner with a reproducible run-directory layout.

A run resolves its configuration up front (file values overridden by CLI
sets), validates it before any work, executes the selected stages in
dependency order, and records every artifact with a checksum manifest.
Two runs over identical config and inputs produce identical artifact bytes;
wall-clock only ever lands in logs.jsonl, which the manifest excludes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import yaml

from wastemap.errors import ConfigError, DataError, WastemapError

STAGE_ORDER = ["ingest", "grid", "tiles", "dataset", "infer", "eval", "map", "corr"]

DEFAULT_CONFIG = {
    "run": {
        "stages": ["grid", "infer", "eval", "map"],
        "out_dir": "runs",
        "name": None,  # default: timestamped
        "workers": 2,
        "region_id": None,  # default: raster stem
    },
    "ingest": {
        "bbox": None,
        "max_gsd": 0.06,
        "min_area": 1.0,
        "oam_ids": [],
        "dest": None,
        "base_url": "https://api.openaerialmap.org",
    },
    "grid": {
        "raster": None,
        "tile_size": 5.0,
        "include_partials": False,
        "min_valid_fraction": 0.5,
        "working_epsg": None,
        "geojson": False,
    },
    "tiles": {
        "size": 128,
        "dump_png": True,
    },
    "dataset": {
        "labels": None,
        "ratios": [0.7, 0.15, 0.15],
        "seed": 42,
    },
    "infer": {
        "backend": "reference",
        "model": None,
        "batch_size": 64,
        "threshold_fraction": 0.02,
        "checkpoint_every": 100,
    },
    "eval": {
        "truth": None,
        "bootstrap": False,
        "sizes": ["50", "100", "200", "400", "full"],
        "replicates": 200,
        "seed": 7,
    },
    "map": {
        "export_geojson": False,
        "waste_only": False,
    },
    "corr": {
        "summary": None,
        "layers": {},
        "regions": None,
        "exclude": [],
    },
}


def load_config(path: str | Path | None = None, sets: list[str] | None = None) -> dict:
    """Merge defaults, an optional YAML file, and key=value overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            try:
                user = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must map sections to settings")
        for section, body in user.items():
            if section not in cfg:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"config section {section!r} must be a mapping")
            for key, value in body.items():
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                cfg[section][key] = value
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        if dotted.count(".") != 1:
            raise ConfigError(f"override key {dotted!r} is not of the form section.key")
        section, key = dotted.split(".")
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key {dotted}")
        cfg[section][key] = yaml.safe_load(raw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    stages = cfg["run"]["stages"]
    unknown = [s for s in stages if s not in STAGE_ORDER]
    if unknown:
        raise ConfigError(f"unknown stages {unknown}; valid: {STAGE_ORDER}")
    ratios = cfg["dataset"]["ratios"]
    if "dataset" in stages:
        if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"dataset.ratios must be 3 nonnegative values summing to 1, got {ratios}")
    if cfg["infer"]["batch_size"] < 1:
        raise ConfigError("infer.batch_size must be >= 1")
    if any(s in stages for s in ("grid", "tiles", "infer")) and not cfg["grid"]["raster"]:
        raise ConfigError("grid.raster is required for grid/tiles/infer stages")
    if "infer" in stages:
        backend = cfg["infer"]["backend"]
        if backend not in ("reference", "model"):
            raise ConfigError(f"infer.backend must be 'reference' or 'model', got {backend!r}")
        if backend == "model" and not cfg["infer"]["model"]:
            raise ConfigError("infer.backend=model needs infer.model")
    if "corr" in stages and not cfg["corr"]["layers"]:
        raise ConfigError("corr stage needs corr.layers")


@dataclass
class StageResult:
    stage: str
    seconds: float
    artifacts: list[str]
    info: dict


class PipelineRun:
    def __init__(self, cfg: dict, run_dir: str | Path):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []
        self.results: list[StageResult] = []
        self._log_path = self.run_dir / "logs.jsonl"
        self._state: dict = {}

    def log(self, record: dict) -> None:
        with open(self._log_path, "a") as f:
            json.dump(record, f, sort_keys=True)
            f.write("\n")

    def add_artifact(self, path: str | Path) -> None:
        self.artifacts.append(Path(path))

    def write_manifest(self) -> Path:
        checksums = {}
        for p in sorted(set(self.artifacts)):
            rel = str(p.relative_to(self.run_dir)) if p.is_relative_to(self.run_dir) else str(p)
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            checksums[rel] = digest
        out = self.run_dir / "checksums.json"
        with open(out, "w") as f:
            json.dump(checksums, f, indent=2, sort_keys=True)
            f.write("\n")
        return out


def run_pipeline(cfg: dict, run_dir: str | Path | None = None) -> PipelineRun:
    """Execute the configured stages; halt on the first failure."""
    validate_config(cfg)
    _apply_workers(cfg["run"]["workers"])
    out_root = Path(cfg["run"]["out_dir"])
    name = cfg["run"]["name"] or time.strftime("run_%Y%m%d_%H%M%S")
    run = PipelineRun(cfg, Path(run_dir) if run_dir else out_root / name)

    resolved = run.run_dir / "resolved_config.json"
    with open(resolved, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")
    run.add_artifact(resolved)

    stages = [s for s in STAGE_ORDER if s in cfg["run"]["stages"]]
    for stage in stages:
        started = time.time()
        try:
            result = _STAGES[stage](run)
        except WastemapError as exc:
            run.log(
                {
                    "stage": stage,
                    "status": "failed",
                    "error": str(exc),
                    "error_type": type(exc).__name__,
                    "seconds": round(time.time() - started, 3),
                }
            )
            failure = run.run_dir / "failure.json"
            with open(failure, "w") as f:
                json.dump(
                    {"stage": stage, "error": str(exc), "error_type": type(exc).__name__},
                    f,
                    indent=2,
                    sort_keys=True,
                )
                f.write("\n")
            raise
        run.results.append(result)
        run.log(
            {
                "stage": stage,
                "status": "ok",
                "seconds": round(result.seconds, 3),
                "artifacts": result.artifacts,
                **result.info,
            }
        )
    run.write_manifest()
    return run


def _apply_workers(workers) -> None:
    """One knob for intra-stage parallelism: caps the JIT kernel thread pool."""
    if not workers:
        return
    try:
        import numba

        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        pass


def _region_id(run: PipelineRun) -> str:
    rid = run.cfg["run"]["region_id"]
    if rid:
        return rid
    raster = run.cfg["grid"]["raster"]
    return Path(raster).stem if raster else "region"


def _stage_ingest(run: PipelineRun) -> StageResult:
    from wastemap import ingest as ing

    t0 = time.time()
    cfg = run.cfg["ingest"]
    dest = Path(cfg["dest"] or (run.run_dir / "imagery"))
    client = ing.CatalogClient(base_url=cfg["base_url"])
    policy = ing.AdmissionPolicy(max_gsd_m=cfg["max_gsd"], min_area_km2=cfg["min_area"])
    artifacts = []
    fetched = []
    if cfg["bbox"]:
        entries = ing.search_catalog(tuple(cfg["bbox"]), policy, client)
        listing = run.run_dir / "catalog.json"
        with open(listing, "w") as f:
            json.dump([e.to_sidecar() for e in entries], f, indent=2, sort_keys=True)
            f.write("\n")
        artifacts.append(str(listing))
        run.add_artifact(listing)
    if cfg["oam_ids"]:
        # fetches are independent per id; sidecar/rename writes are atomic
        from concurrent.futures import ThreadPoolExecutor

        workers = max(1, int(run.cfg["run"]["workers"] or 1))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(ing.fetch_entry, oam_id, dest, client) for oam_id in cfg["oam_ids"]]
            fetched = [f.result()[0] for f in futures]
    return StageResult("ingest", time.time() - t0, artifacts, {"fetched": fetched})


def _stage_grid(run: PipelineRun) -> StageResult:
    from wastemap.geogrid import GridSpec, compute_valid_fractions, grid_to_geojson, make_grid, write_grid_csv
    from wastemap.raster import RasterDataset

    t0 = time.time()
    cfg = run.cfg["grid"]
    raster = RasterDataset(cfg["raster"])
    spec = GridSpec(
        tile_size_m=cfg["tile_size"],
        working_epsg=cfg["working_epsg"],
        include_partials=cfg["include_partials"],
        min_valid_fraction=cfg["min_valid_fraction"],
    )
    grid = make_grid(raster.meta, spec)
    compute_valid_fractions(grid, raster)
    out_dir = run.run_dir / "grid"
    out_dir.mkdir(exist_ok=True)
    csv_path = out_dir / "grid.csv"
    write_grid_csv(grid, csv_path)
    run.add_artifact(csv_path)
    run.add_artifact(Path(str(csv_path) + ".meta.json"))
    artifacts = [str(csv_path)]
    if cfg["geojson"]:
        gj = out_dir / "grid.geojson"
        grid_to_geojson(grid, gj)
        run.add_artifact(gj)
        artifacts.append(str(gj))
    run._state["grid"] = grid
    run._state["raster"] = raster
    return StageResult("grid", time.time() - t0, artifacts, {"n_tiles": len(grid)})


def _ensure_grid(run: PipelineRun):
    if "grid" not in run._state:
        from wastemap.geogrid import read_grid_csv
        from wastemap.raster import RasterDataset

        csv_path = run.run_dir / "grid" / "grid.csv"
        if not csv_path.is_file():
            raise DataError("infer/tiles stage needs the grid stage (no grid manifest found)")
        run._state["grid"] = read_grid_csv(csv_path)
        run._state["raster"] = RasterDataset(run.cfg["grid"]["raster"])
    return run._state["grid"], run._state["raster"]


def _stage_tiles(run: PipelineRun) -> StageResult:
    from wastemap.tiles import dump_tiles_png

    t0 = time.time()
    grid, raster = _ensure_grid(run)
    out_dir = run.run_dir / "tiles"
    index = dump_tiles_png(raster, grid, _region_id(run), out_dir, size=run.cfg["tiles"]["size"])
    run.add_artifact(index)
    return StageResult("tiles", time.time() - t0, [str(index)], {"n_tiles": len(grid)})


def _stage_dataset(run: PipelineRun) -> StageResult:
    from wastemap.dataset import export_manifest, import_annotations, make_splits

    t0 = time.time()
    cfg = run.cfg["dataset"]
    if not cfg["labels"]:
        raise ConfigError("dataset stage needs dataset.labels")
    records, balance = import_annotations(cfg["labels"], grid=run._state.get("grid"))
    manifest = make_splits(records, tuple(cfg["ratios"]), cfg["seed"])
    out_dir = run.run_dir / "dataset"
    out_dir.mkdir(exist_ok=True)
    path = out_dir / "manifest.csv"
    export_manifest(manifest, path)
    run.add_artifact(path)
    return StageResult(
        "dataset",
        time.time() - t0,
        [str(path)],
        {"n_records": len(records), "balance": balance.per_region},
    )


def _stage_infer(run: PipelineRun) -> StageResult:
    from wastemap.infer import ReferenceClassifier, load_model, run_inference, write_predictions_csv

    t0 = time.time()
    cfg = run.cfg["infer"]
    grid, raster = _ensure_grid(run)
    if cfg["backend"] == "reference":
        backend = ReferenceClassifier(fraction=cfg["threshold_fraction"])
    else:
        backend = load_model(cfg["model"])
    region = _region_id(run)
    out_dir = run.run_dir / "predictions"
    out_dir.mkdir(exist_ok=True)
    preds, skipped = run_inference(
        raster,
        grid,
        backend,
        batch_size=cfg["batch_size"],
        region_id=region,
        checkpoint_path=out_dir / "checkpoint.csv",
        checkpoint_every=cfg["checkpoint_every"],
    )
    path = out_dir / "predictions.csv"
    write_predictions_csv(preds, region, path)
    run.add_artifact(path)
    skip_path = out_dir / "skipped.json"
    with open(skip_path, "w") as f:
        json.dump({"skipped": [list(t) for t in skipped]}, f, sort_keys=True)
        f.write("\n")
    run.add_artifact(skip_path)
    ckpt = out_dir / "checkpoint.csv"
    if ckpt.is_file():
        ckpt.unlink()
    run._state["predictions"] = preds
    seconds = time.time() - t0
    return StageResult(
        "infer",
        seconds,
        [str(path)],
        {
            "n_predictions": len(preds),
            "n_skipped": len(skipped),
            "tiles_per_second": round(len(preds) / seconds, 1) if seconds > 0 else None,
        },
    )


def _ensure_predictions(run: PipelineRun):
    if "predictions" not in run._state:
        from wastemap.infer import read_predictions_csv

        path = run.run_dir / "predictions" / "predictions.csv"
        if not path.is_file():
            raise DataError("eval/map stage needs predictions (run the infer stage first)")
        run._state["predictions"] = read_predictions_csv(path)
    return run._state["predictions"]


def _stage_eval(run: PipelineRun) -> StageResult:
    from wastemap.evalsuite import (
        bootstrap_curves,
        confusion,
        prf1,
        report_to_markdown,
        write_curve_csv,
        write_report_json,
    )
    from wastemap.infer import read_predictions_csv

    t0 = time.time()
    cfg = run.cfg["eval"]
    if not cfg["truth"]:
        raise ConfigError("eval stage needs eval.truth")
    preds = _ensure_predictions(run)
    truth_rows = read_predictions_csv(cfg["truth"])
    truth = {(r.region_id, *r.tile_id): r.predicted_class for r in truth_rows}
    pred_map = {(p.region_id, *p.tile_id): p.predicted_class for p in preds}
    counts = confusion(pred_map, truth)
    report = prf1(counts)

    out_dir = run.run_dir / "eval"
    out_dir.mkdir(exist_ok=True)
    json_path = out_dir / "report.json"
    write_report_json(report, json_path)
    run.add_artifact(json_path)
    md_path = out_dir / "report.md"
    md_path.write_text(report_to_markdown(report))
    run.add_artifact(md_path)
    artifacts = [str(json_path), str(md_path)]

    if cfg["bootstrap"]:
        import numpy as np

        scores = []
        labels = []
        truth_by_key = truth
        for p in preds:
            key = (p.region_id, *p.tile_id)
            if key not in truth_by_key:
                continue
            p_waste = p.confidence if p.predicted_class == "waste" else 1.0 - p.confidence
            scores.append(p_waste)
            labels.append(truth_by_key[key] == "waste")
        sizes = [len(scores) if s == "full" else int(s) for s in cfg["sizes"]]
        curve = bootstrap_curves(
            np.array(scores), np.array(labels), sizes, cfg["replicates"], cfg["seed"]
        )
        curve_path = out_dir / "curves.csv"
        write_curve_csv(curve, curve_path)
        run.add_artifact(curve_path)
        artifacts.append(str(curve_path))

    return StageResult("eval", time.time() - t0, artifacts, {"accuracy": report.accuracy})


def _stage_map(run: PipelineRun) -> StageResult:
    from wastemap.scoring import export_map, rank_regions, summaries_from_predictions, write_summary_csv

    t0 = time.time()
    cfg = run.cfg["map"]
    preds = _ensure_predictions(run)
    summaries = rank_regions(summaries_from_predictions(preds))
    out_dir = run.run_dir / "map"
    out_dir.mkdir(exist_ok=True)
    path = out_dir / "summary.csv"
    write_summary_csv(summaries, path)
    run.add_artifact(path)
    artifacts = [str(path)]
    if cfg["export_geojson"]:
        grid, _raster = _ensure_grid(run)
        gj = out_dir / ("waste_tiles.geojson" if cfg["waste_only"] else "tiles.geojson")
        export_map(grid, preds, gj, waste_only=cfg["waste_only"])
        run.add_artifact(gj)
        artifacts.append(str(gj))
    run._state["summaries"] = summaries
    return StageResult(
        "map",
        time.time() - t0,
        artifacts,
        {"scores": {s.region_id: s.oddmswc for s in summaries}},
    )


def _stage_corr(run: PipelineRun) -> StageResult:
    from wastemap.scoring import read_summary_csv
    from wastemap.sociocorr import (
        bivariate_report,
        layer_from_path,
        load_regions_geojson,
        write_correlation_report,
        write_scatter_csvs,
    )

    t0 = time.time()
    cfg = run.cfg["corr"]
    if cfg["summary"]:
        summaries = read_summary_csv(cfg["summary"])
    elif "summaries" in run._state:
        summaries = run._state["summaries"]
    else:
        path = run.run_dir / "map" / "summary.csv"
        if not path.is_file():
            raise DataError("corr stage needs a region summary (run the map stage or set corr.summary)")
        summaries = read_summary_csv(path)
    layers = [layer_from_path(name, p) for name, p in sorted(cfg["layers"].items())]
    regions = load_regions_geojson(cfg["regions"]) if cfg["regions"] else None
    report = bivariate_report(summaries, layers, regions=regions, exclude=cfg["exclude"])
    out_dir = run.run_dir / "corr"
    out_dir.mkdir(exist_ok=True)
    json_path = out_dir / "correlations.json"
    write_correlation_report(report, json_path)
    run.add_artifact(json_path)
    scatter = write_scatter_csvs(report, out_dir)
    for p in scatter:
        run.add_artifact(p)
    return StageResult(
        "corr",
        time.time() - t0,
        [str(json_path)] + scatter,
        {"pairs": [r.pair for r in report.results]},
    )


_STAGES = {
    "ingest": _stage_ingest,
    "grid": _stage_grid,
    "tiles": _stage_tiles,
    "dataset": _stage_dataset,
    "infer": _stage_infer,
    "eval": _stage_eval,
    "map": _stage_map,
    "corr": _stage_corr,
}
