import csv
import json

import pytest
import yaml

from wastemap.errors import ConfigError
from wastemap.pipeline import load_config, run_pipeline, validate_config


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    from wastemap.synthbench import make_fixture, random_plan

    out = tmp_path_factory.mktemp("pipe_fixture")
    plan = random_plan(10, 10, 13, seed=7, region_id="pipetest")
    paths = make_fixture(plan, out)
    return plan, paths


def _base_cfg(plan, paths, tmp_path, stages=("grid", "infer", "eval", "map")):
    return load_config(
        None,
        [
            f"run.stages=[{','.join(stages)}]",
            f"run.out_dir={tmp_path}",
            "run.name=testrun",
            f"grid.raster={paths.raster}",
            f"eval.truth={paths.truth_csv}",
            f"run.region_id={plan.region_id}",
        ],
    )


def test_full_run_exact_score(fixture_dir, tmp_path):
    plan, paths = fixture_dir
    cfg = _base_cfg(plan, paths, tmp_path)
    run = run_pipeline(cfg)
    summary_path = run.run_dir / "map" / "summary.csv"
    rows = list(csv.DictReader(open(summary_path)))
    assert len(rows) == 1
    assert float(rows[0]["oddmswc"]) == plan.oddmswc == 13.0
    report = json.loads((run.run_dir / "eval" / "report.json").read_text())
    assert report["accuracy"] == 1.0
    assert (run.run_dir / "checksums.json").is_file()
    assert (run.run_dir / "resolved_config.json").is_file()
    assert (run.run_dir / "logs.jsonl").is_file()


def test_rerun_is_byte_identical(fixture_dir, tmp_path):
    plan, paths = fixture_dir
    cfg1 = _base_cfg(plan, paths, tmp_path / "a")
    cfg2 = _base_cfg(plan, paths, tmp_path / "b")
    r1 = run_pipeline(cfg1, run_dir=tmp_path / "a" / "r")
    r2 = run_pipeline(cfg2, run_dir=tmp_path / "b" / "r")
    c1 = json.loads((r1.run_dir / "checksums.json").read_text())
    c2 = json.loads((r2.run_dir / "checksums.json").read_text())
    c1.pop("resolved_config.json")
    c2.pop("resolved_config.json")  # differs by out_dir path only
    assert c1 == c2


def test_eval_only_reuses_existing_predictions(fixture_dir, tmp_path):
    plan, paths = fixture_dir
    full = run_pipeline(_base_cfg(plan, paths, tmp_path), run_dir=tmp_path / "full")
    preds_file = full.run_dir / "predictions" / "predictions.csv"
    before = preds_file.read_bytes()

    cfg = _base_cfg(plan, paths, tmp_path, stages=("eval",))
    rerun = run_pipeline(cfg, run_dir=full.run_dir)
    assert preds_file.read_bytes() == before  # untouched: no re-inference
    assert (rerun.run_dir / "eval" / "report.json").is_file()


def test_invalid_ratios_fail_before_work(tmp_path):
    with pytest.raises(ConfigError, match="ratios"):
        load_config(None, ["run.stages=[dataset]", "dataset.ratios=[0.5,0.3,0.3]"])


def test_unknown_stage_and_keys():
    with pytest.raises(ConfigError, match="unknown stages"):
        load_config(None, ["run.stages=[teleport]"])
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(None, ["run.bogus=1"])


def test_model_backend_requires_model():
    with pytest.raises(ConfigError, match="infer.model"):
        load_config(None, ["run.stages=[infer]", "grid.raster=x.tif", "infer.backend=model"])


def test_failure_record_written(fixture_dir, tmp_path):
    plan, paths = fixture_dir
    cfg = _base_cfg(plan, paths, tmp_path)
    cfg["eval"]["truth"] = None  # stage-time config failure
    with pytest.raises(ConfigError):
        run_pipeline(cfg, run_dir=tmp_path / "fail")
    failure = json.loads((tmp_path / "fail" / "failure.json").read_text())
    assert failure["stage"] == "eval"
    # earlier artifacts preserved
    assert (tmp_path / "fail" / "predictions" / "predictions.csv").is_file()


def test_config_file_and_overrides(fixture_dir, tmp_path):
    plan, paths = fixture_dir
    cfg_file = tmp_path / "run.yaml"
    cfg_file.write_text(
        yaml.safe_dump(
            {
                "run": {"stages": ["grid"], "out_dir": str(tmp_path), "region_id": plan.region_id},
                "grid": {"raster": paths.raster},
            }
        )
    )
    cfg = load_config(cfg_file, ["grid.tile_size=10.0"])
    assert cfg["grid"]["tile_size"] == 10.0
    run = run_pipeline(cfg, run_dir=tmp_path / "r10")
    meta = json.loads((run.run_dir / "grid" / "grid.csv.meta.json").read_text())
    assert meta["tile_size_m"] == 10.0
    assert meta["n_tiles"] == 25  # 50 m footprint at 10 m tiles


def test_validate_config_direct():
    cfg = load_config(None, ["run.stages=[map]"])
    validate_config(cfg)  # map alone is fine; predictions resolved at stage time


def test_corr_stage_with_tables(fixture_dir, tmp_path):
    plan, paths = fixture_dir
    # three synthetic regions via three summary rows; layers as CSV tables
    summary = tmp_path / "summary.csv"
    with open(summary, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["region_id", "n_tiles", "n_waste", "oddmswc", "rank"])
        for i, (rid, score) in enumerate([("a", 2.0), ("b", 5.0), ("c", 9.0)], start=1):
            w.writerow([rid, 100, int(score), score, i])
    shdi = tmp_path / "shdi.csv"
    with open(shdi, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["region_id", "value"])
        for rid, v in [("a", 0.2), ("b", 0.5), ("c", 0.9)]:
            w.writerow([rid, v])
    cfg = load_config(
        None,
        [
            "run.stages=[corr]",
            f"run.out_dir={tmp_path}",
            f"corr.summary={summary}",
            "corr.layers={shdi: " + str(shdi) + "}",
        ],
    )
    run = run_pipeline(cfg, run_dir=tmp_path / "corr_run")
    doc = json.loads((run.run_dir / "corr" / "correlations.json").read_text())
    assert doc["correlations"][0]["pair"] == "oddmswc_vs_shdi"
    assert doc["correlations"][0]["rho"] == pytest.approx(1.0)
