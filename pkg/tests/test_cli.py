import csv
import json
import subprocess
import sys

import pytest
from click.testing import CliRunner

from wastemap.cli import cli


@pytest.fixture()
def runner():
    return CliRunner()


def test_cli_end_to_end(tmp_path, runner):
    fx_dir = tmp_path / "fx"
    r = runner.invoke(
        cli,
        ["synth", "make", "--rows", "10", "--cols", "10", "--plant", "13", "--seed", "7",
         "--out", str(fx_dir), "--region", "cliregion"],
    )
    assert r.exit_code == 0, r.output
    raster = fx_dir / "cliregion.tif"
    truth = fx_dir / "cliregion_truth.csv"
    assert raster.is_file() and truth.is_file()

    grid_path = tmp_path / "grid.csv"
    r = runner.invoke(cli, ["grid", "make", "--raster", str(raster), "--out", str(grid_path)])
    assert r.exit_code == 0, r.output
    assert "100 tiles" in r.output

    preds = tmp_path / "preds.csv"
    r = runner.invoke(
        cli,
        ["infer", "run", "--raster", str(raster), "--grid", str(grid_path),
         "--backend", "reference", "--batch-size", "32", "--out", str(preds), "--region", "cliregion"],
    )
    assert r.exit_code == 0, r.output
    assert "100 predictions" in r.output

    r = runner.invoke(cli, ["synth", "verify", "--truth", str(truth), "--preds", str(preds)])
    assert r.exit_code == 0, r.output
    assert json.loads(r.output)["exact_match"] is True

    summary = tmp_path / "summary.csv"
    r = runner.invoke(cli, ["map", "oddmswc", "--preds", str(preds), "--out", str(summary)])
    assert r.exit_code == 0, r.output
    assert "13.0000%" in r.output

    r = runner.invoke(cli, ["eval", "metrics", "--preds", str(preds), "--truth", str(truth)])
    assert r.exit_code == 0, r.output
    assert "accuracy: 1.0000" in r.output

    curves = tmp_path / "curves.csv"
    r = runner.invoke(
        cli,
        ["eval", "bootstrap", "--preds", str(preds), "--truth", str(truth),
         "--sizes", "20,50,full", "--replicates", "20", "--seed", "5", "--out", str(curves)],
    )
    assert r.exit_code == 0, r.output
    rows = list(csv.DictReader(open(curves)))
    assert len(rows) == 9  # 3 sizes x 3 metrics

    gj = tmp_path / "map.geojson"
    r = runner.invoke(
        cli, ["map", "export", "--grid", str(grid_path), "--preds", str(preds), "--out", str(gj), "--waste-only"]
    )
    assert r.exit_code == 0, r.output
    doc = json.loads(gj.read_text())
    assert len(doc["features"]) == 13


def test_cli_run_subcommand(tmp_path, runner):
    fx_dir = tmp_path / "fx"
    runner.invoke(cli, ["synth", "make", "--out", str(fx_dir), "--region", "runreg"])
    raster = fx_dir / "runreg.tif"
    truth = fx_dir / "runreg_truth.csv"
    r = runner.invoke(
        cli,
        ["run",
         "--set", "run.stages=[grid,infer,eval,map]",
         "--set", f"run.out_dir={tmp_path}",
         "--set", f"grid.raster={raster}",
         "--set", f"eval.truth={truth}",
         "--set", "run.region_id=runreg",
         "--run-dir", str(tmp_path / "runout")],
    )
    assert r.exit_code == 0, r.output
    assert (tmp_path / "runout" / "map" / "summary.csv").is_file()


def test_console_script_exit_codes(tmp_path):
    # config error -> exit 2, via the installed entry point
    proc = subprocess.run(
        [sys.executable, "-m", "wastemap.cli"],
        input="",
        capture_output=True,
        text=True,
    )
    assert proc.returncode in (0, 2)  # group help

    proc = subprocess.run(
        [
            sys.executable,
            "-c",
            "from wastemap.cli import main; import sys; sys.argv=['wastemap','run','--set','run.stages=[teleport]']; main()",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert "unknown stages" in proc.stderr

    # data error -> exit 3
    proc = subprocess.run(
        [
            sys.executable,
            "-c",
            "from wastemap.cli import main; import sys; "
            f"sys.argv=['wastemap','synth','verify','--truth','{tmp_path}/nope.csv','--preds','{tmp_path}/nope.csv']; main()",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2  # click validates path existence first


def test_cli_infer_requires_backend_or_model(tmp_path, runner):
    fx_dir = tmp_path / "fx"
    runner.invoke(cli, ["synth", "make", "--rows", "4", "--cols", "4", "--plant", "2", "--out", str(fx_dir)])
    raster = fx_dir / "fixture.tif"
    grid_path = tmp_path / "g.csv"
    runner.invoke(cli, ["grid", "make", "--raster", str(raster), "--out", str(grid_path)])
    r = runner.invoke(
        cli,
        ["infer", "run", "--raster", str(raster), "--grid", str(grid_path), "--out", str(tmp_path / "p.csv")],
    )
    assert r.exit_code != 0
    from wastemap.errors import ConfigError

    assert isinstance(r.exception, ConfigError)


def test_cli_map_regions_filter(tmp_path, runner):
    preds = tmp_path / "preds.csv"
    with open(preds, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["region_id", "row", "col", "predicted_class", "confidence"])
        for rid, cls in [("a", "waste"), ("a", "background"), ("b", "waste"), ("b", "waste")]:
            w.writerow([rid, 0, 0 if cls == "waste" else 1, cls, 0.9])
    regions = tmp_path / "regions.csv"
    regions.write_text("region_id\na\n")
    out = tmp_path / "summary.csv"
    r = runner.invoke(cli, ["map", "oddmswc", "--preds", str(preds), "--regions", str(regions), "--out", str(out)])
    assert r.exit_code == 0, r.output
    rows = list(csv.DictReader(open(out)))
    assert [row["region_id"] for row in rows] == ["a"]


def test_cli_dataset_roundtrip(tmp_path, runner):
    labels = tmp_path / "labels.csv"
    with open(labels, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["region_id", "row", "col", "label"])
        for i in range(40):
            w.writerow(["r1", i, 0, "waste" if i % 2 else "background"])
    r = runner.invoke(cli, ["dataset", "import", "--labels", str(labels)])
    assert r.exit_code == 0, r.output
    assert json.loads(r.output)["n_records"] == 40

    manifest = tmp_path / "manifest.csv"
    r = runner.invoke(
        cli, ["dataset", "split", "--labels", str(labels), "--seed", "3", "--out", str(manifest)]
    )
    assert r.exit_code == 0, r.output
    counts = json.loads(r.output)
    assert counts == {"test": 6, "train": 28, "val": 6}
