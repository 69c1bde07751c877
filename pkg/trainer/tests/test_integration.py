"""Full interchange loop across both packages, driven through the CLIs.

fixture raster -> grid -> PNG dump -> split manifest -> fit -> export ->
neural inference back in the mapping pipeline. Every hop crosses a file
contract; nothing shares in-process state.
"""

import csv
import json
import subprocess
import sys

import pytest


def run_cli(*args):
    proc = subprocess.run(list(args), capture_output=True, text=True)
    assert proc.returncode == 0, f"{args}: {proc.stderr or proc.stdout}"
    return proc.stdout


@pytest.mark.slow
def test_cli_interchange_loop(tmp_path):
    fx = tmp_path / "fx"
    run_cli("wastemap", "synth", "make", "--rows", "15", "--cols", "15", "--plant", "100",
            "--gsd", "0.1", "--seed", "21", "--out", str(fx), "--region", "loop")
    raster = fx / "loop.tif"
    truth = fx / "loop_truth.csv"

    grid = tmp_path / "grid.csv"
    run_cli("wastemap", "grid", "make", "--raster", str(raster), "--out", str(grid))

    pngs = tmp_path / "tiles"
    run_cli("wastemap", "tiles", "extract", "--raster", str(raster), "--grid", str(grid),
            "--out", str(pngs), "--region", "loop")

    # truth rows become annotation labels
    labels = tmp_path / "labels.csv"
    with open(truth, newline="") as f, open(labels, "w", newline="") as g:
        w = csv.writer(g)
        w.writerow(["region_id", "row", "col", "label"])
        for rec in csv.DictReader(f):
            w.writerow([rec["region_id"], rec["row"], rec["col"], rec["predicted_class"]])

    manifest = tmp_path / "manifest.csv"
    out = run_cli("wastemap", "dataset", "split", "--labels", str(labels),
                  "--seed", "3", "--out", str(manifest))
    counts = json.loads(out)
    assert counts["train"] + counts["val"] + counts["test"] == 225

    train_dir = tmp_path / "trained"
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("epochs: 20\npatience: 20\nbatch_size: 16\ninitial_lr: 0.003\nseed: 1\n")
    out = run_cli("trainer", "fit", "--manifest", str(manifest), "--images", str(pngs),
                  "--config", str(cfg), "--out-dir", str(train_dir))
    assert json.loads(out.splitlines()[-1])["best_val_f1_waste"] >= 0.95

    model = tmp_path / "model.onnx"
    run_cli("trainer", "export", "--checkpoint", str(train_dir / "checkpoint.pt"),
            "--out", str(model))

    preds = tmp_path / "preds.csv"
    run_cli("wastemap", "infer", "run", "--raster", str(raster), "--grid", str(grid),
            "--model", str(model), "--batch-size", "64", "--out", str(preds),
            "--region", "loop")

    truth_map = {}
    with open(truth, newline="") as f:
        for rec in csv.DictReader(f):
            truth_map[(rec["row"], rec["col"])] = rec["predicted_class"]
    correct = total = 0
    conf_correct, conf_incorrect = [], []
    with open(preds, newline="") as f:
        for rec in csv.DictReader(f):
            total += 1
            hit = truth_map[(rec["row"], rec["col"])] == rec["predicted_class"]
            correct += hit
            (conf_correct if hit else conf_incorrect).append(float(rec["confidence"]))
    assert total == 225
    assert correct / total >= 0.95  # learned classifier recovers the plan
    if conf_incorrect:
        # well-fitted models are more confident when they are right
        assert sum(conf_correct) / len(conf_correct) > sum(conf_incorrect) / len(conf_incorrect)
