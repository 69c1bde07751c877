import numpy as np
import pytest

from wastemap.errors import BackendError, ConfigError, DataError, JoinError
from wastemap.geogrid import Grid
from wastemap.infer import (
    Prediction,
    ReferenceClassifier,
    confidence_stats,
    predictions_from_probs,
    read_predictions_csv,
    run_inference,
    write_predictions_csv,
)


def _tensor_with_markers(n_marker_px, size=128):
    t = np.full((size, size, 3), 100, dtype=np.uint8)
    t[:, :, 1] = 120
    placed = 0
    for y in range(size):
        for x in range(size):
            if placed >= n_marker_px:
                return t
            t[y, x] = (255, 20, 40)
            placed += 1
    return t


def test_reference_black_tile_is_background():
    clf = ReferenceClassifier()
    t = np.zeros((1, 128, 128, 3), dtype=np.uint8)
    probs = clf.predict_proba(t)
    assert probs[0, 0] > 0.5  # background prob
    preds = predictions_from_probs(probs, [(0, 0)])
    assert preds[0].predicted_class == "background"
    assert preds[0].confidence >= 0.5


def test_reference_planted_five_percent_is_waste():
    n = int(0.05 * 128 * 128)
    probs = ReferenceClassifier().predict_proba(_tensor_with_markers(n)[None])
    assert probs[0, 1] > 0.5


def test_reference_exact_threshold_is_background():
    # threshold set to an achievable count: fraction == threshold -> strict rule
    n_px = 327
    fraction = n_px / (128 * 128)
    clf = ReferenceClassifier(fraction=fraction)
    probs = clf.predict_proba(_tensor_with_markers(n_px)[None])
    assert probs[0, 1] == pytest.approx(0.5)
    preds = predictions_from_probs(probs, [(0, 0)])
    assert preds[0].predicted_class == "background"
    # one more marker pixel flips it
    probs2 = clf.predict_proba(_tensor_with_markers(n_px + 1)[None])
    assert predictions_from_probs(probs2, [(0, 0)])[0].predicted_class == "waste"


def test_reference_probabilities_sum_to_one():
    rng = np.random.default_rng(0)
    t = rng.integers(0, 256, (16, 128, 128, 3), dtype=np.uint8)
    probs = ReferenceClassifier().predict_proba(t)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_invalid_threshold():
    with pytest.raises(ConfigError):
        ReferenceClassifier(fraction=1.5)


def test_argmax_consistency_random_probs():
    rng = np.random.default_rng(1)
    p_waste = rng.random(100)
    probs = np.column_stack([1 - p_waste, p_waste])
    preds = predictions_from_probs(probs, [(0, i) for i in range(100)])
    for p, pw in zip(preds, p_waste):
        assert p.confidence >= 0.5
        assert (p.predicted_class == "waste") == (pw > 0.5)
        assert p.confidence == pytest.approx(max(pw, 1 - pw))


def test_bad_probability_sum_rejected():
    probs = np.array([[0.2, 0.2]])
    with pytest.raises(BackendError):
        predictions_from_probs(probs, [(0, 0)])


def test_run_inference_planted_fixture(small_raster, small_grid, small_fixture):
    plan, _paths = small_fixture
    preds, skipped = run_inference(small_raster, small_grid, ReferenceClassifier(), batch_size=16)
    assert len(preds) == 100 and not skipped
    waste = {p.tile_id for p in preds if p.predicted_class == "waste"}
    assert waste == set(plan.planted)
    # ordering matches grid order
    assert [p.tile_id for p in preds] == [t.tile_id for t in small_grid.tiles]


def test_batch_invariance(small_raster, small_grid):
    p1, _ = run_inference(small_raster, small_grid, ReferenceClassifier(), batch_size=1)
    p64, _ = run_inference(small_raster, small_grid, ReferenceClassifier(), batch_size=64)
    assert [(p.tile_id, p.predicted_class, p.confidence) for p in p1] == [
        (p.tile_id, p.predicted_class, p.confidence) for p in p64
    ]


def test_empty_grid(small_raster, small_grid):
    empty = Grid(
        working_epsg=small_grid.working_epsg,
        tile_size_m=5.0,
        origin_x=0.0,
        origin_y_top=0.0,
        n_rows=0,
        n_cols=0,
        include_partials=False,
        min_valid_fraction=0.5,
        raster_path=small_grid.raster_path,
        raster_epsg=small_grid.raster_epsg,
    )
    preds, skipped = run_inference(small_raster, empty, ReferenceClassifier())
    assert preds == [] and skipped == []


class FlakyBackend:
    """Fails once at a chosen batch, then behaves."""

    name = "flaky"

    def __init__(self, fail_at_batch):
        self.inner = ReferenceClassifier()
        self.fail_at = fail_at_batch
        self.calls = 0

    def predict_proba(self, tensors):
        self.calls += 1
        if self.calls == self.fail_at:
            raise RuntimeError("injected fault")
        return self.inner.predict_proba(tensors)


def test_checkpoint_resume_equals_uninterrupted(tmp_path, small_raster, small_grid):
    ckpt = tmp_path / "part.csv"
    flaky = FlakyBackend(fail_at_batch=4)
    with pytest.raises(BackendError, match="injected fault"):
        run_inference(
            small_raster,
            small_grid,
            flaky,
            batch_size=8,
            region_id="fixture",
            checkpoint_path=ckpt,
            checkpoint_every=1,
        )
    assert ckpt.is_file()
    resumed, _ = run_inference(
        small_raster,
        small_grid,
        FlakyBackend(fail_at_batch=10**9),
        batch_size=8,
        region_id="fixture",
        checkpoint_path=ckpt,
        checkpoint_every=1,
    )
    clean, _ = run_inference(
        small_raster, small_grid, ReferenceClassifier(), batch_size=8, region_id="fixture"
    )
    assert [(p.tile_id, p.predicted_class, p.confidence) for p in resumed] == [
        (p.tile_id, p.predicted_class, p.confidence) for p in clean
    ]


def test_checkpoint_region_mismatch(tmp_path, small_raster, small_grid):
    ckpt = tmp_path / "part.csv"
    flaky = FlakyBackend(fail_at_batch=2)
    with pytest.raises(BackendError):
        run_inference(
            small_raster, small_grid, flaky, batch_size=8,
            region_id="fixture", checkpoint_path=ckpt, checkpoint_every=1,
        )
    with pytest.raises(DataError, match="belongs to region"):
        run_inference(
            small_raster, small_grid, ReferenceClassifier(), batch_size=8,
            region_id="other", checkpoint_path=ckpt,
        )


def test_skips_low_valid_fraction_tiles(small_raster, small_grid):
    import copy

    from wastemap.scoring import oddmswc

    grid = copy.deepcopy(small_grid)
    grid.tiles[3].valid_fraction = 0.2
    grid.tiles[7].valid_fraction = 0.49
    preds, skipped = run_inference(small_raster, grid, ReferenceClassifier(), batch_size=16)
    assert len(preds) == 98
    assert skipped == sorted([grid.tiles[3].tile_id, grid.tiles[7].tile_id])
    # skipped tiles never enter the contamination denominator
    summary = oddmswc(preds, region_id="fixture")
    assert summary.n_tiles_analyzed == 98
    assert summary.oddmswc == 100.0 * summary.n_waste / 98


def test_confidence_stats():
    preds = [
        Prediction((0, 0), "waste", 0.9, "r"),
        Prediction((0, 1), "waste", 0.7, "r"),
    ]
    truth = {(0, 0): "waste", (0, 1): "background"}
    stats = confidence_stats(preds, truth)
    assert stats["mean_confidence"] == pytest.approx(0.8)
    assert stats["mean_confidence_correct"] == pytest.approx(0.9)
    assert stats["mean_confidence_incorrect"] == pytest.approx(0.7)


def test_confidence_stats_all_correct():
    preds = [Prediction((0, i), "waste", 1.0, "r") for i in range(4)]
    truth = {(0, i): "waste" for i in range(4)}
    stats = confidence_stats(preds, truth)
    assert stats["mean_confidence_correct"] == 1.0
    assert stats["mean_confidence_incorrect"] is None


def test_confidence_stats_no_overlap():
    preds = [Prediction((0, 0), "waste", 1.0, "r")]
    with pytest.raises(JoinError):
        confidence_stats(preds, {(9, 9): "waste"})


def test_predictions_csv_roundtrip(tmp_path):
    preds = [
        Prediction((0, 0), "waste", 0.875, "r1"),
        Prediction((1, 2), "background", 2 / 3, "r1"),
    ]
    path = tmp_path / "preds.csv"
    write_predictions_csv(preds, "r1", path)
    assert path.read_text().splitlines()[0] == "region_id,row,col,predicted_class,confidence"
    loaded = read_predictions_csv(path)
    assert [(p.region_id, p.tile_id, p.predicted_class, p.confidence) for p in loaded] == [
        ("r1", (0, 0), "waste", 0.875),
        ("r1", (1, 2), "background", 2 / 3),
    ]


def test_predictions_csv_unknown_class(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("region_id,row,col,predicted_class,confidence\nr,0,0,garbage,0.9\n")
    with pytest.raises(DataError):
        read_predictions_csv(path)
