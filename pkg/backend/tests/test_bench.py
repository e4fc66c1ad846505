"""
Unit tests for sequence ingestion, metrics, one-pass evaluation and report writers
"""
import numpy as np
import pandas as pd
import pytest

from app.config import EvalOptions, TrackerConfig, Variant
from app.services import bench
from app.services.errors import SequenceError
from app.services.imaging import Frame, save_frame
from app.services.synthetic import EventSpec, bundled_suite, make_synthetic


def write_sequence(root, name, boxes_text, frames=3):
    """Lay out a small on-disk sequence and return its directory"""
    directory = root / name
    (directory / "img").mkdir(parents=True)
    rng = np.random.default_rng(0)
    for i in range(1, frames + 1):
        save_frame(Frame(rng.integers(0, 256, (32, 48), dtype=np.uint8)), directory / "img" / f"{i:04d}.png")
    (directory / "groundtruth_rect.txt").write_text(boxes_text)
    return directory


@pytest.fixture
def seq_dir(tmp_path):
    return write_sequence(tmp_path, "walk", "10,20,30,40\n11,20,30,40\n12,21,30,40\n")


@pytest.fixture
def tiny_specs(short_spec):
    """Two four-frame sequences, one tagged with an illumination event"""
    plain = short_spec.model_copy(update={"name": "b-plain", "frames": 4})
    lit = short_spec.model_copy(update={
        "name": "a-lit", "frames": 4, "seed": 5,
        "events": [EventSpec(kind="illumination", start=2, length=2, factor=1.2)],
    })
    return [plain, lit]


def test_load_sequence(seq_dir):
    """Frames are listed in order and ground truth becomes 0-based"""
    seq = bench.load_sequence(seq_dir)
    assert seq.name == "walk"
    assert len(seq) == 3
    assert [p.name for p in seq.frame_paths] == ["0001.png", "0002.png", "0003.png"]
    np.testing.assert_array_equal(seq.groundtruth[0], [9, 19, 30, 40])
    assert seq.delimiter == ","
    assert len(seq.load_frames()) == 3


def test_tab_delimited_groundtruth(tmp_path):
    """Tab separated files parse the same and remember their delimiter"""
    path = tmp_path / "gt.txt"
    path.write_text("10\t20\t30\t40\n")
    boxes, delimiter = bench.read_groundtruth(path)
    np.testing.assert_array_equal(boxes, [[9, 19, 30, 40]])
    assert delimiter == "\t"


def test_length_mismatch(tmp_path):
    """More frames than boxes is rejected"""
    directory = write_sequence(tmp_path, "short", "10,20,30,40\n11,20,30,40\n")
    with pytest.raises(SequenceError) as exc:
        bench.load_sequence(directory)
    assert exc.value.code == "gt-length-mismatch"


@pytest.mark.parametrize("text", [
    "10,20,0,40\n11,20,30,40\n12,21,30,40\n",
    "a,b,c,d\n11,20,30,40\n12,21,30,40\n",
    "",
    "10,20,30,40,50\n11,20,30,40\n12,21,30,40\n",
    "10,20,30,40\n11,20,30\n12,21,30,40\n",
    "10,20,30,40\n11,20,30,40,50\n12,21,30,40\n",
    "10,20,30,40\nNaN,20,30,40\n12,21,30,40\n",
])
def test_malformed_groundtruth(tmp_path, text):
    """Bad first boxes, wrong field counts, non-numeric or partly absent rows and empty files are malformed"""
    directory = write_sequence(tmp_path, "bad", text)
    with pytest.raises(SequenceError) as exc:
        bench.load_sequence(directory)
    assert exc.value.code == "sequence-malformed"


def test_missing_frame_directory(tmp_path):
    """A directory without img/ is not a sequence"""
    (tmp_path / "groundtruth_rect.txt").write_text("1,1,5,5\n")
    with pytest.raises(SequenceError):
        bench.load_sequence(tmp_path)


def test_groundtruth_round_trip_is_byte_identical(tmp_path, rng):
    """Reading then writing a 100-line file reproduces it exactly"""
    lines = []
    for i in range(100):
        if i == 50:
            lines.append("NaN,NaN,NaN,NaN")
            continue
        x, y, w, h = rng.integers(1, 400, size=4)
        x_text = f"{x}.5" if i % 7 == 0 else str(x)
        lines.append(f"{x_text},{y},{w},{h}")
    source = tmp_path / "in.txt"
    source.write_text("\n".join(lines) + "\n")

    boxes, delimiter = bench.read_groundtruth(source)
    target = tmp_path / "out.txt"
    bench.write_groundtruth(target, boxes, delimiter)
    assert target.read_bytes() == source.read_bytes()


def test_perfect_tracking_scores_one():
    """Identical boxes give precision 1, AUC 1 and zero error"""
    gt = np.array([[0, 0, 10, 10], [5, 5, 10, 10], [9, 3, 20, 8]], dtype=float)
    metrics = bench.compute_metrics(gt, gt)
    assert metrics.precision == 1.0
    assert metrics.auc == 1.0
    assert metrics.overlaps == [1.0, 1.0, 1.0]
    assert metrics.mean_center_error == 0.0


def test_disjoint_tracking_scores_zero():
    """Far-away predictions have zero overlap and precision"""
    gt = np.array([[0, 0, 10, 10], [5, 5, 10, 10]], dtype=float)
    metrics = bench.compute_metrics(gt + [100, 100, 0, 0], gt)
    assert metrics.precision == 0.0
    assert metrics.auc == 0.0
    assert metrics.overlaps == [0.0, 0.0]


def test_absent_groundtruth_frames_are_excluded():
    """NaN ground truth rows do not count towards the metrics"""
    gt = np.array([[0, 0, 10, 10], [np.nan] * 4, [0, 0, 10, 10]])
    pred = np.array([[0, 0, 10, 10], [300, 300, 10, 10], [0, 0, 10, 10]], dtype=float)
    metrics = bench.compute_metrics(pred, gt)
    assert metrics.center_errors[1] is None
    assert metrics.overlaps[1] is None
    assert metrics.precision == 1.0


def test_missing_prediction_counts_as_failure():
    """A frame without a prediction has infinite error and zero overlap"""
    gt = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float)
    pred = np.array([[0, 0, 10, 10], [np.nan] * 4])
    errors = bench.center_errors(pred, gt)
    assert np.isinf(errors[1])
    assert bench.overlaps(pred, gt)[1] == 0.0
    assert bench.compute_metrics(pred, gt).precision == 0.5


def test_curves_are_monotone(rng):
    """Precision never falls and success never rises with the threshold"""
    gt = np.column_stack([rng.uniform(0, 100, (40, 2)), rng.uniform(10, 50, (40, 2))])
    pred = gt + np.column_stack([rng.normal(0, 15, (40, 2)), rng.normal(0, 5, (40, 2))])
    pred[:, 2:] = np.abs(pred[:, 2:]) + 1
    metrics = bench.compute_metrics(pred, gt)
    assert np.all(np.diff(metrics.precision_curve) >= 0)
    assert np.all(np.diff(metrics.success_curve) <= 0)
    assert len(metrics.precision_curve) == 51
    assert len(metrics.success_curve) == 50
    assert 0.0 <= metrics.auc <= 1.0


def test_aggregate_mean_versus_pooled():
    """Per-sequence mean weights sequences equally, pooling weights frames"""
    gt_short = np.tile([0.0, 0.0, 10.0, 10.0], (2, 1))
    gt_long = np.tile([0.0, 0.0, 10.0, 10.0], (8, 1))
    good = bench.EvalReport(name="a", variant="autotrack", frames=2, fps=10.0,
                            metrics=bench.compute_metrics(gt_short, gt_short))
    bad = bench.EvalReport(name="b", variant="autotrack", frames=8, fps=20.0,
                           metrics=bench.compute_metrics(gt_long + [100, 0, 0, 0], gt_long))
    mean = bench.aggregate([good, bad], "autotrack")
    pooled = bench.aggregate([good, bad], "autotrack", pooled=True)
    assert mean.precision == pytest.approx(0.5)
    assert pooled.precision == pytest.approx(0.2)
    assert mean.fps == pytest.approx(15.0)
    assert pooled.pooled and not mean.pooled


def test_aggregate_of_nothing():
    """No scored sequences give an all-zero aggregate"""
    result = bench.aggregate([], "strcf")
    assert (result.sequences, result.precision, result.auc) == (0, 0.0, 0.0)


def test_run_ope_on_synthetic(short_spec):
    """One-pass evaluation keeps one trace entry per frame"""
    seq = make_synthetic(short_spec)
    report = bench.run_ope(seq, TrackerConfig())
    assert not report.failed
    assert report.frames == 12
    assert [t.frame for t in report.trace] == list(range(12))
    assert report.metrics.precision >= 0.9
    assert report.fps > 0


def test_replay_matches_live_metrics(short_spec, tmp_path):
    """Metrics recomputed from a saved trace equal the live ones"""
    seq = make_synthetic(short_spec)
    report = bench.run_ope(seq, TrackerConfig())
    path = tmp_path / "trace.jsonl"
    bench.write_trace_jsonl(report.trace, path)
    assert len(path.read_text().splitlines()) == 12
    replayed = bench.replay_trace(path, seq)
    assert replayed.model_dump() == report.metrics.model_dump()


def test_bad_trace_file(tmp_path, short_spec):
    """Unparseable trace files are reported as malformed"""
    path = tmp_path / "trace.jsonl"
    path.write_text("not json\n")
    with pytest.raises(SequenceError):
        bench.replay_trace(path, make_synthetic(short_spec))


def test_evaluate_orders_reports(tiny_specs):
    """Reports come back ordered by variant then name, with attribute scores"""
    sequences = [make_synthetic(spec) for spec in tiny_specs]
    report = bench.evaluate(sequences, TrackerConfig(), EvalOptions(workers=2),
                            variants=[Variant.AUTOTRACK, Variant.STRCF])
    assert [(r.variant, r.name) for r in report.sequences] == [
        ("autotrack", "a-lit"), ("autotrack", "b-plain"), ("strcf", "a-lit"), ("strcf", "b-plain"),
    ]
    assert [a.variant for a in report.aggregates] == ["autotrack", "strcf"]
    assert all(a.sequences == 2 for a in report.aggregates)
    assert [(s.attribute, s.variant, s.sequences) for s in report.attributes] == [
        ("illumination", "autotrack", 1), ("illumination", "strcf", 1),
    ]
    assert report.config["delta"] == 0.2
    assert report.precision_threshold == 20.0


def test_evaluate_is_deterministic(tiny_specs):
    """Two runs give identical reports apart from timing"""
    sequences = [make_synthetic(spec) for spec in tiny_specs]
    first = bench.evaluate(sequences, TrackerConfig())
    second = bench.evaluate(sequences, TrackerConfig(), EvalOptions(workers=2))
    strip = {"sequences": {"__all__": {"fps"}}, "aggregates": {"__all__": {"fps"}}, "config": True}
    assert first.model_dump(exclude=strip) == second.model_dump(exclude=strip)


def test_evaluate_directory_marks_broken_sequences(tmp_path, tiny_specs):
    """A sequence that cannot be loaded is reported as failed, the rest still run"""
    make_synthetic(tiny_specs[0], tmp_path / "good")
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "groundtruth_rect.txt").write_text("1,1,10,10\n")
    report = bench.evaluate_directory(tmp_path, TrackerConfig())
    by_name = {r.name: r for r in report.sequences}
    assert by_name["broken"].failed
    assert by_name["broken"].metrics is None
    assert not by_name["good"].failed
    assert report.aggregates[0].sequences == 1


def test_report_writers(tiny_specs, tmp_path):
    """JSON and CSV reports hold every sequence and every curve point"""
    sequences = [make_synthetic(spec) for spec in tiny_specs]
    report = bench.evaluate(sequences, TrackerConfig())
    bench.write_report_json(report, tmp_path / "report.json")
    loaded = bench.BenchReport.model_validate_json((tmp_path / "report.json").read_text())
    assert [r.name for r in loaded.sequences] == ["a-lit", "b-plain"]

    bench.write_report_csv(report, tmp_path / "curves.csv")
    curves = pd.read_csv(tmp_path / "curves.csv")
    assert list(curves.columns) == ["variant", "sequence", "curve", "threshold", "value"]
    assert len(curves) == 2 * (51 + 50)


@pytest.mark.slow
def test_bundled_suite_precision():
    """The full tracker keeps precision at 20 px of at least 0.95 on every bundled sequence"""
    sequences = [make_synthetic(spec) for spec in bundled_suite()]
    report = bench.evaluate(sequences, TrackerConfig(), EvalOptions(workers=3))
    assert len(report.sequences) == 3
    assert all(r.metrics.precision >= 0.95 for r in report.sequences)


@pytest.mark.slow
def test_occlusion_autotrack_not_worse_than_baseline():
    """On the occlusion sequence the full tracker is at least as accurate as the baseline"""
    spec = next(s for s in bundled_suite() if s.name == "occlusion")
    seq = make_synthetic(spec)
    full = bench.run_ope(seq, TrackerConfig())
    baseline = bench.run_ope(seq, bench.configure_variant(TrackerConfig(), Variant.STRCF))
    assert full.metrics.mean_center_error <= baseline.metrics.mean_center_error
