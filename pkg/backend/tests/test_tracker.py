"""
Unit tests for the tracker: variant wiring, geometry and per-frame behaviour
"""
import time

import numpy as np
import pytest

from app.config import TrackerConfig, Variant
from app.services import tracker
from app.services.errors import TrackingError
from app.services.imaging import BBox, Frame
from app.services.synthetic import EventSpec, MotionSpec, SyntheticSpec, bundled_suite, make_synthetic
from app.services.tracker import Tracker, build_geometry, configure_variant, gaussian_label


@pytest.fixture
def start_box():
    return BBox(60.0, 40.0, 40.0, 40.0)


@pytest.fixture
def noise_frame():
    return Frame(np.random.default_rng(99).integers(0, 256, (120, 160), dtype=np.uint8))


def run_frames(cfg, frames, box):
    """Track a list of frames and return the tracker"""
    t = Tracker(cfg)
    t.init(frames[0], box)
    for frame in frames[1:]:
        t.update(frame)
    return t


def test_configure_variant_presets():
    """Each variant switches the expected regularizers"""
    base = TrackerConfig()
    strcf = configure_variant(base, Variant.STRCF)
    assert (strcf.delta, strcf.temporal_adaptive, strcf.theta_fixed) == (0.0, False, 15.0)
    asr = configure_variant(base, "asr")
    assert (asr.delta, asr.temporal_adaptive) == (0.2, False)
    atr = configure_variant(base, Variant.ATR)
    assert (atr.delta, atr.temporal_adaptive) == (0.0, True)
    full = configure_variant(strcf, Variant.AUTOTRACK)
    assert (full.delta, full.temporal_adaptive, full.variant) == (0.2, True, Variant.AUTOTRACK)


def test_configure_variant_keeps_custom_delta():
    """A user-set delta survives the spatial-on variants"""
    cfg = configure_variant(TrackerConfig(delta=0.5), Variant.ASR)
    assert cfg.delta == 0.5


def test_gaussian_label_peaks_at_origin():
    """The label is 1 at (0, 0) and circularly symmetric"""
    label = gaussian_label((10, 12), 1.5)
    assert label[0, 0] == 1.0
    assert np.unravel_index(np.argmax(label), label.shape) == (0, 0)
    assert label[1, 0] == pytest.approx(label[9, 0])
    assert label[0, 2] == pytest.approx(label[0, 10])


def test_geometry_for_small_target(start_box):
    """A 40 px target with padding 4 gives a 20x20 cell map at model factor 1"""
    geometry = build_geometry(start_box, TrackerConfig())
    assert geometry.model_factor == 1.0
    assert geometry.feature_shape == (20, 20)
    assert geometry.object_cells == (10.0, 10.0)
    assert geometry.model_size == (80, 80)
    assert geometry.u_base.shape == geometry.crop_mask.shape == (20, 20)
    assert geometry.y_hat.shape == (20, 20)


def test_geometry_downscales_large_targets():
    """Search regions beyond model_max_side are resampled"""
    geometry = build_geometry(BBox(0, 0, 200, 100), TrackerConfig())
    assert geometry.model_factor == pytest.approx(2.0)
    assert geometry.patch_size(1.0) == (400.0, 200.0)


@pytest.mark.parametrize("box", [
    BBox(10, 10, 0, 20),
    BBox(10, 10, 20, -5),
    BBox(500, 500, 20, 20),
    BBox(float("nan"), 10, 20, 20),
])
def test_invalid_init_box_rejected(textured_frame, box):
    """Empty, negative, non-finite or off-frame boxes cannot initialise"""
    with pytest.raises(TrackingError) as exc:
        tracker.init(textured_frame, box, TrackerConfig())
    assert exc.value.code == "invalid-init-box"


def test_update_before_init_rejected(textured_frame):
    """The wrapper refuses to update without a first frame"""
    t = Tracker()
    assert not t.is_initialised
    with pytest.raises(TrackingError) as exc:
        t.update(textured_frame)
    assert exc.value.code == "tracker-not-initialised"


def test_init_record(textured_frame, start_box):
    """The first frame reports the ground-truth box and zeta"""
    state = tracker.init(textured_frame, start_box, TrackerConfig())
    record = state.last_record
    assert record.frame == 0
    assert record.bbox == start_box.as_list()
    assert record.theta == 13.0
    assert record.learned
    assert len(state.objective_trace) == 4
    assert np.all(np.isfinite(state.objective_trace))


def test_static_frame_keeps_box(textured_frame, start_box):
    """Re-presenting the training frame has no variation and barely moves the box"""
    cfg = TrackerConfig(scales=1)
    state = tracker.init(textured_frame, start_box, cfg)
    state, bbox = tracker.update(textured_frame, state, cfg)
    record = state.last_record
    assert record.pi_norm == pytest.approx(0.0, abs=1e-6)
    assert record.theta_ref == pytest.approx(13.0)
    assert record.learned
    assert abs(bbox.center[0] - start_box.center[0]) <= 2.0
    assert abs(bbox.center[1] - start_box.center[1]) <= 2.0
    assert (bbox.w, bbox.h) == (40.0, 40.0)


def test_translation_is_followed(short_spec):
    """Twelve frames of 3 px/frame motion stay within a few pixels"""
    seq = make_synthetic(short_spec)
    t = run_frames(TrackerConfig(), seq.frames, seq.box(0))
    final = np.array(t.records[-1].bbox)
    truth = seq.groundtruth[-1]
    centre_error = np.linalg.norm((final[:2] + final[2:] / 2) - (truth[:2] + truth[2:] / 2))
    assert centre_error < 5.0
    assert [r.frame for r in t.records] == list(range(12))


def test_large_variation_skips_learning(textured_frame, noise_frame, start_box):
    """Above phi the filter and reference response are kept untouched"""
    cfg = TrackerConfig(phi=1.0)
    state = tracker.init(textured_frame, start_box, cfg)
    new_state, _ = tracker.update(noise_frame, state, cfg)
    record = new_state.last_record
    assert record.pi_norm > 1.0
    assert not record.learned
    assert new_state.g_prev_hat is state.g_prev_hat
    assert new_state.r_prev is state.r_prev
    assert record.theta == state.theta_last
    assert 0 < record.theta_ref < 13.0


def test_penalize_mode_still_updates_filter(textured_frame, noise_frame, start_box):
    """Penalize mode trains under a huge temporal penalty instead of skipping"""
    cfg = TrackerConfig(phi=1.0, cease_mode="penalize")
    state = tracker.init(textured_frame, start_box, cfg)
    new_state, _ = tracker.update(noise_frame, state, cfg)
    assert not new_state.last_record.learned
    assert new_state.g_prev_hat is not state.g_prev_hat
    assert not np.array_equal(new_state.g_prev_hat.data, state.g_prev_hat.data)
    assert new_state.r_prev is not state.r_prev


def test_strcf_uses_fixed_theta(short_spec):
    """The baseline trains every frame with theta = 15 and no spatial adaptation"""
    seq = make_synthetic(short_spec)
    t = run_frames(configure_variant(TrackerConfig(), Variant.STRCF), seq.frames, seq.box(0))
    assert all(r.theta == 15.0 for r in t.records)
    assert all(r.learned for r in t.records)
    assert all(r.spatial_gain == 0.0 for r in t.records)


def test_atr_adapts_theta_only(short_spec):
    """Temporal-only variant varies theta with unchanged spatial weights"""
    seq = make_synthetic(short_spec)
    t = run_frames(configure_variant(TrackerConfig(), Variant.ATR), seq.frames, seq.box(0))
    assert all(r.spatial_gain == 0.0 for r in t.records)
    thetas = {r.theta for r in t.records[1:]}
    assert len(thetas) > 1
    assert all(0.0 <= theta <= 13.0 for theta in thetas)


def test_asr_adapts_spatial_only(short_spec):
    """Spatial-only variant keeps theta = 15 while raising weights in the object region"""
    seq = make_synthetic(short_spec)
    t = run_frames(configure_variant(TrackerConfig(), Variant.ASR), seq.frames, seq.box(0))
    assert all(r.theta == 15.0 for r in t.records)
    assert any(r.spatial_gain > 0.0 for r in t.records[1:])


def test_asr_learns_where_autotrack_skips(short_spec):
    """With phi between calm frames and a noise burst, ASR learns exactly on the frames AutoTrack skips"""
    spec = short_spec.model_copy(update={"events": [EventSpec(kind="noise", start=6)]})
    seq = make_synthetic(spec)

    measured = run_frames(TrackerConfig(phi=1e12), seq.frames, seq.box(0)).records
    calm = max(r.pi_norm for r in measured[1:6])
    burst = measured[6].pi_norm
    assert burst > 2.0 * calm
    phi = (burst + calm) / 2.0

    auto = run_frames(TrackerConfig(phi=phi), seq.frames, seq.box(0)).records
    asr = run_frames(configure_variant(TrackerConfig(phi=phi), Variant.ASR), seq.frames, seq.box(0)).records
    skipped = {r.frame for r in auto if not r.learned}
    assert 6 in skipped
    assert all(r.learned == (r.pi_norm <= phi) for r in auto[1:])
    assert all(r.learned for r in asr)
    assert {a.frame for a, b in zip(auto, asr) if a.learned != b.learned} == skipped


def test_trace_line_keys(textured_frame, start_box):
    """Trace lines carry exactly the per-frame fields of the JSONL format"""
    state = tracker.init(textured_frame, start_box, TrackerConfig())
    assert set(state.last_record.trace_line()) == {"frame", "bbox", "pi_norm", "theta", "learned"}


@pytest.mark.slow
def test_bundled_translation_sequence():
    """100 frames of pure translation track with mean centre error under 5 px"""
    spec = next(s for s in bundled_suite() if s.name == "translate")
    seq = make_synthetic(spec)
    t = run_frames(TrackerConfig(), seq.frames, seq.box(0))
    predicted = np.array([r.bbox for r in t.records])
    truth = seq.groundtruth
    errors = np.linalg.norm((predicted[:, :2] + predicted[:, 2:] / 2)
                            - (truth[:, :2] + truth[:, 2:] / 2), axis=1)
    assert errors.mean() < 5.0


@pytest.mark.slow
def test_throughput():
    """A 200x200-px model with 32 channels tracks at 15 frames per second or better"""
    spec = SyntheticSpec(
        name="throughput",
        frames=40,
        width=480,
        height=360,
        start=(100.0, 120.0),
        size=(100, 100),
        motion=MotionSpec(kind="linear", velocity=(3.0, 1.0)),
        seed=11,
    )
    seq = make_synthetic(spec)
    geometry = build_geometry(seq.box(0), TrackerConfig())
    assert geometry.model_size == (200, 200)
    assert geometry.feature_shape == (50, 50)

    t = Tracker(TrackerConfig())
    t.init(seq.frames[0], seq.box(0))
    assert t.state.g_prev_hat.channels == 32
    started = time.perf_counter()
    for frame in seq.frames[1:]:
        t.update(frame)
    fps = (len(seq.frames) - 1) / (time.perf_counter() - started)
    assert fps >= 15.0
