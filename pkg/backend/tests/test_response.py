"""
Unit tests for detection, peak refinement and response variation
"""
import numpy as np
import pytest

from app.services.errors import TrackingError
from app.services.response import (
    VariationVector,
    align_to,
    detect,
    local_variation,
    response_from_values,
    subcell_peak,
)
from app.services.spectral import dft2


@pytest.fixture
def blob_sample():
    """Windowed Gaussian blob with some texture, 16x16x2"""
    rows, cols = np.mgrid[0:16, 0:16]
    blob = np.exp(-((rows - 8) ** 2 + (cols - 8) ** 2) / 8.0)
    texture = np.sin(rows * 0.9) * np.cos(cols * 1.3) * 0.2
    return np.stack([blob, blob * texture], axis=2)


def test_detect_peaks_at_shift(blob_sample):
    """A sample shifted by (3, 5) correlates with the unshifted filter at (3, 5)"""
    filter_bank = dft2(blob_sample)
    shifted = np.roll(blob_sample, (3, 5), axis=(0, 1))
    response = detect(dft2(shifted), filter_bank)
    assert response.peak_pos == (3, 5)
    np.testing.assert_allclose(response.displacement(), [3.0, 5.0], atol=0.5)


def test_detect_negative_shift_wraps(blob_sample):
    """Negative displacements come back signed"""
    filter_bank = dft2(blob_sample)
    response = detect(dft2(np.roll(blob_sample, (-2, -4), axis=(0, 1))), filter_bank)
    assert response.peak_pos == (14, 12)
    np.testing.assert_allclose(np.round(response.displacement()), [-2.0, -4.0])


def test_detect_rejects_mismatched_banks(blob_sample):
    """Sample and filter spectra must agree in shape"""
    with pytest.raises(TrackingError) as exc:
        detect(dft2(blob_sample), dft2(blob_sample[:, :, :1]))
    assert exc.value.code == "bank-shape-mismatch"


def test_argmax_tie_breaks_on_smallest_index():
    """Equal maxima resolve to the smallest row, then column"""
    values = np.zeros((5, 5))
    values[3, 1] = values[1, 4] = values[1, 2] = 2.0
    assert response_from_values(values).peak_pos == (1, 2)


def test_subcell_recovers_parabola_vertex():
    """Samples of a parabola give its exact vertex"""
    cols = np.arange(7)
    values = np.tile(-(cols - 3.3) ** 2, (7, 1)) - (np.arange(7)[:, None] - 2.8) ** 2
    response = response_from_values(values)
    np.testing.assert_allclose(subcell_peak(response), [-0.2, 0.3], atol=1e-12)


def test_subcell_symmetric_peak_is_zero():
    """A symmetric neighbourhood has no sub-cell offset"""
    values = np.zeros((5, 5))
    values[2, 2] = 1.0
    values[1, 2] = values[3, 2] = values[2, 1] = values[2, 3] = 0.5
    np.testing.assert_array_equal(subcell_peak(response_from_values(values)), [0.0, 0.0])


def test_subcell_degenerate_curvature_is_zero():
    """A flat neighbourhood falls back to zero offset"""
    values = np.ones((4, 4))
    offsets = subcell_peak(response_from_values(values))
    np.testing.assert_array_equal(offsets, [0.0, 0.0])


def test_subcell_offsets_stay_inside_half_cell(rng):
    """Refined offsets always lie strictly inside (-0.5, 0.5)"""
    for _ in range(50):
        offsets = subcell_peak(response_from_values(rng.standard_normal((6, 6))))
        assert np.all(np.abs(offsets) < 0.5)


def test_align_to_moves_peak(rng):
    """Alignment places the current peak on the previous peak"""
    prev = response_from_values(rng.standard_normal((8, 8)))
    curr = response_from_values(rng.standard_normal((8, 8)))
    aligned = align_to(curr, prev)
    assert np.unravel_index(np.argmax(aligned), aligned.shape) == prev.peak_pos


def test_identical_responses_have_zero_variation(rng):
    """Comparing a response with itself gives an all-zero vector"""
    response = response_from_values(rng.uniform(0.1, 1.0, (8, 8)))
    variation = local_variation(response, response)
    np.testing.assert_array_equal(variation.pi, 0.0)
    assert variation.global_norm == 0.0


def test_shifted_response_has_zero_variation(rng):
    """A pure circular shift is removed by peak alignment"""
    values = rng.uniform(0.1, 1.0, (8, 8))
    prev = response_from_values(values)
    curr = response_from_values(np.roll(values, (2, 3), axis=(0, 1)))
    np.testing.assert_allclose(local_variation(curr, prev).pi, 0.0)


def test_doubled_response_has_unit_variation(rng):
    """Scaling the response by 2 gives relative change 1 everywhere"""
    values = rng.uniform(0.5, 1.0, (6, 6))
    variation = local_variation(response_from_values(2 * values), response_from_values(values))
    np.testing.assert_allclose(variation.pi, 1.0)
    np.testing.assert_allclose(variation.global_norm, 6.0)


def test_near_zero_denominator_is_floored():
    """Tiny previous values are clamped away from zero"""
    prev = np.zeros((4, 4))
    prev[0, 0] = 1.0
    curr = prev.copy()
    curr[2, 2] = 1e-3
    variation = local_variation(response_from_values(curr), response_from_values(prev))
    assert np.all(np.isfinite(variation.pi))
    np.testing.assert_allclose(variation.pi[2, 2], 1e-3 / 1e-2)


def test_centered_moves_peak_to_middle():
    """Centering rolls the peak location onto the map centre"""
    pi = np.zeros((6, 8))
    pi[1, 2] = 5.0
    centered = VariationVector(pi=pi, global_norm=5.0).centered((1, 2))
    assert centered.pi[3, 4] == 5.0
    assert centered.global_norm == 5.0
