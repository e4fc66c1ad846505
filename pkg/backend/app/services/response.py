"""
Response - detection, peak localisation and response-variation statistics
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.services.errors import TrackingError
from app.services.spectral import SpectralBank, real_ifft2

SUBCELL_LIMIT = np.nextafter(0.5, 0.0)
MIN_DENOMINATOR = 1e-4
RELATIVE_DENOMINATOR = 1e-2


@dataclass(frozen=True)
class ResponseMap:
    values: np.ndarray
    peak_pos: Tuple[int, int]
    peak_subcell: Tuple[float, float]
    peak_value: float

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def displacement(self) -> np.ndarray:
        """Signed (row, col) offset of the refined peak from the origin, in cells"""
        rows, cols = self.values.shape
        r, c = self.peak_pos
        dr = (r + rows // 2) % rows - rows // 2
        dc = (c + cols // 2) % cols - cols // 2
        return np.array([dr + self.peak_subcell[0], dc + self.peak_subcell[1]])


@dataclass(frozen=True)
class VariationVector:
    """Per-location relative response change and its Euclidean norm"""
    pi: np.ndarray
    global_norm: float

    @classmethod
    def zeros(cls, shape: Tuple[int, int]) -> "VariationVector":
        return cls(pi=np.zeros(shape), global_norm=0.0)

    def centered(self, peak_pos: Tuple[int, int]) -> "VariationVector":
        """Roll so ``peak_pos`` lands on the map centre, where the filter support lives"""
        rows, cols = self.pi.shape
        shift = (rows // 2 - peak_pos[0], cols // 2 - peak_pos[1])
        return VariationVector(pi=np.roll(self.pi, shift, axis=(0, 1)), global_norm=self.global_norm)


def _quadratic_offset(v_minus: float, v_zero: float, v_plus: float) -> float:
    curvature = v_minus - 2.0 * v_zero + v_plus
    if not curvature < 0:
        return 0.0
    offset = (v_minus - v_plus) / (2.0 * curvature)
    return float(np.clip(offset, -SUBCELL_LIMIT, SUBCELL_LIMIT))


def _peak_offsets(values: np.ndarray, peak_pos: Tuple[int, int]) -> Tuple[float, float]:
    rows, cols = values.shape
    r, c = peak_pos
    v0 = values[r, c]
    dr = _quadratic_offset(values[(r - 1) % rows, c], v0, values[(r + 1) % rows, c])
    dc = _quadratic_offset(values[r, (c - 1) % cols], v0, values[r, (c + 1) % cols])
    return dr, dc


def response_from_values(values: np.ndarray) -> ResponseMap:
    """Wrap a raw response surface; equal maxima resolve to the smallest row, then column"""
    values = np.asarray(values, dtype=np.float64)
    r, c = np.unravel_index(int(np.argmax(values)), values.shape)
    peak_pos = (int(r), int(c))
    return ResponseMap(
        values=values,
        peak_pos=peak_pos,
        peak_subcell=_peak_offsets(values, peak_pos),
        peak_value=float(values[peak_pos]),
    )


def subcell_peak(response: ResponseMap) -> np.ndarray:
    """Quadratic refinement of the peak along each axis, offsets in (-0.5, 0.5)"""
    return np.array(_peak_offsets(response.values, response.peak_pos))


def correlate(z_hat: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """Spatial response of filter spectra ``g_hat`` on sample spectra ``z_hat``"""
    rows, cols = z_hat.shape[:2]
    kept = cols // 2 + 1
    return real_ifft2(np.sum(z_hat[:, :kept] * np.conj(g_hat[:, :kept]), axis=2), (rows, cols))


def detect(z_hat: SpectralBank, g_prev_hat: SpectralBank) -> ResponseMap:
    if z_hat.data.shape != g_prev_hat.data.shape:
        raise TrackingError("bank-shape-mismatch",
                            f"{z_hat.data.shape} vs {g_prev_hat.data.shape}")
    return response_from_values(correlate(z_hat.data, g_prev_hat.data))


def align_to(current: ResponseMap, previous: ResponseMap) -> np.ndarray:
    """Circularly shift ``current`` so its peak lands on ``previous``'s peak"""
    shift = (previous.peak_pos[0] - current.peak_pos[0],
             previous.peak_pos[1] - current.peak_pos[1])
    return np.roll(current.values, shift, axis=(0, 1))


def local_variation(r_curr: ResponseMap, r_prev: ResponseMap) -> VariationVector:
    if r_curr.shape != r_prev.shape:
        raise TrackingError("bank-shape-mismatch", f"{r_curr.shape} vs {r_prev.shape}")

    shifted = align_to(r_curr, r_prev)
    prev = r_prev.values
    floor = max(MIN_DENOMINATOR, RELATIVE_DENOMINATOR * abs(r_prev.peak_value))
    denominator = np.where(np.abs(prev) < floor, np.copysign(floor, prev), prev)

    pi = np.abs((shifted - prev) / denominator)
    return VariationVector(pi=pi, global_norm=float(np.linalg.norm(pi)))
