"""
Spectral - per-channel 2-D DFTs (forward unscaled, inverse scaled by 1/T)
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import fft as sp_fft

from app.services.errors import TrackingError
from app.services.features import FeatureTensor

REAL_RESIDUAL_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SpectralBank:
    """H_f x W_f x K complex spectra of a feature stack or filter bank"""
    data: np.ndarray
    cell_size: int = 1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> int:
        """T, the number of spatial positions"""
        return self.data.shape[0] * self.data.shape[1]


def fft2(values: np.ndarray) -> np.ndarray:
    return sp_fft.fft2(values, axes=(0, 1))


def ifft2(values: np.ndarray) -> np.ndarray:
    return sp_fft.ifft2(values, axes=(0, 1))


def hermitian_complete(half: np.ndarray, cols: int) -> np.ndarray:
    """
    Full spectrum from its first cols // 2 + 1 columns

    The missing columns follow from Hermitian symmetry,
    F[k0, k1] = conj(F[-k0, -k1]).
    """
    rows, kept = half.shape[:2]
    full = np.empty((rows, cols) + half.shape[2:], dtype=half.dtype)
    full[:, :kept] = half
    if cols > kept:
        mirror_rows = (-np.arange(rows)) % rows
        mirror_cols = cols - np.arange(kept, cols)
        full[:, kept:] = np.conj(half[mirror_rows][:, mirror_cols])
    return full


def real_fft2(values: np.ndarray, full: bool = True) -> np.ndarray:
    """Forward transform of a real signal; ``full=False`` keeps only the non-redundant half"""
    half = sp_fft.rfft2(values, axes=(0, 1))
    return hermitian_complete(half, values.shape[1]) if full else half


def real_ifft2(values: np.ndarray, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """
    Real inverse of a Hermitian spectrum, full or half

    Only the first cols // 2 + 1 columns are read; ``shape`` gives the
    spatial size when ``values`` is a half spectrum.
    """
    rows, cols = shape or values.shape[:2]
    return sp_fft.irfft2(values[:, :cols // 2 + 1], s=(rows, cols), axes=(0, 1))


def half_spectrum_weights(cols: int) -> np.ndarray:
    """Multiplicity of each stored column of a half spectrum in the full one"""
    weights = np.full(cols // 2 + 1, 2.0)
    weights[0] = 1.0
    if cols % 2 == 0:
        weights[-1] = 1.0
    return weights


def real_part(values: np.ndarray) -> np.ndarray:
    """Real inverse transform; rejects spectra whose inverse is not real"""
    spatial = ifft2(values)
    scale = np.linalg.norm(spatial.real)
    residual = np.linalg.norm(spatial.imag)
    if residual > REAL_RESIDUAL_TOLERANCE * max(scale, np.finfo(float).tiny):
        raise TrackingError("non-real-inverse",
                            f"imaginary residual {residual:.3e} vs norm {scale:.3e}")
    return spatial.real


def dft2(tensor: Union[FeatureTensor, np.ndarray]) -> SpectralBank:
    if isinstance(tensor, FeatureTensor):
        return SpectralBank(real_fft2(tensor.data.astype(np.float64)), tensor.cell_size)
    data = np.asarray(tensor, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    return SpectralBank(real_fft2(data))


def idft2_real(bank: SpectralBank) -> FeatureTensor:
    return FeatureTensor(data=real_part(bank.data), cell_size=bank.cell_size)


def parseval_norm(bank: SpectralBank) -> float:
    """Sum of squared magnitudes; equals T times the spatial energy"""
    return float(np.sum(np.abs(bank.data) ** 2))
