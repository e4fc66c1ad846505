"""
Regularization - bowl-shaped base weights, automatic spatial weights and the temporal reference
"""
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from app.config import TrackerConfig
from app.services.response import VariationVector


@dataclass(frozen=True)
class RegularizationParams:
    delta: float = 0.2
    nu: float = 2e-5
    zeta: float = 13.0
    phi: float = 3000.0
    log_base: str = "e"

    @classmethod
    def from_config(cls, cfg: TrackerConfig) -> "RegularizationParams":
        return cls(delta=cfg.delta, nu=cfg.nu, zeta=cfg.zeta, phi=cfg.phi, log_base=cfg.log_base)

    def log(self, values):
        return np.log10(values) if self.log_base == "10" else np.log(values)


@dataclass(frozen=True)
class RegularizationState:
    u_base: np.ndarray
    crop_mask: np.ndarray
    u_tilde: np.ndarray
    theta_ref: float
    theta_opt: float
    params: RegularizationParams

    @classmethod
    def initial(cls, u_base: np.ndarray, crop_mask: np.ndarray,
                params: RegularizationParams) -> "RegularizationState":
        return cls(u_base=u_base, crop_mask=crop_mask, u_tilde=u_base.copy(),
                   theta_ref=params.zeta, theta_opt=params.zeta, params=params)


def _circular_distance(n: int) -> np.ndarray:
    offsets = np.abs(np.arange(n) - n // 2)
    return np.minimum(offsets, n - offsets).astype(np.float64)


def object_extent(shape: Tuple[int, int], object_cells: Tuple[float, float]) -> Tuple[int, int]:
    rows, cols = shape
    h_o = int(np.clip(round(object_cells[0]), 1, rows))
    w_o = int(np.clip(round(object_cells[1]), 1, cols))
    return h_o, w_o


def build_base_weights(shape: Tuple[int, int], object_cells: Tuple[float, float],
                       u_min: float = 0.1, u_slope: float = 3.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bowl-shaped spatial weights centred on the map, and the object crop mask

    Args:
        shape: (H_f, W_f) feature map size
        object_cells: (h_o, w_o) object extent in cells

    Returns:
        (u_base, crop_mask) both H_f x W_f
    """
    rows, cols = shape
    h_o, w_o = float(object_cells[0]), float(object_cells[1])
    di = _circular_distance(rows)[:, None]
    dj = _circular_distance(cols)[None, :]
    u_base = u_min + u_slope * ((di / h_o) ** 2 + (dj / w_o) ** 2)

    mask_h, mask_w = object_extent(shape, object_cells)
    r0 = rows // 2 - mask_h // 2
    c0 = cols // 2 - mask_w // 2
    crop_mask = np.zeros(shape)
    crop_mask[r0:r0 + mask_h, c0:c0 + mask_w] = 1.0
    return u_base, crop_mask


def spatial_regularizer(pi: VariationVector, state: RegularizationState) -> np.ndarray:
    """u~ = P * delta * log(Pi + 1) + u"""
    params = state.params
    return state.crop_mask * params.delta * params.log(pi.pi + 1.0) + state.u_base


def temporal_reference(global_norm: float, params: RegularizationParams) -> Tuple[float, bool]:
    """
    Reference temporal penalty and the learn flag

    Learning stops when the global variation exceeds phi; the reference is
    reported either way so that traces show what the frame would have used.
    """
    theta_ref = params.zeta / (1.0 + params.log(params.nu * global_norm + 1.0))
    return float(theta_ref), bool(global_norm <= params.phi)


def update_state(state: RegularizationState, pi: VariationVector) -> Tuple[RegularizationState, bool]:
    """Rebuild the per-frame state from the current variation statistics"""
    u_tilde = spatial_regularizer(pi, state)
    theta_ref, learn = temporal_reference(pi.global_norm, state.params)
    return replace(state, u_tilde=u_tilde, theta_ref=theta_ref, theta_opt=theta_ref), learn
