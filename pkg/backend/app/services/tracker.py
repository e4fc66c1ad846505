"""
Tracker - per-frame orchestration of detection, scale search, variation
statistics, automatic regularization and conditional training
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from app.config import TrackerConfig, Variant
from app.services import admm
from app.services.errors import TrackingError
from app.services.features import apply_window, extract_features
from app.services.imaging import BBox, Frame, extract_patch, resize
from app.services.regularization import (
    RegularizationParams,
    RegularizationState,
    build_base_weights,
    update_state,
)
from app.services.response import ResponseMap, detect, local_variation
from app.services.spectral import SpectralBank, dft2, real_fft2

logger = logging.getLogger(__name__)

STRCF_THETA = 15.0
PENALIZE_THETA = 1e6
MIN_FEATURE_CELLS = 4


@dataclass(frozen=True)
class TrackGeometry:
    """Fixed sampling geometry decided on the first frame"""
    base_size: Tuple[float, float]          # object (w, h) in image px at scale 1
    model_factor: float                     # image px per model px at scale 1
    feature_shape: Tuple[int, int]          # (H_f, W_f)
    cell_size: int
    object_cells: Tuple[float, float]       # (h_o, w_o)
    y_hat: np.ndarray
    u_base: np.ndarray
    crop_mask: np.ndarray

    @property
    def model_size(self) -> Tuple[int, int]:
        """Model patch (w, h) in pixels"""
        rows, cols = self.feature_shape
        return cols * self.cell_size, rows * self.cell_size

    def patch_size(self, scale: float) -> Tuple[float, float]:
        w, h = self.model_size
        return w * self.model_factor * scale, h * self.model_factor * scale


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    bbox: List[float]
    pi_norm: float
    theta: float
    learned: bool
    theta_ref: float = 0.0
    spatial_gain: float = 0.0
    scale: float = 1.0

    def trace_line(self) -> dict:
        """The per-frame trace object written to JSONL files"""
        return {
            "frame": self.frame,
            "bbox": self.bbox,
            "pi_norm": self.pi_norm,
            "theta": self.theta,
            "learned": self.learned,
        }


@dataclass(frozen=True)
class TrackState:
    bbox: BBox
    scale: float
    g_prev_hat: SpectralBank
    r_prev: ResponseMap
    theta_last: float
    frame_idx: int
    geometry: TrackGeometry
    regularization: RegularizationState
    objective_trace: List[float] = field(default_factory=list)
    last_record: Optional[FrameRecord] = None


def configure_variant(cfg: TrackerConfig, variant: Variant) -> TrackerConfig:
    """Switch the automatic regularizers on or off for the ablation variants"""
    variant = Variant(variant)
    default_delta = cfg.delta if cfg.delta > 0 else TrackerConfig.model_fields["delta"].default
    presets = {
        Variant.STRCF: {"delta": 0.0, "temporal_adaptive": False, "theta_fixed": STRCF_THETA},
        Variant.ASR: {"delta": default_delta, "temporal_adaptive": False, "theta_fixed": STRCF_THETA},
        Variant.ATR: {"delta": 0.0, "temporal_adaptive": True},
        Variant.AUTOTRACK: {"delta": default_delta, "temporal_adaptive": True},
    }
    return cfg.model_copy(update={"variant": variant, **presets[variant]})


def gaussian_label(shape: Tuple[int, int], sigma: float) -> np.ndarray:
    """Gaussian response centred on the (circular) origin"""
    rows, cols = shape
    dr = (np.arange(rows) + rows // 2) % rows - rows // 2
    dc = (np.arange(cols) + cols // 2) % cols - cols // 2
    return np.exp(-0.5 * (dr[:, None] ** 2 + dc[None, :] ** 2) / sigma ** 2)


def build_geometry(bbox: BBox, cfg: TrackerConfig) -> TrackGeometry:
    search_w = bbox.w * np.sqrt(cfg.padding)
    search_h = bbox.h * np.sqrt(cfg.padding)
    model_factor = max(1.0, max(search_w, search_h) / cfg.model_max_side)

    cell = cfg.cell_size
    rows = max(MIN_FEATURE_CELLS, int(search_h / model_factor / cell))
    cols = max(MIN_FEATURE_CELLS, int(search_w / model_factor / cell))
    object_cells = (bbox.h / (model_factor * cell), bbox.w / (model_factor * cell))

    sigma = np.sqrt(object_cells[0] * object_cells[1]) * cfg.label_sigma_factor
    y_hat = real_fft2(gaussian_label((rows, cols), max(sigma, 0.5)))
    u_base, crop_mask = build_base_weights((rows, cols), object_cells, cfg.u_min, cfg.u_slope)
    return TrackGeometry(
        base_size=(bbox.w, bbox.h),
        model_factor=model_factor,
        feature_shape=(rows, cols),
        cell_size=cell,
        object_cells=object_cells,
        y_hat=y_hat,
        u_base=u_base,
        crop_mask=crop_mask,
    )


def sample(frame: Frame, center: Tuple[float, float], scale: float,
           geometry: TrackGeometry, cfg: TrackerConfig) -> SpectralBank:
    """Windowed feature spectra of the search region at ``center`` and ``scale``"""
    patch = extract_patch(frame, center, geometry.patch_size(scale))
    patch = resize(patch, geometry.model_size)
    features = extract_features(patch, geometry.cell_size, cfg.use_fhog, cfg.use_gray, cfg.use_cn)
    return dft2(apply_window(features))


def _sample_or_degenerate(frame, center, scale, geometry, cfg) -> SpectralBank:
    try:
        return sample(frame, center, scale, geometry, cfg)
    except TrackingError as e:
        raise TrackingError("frame-degenerate", str(e)) from e


def _train(x_hat: SpectralBank, g_prev: Optional[SpectralBank], u_tilde: np.ndarray,
           theta_ref: float, optimize_theta: bool, geometry: TrackGeometry,
           cfg: TrackerConfig) -> admm.AdmmSolution:
    problem = admm.AdmmProblem(
        x_hat=x_hat,
        y_hat=geometry.y_hat,
        g_prev_hat=g_prev,
        u_tilde=u_tilde,
        theta_ref=theta_ref,
        gamma0=cfg.gamma0,
        beta=cfg.beta,
        gamma_max=cfg.gamma_max,
        iters=cfg.admm_iters,
        optimize_theta=optimize_theta,
    )
    return admm.solve(problem)


def _initial_theta(cfg: TrackerConfig) -> float:
    return cfg.zeta if cfg.temporal_adaptive else cfg.theta_fixed


def init(frame: Frame, bbox: BBox, cfg: TrackerConfig) -> TrackState:
    """Train the first filter on the ground-truth box (no temporal term, u~ = u)"""
    if not bbox.is_valid or not bbox.intersects(frame.width, frame.height):
        raise TrackingError("invalid-init-box", f"{bbox.as_list()} vs frame {frame.width}x{frame.height}")

    geometry = build_geometry(bbox, cfg)
    x_hat = sample(frame, bbox.center, 1.0, geometry, cfg)
    solution = _train(x_hat, None, geometry.u_base, 0.0, False, geometry, cfg)

    params = RegularizationParams.from_config(cfg)
    regularization = RegularizationState.initial(geometry.u_base, geometry.crop_mask, params)
    theta = _initial_theta(cfg)
    record = FrameRecord(frame=0, bbox=bbox.as_list(), pi_norm=0.0, theta=theta,
                         learned=True, theta_ref=theta)
    logger.debug("Initialised on %s with feature map %s", bbox.as_list(), geometry.feature_shape)
    return TrackState(
        bbox=bbox,
        scale=1.0,
        g_prev_hat=solution.g_hat,
        r_prev=detect(x_hat, solution.g_hat),
        theta_last=theta,
        frame_idx=0,
        geometry=geometry,
        regularization=regularization,
        objective_trace=solution.objective_trace,
        last_record=record,
    )


def scale_factors(cfg: TrackerConfig) -> np.ndarray:
    half = (cfg.scales - 1) // 2
    return cfg.scale_step ** np.arange(-half, half + 1, dtype=np.float64)


def search(frame: Frame, state: TrackState, cfg: TrackerConfig) -> Tuple[ResponseMap, float]:
    """Detect at every scale candidate; return the winning response and its scale"""
    geometry = state.geometry
    best: Optional[Tuple[float, ResponseMap, float]] = None
    for factor in scale_factors(cfg):
        scale = state.scale * factor
        z_hat = _sample_or_degenerate(frame, state.bbox.center, scale, geometry, cfg)
        response = detect(z_hat, state.g_prev_hat)
        score = response.peak_value * (1.0 if factor == 1.0 else cfg.scale_damping)
        if best is None or score > best[0]:
            best = (score, response, scale)
    return best[1], best[2]


def update(frame: Frame, state: TrackState, cfg: TrackerConfig) -> Tuple[TrackState, BBox]:
    geometry = state.geometry
    frame_idx = state.frame_idx + 1

    # (1)-(2) localisation and scale
    response, scale = search(frame, state, cfg)
    dr, dc = response.displacement()
    step = geometry.cell_size * geometry.model_factor * scale
    cx, cy = state.bbox.center
    cx = float(np.clip(cx + dc * step, 0, frame.width - 1))
    cy = float(np.clip(cy + dr * step, 0, frame.height - 1))
    scale = float(np.clip(scale, cfg.min_scale_factor, cfg.max_scale_factor))
    base_w, base_h = geometry.base_size
    bbox = BBox.from_center((cx, cy), (base_w * scale, base_h * scale))

    # (3)-(4) variation statistics and regularizers
    variation = local_variation(response, state.r_prev).centered(state.r_prev.peak_pos)
    regularization, learn = update_state(state.regularization, variation)
    if not cfg.temporal_adaptive:
        regularization = replace(regularization, theta_ref=cfg.theta_fixed, theta_opt=cfg.theta_fixed)
        learn = True
    theta_ref = regularization.theta_ref
    spatial_gain = float(np.max(regularization.u_tilde - regularization.u_base))

    # (5)-(6) conditional training
    g_hat, r_prev, theta, trace = state.g_prev_hat, state.r_prev, state.theta_last, []
    if learn:
        x_hat = _sample_or_degenerate(frame, (cx, cy), scale, geometry, cfg)
        solution = _train(x_hat, state.g_prev_hat, regularization.u_tilde, theta_ref,
                          cfg.temporal_adaptive, geometry, cfg)
        g_hat, r_prev, theta, trace = solution.g_hat, response, solution.theta_opt, solution.objective_trace
    elif cfg.cease_mode == "penalize":
        x_hat = _sample_or_degenerate(frame, (cx, cy), scale, geometry, cfg)
        solution = _train(x_hat, state.g_prev_hat, regularization.u_tilde, PENALIZE_THETA,
                          False, geometry, cfg)
        g_hat, r_prev, trace = solution.g_hat, response, solution.objective_trace
        logger.warning("Frame %d: variation %.1f > phi, training under a frozen penalty",
                       frame_idx, variation.global_norm)
    else:
        logger.warning("Frame %d: variation %.1f > phi, learning skipped", frame_idx, variation.global_norm)

    regularization = replace(regularization, theta_opt=theta)
    record = FrameRecord(
        frame=frame_idx,
        bbox=bbox.as_list(),
        pi_norm=variation.global_norm,
        theta=float(theta),
        learned=bool(learn),
        theta_ref=float(theta_ref),
        spatial_gain=spatial_gain,
        scale=scale,
    )
    logger.debug("Frame %d: scale=%.4f pi_norm=%.3f theta_ref=%.3f theta=%.3f learned=%s",
                 frame_idx, scale, variation.global_norm, theta_ref, theta, learn)

    new_state = replace(
        state,
        bbox=bbox,
        scale=scale,
        g_prev_hat=g_hat,
        r_prev=r_prev,
        theta_last=float(theta),
        frame_idx=frame_idx,
        regularization=regularization,
        objective_trace=trace,
        last_record=record,
    )
    return new_state, bbox


class Tracker:
    """Stateful convenience wrapper around ``init``/``update`` keeping the frame trace"""

    def __init__(self, cfg: Optional[TrackerConfig] = None):
        self.cfg = cfg or TrackerConfig()
        self.state: Optional[TrackState] = None
        self.records: List[FrameRecord] = []

    def init(self, frame: Frame, bbox: BBox) -> BBox:
        self.state = init(frame, bbox, self.cfg)
        self.records = [self.state.last_record]
        return bbox

    def update(self, frame: Frame) -> BBox:
        if self.state is None:
            raise TrackingError("tracker-not-initialised", "call init() first")
        self.state, bbox = update(frame, self.state, self.cfg)
        self.records.append(self.state.last_record)
        return bbox

    @property
    def is_initialised(self) -> bool:
        return self.state is not None
