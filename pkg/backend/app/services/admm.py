"""
ADMM solver - joint optimisation of the filter bank and the temporal penalty

The objective, in spatial units (Parseval-equivalent to its spectral form):

    E(h, theta) = 1/(2T) sum_j |y_j - g_j^H x_j|^2 + 1/2 sum_k ||u~ . h^k||^2
                  + theta/(2T) sum_k ||g^k - g_prev^k||^2 + 1/2 (theta - theta_ref)^2

with g = dft2(h). The augmented term is gamma/2 ||g - dft2(h) + v||^2 with the
scaled multiplier v, so the G-step runs with penalty gamma * T.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.services.errors import AdmmDivergedError
from app.services.features import FeatureTensor
from app.services.spectral import (
    SpectralBank,
    half_spectrum_weights,
    hermitian_complete,
    real_fft2,
    real_ifft2,
)

logger = logging.getLogger(__name__)


@dataclass
class AdmmProblem:
    x_hat: SpectralBank
    y_hat: np.ndarray
    g_prev_hat: Optional[SpectralBank]
    u_tilde: np.ndarray
    theta_ref: float
    gamma0: float = 1.0
    beta: float = 10.0
    gamma_max: float = 10000.0
    iters: int = 4
    optimize_theta: bool = True

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        shape = self.x_hat.data.shape
        if self.g_prev_hat is not None and self.g_prev_hat.data.shape != shape:
            raise ValueError(f"g_prev_hat shape {self.g_prev_hat.data.shape} != {shape}")
        if self.y_hat.shape != shape[:2] or self.u_tilde.shape != shape[:2]:
            raise ValueError("label and spatial weights must match the map size")

    @property
    def size(self) -> int:
        return self.x_hat.size

    @property
    def has_temporal(self) -> bool:
        return self.g_prev_hat is not None


@dataclass
class AdmmSolution:
    g_hat: SpectralBank
    h: FeatureTensor
    theta_opt: float
    objective_trace: List[float] = field(default_factory=list)
    residual: float = 0.0


def update_g(x_hat: np.ndarray, y_hat: np.ndarray, g_prev_hat: np.ndarray,
             h_hat: np.ndarray, v_hat: np.ndarray, gamma: float, theta: float) -> np.ndarray:
    """
    Per-pixel solve of (x x^H + (gamma + theta) I) g = rho via Sherman-Morrison,
    rho = x conj(y) + theta g_prev - gamma v + gamma h
    """
    a = gamma + theta
    rho = x_hat * np.conj(y_hat)[:, :, None] + theta * g_prev_hat - gamma * v_hat + gamma * h_hat
    s_xx = np.sum(np.abs(x_hat) ** 2, axis=2)
    s_xrho = np.sum(np.conj(x_hat) * rho, axis=2)
    return (rho - x_hat * (s_xrho / (a + s_xx))[:, :, None]) / a


def update_h(g_hat: np.ndarray, v_hat: np.ndarray, u_tilde: np.ndarray, gamma: float) -> np.ndarray:
    """Closed form h = gamma T (g + v) / (u~^2 + gamma T), per channel"""
    rows, cols = u_tilde.shape
    gamma_t = gamma * rows * cols
    spatial = real_ifft2(g_hat + v_hat, (rows, cols))
    return gamma_t * spatial / ((u_tilde ** 2)[:, :, None] + gamma_t)


def _energy(values: np.ndarray, weights: Optional[np.ndarray]) -> float:
    """Sum of squared magnitudes; ``weights`` are column multiplicities of a half spectrum"""
    power = np.abs(values) ** 2
    if weights is None:
        return float(np.sum(power))
    if power.ndim == 3:
        power = power.sum(axis=2)
    return float(np.sum(power * weights[None, :]))


def update_theta(g_hat: np.ndarray, g_prev_hat: np.ndarray, theta_ref: float,
                 size: Optional[int] = None, weights: Optional[np.ndarray] = None) -> float:
    """
    theta* = max(0, theta_ref - S/2), S the filter change energy in spatial units

    For half spectra pass the spatial ``size`` T and the column ``weights``.
    """
    size = size or g_hat.shape[0] * g_hat.shape[1]
    change = _energy(g_hat - g_prev_hat, weights) / size
    return max(0.0, theta_ref - change / 2.0)


def update_multiplier(v_hat: np.ndarray, g_hat: np.ndarray, h: np.ndarray, gamma: float,
                      beta: float = 10.0, gamma_max: float = 10000.0,
                      h_hat: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float]:
    """Scaled multiplier step; ``h_hat`` may be passed when dft2(h) is already known"""
    if h_hat is None:
        h_hat = real_fft2(h)
    return v_hat + (g_hat - h_hat), min(gamma_max, beta * gamma)


def _objective(x_hat: np.ndarray, y_hat: np.ndarray, g_prev: Optional[np.ndarray],
               u_tilde: np.ndarray, h: np.ndarray, h_hat: np.ndarray, theta: float,
               theta_ref: float, weights: Optional[np.ndarray] = None) -> float:
    size = u_tilde.size
    residual = y_hat - np.sum(np.conj(h_hat) * x_hat, axis=2)
    value = 0.5 * _energy(residual, weights) / size
    value += 0.5 * float(np.sum((u_tilde[:, :, None] * h) ** 2))
    if g_prev is not None:
        value += 0.5 * theta * _energy(h_hat - g_prev, weights) / size
    value += 0.5 * (theta - theta_ref) ** 2
    return value


def objective(problem: AdmmProblem, h: np.ndarray, theta: float,
              h_hat: Optional[np.ndarray] = None) -> float:
    """E(h, theta) evaluated at the feasible point g = dft2(h)"""
    if h_hat is None:
        h_hat = real_fft2(h)
    g_prev = problem.g_prev_hat.data if problem.has_temporal else None
    return _objective(problem.x_hat.data, problem.y_hat, g_prev, problem.u_tilde,
                      h, h_hat, theta, problem.theta_ref)


def _check_finite(iteration: int, *values) -> None:
    for value in values:
        if not np.all(np.isfinite(value)):
            raise AdmmDivergedError(iteration)


def solve(problem: AdmmProblem) -> AdmmSolution:
    """
    Run ``iters`` rounds of G -> H -> theta -> multiplier

    Every spectrum involved is Hermitian, so the rounds work on the stored
    half (cols // 2 + 1 columns) and energy sums weight each column by its
    multiplicity in the full spectrum.
    """
    rows, cols = problem.u_tilde.shape
    kept = cols // 2 + 1
    weights = half_spectrum_weights(cols)
    size = problem.size
    x_hat = problem.x_hat.data[:, :kept]
    y_hat = problem.y_hat[:, :kept]
    if problem.has_temporal:
        g_prev = problem.g_prev_hat.data[:, :kept]
        temporal = g_prev
        theta = float(problem.theta_ref)
    else:
        g_prev = np.zeros_like(x_hat)
        temporal = None
        theta = 0.0
    optimize_theta = problem.optimize_theta and problem.has_temporal

    g_hat = g_prev.copy()
    h = real_ifft2(g_prev, (rows, cols))
    h_hat = real_fft2(h, full=False)
    v_hat = np.zeros_like(x_hat)
    gamma = problem.gamma0
    trace: List[float] = []

    for i in range(problem.iters):
        g_hat = update_g(x_hat, y_hat, g_prev, h_hat, v_hat, gamma * size, theta)
        h = update_h(g_hat, v_hat, problem.u_tilde, gamma)
        h_hat = real_fft2(h, full=False)
        if optimize_theta:
            theta = update_theta(g_hat, g_prev, problem.theta_ref, size, weights)
        v_hat, next_gamma = update_multiplier(v_hat, g_hat, h, gamma, problem.beta, problem.gamma_max, h_hat)
        _check_finite(i, g_hat, h, v_hat, theta)

        trace.append(_objective(x_hat, y_hat, temporal, problem.u_tilde, h, h_hat, theta,
                                problem.theta_ref, weights))
        logger.debug("ADMM round %d: gamma=%.1f theta=%.4f objective=%.6e", i, gamma, theta, trace[-1])
        gamma = next_gamma

    norm = np.sqrt(_energy(g_hat, weights))
    residual = float(np.sqrt(_energy(g_hat - h_hat, weights)) / norm) if norm > 0 else 0.0
    cell_size = problem.x_hat.cell_size
    return AdmmSolution(
        g_hat=SpectralBank(hermitian_complete(g_hat, cols), cell_size),
        h=FeatureTensor(data=h, cell_size=cell_size),
        theta_opt=theta,
        objective_trace=trace,
        residual=residual,
    )
