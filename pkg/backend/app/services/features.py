"""
Features - 31-channel FHOG plus a grayscale channel on a cell grid, optional
colour names, and Hann windowing
"""
from dataclasses import dataclass
from typing import Tuple

import cv2
import numpy as np

from app.services.errors import ConfigError, TrackingError
from app.services.imaging import Frame

NUM_ORIENTATIONS = 18
TRUNCATION = 0.2
TEXTURE_SCALE = 0.2357
NORM_EPS = 1e-4

# basic colour terms and their sRGB prototypes
COLOR_NAMES = ("black", "blue", "brown", "grey", "green", "orange",
               "pink", "purple", "red", "white", "yellow")
COLOR_NAME_RGB = np.array([
    [0, 0, 0], [0, 0, 255], [150, 75, 0], [128, 128, 128], [0, 160, 0], [255, 165, 0],
    [255, 180, 200], [128, 0, 128], [230, 0, 0], [255, 255, 255], [255, 255, 0],
], dtype=np.uint8)
# Lab distance scale of the soft assignment
COLOR_NAME_SIGMA = 20.0


@dataclass(frozen=True)
class FeatureTensor:
    """H_f x W_f x K feature stack on a grid of ``cell_size`` pixel cells"""
    data: np.ndarray
    cell_size: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _pad_to_cells(gray: np.ndarray, cell_size: int) -> np.ndarray:
    h, w = gray.shape
    pad_h = (-h) % cell_size
    pad_w = (-w) % cell_size
    if pad_h or pad_w:
        gray = np.pad(gray, ((0, pad_h), (0, pad_w)), mode="edge")
    return gray


def pixel_gradients(gray: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel gradient magnitude and signed orientation bin (0..17)"""
    padded = np.pad(gray, 1, mode="edge")
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    magnitude = np.hypot(dx, dy)
    angle = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
    bins = np.floor(angle / (2.0 * np.pi / NUM_ORIENTATIONS) + 0.5).astype(np.int64) % NUM_ORIENTATIONS
    return magnitude, bins


def gradient_histogram(gray: np.ndarray, cell_size: int) -> np.ndarray:
    """
    Hard-binned orientation histogram per cell

    Args:
        gray: H x W intensities in [0, 1], H and W divisible by ``cell_size``
        cell_size: pixels per cell side

    Returns:
        (H / cell) x (W / cell) x 18 array of summed gradient magnitudes
    """
    h, w = gray.shape
    hc, wc = h // cell_size, w // cell_size
    magnitude, bins = pixel_gradients(gray)

    rows = np.arange(h) // cell_size
    cols = np.arange(w) // cell_size
    cell_index = rows[:, None] * wc + cols[None, :]
    flat = (cell_index * NUM_ORIENTATIONS + bins).ravel()
    hist = np.bincount(flat, weights=magnitude.ravel(), minlength=hc * wc * NUM_ORIENTATIONS)
    return hist.reshape(hc, wc, NUM_ORIENTATIONS)


def normalize_histogram(hist: np.ndarray) -> np.ndarray:
    """Block-normalise and truncate an 18-bin histogram into the 31 FHOG channels"""
    hc, wc, _ = hist.shape
    half = NUM_ORIENTATIONS // 2
    unsigned = hist[:, :, :half] + hist[:, :, half:]
    energy = np.sum(unsigned ** 2, axis=2)

    padded = np.pad(energy, 1, mode="edge")
    blocks = padded[:-1, :-1] + padded[1:, :-1] + padded[:-1, 1:] + padded[1:, 1:]
    norms = [
        1.0 / np.sqrt(blocks[dr:dr + hc, dc:dc + wc] + NORM_EPS)
        for dr in (0, 1) for dc in (0, 1)
    ]

    signed = np.zeros((hc, wc, NUM_ORIENTATIONS))
    contrast_free = np.zeros((hc, wc, half))
    texture = np.zeros((hc, wc, 4))
    for k, n in enumerate(norms):
        clipped = np.minimum(hist * n[:, :, None], TRUNCATION)
        signed += 0.5 * clipped
        contrast_free += 0.5 * np.minimum(unsigned * n[:, :, None], TRUNCATION)
        texture[:, :, k] = TEXTURE_SCALE * np.sum(clipped, axis=2)

    return np.concatenate([signed, contrast_free, texture], axis=2)


def cell_means(values: np.ndarray, cell_size: int) -> np.ndarray:
    h, w = values.shape
    return values.reshape(h // cell_size, cell_size, w // cell_size, cell_size).mean(axis=(1, 3))


def _to_lab(rgb: np.ndarray) -> np.ndarray:
    return cv2.cvtColor(rgb.astype(np.float32) / 255.0, cv2.COLOR_RGB2Lab).astype(np.float64)


COLOR_NAME_LAB = _to_lab(COLOR_NAME_RGB[None, :, :])[0]


def color_name_probabilities(rgb: np.ndarray) -> np.ndarray:
    """
    Soft assignment of every pixel to the eleven basic colour names

    Args:
        rgb: H x W x 3 uint8 pixels

    Returns:
        H x W x 11 probabilities summing to one per pixel
    """
    lab = _to_lab(rgb)
    dist2 = np.sum((lab[:, :, None, :] - COLOR_NAME_LAB[None, None, :, :]) ** 2, axis=3)
    dist2 -= dist2.min(axis=2, keepdims=True)
    weights = np.exp(-dist2 / (2.0 * COLOR_NAME_SIGMA ** 2))
    return weights / weights.sum(axis=2, keepdims=True)


def color_name_channels(patch: Frame, cell_size: int) -> np.ndarray:
    """Cell-averaged colour-name probabilities, centred on the uniform value 1/11"""
    rgb = patch.pixels if patch.channels == 3 else np.repeat(patch.pixels, 3, axis=2)
    probs = color_name_probabilities(rgb)
    h, w = patch.height, patch.width
    pad_h, pad_w = (-h) % cell_size, (-w) % cell_size
    if pad_h or pad_w:
        probs = np.pad(probs, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    names = len(COLOR_NAMES)
    means = np.stack([cell_means(probs[:, :, k], cell_size) for k in range(names)], axis=2)
    return means - 1.0 / names


def extract_features(patch: Frame, cell_size: int,
                     use_fhog: bool = True, use_gray: bool = True,
                     use_cn: bool = False) -> FeatureTensor:
    """
    Feature tensor of an image patch: 31 FHOG channels, a mean-centred
    grayscale channel (values in [-0.5, 0.5]) and optionally 11 colour-name
    channels. Grayscale patches are treated as neutral colour for the latter.
    """
    if patch.height < cell_size or patch.width < cell_size:
        raise TrackingError("patch-too-small",
                            f"patch {patch.width}x{patch.height} smaller than cell {cell_size}")
    if not (use_fhog or use_gray or use_cn):
        raise ConfigError("config-invalid", "no feature channels selected")

    gray = _pad_to_cells(patch.gray() / 255.0, cell_size)
    channels = []
    if use_fhog:
        channels.append(normalize_histogram(gradient_histogram(gray, cell_size)))
    if use_gray:
        channels.append(cell_means(gray, cell_size)[:, :, None] - 0.5)
    if use_cn:
        channels.append(color_name_channels(patch, cell_size))

    data = np.concatenate(channels, axis=2).astype(np.float32)
    return FeatureTensor(data=data, cell_size=cell_size)


def hann_window(shape: Tuple[int, int]) -> np.ndarray:
    rows, cols = shape
    return np.outer(np.hanning(rows), np.hanning(cols))


def apply_window(features: FeatureTensor) -> FeatureTensor:
    window = hann_window(features.shape).astype(features.data.dtype)
    return FeatureTensor(data=features.data * window[:, :, None], cell_size=features.cell_size)
