"""
Imaging - frame decoding, edge-replicated patch extraction and bilinear resampling
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import cv2
import numpy as np

from app.services.errors import TrackingError

# ITU-R BT.601 luma
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Frame:
    """H x W x C uint8 image, C in {1, 3}, RGB channel order"""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
            raise TrackingError("frame-degenerate", f"unsupported frame shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise TrackingError("frame-degenerate", "frame must be at least 1x1")
        if pixels.dtype != np.uint8:
            pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Float64 luma in [0, 255]"""
        if self.channels == 1:
            return self.pixels[:, :, 0].astype(np.float64)
        return self.pixels.astype(np.float64) @ LUMA_WEIGHTS


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, 0-based top-left corner, real-valued"""
    x: float
    y: float
    w: float
    h: float

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def is_valid(self) -> bool:
        values = (self.x, self.y, self.w, self.h)
        return all(np.isfinite(values)) and self.w > 0 and self.h > 0

    @classmethod
    def from_center(cls, center: Sequence[float], size: Sequence[float]) -> "BBox":
        cx, cy = center
        w, h = size
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    def as_list(self):
        return [float(self.x), float(self.y), float(self.w), float(self.h)]

    def intersects(self, width: int, height: int) -> bool:
        return (self.x < width and self.y < height
                and self.x + self.w > 0 and self.y + self.h > 0)


def extract_patch(frame: Frame, center: Sequence[float], size: Sequence[float]) -> Frame:
    """
    Crop ``size`` (w, h) pixels centred at ``center`` (x, y)

    The centre is rounded to the nearest pixel; samples outside the frame
    replicate the nearest edge pixel.
    """
    w, h = (max(1, int(round(s))) for s in size)
    cx, cy = (int(np.floor(c + 0.5)) for c in center)
    x0 = cx - w // 2
    y0 = cy - h // 2

    rows = np.clip(np.arange(y0, y0 + h), 0, frame.height - 1)
    cols = np.clip(np.arange(x0, x0 + w), 0, frame.width - 1)
    return Frame(frame.pixels[np.ix_(rows, cols)])


def resize(frame: Frame, target: Sequence[int]) -> Frame:
    """Bilinear resampling to ``target`` (w, h); same size returns an exact copy"""
    w, h = (max(1, int(t)) for t in target)
    if (w, h) == (frame.width, frame.height):
        return Frame(frame.pixels.copy())
    out = cv2.resize(frame.pixels, (w, h), interpolation=cv2.INTER_LINEAR)
    return Frame(out)


def _from_decoded(data: np.ndarray) -> Frame:
    if data.dtype != np.uint8:
        data = cv2.convertScaleAbs(data, alpha=255.0 / max(1, int(data.max())))
    if data.ndim == 3 and data.shape[2] == 4:
        data = data[:, :, :3]
    if data.ndim == 3:
        data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
    return Frame(data)


def load_frame(path: Union[str, Path]) -> Frame:
    """Decode a PNG/JPEG file into an RGB (or single channel) frame"""
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise TrackingError("frame-degenerate", f"cannot decode {path}")
    return _from_decoded(data)


def decode_frame(payload: bytes) -> Frame:
    """Decode an in-memory encoded image (used for HTTP uploads)"""
    buffer = np.frombuffer(payload, dtype=np.uint8)
    data = cv2.imdecode(buffer, cv2.IMREAD_UNCHANGED) if buffer.size else None
    if data is None:
        raise TrackingError("frame-degenerate", "cannot decode uploaded image")
    return _from_decoded(data)


def save_frame(frame: Frame, path: Union[str, Path]) -> None:
    pixels = frame.pixels
    if frame.channels == 3:
        pixels = cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR)
    else:
        pixels = pixels[:, :, 0]
    if not cv2.imwrite(str(path), pixels):
        raise TrackingError("frame-degenerate", f"cannot write {path}")
