"""
Synthetic sequences - textured targets on textured backgrounds with known ground truth
"""
import logging
from pathlib import Path
from typing import List, Literal, Optional, Sequence as Seq, Tuple, Union

import cv2
import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.services.bench import ATTRIBUTES_FILE, FRAME_DIR, GROUNDTRUTH_FILE, Sequence, write_groundtruth
from app.services.errors import ConfigError
from app.services.imaging import Frame, save_frame

logger = logging.getLogger(__name__)

SUITE_DIR = Path(__file__).parent.parent / "data" / "suite"
OCCLUDER_LEVEL = 90.0


class MotionSpec(BaseModel):
    kind: Literal["static", "linear", "circular"] = "linear"
    velocity: Tuple[float, float] = (3.0, 0.0)     # px/frame (x, y)
    radius: float = Field(40.0, ge=0)
    period: int = Field(100, ge=1)                  # frames per revolution


class EventSpec(BaseModel):
    """Appearance event active on frames [start, start + length)"""
    kind: Literal["illumination", "occlusion", "noise"]
    start: int = Field(..., ge=0)
    length: int = Field(1, ge=1)
    factor: float = Field(1.8, gt=0)                # illumination gain
    coverage: float = Field(0.5, gt=0, le=1)        # occluded fraction of the object width

    def active(self, index: int) -> bool:
        return self.start <= index < self.start + self.length


class SyntheticSpec(BaseModel):
    name: str = "synthetic"
    frames: int = Field(100, ge=2)
    width: int = Field(480, ge=16)
    height: int = Field(240, ge=16)
    start: Tuple[float, float] = (60.0, 96.0)       # top-left corner of the object, 0-based
    size: Tuple[int, int] = (48, 48)
    motion: MotionSpec = MotionSpec()
    events: List[EventSpec] = []
    seed: int = Field(0, ge=0)


def smooth_texture(rng: np.random.Generator, shape: Tuple[int, int], sigma: float,
                   low: float, high: float) -> np.ndarray:
    """Blurred uniform noise stretched to [low, high]"""
    noise = cv2.GaussianBlur(rng.uniform(size=shape), (0, 0), sigma)
    span = noise.max() - noise.min()
    noise = (noise - noise.min()) / span if span > 0 else np.zeros(shape)
    return low + (high - low) * noise


def object_path(spec: SyntheticSpec) -> np.ndarray:
    """Analytic top-left corner of the object for every frame (N x 2)"""
    t = np.arange(spec.frames, dtype=np.float64)
    x0, y0 = spec.start
    motion = spec.motion
    if motion.kind == "linear":
        vx, vy = motion.velocity
        return np.stack([x0 + vx * t, y0 + vy * t], axis=1)
    if motion.kind == "circular":
        angle = 2.0 * np.pi * t / motion.period
        return np.stack([x0 + motion.radius * (np.cos(angle) - 1.0),
                         y0 + motion.radius * np.sin(angle)], axis=1)
    return np.tile([x0, y0], (spec.frames, 1)).astype(np.float64)


def groundtruth(spec: SyntheticSpec) -> np.ndarray:
    corners = object_path(spec)
    sizes = np.tile(np.asarray(spec.size, dtype=np.float64), (spec.frames, 1))
    return np.hstack([corners, sizes])


def _paste(canvas: np.ndarray, patch: np.ndarray, x0: int, y0: int) -> None:
    h, w = patch.shape
    top, left = max(0, y0), max(0, x0)
    bottom, right = min(canvas.shape[0], y0 + h), min(canvas.shape[1], x0 + w)
    if bottom > top and right > left:
        canvas[top:bottom, left:right] = patch[top - y0:bottom - y0, left - x0:right - x0]


class SyntheticRenderer:
    """Renders frames of a ``SyntheticSpec`` before 8-bit clipping"""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.background = smooth_texture(rng, (spec.height, spec.width), 3.0, 60.0, 140.0)
        w, h = spec.size
        self.texture = smooth_texture(rng, (h, w), 1.5, 20.0, 235.0)
        self.path = object_path(spec)

    def corner(self, index: int) -> Tuple[int, int]:
        x, y = self.path[index]
        return int(np.floor(x + 0.5)), int(np.floor(y + 0.5))

    def occlusion_strip(self, index: int, coverage: float) -> Tuple[int, int, int, int]:
        """(x, y, w, h) of the strip over the right side of the object"""
        x0, y0 = self.corner(index)
        w, h = self.spec.size
        strip_w = max(1, int(round(coverage * w)))
        return x0 + w - strip_w, y0, strip_w, h

    def render_float(self, index: int) -> np.ndarray:
        spec = self.spec
        events = [e for e in spec.events if e.active(index)]
        if any(e.kind == "noise" for e in events):
            return np.random.default_rng([spec.seed, index]).uniform(0.0, 255.0, (spec.height, spec.width))

        canvas = self.background.copy()
        _paste(canvas, self.texture, *self.corner(index))
        for event in events:
            if event.kind == "occlusion":
                x, y, w, h = self.occlusion_strip(index, event.coverage)
                _paste(canvas, np.full((h, w), OCCLUDER_LEVEL), x, y)
        for event in events:
            if event.kind == "illumination":
                canvas *= event.factor
        return canvas

    def render(self, index: int) -> Frame:
        return Frame(np.clip(np.rint(self.render_float(index)), 0, 255).astype(np.uint8))


def make_synthetic(spec: SyntheticSpec, out_dir: Optional[Union[str, Path]] = None) -> Sequence:
    """
    Render a synthetic sequence

    Args:
        spec: motion path, appearance events and canvas
        out_dir: when given, frames and ground truth are also written there in
            the on-disk sequence layout

    Returns:
        Sequence with frames held in memory
    """
    renderer = SyntheticRenderer(spec)
    frames = [renderer.render(i) for i in range(spec.frames)]
    boxes = groundtruth(spec)
    attributes = sorted({e.kind for e in spec.events})

    frame_paths: List[Path] = []
    if out_dir is not None:
        root = Path(out_dir)
        (root / FRAME_DIR).mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(frames, 1):
            path = root / FRAME_DIR / f"{i:04d}.png"
            save_frame(frame, path)
            frame_paths.append(path)
        write_groundtruth(root / GROUNDTRUTH_FILE, boxes)
        if attributes:
            (root / ATTRIBUTES_FILE).write_text(",".join(attributes) + "\n", encoding="utf-8")
        logger.info("Wrote synthetic sequence %s (%d frames) to %s", spec.name, spec.frames, root)

    return Sequence(name=spec.name, frame_paths=frame_paths, groundtruth=boxes,
                    attributes=attributes, frames=frames)


def load_spec(path: Union[str, Path]) -> SyntheticSpec:
    path = Path(path)
    try:
        return SyntheticSpec.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError("config-invalid", f"cannot read {path}: {e}") from e
    except ValidationError as e:
        loc = e.errors()[0].get("loc") or ("spec",)
        raise ConfigError("config-invalid", ".".join(str(part) for part in loc)) from e


def bundled_suite() -> List[SyntheticSpec]:
    """The acceptance suite shipped with the package, sorted by name"""
    return sorted((load_spec(p) for p in SUITE_DIR.glob("*.json")), key=lambda s: s.name)


# --- marker rigs ---------------------------------------------------------------

def marker_textures(count: int, size: int, seed: int = 0) -> List[np.ndarray]:
    """One distinct high-contrast texture per marker"""
    rng = np.random.default_rng(seed)
    return [smooth_texture(rng, (size, size), 1.2, 10.0, 245.0) for _ in range(count)]


def render_markers(background: np.ndarray, centers: Seq[Seq[float]],
                   textures: Seq[np.ndarray]) -> Frame:
    """Paste each marker texture centred on its image position"""
    canvas = background.copy()
    for (cx, cy), texture in zip(centers, textures):
        size = texture.shape[0]
        x0 = int(np.floor(cx + 0.5)) - size // 2
        y0 = int(np.floor(cy + 0.5)) - size // 2
        _paste(canvas, texture, x0, y0)
    return Frame(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
