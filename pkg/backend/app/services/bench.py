"""
Bench - sequence ingestion, one-pass evaluation, metrics and report writers
"""
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence as Seq, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from app.config import EvalOptions, TrackerConfig, Variant, config_echo
from app.services.errors import SequenceError, TrackingError
from app.services.imaging import BBox, Frame, load_frame
from app.services.tracker import FrameRecord, Tracker, configure_variant

logger = logging.getLogger(__name__)

GROUNDTRUTH_FILE = "groundtruth_rect.txt"
ATTRIBUTES_FILE = "attributes.txt"
FRAME_DIR = "img"
FRAME_SUFFIXES = {".png", ".jpg", ".jpeg"}
GT_SEPARATOR = re.compile(r"[,\t]")

PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.arange(50) * 0.02


@dataclass
class Sequence:
    """Frames plus 0-based ground truth (N x 4, NaN rows where absent)"""
    name: str
    frame_paths: List[Path]
    groundtruth: np.ndarray
    attributes: List[str] = field(default_factory=list)
    frames: Optional[List[Frame]] = None
    delimiter: str = ","

    def __post_init__(self):
        self.groundtruth = np.asarray(self.groundtruth, dtype=np.float64).reshape(-1, 4)
        count = len(self.frames) if self.frames is not None else len(self.frame_paths)
        if count != len(self.groundtruth):
            raise SequenceError("gt-length-mismatch",
                                f"{self.name}: {count} frames, {len(self.groundtruth)} boxes")
        if count == 0 or not self.box(0).is_valid:
            raise SequenceError("sequence-malformed", f"{self.name}: first ground-truth box invalid")

    def __len__(self) -> int:
        return len(self.groundtruth)

    def box(self, index: int) -> BBox:
        return BBox(*self.groundtruth[index])

    def load_frames(self) -> List[Frame]:
        if self.frames is None:
            self.frames = [load_frame(p) for p in self.frame_paths]
        return self.frames


def _frame_index(path: Path) -> int:
    if not path.stem.isdigit():
        raise SequenceError("sequence-malformed", f"non-numeric frame name {path.name}")
    return int(path.stem)


def list_frame_paths(frame_dir: Path) -> List[Path]:
    """Image files of a frame folder in numeric order"""
    if not frame_dir.is_dir():
        raise SequenceError("sequence-malformed", f"{frame_dir} is not a directory")
    frame_paths = sorted(
        (p for p in frame_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES),
        key=_frame_index,
    )
    if not frame_paths:
        raise SequenceError("sequence-malformed", f"no frames in {frame_dir}")
    return frame_paths


def read_groundtruth(path: Union[str, Path]) -> Tuple[np.ndarray, str]:
    """Parse ``x,y,w,h`` lines (comma or tab separated, 1-based) into 0-based boxes"""
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as e:
        raise SequenceError("sequence-malformed", f"cannot read {path}: {e}") from e
    if not text.strip():
        raise SequenceError("sequence-malformed", f"{path} is empty")

    delimiter = "\t" if "\t" in text and "," not in text else ","
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip() and len(GT_SEPARATOR.split(line.strip())) != 4:
            raise SequenceError("sequence-malformed", f"{path}:{lineno}: expected 4 fields")
    try:
        table = pd.read_csv(path, sep=GT_SEPARATOR.pattern, header=None, engine="python",
                            names=["x", "y", "w", "h"], index_col=False, skip_blank_lines=True)
        boxes = table.apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, pd.errors.ParserError) as e:
        raise SequenceError("sequence-malformed", f"{path}: {e}") from e

    absent = np.isnan(boxes)
    partial = absent.any(axis=1) & ~absent.all(axis=1)
    if partial.any():
        lineno = int(np.flatnonzero(partial)[0]) + 1
        raise SequenceError("sequence-malformed", f"{path}: box {lineno} is partly NaN")

    boxes[:, :2] -= 1.0
    return boxes, delimiter


def _format_number(value: float) -> str:
    if not np.isfinite(value):
        return "NaN"
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_groundtruth(path: Union[str, Path], boxes: np.ndarray, delimiter: str = ",") -> None:
    """Inverse of ``read_groundtruth``: 0-based boxes back to 1-based text"""
    lines = []
    for x, y, w, h in np.asarray(boxes, dtype=np.float64).reshape(-1, 4):
        lines.append(delimiter.join(_format_number(v) for v in (x + 1.0, y + 1.0, w, h)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_attributes(path: Path) -> List[str]:
    if not path.exists():
        return []
    return [tag for tag in re.split(r"[,\s]+", path.read_text(encoding="utf-8")) if tag]


def load_sequence(directory: Union[str, Path]) -> Sequence:
    directory = Path(directory)
    frame_dir = directory / FRAME_DIR
    gt_path = directory / GROUNDTRUTH_FILE
    if not frame_dir.is_dir() or not gt_path.is_file():
        raise SequenceError("sequence-malformed", f"{directory} needs {FRAME_DIR}/ and {GROUNDTRUTH_FILE}")

    frame_paths = list_frame_paths(frame_dir)
    boxes, delimiter = read_groundtruth(gt_path)
    sequence = Sequence(
        name=directory.name,
        frame_paths=frame_paths,
        groundtruth=boxes,
        attributes=read_attributes(directory / ATTRIBUTES_FILE),
        delimiter=delimiter,
    )
    logger.debug("Loaded sequence %s (%d frames)", sequence.name, len(sequence))
    return sequence


def discover_sequences(root: Union[str, Path]) -> List[Path]:
    """Sequence directories under ``root``, sorted by name"""
    root = Path(root)
    if not root.is_dir():
        raise SequenceError("sequence-malformed", f"{root} is not a directory")
    if (root / GROUNDTRUTH_FILE).is_file():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / GROUNDTRUTH_FILE).is_file())


# --- metrics -----------------------------------------------------------------

def _centers(boxes: np.ndarray) -> np.ndarray:
    return boxes[:, :2] + boxes[:, 2:] / 2.0


def center_errors(predicted: np.ndarray, groundtruth: np.ndarray) -> np.ndarray:
    """Euclidean distance of box centres; NaN where the ground truth is absent,
    inf where the prediction is missing"""
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1, 4)
    groundtruth = np.asarray(groundtruth, dtype=np.float64).reshape(-1, 4)
    errors = np.linalg.norm(_centers(predicted) - _centers(groundtruth), axis=1)
    errors[~np.all(np.isfinite(predicted), axis=1)] = np.inf
    errors[~np.all(np.isfinite(groundtruth), axis=1)] = np.nan
    return errors


def overlaps(predicted: np.ndarray, groundtruth: np.ndarray) -> np.ndarray:
    """Intersection over union per frame, NaN where the ground truth is absent"""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(groundtruth, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(p[:, 0] + p[:, 2], g[:, 0] + g[:, 2]) - np.maximum(p[:, 0], g[:, 0])
    ih = np.minimum(p[:, 1] + p[:, 3], g[:, 1] + g[:, 3]) - np.maximum(p[:, 1], g[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = p[:, 2] * p[:, 3] + g[:, 2] * g[:, 3] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    iou = np.clip(np.nan_to_num(iou, nan=0.0), 0.0, 1.0)
    identical = np.all(p == g, axis=1)
    iou[identical] = 1.0
    iou[~np.all(np.isfinite(g), axis=1)] = np.nan
    return iou


def precision_curve(errors: np.ndarray, thresholds: np.ndarray = PRECISION_THRESHOLDS) -> np.ndarray:
    """Fraction of frames whose centre error is at most each threshold"""
    valid = errors[~np.isnan(errors)]
    if valid.size == 0:
        return np.zeros(len(thresholds))
    return np.array([np.mean(valid <= t) for t in thresholds])


def success_curve(ious: np.ndarray, thresholds: np.ndarray = SUCCESS_THRESHOLDS) -> np.ndarray:
    """Fraction of frames whose overlap is strictly above each threshold"""
    valid = ious[~np.isnan(ious)]
    if valid.size == 0:
        return np.zeros(len(thresholds))
    return np.array([np.mean(valid > t) for t in thresholds])


def precision_at(errors: np.ndarray, threshold: float = 20.0) -> float:
    valid = errors[~np.isnan(errors)]
    return float(np.mean(valid <= threshold)) if valid.size else 0.0


def _optional(values: Iterable[float]) -> List[Optional[float]]:
    return [float(v) if np.isfinite(v) else None for v in values]


class SequenceMetrics(BaseModel):
    center_errors: List[Optional[float]]
    overlaps: List[Optional[float]]
    precision_curve: List[float]
    success_curve: List[float]
    precision: float = Field(..., ge=0, le=1)
    auc: float = Field(..., ge=0, le=1)
    mean_center_error: Optional[float] = None


def compute_metrics(predicted: np.ndarray, groundtruth: np.ndarray,
                    threshold: float = 20.0) -> SequenceMetrics:
    """Pure function of the two box traces"""
    errors = center_errors(predicted, groundtruth)
    ious = overlaps(predicted, groundtruth)
    success = success_curve(ious)
    finite = errors[np.isfinite(errors)]
    return SequenceMetrics(
        center_errors=_optional(errors),
        overlaps=_optional(ious),
        precision_curve=precision_curve(errors).tolist(),
        success_curve=success.tolist(),
        precision=precision_at(errors, threshold),
        auc=float(np.mean(success)),
        mean_center_error=float(np.mean(finite)) if finite.size else None,
    )


# --- reports -----------------------------------------------------------------

class FrameTrace(BaseModel):
    frame: int
    bbox: List[float]
    pi_norm: float
    theta: float
    learned: bool
    theta_ref: float = 0.0
    spatial_gain: float = 0.0
    scale: float = 1.0

    @classmethod
    def from_record(cls, record: FrameRecord) -> "FrameTrace":
        return cls(**asdict(record))


class EvalReport(BaseModel):
    """One-pass evaluation of a single sequence"""
    name: str
    variant: str
    frames: int
    attributes: List[str] = []
    failed: bool = False
    error: Optional[str] = None
    metrics: Optional[SequenceMetrics] = None
    fps: float = 0.0
    trace: List[FrameTrace] = []
    config: Dict = {}


class Aggregate(BaseModel):
    variant: str
    sequences: int
    precision: float
    auc: float
    fps: float
    pooled: bool = False


class AttributeScore(BaseModel):
    attribute: str
    variant: str
    sequences: int
    precision: float
    auc: float


class BenchReport(BaseModel):
    config: Dict
    precision_threshold: float
    sequences: List[EvalReport]
    aggregates: List[Aggregate]
    attributes: List[AttributeScore] = []


def _predicted_boxes(records: Seq[FrameTrace], count: int) -> np.ndarray:
    boxes = np.full((count, 4), np.nan)
    for record in records:
        if 0 <= record.frame < count:
            boxes[record.frame] = record.bbox
    return boxes


def run_ope(seq: Sequence, cfg: TrackerConfig, threshold: float = 20.0) -> EvalReport:
    """Initialise on frame 1 ground truth and track every later frame without re-initialisation"""
    frames = seq.load_frames()
    tracker = Tracker(cfg)
    error = None

    started = time.perf_counter()
    try:
        tracker.init(frames[0], seq.box(0))
        for frame in frames[1:]:
            tracker.update(frame)
    except TrackingError as e:
        error = str(e)
        logger.warning("Sequence %s failed at frame %d: %s", seq.name, len(tracker.records), e)
    elapsed = time.perf_counter() - started

    trace = [FrameTrace.from_record(r) for r in tracker.records]
    metrics = compute_metrics(_predicted_boxes(trace, len(seq)), seq.groundtruth, threshold)
    fps = len(trace) / max(elapsed, 1e-9) if trace else 0.0
    logger.info("Sequence %s [%s]: precision=%.3f auc=%.3f fps=%.1f",
                seq.name, cfg.variant.value, metrics.precision, metrics.auc, fps)
    return EvalReport(
        name=seq.name,
        variant=cfg.variant.value,
        frames=len(seq),
        attributes=seq.attributes,
        failed=error is not None,
        error=error,
        metrics=metrics,
        fps=fps,
        trace=trace,
        config=config_echo(cfg),
    )


def aggregate(reports: Seq[EvalReport], variant: str, pooled: bool = False,
              threshold: float = 20.0) -> Aggregate:
    """Per-sequence mean of precision and AUC; ``pooled`` pools frames across sequences"""
    scored = [r for r in reports if r.metrics is not None]
    if not scored:
        return Aggregate(variant=variant, sequences=0, precision=0.0, auc=0.0, fps=0.0, pooled=pooled)

    if pooled:
        errors = np.concatenate([_scored_frames(r.metrics)[0] for r in scored])
        ious = np.concatenate([_scored_frames(r.metrics)[1] for r in scored])
        precision = precision_at(errors, threshold)
        auc = float(np.mean(success_curve(ious)))
    else:
        precision = float(np.mean([r.metrics.precision for r in scored]))
        auc = float(np.mean([r.metrics.auc for r in scored]))
    return Aggregate(
        variant=variant,
        sequences=len(scored),
        precision=precision,
        auc=auc,
        fps=float(np.mean([r.fps for r in scored])),
        pooled=pooled,
    )


def _scored_frames(metrics: SequenceMetrics) -> Tuple[np.ndarray, np.ndarray]:
    """Errors and overlaps of frames with ground truth; a missing prediction has error inf"""
    pairs = [(np.inf if e is None else e, o)
             for e, o in zip(metrics.center_errors, metrics.overlaps) if o is not None]
    if not pairs:
        return np.empty(0), np.empty(0)
    errors, ious = zip(*pairs)
    return np.array(errors, dtype=np.float64), np.array(ious, dtype=np.float64)


def attribute_scores(reports: Seq[EvalReport], variant: str) -> List[AttributeScore]:
    tags = sorted({tag for r in reports for tag in r.attributes})
    scores = []
    for tag in tags:
        tagged = [r for r in reports if tag in r.attributes and r.metrics is not None]
        if not tagged:
            continue
        scores.append(AttributeScore(
            attribute=tag,
            variant=variant,
            sequences=len(tagged),
            precision=float(np.mean([r.metrics.precision for r in tagged])),
            auc=float(np.mean([r.metrics.auc for r in tagged])),
        ))
    return scores


def _failed_report(path: Path, cfg: TrackerConfig, error: Exception) -> EvalReport:
    logger.warning("Sequence %s could not be loaded: %s", path.name, error)
    return EvalReport(name=path.name, variant=cfg.variant.value, frames=0, failed=True,
                      error=str(error), config=config_echo(cfg))


def evaluate(sequences: Seq[Union[Sequence, Path]], cfg: TrackerConfig,
             options: Optional[EvalOptions] = None,
             variants: Optional[Seq[Variant]] = None) -> BenchReport:
    """
    Evaluate every (variant, sequence) pair, one tracker per pair

    Sequences run in parallel on ``options.workers`` threads; the report is
    ordered by variant then sequence name regardless of completion order.
    """
    options = options or EvalOptions()
    variants = [Variant(v) for v in (variants or [cfg.variant])]
    threshold = options.precision_threshold

    def job(item: Union[Sequence, Path], variant: Variant) -> EvalReport:
        variant_cfg = configure_variant(cfg, variant)
        if isinstance(item, Sequence):
            return run_ope(item, variant_cfg, threshold)
        try:
            seq = load_sequence(item)
        except TrackingError as e:
            return _failed_report(Path(item), variant_cfg, e)
        return run_ope(seq, variant_cfg, threshold)

    jobs = [(item, variant) for variant in variants for item in sequences]
    with ThreadPoolExecutor(max_workers=options.workers) as pool:
        reports = list(pool.map(lambda args: job(*args), jobs))

    order = {v.value: i for i, v in enumerate(variants)}
    reports.sort(key=lambda r: (order[r.variant], r.name))

    aggregates, attributes = [], []
    for variant in variants:
        subset = [r for r in reports if r.variant == variant.value]
        aggregates.append(aggregate(subset, variant.value, options.pooled_precision, threshold))
        attributes.extend(attribute_scores(subset, variant.value))

    return BenchReport(
        config=config_echo(cfg, options),
        precision_threshold=threshold,
        sequences=reports,
        aggregates=aggregates,
        attributes=attributes,
    )


def evaluate_directory(root: Union[str, Path], cfg: TrackerConfig,
                       options: Optional[EvalOptions] = None,
                       variants: Optional[Seq[Variant]] = None) -> BenchReport:
    paths = discover_sequences(root)
    if not paths:
        raise SequenceError("sequence-malformed", f"no sequences under {root}")
    logger.info("Evaluating %d sequences under %s", len(paths), root)
    return evaluate(paths, cfg, options, variants)


# --- writers and replay ------------------------------------------------------

def write_report_json(report: BaseModel, path: Union[str, Path]) -> None:
    Path(path).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("Report written to %s", path)


def curves_frame(report: BenchReport) -> pd.DataFrame:
    """One row per (variant, sequence, curve, threshold)"""
    rows = []
    for seq in report.sequences:
        if seq.metrics is None:
            continue
        for t, value in zip(PRECISION_THRESHOLDS, seq.metrics.precision_curve):
            rows.append((seq.variant, seq.name, "precision", float(t), value))
        for t, value in zip(SUCCESS_THRESHOLDS, seq.metrics.success_curve):
            rows.append((seq.variant, seq.name, "success", float(t), value))
    return pd.DataFrame(rows, columns=["variant", "sequence", "curve", "threshold", "value"])


def write_report_csv(report: BenchReport, path: Union[str, Path]) -> None:
    curves_frame(report).to_csv(path, index=False)
    logger.info("Curves written to %s", path)


def write_trace_jsonl(records: Iterable[Union[FrameRecord, FrameTrace]], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            line = record.trace_line() if isinstance(record, FrameRecord) else {
                k: getattr(record, k) for k in ("frame", "bbox", "pi_norm", "theta", "learned")
            }
            f.write(json.dumps(line) + "\n")


def read_trace_jsonl(path: Union[str, Path]) -> pd.DataFrame:
    try:
        return pd.read_json(path, lines=True, precise_float=True)
    except ValueError as e:
        raise SequenceError("sequence-malformed", f"bad trace {path}: {e}") from e


def replay_trace(path: Union[str, Path], seq: Sequence, threshold: float = 20.0) -> SequenceMetrics:
    """Recompute the metrics of a saved trace against the sequence ground truth"""
    table = read_trace_jsonl(path)
    boxes = np.full((len(seq), 4), np.nan)
    for frame, bbox in zip(table["frame"], table["bbox"]):
        if 0 <= int(frame) < len(seq):
            boxes[int(frame)] = bbox
    return compute_metrics(boxes, seq.groundtruth, threshold)
