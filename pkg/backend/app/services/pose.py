"""
Pose - camera localisation from four tracked markers with known world positions
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence as Seq, Tuple, Union

import cv2
import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator
from scipy.spatial.transform import Rotation

from app.config import EvalOptions, TrackerConfig, config_echo
from app.services.bench import FRAME_DIR, list_frame_paths
from app.services.errors import ConfigError, PoseError, TrackingError
from app.services.imaging import BBox, Frame, load_frame
from app.services.tracker import TrackState, init, update

logger = logging.getLogger(__name__)

MARKER_COUNT = 4
PERMUTATIONS: List[Tuple[int, ...]] = list(itertools.permutations(range(MARKER_COUNT)))
SYMMETRY_TOLERANCE = 1e-6
COPLANAR_TOLERANCE = 1e-9
JACOBIAN_STEP = 1e-6
MAX_REFINE_ITERS = 50
STEP_TOLERANCE = 1e-10
MAX_CONDITION = 1e14


class CameraIntrinsics(BaseModel):
    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float
    dist: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # k1, k2, p1, p2

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def dist_coeffs(self) -> np.ndarray:
        return np.asarray(self.dist, dtype=np.float64)


def rigid_fit(source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Least-squares proper rotation and translation with target ~ R source + t (Kabsch)"""
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    cov = (target - mu_t).T @ (source - mu_s)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    rotation = u @ np.diag([1.0, 1.0, d]) @ vt
    translation = mu_t - rotation @ mu_s
    residual = float(np.sqrt(np.mean(np.sum((source @ rotation.T + translation - target) ** 2, axis=1))))
    return rotation, translation, residual


def is_symmetric(points: np.ndarray, tolerance: float = SYMMETRY_TOLERANCE) -> bool:
    """True if some non-identity relabelling of the points is reachable by a rigid motion"""
    scale = max(float(np.max(np.linalg.norm(points - points.mean(axis=0), axis=1))), 1e-12)
    for perm in PERMUTATIONS[1:]:
        _, _, residual = rigid_fit(points, points[list(perm)])
        if residual < tolerance * scale:
            return True
    return False


def is_coplanar(points: np.ndarray) -> bool:
    singular = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    return bool(singular[-1] <= COPLANAR_TOLERANCE * max(singular[0], 1e-12))


class MarkerConfig(BaseModel):
    """World positions of the four markers and their boxes in the first frame (0-based px)"""
    points_world: List[Tuple[float, float, float]]
    init_boxes: List[Tuple[float, float, float, float]]

    @field_validator("points_world", "init_boxes")
    @classmethod
    def _four(cls, value):
        if len(value) != MARKER_COUNT:
            raise ValueError(f"expected {MARKER_COUNT} entries, got {len(value)}")
        return value

    @field_validator("points_world")
    @classmethod
    def _non_symmetric(cls, value):
        points = np.asarray(value, dtype=np.float64)
        if np.linalg.matrix_rank(points - points.mean(axis=0), tol=1e-9) < 2:
            raise ValueError("marker points are collinear")
        if is_symmetric(points):
            raise ValueError("marker configuration is symmetric")
        return value

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.points_world, dtype=np.float64)

    @property
    def boxes(self) -> List[BBox]:
        return [BBox(*b) for b in self.init_boxes]

    @property
    def coplanar(self) -> bool:
        return is_coplanar(self.points)


@dataclass(frozen=True)
class PoseEstimate:
    """World-to-camera pose: X_cam = rotation @ X_world + translation"""
    rotation: np.ndarray
    translation: np.ndarray
    reprojection_rmse: float
    correspondence: Tuple[int, ...]
    degenerate: bool = False
    iterations: int = 0

    @property
    def camera_position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation


def _load_model(model: type, path: Union[str, Path]):
    path = Path(path)
    try:
        return model.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError("config-invalid", f"cannot read {path}: {e}") from e
    except ValidationError as e:
        loc = e.errors()[0].get("loc") or (path.name,)
        raise ConfigError("config-invalid", f"{path.name}: {'.'.join(str(p) for p in loc)}") from e


def load_markers(path: Union[str, Path]) -> MarkerConfig:
    return _load_model(MarkerConfig, path)


def load_camera(path: Union[str, Path]) -> CameraIntrinsics:
    return _load_model(CameraIntrinsics, path)


def transform(points_world: np.ndarray, rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    return points_world @ rotation.T + translation


def project(points_world: np.ndarray, rotation: np.ndarray, translation: np.ndarray,
            cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection with radial-tangential distortion (k1, k2, p1, p2)"""
    cam_points = transform(points_world, rotation, translation)
    x = cam_points[:, 0] / cam_points[:, 2]
    y = cam_points[:, 1] / cam_points[:, 2]
    k1, k2, p1, p2 = cam.dist
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([cam.fx * xd + cam.cx, cam.fy * yd + cam.cy], axis=1)


def reprojection_rmse(image_points: np.ndarray, points_world: np.ndarray, rotation: np.ndarray,
                      translation: np.ndarray, cam: CameraIntrinsics) -> float:
    residual = project(points_world, rotation, translation, cam) - image_points
    return float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))


def initial_pose(image_points: np.ndarray, points_world: np.ndarray,
                 cam: CameraIntrinsics) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """
    Closed-form pose from exactly four correspondences

    Coplanar markers go through the homography-based solver, others through
    P3P with the fourth point picking among the candidate solutions.
    Returns None when the solver fails or puts a marker behind the camera.
    """
    flags = cv2.SOLVEPNP_IPPE if is_coplanar(points_world) else cv2.SOLVEPNP_AP3P
    try:
        ok, rvec, tvec = cv2.solvePnP(
            np.ascontiguousarray(points_world, dtype=np.float64),
            np.ascontiguousarray(image_points, dtype=np.float64),
            cam.matrix, cam.dist_coeffs, flags=flags,
        )
    except cv2.error:
        return None
    if not ok or not (np.all(np.isfinite(rvec)) and np.all(np.isfinite(tvec))):
        return None

    rotation = Rotation.from_rotvec(rvec.ravel()).as_matrix()
    translation = tvec.ravel().astype(np.float64)
    if np.any(transform(points_world, rotation, translation)[:, 2] <= 0):
        return None
    return rotation, translation


def _ordered(centers: np.ndarray, permutation: Seq[int]) -> np.ndarray:
    """Image point observing world point i is centers[permutation[i]]"""
    return np.asarray(centers, dtype=np.float64)[list(permutation)]


def score_assignments(centers: np.ndarray, markers: MarkerConfig,
                      cam: CameraIntrinsics) -> Dict[Tuple[int, ...], PoseEstimate]:
    """Initial pose and its reprojection RMSE for every assignment that solves"""
    points = markers.points
    scores: Dict[Tuple[int, ...], PoseEstimate] = {}
    for perm in PERMUTATIONS:
        image_points = _ordered(centers, perm)
        pose = initial_pose(image_points, points, cam)
        if pose is None:
            continue
        rotation, translation = pose
        rmse = reprojection_rmse(image_points, points, rotation, translation, cam)
        if np.isfinite(rmse):
            scores[perm] = PoseEstimate(rotation, translation, rmse, perm)
    return scores


def _pick(scores: Dict[Tuple[int, ...], PoseEstimate], previous: Optional[Tuple[int, ...]],
          hysteresis: float) -> Tuple[int, ...]:
    if not scores:
        raise PoseError("correspondence-failed", "no assignment produced a pose")
    best = min(scores, key=lambda p: (scores[p].reprojection_rmse, p))
    if previous is None or previous == best or previous not in scores:
        return best
    best_rmse = scores[best].reprojection_rmse
    if scores[previous].reprojection_rmse <= hysteresis * best_rmse + 1e-9:
        return previous
    logger.warning("Correspondence switched %s -> %s (rmse %.3f vs %.3f px)",
                   previous, best, scores[previous].reprojection_rmse, best_rmse)
    return best


def correspondence_search(centers: np.ndarray, markers: MarkerConfig, cam: CameraIntrinsics,
                          previous: Optional[Tuple[int, ...]] = None,
                          hysteresis: float = 3.0) -> Tuple[int, ...]:
    """
    Assignment of tracked centres to world markers with minimum reprojection RMSE

    Args:
        centers: 4 x 2 tracked image positions
        previous: last frame's assignment; kept unless its RMSE exceeds
            ``hysteresis`` times the best alternative

    Returns:
        permutation p with centers[p[i]] observing markers.points[i]
    """
    return _pick(score_assignments(centers, markers, cam), previous, hysteresis)


def _perturb(rotation: Rotation, translation: np.ndarray, step: np.ndarray) -> Tuple[Rotation, np.ndarray]:
    """Left-composed axis-angle increment on the rotation, additive on the translation"""
    return Rotation.from_rotvec(step[:3]) * rotation, translation + step[3:]


def _residuals(image_points, points, rotation: Rotation, translation, cam) -> np.ndarray:
    return (project(points, rotation.as_matrix(), translation, cam) - image_points).ravel()


def _jacobian(image_points, points, rotation: Rotation, translation, cam) -> np.ndarray:
    columns = []
    for k in range(6):
        step = np.zeros(6)
        step[k] = JACOBIAN_STEP
        plus = _residuals(image_points, points, *_perturb(rotation, translation, step), cam)
        minus = _residuals(image_points, points, *_perturb(rotation, translation, -step), cam)
        columns.append((plus - minus) / (2.0 * JACOBIAN_STEP))
    return np.stack(columns, axis=1)


def refine_pose(centers: np.ndarray, permutation: Seq[int], markers: MarkerConfig,
                cam: CameraIntrinsics, init_pose: PoseEstimate) -> PoseEstimate:
    """Gauss-Newton on the summed squared reprojection error over a local 6-parameter chart"""
    image_points = _ordered(centers, permutation)
    points = markers.points
    rotation = Rotation.from_matrix(init_pose.rotation)
    translation = np.asarray(init_pose.translation, dtype=np.float64)
    residual = _residuals(image_points, points, rotation, translation, cam)
    cost = float(residual @ residual)

    iteration = 0
    for iteration in range(1, MAX_REFINE_ITERS + 1):
        jac = _jacobian(image_points, points, rotation, translation, cam)
        normal = jac.T @ jac
        condition = np.linalg.cond(normal) if np.all(np.isfinite(normal)) else np.inf
        if not np.isfinite(condition) or condition > MAX_CONDITION:
            logger.warning("Pose refinement degenerate at iteration %d", iteration)
            return replace(init_pose, correspondence=tuple(permutation), degenerate=True)
        step = np.linalg.solve(normal, -jac.T @ residual)

        # halve until the cost does not increase
        for _ in range(20):
            cand_rot, cand_t = _perturb(rotation, translation, step)
            cand_res = _residuals(image_points, points, cand_rot, cand_t, cam)
            cand_cost = float(cand_res @ cand_res)
            if cand_cost <= cost:
                break
            step = step / 2.0
        else:
            break

        rotation, translation, residual, cost = cand_rot, cand_t, cand_res, cand_cost
        if np.linalg.norm(step) < STEP_TOLERANCE:
            break

    return PoseEstimate(
        rotation=rotation.as_matrix(),
        translation=translation,
        reprojection_rmse=float(np.sqrt(cost / len(points))),
        correspondence=tuple(permutation),
        iterations=iteration,
    )


class MarkerLocalizer:
    """Per-sequence pose pipeline keeping the correspondence between frames"""

    def __init__(self, markers: MarkerConfig, cam: CameraIntrinsics, hysteresis: float = 3.0):
        self.markers = markers
        self.cam = cam
        self.hysteresis = hysteresis
        self.permutation: Optional[Tuple[int, ...]] = None

    def locate(self, centers: np.ndarray) -> PoseEstimate:
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (MARKER_COUNT, 2) or not np.all(np.isfinite(centers)):
            raise PoseError("markers-lost", "pose needs four valid marker centres")
        scores = score_assignments(centers, self.markers, self.cam)
        self.permutation = _pick(scores, self.permutation, self.hysteresis)
        return refine_pose(centers, self.permutation, self.markers, self.cam, scores[self.permutation])


def estimate_pose(centers: np.ndarray, markers: MarkerConfig, cam: CameraIntrinsics) -> PoseEstimate:
    return MarkerLocalizer(markers, cam).locate(centers)


def track_markers(frame: Frame, states: Seq[TrackState],
                  cfg: TrackerConfig) -> Tuple[List[TrackState], np.ndarray]:
    """
    Advance the four marker trackers on ``frame``

    A tracker that fails keeps its previous state and reports a NaN centre.
    """
    def advance(state: TrackState):
        try:
            return update(frame, state, cfg)[0], True
        except TrackingError as e:
            logger.warning("Marker tracker failed on frame %d: %s", state.frame_idx + 1, e)
            return state, False

    with ThreadPoolExecutor(max_workers=MARKER_COUNT) as pool:
        results = list(pool.map(advance, states))

    new_states = [state for state, _ in results]
    centers = np.array([s.bbox.center if ok else (np.nan, np.nan)
                        for s, ok in results], dtype=np.float64)
    return new_states, centers


class PoseFrame(BaseModel):
    frame: int
    R: List[float]
    t: List[float]
    rmse_px: float
    permutation: List[int]
    camera_position: List[float]
    degenerate: bool = False


class PoseReport(BaseModel):
    config: Dict
    frames: List[PoseFrame]
    failed_frames: List[int] = []


def pose_frame(index: int, pose: PoseEstimate) -> PoseFrame:
    return PoseFrame(
        frame=index,
        R=pose.rotation.ravel().tolist(),
        t=pose.translation.tolist(),
        rmse_px=pose.reprojection_rmse,
        permutation=list(pose.correspondence),
        camera_position=pose.camera_position.tolist(),
        degenerate=pose.degenerate,
    )


def run_pose(frames: Seq[Frame], markers: MarkerConfig, cam: CameraIntrinsics,
             cfg: TrackerConfig, options: Optional[EvalOptions] = None) -> PoseReport:
    """Track the markers through ``frames`` and localise the camera on every frame"""
    options = options or EvalOptions()
    localizer = MarkerLocalizer(markers, cam, options.correspondence_hysteresis)
    states = [init(frames[0], box, cfg) for box in markers.boxes]
    centers = np.array([box.center for box in markers.boxes], dtype=np.float64)

    results, failed = [], []
    for index, frame in enumerate(frames):
        if index > 0:
            states, centers = track_markers(frame, states, cfg)
        try:
            pose = localizer.locate(centers)
        except PoseError as e:
            logger.warning("Frame %d: no pose (%s)", index, e)
            failed.append(index)
            continue
        results.append(pose_frame(index, pose))
        logger.info("Frame %d: rmse=%.3f px camera at %s", index, pose.reprojection_rmse,
                    np.round(pose.camera_position, 3).tolist())
    return PoseReport(config=config_echo(cfg, options), frames=results, failed_frames=failed)


def run_pose_directory(seq_dir: Union[str, Path], markers: MarkerConfig, cam: CameraIntrinsics,
                       cfg: TrackerConfig, options: Optional[EvalOptions] = None) -> PoseReport:
    frames = [load_frame(p) for p in list_frame_paths(Path(seq_dir) / FRAME_DIR)]
    return run_pose(frames, markers, cam, cfg, options)
