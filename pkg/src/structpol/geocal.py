"""
Projector calibration from decoded correspondences on planar boards.

The projector is calibrated like a camera that only ever reports its x coordinate:
board poses are known, so every decoded camera pixel becomes a 3D board point paired
with a projector column. A linear solve on the column equation initializes the
projector, and a Levenberg-Marquardt refinement minimizes the column reprojection error.

Only the first and third rows of the projection matrix are observable from columns.
fy, cy and the vertical translation are therefore taken from priors; triangulation
against column planes does not depend on them.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from structpol.config import MIN_BOARDS, N_BOARDS, PARALLEL_ANGLE
from structpol.exceptions import CalibrationError
from structpol.render import CameraModel, Plane, Scene, render_frames, trace
from structpol.codec import CorrespondenceMap, PatternSequence, decode, filter_discontinuities
from structpol.pbrdf import MaterialParams
from structpol.slm import ProjectorModel, ProjectorPhotometry
from structpol.utils import RigidTransform, log_duration

logger = logging.getLogger(__name__)

BOARD_MATERIAL = MaterialParams(refractive_index=1.5, specular_albedo=0.8, roughness=0.3, shape=2.0, concentration=1.0, albedo=0.3)


@dataclass(frozen=True, eq=False)
class BoardObservation:
    """
    One board pose and what the camera decoded on it.

    Attributes
    ----------
    pose : RigidTransform
        Board-to-world transform; the board is the z=0 plane of its own frame.
    correspondence : CorrespondenceMap
        Projector columns decoded on the camera image of the board.
    """

    pose: RigidTransform
    correspondence: CorrespondenceMap


@dataclass(frozen=True, eq=False)
class BoardPoints:
    pixels: np.ndarray
    points: np.ndarray
    columns: np.ndarray

    def __len__(self) -> int:
        return len(self.columns)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """
    Calibrated projector geometry.

    Attributes
    ----------
    intrinsics : np.ndarray
        3x3 projector intrinsics.
    pose : RigidTransform
        World-to-projector transform (the rig extrinsic).
    rms : float
        Column reprojection RMS after refinement (projector px).
    initial_rms : float
        RMS of the linear initialization.
    board_extrinsics : List[RigidTransform]
        Board-to-projector transform of every board.
    n_points : int
        Number of point/column pairs used.
    """

    intrinsics: np.ndarray
    pose: RigidTransform
    rms: float
    initial_rms: float
    board_extrinsics: List[RigidTransform] = field(default_factory=list)
    n_points: int = 0

    @property
    def focal(self) -> float:
        return float(self.intrinsics[0, 0])

    def projector(self, resolution: Tuple[int, int], photometry: Optional[ProjectorPhotometry] = None) -> ProjectorModel:
        if photometry is None:
            return ProjectorModel(self.intrinsics, self.pose, resolution)
        return ProjectorModel(self.intrinsics, self.pose, resolution, photometry)


def backproject_board_points(obs: BoardObservation, camera: CameraModel) -> BoardPoints:
    """
    Intersect the camera rays of decoded pixels with the board plane.

    Rays within `PARALLEL_ANGLE` of the plane and intersections behind the camera are
    skipped.

    Returns
    -------
    BoardPoints
        Camera pixels, world points on the board and the decoded projector columns.
    """
    origin, directions = camera.pixel_rays()
    normal = obs.pose.rotation[:, 2]
    rows, cols = np.nonzero(obs.correspondence.valid)
    d = directions[rows, cols]
    denom = d @ normal
    grazing = np.abs(denom) < np.sin(PARALLEL_ANGLE)
    t = np.divide((obs.pose.translation - origin) @ normal, denom, out=np.full_like(denom, -1.0), where=~grazing)
    keep = ~grazing & (t > 0)
    points = origin + t[keep, None] * d[keep]
    return BoardPoints(
        pixels=np.stack([cols[keep], rows[keep]], axis=-1),
        points=points,
        columns=obs.correspondence.column[rows[keep], cols[keep]],
    )


def _column_projection(params: np.ndarray, points: np.ndarray, translation_y: float) -> np.ndarray:
    fx, cx = params[0], params[1]
    rotation = Rotation.from_rotvec(params[2:5]).as_matrix()
    local = points @ rotation.T + np.array([params[5], translation_y, params[6]])
    return fx * local[:, 0] / local[:, 2] + cx


def _linear_init(points: np.ndarray, columns: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rows P1, P3 of the projection matrix from u (P3 . X) = P1 . X, on normalized data.

    Raises
    ------
    CalibrationError
        If the points do not span the 3D space the solve needs.
    """
    mean = points.mean(axis=0)
    scale = np.sqrt(3.0) / max(np.sqrt(np.mean(np.sum((points - mean) ** 2, axis=1))), 1e-12)
    norm3 = np.diag([scale, scale, scale, 1.0])
    norm3[:3, 3] = -scale * mean
    u_mean, u_scale = columns.mean(), 1.0 / max(columns.std(), 1e-12)

    homo = np.hstack([points, np.ones((len(points), 1))]) @ norm3.T
    u = (columns - u_mean) * u_scale
    system = np.hstack([-homo, u[:, None] * homo])
    _, sv, vt = np.linalg.svd(system, full_matrices=False)
    if sv[-2] < 1e-8 * sv[0]:
        raise CalibrationError("board points are degenerate (coplanar or too few distinct poses)")
    q1, q3 = vt[-1, :4], vt[-1, 4:]

    p3 = q3 @ norm3
    p1 = (q1 @ norm3 + u_mean * u_scale * p3) / u_scale
    lam = 1.0 / np.linalg.norm(p3[:3])
    if (p3 @ np.append(mean, 1.0)) < 0:
        lam = -lam
    return p1 * lam, p3 * lam


def _decompose(p1: np.ndarray, p3: np.ndarray) -> np.ndarray:
    """fx, cx, rotation vector and (t_x, t_z) from the scaled rows, zero skew."""
    r3 = p3[:3]
    cx = float(p1[:3] @ r3)
    fr1 = p1[:3] - cx * r3
    fx = float(np.linalg.norm(fr1))
    r1 = fr1 / fx
    r2 = np.cross(r3, r1)
    rotation = np.stack([r1, r2, r3])
    # Snap to the nearest rotation.
    u, _, vt = np.linalg.svd(rotation)
    rotation = u @ vt
    t_z = float(p3[3])
    t_x = (float(p1[3]) - cx * t_z) / fx
    return np.concatenate([[fx, cx], Rotation.from_matrix(rotation).as_rotvec(), [t_x, t_z]])


def _rms(residuals: np.ndarray) -> float:
    return float(np.sqrt(np.mean(residuals**2))) if residuals.size else float("nan")


@log_duration("calibrate_projector")
def calibrate_projector(
    observations: Sequence[BoardObservation],
    camera: CameraModel,
    resolution: Tuple[int, int],
    principal_y: Optional[float] = None,
    translation_y: float = 0.0,
    ground_truth: Optional[ProjectorModel] = None,
) -> CalibrationResult:
    """
    Calibrate projector intrinsics and extrinsics from board observations.

    Parameters
    ----------
    observations : Sequence[BoardObservation]
        At least three boards at distinct poses.
    camera : CameraModel
        Calibrated camera.
    resolution : Tuple[int, int]
        Projector resolution (W_p, H_p).
    principal_y : float, optional
        Prior for cy (image centre by default).
    translation_y : float
        Prior for the vertical translation of the world-to-projector transform.
    ground_truth : ProjectorModel, optional
        Return this geometry verbatim instead of solving; RMS is still evaluated.

    Returns
    -------
    CalibrationResult
        Geometry, reprojection RMS before and after refinement, per-board extrinsics.

    Raises
    ------
    CalibrationError
        With fewer than three boards or a degenerate pose set.
    """
    pairs = [backproject_board_points(obs, camera) for obs in observations]
    points = np.concatenate([p.points for p in pairs]) if pairs else np.zeros((0, 3))
    columns = np.concatenate([p.columns for p in pairs]) if pairs else np.zeros(0)

    if ground_truth is not None:
        uv, _ = ground_truth.project(points)
        rms = _rms(uv[:, 0] - columns)
        extrinsics = [ground_truth.pose.compose(obs.pose) for obs in observations]
        return CalibrationResult(ground_truth.intrinsics, ground_truth.pose, rms, rms, extrinsics, len(columns))

    if len(observations) < MIN_BOARDS:
        raise CalibrationError(f"projector calibration needs at least {MIN_BOARDS} boards, got {len(observations)}")
    if any(len(p) < 4 for p in pairs):
        raise CalibrationError("every board needs at least 4 decoded points")

    p1, p3 = _linear_init(points, columns)
    x0 = _decompose(p1, p3)
    initial_rms = _rms(_column_projection(x0, points, translation_y) - columns)

    fit = least_squares(lambda x: _column_projection(x, points, translation_y) - columns, x0, method="lm")
    rms = _rms(fit.fun)
    x = fit.x if np.isfinite(rms) and rms <= initial_rms else x0
    rms = min(rms, initial_rms) if np.isfinite(rms) else initial_rms

    fx, cx = float(x[0]), float(x[1])
    cy = (resolution[1] - 1) / 2.0 if principal_y is None else principal_y
    intrinsics = np.array([[fx, 0.0, cx], [0.0, fx, cy], [0.0, 0.0, 1.0]])
    pose = RigidTransform(Rotation.from_rotvec(x[2:5]).as_matrix(), np.array([x[5], translation_y, x[6]]))
    extrinsics = [pose.compose(obs.pose) for obs in observations]
    logger.info("Projector calibrated from %d points: fx %.3f, cx %.3f, RMS %.4f px (init %.4f px)", len(columns), fx, cx, rms, initial_rms)
    return CalibrationResult(intrinsics, pose, rms, initial_rms, extrinsics, len(columns))


def board_poses(
    n_boards: int = N_BOARDS,
    distance: float = 1.0,
    tilt: float = np.radians(15.0),
    seed: Optional[int] = 0,
) -> List[RigidTransform]:
    """
    Distinct board poses facing the camera at about `distance`.

    The first board is tilted about the vertical axis, the second about the horizontal
    one, and the rest get random tilts up to `tilt`.
    """
    rng = np.random.default_rng(seed)
    facing = Rotation.from_euler("x", np.pi)
    poses = []
    for i in range(n_boards):
        if i == 0:
            angles = (0.0, tilt)
        elif i == 1:
            angles = (tilt, 0.0)
        else:
            angles = tuple(rng.uniform(-tilt, tilt, size=2))
        rotation = (Rotation.from_euler("xy", angles) * facing).as_matrix()
        offset = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), distance + rng.uniform(-0.1, 0.1)])
        poses.append(RigidTransform(rotation, offset))
    return poses


def board_surface(pose: RigidTransform, half_extent: Tuple[float, float] = (0.4, 0.4), material: MaterialParams = BOARD_MATERIAL) -> Plane:
    return Plane(pose.translation, pose.rotation[:, 2], pose.rotation[:, 0], half_extent, material)


def simulate_board_observations(
    camera: CameraModel,
    projector: ProjectorModel,
    sequence: PatternSequence,
    poses: Sequence[RigidTransform],
    threads: int = 1,
) -> List[BoardObservation]:
    """Render and decode the pattern sequence on each board pose."""
    observations = []
    for index, pose in enumerate(poses):
        scene = Scene([board_surface(pose)])
        hits = trace(scene, camera, projector)
        frames = render_frames(scene, camera, projector, sequence.frames, sequence.samplings, threads=threads, hits=hits)
        cmap = filter_discontinuities(decode(sequence, frames))
        logger.info("Board %d: %d decoded pixels", index, cmap.count)
        observations.append(BoardObservation(pose, cmap))
    return observations
