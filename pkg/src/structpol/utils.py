""" Utility functions for the structpol package. """

import functools
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Tuple, TypeVar

import numpy as np
from scipy.spatial.transform import Rotation

from structpol.config import LOG_LEVEL_ENV, THREADS_ENV, THREADS_ENV_ALIAS

T = TypeVar("T")

logger = logging.getLogger(__name__)


def log_duration(label: str) -> Callable[[Callable[..., T]], Callable[..., T]]:
    """
    Duration-logging decorator.

    Wraps a function so that its wall-clock duration is logged at INFO level under
    the wrapped function's module logger.

    Parameters
    ----------
    label : str
        Human readable name of the timed stage.

    Returns
    -------
    Callable[[Callable[..., T]], Callable[..., T]]
        A decorator preserving the wrapped function's signature.
    """

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> T:
            start = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                logging.getLogger(func.__module__).info("%s took %.3f s", label, time.perf_counter() - start)

        return wrapper

    return decorator


def configure_logging(verbosity: int = 0) -> None:
    """
    Configure root logging for command-line use.

    Parameters
    ----------
    verbosity : int
        0 keeps the environment/default level, 1 selects INFO, 2 or more DEBUG.
    """
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = getattr(logging, os.environ.get(LOG_LEVEL_ENV, "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def resolve_threads(threads: Optional[int]) -> int:
    """
    Resolve the worker count from an explicit value, $SPIDERS_THREADS or $STRUCTPOL_THREADS.

    Parameters
    ----------
    threads : int, optional
        Explicit thread count; takes precedence when given.

    Returns
    -------
    int
        A positive worker count (1 when neither source is set or parseable).
    """
    if threads is not None and threads > 0:
        return threads
    for name in (THREADS_ENV, THREADS_ENV_ALIAS):
        raw = os.environ.get(name)
        if not raw:
            continue
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", name, raw)
    return 1


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Return `v` scaled to unit length along `axis`; zero vectors stay zero."""
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v, dtype=float), where=norm > 0)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """
    Rigid transform x' = R x + t.

    Attributes
    ----------
    rotation : np.ndarray
        3x3 rotation matrix.
    translation : np.ndarray
        3-vector translation.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float], translation: Sequence[float]) -> "RigidTransform":
        """Build a transform from an axis-angle vector (radians) and a translation."""
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix(), np.asarray(translation, dtype=float))

    @classmethod
    def look_at(cls, eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, -1.0, 0.0)) -> "RigidTransform":
        """
        World-to-camera transform for a camera at `eye` looking at `target`.

        The camera frame is x right, y down, z forward; `up` is the world direction that
        should appear upward in the image.
        """
        eye = np.asarray(eye, dtype=float)
        z = normalize(np.asarray(target, dtype=float) - eye)
        x = normalize(np.cross(z, np.asarray(up, dtype=float)))
        y = np.cross(z, x)
        rotation = np.stack([x, y, z])
        return cls(rotation, -rotation @ eye)

    @property
    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    @property
    def center(self) -> np.ndarray:
        """Origin of the target frame expressed in the source frame."""
        return -self.rotation.T @ self.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def apply_direction(self, directions: np.ndarray) -> np.ndarray:
        return directions @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform applying `other` first, then `self`."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


class PinholeMixin:
    """
    Shared pinhole geometry for cameras and projectors.

    Subclasses are dataclasses with `intrinsics` (3x3), `pose` (world-to-device
    RigidTransform) and `resolution` (width, height). Pixel centres sit at integer
    coordinates.
    """

    intrinsics: np.ndarray
    pose: RigidTransform
    resolution: Tuple[int, int]

    def _validate_pinhole(self) -> None:
        k = np.asarray(self.intrinsics, dtype=float)
        if k.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {k.shape}")
        width, height = self.resolution
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= k[0, 2] <= width and 0 <= k[1, 2] <= height):
            raise ValueError("principal point must lie inside the image")
        object.__setattr__(self, "intrinsics", k)

    @property
    def width(self) -> int:
        return int(self.resolution[0])

    @property
    def height(self) -> int:
        return int(self.resolution[1])

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix K [R | t] mapping homogeneous world points to homogeneous pixels."""
        return self.intrinsics @ np.hstack([self.pose.rotation, self.pose.translation[:, None]])

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Project world points (..., 3).

        Returns
        -------
        Tuple[np.ndarray, np.ndarray]
            Pixel coordinates (..., 2) and depth along the optical axis (...). Points
            with non-positive depth get NaN coordinates.
        """
        local = self.pose.apply(np.asarray(points, dtype=float))
        z = local[..., 2]
        safe = np.where(z > 0, z, np.nan)
        k = self.intrinsics
        u = k[0, 0] * local[..., 0] / safe + k[0, 1] * local[..., 1] / safe + k[0, 2]
        v = k[1, 1] * local[..., 1] / safe + k[1, 2]
        return np.stack([u, v], axis=-1), z

    def inside(self, uv: np.ndarray) -> np.ndarray:
        """True for pixel coordinates covered by a device pixel."""
        u, v = uv[..., 0], uv[..., 1]
        with np.errstate(invalid="ignore"):
            return (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)

    def pixel_directions(self) -> np.ndarray:
        """Unit ray directions (H, W, 3) through every pixel centre, in the device frame."""
        u, v = np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))
        pix = np.stack([u, v, np.ones_like(u)], axis=-1)
        return normalize(pix @ np.linalg.inv(self.intrinsics).T)

    def pixel_rays(self) -> Tuple[np.ndarray, np.ndarray]:
        """World-space ray origin (3,) and unit directions (H, W, 3) through every pixel centre."""
        return self.center, self.pose.inverse().apply_direction(self.pixel_directions())
