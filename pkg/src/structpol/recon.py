"""
Reconstruction: geometry from correspondences, reflectance from polarization.

Triangulation turns decoded projector columns into depth. PCA over local point
neighbourhoods gives initial normals. The specular/diffuse split of the perpendicular
uniform pair gives an initial albedo, from which the global reflectance parameters are
fitted; a joint refinement then alternates between the global parameters and the
per-pixel albedo and normal, using every captured frame.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import uniform_filter

from structpol.codec import CorrespondenceMap, PatternSequence, incident_stokes, synthesize_unpolarized
from structpol.config import (
    FAR_PLANE,
    LAMBDA_DOLP_INIT,
    LAMBDA_DOLP_JOINT,
    LAMBDA_STOKES_JOINT,
    MAX_ITERATIONS,
    MAX_OUTER_ITERATIONS,
    PARALLEL_ANGLE,
    PCA_WINDOW,
    PIXEL_MAX,
    TOLERANCE,
)
from structpol.exceptions import AmbientLightError, DimensionMismatchError
from structpol.optim import batched_levenberg_marquardt_step, levenberg_marquardt, objective
from structpol.pbrdf import (
    GLOBAL_LOWER,
    GLOBAL_UPPER,
    MaterialParams,
    ShadingGeometry,
    fresnel_unpolarized,
    radiometric_terms,
    reflection_terms,
)
from structpol.polcore import stokes_dolp
from structpol.render import CameraModel, PolarimetricImage
from structpol.slm import ProjectorModel
from structpol.utils import log_duration, normalize

logger = logging.getLogger(__name__)

# Per-pixel refinement bounds: albedo, then the two tangent-plane normal offsets.
_PIXEL_LOWER = np.array([0.0, -0.5, -0.5])
_PIXEL_UPPER = np.array([1.0, 0.5, 0.5])


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    pixels: np.ndarray
    normals: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """
    Metric depth per camera pixel.

    Attributes
    ----------
    depth : np.ndarray
        (H, W) z-depth in the camera frame; NaN where invalid.
    points : np.ndarray
        (H, W, 3) camera-frame points; NaN where invalid.
    valid : np.ndarray
        (H, W) mask; valid depths lie in (0, FAR_PLANE).
    """

    depth: np.ndarray
    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        with np.errstate(invalid="ignore"):
            valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.depth) & (self.depth > 0) & (self.depth < FAR_PLANE)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "depth", np.where(valid, self.depth, np.nan))
        object.__setattr__(self, "points", np.where(valid[..., None], self.points, np.nan))

    @classmethod
    def from_depth(cls, depth: np.ndarray, camera: CameraModel) -> "DepthMap":
        """Rebuild camera-frame points from a z-depth image."""
        directions = camera.pixel_directions()
        points = directions / directions[..., 2:3] * depth[..., None]
        return cls(depth, points, np.isfinite(depth))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape

    def cloud(self, normals: Optional["NormalMap"] = None) -> PointCloud:
        rows, cols = np.nonzero(self.valid)
        n = None if normals is None else normals.normals[rows, cols]
        return PointCloud(self.points[rows, cols], np.stack([cols, rows], axis=-1), n)


@dataclass(frozen=True, eq=False)
class NormalMap:
    """Unit normals (H, W, 3) in the camera frame, facing the camera where valid."""

    normals: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        normals = normalize(np.asarray(self.normals, dtype=float))
        valid = np.asarray(self.valid, dtype=bool) & (np.linalg.norm(normals, axis=-1) > 0.5)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "normals", np.where(valid[..., None], normals, 0.0))

    @classmethod
    def from_pixels(cls, shape: Tuple[int, int], pixels: np.ndarray, normals: np.ndarray) -> "NormalMap":
        """Scatter per-pixel normals (N, 3) at (row, col) `pixels` into a map."""
        image = np.zeros(tuple(shape) + (3,))
        valid = np.zeros(shape, dtype=bool)
        image[pixels[:, 0], pixels[:, 1]] = normals
        valid[pixels[:, 0], pixels[:, 1]] = True
        return cls(image, valid)

    def angular_error(self, other: "NormalMap") -> np.ndarray:
        """Angle in degrees to `other` on pixels valid in both; NaN elsewhere."""
        both = self.valid & other.valid
        cos = np.clip(np.sum(self.normals * other.normals, axis=-1), -1.0, 1.0)
        return np.where(both, np.degrees(np.arccos(cos)), np.nan)


@dataclass(frozen=True)
class EstimationConfig:
    """
    Weights and limits of reflectance estimation.

    The DoLP weight of the initial fit, the DoLP and Stokes weights of the joint
    refinement, iteration caps, the relative convergence tolerance and the PCA window.
    """

    lambda_dolp_init: float = LAMBDA_DOLP_INIT
    lambda_dolp_joint: float = LAMBDA_DOLP_JOINT
    lambda_stokes: float = LAMBDA_STOKES_JOINT
    max_iterations: int = MAX_ITERATIONS
    max_outer_iterations: int = MAX_OUTER_ITERATIONS
    global_iterations: int = 5
    pixel_iterations: int = 3
    tolerance: float = TOLERANCE
    pca_window: int = PCA_WINDOW
    use_all_frames: bool = True

    def __post_init__(self) -> None:
        for name in ("lambda_dolp_init", "lambda_dolp_joint", "lambda_stokes"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.pca_window < 3 or self.pca_window % 2 == 0:
            raise ValueError(f"PCA window must be an odd size of at least 3, got {self.pca_window}")


# --------------------------------------------------------------------------- geometry


@log_duration("triangulate")
def triangulate(cmap: CorrespondenceMap, camera: CameraModel, projector: ProjectorModel) -> Tuple[DepthMap, PointCloud]:
    """
    Intersect each camera ray with the projector plane of its decoded column.

    The plane of column u is P1 - u P3 in homogeneous world coordinates. Rays closer
    than `PARALLEL_ANGLE` to their plane, and intersections behind the camera, are
    flagged invalid.

    Returns
    -------
    Tuple[DepthMap, PointCloud]
        Depth with camera-frame points, and the valid points as a cloud.
    """
    if cmap.shape != (camera.height, camera.width):
        raise DimensionMismatchError("correspondence map", (camera.height, camera.width), cmap.shape)
    origin, directions = camera.pixel_rays()
    proj = projector.projection_matrix
    column = np.where(cmap.valid, cmap.column, 0.0)
    plane = proj[0] - column[..., None] * proj[2]
    normal = plane[..., :3]
    denom = np.sum(normal * directions, axis=-1)
    sin_angle = np.abs(denom) / np.maximum(np.linalg.norm(normal, axis=-1), 1e-300)
    ok = cmap.valid & (sin_angle >= np.sin(PARALLEL_ANGLE))

    t = np.divide(-(normal @ origin + plane[..., 3]), denom, out=np.full(denom.shape, -1.0), where=ok)
    ok &= t > 0
    world = origin + t[..., None] * directions
    local = camera.pose.apply(world)
    depth = DepthMap(local[..., 2], local, ok)
    logger.info("Triangulated %d points", int(depth.valid.sum()))
    return depth, depth.cloud()


def pca_normals(depth: DepthMap, window: int = PCA_WINDOW) -> NormalMap:
    """
    Normals from the smallest principal axis of each pixel's window of valid points.

    Windows with fewer than three valid points, or centred on an invalid pixel, give
    invalid normals. Normals are oriented towards the camera.
    """
    valid = depth.valid
    if not np.any(valid):
        return NormalMap(np.zeros(depth.shape + (3,)), np.zeros(depth.shape, dtype=bool))
    weight = valid.astype(float)
    reference = depth.points[valid].mean(axis=0)
    centred = np.where(valid[..., None], depth.points - reference, 0.0)

    def box(a: np.ndarray) -> np.ndarray:
        return uniform_filter(a, size=window, mode="constant", cval=0.0) * window**2

    count = np.rint(box(weight))
    safe = np.maximum(count, 1.0)
    mean = np.stack([box(centred[..., i]) for i in range(3)], axis=-1) / safe[..., None]
    cov = np.empty(depth.shape + (3, 3))
    for i in range(3):
        for j in range(i, 3):
            value = box(centred[..., i] * centred[..., j]) / safe - mean[..., i] * mean[..., j]
            cov[..., i, j] = value
            cov[..., j, i] = value

    ok = valid & (count >= 3)
    normals = np.zeros(depth.shape + (3,))
    if np.any(ok):
        _, vectors = np.linalg.eigh(cov[ok])
        n = vectors[..., :, 0]
        facing = np.sum(n * depth.points[ok], axis=-1) > 0
        n[facing] *= -1.0
        normals[ok] = n
    return NormalMap(normals, ok)


# --------------------------------------------------------------------------- reflectance


@dataclass(frozen=True, eq=False)
class SpecularSplit:
    """Specular I_s and diffuse I_d intensities, and how many I_d values were clamped at 0."""

    specular: np.ndarray
    diffuse: np.ndarray
    clamped: int = 0


def separate_specular(s_o: np.ndarray, s_hat: np.ndarray, rho_i: Union[float, np.ndarray] = 1.0) -> SpecularSplit:
    """
    Split the uniform-pair observation into specular and diffuse intensity.

    I_s = |(s_-^1, s_-^2)| / rho_i with s_- = s_o - s_hat, and I_d = s_hat^0 - I_s: the
    synthesized unpolarized observation holds c_s s_i^0 + c_d s_i^0.
    """
    rho = np.asarray(rho_i, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("incident DoLP must be positive")
    s_o, s_hat = np.asarray(s_o, dtype=float), np.asarray(s_hat, dtype=float)
    diff = s_o - s_hat
    specular = np.hypot(diff[..., 1], diff[..., 2]) / rho
    diffuse = s_hat[..., 0] - specular
    negative = diffuse < 0
    clamped = int(np.count_nonzero(negative))
    if clamped:
        logger.warning("Clamped %d negative diffuse intensities to zero", clamped)
    return SpecularSplit(specular, np.where(negative, 0.0, diffuse), clamped)


def lambertian_albedo(diffuse: np.ndarray, n_dot_l: np.ndarray, source_intensity: float = 1.0) -> np.ndarray:
    """Albedo of a Lambertian surface that would return `diffuse` under the projector."""
    shading = n_dot_l * source_intensity / np.pi
    return np.divide(diffuse, shading, out=np.zeros_like(np.asarray(diffuse, dtype=float)), where=shading > 1e-6)


@dataclass(frozen=True, eq=False)
class EstimationInputs:
    """
    Per-pixel samples for reflectance estimation.

    Attributes
    ----------
    observed : np.ndarray
        (F, N, 4) captured Stokes vectors.
    incident : np.ndarray
        (F, N, 4) Stokes vectors the projector threw onto each pixel.
    usable : np.ndarray
        (F, N) samples that take part in the losses.
    light, view : np.ndarray
        (N, 3) unit directions to the projector and the camera (camera frame).
    pixels : np.ndarray
        (N, 2) (row, col) of each sample.
    shape : Tuple[int, int]
        Camera image size.
    """

    observed: np.ndarray
    incident: np.ndarray
    usable: np.ndarray
    light: np.ndarray
    view: np.ndarray
    pixels: np.ndarray
    shape: Tuple[int, int]

    @property
    def n_pixels(self) -> int:
        return self.light.shape[0]

    def scatter(self, values: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Place per-pixel values (N, ...) back into an (H, W, ...) image."""
        values = np.asarray(values)
        image = np.full(tuple(self.shape) + values.shape[1:], fill, dtype=float)
        image[self.pixels[:, 0], self.pixels[:, 1]] = values
        return image


def build_estimation_inputs(
    captures: Sequence[PolarimetricImage],
    cmap: CorrespondenceMap,
    depth: DepthMap,
    seq: PatternSequence,
    projector_center: np.ndarray,
    use_all_frames: bool = True,
) -> EstimationInputs:
    """
    Gather observations, incident light and shading directions of every reconstructed pixel.

    Parameters
    ----------
    captures : Sequence[PolarimetricImage]
        One capture per pattern frame.
    cmap : CorrespondenceMap
        Decoded projector columns.
    depth : DepthMap
        Triangulated camera-frame points.
    seq : PatternSequence
        The projected sequence.
    projector_center : np.ndarray
        Projector centre in the camera frame.
    use_all_frames : bool
        Use every frame; otherwise only the uniform ones.
    """
    if len(captures) != len(seq):
        raise DimensionMismatchError("captures per pattern frame", (len(seq),), (len(captures),))
    mask = cmap.valid & depth.valid
    rows, cols = np.nonzero(mask)
    points = depth.points[rows, cols]
    frames = list(range(len(seq))) if use_all_frames else seq.indices("uniform")

    incident = incident_stokes(seq, cmap.column[rows, cols])
    observed = np.stack([captures[i].stokes[rows, cols] for i in frames])
    return EstimationInputs(
        observed=observed,
        incident=incident.stokes[frames],
        usable=incident.usable[frames],
        light=normalize(np.asarray(projector_center, dtype=float) - points),
        view=normalize(-points),
        pixels=np.stack([rows, cols], axis=-1),
        shape=cmap.shape,
    )


def check_ambient_free(ambient_intensity: float) -> None:
    """Reflectance estimation is only defined without ambient light."""
    if ambient_intensity > 0:
        raise AmbientLightError(ambient_intensity)


def _residuals(
    inputs: EstimationInputs,
    material: MaterialParams,
    normals: np.ndarray,
    albedo: np.ndarray,
    lambda_dolp: float,
    lambda_stokes: float,
) -> np.ndarray:
    """Weighted residuals (N, F * k): intensity, DoLP and, when weighted, the s1/s2 elements."""
    geom = ShadingGeometry(normals, inputs.light, inputs.view)
    terms = reflection_terms(material.with_albedo(albedo), geom)
    predicted = terms.expand(0).apply(inputs.incident)
    observed = inputs.observed

    parts = [
        predicted[..., 0] - observed[..., 0],
        np.sqrt(lambda_dolp) * (stokes_dolp(predicted) - stokes_dolp(observed)),
    ]
    if lambda_stokes > 0:
        parts.append(np.sqrt(lambda_stokes) * (predicted[..., 1] - observed[..., 1]))
        parts.append(np.sqrt(lambda_stokes) * (predicted[..., 2] - observed[..., 2]))
    stacked = np.stack(parts, axis=-1) * inputs.usable[..., None]
    return np.moveaxis(stacked, 1, 0).reshape(inputs.n_pixels, -1)


@dataclass
class BrdfFit:
    """Result of the global reflectance fit."""

    material: MaterialParams
    loss: float
    initial_loss: float
    converged: bool
    iterations: int = 0
    history: List[float] = field(default_factory=list)


def albedo_from_lambertian(material: MaterialParams, albedo0: np.ndarray, geom: ShadingGeometry) -> np.ndarray:
    """K_b explaining a Lambertian albedo once Fresnel transmission on entry and exit is accounted for."""
    transmit = (1.0 - fresnel_unpolarized(geom.n_dot_l, material.refractive_index)) * (
        1.0 - fresnel_unpolarized(geom.n_dot_v, material.refractive_index)
    )
    return np.clip(np.divide(albedo0, transmit, out=np.zeros_like(albedo0), where=transmit > 0), 0.0, 1.0)


@log_duration("init_brdf")
def init_brdf(
    inputs: EstimationInputs,
    normals: np.ndarray,
    albedo0: np.ndarray,
    initial: Optional[MaterialParams] = None,
    config: EstimationConfig = EstimationConfig(),
    max_iterations: Optional[int] = None,
) -> BrdfFit:
    """
    Fit the global reflectance parameters with normals and Lambertian albedo held fixed.

    Minimizes the intensity loss plus the DoLP loss weighted by `lambda_dolp_init`.

    Parameters
    ----------
    inputs : EstimationInputs
        Per-pixel samples.
    normals : np.ndarray
        (N, 3) initial normals.
    albedo0 : np.ndarray
        (N,) Lambertian albedo from the specular/diffuse split.
    initial : MaterialParams, optional
        Starting global parameters (package defaults if omitted).
    config : EstimationConfig
        Weights and caps.
    max_iterations : int, optional
        Overrides `config.max_iterations`; 0 returns the initial guess.

    Returns
    -------
    BrdfFit
        Fitted material (its albedo is the implied K_b per pixel), losses and a
        convergence flag; the best point is returned even when the cap is hit.
    """
    initial = initial if initial is not None else MaterialParams()
    normals = normalize(np.asarray(normals, dtype=float))
    albedo0 = np.asarray(albedo0, dtype=float)
    geom = ShadingGeometry(normals, inputs.light, inputs.view)

    def material_at(x: np.ndarray) -> MaterialParams:
        candidate = initial.with_globals(x)
        return candidate.with_albedo(albedo_from_lambertian(candidate, albedo0, geom))

    def residual_fn(x: np.ndarray) -> np.ndarray:
        candidate = material_at(x)
        return _residuals(inputs, candidate, normals, candidate.albedo, config.lambda_dolp_init, 0.0).ravel()

    cap = config.max_iterations if max_iterations is None else max_iterations
    lm = levenberg_marquardt(residual_fn, initial.global_vector, GLOBAL_LOWER, GLOBAL_UPPER, cap, config.tolerance)
    if not lm.converged:
        logger.warning("Initial reflectance fit did not converge within %d iterations", cap)
    logger.info("Initial reflectance fit: loss %.6e -> %.6e", lm.history[0], lm.cost)
    return BrdfFit(material_at(lm.x), lm.cost, lm.history[0], lm.converged, lm.iterations, lm.history)


@dataclass
class RefineResult:
    """Jointly refined material (per-pixel albedo) and normals (N, 3), with the objective history."""

    material: MaterialParams
    normals: np.ndarray
    history: List[float]
    converged: bool
    iterations: int = 0


def tangent_basis(normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the tangent plane of each normal."""
    helper = np.where(np.abs(normals[..., 0:1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    t1 = normalize(np.cross(normals, helper))
    t2 = np.cross(normals, t1)
    return t1, t2


@log_duration("joint_refine")
def joint_refine(
    inputs: EstimationInputs,
    init: MaterialParams,
    normals: np.ndarray,
    config: EstimationConfig = EstimationConfig(),
) -> RefineResult:
    """
    Jointly refine global parameters, per-pixel albedo and per-pixel normals.

    Each outer iteration runs a few Levenberg-Marquardt steps on the global parameters,
    then batched damped steps on every pixel's (albedo, tangent-plane normal offset).
    Normals are renormalized after every step. Steps are only accepted when they lower
    the objective, so the recorded history never increases.

    Parameters
    ----------
    inputs : EstimationInputs
        Per-pixel samples.
    init : MaterialParams
        Starting material; its albedo is a per-pixel array (N,) or a scalar.
    normals : np.ndarray
        (N, 3) starting normals.
    config : EstimationConfig
        Weights, caps and tolerance.

    Returns
    -------
    RefineResult
        Refined material and normals with the objective after every outer iteration.
    """
    lam_rho, lam_s = config.lambda_dolp_joint, config.lambda_stokes
    normals = normalize(np.asarray(normals, dtype=float))
    albedo = np.clip(np.broadcast_to(np.asarray(init.albedo, dtype=float), (inputs.n_pixels,)).copy(), 0.0, 1.0)
    material = init.with_albedo(albedo)

    def total(mat: MaterialParams, n: np.ndarray, a: np.ndarray) -> float:
        return objective(_residuals(inputs, mat, n, a, lam_rho, lam_s))

    history = [total(material, normals, albedo)]
    damping = np.full(inputs.n_pixels, 1e-3)
    converged = False
    iterations = 0
    for outer in range(config.max_outer_iterations):
        iterations = outer + 1
        start = history[-1]

        lm = levenberg_marquardt(
            lambda x: _residuals(inputs, material.with_globals(x), normals, albedo, lam_rho, lam_s).ravel(),
            material.global_vector,
            GLOBAL_LOWER,
            GLOBAL_UPPER,
            config.global_iterations,
            config.tolerance,
        )
        material = material.with_globals(lm.x)

        for _ in range(config.pixel_iterations):
            t1, t2 = tangent_basis(normals)

            def pixel_residuals(x: np.ndarray, base=normals, t1=t1, t2=t2) -> np.ndarray:
                n = normalize(base + x[:, 1:2] * t1 + x[:, 2:3] * t2)
                return _residuals(inputs, material, n, x[:, 0], lam_rho, lam_s)

            x0 = np.column_stack([albedo, np.zeros(inputs.n_pixels), np.zeros(inputs.n_pixels)])
            step = batched_levenberg_marquardt_step(pixel_residuals, x0, damping, _PIXEL_LOWER, _PIXEL_UPPER)
            albedo = step.x[:, 0]
            normals = normalize(normals + step.x[:, 1:2] * t1 + step.x[:, 2:3] * t2)
            damping = step.damping

        material = material.with_albedo(albedo)
        current = total(material, normals, albedo)
        history.append(current)
        logger.debug("Joint refinement iteration %d: objective %.6e", iterations, current)
        if start <= 0 or (start - current) / start < config.tolerance:
            converged = True
            break

    if not converged:
        logger.warning("Joint refinement stopped at %d outer iterations", iterations)
    logger.info("Joint refinement: objective %.6e -> %.6e in %d iterations", history[0], history[-1], iterations)
    return RefineResult(material, normals, history, converged, iterations)


@dataclass
class ReflectanceEstimate:
    """Outcome of the full reflectance pipeline on one channel."""

    inputs: EstimationInputs
    albedo0: np.ndarray
    initial: BrdfFit
    refined: RefineResult

    @property
    def normal_map(self) -> NormalMap:
        return NormalMap.from_pixels(self.inputs.shape, self.inputs.pixels, self.refined.normals)

    @property
    def albedo_map(self) -> np.ndarray:
        return self.inputs.scatter(np.asarray(self.refined.material.albedo, dtype=float), fill=0.0)


def estimate_reflectance(
    captures: Sequence[PolarimetricImage],
    cmap: CorrespondenceMap,
    depth: DepthMap,
    normals: NormalMap,
    seq: PatternSequence,
    projector_center: np.ndarray,
    config: EstimationConfig = EstimationConfig(),
    initial: Optional[MaterialParams] = None,
) -> ReflectanceEstimate:
    """
    Specular/diffuse split, global fit, then joint refinement on every pixel with depth and a normal.

    `projector_center` is given in the camera frame.
    """
    usable_depth = DepthMap(depth.depth, depth.points, depth.valid & normals.valid)
    inputs = build_estimation_inputs(captures, cmap, usable_depth, seq, projector_center, config.use_all_frames)
    if inputs.n_pixels == 0:
        raise ValueError("no pixel has both a decoded depth and a normal")
    rows, cols = inputs.pixels[:, 0], inputs.pixels[:, 1]
    n0 = normals.normals[rows, cols]

    bright, dark = seq.uniform_index(float(PIXEL_MAX)), seq.uniform_index(0.0)
    s_o = captures[bright].stokes[rows, cols]
    s_hat = synthesize_unpolarized(captures[dark], captures[bright]).stokes[rows, cols]
    split = separate_specular(s_o, s_hat, float(seq.photometry.dolp[PIXEL_MAX]))
    n_dot_l = np.clip(np.sum(n0 * inputs.light, axis=-1), 0.0, None)
    albedo0 = lambertian_albedo(split.diffuse, n_dot_l, seq.photometry.source_intensity)

    fit = init_brdf(inputs, n0, albedo0, initial, config)
    refined = joint_refine(inputs, fit.material, n0, config)
    return ReflectanceEstimate(inputs, albedo0, fit, refined)


# --------------------------------------------------------------------------- relighting and evaluation


@dataclass(frozen=True)
class DirectionalLight:
    """Distant light; `direction` points from the surface towards the light (camera frame)."""

    direction: Tuple[float, float, float]
    intensity: Tuple[float, ...] = (1.0, 1.0, 1.0)


def relight(
    normals: NormalMap,
    mat: MaterialParams,
    lights: Sequence[DirectionalLight],
    view: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Intensity image (H, W, C) of the surface under directional lights.

    `mat.albedo` may be a scalar, an (H, W) map or an (H, W, C) map. Without `view`
    the camera is treated as looking straight down +z.
    """
    shape = normals.valid.shape
    channels = max([len(light.intensity) for light in lights] or [1])
    if view is None:
        view = np.broadcast_to(np.array([0.0, 0.0, -1.0]), shape + (3,))
    albedo = np.asarray(mat.albedo, dtype=float)
    image = np.zeros(shape + (channels,))
    for c in range(channels):
        plane = albedo[..., c] if albedo.ndim == 3 else albedo
        channel_mat = mat.with_albedo(plane)
        for light in lights:
            direction = normalize(np.asarray(light.direction, dtype=float))
            geom = ShadingGeometry(normals.normals, np.broadcast_to(direction, shape + (3,)), view)
            c_s, c_d = radiometric_terms(channel_mat, geom)
            strength = light.intensity[min(c, len(light.intensity) - 1)]
            image[..., c] += (c_s + c_d) * strength
    return np.where(normals.valid[..., None], image, 0.0)


@dataclass(frozen=True)
class EvaluationReport:
    mean_depth_error: float
    median_depth_error: float
    mean_normal_error: float
    coverage: float
    n_pixels: int

    def to_json(self) -> dict:
        def clean(value: float) -> Optional[float]:
            return None if not np.isfinite(value) else float(value)

        return {
            "mean_depth_error": clean(self.mean_depth_error),
            "median_depth_error": clean(self.median_depth_error),
            "mean_normal_error_deg": clean(self.mean_normal_error),
            "coverage": float(self.coverage),
            "n_pixels": int(self.n_pixels),
        }


def evaluate(
    pred: DepthMap,
    gt: DepthMap,
    pred_normals: Optional[NormalMap] = None,
    gt_normals: Optional[NormalMap] = None,
) -> EvaluationReport:
    """Mean/median absolute depth error, mean angular normal error and coverage of the ground truth."""
    if pred.shape != gt.shape:
        raise DimensionMismatchError("depth maps", gt.shape, pred.shape)
    both = pred.valid & gt.valid
    n_gt = int(gt.valid.sum())
    coverage = float(both.sum()) / n_gt if n_gt else 0.0
    if not np.any(both):
        logger.warning("Prediction and ground truth share no valid pixels")
        return EvaluationReport(float("nan"), float("nan"), float("nan"), 0.0, 0)

    errors = np.abs(pred.depth[both] - gt.depth[both])
    normal_error = float("nan")
    if pred_normals is not None and gt_normals is not None:
        angles = pred_normals.angular_error(gt_normals)[both]
        angles = angles[np.isfinite(angles)]
        normal_error = float(angles.mean()) if angles.size else float("nan")
    return EvaluationReport(float(errors.mean()), float(np.median(errors)), normal_error, coverage, int(both.sum()))
