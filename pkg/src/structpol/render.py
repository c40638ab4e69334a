"""
Synthetic polarimetric camera.

Scenes of analytic spheres, planes and triangle meshes are ray-cast from a pinhole
camera, lit by the polarization projector plus an ambient term, and shaded with the
reflection model of `structpol.pbrdf`. Geometry is traced once per rig (`trace`) and
re-shaded for every projected frame (`shade`), which is what keeps whole pattern
sequences cheap to render.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from structpol.config import PHYSICAL_EPS
from structpol.exceptions import DimensionMismatchError
from structpol.pbrdf import MaterialParams, ReflectionTerms, ShadingGeometry, reflection_terms
from structpol.polcore import is_realizable, malus, stokes_aolp, stokes_dolp
from structpol.slm import ProjectorModel, throw_stokes
from structpol.utils import PinholeMixin, RigidTransform, log_duration, normalize

logger = logging.getLogger(__name__)

# Filter angles of the 2x2 on-chip polarizer tile, row-major.
MOSAIC_ANGLES = np.radians([[90.0, 45.0], [135.0, 0.0]])

_RAY_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class CameraModel(PinholeMixin):
    """
    Pinhole polarimetric camera.

    Attributes
    ----------
    intrinsics : np.ndarray
        3x3 intrinsic matrix.
    pose : RigidTransform
        World-to-camera transform.
    resolution : Tuple[int, int]
        (W_c, H_c) in Stokes pixels (each one a 2x2 polarizer tile on the sensor).
    """

    intrinsics: np.ndarray
    pose: RigidTransform = field(default_factory=RigidTransform)
    resolution: Tuple[int, int] = (256, 256)

    def __post_init__(self) -> None:
        self._validate_pinhole()


@dataclass(frozen=True, eq=False)
class PolarimetricImage:
    """
    Grid of Stokes vectors (H, W, 4) in linear radiometric units.

    `s3_observed` is False for images recovered from a linear-polarizer mosaic, whose
    circular component is unobservable and stored as 0.
    """

    stokes: np.ndarray
    s3_observed: bool = True

    def __post_init__(self) -> None:
        stokes = np.asarray(self.stokes, dtype=float)
        if stokes.ndim != 3 or stokes.shape[-1] != 4:
            raise ValueError(f"Stokes image must have shape (H, W, 4), got {stokes.shape}")
        object.__setattr__(self, "stokes", stokes)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.stokes.shape[:2]

    @property
    def s0(self) -> np.ndarray:
        return self.stokes[..., 0]

    @property
    def dolp(self) -> np.ndarray:
        return stokes_dolp(self.stokes)

    @property
    def aolp(self) -> np.ndarray:
        return stokes_aolp(self.stokes)

    def is_realizable(self, eps: float = PHYSICAL_EPS) -> bool:
        return bool(np.all(is_realizable(self.stokes, eps)))


@dataclass(frozen=True, eq=False)
class MosaicImage:
    """
    Raw division-of-focal-plane frame with a repeating 2x2 filter-angle tile.

    The raw frame is (2H, 2W): each Stokes pixel (r, c) of an (H, W) image owns the tile
    raw[2r:2r+2, 2c:2c+2], whose filter angles are `angles` (90, 45 over 135, 0 degrees).
    A sensor with H x W photosites therefore yields an (H/2, W/2) Stokes image.
    """

    raw: np.ndarray
    angles: np.ndarray = field(default_factory=lambda: MOSAIC_ANGLES.copy())


# --------------------------------------------------------------------------- albedo maps


@dataclass(frozen=True)
class ConstantAlbedo:
    """Spatially uniform albedo; one value per channel."""

    values: Tuple[float, ...] = (0.5,)

    @property
    def channels(self) -> int:
        return len(self.values)

    def sample(self, surface: "Surface", points: np.ndarray, channel: int) -> np.ndarray:
        return np.full(points.shape[:-1], self.values[min(channel, len(self.values) - 1)])


@dataclass(frozen=True)
class CheckerAlbedo:
    """Procedural 3D checkerboard alternating between `low` and `high` every `scale` units."""

    low: Tuple[float, ...] = (0.2,)
    high: Tuple[float, ...] = (0.6,)
    scale: float = 0.1

    @property
    def channels(self) -> int:
        return max(len(self.low), len(self.high))

    def sample(self, surface: "Surface", points: np.ndarray, channel: int) -> np.ndarray:
        cells = np.floor(points / self.scale).astype(np.int64).sum(axis=-1)
        low = self.low[min(channel, len(self.low) - 1)]
        high = self.high[min(channel, len(self.high) - 1)]
        return np.where(cells % 2 == 0, low, high)


@dataclass(frozen=True, eq=False)
class ImageAlbedo:
    """Albedo image (h, w) or (h, w, C) addressed by the surface's texture coordinates."""

    image: np.ndarray

    @property
    def channels(self) -> int:
        return 1 if self.image.ndim == 2 else self.image.shape[2]

    def sample(self, surface: "Surface", points: np.ndarray, channel: int) -> np.ndarray:
        uv = surface.texture_coords(points)
        h, w = self.image.shape[:2]
        col = np.clip((uv[..., 0] * w).astype(np.int64), 0, w - 1)
        row = np.clip((uv[..., 1] * h).astype(np.int64), 0, h - 1)
        plane = self.image if self.image.ndim == 2 else self.image[..., min(channel, self.channels - 1)]
        return plane[row, col]


AlbedoMap = Union[ConstantAlbedo, CheckerAlbedo, ImageAlbedo]


# --------------------------------------------------------------------------- surfaces


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    material: MaterialParams = field(default_factory=MaterialParams)
    albedo: AlbedoMap = field(default_factory=ConstantAlbedo)

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        oc = origins - self.center
        b = np.sum(oc * directions, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius**2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t = -b - root
        t = np.where(t > _RAY_EPS, t, -b + root)
        t = np.where((disc >= 0) & (t > _RAY_EPS), t, np.inf)
        return t, np.full(t.shape, -1, dtype=np.int64)

    def normals(self, points: np.ndarray, primitive: np.ndarray) -> np.ndarray:
        return normalize(points - self.center)

    def texture_coords(self, points: np.ndarray) -> np.ndarray:
        p = normalize(points - self.center)
        u = np.arctan2(p[..., 0], -p[..., 2]) / (2.0 * np.pi) + 0.5
        v = np.arccos(np.clip(p[..., 1], -1.0, 1.0)) / np.pi
        return np.stack([u, v], axis=-1)


@dataclass(frozen=True, eq=False)
class Plane:
    """
    Plane through `origin` with unit `normal`; optionally a finite rectangle.

    `u_axis` fixes the in-plane frame (board coordinates); `half_extent` bounds the
    rectangle along (u_axis, normal x u_axis).
    """

    origin: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    half_extent: Optional[Tuple[float, float]] = None
    material: MaterialParams = field(default_factory=MaterialParams)
    albedo: AlbedoMap = field(default_factory=ConstantAlbedo)

    def __post_init__(self) -> None:
        n = normalize(np.asarray(self.normal, dtype=float))
        u = np.asarray(self.u_axis, dtype=float)
        u = normalize(u - np.dot(u, n) * n)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "u_axis", u)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def v_axis(self) -> np.ndarray:
        return np.cross(self.normal, self.u_axis)

    @property
    def pose(self) -> RigidTransform:
        """Board-to-world transform: board x/y along the in-plane axes, z along the normal."""
        return RigidTransform(np.stack([self.u_axis, self.v_axis, self.normal], axis=1), self.origin)

    def local_coords(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.origin
        return np.stack([rel @ self.u_axis, rel @ self.v_axis], axis=-1)

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        denom = directions @ self.normal
        safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
        t = np.sum((self.origin - origins) * self.normal, axis=-1) / safe
        ok = (np.abs(denom) > 1e-12) & (t > _RAY_EPS)
        if self.half_extent is not None:
            local = self.local_coords(origins + t[..., None] * directions)
            ok &= (np.abs(local[..., 0]) <= self.half_extent[0]) & (np.abs(local[..., 1]) <= self.half_extent[1])
        return np.where(ok, t, np.inf), np.full(t.shape, -1, dtype=np.int64)

    def normals(self, points: np.ndarray, primitive: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.normal, points.shape).copy()

    def texture_coords(self, points: np.ndarray) -> np.ndarray:
        local = self.local_coords(points)
        extent = np.asarray(self.half_extent if self.half_extent is not None else (1.0, 1.0))
        return np.clip((local / extent + 1.0) / 2.0, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle mesh with per-face normals following the vertex winding (counter-clockwise is outward)."""

    vertices: np.ndarray
    faces: np.ndarray
    material: MaterialParams = field(default_factory=MaterialParams)
    albedo: AlbedoMap = field(default_factory=ConstantAlbedo)

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64))

    @property
    def face_normals(self) -> np.ndarray:
        v0, v1, v2 = (self.vertices[self.faces[:, k]] for k in range(3))
        return normalize(np.cross(v1 - v0, v2 - v0))

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        # Moller-Trumbore, looping over faces and vectorized over rays.
        best_t = np.full(directions.shape[:-1], np.inf)
        best_face = np.full(directions.shape[:-1], -1, dtype=np.int64)
        for index, (a, b, c) in enumerate(self.vertices[self.faces]):
            e1, e2 = b - a, c - a
            p = np.cross(directions, e2)
            det = p @ e1
            ok = np.abs(det) > 1e-14
            inv = np.divide(1.0, det, out=np.zeros_like(det), where=ok)
            s = origins - a
            u = np.sum(s * p, axis=-1) * inv
            q = np.cross(s, e1)
            v = np.sum(directions * q, axis=-1) * inv
            t = (q @ e2) * inv
            hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > _RAY_EPS) & (t < best_t)
            best_t = np.where(hit, t, best_t)
            best_face = np.where(hit, index, best_face)
        return best_t, best_face

    def normals(self, points: np.ndarray, primitive: np.ndarray) -> np.ndarray:
        return self.face_normals[np.clip(primitive, 0, None)]

    def texture_coords(self, points: np.ndarray) -> np.ndarray:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        return np.clip((points[..., :2] - lo[:2]) / span[:2], 0.0, 1.0)


Surface = Union[Sphere, Plane, TriangleMesh]


@dataclass(frozen=True)
class Ambient:
    """Partially polarized environment light reflected by every surface."""

    intensity: float = 0.0
    dolp: float = 0.0
    aolp: float = 0.0

    @property
    def stokes(self) -> np.ndarray:
        return self.intensity * np.array(
            [1.0, self.dolp * np.cos(2.0 * self.aolp), self.dolp * np.sin(2.0 * self.aolp), 0.0]
        )


@dataclass(frozen=True, eq=False)
class Scene:
    surfaces: List[Surface] = field(default_factory=list)
    ambient: Ambient = field(default_factory=Ambient)

    @property
    def channels(self) -> int:
        return max([s.albedo.channels for s in self.surfaces] or [1])


# --------------------------------------------------------------------------- tracing


@dataclass(frozen=True, eq=False)
class SceneHits:
    """
    Per-camera-pixel geometry of a traced scene.

    Attributes
    ----------
    surface : np.ndarray
        (H, W) index of the hit surface, -1 for background.
    depth : np.ndarray
        (H, W) z-depth in the camera frame, NaN for background.
    points : np.ndarray
        (H, W, 3) world hit points.
    normals, light, view : np.ndarray
        (H, W, 3) unit vectors in the camera frame.
    projector_uv : np.ndarray
        (H, W, 2) projector pixel coordinates of each hit point.
    lit : np.ndarray
        (H, W) True where the projector reaches the point unoccluded.
    albedo : np.ndarray
        (H, W, C) diffuse albedo per channel (0 on background).
    """

    surface: np.ndarray
    depth: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    light: np.ndarray
    view: np.ndarray
    projector_uv: np.ndarray
    lit: np.ndarray
    albedo: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.surface >= 0

    def geometry(self) -> ShadingGeometry:
        return ShadingGeometry(self.normals, self.light, self.view)


def _intersect_all(surfaces: Sequence[Surface], origins: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    best_t = np.full(directions.shape[:-1], np.inf)
    best_surface = np.full(directions.shape[:-1], -1, dtype=np.int64)
    best_primitive = np.full(directions.shape[:-1], -1, dtype=np.int64)
    for index, surface in enumerate(surfaces):
        t, primitive = surface.intersect(origins, directions)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_surface = np.where(closer, index, best_surface)
        best_primitive = np.where(closer, primitive, best_primitive)
    return best_t, best_surface, best_primitive


def trace(scene: Scene, camera: CameraModel, projector: ProjectorModel) -> SceneHits:
    """
    Cast one ray per camera pixel and resolve visibility from the projector.

    Returns
    -------
    SceneHits
        Geometry shared by every frame rendered with this rig.
    """
    origin, directions = camera.pixel_rays()
    shape = directions.shape[:-1]
    origins = np.broadcast_to(origin, directions.shape)
    t, surface, primitive = _intersect_all(scene.surfaces, origins, directions)
    hit = surface >= 0

    points = np.where(hit[..., None], origins + np.where(hit, t, 0.0)[..., None] * directions, 0.0)
    normals_world = np.zeros(shape + (3,))
    albedo = np.zeros(shape + (scene.channels,))
    for index, surf in enumerate(scene.surfaces):
        mask = surface == index
        if not np.any(mask):
            continue
        normals_world[mask] = surf.normals(points[mask], primitive[mask])
        for c in range(scene.channels):
            albedo[mask, c] = surf.albedo.sample(surf, points[mask], c)

    proj_center = projector.center
    to_light = proj_center - points
    light_dist = np.linalg.norm(to_light, axis=-1)
    light_world = normalize(to_light)
    view_world = normalize(origin - points)

    uv, z_proj = projector.project(points)
    lit = hit & (z_proj > 0) & projector.inside(uv)
    # Shadow rays towards the projector centre.
    if np.any(lit):
        shadow_origins = points[lit] + 1e-7 * light_world[lit]
        t_block, _, _ = _intersect_all(scene.surfaces, shadow_origins, light_world[lit])
        blocked = t_block < light_dist[lit] - 1e-6
        lit_idx = np.flatnonzero(lit.ravel())
        lit.ravel()[lit_idx[blocked]] = False

    rot = camera.pose.rotation
    depth = np.where(hit, camera.pose.apply(points)[..., 2], np.nan)
    logger.info("Traced %d/%d pixels hit, %d lit by the projector", int(hit.sum()), hit.size, int(lit.sum()))
    return SceneHits(
        surface=surface,
        depth=depth,
        points=points,
        normals=normals_world @ rot.T,
        light=light_world @ rot.T,
        view=view_world @ rot.T,
        projector_uv=np.where(hit[..., None], uv, np.nan),
        lit=lit,
        albedo=albedo,
    )


def surface_terms(hits: SceneHits, scene: Scene, channel: int = 0) -> ReflectionTerms:
    """Reflection terms (H, W) of every hit pixel under its surface's material; zero on background."""
    shape = hits.surface.shape
    channel = min(channel, hits.albedo.shape[-1] - 1)
    terms = {name: np.zeros(shape) for name in ("c_s", "c_d", "m12", "m13", "m21", "m31")}
    for index, surf in enumerate(scene.surfaces):
        mask = hits.surface == index
        if not np.any(mask):
            continue
        mat = surf.material.with_albedo(hits.albedo[mask, channel])
        geom = ShadingGeometry(hits.normals[mask], hits.light[mask], hits.view[mask])
        local = reflection_terms(mat, geom)
        for name in terms:
            terms[name][mask] = getattr(local, name)
    return ReflectionTerms(**terms)


def ambient_field(hits: SceneHits, ambient: Ambient, channel: int = 0) -> np.ndarray:
    """Reflected ambient Stokes field s_a (H, W, 4): ambient Stokes scaled by albedo and n.v shading."""
    shading = np.clip(np.sum(hits.normals * hits.view, axis=-1), 0.0, None)
    weight = np.where(hits.hit, hits.albedo[..., min(channel, hits.albedo.shape[-1] - 1)] * shading, 0.0)
    return weight[..., None] * ambient.stokes


def sample_projector(field_: np.ndarray, uv: np.ndarray, lit: np.ndarray, sampling: str = "nearest") -> np.ndarray:
    """
    Look up the thrown Stokes field (H_p, W_p, 4) at projector coordinates (H, W, 2).

    `nearest` picks the covering projector pixel; `bilinear` mixes the four surrounding
    pixel centres. Unlit pixels receive zero.
    """
    h_p, w_p = field_.shape[:2]
    u = np.where(lit, uv[..., 0], 0.0)
    v = np.where(lit, uv[..., 1], 0.0)
    if sampling == "nearest":
        col = np.clip(np.rint(u).astype(np.int64), 0, w_p - 1)
        row = np.clip(np.rint(v).astype(np.int64), 0, h_p - 1)
        out = field_[row, col]
    elif sampling == "bilinear":
        u = np.clip(u, 0.0, w_p - 1)
        v = np.clip(v, 0.0, h_p - 1)
        c0 = np.clip(np.floor(u).astype(np.int64), 0, max(w_p - 2, 0))
        r0 = np.clip(np.floor(v).astype(np.int64), 0, max(h_p - 2, 0))
        c1, r1 = np.minimum(c0 + 1, w_p - 1), np.minimum(r0 + 1, h_p - 1)
        fu, fv = (u - c0)[..., None], (v - r0)[..., None]
        out = (
            field_[r0, c0] * (1 - fu) * (1 - fv)
            + field_[r0, c1] * fu * (1 - fv)
            + field_[r1, c0] * (1 - fu) * fv
            + field_[r1, c1] * fu * fv
        )
    else:
        raise ValueError(f"unknown projector sampling {sampling!r}")
    return np.where(lit[..., None], out, 0.0)


def shade(
    hits: SceneHits,
    scene: Scene,
    projector: ProjectorModel,
    command: np.ndarray,
    sampling: str = "nearest",
    channel: int = 0,
    terms: Optional[ReflectionTerms] = None,
    ambient: Optional[np.ndarray] = None,
) -> PolarimetricImage:
    """
    Shade traced geometry under one projected command image.

    Parameters
    ----------
    hits : SceneHits
        Output of `trace` for the rig.
    scene : Scene
        The traced scene (materials and ambient).
    projector : ProjectorModel
        Projector whose LUT turns the command into a Stokes field.
    command : np.ndarray
        (H_p, W_p) command image.
    sampling : str
        Projector lookup, `nearest` or `bilinear`.
    channel : int
        Albedo channel.
    terms : ReflectionTerms, optional
        Precomputed `surface_terms` (reused across frames).
    ambient : np.ndarray, optional
        Per-pixel s_a field overriding the scene ambient.

    Returns
    -------
    PolarimetricImage
        Observed Stokes image; points shadowed from the projector carry ambient only.
    """
    if terms is None:
        terms = surface_terms(hits, scene, channel)
    s_a = ambient_field(hits, scene.ambient, channel) if ambient is None else ambient
    if s_a.shape != hits.points.shape[:-1] + (4,):
        raise DimensionMismatchError("ambient field", hits.points.shape[:-1] + (4,), s_a.shape)
    s_i = sample_projector(throw_stokes(projector, command), hits.projector_uv, hits.lit, sampling)
    return PolarimetricImage(terms.apply(s_i, s_a))


def render(
    scene: Scene,
    camera: CameraModel,
    projector: ProjectorModel,
    command: np.ndarray,
    sampling: str = "nearest",
    channel: int = 0,
) -> PolarimetricImage:
    """Render the polarimetric image of `scene` while the projector shows `command`."""
    hits = trace(scene, camera, projector)
    return shade(hits, scene, projector, command, sampling, channel)


@log_duration("render_frames")
def render_frames(
    scene: Scene,
    camera: CameraModel,
    projector: ProjectorModel,
    commands: Sequence[np.ndarray],
    samplings: Sequence[str],
    channel: int = 0,
    threads: int = 1,
    hits: Optional[SceneHits] = None,
) -> List[PolarimetricImage]:
    """Render a whole sequence of command images, tracing the scene once."""
    if len(commands) != len(samplings):
        raise DimensionMismatchError("sampling modes", (len(commands),), (len(samplings),))
    if hits is None:
        hits = trace(scene, camera, projector)
    terms = surface_terms(hits, scene, channel)
    s_a = ambient_field(hits, scene.ambient, channel)

    def _one(i: int) -> PolarimetricImage:
        return shade(hits, scene, projector, commands[i], samplings[i], channel, terms, s_a)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        frames = list(pool.map(_one, range(len(commands))))
    logger.info("Rendered %d frames at %dx%d", len(frames), camera.width, camera.height)
    return frames


# --------------------------------------------------------------------------- sensor


def mosaic_sample(img: PolarimetricImage, noise_sigma: float = 0.0, seed: Optional[int] = None) -> MosaicImage:
    """
    Sample a Stokes image with a division-of-focal-plane polarizer mosaic.

    Each Stokes pixel becomes one 2x2 tile of polarizer intensities. Gaussian noise with
    standard deviation `noise_sigma` times the frame's peak intensity is added and the
    result clipped at zero.
    """
    h, w = img.shape
    tiles = malus(img.stokes[:, :, None, None, :], MOSAIC_ANGLES[None, None])
    raw = tiles.transpose(0, 2, 1, 3).reshape(2 * h, 2 * w)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        scale = noise_sigma * float(raw.max()) if raw.size else 0.0
        raw = np.clip(raw + rng.normal(0.0, scale, raw.shape), 0.0, None)
    return MosaicImage(raw)


def demosaic(raw: MosaicImage) -> PolarimetricImage:
    """
    Recover (s0, s1, s2) per 2x2 tile by least squares; s3 is unobservable and set to 0.
    """
    data = np.asarray(raw.raw, dtype=float)
    if data.shape[0] % 2 or data.shape[1] % 2:
        raise DimensionMismatchError("mosaic frame (even size)", (data.shape[0] // 2 * 2, data.shape[1] // 2 * 2), data.shape)
    h, w = data.shape[0] // 2, data.shape[1] // 2
    tiles = data.reshape(h, 2, w, 2).transpose(0, 2, 1, 3).reshape(h, w, 4)
    angles = np.asarray(raw.angles, dtype=float).ravel()
    design = 0.5 * np.stack([np.ones(4), np.cos(2 * angles), np.sin(2 * angles)], axis=-1)
    linear = tiles @ np.linalg.pinv(design).T
    return PolarimetricImage(np.concatenate([linear, np.zeros((h, w, 1))], axis=-1), s3_observed=False)
