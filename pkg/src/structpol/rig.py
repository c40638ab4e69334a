"""
Rig configuration document.

One JSON file describes the camera, the polarization projector, the scene, the pattern
parameters, decoding thresholds, sensor noise, estimation settings and the seed. It is
validated with pydantic; unknown keys are rejected so that typos fail loudly.
"""

import logging
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from structpol import config as defaults
from structpol.codec import PatternSequence, make_patterns
from structpol.exceptions import ConfigError
from structpol.io import read_obj, read_pfm
from structpol.pbrdf import MaterialParams
from structpol.recon import DirectionalLight, EstimationConfig
from structpol.render import (
    Ambient,
    CameraModel,
    CheckerAlbedo,
    ConstantAlbedo,
    ImageAlbedo,
    Plane,
    Scene,
    Sphere,
    TriangleMesh,
)
from structpol.slm import ProjectorModel, calibrate_photometry
from structpol.utils import RigidTransform

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_schema(value: int) -> int:
    if value != defaults.SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {value}, expected {defaults.SCHEMA_VERSION}")
    return value


class DeviceConfig(_Strict):
    """Pinhole geometry. `rotvec` + `translation` (world-to-device) override `position`/`look_at`."""

    resolution: Tuple[int, int] = (256, 256)
    focal: float = Field(350.0, gt=0)
    principal_point: Optional[Tuple[float, float]] = None
    position: Vec3 = (0.0, 0.0, 0.0)
    look_at: Vec3 = (0.0, 0.0, 1.0)
    up: Vec3 = (0.0, -1.0, 0.0)
    rotvec: Optional[Vec3] = None
    translation: Optional[Vec3] = None

    @field_validator("resolution")
    @classmethod
    def _positive_resolution(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if min(value) < 1:
            raise ValueError("resolution must be positive")
        return value

    def intrinsics(self) -> np.ndarray:
        width, height = self.resolution
        cx, cy = self.principal_point if self.principal_point is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])

    def pose(self) -> RigidTransform:
        if self.rotvec is not None and self.translation is not None:
            return RigidTransform.from_rotvec(self.rotvec, self.translation)
        return RigidTransform.look_at(self.position, self.look_at, self.up)


class ProjectorConfig(DeviceConfig):
    position: Vec3 = (0.1, 0.0, 0.0)
    look_at: Vec3 = (0.1, 0.0, 1.0)
    source_aolp_deg: float = 0.0
    source_intensity: float = Field(defaults.SOURCE_INTENSITY, gt=0)
    twist_deg: float = Field(90.0, gt=0)
    dolp_mismatch: float = Field(0.0, ge=0, le=1)
    lut_interpolation: bool = True
    blur_sigma: float = Field(0.0, ge=0)


class MaterialConfig(_Strict):
    refractive_index: float = Field(1.5, gt=1)
    specular_albedo: float = Field(0.8, ge=0, le=1)
    roughness: float = Field(0.5, gt=0, le=1)
    shape: float = Field(2.0, gt=0)
    concentration: float = Field(1.0, ge=0)

    def build(self) -> MaterialParams:
        return MaterialParams(self.refractive_index, self.specular_albedo, self.roughness, self.shape, self.concentration)


class ConstantAlbedoConfig(_Strict):
    type: Literal["constant"] = "constant"
    values: List[Annotated[float, Field(ge=0, le=1)]] = [0.3]


class CheckerAlbedoConfig(_Strict):
    type: Literal["checker"]
    low: List[float] = [0.2]
    high: List[float] = [0.6]
    scale: float = Field(0.1, gt=0)


class ImageAlbedoConfig(_Strict):
    type: Literal["image"]
    path: str


AlbedoConfig = Annotated[Union[ConstantAlbedoConfig, CheckerAlbedoConfig, ImageAlbedoConfig], Field(discriminator="type")]


class SphereConfig(_Strict):
    type: Literal["sphere"]
    center: Vec3 = (0.0, 0.0, 1.0)
    radius: float = Field(0.25, gt=0)
    material: MaterialConfig = MaterialConfig()
    albedo: AlbedoConfig = ConstantAlbedoConfig()


class PlaneConfig(_Strict):
    type: Literal["plane"]
    origin: Vec3 = (0.0, 0.0, 1.5)
    normal: Vec3 = (0.0, 0.0, -1.0)
    u_axis: Vec3 = (1.0, 0.0, 0.0)
    half_extent: Optional[Tuple[float, float]] = None
    material: MaterialConfig = MaterialConfig()
    albedo: AlbedoConfig = ConstantAlbedoConfig()


class MeshConfig(_Strict):
    type: Literal["mesh"]
    path: str
    translation: Vec3 = (0.0, 0.0, 0.0)
    scale: float = Field(1.0, gt=0)
    material: MaterialConfig = MaterialConfig()
    albedo: AlbedoConfig = ConstantAlbedoConfig()


SurfaceConfig = Annotated[Union[SphereConfig, PlaneConfig, MeshConfig], Field(discriminator="type")]


class AmbientConfig(_Strict):
    intensity: float = Field(0.0, ge=0)
    dolp: float = Field(0.0, ge=0, le=1)
    aolp_deg: float = 0.0


class SceneConfig(_Strict):
    surfaces: List[SurfaceConfig] = []
    ambient: AmbientConfig = AmbientConfig()


class PatternConfig(_Strict):
    n_bits: int = Field(defaults.N_BITS, ge=1)
    n_phases: int = Field(defaults.N_PHASES, ge=3)
    period: float = Field(defaults.PERIOD, gt=0)
    n_sequences: int = Field(defaults.N_SHIFT_SEQUENCES, ge=1)
    extra_uniform: List[Annotated[float, Field(ge=0, le=defaults.PIXEL_MAX)]] = []


class DecodeConfig(_Strict):
    specular_threshold: float = Field(defaults.SPECULAR_THRESHOLD, ge=0)
    sequence_tolerance: float = Field(defaults.SEQUENCE_TOLERANCE, gt=0)
    discontinuity_threshold: float = Field(defaults.DISCONTINUITY_THRESHOLD, gt=0)


class NoiseConfig(_Strict):
    sigma: float = Field(0.0, ge=0)
    mosaic: bool = False


class EstimationSection(_Strict):
    lambda_dolp_init: float = Field(defaults.LAMBDA_DOLP_INIT, gt=0)
    lambda_dolp_joint: float = Field(defaults.LAMBDA_DOLP_JOINT, gt=0)
    lambda_stokes: float = Field(defaults.LAMBDA_STOKES_JOINT, gt=0)
    max_iterations: int = Field(defaults.MAX_ITERATIONS, ge=0)
    max_outer_iterations: int = Field(defaults.MAX_OUTER_ITERATIONS, ge=0)
    tolerance: float = Field(defaults.TOLERANCE, gt=0)
    pca_window: int = Field(defaults.PCA_WINDOW, ge=3)
    use_all_frames: bool = True


class CalibrationSection(_Strict):
    n_boards: int = Field(defaults.N_BOARDS, ge=1)
    distance: float = Field(1.0, gt=0)
    tilt_deg: float = Field(15.0, ge=0, lt=80)
    ground_truth: bool = False


class RigConfig(_Strict):
    """The whole rig document; `schema` must equal the supported version."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: int = Field(defaults.SCHEMA_VERSION, alias="schema")
    camera: DeviceConfig = DeviceConfig()
    projector: ProjectorConfig = ProjectorConfig()
    scene: SceneConfig = SceneConfig()
    pattern: PatternConfig = PatternConfig()
    decode: DecodeConfig = DecodeConfig()
    noise: NoiseConfig = NoiseConfig()
    estimation: EstimationSection = EstimationSection()
    calibration: CalibrationSection = CalibrationSection()
    channels: Literal[1, 3] = 1
    seed: int = 0

    @field_validator("schema_version")
    @classmethod
    def _supported_schema(cls, value: int) -> int:
        return _check_schema(value)


def load_rig(path: Path) -> RigConfig:
    """
    Parse and validate a rig JSON file.

    Raises
    ------
    ConfigError
        If the file is missing or fails validation.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"rig configuration not found: {path}")
    try:
        return RigConfig.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ConfigError(f"invalid rig configuration {path}:\n{exc}") from exc


def dump_rig(rig: RigConfig) -> str:
    return rig.model_dump_json(by_alias=True, indent=2)


def save_rig(rig: RigConfig, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_rig(rig), encoding="utf-8")


def build_camera(rig: RigConfig) -> CameraModel:
    cam = rig.camera
    return CameraModel(cam.intrinsics(), cam.pose(), tuple(cam.resolution))


def build_projector(rig: RigConfig) -> ProjectorModel:
    proj = rig.projector
    photometry = calibrate_photometry(
        np.radians(proj.source_aolp_deg), proj.source_intensity, np.radians(proj.twist_deg), proj.dolp_mismatch
    )
    return ProjectorModel(proj.intrinsics(), proj.pose(), tuple(proj.resolution), photometry, proj.lut_interpolation, proj.blur_sigma)


def build_sequence(rig: RigConfig, projector: ProjectorModel) -> PatternSequence:
    pat = rig.pattern
    return make_patterns(
        projector.width,
        projector.height,
        pat.n_bits,
        pat.n_phases,
        pat.period,
        projector.photometry,
        pat.n_sequences,
        tuple(pat.extra_uniform),
    )


def _albedo(cfg: AlbedoConfig, base_dir: Path) -> Union[ConstantAlbedo, CheckerAlbedo, ImageAlbedo]:
    if isinstance(cfg, CheckerAlbedoConfig):
        return CheckerAlbedo(tuple(cfg.low), tuple(cfg.high), cfg.scale)
    if isinstance(cfg, ImageAlbedoConfig):
        return ImageAlbedo(read_pfm(base_dir / cfg.path))
    return ConstantAlbedo(tuple(cfg.values))


def build_scene(rig: RigConfig, base_dir: Path = Path(".")) -> Scene:
    """Instantiate the scene; relative mesh and albedo paths resolve against `base_dir`."""
    base_dir = Path(base_dir)
    surfaces = []
    for cfg in rig.scene.surfaces:
        material, albedo = cfg.material.build(), _albedo(cfg.albedo, base_dir)
        if isinstance(cfg, SphereConfig):
            surfaces.append(Sphere(np.asarray(cfg.center, dtype=float), cfg.radius, material, albedo))
        elif isinstance(cfg, PlaneConfig):
            surfaces.append(Plane(np.asarray(cfg.origin), np.asarray(cfg.normal), np.asarray(cfg.u_axis), cfg.half_extent, material, albedo))
        else:
            vertices, faces = read_obj(base_dir / cfg.path)
            surfaces.append(TriangleMesh(vertices * cfg.scale + np.asarray(cfg.translation), faces, material, albedo))
    amb = rig.scene.ambient
    return Scene(surfaces, Ambient(amb.intensity, amb.dolp, np.radians(amb.aolp_deg)))


def estimation_config(rig: RigConfig) -> EstimationConfig:
    est = rig.estimation
    return EstimationConfig(
        lambda_dolp_init=est.lambda_dolp_init,
        lambda_dolp_joint=est.lambda_dolp_joint,
        lambda_stokes=est.lambda_stokes,
        max_iterations=est.max_iterations,
        max_outer_iterations=est.max_outer_iterations,
        tolerance=est.tolerance,
        pca_window=est.pca_window,
        use_all_frames=est.use_all_frames,
    )


def with_projector_geometry(rig: RigConfig, intrinsics: np.ndarray, pose: RigidTransform) -> RigConfig:
    """Copy of `rig` whose projector geometry is replaced by calibrated values."""
    projector = rig.projector.model_copy(
        update={
            "focal": float(intrinsics[0, 0]),
            "principal_point": (float(intrinsics[0, 2]), float(intrinsics[1, 2])),
            "rotvec": tuple(float(v) for v in pose.rotvec),
            "translation": tuple(float(v) for v in pose.translation),
        }
    )
    return rig.model_copy(update={"projector": projector})


def rig_from_manifest(doc: dict) -> RigConfig:
    """The rig embedded in an output manifest."""
    try:
        return RigConfig.model_validate(doc["rig"])
    except KeyError as exc:
        raise ConfigError("manifest does not embed a rig configuration") from exc
    except ValidationError as exc:
        raise ConfigError(f"embedded rig configuration is invalid:\n{exc}") from exc


class LightConfig(_Strict):
    direction: Vec3
    intensity: List[Annotated[float, Field(ge=0)]] = Field(default_factory=lambda: [1.0, 1.0, 1.0], min_length=1)


class LightsConfig(_Strict):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: int = Field(defaults.SCHEMA_VERSION, alias="schema")
    lights: List[LightConfig] = Field(min_length=1)

    @field_validator("schema_version")
    @classmethod
    def _supported_schema(cls, value: int) -> int:
        return _check_schema(value)


def load_lights(path: Path) -> List[DirectionalLight]:
    """Directional lights (camera frame) from a JSON document."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"lights file not found: {path}")
    try:
        doc = LightsConfig.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ConfigError(f"invalid lights file {path}:\n{exc}") from exc
    return [DirectionalLight(tuple(light.direction), tuple(light.intensity)) for light in doc.lights]
