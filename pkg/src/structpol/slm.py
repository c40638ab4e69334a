"""
Twisted-nematic SLM model and the polarization projector built from it.

The projector is a polarized source followed by a TN liquid-crystal SLM without an
analyzer: each pixel rotates the AoLP of the throw while its intensity stays fixed.
The photometric LUT records, for every command value, the polarization state that
leaves the SLM; the encoder and decoder only ever talk to the LUT.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from structpol.config import PIXEL_MAX, SOURCE_AOLP, SOURCE_INTENSITY, TWIST_ANGLE
from structpol.exceptions import DimensionMismatchError, PixelValueError
from structpol.polcore import JonesMatrix, jones_to_stokes_array, rotator_jones, stokes_aolp, stokes_dolp, wrap_angle
from structpol.utils import PinholeMixin, RigidTransform

logger = logging.getLogger(__name__)

N_LEVELS = PIXEL_MAX + 1


@dataclass(frozen=True)
class TnlcParams:
    """
    TN liquid-crystal cell state.

    Attributes
    ----------
    birefringence : float
        Voltage-dependent birefringence beta_b (radians), in [0, sqrt(3) * twist].
    twist : float
        Twist angle of the alignment layers (radians).
    """

    birefringence: float
    twist: float = TWIST_ANGLE

    def __post_init__(self) -> None:
        upper = np.sqrt(3.0) * self.twist
        if not 0.0 <= self.birefringence <= upper * (1.0 + 1e-12):
            raise ValueError(f"birefringence {self.birefringence} outside the controllable range [0, {upper}]")

    @property
    def gamma(self) -> float:
        return float(np.hypot(self.twist, self.birefringence))

    @property
    def amplitude(self) -> float:
        """Magnitude A of the elliptical term."""
        g, a, b = self.gamma, self.twist, self.birefringence
        return float(np.sqrt((g - a) ** 2 * np.cos(g) ** 2 + b**2 * np.sin(g) ** 2) / g)

    @property
    def phase(self) -> float:
        """Phase B of the elliptical term (quadrant-correct arctangent)."""
        g, a, b = self.gamma, self.twist, self.birefringence
        return float(np.arctan2(b * np.sin(g), (g - a) * np.cos(g)))


def tnlc_jones_array(birefringence: np.ndarray, twist: float = TWIST_ANGLE) -> np.ndarray:
    """Stack of TN-LC Jones matrices (..., 2, 2) for an array of birefringence values."""
    b = np.asarray(birefringence, dtype=float)
    g = np.hypot(twist, b)
    sin_g, cos_g = np.sin(g), np.cos(g)
    cell = np.empty(b.shape + (2, 2), dtype=complex)
    cell[..., 0, 0] = cos_g - 1j * (b / g) * sin_g
    cell[..., 0, 1] = (twist / g) * sin_g
    cell[..., 1, 0] = -(twist / g) * sin_g
    cell[..., 1, 1] = cos_g + 1j * (b / g) * sin_g
    # J_R(-twist) in the frame-rotation convention rotates the field by +twist.
    return rotator_jones(twist) @ cell


def tnlc_jones(p: TnlcParams) -> JonesMatrix:
    """Jones matrix of the TN cell: J_R(-alpha) times the helical propagation matrix."""
    return JonesMatrix(tnlc_jones_array(np.asarray(p.birefringence), p.twist))


def tnlc_jones_decomposed(p: TnlcParams) -> JonesMatrix:
    """
    The same cell written as rotation plus elliptical term.

    (alpha / gamma) J_R(gamma - alpha) + J_R(-alpha) A diag(e^{-iB}, e^{iB}); the first
    term is the voltage-controlled rotation, the second the elliptical residue.
    """
    rotation = (p.twist / p.gamma) * rotator_jones(p.twist - p.gamma)
    elliptical = rotator_jones(p.twist) @ (p.amplitude * np.diag([np.exp(-1j * p.phase), np.exp(1j * p.phase)]))
    return JonesMatrix(rotation + elliptical)


def pixel_value_to_beta(v: Union[float, np.ndarray], twist: float = TWIST_ANGLE) -> Union[float, np.ndarray]:
    """
    Birefringence produced by an SLM command value.

    Linear and decreasing: v=255 drives the cell to beta_b=0 (no rotation), v=0 leaves
    it at sqrt(3) * twist (a full twist-angle rotation).

    Raises
    ------
    PixelValueError
        If any value lies outside [0, 255].
    """
    arr = np.asarray(v, dtype=float)
    bad = (arr < 0) | (arr > PIXEL_MAX) | ~np.isfinite(arr)
    if np.any(bad):
        raise PixelValueError(float(arr[bad].flat[0]))
    beta = np.sqrt(3.0) * twist * (1.0 - arr / PIXEL_MAX)
    return float(beta) if np.ndim(v) == 0 else beta


@dataclass(frozen=True, eq=False)
class ProjectorPhotometry:
    """
    Photometric LUT of the polarization projector.

    Attributes
    ----------
    dolp : np.ndarray
        DoLP of the throw for each command value 0..255.
    rotation : np.ndarray
        AoLP rotation relative to the source (radians), unwrapped so it is continuous in v
        and anchored near 0 at v=255.
    circular : np.ndarray
        Normalized circular component s3/s0 for each command value.
    source_aolp : float
        AoLP of the source polarizer (radians).
    source_intensity : float
        s0 of every throw pixel.
    """

    dolp: np.ndarray
    rotation: np.ndarray
    circular: np.ndarray = field(default_factory=lambda: np.zeros(N_LEVELS))
    source_aolp: float = SOURCE_AOLP
    source_intensity: float = SOURCE_INTENSITY

    @property
    def values(self) -> np.ndarray:
        return np.arange(N_LEVELS, dtype=float)

    @property
    def aolp(self) -> np.ndarray:
        """Absolute AoLP of the throw for each command value, in [0, pi)."""
        return wrap_angle(self.source_aolp + self.rotation)

    @property
    def rotation_span(self) -> float:
        return float(np.ptp(self.rotation))

    @property
    def _level_sign(self) -> float:
        return 1.0 if self.rotation[0] >= self.rotation[-1] else -1.0

    @property
    def level(self) -> np.ndarray:
        """Pattern level per command value: rotation magnitude away from the v=255 state (0 .. ~pi/2)."""
        return self._level_sign * (self.rotation - self.rotation[-1])

    @property
    def max_level(self) -> float:
        return float(np.max(self.level))

    def level_of_aolp(self, aolp: np.ndarray) -> np.ndarray:
        """
        Convert an AoLP (radians) carried by the throw into a pattern level.

        Levels live in [-pi/4, 3pi/4) so that both ends of the usable [0, pi/2] range
        survive small perturbations without wrapping.
        """
        reference = self.source_aolp + self.rotation[-1]
        x = self._level_sign * (np.asarray(aolp, dtype=float) - reference)
        return np.mod(x + np.pi / 4, np.pi) - np.pi / 4

    def command_for_level(self, level: np.ndarray) -> np.ndarray:
        """Inverse LUT: continuous command value producing each requested level."""
        xp = np.maximum.accumulate(self.level[::-1])
        fp = self.values[::-1]
        return np.interp(np.clip(level, 0.0, xp[-1]), xp, fp)

    def normalized_stokes(self, command: np.ndarray, interpolate: bool = True) -> np.ndarray:
        """
        Stokes vectors (..., 4) with s0=1 for an array of command values.

        With `interpolate` the LUT entries are mixed linearly between neighbouring
        integer commands; otherwise the command is rounded to the nearest entry.
        """
        command = np.asarray(command, dtype=float)
        if not interpolate:
            command = np.rint(command)
        aolp = self.aolp
        table = np.stack(
            [
                np.ones(N_LEVELS),
                self.dolp * np.cos(2.0 * aolp),
                self.dolp * np.sin(2.0 * aolp),
                self.circular,
            ],
            axis=-1,
        )
        flat = command.ravel()
        out = np.stack([np.interp(flat, self.values, table[:, c]) for c in range(4)], axis=-1)
        return out.reshape(command.shape + (4,))

    def to_json(self) -> Dict[str, Any]:
        aolp = self.aolp
        return {
            "source_aolp_deg": float(np.degrees(self.source_aolp)),
            "source_intensity": float(self.source_intensity),
            "entries": [
                {
                    "v": int(v),
                    "dolp": float(self.dolp[v]),
                    "aolp_deg": float(np.degrees(aolp[v])),
                    "rotation_deg": float(np.degrees(self.rotation[v])),
                    "circular": float(self.circular[v]),
                }
                for v in range(N_LEVELS)
            ],
        }

    @classmethod
    def from_json(cls, doc: Dict[str, Any]) -> "ProjectorPhotometry":
        entries = sorted(doc["entries"], key=lambda e: e["v"])
        if len(entries) != N_LEVELS:
            raise ValueError(f"photometry LUT needs {N_LEVELS} entries, got {len(entries)}")
        source = np.radians(doc.get("source_aolp_deg", 0.0))
        dolp = np.array([e["dolp"] for e in entries], dtype=float)
        circular = np.array([e.get("circular", 0.0) for e in entries], dtype=float)
        if all("rotation_deg" in e for e in entries):
            rotation = np.radians([e["rotation_deg"] for e in entries])
        else:
            rotation = _unwrap_rotation(np.radians([e["aolp_deg"] for e in entries]) - source)
        return cls(dolp, rotation, circular, float(source), float(doc.get("source_intensity", SOURCE_INTENSITY)))

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "ProjectorPhotometry":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _unwrap_rotation(raw: np.ndarray) -> np.ndarray:
    """Unwrap AoLP differences (period pi) starting from v=255 and anchor that end in (-pi/2, pi/2]."""
    unwrapped = np.unwrap(np.asarray(raw, dtype=float)[::-1], period=np.pi)
    unwrapped -= np.pi * np.round(unwrapped[0] / np.pi)
    return unwrapped[::-1]


def calibrate_photometry(
    source_aolp: float = SOURCE_AOLP,
    source_intensity: float = SOURCE_INTENSITY,
    twist: float = TWIST_ANGLE,
    dolp_mismatch: float = 0.0,
) -> ProjectorPhotometry:
    """
    Measure the projector throw for every uniform command value.

    Each command v drives the TN cell; the polarized source field is propagated through
    it and the resulting DoLP, AoLP rotation and circular component are recorded.

    Parameters
    ----------
    source_aolp : float
        Orientation of the source polarizer (radians); 0 is horizontal.
    source_intensity : float
        s0 of the source.
    twist : float
        TN twist angle.
    dolp_mismatch : float
        Relative DoLP loss ramped in towards v=0 (0 disables), to emulate the slightly
        different DoLP of the perpendicular uniform pair on real hardware.

    Returns
    -------
    ProjectorPhotometry
        The 256-entry LUT.
    """
    values = np.arange(N_LEVELS, dtype=float)
    cells = tnlc_jones_array(pixel_value_to_beta(values, twist), twist)
    source = np.array([np.cos(source_aolp), np.sin(source_aolp)], dtype=complex)
    stokes = jones_to_stokes_array(cells @ source)

    dolp = stokes_dolp(stokes)
    circular = stokes[:, 3] / stokes[:, 0]
    if dolp_mismatch:
        loss = 1.0 - dolp_mismatch * (PIXEL_MAX - values) / PIXEL_MAX
        dolp = dolp * loss
        circular = circular * loss
    rotation = _unwrap_rotation(stokes_aolp(stokes) - source_aolp)

    photometry = ProjectorPhotometry(dolp, rotation, circular, float(source_aolp), float(source_intensity))
    logger.info(
        "Calibrated projector photometry: rotation span %.2f deg, DoLP range [%.3f, %.3f]",
        np.degrees(photometry.rotation_span),
        dolp.min(),
        dolp.max(),
    )
    return photometry


@dataclass(frozen=True, eq=False)
class ProjectorModel(PinholeMixin):
    """
    Polarization projector: pinhole geometry plus photometric LUT.

    Attributes
    ----------
    intrinsics : np.ndarray
        3x3 intrinsic matrix (pixels).
    pose : RigidTransform
        World-to-projector transform.
    resolution : Tuple[int, int]
        (W_p, H_p).
    photometry : ProjectorPhotometry
        Calibrated LUT.
    lut_interpolation : bool
        Mix neighbouring LUT entries for fractional commands.
    blur_sigma : float
        Optional Gaussian PSF (projector pixels) applied to the thrown Stokes field.
    """

    intrinsics: np.ndarray
    pose: RigidTransform
    resolution: Tuple[int, int]
    photometry: ProjectorPhotometry = field(default_factory=calibrate_photometry)
    lut_interpolation: bool = True
    blur_sigma: float = 0.0

    def __post_init__(self) -> None:
        self._validate_pinhole()


def throw_stokes(proj: ProjectorModel, command: np.ndarray) -> np.ndarray:
    """
    Per-pixel Stokes field (H_p, W_p, 4) thrown for a command image.

    s0 equals the source intensity everywhere: the SLM only rotates polarization, so the
    pattern is invisible to an intensity camera.

    Raises
    ------
    DimensionMismatchError
        If the command image does not match the projector resolution.
    PixelValueError
        If a command lies outside [0, 255].
    """
    command = np.asarray(command, dtype=float)
    width, height = proj.resolution
    if command.shape != (height, width):
        raise DimensionMismatchError("command image", (height, width), command.shape)
    bad = (command < 0) | (command > PIXEL_MAX) | ~np.isfinite(command)
    if np.any(bad):
        raise PixelValueError(float(command[bad].flat[0]))

    field_ = proj.photometry.normalized_stokes(command, proj.lut_interpolation)
    if proj.blur_sigma > 0:
        for c in range(1, 4):
            field_[..., c] = gaussian_filter(field_[..., c], proj.blur_sigma, mode="nearest")
    return field_ * proj.photometry.source_intensity
