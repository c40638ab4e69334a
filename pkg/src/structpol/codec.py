"""
Structured-polarization patterns: encoding and decoding.

Projector columns are encoded twice: a Gray code carries the period index and a phase
shift carries the position inside the period. Both live in the AoLP of the throw, not
in its intensity. Three Gray sequences with boundaries shifted by T/3 are decoded; the
positions agreeing with the sequence read farthest from its stripe edges are averaged, and
pixels without a majority are rejected.

Decoding relies on the perpendicular uniform pair: their average behaves like an
unpolarized projector, and subtracting it from a patterned capture cancels diffuse
reflection and ambient light, leaving only the specular echo of the pattern.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from structpol.config import (
    BIT_THRESHOLD,
    DISCONTINUITY_THRESHOLD,
    N_BITS,
    N_PHASES,
    N_SHIFT_SEQUENCES,
    PERIOD,
    PIXEL_MAX,
    SCHEMA_VERSION,
    SEQUENCE_TOLERANCE,
    SPECULAR_THRESHOLD,
)
from structpol.exceptions import DimensionMismatchError, FileFormatError, ManifestError, PatternParameterError
from structpol.io import read_manifest, read_pfm, write_json, write_pfm, write_pgm
from structpol.polcore import StokesVector, wrap_angle
from structpol.render import PolarimetricImage
from structpol.slm import ProjectorPhotometry, calibrate_photometry
from structpol.utils import log_duration

logger = logging.getLogger(__name__)

PATTERN_MANIFEST = "patterns.json"


@dataclass(frozen=True)
class FrameTag:
    """
    Role of one projected frame.

    `kind` is `gray`, `phase` or `uniform`; `bit` counts from the most significant bit.
    """

    kind: str
    bit: int = -1
    sequence: int = -1
    phase_index: int = -1
    value: float = -1.0

    @property
    def sampling(self) -> str:
        """Projector lookup the frame needs: smooth phase frames are interpolated."""
        return "bilinear" if self.kind == "phase" else "nearest"

    def to_json(self) -> Dict[str, Any]:
        return {"kind": self.kind, "bit": self.bit, "sequence": self.sequence, "phase_index": self.phase_index, "value": self.value}

    @classmethod
    def from_json(cls, doc: Dict[str, Any]) -> "FrameTag":
        return cls(doc["kind"], int(doc["bit"]), int(doc["sequence"]), int(doc["phase_index"]), float(doc["value"]))


@dataclass(frozen=True)
class PatternParams:
    n_bits: int = N_BITS
    n_phases: int = N_PHASES
    period: float = PERIOD
    n_sequences: int = N_SHIFT_SEQUENCES
    extra_uniform: Tuple[float, ...] = ()

    @property
    def shifts(self) -> np.ndarray:
        """Gray boundary shift of every sequence, in projector pixels."""
        return self.period * np.arange(self.n_sequences) / self.n_sequences

    @property
    def phase_offsets(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_phases) / self.n_phases

    @property
    def frame_count(self) -> int:
        return self.n_sequences * self.n_bits + self.n_phases + 2 + len(self.extra_uniform)

    def to_json(self) -> Dict[str, Any]:
        return {
            "n_bits": self.n_bits,
            "n_phases": self.n_phases,
            "period": self.period,
            "n_sequences": self.n_sequences,
            "extra_uniform": list(self.extra_uniform),
        }

    @classmethod
    def from_json(cls, doc: Dict[str, Any]) -> "PatternParams":
        return cls(
            int(doc["n_bits"]),
            int(doc["n_phases"]),
            float(doc["period"]),
            int(doc.get("n_sequences", N_SHIFT_SEQUENCES)),
            tuple(float(v) for v in doc.get("extra_uniform", ())),
        )


@dataclass(frozen=True, eq=False)
class PatternSequence:
    """
    Ordered command images with their tags.

    Frames are column-constant (H_p, W_p) float command images. Order: Gray bits of
    every sequence (most significant first), phase frames, uniform v=255, uniform v=0,
    then any extra uniform frames.
    """

    frames: List[np.ndarray]
    tags: List[FrameTag]
    params: PatternParams
    resolution: Tuple[int, int]
    photometry: ProjectorPhotometry

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def samplings(self) -> List[str]:
        return [tag.sampling for tag in self.tags]

    def indices(self, kind: str) -> List[int]:
        return [i for i, tag in enumerate(self.tags) if tag.kind == kind]

    def uniform_index(self, value: float) -> int:
        for i, tag in enumerate(self.tags):
            if tag.kind == "uniform" and tag.value == value:
                return i
        raise KeyError(f"no uniform frame at v={value}")

    def gray_index(self, sequence: int, bit: int) -> int:
        for i, tag in enumerate(self.tags):
            if tag.kind == "gray" and tag.sequence == sequence and tag.bit == bit:
                return i
        raise KeyError(f"no Gray frame for sequence {sequence}, bit {bit}")

    def column_profiles(self) -> np.ndarray:
        """(F, W_p) command of every frame along a projector row."""
        return np.stack([frame[0] for frame in self.frames])


def gray_encode(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    return values ^ (values >> 1)


def gray_decode(bits: np.ndarray) -> np.ndarray:
    """Integers from Gray-coded bit planes (n_bits, ...), most significant first."""
    binary = np.zeros(bits.shape[1:], dtype=np.int64)
    previous = np.zeros(bits.shape[1:], dtype=np.int64)
    for plane in bits.astype(np.int64):
        previous = previous ^ plane
        binary = (binary << 1) | previous
    return binary


def period_index(columns: np.ndarray, period: float, shift: float) -> np.ndarray:
    return np.floor((np.asarray(columns, dtype=float) + shift) / period).astype(np.int64)


def stripe_centre(codes: np.ndarray, period: float, shift: float) -> np.ndarray:
    """
    Centre of the integer projector columns carrying period index `codes`.

    Stripes start at non-integer columns once shifted, so the centre is taken over the
    columns `period_index` actually assigns to each code.
    """
    codes = np.asarray(codes, dtype=float)
    first = np.ceil(codes * period - shift)
    last = np.ceil((codes + 1.0) * period - shift) - 1.0
    return 0.5 * (first + last)


def make_patterns(
    width: int,
    height: int,
    n_bits: int = N_BITS,
    n_phases: int = N_PHASES,
    period: float = PERIOD,
    photometry: Optional[ProjectorPhotometry] = None,
    n_sequences: int = N_SHIFT_SEQUENCES,
    extra_uniform: Sequence[float] = (),
) -> PatternSequence:
    """
    Build the Gray-code plus phase-shift pattern sequence for a projector.

    Parameters
    ----------
    width, height : int
        Projector resolution.
    n_bits : int
        Gray bits per sequence; 2^n_bits must cover every period index.
    n_phases : int
        Phase frames K (at least 3).
    period : float
        Phase period T in projector columns.
    photometry : ProjectorPhotometry, optional
        LUT used to turn AoLP levels into commands (ideal TN cell if omitted).
    n_sequences : int
        Number of Gray sequences with shifted boundaries.
    extra_uniform : Sequence[float]
        Additional uniform command values appended at the end.

    Returns
    -------
    PatternSequence
        `3 * n_bits + K + 2` frames plus the extra uniform ones.

    Raises
    ------
    PatternParameterError
        If the geometry cannot be encoded.
    """
    if width < 1 or height < 1:
        raise PatternParameterError(f"projector resolution must be positive, got {width}x{height}")
    if n_bits < 1:
        raise PatternParameterError(f"need at least one Gray bit, got {n_bits}")
    if n_phases < 3:
        raise PatternParameterError(f"phase shifting needs at least 3 frames, got {n_phases}")
    if not period > 0:
        raise PatternParameterError(f"phase period must be positive, got {period}")
    if n_sequences < 1:
        raise PatternParameterError(f"need at least one Gray sequence, got {n_sequences}")
    if any(not 0 <= v <= PIXEL_MAX for v in extra_uniform):
        raise PatternParameterError(f"extra uniform values must lie in [0, {PIXEL_MAX}]")

    params = PatternParams(n_bits, n_phases, float(period), n_sequences, tuple(float(v) for v in extra_uniform))
    columns = np.arange(width)
    top_code = int(period_index(width - 1, period, params.shifts[-1]))
    if top_code >= 2**n_bits:
        raise PatternParameterError(
            f"{n_bits} Gray bits encode {2 ** n_bits} periods but {width} columns at period {period} need {top_code + 1}"
        )
    photometry = photometry if photometry is not None else calibrate_photometry()

    def column_frame(profile: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(profile, dtype=float), (height, width)).copy()

    frames: List[np.ndarray] = []
    tags: List[FrameTag] = []
    for s, shift in enumerate(params.shifts):
        code = gray_encode(period_index(columns, period, shift))
        for b in range(n_bits):
            bit = (code >> (n_bits - 1 - b)) & 1
            # Bit 1 is the 90 degree state (v=0), bit 0 the unrotated state (v=255).
            frames.append(column_frame(np.where(bit == 1, 0.0, float(PIXEL_MAX))))
            tags.append(FrameTag("gray", bit=b, sequence=s))

    for k, offset in enumerate(params.phase_offsets):
        level = 0.25 * np.pi * (1.0 + np.cos(2.0 * np.pi * columns / period + offset))
        frames.append(column_frame(photometry.command_for_level(level)))
        tags.append(FrameTag("phase", phase_index=k))

    for value in (float(PIXEL_MAX), 0.0) + params.extra_uniform:
        frames.append(column_frame(np.full(width, value)))
        tags.append(FrameTag("uniform", value=value))

    logger.info("Built %d pattern frames for a %dx%d projector", len(frames), width, height)
    return PatternSequence(frames, tags, params, (width, height), photometry)


def save_patterns(seq: PatternSequence, directory: Path) -> List[Path]:
    """Write every frame as a 16-bit PGM plus a JSON manifest that regenerates the sequence."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, frame in enumerate(seq.frames):
        path = directory / f"pattern_{index:03d}.pgm"
        write_pgm(path, frame)
        paths.append(path)
    write_json(
        directory / PATTERN_MANIFEST,
        {
            "schema": SCHEMA_VERSION,
            "resolution": list(seq.resolution),
            "params": seq.params.to_json(),
            "frames": [dict(tag.to_json(), file=p.name) for tag, p in zip(seq.tags, paths)],
            "photometry": seq.photometry.to_json(),
        },
    )
    return paths


def load_patterns(directory: Path) -> PatternSequence:
    """Rebuild a sequence from its manifest."""
    doc = read_manifest(Path(directory) / PATTERN_MANIFEST)
    try:
        params = PatternParams.from_json(doc["params"])
        width, height = doc["resolution"]
        photometry = ProjectorPhotometry.from_json(doc["photometry"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"pattern manifest in {directory} is incomplete: {exc}") from exc
    return make_patterns(
        int(width), int(height), params.n_bits, params.n_phases, params.period, photometry, params.n_sequences, params.extra_uniform
    )


# --------------------------------------------------------------------------- extraction


def synthesize_unpolarized(img0: PolarimetricImage, img90: PolarimetricImage) -> PolarimetricImage:
    """
    Emulate an unpolarized projector by averaging the perpendicular uniform captures.

    Raises
    ------
    DimensionMismatchError
        If the two images differ in size.
    """
    if img0.stokes.shape != img90.stokes.shape:
        raise DimensionMismatchError("uniform pair", img0.stokes.shape, img90.stokes.shape)
    return PolarimetricImage(0.5 * (img0.stokes + img90.stokes), img0.s3_observed and img90.s3_observed)


@dataclass(frozen=True)
class AolpExtraction:
    """Incident AoLP recovered at one pixel, with the specular strength c_s s_i^0 behind it."""

    aolp: float
    specular: float
    valid: bool


def extract_aolp_array(
    s_o: np.ndarray,
    s_hat: np.ndarray,
    projector_dolp: np.ndarray = 1.0,
    threshold: float = SPECULAR_THRESHOLD,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorized incident-AoLP extraction.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, np.ndarray]
        AoLP in [0, pi), specular strength and validity, each shaped like `s_o[..., 0]`.
    """
    s_o = np.asarray(s_o, dtype=float)
    diff = s_o - np.asarray(s_hat, dtype=float)
    magnitude = np.hypot(diff[..., 1], diff[..., 2])
    # Specular reflection mirrors s2, so the incident angle is the reflected one negated.
    aolp = wrap_angle(0.5 * np.arctan2(-diff[..., 2], diff[..., 1]))
    rho = np.asarray(projector_dolp, dtype=float)
    specular = np.divide(magnitude, rho, out=np.zeros_like(magnitude), where=np.broadcast_to(rho, magnitude.shape) > 0)
    valid = (s_o[..., 0] > 0) & (magnitude >= threshold * s_o[..., 0]) & (magnitude > 0)
    return aolp, specular, valid


def extract_aolp(s_o: StokesVector, s_hat: StokesVector, projector_dolp: float = 1.0, threshold: float = SPECULAR_THRESHOLD) -> AolpExtraction:
    """
    Incident pattern AoLP at one pixel.

    The synthesized unpolarized observation is subtracted from the patterned one; what
    remains is the specular reflection of the pattern alone.
    """
    aolp, specular, valid = extract_aolp_array(s_o.as_array(), s_hat.as_array(), projector_dolp, threshold)
    return AolpExtraction(float(aolp), float(specular), bool(valid))


# --------------------------------------------------------------------------- decoding


@dataclass(frozen=True, eq=False)
class CorrespondenceMap:
    """
    Projector column per camera pixel.

    Attributes
    ----------
    column : np.ndarray
        (H, W) sub-pixel projector column; NaN where invalid.
    valid : np.ndarray
        (H, W) validity mask.
    projector_width : int
        W_p; valid columns lie in [0, W_p).
    """

    column: np.ndarray
    valid: np.ndarray
    projector_width: int

    def __post_init__(self) -> None:
        valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.column)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "column", np.where(valid, self.column, np.nan))

    @classmethod
    def empty(cls, shape: Tuple[int, int], projector_width: int) -> "CorrespondenceMap":
        return cls(np.full(shape, np.nan), np.zeros(shape, dtype=bool), projector_width)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.column.shape

    @property
    def count(self) -> int:
        return int(self.valid.sum())


def save_correspondence(cmap: CorrespondenceMap, path: Path) -> None:
    """
    Write a map as a three-plane PFM: column (-1 where invalid), validity, and an unused zero plane.
    """
    planes = [np.where(cmap.valid, cmap.column, -1.0), cmap.valid.astype(float), np.zeros(cmap.shape)]
    write_pfm(path, np.stack(planes, axis=-1))


def load_correspondence(path: Path, projector_width: int) -> CorrespondenceMap:
    data = read_pfm(path)
    if data.ndim != 3:
        raise FileFormatError(f"{path} is not a correspondence map")
    return CorrespondenceMap(data[..., 0], data[..., 1] > 0.5, projector_width)


def decode_phase(levels: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """
    Phase theta in [0, 2 pi) of samples 45deg (1 + cos(theta + offset_k)) along axis 0.

    Least-squares fit of a + b cos(offset) - c sin(offset), so any K >= 3 works.
    """
    design = np.stack([np.ones_like(offsets), np.cos(offsets), -np.sin(offsets)], axis=-1)
    coeffs = np.tensordot(np.linalg.pinv(design), np.asarray(levels, dtype=float), axes=(1, 0))
    return np.mod(np.arctan2(coeffs[2], coeffs[1]), 2.0 * np.pi)


@log_duration("decode")
def decode(
    seq: PatternSequence,
    captures: Sequence[PolarimetricImage],
    specular_threshold: float = SPECULAR_THRESHOLD,
    sequence_tolerance: float = SEQUENCE_TOLERANCE,
) -> CorrespondenceMap:
    """
    Recover the projector column seen by every camera pixel.

    Parameters
    ----------
    seq : PatternSequence
        The projected sequence.
    captures : Sequence[PolarimetricImage]
        One capture per frame, in frame order.
    specular_threshold : float
        Relative specular floor below which a frame's extraction fails.
    sequence_tolerance : float
        Largest distance (projector px) at which a shifted sequence still agrees with the
        most reliable one. A majority of the sequences must agree.

    Returns
    -------
    CorrespondenceMap
        Sub-pixel columns; pixels where extraction failed or no majority of sequences agrees are invalid.

    Raises
    ------
    DimensionMismatchError
        If the number or size of captures does not match the sequence.
    """
    if len(captures) != len(seq):
        raise DimensionMismatchError("captures per pattern frame", (len(seq),), (len(captures),))
    shape = captures[0].shape
    for capture in captures:
        if capture.shape != shape:
            raise DimensionMismatchError("capture", shape, capture.shape)

    params, lut = seq.params, seq.photometry
    s_hat = synthesize_unpolarized(captures[seq.uniform_index(0.0)], captures[seq.uniform_index(float(PIXEL_MAX))]).stokes

    coded = seq.indices("gray") + seq.indices("phase")
    valid = np.ones(shape, dtype=bool)
    levels = {}
    for index in coded:
        aolp, _, ok = extract_aolp_array(captures[index].stokes, s_hat, 1.0, specular_threshold)
        levels[index] = lut.level_of_aolp(aolp)
        valid &= ok

    theta = decode_phase(np.stack([levels[i] for i in seq.indices("phase")]), params.phase_offsets)
    fraction = theta * params.period / (2.0 * np.pi)

    positions, offsets = [], []
    for s, shift in enumerate(params.shifts):
        bits = np.stack([levels[seq.gray_index(s, b)] > BIT_THRESHOLD for b in range(params.n_bits)])
        centre = stripe_centre(gray_decode(bits), params.period, shift)
        wraps = np.round((centre - fraction) / params.period)
        position = fraction + wraps * params.period
        positions.append(position)
        offsets.append(np.abs(position - centre))
    positions, offsets = np.stack(positions), np.stack(offsets)

    # The sequence whose stripe edge lies farthest from the pixel sets the period;
    # a sequence read across its own edge is a whole period off and gets outvoted.
    best = np.argmin(offsets, axis=0)[None]
    reference = np.take_along_axis(positions, best, axis=0)[0]
    agree = np.abs(positions - reference) <= sequence_tolerance
    votes = agree.sum(axis=0)
    column = (positions * agree).sum(axis=0) / np.maximum(votes, 1)
    valid &= votes >= (len(params.shifts) + 1) // 2
    valid &= (column >= 0) & (column < seq.resolution[0])

    result = CorrespondenceMap(column, valid, seq.resolution[0])
    logger.info("Decoded %d of %d camera pixels", result.count, valid.size)
    return result


def filter_discontinuities(cmap: CorrespondenceMap, threshold: float = DISCONTINUITY_THRESHOLD) -> CorrespondenceMap:
    """
    Invalidate pixels whose column jumps by more than `threshold` against two or more
    of their 4-neighbours. Invalid neighbours never count as jumps.
    """
    padded = np.pad(cmap.column, 1, constant_values=np.nan)
    centre = padded[1:-1, 1:-1]
    jumps = np.zeros(cmap.shape, dtype=int)
    with np.errstate(invalid="ignore"):
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            neighbour = padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
            jumps += (np.abs(centre - neighbour) > threshold).astype(int)
    keep = cmap.valid & (jumps < 2)
    removed = int(cmap.valid.sum() - keep.sum())
    if removed:
        logger.info("Discontinuity filter removed %d pixels", removed)
    return CorrespondenceMap(cmap.column, keep, cmap.projector_width)


@dataclass(frozen=True, eq=False)
class IncidentField:
    """Incident Stokes vectors (F, ..., 4) at decoded columns, and where each sample can be trusted."""

    stokes: np.ndarray
    usable: np.ndarray


def incident_stokes(seq: PatternSequence, column: np.ndarray, source_intensity: Optional[float] = None) -> IncidentField:
    """
    Stokes vector each frame throws onto the given projector columns.

    Patterns are column-constant, so a decoded column fixes the incident light of every
    frame. Phase frames are interpolated between columns; stepped frames take the
    nearest column, and samples within a pixel of a step are marked unusable.
    """
    column = np.asarray(column, dtype=float)
    width = seq.resolution[0]
    finite = np.isfinite(column)
    u = np.clip(np.where(finite, column, 0.0), 0.0, width - 1)
    lo = np.floor(u).astype(np.int64)
    hi = np.minimum(lo + 1, width - 1)
    nearest = np.clip(np.rint(u).astype(np.int64), 0, width - 1)
    weight = u - lo

    profiles = seq.column_profiles()
    intensity = seq.photometry.source_intensity if source_intensity is None else source_intensity
    stokes, usable = [], []
    for profile, tag in zip(profiles, seq.tags):
        lut = seq.photometry.normalized_stokes(profile)
        if tag.sampling == "bilinear":
            sample = lut[lo] * (1.0 - weight[..., None]) + lut[hi] * weight[..., None]
            ok = finite
        else:
            sample = lut[nearest]
            ok = finite & (profile[lo] == profile[hi])
        stokes.append(sample * intensity)
        usable.append(ok)
    return IncidentField(np.stack(stokes), np.stack(usable))
