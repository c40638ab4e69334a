"""
Polarization algebra: Stokes, Mueller and Jones representations.

Every function here accepts either a single vector/matrix or a stack of them
(leading axes broadcast), so the renderer and decoder can evaluate whole images
at once. The typed value classes wrap a single element for scalar use.

Conventions
-----------
Angles are measured from the horizontal axis of the local (camera or projector)
frame. AoLP is reported in [0, pi). A Jones vector (ex, ey) maps to the Stokes
vector [|ex|^2 + |ey|^2, |ex|^2 - |ey|^2, 2 Re(ex ey*), -2 Im(ex ey*)].
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from structpol.config import DEGENERATE_DOLP, PHYSICAL_EPS
from structpol.exceptions import InvalidStokesError

ArrayLike = Union[np.ndarray, float]

# Stokes vector from the coherency vector e (x) conj(e) = [ex ex*, ex ey*, ey ex*, ey ey*].
_COHERENCY_TO_STOKES = np.array(
    [
        [1, 0, 0, 1],
        [1, 0, 0, -1],
        [0, 1, 1, 0],
        [0, 1j, -1j, 0],
    ],
    dtype=complex,
)
_STOKES_TO_COHERENCY = np.linalg.inv(_COHERENCY_TO_STOKES)


@dataclass(frozen=True)
class StokesVector:
    """Stokes vector of partially polarized light, in linear radiometric units."""

    s0: float
    s1: float
    s2: float
    s3: float = 0.0

    @classmethod
    def from_array(cls, a: np.ndarray) -> "StokesVector":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def from_polarization(cls, mean_intensity: float, dolp: float, aolp: float, s3: float = 0.0) -> "StokesVector":
        """Build [2I, 2I rho cos 2phi, 2I rho sin 2phi, s3] from mean intensity, DoLP and AoLP."""
        return cls(
            2.0 * mean_intensity,
            2.0 * mean_intensity * dolp * np.cos(2.0 * aolp),
            2.0 * mean_intensity * dolp * np.sin(2.0 * aolp),
            s3,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s1, self.s2, self.s3], dtype=float)

    def is_realizable(self, eps: float = PHYSICAL_EPS) -> bool:
        return bool(is_realizable(self.as_array(), eps))


@dataclass(frozen=True, eq=False)
class MuellerMatrix:
    """4x4 real matrix acting on Stokes vectors."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"Mueller matrix must be 4x4, got {m.shape}")
        object.__setattr__(self, "m", m)

    def __matmul__(self, other: "MuellerMatrix") -> "MuellerMatrix":
        return MuellerMatrix(self.m @ other.m)

    def __add__(self, other: "MuellerMatrix") -> "MuellerMatrix":
        return MuellerMatrix(self.m + other.m)


@dataclass(frozen=True)
class JonesVector:
    """Complex field amplitudes of fully polarized light."""

    ex: complex
    ey: complex

    def as_array(self) -> np.ndarray:
        return np.array([self.ex, self.ey], dtype=complex)

    @property
    def intensity(self) -> float:
        return float(abs(self.ex) ** 2 + abs(self.ey) ** 2)


@dataclass(frozen=True, eq=False)
class JonesMatrix:
    """2x2 complex matrix acting on Jones vectors."""

    j: np.ndarray

    def __post_init__(self) -> None:
        j = np.asarray(self.j, dtype=complex)
        if j.shape != (2, 2):
            raise ValueError(f"Jones matrix must be 2x2, got {j.shape}")
        object.__setattr__(self, "j", j)

    def __matmul__(self, other: Union["JonesMatrix", JonesVector]) -> Union["JonesMatrix", JonesVector]:
        if isinstance(other, JonesVector):
            ex, ey = self.j @ other.as_array()
            return JonesVector(complex(ex), complex(ey))
        return JonesMatrix(self.j @ other.j)


@dataclass(frozen=True)
class PolState:
    """Degree and angle of linear polarization."""

    dolp: float
    aolp: float
    degenerate: bool = False


def wrap_angle(angle: ArrayLike, period: float = np.pi) -> np.ndarray:
    """Map angles into [0, period)."""
    wrapped = np.mod(angle, period)
    return np.where(wrapped >= period, wrapped - period, wrapped)


def stokes_dolp(s: np.ndarray) -> np.ndarray:
    """DoLP of a stack of Stokes vectors; 0 where s0 <= 0."""
    s = np.asarray(s, dtype=float)
    linear = np.hypot(s[..., 1], s[..., 2])
    return np.divide(linear, s[..., 0], out=np.zeros_like(linear), where=s[..., 0] > 0)


def stokes_aolp(s: np.ndarray) -> np.ndarray:
    """AoLP of a stack of Stokes vectors, in [0, pi)."""
    s = np.asarray(s, dtype=float)
    return wrap_angle(0.5 * np.arctan2(s[..., 2], s[..., 1]))


def is_realizable(s: np.ndarray, eps: float = PHYSICAL_EPS) -> np.ndarray:
    """True where s0 >= |(s1, s2, s3)| - eps * max(1, s0) and s0 >= -eps."""
    s = np.asarray(s, dtype=float)
    polarized = np.linalg.norm(s[..., 1:], axis=-1)
    slack = eps * np.maximum(1.0, np.abs(s[..., 0]))
    return (s[..., 0] >= -slack) & (s[..., 0] >= polarized - slack)


def dolp_aolp(s: StokesVector, degenerate_threshold: float = DEGENERATE_DOLP) -> PolState:
    """
    Extract DoLP and AoLP from a Stokes vector.

    Parameters
    ----------
    s : StokesVector
        Light with positive intensity.
    degenerate_threshold : float
        DoLP below which the AoLP is undefined; it is then reported as 0 with the
        `degenerate` flag set.

    Returns
    -------
    PolState
        DoLP in [0, 1] and AoLP in [0, pi).

    Raises
    ------
    InvalidStokesError
        If s0 <= 0.
    """
    if not s.s0 > 0:
        raise InvalidStokesError(s.s0)
    a = s.as_array()
    dolp = float(min(1.0, stokes_dolp(a)))
    if dolp < degenerate_threshold:
        return PolState(dolp=dolp, aolp=0.0, degenerate=True)
    return PolState(dolp=dolp, aolp=float(stokes_aolp(a)))


def malus(s: np.ndarray, filter_angle: ArrayLike) -> np.ndarray:
    """Intensity behind an ideal linear polarizer: (s0 + s1 cos 2a + s2 sin 2a) / 2."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(filter_angle, dtype=float)
    return 0.5 * (s[..., 0] + s[..., 1] * np.cos(2.0 * a) + s[..., 2] * np.sin(2.0 * a))


def malus_observe(s: StokesVector, filter_angle: float) -> float:
    """Observed intensity of `s` through a polarizer at `filter_angle` (radians)."""
    return float(malus(s.as_array(), filter_angle))


def jones_to_stokes_array(e: np.ndarray) -> np.ndarray:
    """Stokes vectors (..., 4) of Jones vectors (..., 2)."""
    e = np.asarray(e, dtype=complex)
    ex, ey = e[..., 0], e[..., 1]
    cross = ex * np.conj(ey)
    return np.stack(
        [
            np.abs(ex) ** 2 + np.abs(ey) ** 2,
            np.abs(ex) ** 2 - np.abs(ey) ** 2,
            2.0 * cross.real,
            -2.0 * cross.imag,
        ],
        axis=-1,
    )


def jones_to_stokes(e: JonesVector) -> StokesVector:
    """Convert a Jones vector into the (fully polarized) Stokes vector it describes."""
    return StokesVector.from_array(jones_to_stokes_array(e.as_array()))


def jones_to_mueller_array(j: np.ndarray) -> np.ndarray:
    """Mueller matrices (..., 4, 4) equivalent to Jones matrices (..., 2, 2)."""
    j = np.asarray(j, dtype=complex)
    kron = np.einsum("...ij,...kl->...ikjl", j, np.conj(j)).reshape(j.shape[:-2] + (4, 4))
    return np.real(_COHERENCY_TO_STOKES @ kron @ _STOKES_TO_COHERENCY)


def jones_to_mueller(j: JonesMatrix) -> MuellerMatrix:
    """
    Mueller matrix M with M S(e) = S(j e) for every Jones vector e.

    Built as A (J kron J*) A^-1 where A maps coherency vectors onto Stokes vectors.
    """
    return MuellerMatrix(jones_to_mueller_array(j.j))


def mueller_apply_array(m: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Apply stacks of Mueller matrices (..., 4, 4) to Stokes vectors (..., 4)."""
    return np.einsum("...ij,...j->...i", np.asarray(m, dtype=float), np.asarray(s, dtype=float))


def mueller_apply(m: MuellerMatrix, s: StokesVector) -> StokesVector:
    return StokesVector.from_array(m.m @ s.as_array())


def rotator_jones(theta: float) -> np.ndarray:
    """Jones matrix rotating linear polarization by +theta."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rotator_mueller(theta: ArrayLike) -> np.ndarray:
    """Mueller matrix rotating the (s1, s2) plane by +2 theta; stacks for array input."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(2.0 * theta), np.sin(2.0 * theta)
    m = np.zeros(theta.shape + (4, 4))
    m[..., 0, 0] = 1.0
    m[..., 3, 3] = 1.0
    m[..., 1, 1] = c
    m[..., 1, 2] = -s
    m[..., 2, 1] = s
    m[..., 2, 2] = c
    return m


def linear_polarizer_mueller(theta: float) -> np.ndarray:
    """Mueller matrix of an ideal linear polarizer with transmission axis at theta."""
    c, s = np.cos(2.0 * theta), np.sin(2.0 * theta)
    return 0.5 * np.array(
        [
            [1.0, c, s, 0.0],
            [c, c * c, c * s, 0.0],
            [s, c * s, s * s, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )
