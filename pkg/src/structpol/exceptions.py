""" Custom exceptions for the structpol package. """

from typing import Tuple


class StructpolError(Exception):
    """Base class for all errors raised by structpol."""


class InvalidStokesError(StructpolError, ValueError):
    """
    Exception raised when a Stokes vector has no usable intensity.

    DoLP and AoLP are ratios over s0, so they are undefined for s0 <= 0.

    Parameters
    ----------
    s0 : float
        The offending intensity component.
    """

    def __init__(self, s0: float) -> None:
        super().__init__(f"Stokes intensity s0={s0!r} must be positive to extract DoLP/AoLP.")


class PixelValueError(StructpolError, ValueError):
    """Exception raised when an SLM command value lies outside [0, 255]."""

    def __init__(self, value: float) -> None:
        super().__init__(f"SLM pixel value {value!r} is outside the command range [0, 255].")


class DimensionMismatchError(StructpolError, ValueError):
    """
    Exception raised when two arrays that must share a shape do not.

    Parameters
    ----------
    what : str
        Short description of the compared quantities.
    expected : Tuple[int, ...]
        The required shape.
    actual : Tuple[int, ...]
        The shape that was received.
    """

    def __init__(self, what: str, expected: Tuple[int, ...], actual: Tuple[int, ...]) -> None:
        super().__init__(f"{what}: expected shape {tuple(expected)}, got {tuple(actual)}.")


class PatternParameterError(StructpolError, ValueError):
    """Exception raised when pattern geometry (bits, period, phases) cannot encode the projector."""


class CalibrationError(StructpolError):
    """Exception raised when projector calibration is impossible with the given board observations."""


class AmbientLightError(StructpolError):
    """
    Exception raised when reflectance estimation is requested on a capture lit by ambient light.

    Parameters
    ----------
    intensity : float
        The ambient intensity recorded in the capture manifest.
    """

    def __init__(self, intensity: float) -> None:
        super().__init__(
            f"BRDF estimation requires an ambient-free capture, but the manifest records ambient intensity {intensity}."
        )


class ManifestError(StructpolError):
    """Exception raised when a capture or pattern manifest is missing or has an unsupported schema."""


class ConfigError(StructpolError):
    """Exception raised when a rig configuration document fails validation."""


class FileFormatError(StructpolError, ValueError):
    """Exception raised when an image, point cloud or mesh file is malformed."""
