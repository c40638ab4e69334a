"""
Polarimetric reflection model shared by the renderer and the estimator.

Specular reflection under the nearly co-axial rig is c_s diag(1, 1, -1, -1). Diffuse
reflection keeps only the first row and column of its Mueller matrix: light is
partially polarized on entry and exit by Fresnel transmission and depolarized in
between. The radiometric terms come from a self-contained microfacet model with the
five global parameters refractive index, specular albedo, roughness, distribution
shape and diffuse-polarization concentration, plus a per-pixel diffuse albedo.

All array functions broadcast over leading axes; geometry vectors live in the camera
frame (x right, y down, z forward).
"""

from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import gamma as gamma_fn

from structpol.polcore import MuellerMatrix, StokesVector, wrap_angle
from structpol.utils import normalize

GLOBAL_NAMES = ("refractive_index", "specular_albedo", "roughness", "shape", "concentration")
GLOBAL_LOWER = np.array([1.01, 0.0, 0.02, 0.5, 0.0])
GLOBAL_UPPER = np.array([3.0, 1.0, 1.0, 4.0, 5.0])


@dataclass(frozen=True, eq=False)
class MaterialParams:
    """
    Surface reflectance parameters.

    Attributes
    ----------
    refractive_index : float
        mu > 1.
    specular_albedo : float
        k_s in [0, 1].
    roughness : float
        alpha_r in (0, 1].
    shape : float
        beta_s > 0, exponent of the generalized-Gaussian slope distribution (2 is Beckmann).
    concentration : float
        kappa >= 0, scales the diffuse polarization (0 makes diffuse fully depolarizing).
    albedo : float or np.ndarray
        K_b in [0, 1]; a scalar or a per-pixel map.
    """

    refractive_index: float = 1.5
    specular_albedo: float = 0.5
    roughness: float = 0.3
    shape: float = 2.0
    concentration: float = 1.0
    albedo: Union[float, np.ndarray] = 0.5

    def __post_init__(self) -> None:
        if not self.refractive_index > 1.0:
            raise ValueError(f"refractive index must exceed 1, got {self.refractive_index}")
        if not 0.0 <= self.specular_albedo <= 1.0:
            raise ValueError(f"specular albedo must lie in [0, 1], got {self.specular_albedo}")
        if not 0.0 < self.roughness <= 1.0:
            raise ValueError(f"roughness must lie in (0, 1], got {self.roughness}")
        if not self.shape > 0.0:
            raise ValueError(f"distribution shape must be positive, got {self.shape}")
        if not self.concentration >= 0.0:
            raise ValueError(f"concentration must be non-negative, got {self.concentration}")

    @property
    def global_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in GLOBAL_NAMES], dtype=float)

    def with_globals(self, vector: np.ndarray) -> "MaterialParams":
        clipped = np.clip(np.asarray(vector, dtype=float), GLOBAL_LOWER, GLOBAL_UPPER)
        return replace(self, **{name: float(value) for name, value in zip(GLOBAL_NAMES, clipped)})

    def with_albedo(self, albedo: Union[float, np.ndarray]) -> "MaterialParams":
        return replace(self, albedo=albedo)

    def to_json(self) -> Dict[str, Any]:
        """Global parameters only; a spatially varying albedo is stored as an image."""
        doc: Dict[str, Any] = {name: float(getattr(self, name)) for name in GLOBAL_NAMES}
        if np.ndim(self.albedo) == 0:
            doc["albedo"] = float(self.albedo)
        return doc

    @classmethod
    def from_json(cls, doc: Dict[str, Any], albedo: Optional[np.ndarray] = None) -> "MaterialParams":
        values = {name: float(doc[name]) for name in GLOBAL_NAMES if name in doc}
        return cls(**values, albedo=albedo if albedo is not None else float(doc.get("albedo", 0.5)))


@dataclass(frozen=True, eq=False)
class ShadingGeometry:
    """
    Unit normal, light and view directions in the camera frame.

    Attributes
    ----------
    normal, light, view : np.ndarray
        Arrays of shape (..., 3); `light` and `view` point away from the surface.
    """

    normal: np.ndarray
    light: np.ndarray
    view: np.ndarray

    @classmethod
    def from_vectors(cls, normal: np.ndarray, light: np.ndarray, view: np.ndarray) -> "ShadingGeometry":
        return cls(normalize(np.asarray(normal, dtype=float)), normalize(np.asarray(light, dtype=float)), normalize(np.asarray(view, dtype=float)))

    @property
    def n_dot_l(self) -> np.ndarray:
        return np.sum(self.normal * self.light, axis=-1)

    @property
    def n_dot_v(self) -> np.ndarray:
        return np.sum(self.normal * self.view, axis=-1)

    @property
    def half(self) -> np.ndarray:
        return normalize(self.light + self.view)

    @property
    def azimuth(self) -> np.ndarray:
        """Orientation of the normal projected onto the image plane."""
        return np.arctan2(self.normal[..., 1], self.normal[..., 0])


@dataclass(frozen=True, eq=False)
class ReflectionTerms:
    """Per-point scalars of the reflection model: c_s, c_d and the diffuse Mueller entries."""

    c_s: np.ndarray
    c_d: np.ndarray
    m12: np.ndarray
    m13: np.ndarray
    m21: np.ndarray
    m31: np.ndarray

    def expand(self, axis: int = -1) -> "ReflectionTerms":
        """Insert an axis (e.g. for a stack of frames) into every term."""
        return ReflectionTerms(*(np.expand_dims(getattr(self, f), axis) for f in ("c_s", "c_d", "m12", "m13", "m21", "m31")))

    def apply(self, s_i: np.ndarray, s_a: Optional[np.ndarray] = None) -> np.ndarray:
        """Observed Stokes vectors (M_s + M_d) s_i + s_a for incident Stokes vectors (..., 4)."""
        s_i = np.asarray(s_i, dtype=float)
        s0, s1, s2, s3 = s_i[..., 0], s_i[..., 1], s_i[..., 2], s_i[..., 3]
        out = np.stack(
            [
                self.c_s * s0 + self.c_d * (s0 + self.m12 * s1 + self.m13 * s2),
                self.c_s * s1 + self.c_d * self.m21 * s0,
                -self.c_s * s2 + self.c_d * self.m31 * s0,
                -self.c_s * s3,
            ],
            axis=-1,
        )
        return out if s_a is None else out + s_a


def fresnel_reflectance(cos_i: np.ndarray, mu: float) -> Tuple[np.ndarray, np.ndarray]:
    """s- and p-polarized Fresnel reflectance from air into a dielectric of index `mu`."""
    cos_i = np.clip(np.asarray(cos_i, dtype=float), 0.0, 1.0)
    sin_t2 = (1.0 - cos_i**2) / mu**2
    cos_t = np.sqrt(np.maximum(0.0, 1.0 - sin_t2))
    with np.errstate(invalid="ignore", divide="ignore"):
        r_s = ((cos_i - mu * cos_t) / (cos_i + mu * cos_t)) ** 2
        r_p = ((cos_t - mu * cos_i) / (cos_t + mu * cos_i)) ** 2
    return np.nan_to_num(r_s, nan=1.0), np.nan_to_num(r_p, nan=1.0)


def fresnel_unpolarized(cos_i: np.ndarray, mu: float) -> np.ndarray:
    r_s, r_p = fresnel_reflectance(cos_i, mu)
    return 0.5 * (r_s + r_p)


def transmission_polarization(cos_i: np.ndarray, mu: float) -> np.ndarray:
    """(T_p - T_s) / (T_p + T_s): degree of polarization imprinted by Fresnel transmission."""
    r_s, r_p = fresnel_reflectance(cos_i, mu)
    t_s, t_p = 1.0 - r_s, 1.0 - r_p
    total = t_s + t_p
    return np.divide(t_p - t_s, total, out=np.zeros_like(total), where=total > 0)


def microfacet_distribution(cos_h: np.ndarray, roughness: float, shape: float) -> np.ndarray:
    """
    Generalized-Gaussian slope distribution, normalized over projected area.

    D = exp(-(tan(theta_h) / alpha)^beta) / (cos^4(theta_h) * 2 pi alpha^2 Gamma(2/beta) / beta).
    """
    cos_h = np.asarray(cos_h, dtype=float)
    positive = cos_h > 0
    c = np.where(positive, cos_h, 1.0)
    tan_h = np.sqrt(np.maximum(0.0, 1.0 - c**2)) / c
    norm = 2.0 * np.pi * roughness**2 * gamma_fn(2.0 / shape) / shape
    d = np.exp(-((tan_h / roughness) ** shape)) / (c**4 * norm)
    return np.where(positive, d, 0.0)


def smith_masking(cos_theta: np.ndarray, roughness: float) -> np.ndarray:
    """Uncorrelated Smith shadowing for one direction (rational Beckmann fit)."""
    cos_theta = np.asarray(cos_theta, dtype=float)
    positive = cos_theta > 0
    c = np.clip(np.where(positive, cos_theta, 1.0), 1e-12, 1.0)
    tan_t = np.sqrt(np.maximum(0.0, 1.0 - c**2)) / c
    a = np.divide(1.0, roughness * tan_t, out=np.full_like(tan_t, np.inf), where=tan_t > 0)
    a_finite = np.minimum(a, 1.6)
    g = (3.535 * a_finite + 2.181 * a_finite**2) / (1.0 + 2.276 * a_finite + 2.577 * a_finite**2)
    # the fit overshoots 1 just below the cut-off
    g = np.minimum(g, 1.0)
    return np.where(positive, np.where(a < 1.6, g, 1.0), 0.0)


def radiometric_terms(mat: MaterialParams, geom: ShadingGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """
    Radiometric specular and diffuse terms (c_s, c_d).

    c_s = k_s D F(h.v) G / (4 n.v) and c_d = K_b (n.l) (1 - F_in)(1 - F_out) / pi, both
    zero for geometry that is back-facing to the light or the viewer.
    """
    n_l, n_v = geom.n_dot_l, geom.n_dot_v
    front = (n_l > 0) & (n_v > 0)
    h = geom.half
    cos_h = np.sum(geom.normal * h, axis=-1)
    v_h = np.sum(geom.view * h, axis=-1)

    d = microfacet_distribution(cos_h, mat.roughness, mat.shape)
    f = fresnel_unpolarized(v_h, mat.refractive_index)
    g = smith_masking(n_l, mat.roughness) * smith_masking(n_v, mat.roughness)
    safe_nv = np.where(front, n_v, 1.0)
    c_s = np.where(front, mat.specular_albedo * d * f * g / (4.0 * safe_nv), 0.0)

    f_in = fresnel_unpolarized(n_l, mat.refractive_index)
    f_out = fresnel_unpolarized(n_v, mat.refractive_index)
    c_d = np.where(front, np.asarray(mat.albedo) * n_l * (1.0 - f_in) * (1.0 - f_out) / np.pi, 0.0)
    return c_s, c_d


def diffuse_polarization(mat: MaterialParams, geom: ShadingGeometry) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Diffuse Mueller entries (m12, m13, m21, m31).

    The first column is the polarization imprinted on exit at the viewing angle, the first
    row the polarization sensitivity of entry at the incidence angle. Both are oriented
    along the normal's image-plane azimuth, scaled by kappa, and jointly clamped so the
    diffuse Mueller matrix maps realizable light onto realizable light.
    """
    # m21/m31 (first column) follow the view angle, m12/m13 (first row) the incidence angle.
    rho_out = mat.concentration * transmission_polarization(geom.n_dot_v, mat.refractive_index)
    rho_in = mat.concentration * transmission_polarization(geom.n_dot_l, mat.refractive_index)
    total = rho_in + rho_out
    scale = np.divide(1.0, total, out=np.ones_like(total), where=total > 1.0)
    rho_out, rho_in = rho_out * scale, rho_in * scale

    psi = geom.azimuth
    c2, s2 = np.cos(2.0 * psi), np.sin(2.0 * psi)
    return rho_in * c2, rho_in * s2, rho_out * c2, rho_out * s2


def reflection_terms(mat: MaterialParams, geom: ShadingGeometry) -> ReflectionTerms:
    c_s, c_d = radiometric_terms(mat, geom)
    m12, m13, m21, m31 = diffuse_polarization(mat, geom)
    return ReflectionTerms(c_s, c_d, m12, m13, m21, m31)


def specular_mueller(c_s: float) -> MuellerMatrix:
    """Co-axial specular reflection c_s diag(1, 1, -1, -1)."""
    if c_s < 0:
        raise ValueError(f"specular term must be non-negative, got {c_s}")
    return MuellerMatrix(c_s * np.diag([1.0, 1.0, -1.0, -1.0]))


def diffuse_mueller(mat: MaterialParams, geom: ShadingGeometry, c_d: float) -> MuellerMatrix:
    """Diffuse reflection c_d [[1, m12, m13, 0], [m21, 0, 0, 0], [m31, 0, 0, 0], [0, 0, 0, 0]]."""
    m12, m13, m21, m31 = (float(x) for x in diffuse_polarization(mat, geom))
    m = np.zeros((4, 4))
    m[0, :3] = (1.0, m12, m13)
    m[1, 0] = m21
    m[2, 0] = m31
    return MuellerMatrix(c_d * m)


def observe(s_i: StokesVector, mat: MaterialParams, geom: ShadingGeometry, s_a: StokesVector) -> StokesVector:
    """Observed Stokes vector (M_s + M_d) s_i + s_a of a single surface point."""
    c_s, c_d = (float(x) for x in radiometric_terms(mat, geom))
    m = specular_mueller(c_s).m + diffuse_mueller(mat, geom, c_d).m
    return StokesVector.from_array(m @ s_i.as_array() + s_a.as_array())


def observed_aolp(s_i: np.ndarray, c_s: np.ndarray, c_d: np.ndarray, m21: np.ndarray, m31: np.ndarray, s_a: np.ndarray) -> np.ndarray:
    """
    Closed-form AoLP of the observation, in [0, pi).

    phi_o = 1/2 atan2(-c_s s_i^2 + c_d m31 s_i^0 + s_a^2, c_s s_i^1 + c_d m21 s_i^0 + s_a^1).
    """
    s_i = np.asarray(s_i, dtype=float)
    s_a = np.asarray(s_a, dtype=float)
    num = -c_s * s_i[..., 2] + c_d * m31 * s_i[..., 0] + s_a[..., 2]
    den = c_s * s_i[..., 1] + c_d * m21 * s_i[..., 0] + s_a[..., 1]
    return wrap_angle(0.5 * np.arctan2(num, den))
