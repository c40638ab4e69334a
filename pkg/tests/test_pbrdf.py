import numpy as np
import pytest
from scipy.integrate import quad

from structpol.pbrdf import (
    GLOBAL_LOWER,
    GLOBAL_UPPER,
    MaterialParams,
    ShadingGeometry,
    diffuse_mueller,
    diffuse_polarization,
    fresnel_reflectance,
    microfacet_distribution,
    observe,
    observed_aolp,
    radiometric_terms,
    reflection_terms,
    smith_masking,
    specular_mueller,
    transmission_polarization,
)
from structpol.polcore import StokesVector, is_realizable, stokes_aolp, wrap_angle


def random_geometry(rng, n):
    normal = np.tile([0.0, 0.0, -1.0], (n, 1)) + rng.normal(scale=0.3, size=(n, 3))
    light = np.tile([0.0, 0.0, -1.0], (n, 1)) + rng.normal(scale=0.3, size=(n, 3))
    view = np.tile([0.0, 0.0, -1.0], (n, 1)) + rng.normal(scale=0.3, size=(n, 3))
    return ShadingGeometry.from_vectors(normal, light, view)


def test_fresnel_at_normal_incidence():
    r_s, r_p = fresnel_reflectance(1.0, 1.5)
    assert r_s == pytest.approx(0.04)
    assert r_p == pytest.approx(0.04)


def test_transmission_polarization_grows_with_angle():
    cosines = np.cos(np.radians([0.0, 30.0, 60.0, 80.0]))
    rho = transmission_polarization(cosines, 1.5)
    assert rho[0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diff(rho) > 0)


@pytest.mark.parametrize("roughness,shape", [(0.3, 2.0), (0.5, 1.5), (0.2, 3.0)])
def test_distribution_is_normalized_over_projected_area(roughness, shape):
    def integrand(theta):
        return float(microfacet_distribution(np.cos(theta), roughness, shape)) * np.cos(theta) * np.sin(theta) * 2.0 * np.pi

    total, _ = quad(integrand, 0.0, np.pi / 2, limit=200)
    assert total == pytest.approx(1.0, rel=1e-3)


def test_smith_masking_range():
    g = smith_masking(np.linspace(0.01, 1.0, 50), 0.4)
    assert np.all((g >= 0) & (g <= 1))
    assert smith_masking(1.0, 0.4) == pytest.approx(1.0)
    assert smith_masking(-0.2, 0.4) == 0.0


def test_smith_masking_stays_below_one_near_the_fit_cutoff():
    a = np.linspace(1.4, 1.6, 201)
    tan_t = 1.0 / (0.4 * a)
    g = smith_masking(1.0 / np.sqrt(1.0 + tan_t**2), 0.4)
    assert g.max() <= 1.0
    assert np.all(np.diff(g) >= -1e-12)


def test_back_facing_geometry_is_dark():
    geom = ShadingGeometry.from_vectors(np.array([0.0, 0.0, -1.0]), np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]))
    c_s, c_d = radiometric_terms(MaterialParams(), geom)
    assert c_s == 0.0
    assert c_d == 0.0


def test_diffuse_term_is_linear_in_albedo():
    rng = np.random.default_rng(0)
    geom = random_geometry(rng, 20)
    _, c1 = radiometric_terms(MaterialParams(albedo=0.2), geom)
    _, c2 = radiometric_terms(MaterialParams(albedo=0.6), geom)
    np.testing.assert_allclose(3.0 * c1, c2, rtol=1e-12)


def test_vectorized_terms_match_matrices():
    rng = np.random.default_rng(1)
    mat = MaterialParams(1.6, 0.7, 0.35, 1.8, 1.5, 0.45)
    geom = random_geometry(rng, 10)
    terms = reflection_terms(mat, geom)
    s_i = np.array([1.0, 0.3, -0.5, 0.1])
    s_a = np.array([0.2, 0.05, 0.02, 0.0])
    batch = terms.apply(np.broadcast_to(s_i, (10, 4)), s_a)
    for k in range(10):
        single = ShadingGeometry(geom.normal[k], geom.light[k], geom.view[k])
        expected = observe(StokesVector.from_array(s_i), mat, single, StokesVector.from_array(s_a)).as_array()
        np.testing.assert_allclose(batch[k], expected, rtol=1e-12, atol=1e-15)


def test_closed_form_aolp_matches_observation():
    rng = np.random.default_rng(2)
    mat = MaterialParams(1.5, 0.6, 0.4, 2.0, 1.0, 0.5)
    geom = random_geometry(rng, 50)
    terms = reflection_terms(mat, geom)
    s_i = np.array([1.0, 0.0, 1.0, 0.0])
    s_a = np.array([0.1, 0.02, -0.03, 0.0])
    observed = terms.apply(np.broadcast_to(s_i, (50, 4)), s_a)
    closed = observed_aolp(s_i, terms.c_s, terms.c_d, terms.m21, terms.m31, s_a)
    gap = wrap_angle(closed - stokes_aolp(observed) + np.pi / 2) - np.pi / 2
    np.testing.assert_allclose(gap, 0.0, atol=1e-9)


def test_specular_reflection_mirrors_aolp():
    s = np.array([1.0, np.cos(0.6), np.sin(0.6), 0.0])
    out = specular_mueller(0.3).m @ s
    assert out[0] == pytest.approx(0.3)
    assert stokes_aolp(out) == pytest.approx(wrap_angle(-0.3))


def test_diffuse_first_column_follows_the_view_and_first_row_the_light():
    mat = MaterialParams(concentration=0.5)
    normal, light = np.array([0.4, 0.0, -1.0]), np.array([0.0, 0.0, -1.0])
    head_on = ShadingGeometry.from_vectors(normal, light, np.array([0.0, 0.0, -1.0]))
    oblique = ShadingGeometry.from_vectors(normal, light, np.array([-0.6, 0.0, -1.0]))
    m12, m13, m21, m31 = diffuse_polarization(mat, head_on)
    n12, n13, n21, n31 = diffuse_polarization(mat, oblique)
    assert n12 == pytest.approx(m12) and n13 == pytest.approx(m13)
    assert abs(n21) > abs(m21)
    assert m21 == pytest.approx(0.5 * transmission_polarization(head_on.n_dot_v, 1.5))
    assert m12 == pytest.approx(0.5 * transmission_polarization(head_on.n_dot_l, 1.5))


def test_diffuse_reflection_keeps_light_realizable():
    rng = np.random.default_rng(3)
    mat = MaterialParams(2.5, 0.5, 0.5, 2.0, 5.0, 1.0)
    for _ in range(200):
        geom = random_geometry(rng, 1)
        single = ShadingGeometry(geom.normal[0], geom.light[0], geom.view[0])
        _, c_d = radiometric_terms(mat, single)
        direction = rng.normal(size=3)
        s_i = np.concatenate([[1.0], direction / np.linalg.norm(direction)])
        out = diffuse_mueller(mat, single, float(c_d)).m @ s_i
        assert is_realizable(out, 1e-9)


def test_material_validation():
    with pytest.raises(ValueError):
        MaterialParams(refractive_index=1.0)
    with pytest.raises(ValueError):
        MaterialParams(specular_albedo=1.5)
    with pytest.raises(ValueError):
        MaterialParams(roughness=0.0)


def test_globals_are_clipped_into_bounds():
    mat = MaterialParams().with_globals(np.array([10.0, -1.0, 0.0, 9.0, -2.0]))
    np.testing.assert_allclose(mat.global_vector, [GLOBAL_UPPER[0], GLOBAL_LOWER[1], GLOBAL_LOWER[2], GLOBAL_UPPER[3], GLOBAL_LOWER[4]])


def test_material_json_keeps_globals():
    mat = MaterialParams(1.7, 0.4, 0.25, 1.5, 2.0, 0.3)
    loaded = MaterialParams.from_json(mat.to_json())
    np.testing.assert_allclose(loaded.global_vector, mat.global_vector)
    assert loaded.albedo == pytest.approx(0.3)
