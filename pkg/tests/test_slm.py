import numpy as np
import pytest

from structpol.exceptions import DimensionMismatchError, PixelValueError
from structpol.polcore import JonesVector, dolp_aolp, jones_to_stokes, stokes_aolp, wrap_angle
from structpol.slm import (
    ProjectorModel,
    ProjectorPhotometry,
    TnlcParams,
    calibrate_photometry,
    pixel_value_to_beta,
    throw_stokes,
    tnlc_jones,
    tnlc_jones_array,
    tnlc_jones_decomposed,
)
from structpol.utils import RigidTransform

TWIST = np.pi / 2


def test_direct_and_decomposed_cell_agree():
    rng = np.random.default_rng(0)
    for beta in rng.uniform(0.0, np.sqrt(3.0) * TWIST, 1000):
        p = TnlcParams(beta)
        np.testing.assert_allclose(tnlc_jones(p).j, tnlc_jones_decomposed(p).j, atol=1e-12)


def test_zero_birefringence_is_identity():
    np.testing.assert_allclose(tnlc_jones(TnlcParams(0.0)).j, np.eye(2), atol=1e-12)


def test_full_birefringence_rotates_by_twist():
    out = tnlc_jones(TnlcParams(np.sqrt(3.0) * TWIST)) @ JonesVector(1.0, 0.0)
    state = dolp_aolp(jones_to_stokes(out))
    assert state.dolp == pytest.approx(1.0, abs=1e-12)
    assert state.aolp == pytest.approx(np.pi / 2, abs=1e-9)


def test_cell_is_unitary():
    rng = np.random.default_rng(4)
    cells = tnlc_jones_array(rng.uniform(0.0, np.sqrt(3.0) * TWIST, 1000))
    products = cells @ np.conj(np.swapaxes(cells, -1, -2))
    np.testing.assert_allclose(products, np.broadcast_to(np.eye(2), products.shape), atol=1e-12)


def test_birefringence_outside_range_is_rejected():
    with pytest.raises(ValueError):
        TnlcParams(-0.1)
    with pytest.raises(ValueError):
        TnlcParams(3.0 * TWIST)


def test_pixel_value_mapping():
    assert pixel_value_to_beta(255) == pytest.approx(0.0)
    assert pixel_value_to_beta(0) == pytest.approx(np.sqrt(3.0) * TWIST)
    betas = pixel_value_to_beta(np.arange(256))
    assert np.all(np.diff(betas) < 0)


@pytest.mark.parametrize("value", [-1, 256, np.nan])
def test_pixel_value_out_of_range(value):
    with pytest.raises(PixelValueError):
        pixel_value_to_beta(value)


def test_photometry_spans_ninety_degrees(photometry):
    assert np.degrees(photometry.rotation_span) >= 89.9
    assert np.sin(photometry.aolp[255]) == pytest.approx(0.0, abs=1e-9)
    assert photometry.aolp[0] == pytest.approx(np.pi / 2, abs=1e-9)
    assert photometry.dolp[0] == pytest.approx(1.0)
    assert photometry.dolp[255] == pytest.approx(1.0)
    assert photometry.level[255] == pytest.approx(0.0)
    assert photometry.max_level >= np.pi / 2 - 1e-6


def test_diagonal_source_shifts_the_curve():
    diagonal = calibrate_photometry(source_aolp=np.pi / 4)
    assert diagonal.aolp[255] == pytest.approx(np.pi / 4, abs=1e-9)
    assert diagonal.aolp[0] == pytest.approx(3 * np.pi / 4, abs=1e-9)
    assert np.degrees(diagonal.rotation_span) >= 89.9


def test_level_inverse_reproduces_requested_levels(photometry):
    levels = np.linspace(0.0, photometry.max_level, 9)
    commands = photometry.command_for_level(levels)
    measured = photometry.level_of_aolp(stokes_aolp(photometry.normalized_stokes(commands)))
    np.testing.assert_allclose(measured, levels, atol=1e-3)


def test_level_of_aolp_keeps_both_ends_unwrapped(photometry):
    for delta in (-0.01, 0.01):
        assert abs(photometry.level_of_aolp(wrap_angle(photometry.aolp[255] + delta))) == pytest.approx(0.01, abs=1e-9)
        assert photometry.level_of_aolp(wrap_angle(photometry.aolp[0] + delta)) == pytest.approx(np.pi / 2, abs=0.011)


def test_dolp_mismatch_only_touches_rotated_states():
    ideal = calibrate_photometry()
    lossy = calibrate_photometry(dolp_mismatch=0.1)
    assert lossy.dolp[0] == pytest.approx(0.9 * ideal.dolp[0])
    assert lossy.dolp[255] == pytest.approx(ideal.dolp[255])


def test_lut_survives_json(tmp_path, photometry):
    path = tmp_path / "lut.json"
    photometry.save(path)
    loaded = ProjectorPhotometry.load(path)
    np.testing.assert_allclose(loaded.dolp, photometry.dolp, rtol=1e-12)
    np.testing.assert_allclose(loaded.rotation, photometry.rotation, atol=1e-12)
    np.testing.assert_allclose(loaded.circular, photometry.circular, atol=1e-12)


def test_nearest_and_interpolated_lookup_agree_on_integers(photometry):
    values = np.arange(0, 256, 17, dtype=float)
    np.testing.assert_allclose(photometry.normalized_stokes(values, True), photometry.normalized_stokes(values, False))


@pytest.fixture
def small_projector(photometry):
    k = np.array([[20.0, 0.0, 7.5], [0.0, 20.0, 5.5], [0.0, 0.0, 1.0]])
    return ProjectorModel(k, RigidTransform(), (16, 12), photometry)


def test_throw_intensity_is_pattern_independent(small_projector):
    rng = np.random.default_rng(4)
    command = rng.uniform(0, 255, (12, 16))
    field_ = throw_stokes(small_projector, command)
    np.testing.assert_allclose(field_[..., 0], small_projector.photometry.source_intensity, atol=1e-12)


def test_blurred_throw_keeps_intensity(photometry):
    k = np.array([[20.0, 0.0, 7.5], [0.0, 20.0, 5.5], [0.0, 0.0, 1.0]])
    blurred = ProjectorModel(k, RigidTransform(), (16, 12), photometry, blur_sigma=1.5)
    command = np.where(np.arange(16) < 8, 0.0, 255.0)[None, :].repeat(12, axis=0)
    field_ = throw_stokes(blurred, command)
    np.testing.assert_allclose(field_[..., 0], 1.0)
    assert np.all(np.hypot(field_[..., 1], field_[..., 2]) <= field_[..., 0] + 1e-12)


def test_throw_validates_commands(small_projector):
    with pytest.raises(DimensionMismatchError):
        throw_stokes(small_projector, np.zeros((16, 12)))
    with pytest.raises(PixelValueError):
        throw_stokes(small_projector, np.full((12, 16), 300.0))
