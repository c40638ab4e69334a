import numpy as np
import pytest

from conftest import SPHERE_MATERIAL, WALL_MATERIAL

from structpol.exceptions import DimensionMismatchError
from structpol.pbrdf import MaterialParams
from structpol.render import (
    Ambient,
    ConstantAlbedo,
    MosaicImage,
    Plane,
    PolarimetricImage,
    Scene,
    Sphere,
    TriangleMesh,
    ambient_field,
    demosaic,
    mosaic_sample,
    render,
    render_frames,
    sample_projector,
    surface_terms,
    trace,
)


def uniform(projector, value):
    return np.full((projector.height, projector.width), float(value))


def test_empty_scene_is_background(camera, projector):
    img = render(Scene([]), camera, projector, uniform(projector, 255))
    assert img.shape == (camera.height, camera.width)
    assert np.all(img.stokes == 0.0)


def test_plane_depth(plane_capture):
    hits, _ = plane_capture
    assert hits.hit.all()
    np.testing.assert_allclose(hits.depth, 1.0, atol=1e-12)
    np.testing.assert_allclose(hits.normals, np.broadcast_to([0.0, 0.0, -1.0], hits.normals.shape))


def test_sphere_depth_matches_analytic_intersection(sphere_capture, camera):
    hits, _ = sphere_capture
    _, directions = camera.pixel_rays()
    center, radius = np.array([0.0, 0.0, 1.0]), 0.25
    b = directions @ center
    disc = b**2 - (center @ center - radius**2)
    expected_hit = disc >= 0
    t = b - np.sqrt(np.where(expected_hit, disc, 0.0))
    np.testing.assert_array_equal(hits.hit, expected_hit)
    np.testing.assert_allclose(hits.depth[expected_hit], (t * directions[..., 2])[expected_hit], atol=1e-9)
    radial = (hits.points[expected_hit] - center) / radius
    np.testing.assert_allclose(hits.normals[expected_hit], radial, atol=1e-9)


def test_triangle_mesh_matches_plane(camera, projector):
    vertices = np.array([[-0.5, -0.5, 1.0], [-0.5, 0.5, 1.0], [0.5, 0.5, 1.0], [0.5, -0.5, 1.0]])
    mesh = TriangleMesh(vertices, np.array([[0, 1, 2], [0, 2, 3]]), WALL_MATERIAL, ConstantAlbedo((0.3,)))
    np.testing.assert_allclose(mesh.face_normals, [[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]])
    hits = trace(Scene([mesh]), camera, projector)
    assert hits.hit.all()
    np.testing.assert_allclose(hits.depth, 1.0, atol=1e-12)


def test_frames_are_realizable(sphere_capture):
    _, frames = sphere_capture
    for frame in frames:
        assert frame.is_realizable()
        assert np.all(frame.s0 >= 0)


def test_pattern_is_invisible_without_diffuse_entry_polarization(camera, projector, sequence):
    matte = MaterialParams(1.5, 0.8, 0.4, 2.0, 0.0)
    scene = Scene(
        [
            Plane(np.array([0.0, 0.0, 1.2]), np.array([0.0, 0.0, -1.0]), material=matte, albedo=ConstantAlbedo((0.3,))),
            Sphere(np.array([0.0, 0.0, 1.0]), 0.2, matte, ConstantAlbedo((0.5,))),
        ],
        Ambient(0.05, 0.3, 0.4),
    )
    frames = render_frames(scene, camera, projector, sequence.frames, sequence.samplings)
    reference = frames[sequence.uniform_index(255.0)].s0
    for frame in frames:
        np.testing.assert_allclose(frame.s0, reference, atol=1e-9)


def test_pattern_leaks_into_intensity_only_through_diffuse_term(sphere_scene, sphere_capture, projector, sequence):
    hits, frames = sphere_capture
    terms = surface_terms(hits, sphere_scene)
    bound = 2.0 * terms.c_d * np.hypot(terms.m12, terms.m13) * projector.photometry.source_intensity + 1e-12
    reference = frames[sequence.uniform_index(255.0)].s0
    for frame in frames:
        assert np.all(np.abs(frame.s0 - reference) <= bound)


def test_shadowed_points_see_only_ambient(camera, projector):
    ambient = Ambient(0.2, 0.5, 0.3)
    scene = Scene(
        [
            Plane(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]), material=WALL_MATERIAL, albedo=ConstantAlbedo((0.3,))),
            Sphere(np.array([0.1, 0.0, 0.5]), 0.08, SPHERE_MATERIAL, ConstantAlbedo((0.4,))),
        ],
        ambient,
    )
    hits = trace(scene, camera, projector)
    shadow = hits.hit & ~hits.lit
    assert shadow.sum() > 0
    img = render(scene, camera, projector, uniform(projector, 255))
    np.testing.assert_array_equal(img.stokes[shadow], ambient_field(hits, ambient)[shadow])


def test_render_matches_sequence_rendering(sphere_scene, sphere_capture, camera, projector, sequence):
    _, frames = sphere_capture
    index = sequence.indices("phase")[1]
    single = render(sphere_scene, camera, projector, sequence.frames[index], "bilinear")
    np.testing.assert_array_equal(single.stokes, frames[index].stokes)


def test_threads_do_not_change_frames(sphere_scene, camera, projector, sequence):
    serial = render_frames(sphere_scene, camera, projector, sequence.frames[:6], sequence.samplings[:6], threads=1)
    parallel = render_frames(sphere_scene, camera, projector, sequence.frames[:6], sequence.samplings[:6], threads=4)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.stokes, b.stokes)


def test_render_frames_checks_sampling_count(sphere_scene, camera, projector, sequence):
    with pytest.raises(DimensionMismatchError):
        render_frames(sphere_scene, camera, projector, sequence.frames, sequence.samplings[:-1])


def test_unknown_sampling_mode():
    field_ = np.ones((4, 4, 4))
    with pytest.raises(ValueError):
        sample_projector(field_, np.zeros((2, 2, 2)), np.ones((2, 2), dtype=bool), "cubic")


def test_mosaic_tile_intensities():
    raw = mosaic_sample(PolarimetricImage(np.array([[[2.0, 2.0, 0.0, 0.0]]]))).raw
    np.testing.assert_allclose(raw, [[0.0, 1.0], [1.0, 2.0]], atol=1e-12)


def test_mosaic_frame_holds_one_tile_per_stokes_pixel():
    stokes = np.zeros((3, 5, 4))
    stokes[..., 0] = 1.0
    stokes[1, 4] = [2.0, 2.0, 0.0, 0.0]
    raw = mosaic_sample(PolarimetricImage(stokes)).raw
    assert raw.shape == (6, 10)
    np.testing.assert_allclose(raw[2:4, 8:10], [[0.0, 1.0], [1.0, 2.0]], atol=1e-12)
    np.testing.assert_allclose(np.delete(np.delete(raw, [2, 3], axis=0), [8, 9], axis=1), 0.5)


def test_demosaic_inverts_mosaic_at_zero_noise():
    rng = np.random.default_rng(5)
    s0 = rng.uniform(0.5, 2.0, (6, 7))
    dolp = rng.uniform(0.0, 1.0, (6, 7))
    angle = rng.uniform(0.0, np.pi, (6, 7))
    stokes = np.stack([s0, s0 * dolp * np.cos(2 * angle), s0 * dolp * np.sin(2 * angle), np.zeros_like(s0)], axis=-1)
    recovered = demosaic(mosaic_sample(PolarimetricImage(stokes)))
    assert not recovered.s3_observed
    np.testing.assert_allclose(recovered.stokes, stokes, atol=1e-9)


def test_mosaic_noise_is_seeded():
    img = PolarimetricImage(np.tile([1.0, 0.2, 0.1, 0.0], (5, 5, 1)))
    a = mosaic_sample(img, 0.05, seed=3).raw
    b = mosaic_sample(img, 0.05, seed=3).raw
    c = mosaic_sample(img, 0.05, seed=4).raw
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(a >= 0)


def test_demosaic_rejects_odd_frames():
    with pytest.raises(DimensionMismatchError):
        demosaic(MosaicImage(np.zeros((3, 4))))


def test_polarimetric_image_shape_is_checked():
    with pytest.raises(ValueError):
        PolarimetricImage(np.zeros((4, 4, 3)))
