import json
from pathlib import Path

import numpy as np
import pytest

from structpol.codec import CorrespondenceMap, make_patterns
from structpol.pbrdf import MaterialParams
from structpol.recon import DepthMap, NormalMap
from structpol.render import CameraModel, ConstantAlbedo, Plane, Scene, Sphere, render_frames, trace
from structpol.slm import ProjectorModel, calibrate_photometry
from structpol.utils import RigidTransform

SIZE = 64
FOCAL = 87.5
BASELINE = 0.1

SPHERE_MATERIAL = MaterialParams(refractive_index=1.5, specular_albedo=0.8, roughness=0.4, shape=2.0, concentration=1.0)
WALL_MATERIAL = MaterialParams(refractive_index=1.5, specular_albedo=0.8, roughness=0.5, shape=2.0, concentration=1.0)
# Broad lobe: specular echo stays above the extraction floor over most of the sphere.
ROUGH_MATERIAL = MaterialParams(refractive_index=1.5, specular_albedo=0.8, roughness=0.8, shape=2.0, concentration=1.0)


def intrinsics(size: int = SIZE, focal: float = FOCAL) -> np.ndarray:
    c = (size - 1) / 2.0
    return np.array([[focal, 0.0, c], [0.0, focal, c], [0.0, 0.0, 1.0]])


@pytest.fixture(scope="session")
def photometry():
    return calibrate_photometry()


@pytest.fixture(scope="session")
def camera():
    return CameraModel(intrinsics(), RigidTransform(), (SIZE, SIZE))


@pytest.fixture(scope="session")
def projector(photometry):
    pose = RigidTransform.look_at((BASELINE, 0.0, 0.0), (BASELINE, 0.0, 1.0))
    return ProjectorModel(intrinsics(), pose, (SIZE, SIZE), photometry)


@pytest.fixture(scope="session")
def sequence(projector):
    return make_patterns(SIZE, SIZE, n_bits=3, n_phases=4, period=16.0, photometry=projector.photometry)


@pytest.fixture(scope="session")
def plane_scene():
    wall = Plane(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]), material=WALL_MATERIAL, albedo=ConstantAlbedo((0.3,)))
    return Scene([wall])


@pytest.fixture(scope="session")
def sphere_scene():
    ball = Sphere(np.array([0.0, 0.0, 1.0]), 0.25, SPHERE_MATERIAL, ConstantAlbedo((0.4,)))
    return Scene([ball])


@pytest.fixture(scope="session")
def rough_sphere_scene():
    ball = Sphere(np.array([0.0, 0.0, 1.0]), 0.25, ROUGH_MATERIAL, ConstantAlbedo((0.3,)))
    return Scene([ball])


@pytest.fixture(scope="module")
def plane_capture(plane_scene, camera, projector, sequence):
    hits = trace(plane_scene, camera, projector)
    frames = render_frames(plane_scene, camera, projector, sequence.frames, sequence.samplings, hits=hits)
    return hits, frames


@pytest.fixture(scope="module")
def sphere_capture(sphere_scene, camera, projector, sequence):
    hits = trace(sphere_scene, camera, projector)
    frames = render_frames(sphere_scene, camera, projector, sequence.frames, sequence.samplings, hits=hits)
    return hits, frames


@pytest.fixture(scope="module")
def rough_sphere_capture(rough_sphere_scene, camera, projector, sequence):
    hits = trace(rough_sphere_scene, camera, projector)
    frames = render_frames(rough_sphere_scene, camera, projector, sequence.frames, sequence.samplings, hits=hits)
    return hits, frames


def ground_truth_maps(hits, projector_width: int, min_cos: float = 0.1):
    """Correspondence, depth and normals straight from traced geometry (camera at the world origin)."""
    n_l = np.sum(hits.normals * hits.light, axis=-1)
    n_v = np.sum(hits.normals * hits.view, axis=-1)
    mask = hits.hit & hits.lit & (n_l > min_cos) & (n_v > min_cos)
    cmap = CorrespondenceMap(hits.projector_uv[..., 0], mask, projector_width)
    depth = DepthMap(hits.depth, hits.points, mask)
    normals = NormalMap(hits.normals, mask)
    return cmap, depth, normals


@pytest.fixture
def rig_file(tmp_path: Path) -> Path:
    """Small rig JSON: a sphere in front of a wall, noiseless."""
    doc = {
        "schema": 1,
        "camera": {"resolution": [SIZE, SIZE], "focal": FOCAL},
        "projector": {
            "resolution": [SIZE, SIZE],
            "focal": FOCAL,
            "position": [BASELINE, 0.0, 0.0],
            "look_at": [BASELINE, 0.0, 1.0],
        },
        "scene": {
            "surfaces": [
                {"type": "plane", "origin": [0.0, 0.0, 1.2], "normal": [0.0, 0.0, -1.0], "material": {"roughness": 0.5}},
                {"type": "sphere", "center": [0.0, 0.0, 1.0], "radius": 0.15},
            ]
        },
        "pattern": {"n_bits": 3, "n_phases": 4, "period": 16.0},
        "seed": 7,
    }
    path = tmp_path / "rig.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path
