import json

import numpy as np
import pytest
from PIL import Image

from structpol.exceptions import FileFormatError, ManifestError
from structpol.io import (
    linear_to_srgb,
    polarization_preview,
    read_manifest,
    read_obj,
    read_pfm,
    read_pgm,
    read_ply,
    tonemap,
    write_json,
    write_pfm,
    write_pgm,
    write_ply,
    write_png,
)


def test_pfm_keeps_row_order(tmp_path):
    image = np.arange(12, dtype=float).reshape(3, 4)
    write_pfm(tmp_path / "grey.pfm", image)
    np.testing.assert_array_equal(read_pfm(tmp_path / "grey.pfm"), image)
    assert (tmp_path / "grey.pfm").read_bytes().startswith(b"Pf\n4 3\n-1.0\n")


def test_pfm_colour_and_nan(tmp_path):
    image = np.random.default_rng(0).normal(size=(5, 2, 3)).astype(np.float32).astype(float)
    image[1, 1, 2] = np.nan
    write_pfm(tmp_path / "rgb.pfm", image)
    np.testing.assert_array_equal(read_pfm(tmp_path / "rgb.pfm"), image)


def test_pfm_rejects_other_shapes(tmp_path):
    with pytest.raises(FileFormatError):
        write_pfm(tmp_path / "bad.pfm", np.zeros((2, 2, 4)))


def test_truncated_pfm_is_reported(tmp_path):
    path = tmp_path / "short.pfm"
    path.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\0" * 10)
    with pytest.raises(FileFormatError):
        read_pfm(path)


def test_pgm_stores_fractional_commands(tmp_path):
    command = np.array([[0.0, 127.5, 255.0]])
    write_pgm(tmp_path / "pattern.pgm", command)
    np.testing.assert_allclose(read_pgm(tmp_path / "pattern.pgm"), command, atol=1.0 / 257.0)


def test_pgm_header_is_checked(tmp_path):
    path = tmp_path / "text.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(FileFormatError):
        read_pgm(path)


def test_ply_skips_missing_points(tmp_path):
    points = np.array([[0.0, 0.0, 1.0], [np.nan, np.nan, np.nan], [0.1, -0.2, 1.5]])
    normals = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0], [0.6, 0.0, -0.8]])
    write_ply(tmp_path / "cloud.ply", points, normals)
    loaded, loaded_normals = read_ply(tmp_path / "cloud.ply")
    np.testing.assert_allclose(loaded, points[[0, 2]])
    np.testing.assert_allclose(loaded_normals, normals[[0, 2]])


def test_ply_without_normals(tmp_path):
    write_ply(tmp_path / "cloud.ply", np.ones((2, 3)))
    _, normals = read_ply(tmp_path / "cloud.ply")
    assert normals is None
    (tmp_path / "mesh.stl").write_text("solid\n", encoding="ascii")
    with pytest.raises(FileFormatError):
        read_ply(tmp_path / "mesh.stl")


def test_obj_polygons_are_triangulated(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("# quad\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\nvn 0 0 -1\nf 1//1 2//1 3//1 4//1\n", encoding="utf-8")
    vertices, faces = read_obj(path)
    assert vertices.shape == (4, 3)
    np.testing.assert_array_equal(faces, [[0, 1, 2], [0, 2, 3]])


@pytest.mark.parametrize(
    "text",
    ["v 0 0 0\n", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", "v 0 0 zero\nf 1 1 1\n"],
)
def test_broken_obj_files(tmp_path, text):
    path = tmp_path / "broken.obj"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(FileFormatError):
        read_obj(path)


def test_png_is_eight_bit(tmp_path):
    write_png(tmp_path / "img.png", np.array([[0.0, 0.5], [1.0, 2.0]]))
    with Image.open(tmp_path / "img.png") as img:
        data = np.asarray(img)
    np.testing.assert_array_equal(data, [[0, 128], [255, 255]])


def test_tonemap_and_gamma():
    assert linear_to_srgb(np.array([0.25]), gamma=2.0)[0] == pytest.approx(0.5)
    assert linear_to_srgb(np.array([-1.0]))[0] == 0.0
    mapped = tonemap(np.linspace(0.0, 10.0, 101))
    assert mapped.max() <= 1.01
    np.testing.assert_array_equal(tonemap(np.zeros(4)), np.zeros(4))


def test_polarization_preview_shape():
    preview = polarization_preview(np.full((3, 4), 0.5), np.zeros((3, 4)))
    assert preview.shape == (3, 4, 3)
    np.testing.assert_array_equal(preview, 0.0)


def test_manifest_schema_is_enforced(tmp_path):
    write_json(tmp_path / "ok.json", {"schema": 1, "frames": []})
    assert read_manifest(tmp_path / "ok.json")["frames"] == []

    (tmp_path / "old.json").write_text(json.dumps({"schema": 2}), encoding="utf-8")
    (tmp_path / "broken.json").write_text("{", encoding="utf-8")
    for name in ("old.json", "broken.json", "missing.json"):
        with pytest.raises(ManifestError):
            read_manifest(tmp_path / name)
