import json

import numpy as np
import pytest
from click.testing import CliRunner

from structpol.cli import main
from structpol.io import read_pfm, read_ply


def edit_rig(path, **sections):
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc.update(sections)
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def fast_rig(rig_file):
    return edit_rig(rig_file, estimation={"max_iterations": 10, "max_outer_iterations": 2})


def invoke(runner, *args):
    result = runner.invoke(main, [str(a) for a in args])
    assert result.exit_code == 0, result.output
    return result


def test_simulate_writes_every_frame(runner, rig_file, tmp_path):
    out = tmp_path / "capture"
    result = invoke(runner, "simulate", "--config", rig_file, "--out", out)
    assert "Simulated 15 frames" in result.output

    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["schema"] == 1
    assert len(manifest["frames"]) == 15
    assert manifest["s3_observed"] is True
    for name in manifest["frames"][0]["planes"][0]:
        assert (out / name).is_file()
    assert (out / "previews" / "frame_000_s0.png").is_file()
    assert read_pfm(out / "ground_truth" / "depth.pfm").shape == (64, 64)


def test_simulation_is_reproducible(runner, rig_file, tmp_path):
    edit_rig(rig_file, noise={"sigma": 0.01, "mosaic": True})
    invoke(runner, "simulate", "--config", rig_file, "--out", tmp_path / "a")
    invoke(runner, "simulate", "--config", rig_file, "--out", tmp_path / "b")
    invoke(runner, "simulate", "--config", rig_file, "--out", tmp_path / "c", "--seed", 8)
    name = "frames/frame_004_c0_s1.pfm"
    first = (tmp_path / "a" / name).read_bytes()
    assert first == (tmp_path / "b" / name).read_bytes()
    assert first != (tmp_path / "c" / name).read_bytes()


def test_decode_needs_a_manifest(runner, tmp_path):
    result = runner.invoke(main, ["decode", str(tmp_path), "--out", str(tmp_path / "map")])
    assert result.exit_code != 0
    assert "Error:" in result.output


def test_bad_rig_is_reported(runner, tmp_path):
    bad = tmp_path / "rig.json"
    bad.write_text(json.dumps({"schema": 1, "camera": {"focal": -1.0}}), encoding="utf-8")
    result = runner.invoke(main, ["simulate", "--config", str(bad), "--out", str(tmp_path / "out")])
    assert result.exit_code != 0
    assert not (tmp_path / "out" / "manifest.json").exists()


def test_full_pipeline(runner, fast_rig, tmp_path):
    capture, cmap, recon, materials = (tmp_path / name for name in ("capture", "map", "recon", "materials"))
    invoke(runner, "simulate", "--config", fast_rig, "--out", capture)
    invoke(runner, "decode", capture, "--out", cmap)
    decoded = json.loads((cmap / "manifest.json").read_text(encoding="utf-8"))
    assert decoded["count"] > 0.5 * 64 * 64

    invoke(runner, "reconstruct", cmap, "--out", recon)
    points, normals = read_ply(recon / "cloud.ply")
    assert len(points) == len(normals) > 1000

    report_path = tmp_path / "report.json"
    invoke(
        runner,
        "eval",
        recon / "depth.pfm",
        capture / "ground_truth" / "depth.pfm",
        "--pred-normals",
        recon / "normals.pfm",
        "--gt-normals",
        capture / "ground_truth" / "normals.pfm",
        "--out",
        report_path,
    )
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["coverage"] > 0.5
    assert report["median_depth_error"] < 0.01
    assert report["mean_normal_error_deg"] < 25.0

    invoke(runner, "estimate", capture, recon, "--out", materials)
    doc = json.loads((materials / "materials.json").read_text(encoding="utf-8"))
    history = doc["channels"][0]["history"]
    assert history[-1] <= history[0]
    assert read_pfm(materials / "albedo.pfm").shape == (64, 64)

    lights = tmp_path / "lights.json"
    lights.write_text(json.dumps({"schema": 1, "lights": [{"direction": [0.3, -0.3, -1.0], "intensity": [1.0]}]}), encoding="utf-8")
    invoke(runner, "relight", materials, lights, "--out", tmp_path / "relit.png")
    relit = read_pfm(tmp_path / "relit.pfm")
    assert relit.shape == (64, 64)
    assert np.nanmax(relit) > 0.0
    assert (tmp_path / "relit.png").is_file()


def test_estimate_refuses_ambient_light(runner, rig_file, tmp_path):
    doc = json.loads(rig_file.read_text(encoding="utf-8"))
    doc["scene"]["ambient"] = {"intensity": 0.1}
    edit_rig(rig_file, scene=doc["scene"])
    capture = tmp_path / "capture"
    invoke(runner, "simulate", "--config", rig_file, "--out", capture)
    invoke(runner, "decode", capture, "--out", tmp_path / "map")
    invoke(runner, "reconstruct", tmp_path / "map", "--out", tmp_path / "recon")

    result = runner.invoke(main, ["estimate", str(capture), str(tmp_path / "recon"), "--out", str(tmp_path / "materials")])
    assert result.exit_code != 0
    assert "ambient" in result.output.lower()
    assert not (tmp_path / "materials" / "materials.json").exists()


def test_decoding_twice_gives_the_same_map(runner, rig_file, tmp_path):
    capture = tmp_path / "capture"
    invoke(runner, "simulate", "--config", rig_file, "--out", capture)
    invoke(runner, "decode", capture, "--out", tmp_path / "first")
    invoke(runner, "decode", capture, "--out", tmp_path / "second")
    first = (tmp_path / "first" / "correspondence.pfm").read_bytes()
    assert first == (tmp_path / "second" / "correspondence.pfm").read_bytes()
    manifests = [json.loads((tmp_path / name / "manifest.json").read_text(encoding="utf-8")) for name in ("first", "second")]
    assert manifests[0] == manifests[1]


def test_calibrate_with_ground_truth(runner, rig_file, tmp_path):
    out = tmp_path / "cal"
    invoke(runner, "calibrate", "--config", rig_file, "--out", out, "--ground-truth")
    doc = json.loads((out / "calibration.json").read_text(encoding="utf-8"))
    assert doc["focal_relative_error"] == 0.0
    assert doc["n_boards"] == 5
    assert doc["rms"] < 0.05

    rig = json.loads((out / "rig.json").read_text(encoding="utf-8"))
    assert rig["projector"]["rotvec"] is not None
