""" Command-line interface for the structpol package. """

# pylint: disable=no-value-for-parameter

import logging
import shutil
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import numpy as np
from dotenv import load_dotenv

from structpol.codec import decode, filter_discontinuities, load_correspondence, load_patterns, save_correspondence, save_patterns
from structpol.config import (
    ALBEDO_NAME,
    CLOUD_NAME,
    CORRESPONDENCE_NAME,
    DEPTH_NAME,
    MANIFEST_NAME,
    MATERIALS_NAME,
    NORMALS_NAME,
    REPORT_NAME,
    RIG_NAME,
    SCHEMA_VERSION,
)
from structpol.geocal import board_poses, calibrate_projector, simulate_board_observations
from structpol.io import (
    linear_to_srgb,
    polarization_preview,
    read_manifest,
    read_pfm,
    tonemap,
    write_json,
    write_pfm,
    write_png,
    write_ply,
)
from structpol.pbrdf import MaterialParams
from structpol.recon import (
    DepthMap,
    NormalMap,
    check_ambient_free,
    estimate_reflectance,
    evaluate,
    pca_normals,
    relight,
    triangulate,
)
from structpol.render import PolarimetricImage, demosaic, mosaic_sample, render_frames, trace
from structpol.rig import (
    RigConfig,
    build_camera,
    build_projector,
    build_scene,
    build_sequence,
    estimation_config,
    load_lights,
    load_rig,
    rig_from_manifest,
    save_rig,
    with_projector_geometry,
)
from structpol.utils import configure_logging, normalize, resolve_threads

logger = logging.getLogger(__name__)

STOKES_PLANES = ("s0", "s1", "s2", "s3")


@click.group()
@click.option("--verbose", "-v", count=True, help="Increase log verbosity (-v INFO, -vv DEBUG)")
def main(verbose: int) -> None:
    """Structured-polarization 3D sensing: simulate, decode, reconstruct and relight."""
    load_dotenv()
    configure_logging(verbose)


def _rig_doc(rig: RigConfig) -> Dict[str, Any]:
    return rig.model_dump(mode="json", by_alias=True)


def _with_seed(rig: RigConfig, seed: Optional[int]) -> RigConfig:
    return rig if seed is None else rig.model_copy(update={"seed": seed})


def _write_channels(path: Path, image: np.ndarray) -> None:
    """(H, W) or (H, W, C) float image, C in {1, 3}."""
    image = np.asarray(image, dtype=float)
    write_pfm(path, image[..., 0] if image.ndim == 3 and image.shape[-1] == 1 else image)


def _read_channels(path: Path) -> np.ndarray:
    image = read_pfm(path)
    return image[..., None] if image.ndim == 2 else image


def load_captures(capture_dir: Path, manifest: Dict[str, Any], channel: Optional[int] = None) -> List[PolarimetricImage]:
    """
    Captured Stokes images listed in a capture manifest.

    With `channel` None the channels are summed, which keeps each frame a valid Stokes image.
    """
    channels = range(manifest["channels"]) if channel is None else [channel]
    captures = []
    for frame in manifest["frames"]:
        stokes = sum(np.stack([read_pfm(capture_dir / name) for name in frame["planes"][c]], axis=-1) for c in channels)
        captures.append(PolarimetricImage(stokes, manifest["s3_observed"]))
    return captures


# --------------------------------------------------------------------------- simulate


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Rig configuration JSON")
@click.option("--out", "-o", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True, help="Capture directory to write")
@click.option("--seed", type=int, default=None, help="Override the rig seed")
@click.option("--threads", type=int, default=None, help="Render threads (default: $SPIDERS_THREADS, then $STRUCTPOL_THREADS, or 1)")
def simulate(config_path: Path, out_dir: Path, seed: Optional[int], threads: Optional[int]) -> None:
    """
    Render every frame of the pattern sequence on the configured scene.

    Writes one PFM per Stokes plane per frame and channel, the pattern set, ground-truth
    depth, normals, projector columns and albedo, PNG previews and a manifest.
    """
    try:
        count = _simulate(config_path, out_dir, seed, threads)
        click.echo(f"Simulated {count} frames into: {out_dir}")
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()


def _simulate(config_path: Path, out_dir: Path, seed: Optional[int], threads: Optional[int]) -> int:
    rig = _with_seed(load_rig(config_path), seed)
    camera, projector = build_camera(rig), build_projector(rig)
    scene = build_scene(rig, config_path.parent)
    sequence = build_sequence(rig, projector)
    workers = resolve_threads(threads)

    out_dir.mkdir(parents=True, exist_ok=True)
    save_rig(rig, out_dir / RIG_NAME)
    save_patterns(sequence, out_dir / "patterns")

    hits = trace(scene, camera, projector)
    sensor = rig.noise.mosaic or rig.noise.sigma > 0
    noise_seeds = np.random.default_rng(rig.seed).integers(0, 2**32, size=(rig.channels, len(sequence)))
    planes: List[List[List[str]]] = [[] for _ in range(len(sequence))]
    totals = [np.zeros(camera.resolution[::-1] + (4,)) for _ in range(len(sequence))]
    for channel in range(rig.channels):
        frames = render_frames(scene, camera, projector, sequence.frames, sequence.samplings, channel, workers, hits)
        for index, frame in enumerate(frames):
            if sensor:
                frame = demosaic(mosaic_sample(frame, rig.noise.sigma, int(noise_seeds[channel, index])))
            names = [f"frames/frame_{index:03d}_c{channel}_{plane}.pfm" for plane in STOKES_PLANES]
            for k, name in enumerate(names):
                write_pfm(out_dir / name, frame.stokes[..., k])
            planes[index].append(names)
            totals[index] += frame.stokes

    for index, stokes in enumerate(totals):
        image = PolarimetricImage(stokes)
        write_png(out_dir / f"previews/frame_{index:03d}_s0.png", tonemap(image.s0))
        write_png(out_dir / f"previews/frame_{index:03d}_pol.png", polarization_preview(image.aolp, image.dolp))

    truth = {
        "depth": "ground_truth/depth.pfm",
        "normals": "ground_truth/normals.pfm",
        "column": "ground_truth/column.pfm",
        "albedo": "ground_truth/albedo.pfm",
    }
    write_pfm(out_dir / truth["depth"], hits.depth)
    write_pfm(out_dir / truth["normals"], np.where(hits.hit[..., None], hits.normals, 0.0))
    write_pfm(out_dir / truth["column"], np.where(hits.hit & hits.lit, hits.projector_uv[..., 0], np.nan))
    albedo = np.stack([hits.albedo[..., min(c, hits.albedo.shape[-1] - 1)] for c in range(rig.channels)], axis=-1)
    _write_channels(out_dir / truth["albedo"], albedo)

    write_json(
        out_dir / MANIFEST_NAME,
        {
            "schema": SCHEMA_VERSION,
            "rig": _rig_doc(rig),
            "channels": rig.channels,
            "resolution": list(camera.resolution),
            "ambient": rig.scene.ambient.intensity,
            "s3_observed": not sensor,
            "patterns": "patterns",
            "frames": [{"index": i, "tag": tag.to_json(), "planes": planes[i]} for i, tag in enumerate(sequence.tags)],
            "ground_truth": truth,
        },
    )
    return len(sequence)


# --------------------------------------------------------------------------- decode


@main.command(name="decode")
@click.argument("capture_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--out", "-o", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True, help="Directory for the correspondence map")
def decode_cmd(capture_dir: Path, out_dir: Path) -> None:
    """Extract AoLP, decode Gray and phase frames and filter discontinuities."""
    try:
        count = _decode(capture_dir, out_dir)
        click.echo(f"Decoded {count} pixels into: {out_dir / CORRESPONDENCE_NAME}")
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()


def _decode(capture_dir: Path, out_dir: Path) -> int:
    manifest = read_manifest(capture_dir / MANIFEST_NAME)
    rig = rig_from_manifest(manifest)
    sequence = load_patterns(capture_dir / manifest["patterns"])
    captures = load_captures(capture_dir, manifest)
    cmap = decode(sequence, captures, rig.decode.specular_threshold, rig.decode.sequence_tolerance)
    cmap = filter_discontinuities(cmap, rig.decode.discontinuity_threshold)

    out_dir.mkdir(parents=True, exist_ok=True)
    save_correspondence(cmap, out_dir / CORRESPONDENCE_NAME)
    write_json(
        out_dir / MANIFEST_NAME,
        {
            "schema": SCHEMA_VERSION,
            "rig": _rig_doc(rig),
            "capture": str(capture_dir),
            "projector_width": cmap.projector_width,
            "count": cmap.count,
            "correspondence": CORRESPONDENCE_NAME,
        },
    )
    return cmap.count


# --------------------------------------------------------------------------- reconstruct


@main.command()
@click.argument("map_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Rig JSON (default: the rig the map was decoded with)")
@click.option("--out", "-o", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True, help="Directory for depth, normals and point cloud")
def reconstruct(map_dir: Path, config_path: Optional[Path], out_dir: Path) -> None:
    """Triangulate a correspondence map and estimate PCA normals."""
    try:
        count = _reconstruct(map_dir, config_path, out_dir)
        click.echo(f"Reconstructed {count} points into: {out_dir}")
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()


def _reconstruct(map_dir: Path, config_path: Optional[Path], out_dir: Path) -> int:
    manifest = read_manifest(map_dir / MANIFEST_NAME)
    rig = load_rig(config_path) if config_path is not None else rig_from_manifest(manifest)
    camera, projector = build_camera(rig), build_projector(rig)
    cmap = load_correspondence(map_dir / manifest["correspondence"], manifest["projector_width"])

    depth, _ = triangulate(cmap, camera, projector)
    normals = pca_normals(depth, rig.estimation.pca_window)
    cloud = depth.cloud(normals)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_pfm(out_dir / DEPTH_NAME, depth.depth)
    write_pfm(out_dir / NORMALS_NAME, normals.normals)
    write_ply(out_dir / CLOUD_NAME, cloud.points, cloud.normals)
    if (map_dir / CORRESPONDENCE_NAME).resolve() != (out_dir / CORRESPONDENCE_NAME).resolve():
        shutil.copyfile(map_dir / CORRESPONDENCE_NAME, out_dir / CORRESPONDENCE_NAME)
    write_json(
        out_dir / MANIFEST_NAME,
        {
            "schema": SCHEMA_VERSION,
            "rig": _rig_doc(rig),
            "capture": manifest.get("capture"),
            "projector_width": cmap.projector_width,
            "correspondence": CORRESPONDENCE_NAME,
            "depth": DEPTH_NAME,
            "normals": NORMALS_NAME,
            "cloud": CLOUD_NAME,
            "n_points": len(cloud),
        },
    )
    return len(cloud)


# --------------------------------------------------------------------------- calibrate


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Rig configuration JSON")
@click.option("--out", "-o", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True, help="Directory for the calibration results")
@click.option("--seed", type=int, default=None, help="Override the rig seed (board poses)")
@click.option("--threads", type=int, default=None, help="Render threads (default: $SPIDERS_THREADS, then $STRUCTPOL_THREADS, or 1)")
@click.option("--ground-truth", is_flag=True, default=False, help="Inject the configured projector geometry instead of solving")
def calibrate(config_path: Path, out_dir: Path, seed: Optional[int], threads: Optional[int], ground_truth: bool) -> None:
    """
    Calibrate the projector from simulated planar boards.

    Board captures are rendered with the configured rig and decoded; the projector
    geometry is solved from them and written as a calibrated copy of the rig.
    """
    try:
        rms = _calibrate(config_path, out_dir, seed, threads, ground_truth)
        click.echo(f"Projector calibrated, column RMS {rms:.4f} px: {out_dir / RIG_NAME}")
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()


def _calibrate(config_path: Path, out_dir: Path, seed: Optional[int], threads: Optional[int], ground_truth: bool) -> float:
    rig = _with_seed(load_rig(config_path), seed)
    camera, projector = build_camera(rig), build_projector(rig)
    sequence = build_sequence(rig, projector)
    cal = rig.calibration
    poses = board_poses(cal.n_boards, cal.distance, np.radians(cal.tilt_deg), rig.seed)
    observations = simulate_board_observations(camera, projector, sequence, poses, resolve_threads(threads))

    result = calibrate_projector(
        observations,
        camera,
        projector.resolution,
        principal_y=float(projector.intrinsics[1, 2]),
        translation_y=float(projector.pose.translation[1]),
        ground_truth=projector if (ground_truth or cal.ground_truth) else None,
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    save_rig(with_projector_geometry(rig, result.intrinsics, result.pose), out_dir / RIG_NAME)
    write_json(
        out_dir / "calibration.json",
        {
            "schema": SCHEMA_VERSION,
            "intrinsics": result.intrinsics.tolist(),
            "rotvec": result.pose.rotvec.tolist(),
            "translation": result.pose.translation.tolist(),
            "rms": result.rms,
            "initial_rms": result.initial_rms,
            "n_points": result.n_points,
            "n_boards": len(observations),
            "focal_relative_error": abs(result.focal - projector.intrinsics[0, 0]) / projector.intrinsics[0, 0],
        },
    )
    return result.rms


# --------------------------------------------------------------------------- estimate


@main.command()
@click.argument("capture_dir", type=click.Path(file_okay=False, path_type=Path))
@click.argument("recon_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option("--out", "-o", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True, help="Directory for materials, albedo and refined normals")
def estimate(capture_dir: Path, recon_dir: Path, out_dir: Path) -> None:
    """
    Estimate reflectance and refine normals from a capture and its reconstruction.

    Refuses captures made with ambient light.
    """
    try:
        loss = _estimate(capture_dir, recon_dir, out_dir)
        click.echo(f"Reflectance estimated (objective {loss:.6e}): {out_dir / MATERIALS_NAME}")
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()


def _estimate(capture_dir: Path, recon_dir: Path, out_dir: Path) -> float:
    manifest = read_manifest(capture_dir / MANIFEST_NAME)
    check_ambient_free(float(manifest["ambient"]))
    rig = rig_from_manifest(manifest)
    recon = read_manifest(recon_dir / MANIFEST_NAME)
    camera, projector = build_camera(rig), build_projector(rig)
    sequence = load_patterns(capture_dir / manifest["patterns"])
    cmap = load_correspondence(recon_dir / recon["correspondence"], recon["projector_width"])
    depth = DepthMap.from_depth(read_pfm(recon_dir / recon["depth"]), camera)
    pca = read_pfm(recon_dir / recon["normals"])
    normals = NormalMap(pca, np.ones(depth.shape, dtype=bool))
    center = camera.pose.apply(projector.center)
    config = estimation_config(rig)

    channels, albedo = [], []
    refined_normals = None
    for channel in range(manifest["channels"]):
        captures = load_captures(capture_dir, manifest, channel)
        result = estimate_reflectance(captures, cmap, depth, normals, sequence, center, config)
        if refined_normals is None:
            refined_normals = result.normal_map
        albedo.append(result.albedo_map)
        channels.append(
            {
                "material": result.refined.material.to_json(),
                "initial_material": result.initial.material.to_json(),
                "initial_loss": result.initial.loss,
                "history": result.refined.history,
                "converged": result.refined.converged and result.initial.converged,
                "n_pixels": result.inputs.n_pixels,
            }
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_channels(out_dir / ALBEDO_NAME, np.stack(albedo, axis=-1))
    write_pfm(out_dir / NORMALS_NAME, refined_normals.normals)
    write_json(
        out_dir / MATERIALS_NAME,
        {
            "schema": SCHEMA_VERSION,
            "rig": _rig_doc(rig),
            "albedo": ALBEDO_NAME,
            "normals": NORMALS_NAME,
            "channels": channels,
        },
    )
    return float(channels[0]["history"][-1])


# --------------------------------------------------------------------------- relight


@main.command(name="relight")
@click.argument("materials_dir", type=click.Path(file_okay=False, path_type=Path))
@click.argument("lights_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--out", "-o", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Output PNG (a PFM is written next to it)")
def relight_cmd(materials_dir: Path, lights_path: Path, out_path: Path) -> None:
    """Render the estimated surface under directional lights."""
    try:
        _relight(materials_dir, lights_path, out_path)
        click.echo(f"Relit image written to: {out_path}")
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()


def _relight(materials_dir: Path, lights_path: Path, out_path: Path) -> None:
    doc = read_manifest(materials_dir / MATERIALS_NAME)
    camera = build_camera(rig_from_manifest(doc))
    lights = load_lights(lights_path)
    albedo = _read_channels(materials_dir / doc["albedo"])
    normal_map = NormalMap(read_pfm(materials_dir / doc["normals"]), np.ones(albedo.shape[:2], dtype=bool))
    material = MaterialParams.from_json(doc["channels"][0]["material"], albedo=albedo)
    view = -normalize(camera.pixel_directions())

    image = relight(normal_map, material, lights, view)
    write_pfm(out_path.with_suffix(".pfm"), image[..., 0] if image.shape[-1] == 1 else image[..., :3])
    preview = image[..., 0] if image.shape[-1] == 1 else image[..., :3]
    write_png(out_path, linear_to_srgb(preview))


# --------------------------------------------------------------------------- eval


@main.command(name="eval")
@click.argument("pred_depth", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("gt_depth", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--pred-normals", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Predicted normals PFM")
@click.option("--gt-normals", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Ground-truth normals PFM")
@click.option("--out", "-o", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=Path(REPORT_NAME), help="Report JSON")
def eval_cmd(pred_depth: Path, gt_depth: Path, pred_normals: Optional[Path], gt_normals: Optional[Path], out_path: Path) -> None:
    """Compare depth (and optionally normals) against ground truth."""
    try:
        report = _evaluate(pred_depth, gt_depth, pred_normals, gt_normals, out_path)
        click.echo(
            f"Mean depth error {report['mean_depth_error']}, median {report['median_depth_error']}, "
            f"coverage {report['coverage']:.3f}: {out_path}"
        )
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()


def _depth_only(path: Path) -> DepthMap:
    depth = read_pfm(path)
    return DepthMap(depth, np.zeros(depth.shape + (3,)), np.isfinite(depth))


def _normals_only(path: Path) -> NormalMap:
    normals = read_pfm(path)
    return NormalMap(np.nan_to_num(normals), np.all(np.isfinite(normals), axis=-1))


def _evaluate(pred_depth: Path, gt_depth: Path, pred_normals: Optional[Path], gt_normals: Optional[Path], out_path: Path) -> Dict[str, Any]:
    pred_n = _normals_only(pred_normals) if pred_normals is not None else None
    gt_n = _normals_only(gt_normals) if gt_normals is not None else None
    report = evaluate(_depth_only(pred_depth), _depth_only(gt_depth), pred_n, gt_n)
    doc = dict(report.to_json(), schema=SCHEMA_VERSION)
    write_json(out_path, doc)
    return doc


if __name__ == "__main__":
    main()
