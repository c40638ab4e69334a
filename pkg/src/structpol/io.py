""" Readers and writers for images, point clouds, meshes and manifests. """

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from PIL import Image

from structpol.config import SCHEMA_VERSION
from structpol.exceptions import FileFormatError, ManifestError

logger = logging.getLogger(__name__)

SRGB_GAMMA = 2.2


def write_pfm(path: Path, array: np.ndarray) -> None:
    """
    Write a float image as little-endian 32-bit PFM.

    (H, W) arrays become greyscale `Pf` files, (H, W, 3) arrays colour `PF` files. Rows
    are stored bottom to top as the format requires.
    """
    data = np.asarray(array, dtype="<f4")
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise FileFormatError(f"PFM holds (H, W) or (H, W, 3) arrays, got {data.shape}")
    height, width = data.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(f"{header}\n{width} {height}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path: Path) -> np.ndarray:
    """Read a PFM file into a float64 array with the first row at the top."""
    raw = Path(path).read_bytes()
    try:
        lines = raw.split(b"\n", 3)
        header = lines[0].strip()
        width, height = (int(v) for v in lines[1].split())
        scale = float(lines[2])
        payload = lines[3]
    except (IndexError, ValueError) as exc:
        raise FileFormatError(f"{path} is not a PFM file: {exc}") from exc
    if header not in (b"Pf", b"PF"):
        raise FileFormatError(f"{path} has unknown PFM header {header!r}")
    channels = 3 if header == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * channels * 4
    if len(payload) < expected:
        raise FileFormatError(f"{path} is truncated: {len(payload)} of {expected} bytes")
    data = np.frombuffer(payload[:expected], dtype=dtype).astype(float)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape)[::-1].copy()


def write_pgm(path: Path, command: np.ndarray) -> None:
    """Write a command image (floats in [0, 255]) as a 16-bit binary PGM, scaled by 257."""
    data = np.clip(np.rint(np.asarray(command, dtype=float) * 257.0), 0, 65535).astype(">u2")
    height, width = data.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    """Read a 16-bit binary PGM written by `write_pgm` back into command units."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FileFormatError(f"{path} is not a binary PGM file")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    payload = raw[len(raw) - width * height * np.dtype(dtype).itemsize :]
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(float)
    return data / 257.0 if maxval > 255 else data


def write_ply(path: Path, points: np.ndarray, normals: Optional[np.ndarray] = None) -> None:
    """Write an ASCII PLY point cloud, with per-vertex normals when given; non-finite points are skipped."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    keep = np.all(np.isfinite(points), axis=1)
    columns = [points[keep]]
    props = ["x", "y", "z"]
    if normals is not None:
        columns.append(np.asarray(normals, dtype=float).reshape(-1, 3)[keep])
        props += ["nx", "ny", "nz"]
    rows = np.hstack(columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["ply", "format ascii 1.0", f"element vertex {len(rows)}"] + [f"property float {p}" for p in props] + ["end_header"]
    with path.open("w", encoding="ascii") as fh:
        fh.write("\n".join(header) + "\n")
        np.savetxt(fh, rows, fmt="%.9g")


def read_ply(path: Path) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Read an ASCII PLY written by `write_ply`."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "ply":
        raise FileFormatError(f"{path} is not a PLY file")
    end = lines.index("end_header")
    props = [line.split()[-1] for line in lines[:end] if line.startswith("property")]
    count = next(int(line.split()[-1]) for line in lines if line.startswith("element vertex"))
    data = np.array([[float(v) for v in line.split()] for line in lines[end + 1 : end + 1 + count]]).reshape(count, len(props))
    normals = data[:, 3:6] if "nx" in props else None
    return data[:, :3], normals


def read_obj(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vertices and triangular faces of a Wavefront OBJ mesh.

    Polygons are fan-triangulated; texture and normal indices are ignored.
    """
    vertices, faces = [], []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                vertices.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(token.split("/")[0]) for token in parts[1:]]
                idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
        except ValueError as exc:
            raise FileFormatError(f"{path}:{number}: {exc}") from exc
    if not vertices or not faces:
        raise FileFormatError(f"{path} contains no triangles")
    faces_arr = np.asarray(faces, dtype=np.int64)
    if faces_arr.min() < 0 or faces_arr.max() >= len(vertices):
        raise FileFormatError(f"{path} references vertices that do not exist")
    return np.asarray(vertices, dtype=float), faces_arr


def write_png(path: Path, image: np.ndarray) -> None:
    """Write an 8-bit PNG from a [0, 1] float image (H, W) or (H, W, 3)."""
    data = np.clip(np.nan_to_num(np.asarray(image, dtype=float)), 0.0, 1.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.rint(data * 255.0).astype(np.uint8)).save(path)


def linear_to_srgb(image: np.ndarray, gamma: float = SRGB_GAMMA) -> np.ndarray:
    return np.power(np.clip(image, 0.0, None), 1.0 / gamma)


def tonemap(intensity: np.ndarray) -> np.ndarray:
    """Scale to the 99th percentile and gamma-encode."""
    finite = np.nan_to_num(np.asarray(intensity, dtype=float))
    peak = np.percentile(finite, 99.0) if finite.size else 0.0
    return linear_to_srgb(finite / peak if peak > 0 else finite)


def polarization_preview(aolp: np.ndarray, dolp: np.ndarray) -> np.ndarray:
    """RGB float image with AoLP as hue and DoLP as value."""
    planes = [
        np.rint(np.mod(np.nan_to_num(aolp), np.pi) / np.pi * 255.0),
        np.full(np.shape(aolp), 255.0),
        np.rint(np.clip(np.nan_to_num(dolp), 0.0, 1.0) * 255.0),
    ]
    hsv = Image.merge("HSV", [Image.fromarray(p.astype(np.uint8)) for p in planes])
    return np.asarray(hsv.convert("RGB"), dtype=float) / 255.0


def write_json(path: Path, doc: Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def read_manifest(path: Path) -> Dict[str, Any]:
    """
    Load a JSON manifest and check its schema version.

    Raises
    ------
    ManifestError
        If the file is missing, not JSON, or carries another schema version.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path} is not valid JSON: {exc}") from exc
    if doc.get("schema") != SCHEMA_VERSION:
        raise ManifestError(f"{path} has schema {doc.get('schema')!r}, expected {SCHEMA_VERSION}")
    return doc
