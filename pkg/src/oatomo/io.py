"""On-disk formats: raw f64 payloads with JSON sidecars, and 16-bit PGM previews.

A payload ``name.img`` holds little-endian float64 values in row-major
order. Its sidecar ``name.img.json`` records the shape, the dtype tag, the
physical metadata and free-form provenance.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .core import DetectionGeometry, ImageGrid2D, Sinogram

__all__ = [
    "SCHEMA_VERSION",
    "write_image",
    "read_image",
    "write_sinogram",
    "read_sinogram",
    "write_tensor_field",
    "read_sidecar",
    "export_pgm",
    "export_montage",
    "atomic_write_bytes",
    "atomic_write_text",
]

SCHEMA_VERSION = 1
DTYPE_TAG = "f64le"
_LE = np.dtype("<f8")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _payload(values: np.ndarray) -> bytes:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite values (NaN or Inf)")
    return np.ascontiguousarray(arr, dtype=_LE).tobytes()


def _write_pair(path, values: np.ndarray, meta: dict) -> None:
    data = _payload(values)
    doc = {"schema_version": SCHEMA_VERSION, "shape": list(values.shape), "dtype": DTYPE_TAG}
    doc.update(meta)
    atomic_write_bytes(path, data)
    atomic_write_text(_sidecar_path(path), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_sidecar(path) -> dict:
    side = _sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"missing sidecar {side}")
    doc = json.loads(side.read_text())
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{side}: unknown schema_version {version!r}")
    if doc.get("dtype") != DTYPE_TAG:
        raise ValueError(f"{side}: unsupported dtype {doc.get('dtype')!r}")
    return doc


def _read_pair(path) -> tuple[np.ndarray, dict]:
    doc = read_sidecar(path)
    shape = tuple(int(s) for s in doc["shape"])
    raw = Path(path).read_bytes()
    expected = 8 * int(np.prod(shape))
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size mismatch, expected {expected} bytes for shape "
            f"{shape}, found {len(raw)} bytes"
        )
    return np.frombuffer(raw, dtype=_LE).astype(np.float64).reshape(shape), doc


def write_image(grid: ImageGrid2D, path, provenance: dict | None = None) -> None:
    _write_pair(path, grid.values, {"pixel_mm": grid.pixel_mm, "provenance": provenance or {}})


def read_image(path) -> ImageGrid2D:
    values, doc = _read_pair(path)
    if values.ndim != 2:
        raise ValueError(f"{path}: image shape must be 2D, got {values.shape}")
    if "pixel_mm" not in doc:
        raise ValueError(f"{path}: sidecar lacks pixel_mm")
    ny, nx = values.shape
    return ImageGrid2D(nx, ny, float(doc["pixel_mm"]), values)


def write_sinogram(p: Sinogram, geom: DetectionGeometry, path, provenance: dict | None = None) -> None:
    if p.shape != (geom.n_detectors, geom.n_samples):
        raise ValueError(f"sinogram shape {p.shape} does not match geometry")
    _write_pair(path, p.values, {"geometry": geom.to_dict(), "provenance": provenance or {}})


def read_sinogram(path) -> tuple[Sinogram, DetectionGeometry]:
    values, doc = _read_pair(path)
    if "geometry" not in doc:
        raise ValueError(f"{path}: sidecar lacks a geometry block")
    try:
        geom = DetectionGeometry.from_dict(doc["geometry"])
    except TypeError as exc:
        raise ValueError(f"{path}: malformed geometry block: {exc}") from exc
    if values.shape != (geom.n_detectors, geom.n_samples):
        raise ValueError(
            f"{path}: payload shape {values.shape} does not match geometry "
            f"({geom.n_detectors}, {geom.n_samples})"
        )
    return Sinogram(geom.n_detectors, geom.n_samples, values), geom


def write_tensor_field(A, path, provenance: dict | None = None) -> None:
    """Store ``(a11, a12, a22)`` per pixel as a ``(ny, nx, 3)`` payload."""
    stack = np.stack([A.a11, A.a12, A.a22], axis=-1)
    meta = {
        "components": ["a11", "a12", "a22"],
        "sigma_px": A.sigma_px,
        "rho_px": A.rho_px,
        "k": A.k,
        "provenance": provenance or {},
    }
    _write_pair(path, stack, meta)


def _to_u16(u: np.ndarray, window) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if window is None or window == "percentile":
        lo, hi = np.percentile(u, [1, 99])
        if hi <= lo:
            hi = lo + 1.0
    else:
        lo, hi = map(float, window)
        if not hi > lo:
            raise ValueError(f"window must satisfy hi > lo, got {window}")
    scaled = np.clip((u - lo) / (hi - lo), 0.0, 1.0)
    return np.rint(scaled * 65535.0).astype(">u2")


def _write_pgm(img16: np.ndarray, path) -> None:
    h, w = img16.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    atomic_write_bytes(path, header + img16.astype(">u2").tobytes())


def export_pgm(u, path, window=None) -> None:
    """Binary 16-bit PGM; ``window=(lo, hi)`` or ``None`` for the 1st/99th percentiles."""
    values = u.values if isinstance(u, ImageGrid2D) else np.asarray(u, dtype=np.float64)
    _write_pgm(_to_u16(values, window), path)


def export_montage(images, rows: int, cols: int, path, labels=None, window=None, sep: int = 2) -> dict:
    """Tile images row by row with ``sep``-pixel black separators.

    Each tile is mapped with the shared ``window`` (percentiles of all tiles
    when ``None``). A JSON legend ``<path>.json`` lists each tile's position
    and label entry (typically parameters and MAD). Returns the legend.
    """
    images = [im.values if isinstance(im, ImageGrid2D) else np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ValueError("montage needs at least one image")
    if len(images) > rows * cols:
        raise ValueError(f"{len(images)} images do not fit a {rows}x{cols} montage")
    th, tw = images[0].shape
    if any(im.shape != (th, tw) for im in images):
        raise ValueError("all montage tiles must have the same shape")
    if labels is not None and len(labels) != len(images):
        raise ValueError("labels must match the number of images")
    if window is None:
        lo, hi = np.percentile(np.concatenate([im.ravel() for im in images]), [1, 99])
        window = (float(lo), float(hi) if hi > lo else float(lo) + 1.0)
    canvas = np.zeros((rows * th + (rows - 1) * sep, cols * tw + (cols - 1) * sep), dtype=">u2")
    tiles = []
    for n, im in enumerate(images):
        r, c = divmod(n, cols)
        y, x = r * (th + sep), c * (tw + sep)
        canvas[y : y + th, x : x + tw] = _to_u16(im, window)
        entry = {"tile": n, "row": r, "col": c, "x": x, "y": y}
        if labels is not None:
            entry.update(labels[n] if isinstance(labels[n], dict) else {"label": labels[n]})
        tiles.append(entry)
    _write_pgm(canvas, path)
    legend = {
        "rows": rows,
        "cols": cols,
        "tile_shape": [th, tw],
        "separator_px": sep,
        "window": list(window),
        "tiles": tiles,
    }
    atomic_write_text(_sidecar_path(path), json.dumps(legend, indent=2) + "\n")
    return legend
