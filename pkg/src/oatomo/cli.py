"""Command-line front end.

Subcommands: phantom, forward, degrade, reconstruct, scan, evaluate. Every
command reads the same JSON config (``--config``) with ``--set key=value``
overrides. Errors print one line starting with ``ERROR:``; exit codes are 0
on success, 1 for runtime and data errors and 2 for usage and config errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io as _io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, solvers
from .config import METHODS, ConfigError, config_digest, load_config
from .core import DetectionGeometry, ImageGrid2D, Sinogram, make_geometry
from .forward import SparseModelMatrix, build_model_matrix, load_matrix, normalize_matrix, save_matrix
from .io import (
    atomic_write_text,
    export_montage,
    read_image,
    read_sinogram,
    write_image,
    write_sinogram,
)
from .metrics import EvalReport, mad, peak_to_peak, profile_slice
from .phantoms import PhantomSpec, add_gaussian_noise, make_phantom, subsample_projections

CACHE_ENV = "OATOMO_CACHE"


class UsageError(Exception):
    """Bad invocation or configuration (exit code 2)."""


class DataError(Exception):
    """Runtime or data problem (exit code 1)."""


# ---------------------------------------------------------------- helpers


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible sidecars
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _provenance(args, cfg: dict, **extra) -> dict:
    prov = {
        "command": ["oatomo"] + list(args.argv),
        "config_digest": config_digest(cfg),
        "config": cfg,
        "version": __version__,
        "timestamp": _timestamp(),
    }
    prov.update(extra)
    return prov


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} '{p}' does not exist")
    return p


def _grid_from_config(cfg: dict) -> ImageGrid2D:
    g = cfg["grid"]
    try:
        return ImageGrid2D(int(g["nx"]), int(g["ny"]), float(g["pixel_mm"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid grid block: {exc}") from exc


def _geometry_from_config(cfg: dict, grid: ImageGrid2D) -> DetectionGeometry:
    g = cfg["geometry"]
    try:
        return make_geometry(
            grid,
            radius_mm=float(g["radius_mm"]),
            arc_deg=float(g["arc_deg"]),
            n_detectors=int(g["n_detectors"]),
            sound_speed_mm_per_us=float(g["sound_speed_mm_per_us"]),
            grueneisen=float(g["grueneisen"]),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid geometry block: {exc}") from exc


def _check_geometry(cfg: dict, geom: DetectionGeometry, grid: ImageGrid2D) -> None:
    """The sinogram's own geometry must agree with the configured one."""
    ref = _geometry_from_config(cfg, grid)
    for key in ("radius_mm", "arc_deg", "sound_speed_mm_per_us", "grueneisen", "t0_us", "dt_us", "n_samples"):
        a, b = getattr(ref, key), getattr(geom, key)
        if not np.isclose(a, b, rtol=1e-12, atol=0):
            raise DataError(f"geometry mismatch: sinogram {key}={b}, config {key}={a}")
    if not geom.angles_deg and geom.n_detectors != ref.n_detectors:
        raise DataError(
            f"geometry mismatch: sinogram has {geom.n_detectors} detectors, config {ref.n_detectors}"
        )


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, ".oatomo-cache"))


def matrix_key(grid: ImageGrid2D, geom: DetectionGeometry, arc_step_frac: float) -> str:
    doc = {
        "grid": [grid.nx, grid.ny, grid.pixel_mm],
        "geometry": geom.to_dict(),
        "arc_step_frac": float(arc_step_frac),
        "format": 2,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:32]


def cached_matrix(grid: ImageGrid2D, geom: DetectionGeometry, arc_step_frac: float) -> tuple[SparseModelMatrix, Path]:
    """Unnormalized model matrix, built once per (grid, geometry, arc step)."""
    d = cache_dir()
    path = d / f"{matrix_key(grid, geom, arc_step_frac)}.oamm"
    if path.exists():
        try:
            return load_matrix(path), path
        except ValueError:
            path.unlink()
    M = build_model_matrix(grid, geom, arc_step_frac)
    d.mkdir(parents=True, exist_ok=True)
    save_matrix(M, path)
    return M, path


def _method_params(cfg: dict, name: str, overrides: dict | None = None) -> dict:
    if name not in METHODS:
        raise UsageError(f"unknown method '{name}'")
    params = dict(cfg["method"][name])
    params.update(overrides or {})
    return params


def _solver_config(name: str, params: dict) -> solvers.SolverConfig:
    keys = {
        "tvl1": ("alpha", "mu", "iters", "haar_levels", "extrapolation", "trace_stride"),
        "a2tv": ("lam", "k", "sigma_px", "rho_px", "iters", "tensor_update_stride", "extrapolation", "trace_stride"),
    }[name]
    try:
        return solvers.SolverConfig(**{k: params[k] for k in keys})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {name} parameters: {exc}") from exc


def run_method(name: str, params: dict, M: SparseModelMatrix, p: np.ndarray, shape):
    """Reconstruct with ``M`` unnormalized; data are rescaled with the matrix.

    Returns the image and an energy trace (``None`` for the direct solvers).
    """
    if name == "lsqr":
        u, _ = solvers.lsqr(M, p, int(params["iters"]), float(params["atol"]))
        return np.reshape(u, shape), None
    if name == "tikhonov":
        u = solvers.tikhonov(M, p, float(params["lam"]), int(params["iters"]), float(params["atol"]))
        return np.reshape(u, shape), None
    cfg = _solver_config(name, params)
    Mn = normalize_matrix(M)
    pn = np.ravel(p) / Mn.norm_factor
    if name == "tvl1":
        return solvers.chambolle_pock_tvl1(Mn, pn, cfg, shape)
    return solvers.chambolle_pock_a2tv(Mn, pn, cfg, shape)


# ---------------------------------------------------------------- commands


def cmd_phantom(args, cfg) -> int:
    grid = _grid_from_config(cfg)
    if grid.nx != grid.ny:
        raise UsageError("phantoms require a square grid (grid.nx == grid.ny)")
    ph = dict(cfg["phantom"])
    try:
        spec = PhantomSpec.from_dict({**ph, "size": grid.nx, "pixel_mm": grid.pixel_mm})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid phantom block: {exc}") from exc
    img = make_phantom(spec)
    write_image(img, args.out, _provenance(args, cfg, seed=spec.seed, phantom=spec.to_dict()))
    print(f"wrote {args.out}")
    return 0


def cmd_forward(args, cfg) -> int:
    img = read_image(_require_file(args.image, "image"))
    geom = _geometry_from_config(cfg, img)
    M, mpath = cached_matrix(img, geom, cfg["geometry"]["arc_step_frac"])
    p = Sinogram(geom.n_detectors, geom.n_samples, M @ img.values)
    write_sinogram(p, geom, args.out, _provenance(args, cfg, matrix=mpath.name))
    print(f"wrote {args.out}")
    return 0


def cmd_degrade(args, cfg) -> int:
    p, geom = read_sinogram(_require_file(args.sinogram, "sinogram"))
    d = cfg["degrade"]
    try:
        p = add_gaussian_noise(p, float(d["rel_std"]), int(d["seed"]))
        if d["n_keep"] is not None:
            p, geom = subsample_projections(p, geom, int(d["n_keep"]))
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    write_sinogram(p, geom, args.out, _provenance(args, cfg, seed=int(d["seed"])))
    print(f"wrote {args.out}")
    return 0


def _load_problem(args, cfg):
    p, geom = read_sinogram(_require_file(args.sinogram, "sinogram"))
    grid = _grid_from_config(cfg)
    _check_geometry(cfg, geom, grid)
    M, mpath = cached_matrix(grid, geom, cfg["geometry"]["arc_step_frac"])
    return p, geom, grid, M, mpath


def _trace_path(out: Path) -> Path:
    return out.with_name(out.name + ".trace.csv")


def cmd_reconstruct(args, cfg) -> int:
    name = args.method or cfg["method"]["name"]
    params = _method_params(cfg, name)
    p, _, grid, M, _ = _load_problem(args, cfg)
    u, trace = run_method(name, params, M, p.values, grid.shape)
    out = Path(args.out)
    write_image(grid.with_values(u), out, _provenance(args, cfg, method=name, params=params))
    if trace is not None:
        trace.to_csv(args.trace or _trace_path(out))
    print(f"wrote {out}")
    return 0


_WORKER: dict = {}


def _tile_worker(task):
    """Run one scan tile; the matrix is loaded once per worker process."""
    mpath, name, params, p, shape = task
    if _WORKER.get("path") != mpath:
        _WORKER["path"] = mpath
        _WORKER["M"] = load_matrix(mpath)
    u, trace = run_method(name, params, _WORKER["M"], p, shape)
    return u, trace


def cmd_scan(args, cfg) -> int:
    scan = cfg["scan"]
    name = args.method or scan["method"]
    if name not in METHODS:
        raise UsageError(f"unknown method '{name}'")
    axes = list(scan["params"].items())
    for key, _ in axes:
        if key not in cfg["method"][name]:
            raise UsageError(f"scan parameter '{key}' is not a {name} parameter")
    if len(axes) == 1:
        axes.append(("_", [None]))
    (k1, v1), (k2, v2) = axes
    ref = read_image(_require_file(args.reference, "reference image"))
    p, _, grid, M, mpath = _load_problem(args, cfg)
    if ref.shape != grid.shape:
        raise DataError(f"reference shape {ref.shape} does not match grid {grid.shape}")
    tiles = []
    for a in v1:
        for b in v2:
            over = {k1: a} if k2 == "_" else {k1: a, k2: b}
            tiles.append(over)
    tasks = [(str(mpath), name, _method_params(cfg, name, over), p.values, grid.shape) for over in tiles]
    for t in tasks:
        if name in ("tvl1", "a2tv"):
            _solver_config(name, t[2])

    jobs = max(1, int(args.jobs))
    results = []
    if jobs == 1:
        for over, t in zip(tiles, tasks):
            try:
                results.append(_tile_worker(t))
            except Exception as exc:
                raise DataError(f"scan tile {over} failed: {exc}") from exc
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_tile_worker, t) for t in tasks]
            for over, fut in zip(tiles, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    for f in futures:
                        f.cancel()
                    raise DataError(f"scan tile {over} failed: {exc}") from exc

    out_dir = Path(args.out_dir)
    (out_dir / "tiles").mkdir(parents=True, exist_ok=True)
    rows = []
    labels = []
    images = []
    for n, (over, (u, trace)) in enumerate(zip(tiles, results)):
        m = mad(ref.values, u)
        tile_path = out_dir / "tiles" / f"tile_{n:02d}.img"
        write_image(
            grid.with_values(u), tile_path,
            _provenance(args, cfg, method=name, params=_method_params(cfg, name, over)),
        )
        if trace is not None:
            trace.to_csv(_trace_path(tile_path))
        rows.append({"tile": n, **over, "mad": m})
        labels.append({**over, "mad": m, "file": tile_path.name})
        images.append(u)
    n_cols = len(v2)
    export_montage(images, len(v1), n_cols, out_dir / "montage.pgm", labels)

    rows_sorted = sorted(rows, key=lambda r: (r["mad"], r["tile"]))
    fields = ["tile"] + [k for k in (k1, k2) if k != "_"] + ["mad"]
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows_sorted:
        w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in fields})
    atomic_write_text(out_dir / "scan.csv", buf.getvalue())
    best = rows_sorted[0]
    summary = {"method": name, "best": best, "n_tiles": len(rows), "provenance": _provenance(args, cfg)}
    atomic_write_text(out_dir / "scan.json", json.dumps(summary, indent=2) + "\n")
    desc = " ".join(f"{k}={best[k]}" for k in fields[1:-1])
    print(f"best tile {best['tile']}: {desc} mad={best['mad']:.6g}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    ref = read_image(_require_file(args.reference, "reference image"))
    recons = [read_image(_require_file(r, "reconstruction")) for r in args.recon]
    labels = args.label or [Path(r).stem for r in args.recon]
    if len(labels) != len(recons):
        raise UsageError("give one --label per --recon")
    ev = cfg["evaluate"]
    report = EvalReport()
    for label, rec in zip(labels, recons):
        if rec.shape != ref.shape:
            raise DataError(f"{label}: shape {rec.shape} does not match reference {ref.shape}")
        report.add(label, mad(ref, rec))
    if ev["index"] is not None:
        idx = int(ev["index"])
        try:
            report.reference_slice = profile_slice(ref, ev["axis"], idx, bool(ev["normalize"]))
            for label, rec in zip(labels, recons):
                prof = profile_slice(rec, ev["axis"], idx, bool(ev["normalize"]))
                report.slices[label] = prof
                if ev["window"] is not None:
                    report.peak_to_peak[label] = peak_to_peak(prof, tuple(ev["window"]))
        except (IndexError, ValueError) as exc:
            raise DataError(str(exc)) from exc
        if args.slice_csv:
            report.write_slice_csv(args.slice_csv)
    text = report.to_json()
    if args.out:
        atomic_write_text(args.out, text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key by dotted path (repeatable)")

    parser = _Parser(prog="oatomo", description="Optoacoustic tomography reconstruction toolkit.")
    parser.add_argument("--version", action="version", version=f"oatomo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", parents=[common], help="generate a phantom image")
    s.add_argument("--out", required=True)

    s = sub.add_parser("forward", parents=[common], help="simulate a sinogram")
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("degrade", parents=[common], help="add noise and/or drop detectors")
    s.add_argument("--sinogram", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("reconstruct", parents=[common], help="reconstruct an image")
    s.add_argument("--sinogram", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", help="override method.name")
    s.add_argument("--trace", help="energy trace CSV (default <out>.trace.csv)")

    s = sub.add_parser("scan", parents=[common], help="parameter scan with montage and MAD table")
    s.add_argument("--sinogram", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--method", help="override scan.method")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("evaluate", parents=[common], help="MAD and line profiles")
    s.add_argument("--reference", required=True)
    s.add_argument("--recon", action="append", required=True)
    s.add_argument("--label", action="append")
    s.add_argument("--out", help="JSON report path")
    s.add_argument("--slice-csv")
    return parser


COMMANDS = {
    "phantom": cmd_phantom,
    "forward": cmd_forward,
    "degrade": cmd_degrade,
    "reconstruct": cmd_reconstruct,
    "scan": cmd_scan,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        method = getattr(args, "method", None)
        if method is not None and method not in METHODS:
            raise UsageError(f"unknown method '{method}'")
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, OSError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
