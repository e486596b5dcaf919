"""Error measures and line profiles for comparing reconstructions."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ImageGrid2D

__all__ = ["mad", "profile_slice", "peak_to_peak", "EvalReport", "SliceProfile"]


def _values(u) -> np.ndarray:
    if isinstance(u, ImageGrid2D):
        return u.values
    return np.asarray(u, dtype=np.float64)


def mad(u_orig, u_star) -> float:
    """Mean absolute distance ``mean(|u_orig - u_star|)``."""
    a, b = _values(u_orig), _values(u_star)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True, eq=False)
class SliceProfile:
    """Pixel values along one row or column with their coordinates in mm."""

    positions: np.ndarray
    values: np.ndarray
    axis: str
    index: int


def profile_slice(u, axis: str, index: int, normalize: bool = False, pixel_mm: float | None = None) -> SliceProfile:
    """Extract a row (``axis="row"``) or column (``axis="col"``).

    Positions are pixel-center coordinates along the slice. With
    ``normalize`` the values are divided by their maximum.
    """
    if isinstance(u, ImageGrid2D):
        pixel_mm = u.pixel_mm if pixel_mm is None else pixel_mm
    h = 1.0 if pixel_mm is None else float(pixel_mm)
    img = _values(u)
    if img.ndim != 2:
        raise ValueError("expected a 2D image")
    if axis in ("row", "x"):
        limit = img.shape[0]
        take = lambda i: img[i, :]  # noqa: E731
    elif axis in ("col", "column", "y"):
        limit = img.shape[1]
        take = lambda i: img[:, i]  # noqa: E731
    else:
        raise ValueError(f"axis must be 'row' or 'col', got {axis!r}")
    if not 0 <= index < limit:
        raise IndexError(f"{axis} index {index} out of range [0, {limit})")
    vals = np.array(take(index), dtype=np.float64)
    n = vals.size
    pos = (np.arange(n) - (n - 1) / 2.0) * h
    if normalize:
        peak = vals.max()
        if not peak > 0:
            raise ValueError("cannot normalize a slice whose maximum is not positive")
        vals = vals / peak
    return SliceProfile(pos, vals, "row" if axis in ("row", "x") else "col", int(index))


def peak_to_peak(profile: SliceProfile, window: tuple[float, float] | None = None) -> float:
    """``max - min`` of the slice values whose positions lie inside ``window``."""
    vals, pos = profile.values, profile.positions
    if window is not None:
        lo, hi = window
        if hi < lo:
            raise ValueError("window must satisfy lo <= hi")
        sel = (pos >= lo) & (pos <= hi)
        if not sel.any():
            raise ValueError(f"window {window} contains no samples")
        vals = vals[sel]
    return float(vals.max() - vals.min())


@dataclass
class EvalReport:
    """MAD per labelled reconstruction plus optional slice data.

    ``labels`` keeps input order. ``slices`` maps a label to its profile and
    ``reference_slice`` holds the reference profile on the same positions.
    """

    labels: list[str] = field(default_factory=list)
    mads: list[float] = field(default_factory=list)
    slices: dict = field(default_factory=dict)
    reference_slice: SliceProfile | None = None
    peak_to_peak: dict = field(default_factory=dict)

    def add(self, label: str, value: float) -> None:
        if value < 0:
            raise ValueError("MAD is non-negative")
        self.labels.append(label)
        self.mads.append(float(value))

    @property
    def mad(self) -> float:
        """MAD of the first entry (the usual single-reconstruction case)."""
        return self.mads[0]

    def to_json(self, path=None) -> str:
        doc = {
            "mad": dict(zip(self.labels, self.mads)),
            "order": list(self.labels),
        }
        if self.peak_to_peak:
            doc["peak_to_peak"] = dict(self.peak_to_peak)
        text = json.dumps(doc, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def write_slice_csv(self, path) -> None:
        if not self.slices:
            raise ValueError("report has no slice data")
        first = next(iter(self.slices.values()))
        cols = ["position_mm"]
        data = [first.positions]
        if self.reference_slice is not None:
            cols.append("reference")
            data.append(self.reference_slice.values)
        for label, prof in self.slices.items():
            cols.append(label)
            data.append(prof.values)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*data):
                w.writerow([repr(float(v)) for v in row])
