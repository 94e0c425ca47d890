"""Disk-area integral invariant along the midcurve.

A probe disk is centred on the curve and split in two by it. The ratio of
the larger to the smaller part is 1 on a straight line and grows with the
bending of the curve inside the disk. Areas come from midpoint quadrature
over lattice rows anchored at the disk centre, with each row's chord split
exactly at the curve, so the estimate does not depend on where the curve
sits in the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .errors import DegenerateError, DomainError, SupportError
from .mask_io import ScanGrid, SoftMask
from .midcurve import MidCurve, eval_curve_at

DEFAULT_RADIUS = 20.0
DEFAULT_GRID_STEP = 0.25
DEFAULT_SMOOTH_WINDOW = 5


@dataclass(frozen=True)
class DiskSplit:
    center: tuple
    radius: float
    area_a: float
    area_b: float


@dataclass(frozen=True, eq=False)
class CurvatureProfile:
    probe_radius: float
    rows: np.ndarray
    kappa: np.ndarray
    valid_row_range: tuple

    def __len__(self):
        return self.rows.size

    def entries(self):
        return list(zip(self.rows.tolist(), self.kappa.tolist()))

    def to_csv(self) -> str:
        lines = ["row,kappa"] + [f"{r},{k!r}" for r, k in self.entries()]
        return "\n".join(lines) + "\n"


def _lattice(radius: float, grid_step: float):
    n = math.ceil(radius / grid_step)
    return (np.arange(-n, n) + 0.5) * grid_step


def _split_lengths(offsets, radius, du):
    """Chord length on each side of the curve for every lattice row of every disk.

    ``offsets`` holds ``x(center_row + du) - center_col`` with shape
    ``(n_disks, len(du))``. Along lattice row ``du`` the disk covers
    ``|dv| <= sqrt(radius**2 - du**2)``; side A is the part with ``dv`` left
    of the curve. Columns are integrated exactly and rows by the midpoint
    rule, so the result carries no column quantization.
    """
    half = np.sqrt(np.maximum(radius * radius - du * du, 0.0))
    cut = np.clip(offsets, -half, half)
    return (cut + half).sum(axis=1), (half - cut).sum(axis=1)


def _check_support(curve: MidCurve, center_row: float, radius: float):
    if center_row - radius < curve.row_start or center_row + radius > curve.row_end:
        raise SupportError(
            f"insufficient support: disk rows [{center_row - radius}, {center_row + radius}] "
            f"exceed curve rows [{curve.row_start}, {curve.row_end}]"
        )


def split_disk(curve: MidCurve, center_row: float, radius: float = DEFAULT_RADIUS,
               grid_step: float = DEFAULT_GRID_STEP) -> DiskSplit:
    """Areas of the probe disk on each side of the curve.

    Side A holds lattice points left of the curve (smaller column).
    """
    if radius <= 0 or grid_step <= 0:
        raise DomainError("radius and grid_step must be positive")
    _check_support(curve, center_row, radius)
    du = _lattice(radius, grid_step)
    center_col = eval_curve_at(curve, center_row)
    offsets = eval_curve_at(curve, center_row + du) - center_col
    len_a, len_b = _split_lengths(offsets[None, :], radius, du)
    return DiskSplit((float(center_row), float(center_col)), float(radius),
                     float(len_a[0]) * grid_step, float(len_b[0]) * grid_step)


def kappa_at(split: DiskSplit) -> float:
    """Ratio of the larger to the smaller disk part; 1 for a straight line."""
    small = min(split.area_a, split.area_b)
    if small <= 0:
        raise DegenerateError("degenerate split: one side of the disk is empty")
    return max(split.area_a, split.area_b) / small


def curvature_profile(curve: MidCurve, radius: float = DEFAULT_RADIUS, grid_step: float = DEFAULT_GRID_STEP,
                      smooth_window: int = DEFAULT_SMOOTH_WINDOW) -> CurvatureProfile:
    """Median-smoothed kappa at every row whose disk stays within the curve.

    Rows within ``radius`` of either curve end are omitted rather than
    extrapolated.
    """
    if radius <= 0 or grid_step <= 0:
        raise DomainError("radius and grid_step must be positive")
    if smooth_window < 1 or smooth_window % 2 == 0:
        raise DomainError("smooth_window must be a positive odd number")
    first = curve.row_start + math.ceil(radius)
    last = curve.row_end - math.ceil(radius)
    if last < first:
        raise SupportError(f"curve of {len(curve)} rows is too short for probe radius {radius}")
    centers = np.arange(first, last + 1)
    du = _lattice(radius, grid_step)
    center_cols = curve.cols[centers - curve.row_start]
    sample_rows = centers[:, None] + du[None, :]
    offsets = np.interp(sample_rows, curve.rows, curve.cols) - center_cols[:, None]
    len_a, len_b = _split_lengths(offsets, radius, du)
    small = np.minimum(len_a, len_b)
    if np.any(small <= 0):
        bad = int(centers[np.argmax(small <= 0)])
        raise DegenerateError(f"degenerate split at row {bad}: one side of the disk is empty")
    kappa = np.maximum(len_a, len_b) / small
    if smooth_window > 1:
        kappa = median_filter(kappa, size=smooth_window, mode="nearest")
    return CurvatureProfile(float(radius), centers, kappa, (int(first), int(last)))


def max_curvature_score(profile: CurvatureProfile) -> float:
    if len(profile) == 0:
        raise SupportError("empty curvature profile")
    return float(profile.kappa.max())


def heatmap_values(profile: CurvatureProfile, mask: SoftMask, spine_channel: str = "spine",
                   support_threshold: float = 0.1, kappa_range=None) -> ScanGrid:
    """Paint each scanline's kappa onto the spine-supported pixels of that row.

    Intensities span 0..255. By default the scale is relative to this
    profile's own maximum; ``kappa_range=(lo, hi)`` fixes it instead so that
    maps of different scans are comparable.
    """
    spine = np.asarray(mask.channel(spine_channel), dtype=np.float64)
    out = np.zeros(spine.shape)
    if len(profile) == 0:
        return ScanGrid(out)
    if kappa_range is None:
        lo, hi = 1.0, float(profile.kappa.max())
    else:
        lo, hi = map(float, kappa_range)
        if not hi > lo:
            raise DomainError("kappa_range must satisfy lo < hi")
    if hi <= lo:
        return ScanGrid(out)
    inside = (profile.rows >= 0) & (profile.rows < spine.shape[0])
    rows = profile.rows[inside]
    level = np.clip((profile.kappa[inside] - lo) / (hi - lo), 0.0, 1.0) * 255.0
    support = spine[rows] >= support_threshold
    out[rows] = np.where(support, np.rint(level)[:, None], 0.0)
    return ScanGrid(out)


# fixed black -> red -> yellow -> white ramp
_RAMP_STOPS = np.array([0.0, 1 / 3, 2 / 3, 1.0])
_RAMP_RGB = np.array([[0, 0, 0], [255, 0, 0], [255, 255, 0], [255, 255, 255]], dtype=np.float64)


def heat_colors(values: np.ndarray) -> np.ndarray:
    """Map 0..255 intensities to RGB on the fixed heat ramp."""
    t = np.clip(np.asarray(values, dtype=np.float64) / 255.0, 0.0, 1.0)
    rgb = np.stack([np.interp(t, _RAMP_STOPS, _RAMP_RGB[:, c]) for c in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8)


def composite(heat: ScanGrid, background: ScanGrid, alpha: float = 0.6) -> np.ndarray:
    """Blend the heat ramp over a grey background wherever heat is non-zero."""
    if heat.values.shape != background.values.shape:
        raise DomainError("heatmap and background must share dimensions")
    bg = background.values
    peak = bg.max()
    grey = np.zeros_like(bg) if peak <= 0 else bg / peak * 255.0
    base = np.repeat(grey[..., None], 3, axis=-1)
    hot = heat_colors(heat.values).astype(np.float64)
    lit = (heat.values > 0)[..., None]
    blended = np.where(lit, (1 - alpha) * base + alpha * hot, base)
    return np.rint(blended).astype(np.uint8)
