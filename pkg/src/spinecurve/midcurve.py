"""Spine midcurve extraction and the normal spine line.

A midcurve is a graph over scanlines: one sub-pixel column per row over a
contiguous block of rows.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import DegenerateError, DomainError, FormatError, SupportError

REFINE_MODES = ("argmax", "parabolic", "soft_argmax")
DEFAULT_SUPPORT_THRESHOLD = 0.1
TIE_WARNING_WIDTH = 3


@dataclass(frozen=True, eq=False)
class MidCurve:
    """Sub-pixel column per integer row, rows contiguous and increasing."""

    rows: np.ndarray
    cols: np.ndarray
    warnings: tuple = field(default=())

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.float64)
        if rows.ndim != 1 or rows.shape != cols.shape:
            raise DomainError("rows and cols must be 1-D arrays of equal length")
        if rows.size == 0:
            raise SupportError("a midcurve needs at least one sample")
        if rows.size > 1 and not np.all(np.diff(rows) == 1):
            raise DomainError("midcurve rows must increase by exactly 1")
        if not np.all(np.isfinite(cols)):
            raise DomainError("midcurve columns must be finite")
        rows.flags.writeable = False
        cols = cols.copy()
        cols.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def row_start(self) -> int:
        return int(self.rows[0])

    @property
    def row_end(self) -> int:
        return int(self.rows[-1])

    def __len__(self):
        return self.rows.size

    @classmethod
    def from_columns(cls, cols, row_start: int = 0, warnings=()) -> "MidCurve":
        cols = np.asarray(cols, dtype=np.float64)
        return cls(np.arange(row_start, row_start + cols.size), cols, warnings)

    def shifted(self, d_row: int = 0, d_col: float = 0.0) -> "MidCurve":
        return MidCurve(self.rows + int(d_row), self.cols + d_col, self.warnings)

    def mirrored(self, n_cols: int) -> "MidCurve":
        """Mirror about the vertical axis of an image ``n_cols`` wide."""
        return MidCurve(self.rows, (n_cols - 1) - self.cols, self.warnings)


@dataclass(frozen=True)
class BaselineSegment:
    """The normal spine line, from ``p_top`` to ``p_bottom`` as ``(row, col)``."""

    p_top: tuple
    p_bottom: tuple

    def __post_init__(self):
        if not self.p_top[0] < self.p_bottom[0]:
            raise DegenerateError("baseline top must lie above its bottom")

    def col_at(self, row):
        """Column of the infinite line through both endpoints at ``row``."""
        (r0, c0), (r1, c1) = self.p_top, self.p_bottom
        return c0 + (np.asarray(row, dtype=np.float64) - r0) * ((c1 - c0) / (r1 - r0))

    def mirrored(self, n_cols: int) -> "BaselineSegment":
        (r0, c0), (r1, c1) = self.p_top, self.p_bottom
        return BaselineSegment((r0, (n_cols - 1) - c0), (r1, (n_cols - 1) - c1))


def _largest_block(mask: np.ndarray):
    """Return ``(start, stop)`` of the longest run of True (topmost on ties)."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    starts, stops = edges[::2], edges[1::2]
    best = int(np.argmax(stops - starts))
    return int(starts[best]), int(stops[best])


def _parabolic_offsets(left, centre, right):
    denom = left - 2.0 * centre + right
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(denom < 0, 0.5 * (left - right) / denom, 0.0)
    return np.clip(offset, -0.5, 0.5)


def extract_midcurve(mask, channel: str = "spine", support_threshold: float = DEFAULT_SUPPORT_THRESHOLD,
                     refine: str = "parabolic") -> MidCurve:
    """Trace the per-row peak of one soft-mask channel.

    Rows whose channel maximum is below ``support_threshold`` are dropped and
    the longest remaining contiguous block is kept. ``refine`` selects plain
    argmax, 3-point parabolic sub-pixel refinement, or the probability
    weighted centroid of the row.
    """
    if not 0 <= support_threshold < 1:
        raise DomainError("support_threshold must lie in [0, 1)")
    if refine not in REFINE_MODES:
        raise DomainError(f"refine must be one of {REFINE_MODES}, got {refine!r}")
    grid = np.asarray(mask.channel(channel), dtype=np.float64)
    peak = grid.max(axis=1)
    supported = peak >= support_threshold
    if not supported.any():
        raise SupportError(f"no spine support: no row of channel {channel!r} reaches {support_threshold}")
    start, stop = _largest_block(supported)
    block = grid[start:stop]
    n_cols = block.shape[1]
    idx = np.argmax(block, axis=1)
    ties = (block == block[np.arange(len(block)), idx][:, None]).sum(axis=1)

    warnings = []
    wide = np.flatnonzero(ties > TIE_WARNING_WIDTH)
    if wide.size:
        warnings.append(
            f"argmax tie wider than {TIE_WARNING_WIDTH} px on {wide.size} row(s), first at row {start + int(wide[0])}"
        )

    if refine == "argmax":
        cols = idx.astype(np.float64)
    elif refine == "parabolic":
        cols = idx.astype(np.float64)
        inner = (idx > 0) & (idx < n_cols - 1)
        r = np.flatnonzero(inner)
        j = idx[inner]
        cols[inner] += _parabolic_offsets(block[r, j - 1], block[r, j], block[r, j + 1])
    else:
        weights = block.sum(axis=1)
        centroid = block @ np.arange(n_cols, dtype=np.float64)
        empty = weights <= 0
        cols = np.where(empty, idx, centroid / np.where(empty, 1.0, weights))
    return MidCurve(np.arange(start, stop), cols, tuple(warnings))


def smooth_curve(curve: MidCurve, sigma: float) -> MidCurve:
    """Gaussian-smooth the columns along rows; ``sigma`` in rows, 0 is a no-op."""
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    if sigma == 0 or len(curve) < 2:
        return curve
    return MidCurve(curve.rows, gaussian_filter1d(curve.cols, sigma, mode="nearest"), curve.warnings)


def percentile_offset(n: int, pct: float) -> int:
    """Nearest-rank offset into ``n`` ordered rows for percentile ``pct``."""
    return min(n - 1, max(0, math.ceil(pct * n / 100.0)))


def eval_curve_at(curve: MidCurve, row):
    """Linearly interpolated column at (sub-pixel) ``row``; exact at sample rows."""
    row_arr = np.asarray(row, dtype=np.float64)
    if np.any(row_arr < curve.row_start) or np.any(row_arr > curve.row_end):
        raise SupportError(f"row {row} outside curve support [{curve.row_start}, {curve.row_end}]")
    out = np.interp(row_arr, curve.rows, curve.cols)
    return float(out) if out.ndim == 0 else out


def build_baseline(curve: MidCurve, lo_pct: float = 3, hi_pct: float = 97) -> BaselineSegment:
    """Join the midcurve points at the ``lo_pct`` and ``hi_pct`` row percentiles."""
    if len(curve) < 4:
        raise SupportError("build_baseline needs at least 4 curve samples")
    if not 0 <= lo_pct < hi_pct <= 100:
        raise DomainError("percentiles must satisfy 0 <= lo < hi <= 100")
    n = len(curve)
    i_top, i_bottom = percentile_offset(n, lo_pct), percentile_offset(n, hi_pct)
    if i_top == i_bottom:
        raise DegenerateError(f"degenerate baseline: percentiles {lo_pct} and {hi_pct} hit the same row")
    return BaselineSegment(
        (float(curve.rows[i_top]), float(curve.cols[i_top])),
        (float(curve.rows[i_bottom]), float(curve.cols[i_bottom])),
    )


def curve_to_csv(curve: MidCurve, path=None) -> str:
    """Serialize as ``row,col`` lines (6 decimals); also writes ``path`` if given."""
    buf = io.StringIO()
    buf.write("row,col\n")
    for r, c in zip(curve.rows, curve.cols):
        buf.write(f"{int(r)},{c:.6f}\n")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, newline="\n")
    return text


def curve_from_csv(path) -> MidCurve:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "row,col":
        raise FormatError("curve CSV must start with a 'row,col' header", offset=0)
    rows, cols = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            r, c = line.split(",")
            rows.append(int(r))
            cols.append(float(c))
        except ValueError:
            raise FormatError(f"bad curve CSV line {lineno}: {line!r}") from None
    return MidCurve(np.array(rows), np.array(cols))
