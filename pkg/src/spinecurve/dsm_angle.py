"""Automated DXA Scoliosis Method (DSM) angle measurement.

The midcurve is compared against the normal spine line. Sign changes of the
horizontal offset between the two split the curve into lobes; each lobe's
apex is the point farthest from the line, and the lobe's angle is the
deviation from straight of the polyline intersection -> apex -> intersection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateError
from .midcurve import BaselineSegment, MidCurve, eval_curve_at

TOUCH_EPS = 1e-9
DEFAULT_MIN_DEVIATION = 0.5
SCOLIOSIS_THRESHOLD_DEG = 6.0
ANGLE_DECIMALS = 9


@dataclass(frozen=True)
class CurveSegment:
    row_a: float
    row_b: float
    apex: tuple
    max_deviation: float
    angle_deg: float
    side: str

    def to_dict(self):
        return {
            "row_a": round(self.row_a, 3),
            "row_b": round(self.row_b, 3),
            "apex_row": round(float(self.apex[0]), 3),
            "apex_col": round(float(self.apex[1]), 3),
            "max_deviation": round(self.max_deviation, 3),
            "angle_deg": round(self.angle_deg, 2),
            "side": self.side,
        }


def noc_class(n_segments: int) -> str:
    return "0" if n_segments == 0 else "1" if n_segments == 1 else ">1"


@dataclass(frozen=True)
class GeometryReport:
    segments: tuple
    max_angle_deg: float
    noc_class: str
    scoliosis_flag: bool
    intersections: tuple = ()
    max_curvature: float | None = None
    quality_warnings: tuple = field(default=())

    @classmethod
    def from_segments(cls, segments, warnings=()):
        segments = tuple(segments)
        max_angle = max((s.angle_deg for s in segments), default=0.0)
        bounds = sorted({s.row_a for s in segments} | {s.row_b for s in segments})
        return cls(
            segments=segments,
            max_angle_deg=max_angle,
            noc_class=noc_class(len(segments)),
            scoliosis_flag=bool(max_angle >= SCOLIOSIS_THRESHOLD_DEG),
            intersections=tuple(bounds),
            quality_warnings=tuple(warnings),
        )

    def with_curvature(self, max_curvature: float, warnings=()):
        return replace(self, max_curvature=float(max_curvature),
                       quality_warnings=self.quality_warnings + tuple(warnings))


def _offsets(curve: MidCurve, baseline: BaselineSegment, rows):
    return eval_curve_at(curve, rows) - baseline.col_at(rows)


def _sample_rows(baseline: BaselineSegment):
    r0, r1 = baseline.p_top[0], baseline.p_bottom[0]
    inner = np.arange(math.floor(r0) + 1, math.ceil(r1), dtype=np.float64)
    return np.concatenate(([r0], inner[(inner > r0) & (inner < r1)], [r1]))


def find_intersections(curve: MidCurve, baseline: BaselineSegment) -> list:
    """Rows where the midcurve crosses the baseline, plus both baseline ends.

    Offsets with magnitude below ``TOUCH_EPS`` count as touching; a sign
    change across a run of touching rows is placed at the run's centre, and
    touching without a sign change is not a crossing.
    """
    rows = _sample_rows(baseline)
    d = _offsets(curve, baseline, rows)
    d = np.where(np.abs(d) < TOUCH_EPS, 0.0, d)
    crossings = []
    prev = None
    for i in range(len(rows)):
        if d[i] == 0:
            continue
        if prev is not None and np.sign(d[i]) != np.sign(d[prev]):
            if i == prev + 1:
                t = d[prev] / (d[prev] - d[i])
                crossings.append(float(rows[prev] + t * (rows[i] - rows[prev])))
            else:
                crossings.append(float(0.5 * (rows[prev + 1] + rows[i - 1])))
        prev = i
    return [float(rows[0])] + crossings + [float(rows[-1])]


@dataclass
class _Lobe:
    start: float
    stop: float
    sign: float
    deviation: float


def _perpendicular(baseline: BaselineSegment, rows, cols):
    """Signed perpendicular distance to the baseline's infinite line (sign of the column offset)."""
    (r0, c0), (r1, c1) = baseline.p_top, baseline.p_bottom
    dr, dc = r1 - r0, c1 - c0
    return ((cols - c0) * dr - (rows - r0) * dc) / math.hypot(dr, dc)


def _lobe_samples(curve, start, stop):
    rows = curve.rows[(curve.rows > start) & (curve.rows < stop)].astype(np.float64)
    return rows, eval_curve_at(curve, rows) if rows.size else rows


def _signed_excursion(curve, baseline, start, stop):
    rows, cols = _lobe_samples(curve, start, stop)
    if rows.size == 0:
        return 0.0, 0.0
    dist = _perpendicular(baseline, rows, cols)
    k = int(np.argmax(np.abs(dist)))
    sign = 1.0 if dist[k] >= 0 else -1.0
    return sign, float(np.max(sign * dist))


def _prune(lobes, min_deviation):
    """Fold lobes below ``min_deviation`` into their neighbours, smallest first."""
    lobes = list(lobes)
    while lobes:
        k = min(range(len(lobes)), key=lambda i: (lobes[i].deviation, lobes[i].start))
        small = lobes[k]
        if small.deviation >= min_deviation:
            break
        if len(lobes) == 1:
            return []
        if k == 0:
            nxt = lobes[1]
            lobes[0:2] = [_Lobe(small.start, nxt.stop, nxt.sign, nxt.deviation)]
        elif k == len(lobes) - 1:
            prv = lobes[k - 1]
            lobes[k - 1 : k + 1] = [_Lobe(prv.start, small.stop, prv.sign, prv.deviation)]
        else:
            prv, nxt = lobes[k - 1], lobes[k + 1]
            lobes[k - 1 : k + 2] = [_Lobe(prv.start, nxt.stop, prv.sign, max(prv.deviation, nxt.deviation))]
    return lobes


def measure_angle(p_a, p_b, apex) -> float:
    """Deviation from straight at ``apex`` of the path ``p_a -> apex -> p_b``.

    Returns ``|180 - inner|`` in degrees, where ``inner`` is the angle at the
    apex between the two arms. Rounded to ``ANGLE_DECIMALS`` places so that
    exactly constructed angles compare exactly against thresholds.
    """
    ax, ay = p_a[0] - apex[0], p_a[1] - apex[1]
    bx, by = p_b[0] - apex[0], p_b[1] - apex[1]
    if math.hypot(ax, ay) == 0 or math.hypot(bx, by) == 0:
        raise DegenerateError("apex coincides with a segment endpoint")
    inner = math.degrees(math.atan2(abs(ax * by - ay * bx), ax * bx + ay * by))
    if inner == 0:
        raise DegenerateError("both endpoints lie on the same ray from the apex")
    return round(abs(180.0 - inner), ANGLE_DECIMALS)


def segment_curves(curve: MidCurve, baseline: BaselineSegment, intersections,
                   min_deviation: float = DEFAULT_MIN_DEVIATION, warnings=None) -> list:
    """Build one ``CurveSegment`` per lobe between consecutive intersections.

    Lobes whose apex lies closer than ``min_deviation`` to the baseline are
    treated as noise and absorbed by their neighbours, so a noisy crossing
    neither adds a segment nor shortens the segment next to it. Apex ties go
    to the upper row and are reported through ``warnings`` when a list is
    passed.
    """
    bounds = sorted(float(r) for r in intersections)
    lobes = []
    for start, stop in zip(bounds[:-1], bounds[1:]):
        sign, dev = _signed_excursion(curve, baseline, start, stop)
        lobes.append(_Lobe(start, stop, sign, dev))
    segments = []
    for lobe in _prune(lobes, min_deviation):
        rows, cols = _lobe_samples(curve, lobe.start, lobe.stop)
        dist = lobe.sign * _perpendicular(baseline, rows, cols)
        k = int(np.argmax(dist))
        if warnings is not None and np.count_nonzero(dist == dist[k]) > 1:
            warnings.append(f"apex tie between rows in segment [{lobe.start:.2f}, {lobe.stop:.2f}]")
        apex = (float(rows[k]), float(cols[k]))
        p_a = (lobe.start, float(baseline.col_at(lobe.start)))
        p_b = (lobe.stop, float(baseline.col_at(lobe.stop)))
        segments.append(CurveSegment(
            row_a=lobe.start,
            row_b=lobe.stop,
            apex=apex,
            max_deviation=float(dist[k]),
            angle_deg=measure_angle(p_a, p_b, apex),
            side="right" if lobe.sign > 0 else "left",
        ))
    return segments


def analyze_dsm(curve: MidCurve, baseline: BaselineSegment,
                min_deviation: float = DEFAULT_MIN_DEVIATION) -> GeometryReport:
    """Intersections, segments and angles of one midcurve; only the maximum angle is graded."""
    warnings = list(curve.warnings)
    intersections = find_intersections(curve, baseline)
    segments = segment_curves(curve, baseline, intersections, min_deviation, warnings)
    return GeometryReport.from_segments(segments, warnings)
