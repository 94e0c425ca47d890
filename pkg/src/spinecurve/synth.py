"""Synthetic spine curves and soft masks with closed-form ground truth.

Every generator is seeded and pure. Ground truth is computed from the
noiseless closed form of each shape, never from the estimators it is used
to check.

Shapes
------
straight   constant column.
arc        circular arc through both end rows, bulging at the middle row.
vshape     two straight legs meeting at one apex ("C" topology).
s_curve    three straight legs with two apexes on opposite sides ("S").
sinusoid   ``base + amplitude * sin(2 pi (row - phase) / wavelength)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize

from .dsm_angle import DEFAULT_MIN_DEVIATION
from .errors import DomainError
from .mask_io import CANONICAL_COLS, CANONICAL_ROWS, CHANNEL_NAMES, SoftMask, save_softmask
from .midcurve import MidCurve, curve_to_csv, percentile_offset

SHAPES = ("straight", "arc", "s_curve", "vshape", "sinusoid")
DEFAULT_PROFILE_SIGMA = 2.0


@dataclass(frozen=True)
class SynthSpec:
    shape: str
    params: dict = field(default_factory=dict)
    rows: int = CANONICAL_ROWS
    base_col: float = CANONICAL_COLS / 2
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DomainError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.rows < 4:
            raise DomainError("a synthetic curve needs at least 4 rows")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be >= 0")

    def to_dict(self):
        return {
            "shape": self.shape,
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()},
            "rows": self.rows,
            "base_col": self.base_col,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Noiseless geometry of a synthetic curve.

    ``segment_angles`` and ``deviations`` describe each lobe between
    baseline crossings, in row order. ``geometric_curvature`` is the exact
    curvature (1/px) per row; ``inf`` marks polyline corners.
    """

    spec: SynthSpec
    analytic_curve: Callable
    apex_rows: tuple
    apex_angle_deg: float
    segment_angles: tuple
    deviations: tuple
    geometric_curvature: np.ndarray
    topology: str
    noc_class: str
    min_deviation: float = DEFAULT_MIN_DEVIATION

    def to_dict(self):
        curvature = [None if not math.isfinite(k) else k for k in self.geometric_curvature.tolist()]
        return {
            "spec": self.spec.to_dict(),
            "apex_rows": list(self.apex_rows),
            "apex_angle_deg": self.apex_angle_deg,
            "segment_angles": list(self.segment_angles),
            "deviations": list(self.deviations),
            "topology": self.topology,
            "noc_class": self.noc_class,
            "min_deviation": self.min_deviation,
            "geometric_curvature": curvature,
        }


# ---------------------------------------------------------------------------
# closed forms


def _vertices(spec: SynthSpec):
    """Polyline vertices ``(row, col)`` for the piecewise-linear shapes."""
    b, last = spec.base_col, spec.rows - 1
    p = spec.params
    if spec.shape == "vshape":
        y1, h1 = float(p["apex_row"]), float(p["apex_offset"])
        if not 0 < y1 < last:
            raise DomainError("apex_row must lie strictly inside the curve")
        return [(0.0, b), (y1, b + h1), (float(last), b)]
    y1, y2 = map(float, p["apex_rows"])
    h1, h2 = map(float, p["apex_offsets"])
    if not 0 < y1 < y2 < last:
        raise DomainError("s_curve apex rows must satisfy 0 < y1 < y2 < rows - 1")
    if h1 * h2 >= 0:
        raise DomainError("s_curve apexes must lie on opposite sides")
    return [(0.0, b), (y1, b + h1), (y2, b + h2), (float(last), b)]


def _closed_form(spec: SynthSpec) -> Callable:
    b = spec.base_col
    p = spec.params
    if spec.shape == "straight":
        return lambda y: np.full_like(np.asarray(y, dtype=np.float64), b)
    if spec.shape == "arc":
        radius = float(p["radius"])
        side = float(p.get("side", 1.0))
        yc = (spec.rows - 1) / 2.0
        if radius <= yc:
            raise DomainError(f"arc of radius {radius} over {spec.rows} rows subtends 180 degrees or more")
        rim = math.sqrt(radius * radius - yc * yc)
        return lambda y: b + side * (np.sqrt(radius * radius - (np.asarray(y, dtype=np.float64) - yc) ** 2) - rim)
    if spec.shape == "sinusoid":
        amp, wave = float(p["amplitude"]), float(p["wavelength"])
        phase = float(p.get("phase", 0.0))
        if wave <= 0:
            raise DomainError("wavelength must be positive")
        return lambda y: b + amp * np.sin(2 * math.pi * (np.asarray(y, dtype=np.float64) - phase) / wave)
    verts = np.array(_vertices(spec))
    return lambda y: np.interp(np.asarray(y, dtype=np.float64), verts[:, 0], verts[:, 1])


# ---------------------------------------------------------------------------
# ground truth


def _baseline_points(spec, f, lo_pct=3, hi_pct=97):
    rt = float(percentile_offset(spec.rows, lo_pct))
    rb = float(percentile_offset(spec.rows, hi_pct))
    return (rt, float(f(rt))), (rb, float(f(rb)))


def _perp(p0, p1, row, col):
    dr, dc = p1[0] - p0[0], p1[1] - p0[1]
    return ((col - p0[1]) * dr - (row - p0[0]) * dc) / math.hypot(dr, dc)


def _turn_deg(a, v, b):
    """Direction change at ``v`` walking ``a -> v -> b``."""
    d1 = math.atan2(v[1] - a[1], v[0] - a[0])
    d2 = math.atan2(b[1] - v[1], b[0] - v[0])
    return abs(math.degrees(d2 - d1))


def _noc(deviations, min_deviation):
    n = sum(1 for d in deviations if d >= min_deviation)
    return "0" if n == 0 else "1" if n == 1 else ">1"


def _polyline_truth(spec, f, min_deviation):
    verts = _vertices(spec)
    p0, p1 = _baseline_points(spec, f)
    inner = verts[1:-1]
    angles = tuple(_turn_deg(verts[i - 1], verts[i], verts[i + 1]) for i in range(1, len(verts) - 1))
    devs = tuple(abs(_perp(p0, p1, r, c)) for r, c in inner)
    curvature = np.zeros(spec.rows)
    for r, _ in inner:
        if float(r).is_integer():
            curvature[int(r)] = np.inf
    return angles, devs, tuple(r for r, _ in inner), curvature


def _arc_truth(spec, f, min_deviation):
    radius = float(spec.params["radius"])
    p0, p1 = _baseline_points(spec, f)
    chord = math.dist(p0, p1)
    # every point of the minor arc sees the chord at inner angle pi - asin(chord / 2R)
    angle = math.degrees(math.asin(chord / (2 * radius)))
    yc = (spec.rows - 1) / 2.0
    side = float(spec.params.get("side", 1.0))
    centre = (yc, spec.base_col + side * (-math.sqrt(radius * radius - yc * yc)))
    dr, dc = p1[0] - p0[0], p1[1] - p0[1]
    norm = math.hypot(dr, dc)
    normal = (-dc / norm * side, dr / norm * side)
    apex = (centre[0] + radius * normal[0], centre[1] + radius * normal[1])
    dev = abs(_perp(p0, p1, *apex))
    return (angle,), (dev,), (apex[0],), np.full(spec.rows, 1.0 / radius)


def _sinusoid_truth(spec, f, min_deviation):
    amp, wave = float(spec.params["amplitude"]), float(spec.params["wavelength"])
    phase = float(spec.params.get("phase", 0.0))
    p0, p1 = _baseline_points(spec, f)

    def d(y):
        return _perp(p0, p1, y, f(y))

    fine = np.linspace(p0[0], p1[0], 20 * spec.rows + 1)
    values = np.array([d(y) for y in fine])
    roots = [p0[0]]
    for i in range(1, len(fine) - 1):
        if values[i] * values[i + 1] < 0:
            roots.append(optimize.brentq(d, fine[i], fine[i + 1], xtol=1e-13))
    roots.append(p1[0])
    angles, devs, apexes = [], [], []
    for a, b in zip(roots[:-1], roots[1:]):
        mid = fine[(fine > a) & (fine < b)]
        if mid.size == 0:
            continue
        sign = 1.0 if d(mid[np.argmax(np.abs([d(y) for y in mid]))]) > 0 else -1.0
        res = optimize.minimize_scalar(lambda y: -sign * d(y), bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-10})
        apex = (float(res.x), float(f(res.x)))
        pa, pb = (a, float(f(a))), (b, float(f(b)))
        angles.append(_turn_deg(pa, apex, pb))
        devs.append(float(-res.fun))
        apexes.append(apex[0])
    k = 2 * math.pi / wave
    y = np.arange(spec.rows, dtype=np.float64)
    slope = amp * k * np.cos(k * (y - phase))
    second = -amp * k * k * np.sin(k * (y - phase))
    curvature = np.abs(second) / (1 + slope * slope) ** 1.5
    return tuple(angles), tuple(devs), tuple(apexes), curvature


def ground_truth(spec: SynthSpec, min_deviation: float = DEFAULT_MIN_DEVIATION) -> GroundTruth:
    f = _closed_form(spec)
    if spec.shape == "straight":
        angles, devs, apexes, curvature = (), (), (), np.zeros(spec.rows)
    elif spec.shape == "arc":
        angles, devs, apexes, curvature = _arc_truth(spec, f, min_deviation)
    elif spec.shape == "sinusoid":
        angles, devs, apexes, curvature = _sinusoid_truth(spec, f, min_deviation)
    else:
        angles, devs, apexes, curvature = _polyline_truth(spec, f, min_deviation)
    kept = [a for a, dv in zip(angles, devs) if dv >= min_deviation]
    noc = _noc(devs, min_deviation)
    topology = {"0": "none", "1": "C", ">1": "S"}[noc]
    return GroundTruth(
        spec=spec,
        analytic_curve=f,
        apex_rows=tuple(apexes),
        apex_angle_deg=max(kept, default=0.0),
        segment_angles=tuple(angles),
        deviations=tuple(devs),
        geometric_curvature=curvature,
        topology=topology,
        noc_class=noc,
        min_deviation=min_deviation,
    )


# ---------------------------------------------------------------------------
# generators


def generate_curve(spec: SynthSpec):
    """Sample the closed form at every row, add seeded column noise."""
    truth = ground_truth(spec)
    rows = np.arange(spec.rows)
    cols = truth.analytic_curve(rows).astype(np.float64)
    if spec.noise_sigma > 0:
        cols = cols + np.random.default_rng(spec.seed).normal(0.0, spec.noise_sigma, spec.rows)
    return MidCurve(rows, cols), truth


def _bump(centres, n_cols, sigma):
    c = np.arange(n_cols, dtype=np.float64)
    return np.exp(-((c[None, :] - np.asarray(centres)[:, None]) ** 2) / (2 * sigma * sigma))


def _static_channel(rows, n_cols, col, lo, hi, sigma=3.0):
    out = np.zeros((rows, n_cols))
    r0, r1 = int(lo * rows), int(hi * rows)
    if r1 > r0:
        out[r0:r1] = _bump(np.full(r1 - r0, col), n_cols, sigma)
    return out


def generate_softmask(spec: SynthSpec, profile_sigma: float = DEFAULT_PROFILE_SIGMA, cols: int = CANONICAL_COLS):
    """Soft mask whose spine channel peaks (value 1) on the noisy curve.

    The other five channels hold fixed column bumps in plausible places;
    geometry code never reads them.
    """
    if profile_sigma <= 0:
        raise DomainError("profile_sigma must be positive")
    curve, truth = generate_curve(spec)
    if curve.cols.min() < 0 or curve.cols.max() > cols - 1:
        raise DomainError(f"curve leaves the {cols}-column frame: [{curve.cols.min():.1f}, {curve.cols.max():.1f}]")
    r = spec.rows
    mid = (cols - 1) / 2.0
    layers = {
        "head": _static_channel(r, cols, mid, 0.0, 0.12, sigma=6.0),
        "spine": _bump(curve.cols, cols, profile_sigma),
        "pelvic_cavity": _static_channel(r, cols, mid, 0.45, 0.55),
        "pelvis": _static_channel(r, cols, mid, 0.42, 0.58, sigma=8.0),
        "right_leg": _static_channel(r, cols, mid - cols / 8, 0.55, 1.0),
        "left_leg": _static_channel(r, cols, mid + cols / 8, 0.55, 1.0),
    }
    channels = np.stack([layers[name] for name in CHANNEL_NAMES]).astype(np.float32)
    return SoftMask(channels), truth


def _solve_vshape(angle_rad, y1, span):
    if angle_rad == 0:
        return 0.0
    g = lambda h: math.atan(h / y1) + math.atan(h / (span - y1)) - angle_rad
    return optimize.brentq(g, 0.0, 10 * span, xtol=1e-14, rtol=1e-15)


def _solve_scurve(t1, t2, y1, y2, span):
    """Apex offsets whose corner turns are ``t1`` and ``t2`` radians."""
    if min(t1, t2) == 0:
        raise DomainError("s_curve angles must be positive")

    def gap(m):
        return math.tan(m) * (y2 - y1) - y1 * math.tan(t1 - m) - (span - y2) * math.tan(t2 - m)

    m = optimize.brentq(gap, 0.0, min(t1, t2), xtol=1e-15, rtol=1e-15)
    return y1 * math.tan(t1 - m), (span - y2) * math.tan(t2 - m)


def vshape_for_angle(angle_deg, apex_row, rows=CANONICAL_ROWS, side=1, centre_col=CANONICAL_COLS / 2, **kw):
    """A ``vshape`` spec whose apex turn is ``angle_deg``, centred in the frame."""
    span = rows - 1
    h = _solve_vshape(math.radians(angle_deg), apex_row, span)
    return SynthSpec("vshape", {"apex_row": apex_row, "apex_offset": side * h}, rows=rows,
                     base_col=centre_col - side * h / 2, **kw)


def scurve_for_angles(angle1_deg, angle2_deg, apex_rows, rows=CANONICAL_ROWS, side=1,
                      centre_col=CANONICAL_COLS / 2, **kw):
    span = rows - 1
    y1, y2 = apex_rows
    h1, h2 = _solve_scurve(math.radians(angle1_deg), math.radians(angle2_deg), y1, y2, span)
    return SynthSpec("s_curve", {"apex_rows": (y1, y2), "apex_offsets": (side * h1, -side * h2)},
                     rows=rows, base_col=centre_col - side * (h1 - h2) / 2, **kw)


def corpus_specs(n: int, angle_range=(1.0, 45.0), seed: int = 0, noise_sigma: float = 0.3,
                 rows: int = CANONICAL_ROWS):
    """Specs of a mixed C/S corpus with the largest apex angle uniform over ``angle_range``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    lo, hi = map(float, angle_range)
    if hi < lo or lo <= 0:
        raise DomainError("angle_range must satisfy 0 < lo <= hi")
    rng = np.random.default_rng(seed)
    span = rows - 1
    specs = []
    for _ in range(n):
        angle = float(rng.uniform(lo, hi)) if hi > lo else lo
        side = 1 if rng.random() < 0.5 else -1
        noise_seed = int(rng.integers(2**31))
        if rng.random() < 0.5:
            apex_row = int(round(rng.uniform(0.35, 0.65) * span))
            specs.append(vshape_for_angle(angle, apex_row, rows=rows, side=side,
                                          noise_sigma=noise_sigma, seed=noise_seed))
        else:
            y1 = int(round(rng.uniform(0.2, 0.35) * span))
            y2 = int(round(rng.uniform(0.65, 0.8) * span))
            other = angle * float(rng.uniform(0.6, 1.0))
            a1, a2 = (angle, other) if rng.random() < 0.5 else (other, angle)
            specs.append(scurve_for_angles(a1, a2, (y1, y2), rows=rows, side=side,
                                           noise_sigma=noise_sigma, seed=noise_seed))
    return specs


def generate_corpus(n: int, angle_range=(1.0, 45.0), seed: int = 0, noise_sigma: float = 0.3,
                    rows: int = CANONICAL_ROWS, profile_sigma: float = DEFAULT_PROFILE_SIGMA):
    """``n`` (SoftMask, GroundTruth) pairs; reproducible for a fixed seed."""
    return [generate_softmask(s, profile_sigma) for s in corpus_specs(n, angle_range, seed, noise_sigma, rows)]


def write_sample(mask: SoftMask, truth: GroundTruth, out_dir, stem: str):
    """Write ``<stem>.smask``, ``<stem>.curve.csv`` and ``<stem>.truth.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_softmask(mask, out_dir / f"{stem}.smask")
    curve, _ = generate_curve(truth.spec)
    curve_to_csv(curve, out_dir / f"{stem}.curve.csv")
    (out_dir / f"{stem}.truth.json").write_text(json.dumps(truth.to_dict(), indent=2) + "\n")
    return {
        "id": stem,
        "mask": f"{stem}.smask",
        "curve": f"{stem}.curve.csv",
        "truth": f"{stem}.truth.json",
        "shape": truth.spec.shape,
        "apex_angle_deg": truth.apex_angle_deg,
        "noc_class": truth.noc_class,
    }
