"""End-to-end analysis of one soft mask: midcurve, DSM angles and curvature."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .dsm_angle import DEFAULT_MIN_DEVIATION, GeometryReport, analyze_dsm
from .integral_curvature import (DEFAULT_GRID_STEP, DEFAULT_RADIUS, DEFAULT_SMOOTH_WINDOW, CurvatureProfile,
                                 curvature_profile, max_curvature_score)
from .mask_io import SoftMask
from .midcurve import (DEFAULT_SUPPORT_THRESHOLD, BaselineSegment, MidCurve, build_baseline, extract_midcurve,
                       smooth_curve)

DEFAULT_CURVE_SMOOTHING = 2.0
REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AnalysisParams:
    radius: float = DEFAULT_RADIUS
    grid_step: float = DEFAULT_GRID_STEP
    smooth_window: int = DEFAULT_SMOOTH_WINDOW
    min_deviation: float = DEFAULT_MIN_DEVIATION
    percentiles: tuple = (3.0, 97.0)
    support_threshold: float = DEFAULT_SUPPORT_THRESHOLD
    refine: str = "parabolic"
    curve_smoothing: float = DEFAULT_CURVE_SMOOTHING
    channel: str = "spine"

    def to_dict(self):
        d = asdict(self)
        d["percentiles"] = list(self.percentiles)
        return d


@dataclass(frozen=True)
class Analysis:
    curve: MidCurve
    baseline: BaselineSegment
    profile: CurvatureProfile
    report: GeometryReport


def analyze_mask(mask: SoftMask, params: AnalysisParams = AnalysisParams()) -> Analysis:
    """Run extraction, DSM and the curvature profile with one set of parameters.

    The extracted midcurve is Gaussian-smoothed along rows
    (``params.curve_smoothing``, in rows) before both measurements.
    """
    raw = extract_midcurve(mask, params.channel, params.support_threshold, params.refine)
    curve = smooth_curve(raw, params.curve_smoothing)
    lo, hi = params.percentiles
    baseline = build_baseline(curve, lo, hi)
    report = analyze_dsm(curve, baseline, params.min_deviation)
    profile = curvature_profile(curve, params.radius, params.grid_step, params.smooth_window)
    return Analysis(curve, baseline, profile, report.with_curvature(max_curvature_score(profile)))


def report_dict(analysis: Analysis, scan_id: str, source: str, params: AnalysisParams,
                prediction=None) -> dict:
    """JSON-ready report; floats are kept at full precision so ranks reproduce them exactly."""
    rep, prof = analysis.report, analysis.profile
    k = int(np.argmax(prof.kappa))
    out = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scan_id": scan_id,
        "source": source,
        "params": params.to_dict(),
        "max_angle_deg": float(rep.max_angle_deg),
        "max_curvature": float(rep.max_curvature),
        "noc_class": rep.noc_class,
        "scoliosis_flag": bool(rep.scoliosis_flag),
        "intersections": [float(r) for r in rep.intersections],
        "segments": [s.to_dict() for s in rep.segments],
        "baseline": {"top": list(analysis.baseline.p_top), "bottom": list(analysis.baseline.p_bottom)},
        "midcurve": {"row_start": analysis.curve.row_start, "row_end": analysis.curve.row_end},
        "curvature": {
            "probe_radius": prof.probe_radius,
            "valid_row_range": list(prof.valid_row_range),
            "max_curvature": float(prof.kappa[k]),
            "max_row": int(prof.rows[k]),
            "mean_kappa": float(prof.kappa.mean()),
            "n_rows": len(prof),
        },
        "quality_warnings": list(rep.quality_warnings),
    }
    if prediction is not None:
        angle, sigma2 = prediction
        out["prediction"] = {"angle_deg": float(angle), "sigma2": float(sigma2)}
    return out


def report_schema() -> dict:
    return json.loads(resources.files("spinecurve").joinpath("schemas/report.schema.json").read_text())
