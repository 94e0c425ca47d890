"""Spinal curvature measurement from soft segmentation masks of DXA scans."""

from .dsm_angle import CurveSegment, GeometryReport, analyze_dsm, find_intersections, measure_angle, segment_curves
from .errors import (DegenerateError, DivergenceError, DomainError, EmptyScanError, FormatError, NumericError,
                     SpineCurveError, StructureError, SupportError)
from .integral_curvature import (CurvatureProfile, DiskSplit, curvature_profile, heatmap_values, kappa_at,
                                 max_curvature_score, split_disk)
from .laplace_regressor import (LabeledSample, RegressorModel, TrainConfig, forward, laplace_nll, predict_angle,
                                train)
from .mask_io import (CanonicalFrame, ScanGrid, SoftMask, load_scan, load_softmask, normalize_height, save_scan,
                      save_softmask)
from .midcurve import BaselineSegment, MidCurve, build_baseline, extract_midcurve, smooth_curve
from .pipeline import Analysis, AnalysisParams, analyze_mask
from .synth import GroundTruth, SynthSpec, generate_softmask, ground_truth

__version__ = "0.1.0"

__all__ = [
    "Analysis", "AnalysisParams", "BaselineSegment", "CanonicalFrame", "CurvatureProfile", "CurveSegment",
    "DegenerateError", "DiskSplit", "DivergenceError", "DomainError", "EmptyScanError", "FormatError",
    "GeometryReport", "GroundTruth", "LabeledSample", "MidCurve", "NumericError", "RegressorModel", "ScanGrid",
    "SoftMask", "SpineCurveError", "StructureError", "SupportError", "SynthSpec", "TrainConfig", "analyze_dsm",
    "analyze_mask", "build_baseline", "curvature_profile", "extract_midcurve", "find_intersections", "forward",
    "generate_softmask", "ground_truth", "heatmap_values", "kappa_at", "laplace_nll", "load_scan",
    "load_softmask", "max_curvature_score", "measure_angle", "normalize_height", "predict_angle", "save_scan",
    "save_softmask", "segment_curves", "smooth_curve", "split_disk", "train",
]
