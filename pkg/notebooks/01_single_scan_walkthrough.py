"""
One synthetic scan, start to finish
===================================

Build a soft mask with a known "C" curve, trace its midline, measure the
apex angle against the normal spine line and look at the curvature profile.
"""

# %%
import numpy as np

from spinecurve.dsm_angle import analyze_dsm
from spinecurve.integral_curvature import curvature_profile
from spinecurve.midcurve import build_baseline, extract_midcurve, smooth_curve
from spinecurve.synth import generate_softmask, vshape_for_angle

# a 14 degree bend with its apex in the thoracic region, plus 0.3 px of jitter
spec = vshape_for_angle(14.0, apex_row=150, noise_sigma=0.3, seed=5)
mask, truth = generate_softmask(spec)
print("channels", mask.channels.shape, "true apex angle", round(truth.apex_angle_deg, 3))

# %%
# The midline is the sub-pixel peak of the spine channel on each scanline.
curve = smooth_curve(extract_midcurve(mask), sigma=2.0)
baseline = build_baseline(curve)
print("baseline", baseline.p_top, "->", baseline.p_bottom)

# %%
report = analyze_dsm(curve, baseline)
for seg in report.segments:
    print(f"segment rows {seg.row_a:.1f}-{seg.row_b:.1f}  apex row {seg.apex[0]:.0f}  "
          f"angle {seg.angle_deg:.2f} deg  side {seg.side}")
print("scoliosis:", report.scoliosis_flag)

# %%
# Curvature as an area ratio: a disk of radius 20 px centred on the curve is
# split in two, and the larger part is divided by the smaller.
profile = curvature_profile(curve)
peak = int(np.argmax(profile.kappa))
print(f"max kappa {profile.kappa[peak]:.4f} at row {profile.rows[peak]}")

# a coarse text plot, one line per 16 rows
for r, k in zip(profile.rows[::16], profile.kappa[::16]):
    print(f"{r:4d} {'#' * int(round((k - 1) * 200))}")
