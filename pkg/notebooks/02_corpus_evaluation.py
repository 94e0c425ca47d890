"""
How well do the estimators track the truth?
===========================================

Run the full pipeline over a seeded synthetic corpus of mixed single and
double curves and compare against the analytic angles.
"""

# %%
import numpy as np
from scipy import stats

from spinecurve.pipeline import analyze_mask
from spinecurve.synth import generate_corpus

corpus = generate_corpus(60, angle_range=(1, 45), seed=1, noise_sigma=0.3)
rows = [(truth, analyze_mask(mask).report) for mask, truth in corpus]

# %%
err = np.array([abs(r.max_angle_deg - t.apex_angle_deg) for t, r in rows])
print(f"angle error: median {np.median(err):.3f}  p95 {np.percentile(err, 95):.3f}  max {err.max():.3f} deg")

topology_ok = np.mean([r.noc_class == t.noc_class for t, r in rows])
print(f"number-of-curves class correct in {topology_ok:.0%} of scans")

# %%
# Maximum curvature alone already orders scans by severity.
rho = stats.spearmanr([r.max_curvature for _, r in rows], [t.apex_angle_deg for t, _ in rows])[0]
print(f"Spearman rank correlation, max kappa vs true angle: {rho:.3f}")

worst = int(np.argmax(err))
t, r = rows[worst]
print("worst case:", t.spec.shape, f"true {t.apex_angle_deg:.2f}, measured {r.max_angle_deg:.2f}")
