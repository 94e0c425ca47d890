"""
Reading an angle off the curvature score
========================================

Fit the small Laplace-likelihood regressor on (max kappa, angle) pairs from
one corpus and check it on another. The predicted variance grows where the
mapping is less certain.
"""

# %%
import numpy as np

from spinecurve.laplace_regressor import TrainConfig, predict_angle, train
from spinecurve.pipeline import analyze_mask
from spinecurve.synth import generate_corpus


def pairs(seed, n):
    out = [(analyze_mask(m).report.max_curvature, t.apex_angle_deg) for m, t in generate_corpus(n, seed=seed)]
    return np.array(out).T


x_train, y_train = pairs(10, 150)
x_test, y_test = pairs(11, 40)

# %%
model, log = train((x_train, y_train), TrainConfig(seed=0, learning_rate=1e-3))
print(f"{len(log)} epochs, best validation loss {min(r['val_loss'] for r in log):.3f}")

# %%
pred, var = predict_angle(model, x_test)
print(f"held-out mean absolute error {np.mean(np.abs(pred - y_test)):.2f} deg")
for k in (1.0, 1.1, 1.3, 1.5):
    a, s2 = predict_angle(model, k)
    print(f"kappa {k:.1f} -> {a:5.1f} deg  (sigma^2 {s2:.2f})")
