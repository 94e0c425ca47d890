"""Curvature -> angle regressor with a Laplace likelihood.

A 1 -> 16 -> 16 -> 2 fully-connected network. Each hidden layer is
``Linear -> ReLU -> BatchNorm``; the head emits the angle ``mu`` and a raw
scale that goes through softplus to give ``sigma2 > 0``. Training minimises
the mean per-sample negative log-likelihood

    ln(2 * sigma2) + |y - mu| / sigma2

with Adam. Gradients are derived by hand; ``finite_difference_grads`` is
kept alongside as an independent check.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DivergenceError, DomainError, NumericError

FORMAT_VERSION = 1
LAYER_DIMS = (1, 16, 16, 2)
INPUT_SHIFT = 1.0
BN_EPS = 1e-3
BN_MOMENTUM = 0.1
PARAM_NAMES = ("W1", "b1", "g1", "be1", "W2", "b2", "g2", "be2", "W3", "b3")


@dataclass(frozen=True)
class LabeledSample:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError("samples must be finite")
        if self.x < 1:
            raise DomainError(f"kappa must be >= 1, got {self.x}")
        if self.y < 0:
            raise DomainError(f"angle must be >= 0, got {self.y}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    learning_rate: float = 1e-4
    max_epochs: int = 2000
    patience: int = 20
    seed: int = 0
    plateau_threshold: float = 1e-4
    decay_factor: float = 0.1
    max_decays: int = 2
    adam_eps: float = 1e-8
    val_fraction: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise DomainError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise DomainError("batch_size, max_epochs and patience must be >= 1")


class RegressorModel:
    """Parameters and batch-norm running statistics of the regressor."""

    def __init__(self, params: dict, buffers: dict, target_shift: float = 0.0, target_scale: float = 1.0):
        self.params = {k: np.array(params[k], dtype=np.float64) for k in PARAM_NAMES}
        self.buffers = {k: np.array(v, dtype=np.float64) for k, v in buffers.items()}
        if not (math.isfinite(target_shift) and math.isfinite(target_scale) and target_scale > 0):
            raise DomainError("target_shift must be finite and target_scale positive")
        # mu = shift + scale * head_0 and sigma2 = scale * softplus(head_1)
        self.target_shift = float(target_shift)
        self.target_scale = float(target_scale)

    @classmethod
    def initialize(cls, seed: int = 0) -> "RegressorModel":
        """He-normal hidden weights, first-layer biases spread over the input range.

        The head starts near zero so the untrained model predicts the target
        median with unit scale in both batch-norm modes.
        """
        rng = np.random.default_rng(seed)
        d0, d1, d2, d3 = LAYER_DIMS
        params = {
            "W1": rng.normal(0, math.sqrt(2 / d0), (d0, d1)),
            "b1": rng.uniform(-0.5, 0.5, d1),
            "g1": np.ones(d1),
            "be1": np.zeros(d1),
            "W2": rng.normal(0, math.sqrt(2 / d1), (d1, d2)),
            "b2": np.zeros(d2),
            "g2": np.ones(d2),
            "be2": np.zeros(d2),
            "W3": rng.normal(0, 0.01, (d2, d3)),
            "b3": np.zeros(d3),
        }
        return cls(params, cls._fresh_buffers())

    @classmethod
    def zeros(cls) -> "RegressorModel":
        """All weights and biases zero, identity batch-norm."""
        m = cls.initialize(0)
        for k in PARAM_NAMES:
            m.params[k] = np.ones_like(m.params[k]) if k.startswith("g") else np.zeros_like(m.params[k])
        return m

    @staticmethod
    def _fresh_buffers():
        return {
            "rm1": np.zeros(LAYER_DIMS[1]), "rv1": np.ones(LAYER_DIMS[1]),
            "rm2": np.zeros(LAYER_DIMS[2]), "rv2": np.ones(LAYER_DIMS[2]),
        }

    def copy(self) -> "RegressorModel":
        return RegressorModel(self.params, self.buffers, self.target_shift, self.target_scale)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "layer_dims": list(LAYER_DIMS),
            "input_shift": INPUT_SHIFT,
            "bn_eps": BN_EPS,
            "bn_momentum": BN_MOMENTUM,
            "target_shift": self.target_shift,
            "target_scale": self.target_scale,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
            "buffers": {k: v.tolist() for k, v in self.buffers.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise DomainError(f"unsupported model format_version {d.get('format_version')!r}")
        if tuple(d.get("layer_dims", ())) != LAYER_DIMS or d.get("input_shift") != INPUT_SHIFT:
            raise DomainError("model layout does not match this regressor")
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(params, d["buffers"], d.get("target_shift", 0.0), d.get("target_scale", 1.0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "RegressorModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def softplus(s):
    return np.logaddexp(0.0, s)


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def laplace_nll(mu, sigma2, y):
    """Per-sample Laplace negative log-likelihood, ``ln(2 sigma2) + |y - mu| / sigma2``."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise DomainError("sigma2 must be positive")
    out = np.log(2.0 * sigma2) + np.abs(np.asarray(y, dtype=np.float64) - mu) / sigma2
    return float(out) if out.ndim == 0 else out


def _check(value, layer):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite activation in layer {layer}", layer=layer)


def _bn_train(a, gamma, beta):
    mean = a.mean(axis=0)
    var = a.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std), mean, var


def _bn_backward(dout, gamma, cache):
    xhat, inv_std = cache
    n = dout.shape[0]
    dxhat = dout * gamma
    da = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return da, (dout * xhat).sum(axis=0), dout.sum(axis=0)


def _as_input(x):
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    _check(x, 0)
    return x - INPUT_SHIFT


def _forward(model: RegressorModel, x, mode: str):
    p = model.params
    x = _as_input(x)
    cache = {"x": x}
    stats = {}
    h = x
    for i in (1, 2):
        z = h @ p[f"W{i}"] + p[f"b{i}"]
        a = np.maximum(z, 0.0)
        if mode == "train":
            h_next, bn_cache, mean, var = _bn_train(a, p[f"g{i}"], p[f"be{i}"])
            cache[f"bn{i}"] = bn_cache
            stats[i] = (mean, var, a.shape[0])
        elif mode == "eval":
            rm, rv = model.buffers[f"rm{i}"], model.buffers[f"rv{i}"]
            h_next = p[f"g{i}"] * (a - rm) / np.sqrt(rv + BN_EPS) + p[f"be{i}"]
        else:
            raise DomainError(f"mode must be 'train' or 'eval', got {mode!r}")
        _check(h_next, i)
        cache[f"in{i}"], cache[f"z{i}"] = h, z
        h = h_next
    out = h @ p["W3"] + p["b3"]
    _check(out, 3)
    cache["in3"] = h
    raw = out[:, 1]
    mu = model.target_shift + model.target_scale * out[:, 0]
    sigma2 = model.target_scale * softplus(raw)
    cache["raw"] = raw
    return mu, sigma2, cache, stats


def forward(model: RegressorModel, x, mode: str = "eval"):
    """Return ``(mu, sigma2)`` for inputs ``x`` (kappa values).

    In ``eval`` mode batch-norm uses the running statistics and the result
    is deterministic. ``train`` mode normalises with the batch's own
    statistics and leaves the model untouched.
    """
    mu, sigma2, _, _ = _forward(model, x, mode)
    return mu, sigma2


def batch_loss(model: RegressorModel, x, y, mode: str = "train") -> float:
    mu, sigma2 = forward(model, x, mode)
    return float(np.mean(laplace_nll(mu, sigma2, y)))


def backward(model: RegressorModel, x, y):
    """Mean batch loss and its exact gradient for every parameter (train mode).

    ``d|r|/dr`` is taken as 0 at ``r = 0``.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    mu, sigma2, cache, stats = _forward(model, x, "train")
    n = y.size
    resid = y - mu
    loss = float(np.mean(np.log(2.0 * sigma2) + np.abs(resid) / sigma2))
    p = model.params
    d_mu = -np.sign(resid) / sigma2 / n
    d_sigma2 = (1.0 / sigma2 - np.abs(resid) / sigma2**2) / n
    d_out = model.target_scale * np.stack([d_mu, d_sigma2 * _sigmoid(cache["raw"])], axis=1)

    grads = {"W3": cache["in3"].T @ d_out, "b3": d_out.sum(axis=0)}
    dh = d_out @ p["W3"].T
    for i in (2, 1):
        da, grads[f"g{i}"], grads[f"be{i}"] = _bn_backward(dh, p[f"g{i}"], cache[f"bn{i}"])
        dz = da * (cache[f"z{i}"] > 0)
        grads[f"W{i}"] = cache[f"in{i}"].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ p[f"W{i}"].T
    return loss, grads, stats


def finite_difference_grads(model: RegressorModel, x, y, h: float = 1e-4):
    """Central differences of the train-mode mean loss, one coordinate at a time.

    Also returns, per parameter, a boolean mask of coordinates whose stencil
    crossed a kink (a ReLU input or a residual changed sign between ``-h``
    and ``+h``); those coordinates have no derivative to compare against.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    grads, kinked = {}, {}

    def signature(m):
        mu, _, cache, _ = _forward(m, x, "train")
        return np.concatenate([(cache["z1"] > 0).ravel(), (cache["z2"] > 0).ravel(), np.sign(y - mu)])

    for name in PARAM_NAMES:
        base = model.params[name]
        g = np.zeros_like(base)
        k = np.zeros(base.shape, dtype=bool)
        for idx in np.ndindex(base.shape):
            probe = model.copy()
            probe.params[name][idx] = base[idx] + h
            up, sig_up = batch_loss(probe, x, y), signature(probe)
            probe.params[name][idx] = base[idx] - h
            down, sig_down = batch_loss(probe, x, y), signature(probe)
            g[idx] = (up - down) / (2 * h)
            k[idx] = not np.array_equal(sig_up, sig_down)
        grads[name], kinked[name] = g, k
    return grads, kinked


class PlateauScheduler:
    """Learning-rate decay on a validation-loss plateau.

    An epoch improves when its loss beats the best so far by more than
    ``threshold``. After ``patience`` epochs without improvement the rate is
    multiplied by ``factor``; once ``max_decays`` decays have happened the
    next plateau stops training.
    """

    def __init__(self, lr, patience=20, threshold=1e-4, factor=0.1, max_decays=2):
        self.lr = lr
        self.patience = patience
        self.threshold = threshold
        self.factor = factor
        self.max_decays = max_decays
        self.best = math.inf
        self.bad_epochs = 0
        self.decays = 0

    def step(self, loss: float) -> str:
        """Record one epoch; returns ``improved``, ``wait``, ``decay`` or ``stop``."""
        if loss < self.best - self.threshold:
            self.best = loss
            self.bad_epochs = 0
            return "improved"
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return "wait"
        self.bad_epochs = 0
        if self.decays >= self.max_decays:
            return "stop"
        self.decays += 1
        self.lr *= self.factor
        return "decay"


class Adam:
    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _update_running(model: RegressorModel, stats):
    for i, (mean, var, n) in stats.items():
        unbiased = var * n / (n - 1) if n > 1 else var
        model.buffers[f"rm{i}"] = (1 - BN_MOMENTUM) * model.buffers[f"rm{i}"] + BN_MOMENTUM * mean
        model.buffers[f"rv{i}"] = (1 - BN_MOMENTUM) * model.buffers[f"rv{i}"] + BN_MOMENTUM * unbiased


def _arrays(data):
    if isinstance(data, tuple) and len(data) == 2:
        x, y = (np.asarray(a, dtype=np.float64).ravel() for a in data)
        for xi, yi in zip(x, y):
            LabeledSample(float(xi), float(yi))
        return x, y
    samples = list(data)
    return (np.array([s.x for s in samples], dtype=np.float64),
            np.array([s.y for s in samples], dtype=np.float64))


def target_scaling(y):
    """Median and mean absolute deviation of the targets (scale floored at 1)."""
    shift = float(np.median(y))
    return shift, max(1.0, float(np.mean(np.abs(y - shift))))


def train(data, config: TrainConfig = TrainConfig(), val_data=None):
    """Fit a fresh model; returns ``(best_model, log)``.

    ``data`` and ``val_data`` are sequences of ``LabeledSample`` or
    ``(kappa_array, angle_array)`` pairs. Without ``val_data`` a seeded
    ``config.val_fraction`` of ``data`` is held out. The model with the
    lowest validation loss is returned; ``log`` has one dict per epoch.
    """
    x, y = _arrays(data)
    if x.size < 2:
        raise DomainError("training needs at least 2 samples")
    rng = np.random.default_rng(config.seed)
    if val_data is None:
        order = rng.permutation(x.size)
        n_val = max(1, int(round(config.val_fraction * x.size)))
        val_idx, train_idx = order[:n_val], order[n_val:]
        xv, yv, x, y = x[val_idx], y[val_idx], x[train_idx], y[train_idx]
    else:
        xv, yv = _arrays(val_data)

    model = RegressorModel.initialize(config.seed)
    model.target_shift, model.target_scale = target_scaling(y)
    adam = Adam(model.params, config.beta1, config.beta2, config.adam_eps)
    sched = PlateauScheduler(config.learning_rate, config.patience, config.plateau_threshold,
                             config.decay_factor, config.max_decays)
    best, best_val = model.copy(), math.inf
    log = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(x.size)
        total = 0.0
        # a short trailing batch gives batch-norm noisy statistics; drop it
        # unless the whole set fits in one batch
        n_batches = max(1, x.size // config.batch_size)
        seen = 0
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            try:
                loss, grads, stats = backward(model, x[idx], y[idx])
            except NumericError:
                loss = math.nan
            if not math.isfinite(loss):
                raise DivergenceError(f"training diverged at epoch {epoch}", epoch=epoch)
            adam.step(model.params, grads, sched.lr)
            _update_running(model, stats)
            total += loss * idx.size
            seen += idx.size
        try:
            val = batch_loss(model, xv, yv, mode="eval")
        except NumericError:
            val = math.nan
        if not math.isfinite(val):
            raise DivergenceError(f"validation loss became non-finite at epoch {epoch}", epoch=epoch)
        log.append({"epoch": epoch, "train_loss": total / seen, "val_loss": val, "lr": sched.lr})
        if val < best_val:
            best, best_val = model.copy(), val
        if sched.step(val) == "stop":
            break
    return best, log


def predict_angle(model: RegressorModel, kappa):
    """Eval-mode ``(angle_deg, sigma2)``; negative angles are clamped to 0."""
    k = np.asarray(kappa, dtype=np.float64)
    if np.any(~np.isfinite(k)) or np.any(k < 1):
        raise DomainError(f"kappa must be finite and >= 1, got {kappa}")
    mu, sigma2 = forward(model, k.ravel(), "eval")
    angle = np.maximum(mu, 0.0)
    if k.ndim == 0:
        return float(angle[0]), float(sigma2[0])
    return angle.reshape(k.shape), sigma2.reshape(k.shape)


def read_training_csv(path):
    """Read a ``kappa,angle_deg`` CSV; bad rows raise with their line number."""
    xs, ys = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DomainError(f"{path}: empty CSV")
        if [h.strip() for h in header] != ["kappa", "angle_deg"]:
            raise DomainError(f"{path}: header must be 'kappa,angle_deg', got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                k, a = float(row[0]), float(row[1])
                LabeledSample(k, a)
            except (ValueError, IndexError, DomainError) as exc:
                raise DomainError(f"{path}: row {lineno}: {exc}") from None
            xs.append(k)
            ys.append(a)
    if not xs:
        raise DomainError(f"{path}: no data rows")
    return np.array(xs), np.array(ys)


def write_log_csv(log, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr"], lineterminator="\n")
        writer.writeheader()
        for row in log:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
