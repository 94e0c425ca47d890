import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import linear_data
from spinecurve.errors import DivergenceError, DomainError, NumericError
from spinecurve.laplace_regressor import (
    PARAM_NAMES, LabeledSample, PlateauScheduler, RegressorModel, TrainConfig, backward,
    batch_loss, finite_difference_grads, forward, laplace_nll, predict_angle, read_training_csv,
    softplus, target_scaling, train, write_log_csv,
)


def tensor_rel_error(grads, fd, kinked):
    """Largest per-tensor relative error, kinked coordinates excluded."""
    worst = 0.0
    for k in PARAM_NAMES:
        a = np.where(kinked[k], 0.0, grads[k])
        b = np.where(kinked[k], 0.0, fd[k])
        scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-5)
        worst = max(worst, np.linalg.norm(a - b) / scale)
    return worst


def random_point(t, rng, batch=16):
    model = RegressorModel.initialize(t)
    model.params["W3"] = rng.normal(0.0, 0.25, model.params["W3"].shape)
    x = 1.0 + (np.arange(batch) + rng.uniform(0, 1, batch)) / batch
    y = rng.uniform(0.0, 45.0, batch)
    model.target_shift, model.target_scale = target_scaling(y)
    return model, x, y


# loss

def test_nll_zero_residual_half_variance_is_zero():
    assert laplace_nll(3.0, 0.5, 3.0) == 0.0


def test_nll_unit_variance():
    assert laplace_nll(1.0, 1.0, 1.0) == pytest.approx(math.log(2), abs=1e-15)


def test_nll_fixed_residual_and_grid_optimum():
    assert laplace_nll(0.0, 1.0, 2.0) == pytest.approx(math.log(2) + 2)
    grid = np.linspace(0.05, 10, 200_000)
    best = grid[np.argmin(laplace_nll(0.0, grid, 2.0))]
    assert best == pytest.approx(2.0, abs=1e-3)


@pytest.mark.parametrize("s2", [0.0, -1.0])
def test_nll_rejects_nonpositive_variance(s2):
    with pytest.raises(DomainError):
        laplace_nll(0.0, s2, 1.0)


@given(st.floats(-100, 100), st.floats(1e-3, 100), st.floats(-100, 100))
def test_nll_matches_density(mu, s2, y):
    density = math.exp(-abs(y - mu) / s2) / (2 * s2)
    if density > 0:
        assert laplace_nll(mu, s2, y) == pytest.approx(-math.log(density), rel=1e-12, abs=1e-12)


# forward

def test_zero_model_outputs():
    mu, s2 = forward(RegressorModel.zeros(), np.array([1.0, 1.5, 3.0]))
    assert np.all(mu == 0.0)
    assert np.allclose(s2, math.log(2), rtol=0, atol=1e-15)


def test_eval_is_deterministic():
    m = RegressorModel.initialize(3)
    x = np.linspace(1, 2, 7)
    a, b = forward(m, x), forward(m, x)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@given(st.integers(0, 2**31), st.lists(st.floats(1.0, 50.0), min_size=2, max_size=20))
def test_variance_positive(seed, xs):
    m = RegressorModel.initialize(seed)
    for mode in ("eval", "train"):
        _, s2 = forward(m, np.array(xs), mode)
        assert np.all(s2 > 0)


def test_forward_rejects_nonfinite_input():
    with pytest.raises(NumericError) as exc:
        forward(RegressorModel.initialize(0), np.array([1.0, np.nan]))
    assert exc.value.layer == 0


def test_softplus_stable():
    assert softplus(1000.0) == 1000.0
    assert softplus(-1000.0) >= 0


# gradients

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for t in range(5):
        model, x, y = random_point(t, rng)
        _, grads, _ = backward(model, x, y)
        fd, kinked = finite_difference_grads(model, x, y)
        assert tensor_rel_error(grads, fd, kinked) <= 1e-4


def test_duplicated_batch_same_gradient():
    model, x, y = random_point(0, np.random.default_rng(2), batch=8)
    _, g1, _ = backward(model, x, y)
    _, g2, _ = backward(model, np.tile(x, 2), np.tile(y, 2))
    for k in PARAM_NAMES:
        assert np.allclose(g1[k], g2[k], rtol=1e-9, atol=1e-12)


def test_zero_residual_mu_head_stationary():
    model = RegressorModel.initialize(0)
    x = np.linspace(1, 2, 8)
    mu, s2 = forward(model, x, "train")
    _, grads, _ = backward(model, x, mu)
    assert np.all(grads["W3"][:, 0] == 0) and grads["b3"][0] == 0


def test_backward_loss_equals_batch_loss():
    model, x, y = random_point(4, np.random.default_rng(4))
    loss, _, _ = backward(model, x, y)
    assert loss == batch_loss(model, x, y)


# scheduler

def test_decay_exactly_at_patience():
    s = PlateauScheduler(1e-4, patience=5)
    assert s.step(1.0) == "improved"
    # monotone worsening: the fifth bad epoch exhausts the window
    assert [s.step(1.0 + k) for k in range(1, 6)] == ["wait"] * 4 + ["decay"]
    assert s.lr == pytest.approx(1e-5)
    assert [s.step(9.0) for _ in range(5)][-1] == "decay"
    assert [s.step(9.0) for _ in range(5)] == ["wait"] * 4 + ["stop"]


def test_small_improvements_do_not_count():
    s = PlateauScheduler(1.0, patience=2, threshold=1e-4)
    assert [s.step(v) for v in (1.0, 1.0 - 5e-5, 1.0 - 9e-5)] == ["improved", "wait", "decay"]


# training

def test_constant_target():
    x = np.linspace(1, 2, 256)
    model, _ = train((x, np.full_like(x, 7.0)), TrainConfig(max_epochs=500, seed=1))
    pred, _ = predict_angle(model, np.linspace(1, 2, 11))
    assert np.all(np.abs(pred - 7.0) <= 0.1)


def test_straight_pairs_predict_zero():
    data = [LabeledSample(1.0, 0.0)] * 64
    model, _ = train(data, TrainConfig(max_epochs=200))
    angle, s2 = predict_angle(model, 1.0)
    assert angle <= 0.5 and s2 > 0


def test_linear_fit(linear_model):
    model, log = linear_model
    xt = 1.0 + np.random.default_rng(7).uniform(0, 1, 500)
    pred, _ = predict_angle(model, xt)
    assert np.mean(np.abs(pred - 30 * (xt - 1))) <= 0.3
    assert min(r["val_loss"] for r in log) < log[0]["val_loss"]


def test_monotone_predictions(linear_model):
    pred, _ = predict_angle(linear_model[0], np.linspace(1, 2, 100))
    assert np.all(np.diff(pred) >= 0)


def test_training_bit_reproducible():
    x, y = linear_data(200)
    cfg = TrainConfig(seed=5, max_epochs=30)
    (m1, l1), (m2, l2) = train((x, y), cfg), train((x, y), cfg)
    assert l1 == l2
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in PARAM_NAMES)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    x, y = linear_data(64)
    with pytest.raises(DivergenceError) as exc:
        train((x, y), TrainConfig(learning_rate=1e306, max_epochs=5))
    assert exc.value.epoch >= 1


def test_train_needs_two_samples():
    with pytest.raises(DomainError):
        train([LabeledSample(1.0, 0.0)])


@pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(beta1=1.0), dict(beta2=0.0)])
def test_config_validation(bad):
    with pytest.raises(DomainError):
        TrainConfig(**bad)


@pytest.mark.parametrize("x,y", [(0.99, 1.0), (1.0, -1.0), (math.nan, 1.0)])
def test_sample_validation(x, y):
    with pytest.raises(DomainError):
        LabeledSample(x, y)


# prediction

def test_predict_rejects_small_kappa():
    with pytest.raises(DomainError):
        predict_angle(RegressorModel.initialize(0), 0.9)


def test_prediction_clamped_at_zero():
    m = RegressorModel.zeros()
    m.target_shift = -5.0
    assert predict_angle(m, 1.2)[0] == 0.0


# io

def test_save_load_roundtrip(tmp_path, linear_model):
    model = linear_model[0]
    path = tmp_path / "m.json"
    model.save(path)
    back = RegressorModel.load(path)
    g = np.linspace(1, 2, 17)
    assert np.array_equal(predict_angle(model, g)[0], predict_angle(back, g)[0])
    d = json.loads(path.read_text())
    assert d["format_version"] == 1 and d["input_shift"] == 1.0


def test_load_rejects_other_version(tmp_path):
    d = RegressorModel.initialize(0).to_dict()
    d["format_version"] = 99
    with pytest.raises(DomainError):
        RegressorModel.from_dict(d)


def test_csv_reading(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("kappa,angle_deg\n1.0,0\n1.5,15\n")
    x, y = read_training_csv(p)
    assert x.tolist() == [1.0, 1.5] and y.tolist() == [0.0, 15.0]


@pytest.mark.parametrize("body,needle", [
    ("", "empty"),
    ("kappa,angle_deg\n", "no data"),
    ("k,a\n1,2\n", "header"),
    ("kappa,angle_deg\n1.0,0\n0.8,3\n", "row 3"),
    ("kappa,angle_deg\n1.0,nan\n", "row 2"),
])
def test_csv_errors(tmp_path, body, needle):
    p = tmp_path / "t.csv"
    p.write_text(body)
    with pytest.raises(DomainError, match=needle):
        read_training_csv(p)


def test_log_csv(tmp_path):
    log = [{"epoch": 1, "train_loss": 0.5, "val_loss": 0.25, "lr": 1e-4}]
    p = tmp_path / "log.csv"
    write_log_csv(log, p)
    assert p.read_text().splitlines() == ["epoch,train_loss,val_loss,lr", "1,0.5,0.25,0.0001"]
