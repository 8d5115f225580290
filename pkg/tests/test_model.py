import numpy as np
import pytest

from shapnoise.core import Dataset, Label, dataset_from_records
from shapnoise.harness import SynthConfig, synth_gaussian
from shapnoise.model import (
    FitDivergenceError,
    Model,
    TrainConfig,
    fit,
    loss_and_gradient,
    predict,
    predict_many,
)


def _line(xs, ys, start=0):
    return dataset_from_records(
        [(start + k, [float(x)], int(y)) for k, (x, y) in enumerate(zip(xs, ys))]
    )


def test_empty_training_set_predicts_negative():
    model = fit(Dataset.empty(2))
    assert model.is_constant and model.label is Label.NEGATIVE
    assert predict(model, [100.0, 100.0]) is Label.NEGATIVE


@pytest.mark.parametrize("label", [Label.POSITIVE, Label.NEGATIVE])
def test_single_class_gives_constant(label):
    model = fit(_line([0.0, 1.0, 5.0], [int(label)] * 3))
    assert model.is_constant and model.label is label


def test_two_point_sign():
    model = fit(_line([-1.0, 1.0], [0, 1]))
    assert model.weights[0] > 0
    assert predict(model, [1.0]) is Label.POSITIVE
    assert predict(model, [-1.0]) is Label.NEGATIVE


def test_predict_boundary_conventions():
    m = Model(np.array([1.0]), 0.0)
    assert predict(m, [3.0]) is Label.POSITIVE
    assert predict(m, [0.0]) is Label.POSITIVE  # sigmoid(0) = 0.5 counts as positive
    assert predict(m, [-1e-3]) is Label.NEGATIVE
    assert predict(Model.constant(Label.NEGATIVE, 1), [1e9]) is Label.NEGATIVE


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        predict(Model(np.zeros(2), 0.0), [1.0])


def _two_gaussians_1d(seed, n_per_class, gap=6.0):
    rng = np.random.default_rng(seed)
    xs = np.r_[rng.normal(-gap / 2, 1, n_per_class), rng.normal(gap / 2, 1, n_per_class)]
    ys = np.r_[np.zeros(n_per_class, int), np.ones(n_per_class, int)]
    return xs, ys


def test_separated_gaussians_against_midpoint_threshold():
    xs, ys = _two_gaussians_1d(0, 20)
    tx, ty = _two_gaussians_1d(1, 500)
    # oracle: the Bayes rule for equal-variance, equal-prior classes is the midpoint
    oracle_acc = np.mean((tx >= 0.0).astype(int) == ty)
    assert oracle_acc >= 0.95
    model = fit(_line(xs, ys))
    acc = np.mean(predict_many(model, tx[:, None]) == ty)
    assert acc >= 0.95
    assert abs(acc - oracle_acc) <= 0.02


def test_fit_is_pure():
    train, _ = synth_gaussian(SynthConfig(10, 30, 4, 2.0, seed=3))
    a, b = fit(train), fit(train)
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias


@pytest.mark.parametrize("scale", [0.5, 3.0])
def test_feature_scaling_keeps_predictions(scale):
    xs, ys = _two_gaussians_1d(4, 15)
    tx, _ = _two_gaussians_1d(5, 100)
    cfg = TrainConfig(max_epochs=5000, convergence_tol=1e-12, l2_penalty=0.0)
    base = predict_many(fit(_line(xs, ys), cfg), tx[:, None])
    scaled = predict_many(fit(_line(xs * scale, ys), cfg), (tx * scale)[:, None])
    # points in the thin band where both boundaries disagree are vanishingly rare here
    assert np.mean(base == scaled) >= 0.99


def test_divergence_reports_config():
    cfg = TrainConfig(learning_rate=1e6, l2_penalty=1.0)
    data = _line([-1e3, 1e3, 2e3], [0, 1, 0])
    with pytest.raises(FitDivergenceError) as info:
        fit(data, cfg)
    assert info.value.config == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(class_weight_positive=-1.0)


def test_auto_class_weight():
    cfg = TrainConfig(class_weight_positive=None)
    assert cfg.positive_weight(10, 40) == 4.0
    assert cfg.positive_weight(40, 10) == 1.0
    assert TrainConfig().positive_weight(10, 40) == 1.0


def central_difference(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        n, d = rng.integers(2, 12), rng.integers(1, 5)
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, n)
        cw, l2 = rng.uniform(0.5, 4.0), rng.uniform(0, 0.1)
        theta = rng.normal(size=d + 1)

        def obj(t):
            return loss_and_gradient(t[:d], t[d], X, y, cw, l2)[0]

        _, gw, gb = loss_and_gradient(theta[:d], theta[d], X, y, cw, l2)
        analytic = np.r_[gw, gb]
        numeric = central_difference(obj, theta)
        err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
        assert err < 1e-5
