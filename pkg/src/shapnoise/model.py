"""Binary logistic regression trained by full-batch gradient descent.

This is the cheap classifier behind the utility ``V(S)``: every coalition the
Shapley engines visit is fitted from scratch, so the training loop is a numba
kernel with strictly sequential summation. That keeps a fit bit-reproducible
no matter which thread runs it or how many fits run at once.

Degenerate coalitions never reach the optimizer. The empty set yields a
constant-negative model and a single-class set yields a constant model of
that class.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numba
import numpy as np

from .core import Dataset, Label


class FitDivergenceError(ArithmeticError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, config: "TrainConfig", epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch} with {config}")
        self.config = config
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the logistic stage.

    ``class_weight_positive`` multiplies the loss of positive-class points.
    ``None`` selects automatic weighting: the ratio #negative / #positive of
    the coalition being fitted, floored at 1.0. The default of 1.0 is plain
    unweighted cross-entropy.
    """

    learning_rate: float = 0.1
    max_epochs: int = 200
    l2_penalty: float = 1e-4
    class_weight_positive: Optional[float] = 1.0
    convergence_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive")
        if int(self.max_epochs) != self.max_epochs or self.max_epochs < 1:
            raise ValueError("max_epochs must be a positive integer")
        if not self.l2_penalty >= 0:
            raise ValueError("l2_penalty must be non-negative")
        if self.class_weight_positive is not None and not self.class_weight_positive > 0:
            raise ValueError("class_weight_positive must be positive")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")

    def positive_weight(self, n_pos: int, n_neg: int) -> float:
        if self.class_weight_positive is not None:
            return float(self.class_weight_positive)
        if n_pos == 0:
            return 1.0
        return max(1.0, n_neg / n_pos)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Model:
    weights: np.ndarray
    bias: float
    kind: str = "trained"
    label: Optional[Label] = None

    @classmethod
    def constant(cls, label: Label, dim: int) -> "Model":
        return cls(np.zeros(dim), 0.0, "constant", Label(label))

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"


@numba.njit(cache=True, nogil=True)
def _loss_grad(X, y, pos, w, b, pos_weight, l2, grad_w):
    """Weighted cross-entropy + L2 at ``(w, b)`` over rows ``pos`` of ``X``.

    Writes the weight gradient into ``grad_w`` and returns ``(loss, grad_b)``.
    """
    n = pos.shape[0]
    d = X.shape[1]
    for j in range(d):
        grad_w[j] = 0.0
    grad_b = 0.0
    loss = 0.0
    for k in range(n):
        i = pos[k]
        z = b
        for j in range(d):
            z += w[j] * X[i, j]
        # log(1 + exp(-|z|)) keeps both log-likelihood branches finite
        if z >= 0.0:
            e = math.exp(-z)
            p = 1.0 / (1.0 + e)
            soft = math.log1p(e)
            nll_pos = soft
            nll_neg = z + soft
        else:
            e = math.exp(z)
            p = e / (1.0 + e)
            soft = math.log1p(e)
            nll_pos = soft - z
            nll_neg = soft
        if y[i] == 1:
            s = pos_weight
            loss += s * nll_pos
            r = s * (p - 1.0)
        else:
            s = 1.0
            loss += nll_neg
            r = p
        for j in range(d):
            grad_w[j] += r * X[i, j]
        grad_b += r
    loss /= n
    grad_b /= n
    for j in range(d):
        grad_w[j] = grad_w[j] / n + l2 * w[j]
        loss += 0.5 * l2 * w[j] * w[j]
    return loss, grad_b


@numba.njit(cache=True, nogil=True)
def _gradient_descent(X, y, pos, lr, max_epochs, l2, pos_weight, tol):
    d = X.shape[1]
    w = np.zeros(d)
    g = np.zeros(d)
    b = 0.0
    prev = np.inf
    for epoch in range(max_epochs):
        loss, gb = _loss_grad(X, y, pos, w, b, pos_weight, l2, g)
        if not math.isfinite(loss):
            return w, b, epoch, False
        if abs(prev - loss) < tol:
            return w, b, epoch, True
        prev = loss
        for j in range(d):
            w[j] -= lr * g[j]
        b -= lr * gb
    for j in range(d):
        if not math.isfinite(w[j]):
            return w, b, max_epochs, False
    return w, b, max_epochs, math.isfinite(b)


@numba.njit(cache=True, nogil=True)
def _predict_rows(X, w, b):
    n = X.shape[0]
    d = X.shape[1]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        z = b
        for j in range(d):
            z += w[j] * X[i, j]
        if z >= 0.0:
            p = 1.0 / (1.0 + math.exp(-z))
        else:
            e = math.exp(z)
            p = e / (1.0 + e)
        out[i] = 1 if p >= 0.5 else 0
    return out


def fit_rows(
    features: np.ndarray, labels: np.ndarray, rows: np.ndarray, config: TrainConfig
) -> Model:
    """Fit on ``features[rows]`` without materializing the subset."""
    dim = features.shape[1]
    rows = np.asarray(rows, dtype=np.int64)
    if rows.shape[0] == 0:
        return Model.constant(Label.NEGATIVE, dim)
    n_pos = int(labels[rows].sum())
    n_neg = rows.shape[0] - n_pos
    if n_pos == 0:
        return Model.constant(Label.NEGATIVE, dim)
    if n_neg == 0:
        return Model.constant(Label.POSITIVE, dim)
    w, b, epoch, ok = _gradient_descent(
        features,
        labels,
        rows,
        float(config.learning_rate),
        int(config.max_epochs),
        float(config.l2_penalty),
        config.positive_weight(n_pos, n_neg),
        float(config.convergence_tol),
    )
    if not ok:
        raise FitDivergenceError(config, int(epoch))
    return Model(w, float(b))


def fit(train: Dataset, config: TrainConfig = TrainConfig()) -> Model:
    """Train on every point of ``train``. Pure in ``(train, config)``."""
    return fit_rows(train.features, train.labels, np.arange(train.n), config)


def predict_many(model: Model, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.dim:
        raise ValueError(
            f"feature dimension {features.shape[-1]} does not match model dimension {model.dim}"
        )
    if model.is_constant:
        return np.full(features.shape[0], int(model.label), dtype=np.int64)
    return _predict_rows(features, model.weights, model.bias)


def predict(model: Model, features) -> Label:
    """Positive iff ``sigmoid(w.x + b) >= 0.5``; constant models return their label."""
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    return Label(int(predict_many(model, x)[0]))


def loss_and_gradient(
    weights: np.ndarray,
    bias: float,
    features: np.ndarray,
    labels: np.ndarray,
    pos_weight: float = 1.0,
    l2_penalty: float = 0.0,
) -> tuple[float, np.ndarray, float]:
    """The training objective and its analytic gradient, as used by :func:`fit`."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    grad_w = np.empty(features.shape[1])
    loss, grad_b = _loss_grad(
        features,
        labels,
        np.arange(features.shape[0], dtype=np.int64),
        np.asarray(weights, dtype=np.float64),
        float(bias),
        float(pos_weight),
        float(l2_penalty),
        grad_w,
    )
    return float(loss), grad_w, float(grad_b)
