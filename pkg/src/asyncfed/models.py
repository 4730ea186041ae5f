"""Toy trainable models, batch SGD, and evaluation.

Models expose flat weight vectors so that every aggregation path works
on plain 1-D arrays.  Multinomial logistic regression is the workhorse
(its gradients run through the JIT kernels); a one-hidden-layer MLP and
a linear regressor are available for experiments and hand oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import kernels
from .datasets import Dataset
from .errors import NumericError, ParameterError, ShapeMismatchError
from .weights import check_finite

LR_REGIMES = ("fixed", "sync_decay", "async_decay")


@dataclass(frozen=True)
class TrainConfig:
    """Per-worker training knobs."""

    batch_size: int = 32
    local_rounds_per_epoch: int = 1
    lr_regime: str = "fixed"
    lr_initial: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    lr_total_steps: int = 100

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ParameterError(f"batch_size must be positive, got {self.batch_size}")
        if self.local_rounds_per_epoch <= 0:
            raise ParameterError(
                f"local_rounds_per_epoch must be positive, got {self.local_rounds_per_epoch}"
            )
        if self.lr_regime not in LR_REGIMES:
            raise ParameterError(
                f"lr_regime must be one of {LR_REGIMES}, got {self.lr_regime!r}"
            )
        if self.lr_initial <= 0:
            raise ParameterError(f"lr_initial must be positive, got {self.lr_initial}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")


class Model(Protocol):
    """Anything trainable by ``sgd_train_batch``/``evaluate``."""

    @property
    def n_params(self) -> int: ...

    def init_weights(self, seed: int) -> np.ndarray: ...

    def loss_and_grad(
        self, weights: np.ndarray, X: np.ndarray, y: np.ndarray
    ) -> tuple[float, np.ndarray]: ...

    def predict(self, weights: np.ndarray, X: np.ndarray) -> np.ndarray: ...


class LogisticModel:
    """Multinomial logistic regression on flat weights ``[W.ravel(), b]``."""

    def __init__(self, dims: int, classes: int):
        if dims <= 0 or classes < 2:
            raise ParameterError(f"invalid logistic shape dims={dims} classes={classes}")
        self.dims = dims
        self.classes = classes

    @property
    def n_params(self) -> int:
        return self.dims * self.classes + self.classes

    def init_weights(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return 0.01 * rng.standard_normal(self.n_params)

    def _unflatten(self, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if weights.shape != (self.n_params,):
            raise ShapeMismatchError(
                f"expected {self.n_params} weights, got shape {weights.shape}"
            )
        split = self.dims * self.classes
        W = np.ascontiguousarray(weights[:split].reshape(self.dims, self.classes))
        b = np.ascontiguousarray(weights[split:])
        return W, b

    def loss_and_grad(self, weights, X, y):
        W, b = self._unflatten(weights)
        loss, grad_w, grad_b = kernels.softmax_xent(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.int64),
            W,
            b,
        )
        return loss, np.concatenate([grad_w.ravel(), grad_b])

    def predict(self, weights, X):
        W, b = self._unflatten(weights)
        return np.argmax(X @ W + b, axis=1)


class MlpModel:
    """One-hidden-layer tanh MLP with a softmax head."""

    def __init__(self, dims: int, hidden: int, classes: int):
        if dims <= 0 or hidden <= 0 or classes < 2:
            raise ParameterError(
                f"invalid MLP shape dims={dims} hidden={hidden} classes={classes}"
            )
        self.dims = dims
        self.hidden = hidden
        self.classes = classes

    @property
    def n_params(self) -> int:
        return (self.dims + 1) * self.hidden + (self.hidden + 1) * self.classes

    def init_weights(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        scale1 = 1.0 / np.sqrt(self.dims)
        scale2 = 1.0 / np.sqrt(self.hidden)
        w1 = scale1 * rng.standard_normal(self.dims * self.hidden)
        b1 = np.zeros(self.hidden)
        w2 = scale2 * rng.standard_normal(self.hidden * self.classes)
        b2 = np.zeros(self.classes)
        return np.concatenate([w1, b1, w2, b2])

    def _unflatten(self, weights):
        if weights.shape != (self.n_params,):
            raise ShapeMismatchError(
                f"expected {self.n_params} weights, got shape {weights.shape}"
            )
        d, h, c = self.dims, self.hidden, self.classes
        i = 0
        W1 = weights[i:i + d * h].reshape(d, h); i += d * h
        b1 = weights[i:i + h]; i += h
        W2 = weights[i:i + h * c].reshape(h, c); i += h * c
        b2 = weights[i:i + c]
        return W1, b1, W2, b2

    def _forward(self, weights, X):
        W1, b1, W2, b2 = self._unflatten(weights)
        hidden = np.tanh(X @ W1 + b1)
        logits = hidden @ W2 + b2
        return hidden, logits, (W1, b1, W2, b2)

    def loss_and_grad(self, weights, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = X.shape[0]
        hidden, logits, (W1, _, W2, _) = self._forward(weights, X)
        m = logits.max(axis=1, keepdims=True)
        z = logits - m
        e = np.exp(z)
        s = e.sum(axis=1)
        idx = np.arange(n)
        loss = float(np.mean(np.log(s) - z[idx, y]))
        p = e / s[:, None]
        p[idx, y] -= 1.0
        p /= n
        grad_w2 = hidden.T @ p
        grad_b2 = p.sum(axis=0)
        back = (p @ W2.T) * (1.0 - hidden**2)
        grad_w1 = X.T @ back
        grad_b1 = back.sum(axis=0)
        return loss, np.concatenate(
            [grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2]
        )

    def predict(self, weights, X):
        _, logits, _ = self._forward(weights, np.asarray(X, dtype=np.float64))
        return np.argmax(logits, axis=1)


class LinearModel:
    """Plain linear regressor with squared loss ``mean(0.5 * (Xw - y)^2)``.

    Predictions round to the nearest integer so evaluation accuracy is
    defined for integer targets.
    """

    def __init__(self, dims: int, bias: bool = False):
        if dims <= 0:
            raise ParameterError(f"dims must be positive, got {dims}")
        self.dims = dims
        self.bias = bias

    @property
    def n_params(self) -> int:
        return self.dims + (1 if self.bias else 0)

    def init_weights(self, seed: int) -> np.ndarray:
        return np.zeros(self.n_params)

    def loss_and_grad(self, weights, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        w = weights[: self.dims]
        pred = X @ w + (weights[-1] if self.bias else 0.0)
        resid = pred - y
        loss = float(np.mean(0.5 * resid**2))
        grad_w = X.T @ resid / X.shape[0]
        if self.bias:
            return loss, np.concatenate([grad_w, [resid.mean()]])
        return loss, grad_w

    def predict(self, weights, X):
        X = np.asarray(X, dtype=np.float64)
        pred = X @ weights[: self.dims] + (weights[-1] if self.bias else 0.0)
        return np.rint(pred).astype(np.int64)


MODEL_KINDS = {"logistic": LogisticModel, "mlp": MlpModel}


def sgd_train_batch(
    model: Model,
    weights: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    lr: float,
    momentum: float,
    velocity: np.ndarray,
) -> tuple[np.ndarray, float, np.ndarray]:
    """One momentum-SGD step on a batch.

    Returns ``(new_weights, pre_step_batch_loss, new_velocity)``.
    """
    if X.shape[0] == 0:
        raise ParameterError("batch must be nonempty")
    if weights.shape != velocity.shape:
        raise ShapeMismatchError(
            f"velocity shape {velocity.shape} does not match weights {weights.shape}"
        )
    loss, grad = model.loss_and_grad(weights, X, y)
    if not np.isfinite(loss):
        raise NumericError(f"batch loss is non-finite: {loss!r}")
    check_finite(grad, context="gradient")
    new_weights, new_velocity = kernels.momentum_step(
        weights, grad, velocity, lr, momentum
    )
    return new_weights, float(loss), new_velocity


def evaluate(model: Model, weights: np.ndarray, data: Dataset) -> tuple[float, float]:
    """Mean loss and accuracy of ``weights`` over the whole dataset."""
    if data.size == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    loss, _ = model.loss_and_grad(weights, data.features, data.labels)
    predictions = model.predict(weights, data.features)
    accuracy = float(np.mean(predictions == data.labels))
    return float(loss), accuracy
