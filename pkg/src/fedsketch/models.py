"""Desk-scale trainer plug-ins: softmax regression and a one-hidden-layer MLP.

Weight matrices follow the output x input orientation, so a batch forward
pass is X @ W.T + b with biases stored as 1 x width matrices. Arithmetic
follows the dtype of the supplied parameters, which lets gradient checks run
in float64 while training stays in float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorops import DTYPE, Layer, ModelParams


def _softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = float((log_norm[:, 0] - z[np.arange(n), y]).mean())
    dlogits = np.exp(z - log_norm)
    dlogits[np.arange(n), y] -= 1
    dlogits /= n
    return loss, dlogits


@dataclass(frozen=True)
class SoftmaxRegression:
    dim: int
    classes: int

    layer_names = ("w", "b")

    def init_values(self, rng: np.random.Generator) -> list[np.ndarray]:
        w = (rng.standard_normal((self.classes, self.dim)) / np.sqrt(self.dim)).astype(DTYPE)
        b = np.zeros((1, self.classes), dtype=DTYPE)
        return [w, b]

    def logits(self, values, x):
        w, b = values
        return x @ w.T + b

    def loss(self, values, x, y) -> float:
        return _softmax_xent(self.logits(values, x), y)[0]

    def loss_and_grads(self, values, x, y):
        w, b = values
        loss, dlogits = _softmax_xent(self.logits(values, x), y)
        return loss, [dlogits.T @ x, dlogits.sum(axis=0, keepdims=True)]


@dataclass(frozen=True)
class OneHiddenMlp:
    """Fully connected net with a single tanh hidden layer."""

    dim: int
    classes: int
    hidden: int = 128

    layer_names = ("w1", "b1", "w2", "b2")

    def init_values(self, rng: np.random.Generator) -> list[np.ndarray]:
        w1 = (rng.standard_normal((self.hidden, self.dim)) / np.sqrt(self.dim)).astype(DTYPE)
        b1 = np.zeros((1, self.hidden), dtype=DTYPE)
        w2 = (rng.standard_normal((self.classes, self.hidden)) / np.sqrt(self.hidden)).astype(DTYPE)
        b2 = np.zeros((1, self.classes), dtype=DTYPE)
        return [w1, b1, w2, b2]

    def logits(self, values, x):
        w1, b1, w2, b2 = values
        return np.tanh(x @ w1.T + b1) @ w2.T + b2

    def loss(self, values, x, y) -> float:
        return _softmax_xent(self.logits(values, x), y)[0]

    def loss_and_grads(self, values, x, y):
        w1, b1, w2, b2 = values
        hidden = np.tanh(x @ w1.T + b1)
        loss, dlogits = _softmax_xent(hidden @ w2.T + b2, y)
        dhidden = (dlogits @ w2) * (1 - hidden * hidden)
        return loss, [
            dhidden.T @ x,
            dhidden.sum(axis=0, keepdims=True),
            dlogits.T @ hidden,
            dlogits.sum(axis=0, keepdims=True),
        ]


Model = SoftmaxRegression | OneHiddenMlp


def init_params(model: Model, rng: np.random.Generator) -> ModelParams:
    values = model.init_values(rng)
    return ModelParams([Layer(n, v) for n, v in zip(model.layer_names, values)])


def predict(model: Model, values, x) -> np.ndarray:
    return model.logits(values, x).argmax(axis=1)


def accuracy(model: Model, values, x, y) -> float:
    return float((predict(model, values, x) == y).mean())
