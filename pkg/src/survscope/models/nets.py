"""Minimal feed-forward network with hand-written backpropagation.

Used by the neural survival families. Tanh hidden activations keep the loss
smooth so analytic gradients can be validated against central finite
differences. Weights initialize uniform in +-1/sqrt(fan-in) from a seeded
generator.
"""

from __future__ import annotations

import numpy as np


class MLP:
    """Fully connected layers; the output layer is linear when `out_linear`,
    otherwise every layer applies tanh (representation mode)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, out_linear: bool = True):
        self.sizes = list(sizes)
        self.out_linear = out_linear
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.W.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.W)

    def forward(self, X: np.ndarray):
        """Returns (output, cache) where cache holds layer activations."""
        h = X
        acts = [X]
        for li in range(self.n_layers):
            z = h @ self.W[li] + self.b[li]
            if li < self.n_layers - 1 or not self.out_linear:
                h = np.tanh(z)
            else:
                h = z
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out: np.ndarray):
        """Gradients of a scalar loss wrt all parameters given d loss/d output.

        Returns (dW list, db list, dX)."""
        dW = [None] * self.n_layers
        db = [None] * self.n_layers
        grad = d_out
        for li in range(self.n_layers - 1, -1, -1):
            h_out = acts[li + 1]
            if li < self.n_layers - 1 or not self.out_linear:
                grad = grad * (1.0 - h_out**2)
            dW[li] = acts[li].T @ grad
            db[li] = grad.sum(axis=0)
            grad = grad @ self.W[li].T
        return dW, db, grad

    def step(self, dW, db, lr: float) -> None:
        for li in range(self.n_layers):
            self.W[li] -= lr * dW[li]
            self.b[li] -= lr * db[li]

    def to_blob(self) -> dict:
        return {"sizes": self.sizes, "out_linear": self.out_linear,
                "W": [w.tolist() for w in self.W], "b": [b.tolist() for b in self.b]}

    @classmethod
    def from_blob(cls, blob: dict) -> "MLP":
        net = cls.__new__(cls)
        net.sizes = list(blob["sizes"])
        net.out_linear = bool(blob["out_linear"])
        net.W = [np.asarray(w, dtype=float) for w in blob["W"]]
        net.b = [np.asarray(b, dtype=float) for b in blob["b"]]
        return net


def standardizer(X: np.ndarray):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mean, sd


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_softplus(y: float) -> float:
    if y > 30:
        return float(y)
    return float(np.log(np.expm1(max(y, 1e-8))))
