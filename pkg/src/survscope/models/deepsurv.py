"""Cox proportional hazards neural network trained on batch-local risk sets."""

from __future__ import annotations

import numpy as np

from ..exceptions import DivergenceError, NoEventsError
from .base import BreslowBaseline, FittedModel, register_family
from .coxnet import cox_gradient_hessian
from .nets import MLP, standardizer


@register_family
class DeepSurvModel(FittedModel):
    family = "deepsurv"

    def __init__(self, feature_names, net, mean, sd, baseline, metadata=None):
        super().__init__(feature_names, metadata)
        self.net = net
        self.mean = np.asarray(mean, dtype=float)
        self.sd = np.asarray(sd, dtype=float)
        self.baseline = baseline

    def linear_predictor(self, X) -> np.ndarray:
        Xs = (np.asarray(X, dtype=float) - self.mean) / self.sd
        out, _ = self.net.forward(Xs)
        return out[:, 0]

    def predict_survival(self, X, times) -> np.ndarray:
        return self.baseline.survival(self.linear_predictor(X), times)

    def _params_to_blob(self) -> dict:
        return {"net": self.net.to_blob(), "mean": self.mean.tolist(),
                "sd": self.sd.tolist(), "baseline": self.baseline.to_blob()}

    @classmethod
    def _params_from_blob(cls, blob) -> "DeepSurvModel":
        p = blob["params"]
        return cls(blob["feature_names"], MLP.from_blob(p["net"]), np.array(p["mean"]),
                   np.array(p["sd"]), BreslowBaseline.from_blob(p["baseline"]),
                   blob["metadata"])


def batch_loss_and_grads(net: MLP, Xb, times_b, events_b):
    """Negative Cox partial likelihood of one batch (batch-local risk sets,
    normalized by the batch event count) and its parameter gradients.

    Returns (loss, dW, db). The analytic gradients here are what the
    finite-difference checks validate."""
    eta, acts = net.forward(Xb)
    g, _, nll = cox_gradient_hessian(times_b, events_b, eta[:, 0])
    n_events = float(np.sum(events_b))
    loss = nll / n_events
    dW, db, _ = net.backward(acts, (g / n_events)[:, None])
    return loss, dW, db


def deepsurv_fit(X, times, events, feature_names, layers=1, nodes: int = 50,
                 learning_rate: float = 0.01, batch_size: int = 64,
                 epochs: int = 10, seed: int = 0) -> DeepSurvModel:
    """Mini-batch gradient descent on the negative partial likelihood.

    `layers=None` degenerates to a linear risk model. The full-data loss is
    logged before training and after each epoch (`loss_path` metadata).
    """
    X = np.asarray(X, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if not events.any():
        raise NoEventsError("cannot fit DeepSurv without events")
    n, p = X.shape
    mean, sd = standardizer(X)
    Xs = (X - mean) / sd

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    hidden = [] if layers is None else [int(nodes)] * int(layers)
    net = MLP([p] + hidden + [1], rng)

    def full_loss() -> float:
        eta = net.forward(Xs)[0][:, 0]
        return cox_gradient_hessian(times, events, eta)[2] / float(events.sum())

    loss_path = [full_loss()]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            batch = order[lo:lo + batch_size]
            if not events[batch].any():
                continue
            loss, dW, db = batch_loss_and_grads(net, Xs[batch], times[batch], events[batch])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss in epoch {epoch}", epoch=epoch)
            net.step(dW, db, learning_rate)
        loss_path.append(full_loss())
    if not np.isfinite(loss_path[-1]):
        raise DivergenceError(f"non-finite loss after epoch {epochs - 1}", epoch=epochs - 1)

    eta = net.forward(Xs)[0][:, 0]
    baseline = BreslowBaseline.fit(times, events, eta)
    meta = {"layers": layers, "nodes": nodes, "learning_rate": learning_rate,
            "batch_size": batch_size, "epochs": epochs, "seed": seed,
            "loss_path": [float(v) for v in loss_path]}
    return DeepSurvModel(feature_names, net, mean, sd, baseline, meta)
