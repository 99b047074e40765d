"""Gradient-boosted survival: regression trees on Cox partial-likelihood
gradients with a Breslow baseline for survival prediction."""

from __future__ import annotations

import numpy as np

from ..exceptions import NoEventsError
from .base import BreslowBaseline, FittedModel, register_family
from .coxnet import cox_gradient_hessian
from .rsf import resolve_max_features, _tree_from_lists
from . import tree_kernels as tk


@register_family
class GBTModel(FittedModel):
    family = "gbt"

    def __init__(self, feature_names, trees, learning_rate, baseline, metadata=None):
        super().__init__(feature_names, metadata)
        self.trees = trees
        self.learning_rate = float(learning_rate)
        self.baseline = baseline

    def linear_predictor(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        eta = np.zeros(X.shape[0])
        for tr in self.trees:
            leaves = tk.tree_apply(X, tr["feature"], tr["threshold"], tr["left"], tr["right"])
            eta += self.learning_rate * tr["value"][leaves]
        return eta

    def predict_survival(self, X, times) -> np.ndarray:
        return self.baseline.survival(self.linear_predictor(X), times)

    def _params_to_blob(self) -> dict:
        return {"trees": [{k: v.tolist() for k, v in tr.items()} for tr in self.trees],
                "learning_rate": self.learning_rate,
                "baseline": self.baseline.to_blob()}

    @classmethod
    def _params_from_blob(cls, blob) -> "GBTModel":
        p = blob["params"]
        trees = [_tree_from_lists(t) for t in p["trees"]]
        return cls(blob["feature_names"], trees, p["learning_rate"],
                   BreslowBaseline.from_blob(p["baseline"]), blob["metadata"])


def gbt_fit(X, times, events, feature_names, n_estimators: int = 100,
            max_depth: int = 3, max_features="sqrt", min_samples_leaf: int = 1,
            learning_rate: float = 0.1, seed: int = 0) -> GBTModel:
    """Stagewise least-squares trees fit to the negative gradient of the
    Breslow partial likelihood. The per-round training loss is recorded in
    the metadata as `loss_path`."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    if not events.any():
        raise NoEventsError("cannot boost without events")
    n, p = X.shape
    mtry = resolve_max_features(max_features, p)
    all_idx = np.arange(n, dtype=np.int64)
    eta = np.zeros(n)
    trees = []
    loss_path = []
    keys = ("feature", "threshold", "left", "right", "count", "value")
    master = np.random.default_rng(np.random.SeedSequence([seed]))
    for m in range(n_estimators):
        g, _, nll = cox_gradient_hessian(times, events, eta)
        loss_path.append(nll / n)
        residual = -g
        tree_seed = int(master.integers(0, 2**31 - 1))
        arrays = tk.build_regression_tree(X, residual, all_idx, int(max_depth),
                                          int(min_samples_leaf), mtry, tree_seed)
        tr = dict(zip(keys, arrays))
        trees.append(tr)
        leaves = tk.tree_apply(X, tr["feature"], tr["threshold"], tr["left"], tr["right"])
        eta += learning_rate * tr["value"][leaves]
    loss_path.append(cox_gradient_hessian(times, events, eta)[2] / n)

    baseline = BreslowBaseline.fit(times, events, eta)
    meta = {"n_estimators": n_estimators, "max_depth": max_depth,
            "max_features": max_features, "resolved_max_features": mtry,
            "min_samples_leaf": min_samples_leaf, "learning_rate": learning_rate,
            "seed": seed, "loss_path": [float(v) for v in loss_path]}
    return GBTModel(feature_names, trees, learning_rate, baseline, meta)
