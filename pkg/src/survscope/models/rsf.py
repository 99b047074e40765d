"""Random survival forest: bootstrap log-rank trees with Nelson-Aalen leaves."""

from __future__ import annotations

import math

import numpy as np

from ..exceptions import NoEventsError
from .base import FittedModel, register_family
from . import tree_kernels as tk


def resolve_max_features(max_features, p: int) -> int:
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(p)))
    if max_features == "log2":
        return max(1, math.ceil(math.log2(max(p, 2))))
    return max(1, min(int(max_features), p))


@register_family
class RSFModel(FittedModel):
    family = "rsf"

    def __init__(self, feature_names, trees, metadata=None):
        super().__init__(feature_names, metadata)
        self.trees = trees  # list of dicts of flat arrays

    def predict_survival(self, X, times) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        q = np.asarray(times, dtype=np.float64)
        out = np.zeros((X.shape[0], q.size))
        for tr in self.trees:
            leaves = tk.tree_apply(X, tr["feature"], tr["threshold"], tr["left"], tr["right"])
            out += tk.leaf_survival(leaves, q, tr["pl_times"], tr["pl_haz"],
                                    tr["pl_start"], tr["pl_end"])
        return out / len(self.trees)

    def _params_to_blob(self) -> dict:
        return {"trees": [{k: v.tolist() for k, v in tr.items()} for tr in self.trees]}

    @classmethod
    def _params_from_blob(cls, blob) -> "RSFModel":
        trees = [_tree_from_lists(t) for t in blob["params"]["trees"]]
        return cls(blob["feature_names"], trees, blob["metadata"])


def _tree_from_lists(t: dict) -> dict:
    out = {}
    for k, v in t.items():
        dtype = np.float64 if k in ("threshold", "pl_times", "pl_haz", "value") else np.int64
        out[k] = np.asarray(v, dtype=dtype)
    return out


def rsf_fit(X, times, events, feature_names, n_estimators: int = 100,
            max_depth=None, max_features="sqrt", min_samples_leaf: int = 3,
            seed: int = 0) -> RSFModel:
    """Bootstrap ensemble of survival trees split by the maximal standardized
    log-rank statistic. Per-tree seeds derive from the master seed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    if not events.any():
        raise NoEventsError("cannot grow survival trees without events")
    n, p = X.shape
    mtry = resolve_max_features(max_features, p)
    depth = -1 if max_depth is None else int(max_depth)
    trees = []
    for t in range(n_estimators):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        boot = rng.integers(0, n, n)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        arrays = tk.build_survival_tree(X, times, events, boot.astype(np.int64),
                                        depth, int(min_samples_leaf), mtry, tree_seed)
        keys = ("feature", "threshold", "left", "right", "count",
                "pl_times", "pl_haz", "pl_start", "pl_end")
        trees.append(dict(zip(keys, arrays)))
    meta = {"n_estimators": n_estimators, "max_depth": max_depth,
            "max_features": max_features, "resolved_max_features": mtry,
            "min_samples_leaf": min_samples_leaf, "seed": seed}
    return RSFModel(feature_names, trees, meta)
