"""Uniform fitted-model contract and serialization shared by all families."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class FittedModel:
    """An immutable trained model exposing survival-curve prediction.

    Subclasses implement `predict_survival(X, times)` returning an (n, m)
    array with values in [0, 1], non-increasing along times, and S(x, 0)=1.
    Competing-risks families additionally implement `predict_cif`.
    """

    family: str = "base"

    def __init__(self, feature_names, metadata=None):
        self.feature_names = tuple(feature_names)
        self.metadata = dict(metadata or {})

    def predict_survival(self, X: np.ndarray, times) -> np.ndarray:
        raise NotImplementedError

    def predict_risk(self, X: np.ndarray, horizon: float) -> np.ndarray:
        """Predicted probability of failing by the horizon, higher = riskier."""
        return 1.0 - self.predict_survival(X, [horizon])[:, 0]

    def predict_cif(self, X: np.ndarray, times, cause: int) -> np.ndarray:
        raise NotImplementedError(f"{self.family} is not a competing-risks family")

    def predict_survival_at_times(self, X: np.ndarray, per_row_times) -> np.ndarray:
        """S_i(t_i): each subject's curve evaluated at its own time."""
        t = np.asarray(per_row_times, dtype=float)
        uniq = np.unique(t)
        S = self.predict_survival(X, uniq)
        return S[np.arange(S.shape[0]), np.searchsorted(uniq, t)]

    @property
    def supports_competing(self) -> bool:
        return False

    def check_features(self, feature_names) -> None:
        if tuple(feature_names) != self.feature_names:
            raise ValueError(
                f"feature names of the data do not match the {self.family} model "
                f"({len(feature_names)} vs {len(self.feature_names)} columns)")

    # serialization ------------------------------------------------------
    def _params_to_blob(self) -> dict:
        raise NotImplementedError

    @classmethod
    def _params_from_blob(cls, blob: dict) -> "FittedModel":
        raise NotImplementedError

    def to_blob(self) -> dict:
        return {"family": self.family, "version": 1,
                "feature_names": list(self.feature_names),
                "metadata": _jsonable(self.metadata),
                "params": self._params_to_blob()}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_blob(), sort_keys=True))


FAMILY_REGISTRY: dict[str, type] = {}


def register_family(cls):
    FAMILY_REGISTRY[cls.family] = cls
    return cls


def load_model(path: str | Path) -> FittedModel:
    blob = json.loads(Path(path).read_text())
    family = blob.get("family")
    if family not in FAMILY_REGISTRY:
        raise ValueError(f"unknown model family {family!r} in {path}")
    if blob.get("version") != 1:
        raise ValueError(f"unsupported model blob version {blob.get('version')!r}")
    return FAMILY_REGISTRY[family]._params_from_blob(blob)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


class BreslowBaseline:
    """Nonparametric baseline cumulative hazard for Cox-type risk scores.

    H0(t) = sum over event times <= t of d_k / sum_{j at risk} exp(eta_j).
    """

    def __init__(self, event_times: np.ndarray, cumhaz: np.ndarray):
        self.event_times = np.asarray(event_times, dtype=float)
        self.cumhaz = np.asarray(cumhaz, dtype=float)

    @classmethod
    def fit(cls, times, events, eta) -> "BreslowBaseline":
        times = np.asarray(times, dtype=float)
        events = np.asarray(events, dtype=bool)
        eta = np.asarray(eta, dtype=float)
        order = np.argsort(times, kind="stable")
        t_s, e_s, r_s = times[order], events[order], np.exp(eta[order])
        # at-risk sums from the tail: S0 at position i = sum of exp(eta) for t >= t_i
        s0_rev = np.cumsum(r_s[::-1])[::-1]
        uniq, first_idx = np.unique(t_s, return_index=True)
        d = np.zeros(uniq.size)
        np.add.at(d, np.searchsorted(uniq, t_s[e_s]), 1.0)
        mask = d > 0
        hazard = np.zeros(uniq.size)
        hazard[mask] = d[mask] / s0_rev[first_idx[mask]]
        return cls(uniq[mask], np.cumsum(hazard[mask]))

    def cumhaz_at(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.event_times, t, side="right")
        padded = np.concatenate([[0.0], self.cumhaz])
        return padded[idx]

    def survival(self, eta: np.ndarray, times) -> np.ndarray:
        """(n, m) survival matrix for risk scores eta at query times."""
        h0 = self.cumhaz_at(times)[None, :]
        return np.exp(-h0 * np.exp(np.asarray(eta, dtype=float))[:, None])

    def to_blob(self) -> dict:
        return {"event_times": self.event_times.tolist(), "cumhaz": self.cumhaz.tolist()}

    @classmethod
    def from_blob(cls, blob: dict) -> "BreslowBaseline":
        return cls(np.array(blob["event_times"]), np.array(blob["cumhaz"]))
