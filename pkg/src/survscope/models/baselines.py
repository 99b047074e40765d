"""Clinical risk-score baselines: integer scores from configured component
tables, turned into survival curves through published annual event rates."""

from __future__ import annotations

import numpy as np

from ..cohort import CodeList
from ..core import DAYS_PER_YEAR
from .base import FittedModel, register_family

SCHEMES = ("cha2ds2vasc", "hasbled")


class ScoringTable:
    """Component -> (code list, points) plus age bands and a sex point."""

    def __init__(self, scheme: str, raw: dict):
        self.scheme = scheme
        self.components = []
        for name, spec in raw.get("components", {}).items():
            dx_entries = [e for e in spec["codes"] if not e.startswith("rx:")]
            rx_entries = [e[3:] for e in spec["codes"] if e.startswith("rx:")]
            self.components.append((
                name,
                CodeList(name, dx_entries) if dx_entries else None,
                CodeList(name + ":rx", rx_entries) if rx_entries else None,
                int(spec["points"]),
            ))
        self.age_bands = [(float(b["min"]), float(b.get("max", np.inf)), int(b["points"]))
                          for b in raw.get("age_bands", [])]
        self.female_points = int(raw.get("female_points", 0))


def risk_score(features: dict[str, float], scheme: str, table: ScoringTable) -> int:
    """Sum of points over satisfied components; deterministic."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if table.scheme != scheme:
        raise ValueError(f"scoring table is for {table.scheme!r}, not {scheme!r}")
    total = 0
    for _, dx_list, rx_list, points in table.components:
        hit = False
        for name, value in features.items():
            if value <= 0:
                continue
            if name.startswith("dx:") and dx_list is not None and dx_list.matches(name[3:]):
                hit = True
                break
            if name.startswith("rx:") and rx_list is not None and rx_list.matches(name[3:]):
                hit = True
                break
        if hit:
            total += points
    age = float(features.get("age", 0.0))
    for lo, hi, points in table.age_bands:
        if lo <= age < hi:
            total += points
    if table.female_points and float(features.get("sex", 0.0)) >= 1.0:
        total += table.female_points
    return total


def score_to_survival(score: int, rate_table: dict[int, float]):
    """Constant-hazard survival from the tabulated annual rate (percent).

    Returns (survival_fn over days, clamped_flag). Scores outside the table
    clamp to the nearest tabulated score.
    """
    keys = sorted(rate_table)
    clamped = score not in rate_table
    eff = min(max(score, keys[0]), keys[-1])
    if eff not in rate_table:
        eff = min(keys, key=lambda k: abs(k - score))
    annual = float(rate_table[eff]) / 100.0

    def survival(times_days):
        t = np.asarray(times_days, dtype=float) / DAYS_PER_YEAR
        return np.exp(-annual * t)

    return survival, clamped


@register_family
class RiskScoreModel(FittedModel):
    """FittedModel adapter: feature map -> score -> constant-hazard curve."""

    family = "risk-score"

    def __init__(self, feature_names, scheme, table_raw, rate_table, metadata=None):
        super().__init__(feature_names, metadata)
        self.scheme = scheme
        self.table_raw = table_raw
        self.rate_table = {int(k): float(v) for k, v in rate_table.items()}
        self._table = ScoringTable(scheme, table_raw)

    def scores(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0], dtype=int)
        for i, row in enumerate(np.asarray(X, dtype=float)):
            feats = dict(zip(self.feature_names, row))
            out[i] = risk_score(feats, self.scheme, self._table)
        return out

    def predict_survival(self, X, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        out = np.empty((np.asarray(X).shape[0], times.size))
        clamped = 0
        for i, s in enumerate(self.scores(np.asarray(X))):
            fn, was_clamped = score_to_survival(int(s), self.rate_table)
            clamped += was_clamped
            out[i] = fn(times)
        self.metadata["clamped_scores"] = int(clamped)
        return out

    def _params_to_blob(self) -> dict:
        return {"scheme": self.scheme, "table": self.table_raw,
                "rate_table": {str(k): v for k, v in self.rate_table.items()}}

    @classmethod
    def _params_from_blob(cls, blob) -> "RiskScoreModel":
        p = blob["params"]
        return cls(blob["feature_names"], p["scheme"], p["table"],
                   {int(k): v for k, v in p["rate_table"].items()}, blob["metadata"])
