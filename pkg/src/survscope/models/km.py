"""Kaplan-Meier product-limit estimation and at-risk tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMCurve:
    """Step-function survival estimate with per-time counts.

    `times` are the distinct observed times in ascending order; `survival[k]`
    is the estimate just after `times[k]`. Ties at one time are processed as
    a single step, with censorings at an event time handled after the events.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    censored: np.ndarray
    n: int

    def survival_at(self, t, left: bool = False) -> np.ndarray:
        """Step evaluation; `left=True` gives the left limit S(t-)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        side = "left" if left else "right"
        idx = np.searchsorted(self.times, t, side=side)
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx]


def km_fit(times, event_flags) -> KMCurve:
    times = np.asarray(times, dtype=float)
    events = np.asarray(event_flags, dtype=bool)
    n = times.size
    if n == 0:
        raise ValueError("km_fit requires at least one subject")
    uniq = np.unique(times)
    idx = np.searchsorted(uniq, times)
    d = np.zeros(uniq.size)
    c = np.zeros(uniq.size)
    np.add.at(d, idx[events], 1.0)
    np.add.at(c, idx[~events], 1.0)
    removed = np.concatenate([[0.0], np.cumsum(d + c)[:-1]])
    at_risk = n - removed
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(at_risk > 0, 1.0 - d / np.maximum(at_risk, 1.0), 1.0)
    surv = np.cumprod(factor)
    return KMCurve(uniq, surv, at_risk, d, c, n)


def km_at_risk_table(curve: KMCurve, grid) -> dict[str, np.ndarray]:
    """Counts at each grid time in the three-row layout used for KM plots:
    at risk, cumulative censored, cumulative events. The rows partition the
    cohort at every grid time."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted")
    cum_events = np.concatenate([[0.0], np.cumsum(curve.events)])
    cum_cens = np.concatenate([[0.0], np.cumsum(curve.censored)])
    pos = np.searchsorted(curve.times, grid, side="right")
    events = cum_events[pos]
    censored = cum_cens[pos]
    at_risk = curve.n - events - censored
    return {"time": grid, "at_risk": at_risk.astype(int),
            "censored": censored.astype(int), "events": events.astype(int)}
