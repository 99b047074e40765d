"""Censoring-aware evaluation metrics.

IPCW time-dependent concordance, expected L1 calibration error against
bin-local Kaplan-Meier event rates, the distributional calibration
chi-square test, and smoothed graphical calibration curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .exceptions import DegenerateRangeError, UndefinedMetricError
from .models.km import KMCurve, km_fit

WEIGHT_CAP_G = 0.05  # G is floored here, capping IPCW weights at 1/0.05


@dataclass
class CensoringWeightCurve:
    """Kaplan-Meier estimate of the censoring distribution G(t).

    Weights are 1/G(t-) with G floored at `cap` to avoid explosion near the
    censoring tail.
    """

    curve: KMCurve
    cap: float = WEIGHT_CAP_G

    def g_at(self, t, left: bool = True) -> np.ndarray:
        return np.maximum(self.curve.survival_at(t, left=left), self.cap)

    def weight_at(self, t) -> np.ndarray:
        return 1.0 / self.g_at(t)


def censoring_km(times, event_flags, cap: float = WEIGHT_CAP_G) -> CensoringWeightCurve:
    """KM fit with the roles of event and censoring swapped."""
    events = np.asarray(event_flags, dtype=bool)
    return CensoringWeightCurve(km_fit(times, ~events), cap)


def c_index_td(risk, times, event_flags, horizon: float,
               weights: CensoringWeightCurve | None = None) -> float:
    """IPCW time-dependent concordance at a horizon.

    Comparable pairs: i had an event at t_i <= horizon and j was still under
    observation at t_i (t_j > t_i). Each pair is weighted 1/G(t_i-)^2; ties
    in risk count one half.
    """
    risk = np.asarray(risk, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(event_flags, dtype=bool)
    anchors = np.flatnonzero(events & (times <= horizon))
    if anchors.size == 0:
        raise UndefinedMetricError("no events at or before the horizon")
    w_anchor = weights.weight_at(times[anchors]) ** 2 if weights is not None \
        else np.ones(anchors.size)
    num = 0.0
    den = 0.0
    for a, w in zip(anchors, w_anchor):
        later = times > times[a]
        m = int(later.sum())
        if m == 0:
            continue
        den += w * m
        num += w * (np.sum(risk[a] > risk[later]) + 0.5 * np.sum(risk[a] == risk[later]))
    if den == 0:
        raise UndefinedMetricError("no comparable pairs at this horizon")
    return float(num / den)


@dataclass
class ECEResult:
    value: float
    diagnostics: dict = field(default_factory=dict)


def ece(probabilities, times, event_flags, horizon: float, bins: int = 10) -> ECEResult:
    """Expected L1 calibration error at a horizon.

    Subjects sort into equal-mass bins of predicted event probability; the
    observed rate per bin is 1 - S_KM(horizon) from a bin-local KM curve.
    Tied predictions share a bin, so a constant predictor forms one bin;
    empty bins merge into their neighbor and are recorded in diagnostics.
    """
    p = np.asarray(probabilities, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(event_flags, dtype=bool)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    n = p.size
    edges = np.quantile(p, np.linspace(0, 1, bins + 1)[1:-1]) if n > 1 else np.array([])
    bin_id = np.searchsorted(edges, p, side="left")
    used = np.unique(bin_id)
    total = 0.0
    merged = int(bins - used.size)
    for b in used:
        mask = bin_id == b
        nb = int(mask.sum())
        km = km_fit(times[mask], events[mask])
        observed = 1.0 - float(km.survival_at(horizon)[0])
        predicted = float(p[mask].mean())
        total += (nb / n) * abs(predicted - observed)
    return ECEResult(float(total), {"bins_used": int(used.size), "bins_merged": merged})


@dataclass
class DCalibrationResult:
    p_value: float
    statistic: float
    bin_mass: np.ndarray
    low_power: bool = False


def d_calibration(survival_at_event, event_flags, bins: int = 10) -> DCalibrationResult:
    """Distributional calibration test.

    `survival_at_event` holds S_i(t_i), each subject's own predicted survival
    at its observed time. Event subjects should be uniform on [0, 1] under
    calibration; censored subjects spread fractional mass uniformly over
    [0, S_i(t_i)]. Chi-square goodness of fit against uniform over the bins.
    """
    s = np.asarray(survival_at_event, dtype=float)
    events = np.asarray(event_flags, dtype=bool)
    n = s.size
    if np.any((s < 0) | (s > 1)):
        raise ValueError("survival probabilities must lie in [0, 1]")
    mass = np.zeros(bins)
    width = 1.0 / bins
    for si, ev in zip(s, events):
        if ev:
            idx = min(int(si / width), bins - 1)
            mass[idx] += 1.0
        elif si <= 0.0:
            mass[0] += 1.0
        else:
            top = min(int(si / width), bins - 1)
            mass[top] += (si - top * width) / si
            if top > 0:
                mass[:top] += width / si
    expected = n / bins
    statistic = float(np.sum((mass - expected) ** 2 / expected))
    p_value = float(chi2.sf(statistic, df=bins - 1))
    return DCalibrationResult(p_value, statistic, mass, low_power=n < 20)


def calibration_curve(probabilities, times, event_flags, horizon: float,
                      window_fraction: float = 0.3,
                      percentile_clip: tuple[float, float] = (1.0, 99.0)):
    """Smoothed observed-vs-predicted event probability over the clipped
    prediction range.

    A sliding window holding `window_fraction` of the (sorted, clipped)
    subjects yields one (mean predicted, KM-observed) pair per position.
    Returns (predicted, observed) arrays; the ideal curve is the diagonal.
    """
    p = np.asarray(probabilities, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(event_flags, dtype=bool)
    if p.size < 20:
        raise ValueError("calibration_curve needs at least 20 subjects")
    lo, hi = np.percentile(p, percentile_clip)
    if hi <= lo:
        raise DegenerateRangeError("constant predictions: no range to calibrate over")
    keep = (p >= lo) & (p <= hi)
    p, times, events = p[keep], times[keep], events[keep]
    order = np.argsort(p, kind="stable")
    p, times, events = p[order], times[order], events[order]
    m = p.size
    w = max(int(np.ceil(window_fraction * m)), 2)
    preds, obs = [], []
    for center in range(m):
        lo_i = min(max(center - w // 2, 0), m - w)
        sl = slice(lo_i, lo_i + w)
        km = km_fit(times[sl], events[sl])
        preds.append(float(p[sl].mean()))
        obs.append(1.0 - float(km.survival_at(horizon)[0]))
    return np.asarray(preds), np.asarray(obs)


@dataclass
class MetricReport:
    """Per-family evaluation block mirroring one benchmark table row."""

    family: str
    horizons: tuple[float, float, float]
    concordance_mean: tuple[float, float, float]
    concordance_std: tuple[float, float, float]
    ece_mean: tuple[float, float, float]
    ece_std: tuple[float, float, float]
    d_calibration_p: float
    fold_concordance: list[list[float]] = field(default_factory=list)
    fold_ece: list[list[float]] = field(default_factory=list)
    failed: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "family": self.family, "horizons": list(self.horizons),
            "concordance_mean": list(self.concordance_mean),
            "concordance_std": list(self.concordance_std),
            "ece_mean": list(self.ece_mean), "ece_std": list(self.ece_std),
            "d_calibration_p": self.d_calibration_p,
            "fold_concordance": self.fold_concordance, "fold_ece": self.fold_ece,
            "failed": self.failed, "note": self.note,
        }

    @staticmethod
    def from_folds(family: str, horizons, fold_concordance, fold_ece,
                   d_cal_p: float, failed: bool = False, note: str = "") -> "MetricReport":
        c = np.asarray(fold_concordance, dtype=float)
        e = np.asarray(fold_ece, dtype=float)
        if c.size == 0:
            nan3 = (float("nan"),) * 3
            return MetricReport(family, tuple(horizons), nan3, nan3, nan3, nan3,
                                d_cal_p, [], [], failed, note)
        return MetricReport(
            family, tuple(horizons),
            tuple(float(v) for v in c.mean(axis=0)), tuple(float(v) for v in c.std(axis=0)),
            tuple(float(v) for v in e.mean(axis=0)), tuple(float(v) for v in e.std(axis=0)),
            float(d_cal_p), c.tolist(), e.tolist(), failed, note)
