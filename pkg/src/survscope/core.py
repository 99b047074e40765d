"""Core data model for censored time-to-event data.

Holds the dataset type shared by the generator, the cohort ETL, every model
family and every metric, plus fold splitting and horizon selection.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import NoEventsError

DAYS_PER_MONTH = 30.4375
DAYS_PER_YEAR = 365.25


class Cause(enum.IntEnum):
    """Event label of a subject. Single-risk pipelines never use COMPETING."""

    CENSORED = 0
    EVENT = 1
    COMPETING = 2


_CAUSE_TO_JSON = {Cause.CENSORED: "censored", Cause.EVENT: "event", Cause.COMPETING: "competing"}
_JSON_TO_CAUSE = {v: k for k, v in _CAUSE_TO_JSON.items()}


@dataclass(frozen=True)
class Subject:
    """One study subject: feature vector, follow-up time in days, event label."""

    id: str
    features: tuple[float, ...]
    time: int
    cause: Cause

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        object.__setattr__(self, "cause", Cause(self.cause))


class SurvivalDataset:
    """Immutable collection of subjects with a shared feature-name list.

    Times are integer days from the index date. Construction freezes numpy
    views (`X`, `times`, `causes`, `events`) used by models and metrics.
    """

    def __init__(self, subjects: Sequence[Subject], feature_names: Sequence[str],
                 metadata: dict | None = None):
        self._subjects = tuple(subjects)
        self._feature_names = tuple(str(n) for n in feature_names)
        self._metadata = dict(metadata or {})
        n, p = len(self._subjects), len(self._feature_names)
        X = np.zeros((n, p), dtype=np.float64)
        times = np.zeros(n, dtype=np.float64)
        causes = np.zeros(n, dtype=np.int8)
        for i, s in enumerate(self._subjects):
            if len(s.features) == p:
                X[i] = s.features
            times[i] = s.time
            causes[i] = int(s.cause)
        for arr in (X, times, causes):
            arr.setflags(write=False)
        self._X, self._times, self._causes = X, times, causes

    @property
    def subjects(self) -> tuple[Subject, ...]:
        return self._subjects

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self._feature_names

    @property
    def metadata(self) -> dict:
        return dict(self._metadata)

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def causes(self) -> np.ndarray:
        return self._causes

    @property
    def events(self) -> np.ndarray:
        """Boolean mask: observed an event of any cause (not censored)."""
        return self._causes != int(Cause.CENSORED)

    def __len__(self) -> int:
        return len(self._subjects)

    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self._subjects)

    def subset(self, indices: Iterable[int], metadata: dict | None = None) -> "SurvivalDataset":
        idx = list(indices)
        return SurvivalDataset([self._subjects[i] for i in idx], self._feature_names,
                               metadata if metadata is not None else self._metadata)

    def with_feature_columns(self, keep: Sequence[int]) -> "SurvivalDataset":
        keep = list(keep)
        names = [self._feature_names[j] for j in keep]
        subjects = [Subject(s.id, tuple(s.features[j] for j in keep), s.time, s.cause)
                    for s in self._subjects]
        return SurvivalDataset(subjects, names, self._metadata)

    def recode_competing_as_censored(self) -> "SurvivalDataset":
        """Cause-specific view: competing events become plain censoring."""
        subjects = [
            Subject(s.id, s.features, s.time,
                    Cause.CENSORED if s.cause == Cause.COMPETING else s.cause)
            for s in self._subjects
        ]
        meta = dict(self._metadata)
        meta["encoding"] = "cause-specific"
        return SurvivalDataset(subjects, self._feature_names, meta)


@dataclass(frozen=True)
class HorizonSet:
    """Evaluation horizons in days at the 25/50/75% event-time quantiles."""

    horizons: tuple[float, float, float]

    def __post_init__(self):
        h = tuple(float(v) for v in self.horizons)
        if len(h) != 3 or any(v <= 0 for v in h) or not (h[0] <= h[1] <= h[2]):
            raise ValueError(f"horizons must be three positive non-decreasing values, got {h}")
        object.__setattr__(self, "horizons", h)

    @property
    def quantile_labels(self) -> tuple[str, str, str]:
        return ("25%", "50%", "75%")

    def __iter__(self):
        return iter(self.horizons)


@dataclass
class ValidationReport:
    """All dataset violations found; empty list means the dataset is clean."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dataset(ds: SurvivalDataset) -> ValidationReport:
    """Report duplicate ids, feature-length mismatches, negative times and
    unknown cause labels. Never raises; callers decide what to do."""
    report = ValidationReport()
    if len(ds) == 0:
        report.violations.append("dataset has no subjects")
    if not ds.feature_names:
        report.violations.append("feature_names is empty")
    seen: set[str] = set()
    p = len(ds.feature_names)
    for s in ds.subjects:
        if s.id in seen:
            report.violations.append(f"duplicate id {s.id!r}")
        seen.add(s.id)
        if len(s.features) != p:
            report.violations.append(
                f"subject {s.id!r}: feature vector length {len(s.features)} != {p}")
        if s.time < 0:
            report.violations.append(f"subject {s.id!r}: negative time {s.time}")
        if not isinstance(s.cause, Cause):
            report.violations.append(f"subject {s.id!r}: unknown cause label {s.cause!r}")
    return report


def stratified_kfold(ds: SurvivalDataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic k-fold partition stratified by event-vs-censored.

    Returns (train_indices, validation_indices) pairs. Validation folds are
    disjoint, cover all subjects, and per-fold event counts differ by at
    most one.
    """
    n = len(ds)
    if not (2 <= k <= n):
        raise ValueError(f"k must satisfy 2 <= k <= n (k={k}, n={n})")
    rng = np.random.default_rng(seed)
    events = ds.events
    fold_of = np.empty(n, dtype=np.int64)
    pos = 0
    for mask in (events, ~events):
        idx = np.flatnonzero(mask)
        rng.shuffle(idx)
        fold_of[idx] = (pos + np.arange(len(idx))) % k
        pos += len(idx)
    out = []
    all_idx = np.arange(n)
    for f in range(k):
        val = all_idx[fold_of == f]
        train = all_idx[fold_of != f]
        out.append((train, val))
    return out


def event_time_quantiles(ds: SurvivalDataset, probs: Sequence[float] = (0.25, 0.50, 0.75)) -> HorizonSet:
    """Empirical quantiles of the primary-event times, lower interpolation.

    Uses the sorted observed times of subjects with cause EVENT; the value at
    index floor((n-1)*p) is returned so every horizon is an observed event
    time. Censored (and competing-event) subjects are ignored.
    """
    t = np.sort(ds.times[ds.causes == int(Cause.EVENT)])
    if t.size == 0:
        raise NoEventsError("no primary events in dataset; horizons undefined")
    n = t.size
    vals = tuple(float(t[int(np.floor((n - 1) * p))]) for p in probs)
    return HorizonSet(vals)


def save_dataset(ds: SurvivalDataset, path: str | Path) -> None:
    """Write JSON-Lines subjects plus a sidecar header file.

    `<path>` gets one subject per line; `<path stem>.header.json` carries
    feature_names and metadata.
    """
    path = Path(path)
    with path.open("w") as fh:
        for s in ds.subjects:
            fh.write(json.dumps({
                "id": s.id,
                "time_days": int(s.time),
                "cause": _CAUSE_TO_JSON[s.cause],
                "features": list(s.features),
            }) + "\n")
    header = {"feature_names": list(ds.feature_names), "metadata": ds.metadata}
    _header_path(path).write_text(json.dumps(header, indent=2, sort_keys=True))


def load_dataset(path: str | Path) -> SurvivalDataset:
    path = Path(path)
    header = json.loads(_header_path(path).read_text())
    names = header["feature_names"]
    subjects = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            feats = rec["features"]
            if len(feats) != len(names):
                raise ValueError(
                    f"{path}:{lineno}: {len(feats)} features, header declares {len(names)}")
            if rec["cause"] not in _JSON_TO_CAUSE:
                raise ValueError(f"{path}:{lineno}: unknown cause {rec['cause']!r}")
            subjects.append(Subject(rec["id"], tuple(feats), int(rec["time_days"]),
                                    _JSON_TO_CAUSE[rec["cause"]]))
    return SurvivalDataset(subjects, names, header.get("metadata", {}))


def _header_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".header.json") if path.suffix != ".jsonl" \
        else path.with_name(path.stem + ".header.json")
