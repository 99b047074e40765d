"""Deterministic ETL from raw administrative records to a SurvivalDataset.

Implements episode-to-stay aggregation, index-event selection with
exclusions, binary code-feature extraction over a three-year lookback,
rare-feature filtering, and outcome derivation for both the composite and
the major-bleeding target (competing-risk and cause-specific encodings).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path

import yaml

from .core import Cause, Subject, SurvivalDataset, DAYS_PER_YEAR
from .exceptions import MalformedRecordError
from .synth import AdminRecordBundle, DeathRecord, Dispensing, StayEpisode

LOOKBACK_DAYS = 1095
MAX_FOLLOWUP_DAYS = 1095
TARGET_COMPOSITE = "composite"
TARGET_BLEEDING = "bleeding"


class CodeList:
    """A named list of code patterns with prefix-match semantics.

    An entry ending in ``.x`` (any case) matches the whole family by prefix;
    an embedded ``x`` in a code position matches any single character; a bare
    category (no dot) matches itself and all its subdivisions; anything else
    matches exactly.
    """

    def __init__(self, name: str, entries: list[str]):
        if not entries:
            raise ValueError(f"code list {name!r} is empty")
        self.name = name
        self.entries = tuple(str(e) for e in entries)
        self._exact: set[str] = set()
        self._prefixes: list[str] = []
        self._regexes: list[re.Pattern] = []
        for entry in self.entries:
            low = entry.lower()
            if low.endswith(".x"):
                self._prefixes.append(entry[:-2])
            elif low.endswith("x") and entry[-2].isdigit():
                self._prefixes.append(entry[:-1])
            elif "x" in low[1:] and any(ch.isdigit() for ch in entry):
                pat = "".join("[0-9A-Za-z]" if ch in "xX" else re.escape(ch)
                              for ch in entry)
                self._regexes.append(re.compile(f"^{pat}.*$"))
            elif "." not in entry and "-" not in entry:
                self._prefixes.append(entry)
            else:
                self._exact.add(entry)

    def matches(self, code: str) -> bool:
        if code in self._exact:
            return True
        for p in self._prefixes:
            if code == p or code.startswith(p + ".") or (len(p) > 3 and code.startswith(p)):
                return True
        return any(rx.match(code) for rx in self._regexes)

    def __repr__(self):
        return f"CodeList({self.name!r}, {len(self.entries)} entries)"


class CodeListRegistry:
    """All clinical code lists, loaded from a YAML configuration file."""

    def __init__(self, raw: dict):
        self.raw = raw
        self.af_flutter = CodeList("af_flutter", raw["af_flutter"])
        self.ablation_procedures = CodeList("ablation_procedures", raw["ablation_procedures"])
        self.valvular_exclusions = CodeList("valvular_exclusions", raw["valvular_exclusions"])
        self.mitral_valve_exclusions = CodeList("mitral_valve_exclusions",
                                                raw["mitral_valve_exclusions"])
        self.valve_replacement_procedures = CodeList("valve_replacement_procedures",
                                                     raw["valve_replacement_procedures"])
        self.composite_outcomes = {
            name: CodeList(name, spec["icd10"]) for name, spec in raw["outcomes"].items()}
        self.major_bleeding = {
            name: CodeList(name, spec["icd10"]) for name, spec in raw["major_bleeding"].items()}
        self.risk_scores = raw.get("risk_scores", {})
        self.rate_tables = raw.get("rate_tables", {})

    @classmethod
    def from_yaml(cls, path: str | Path) -> "CodeListRegistry":
        return cls(yaml.safe_load(Path(path).read_text()))

    @classmethod
    def default(cls) -> "CodeListRegistry":
        text = resources.files("survscope.data").joinpath("registry.yaml").read_text()
        return cls(yaml.safe_load(text))

    def exclusion_diagnosis(self, code: str) -> bool:
        return self.valvular_exclusions.matches(code) or self.mitral_valve_exclusions.matches(code)

    def composite_diagnosis(self, code: str) -> bool:
        return any(cl.matches(code) for cl in self.composite_outcomes.values())

    def bleeding_diagnosis(self, code: str) -> bool:
        return any(cl.matches(code) for cl in self.major_bleeding.values())


@dataclass(frozen=True)
class HospitalStay:
    """Contiguous period of inpatient care built from one or more episodes."""

    person_id: str
    admission: date
    separation: date
    primary_diagnosis: str | None
    diagnoses: tuple[str, ...]
    procedures: tuple[str, ...]
    separation_mode: str
    episode_count: int
    birth_date: date | None
    sex: int | None


def aggregate_stays(episodes: list[StayEpisode]) -> list[HospitalStay]:
    """Merge chained episodes into hospital stays.

    Consecutive episodes of one person merge when the earlier ends in
    transfer or type-change and the next admission is at most one day after
    the separation. Codes are unioned; the primary diagnosis and the
    admission date come from the first episode, the separation date and mode
    from the last.
    """
    for ep in episodes:
        if ep.separation < ep.admission:
            raise MalformedRecordError(
                f"episode for {ep.person_id} admitted {ep.admission} separates earlier "
                f"({ep.separation})")
    ordered = sorted(episodes, key=lambda e: (e.person_id, e.admission, e.separation))
    stays: list[HospitalStay] = []
    chain: list[StayEpisode] = []

    def _flush():
        if not chain:
            return
        first, last = chain[0], chain[-1]
        dx, procs = [], []
        for ep in chain:
            for code, _ in ep.diagnoses:
                if code not in dx:
                    dx.append(code)
            for code in ep.procedures:
                if code not in procs:
                    procs.append(code)
        primary = next((c for c, pr in first.diagnoses if pr), None)
        stays.append(HospitalStay(first.person_id, first.admission, last.separation,
                                  primary, tuple(dx), tuple(procs), last.mode,
                                  len(chain), first.birth_date, first.sex))
        chain.clear()

    for ep in ordered:
        if chain and ep.person_id == chain[-1].person_id \
                and chain[-1].mode in ("transfer", "type-change") \
                and ep.admission <= chain[-1].separation + timedelta(days=1):
            chain.append(ep)
        else:
            _flush()
            chain.append(ep)
    _flush()
    return stays


@dataclass(frozen=True)
class IndexEvent:
    person_id: str
    stay: HospitalStay
    index_date: date


@dataclass
class SelectionReport:
    """Tally of why persons were excluded from the cohort."""

    candidates: int = 0
    included: int = 0
    excluded: dict[str, int] = field(default_factory=dict)

    def tally(self, reason: str) -> None:
        self.excluded[reason] = self.excluded.get(reason, 0) + 1


def select_cohort(stays: list[HospitalStay], registry: CodeListRegistry,
                  window: tuple[date, date]) -> tuple[list[IndexEvent], SelectionReport]:
    """Pick each person's first AF/flutter-primary stay with an ablation
    procedure inside the window, then apply the exclusion rules.

    Exclusion codes are searched over all available history up to and
    including the index stay. Age under 18 at index also excludes.
    """
    by_person: dict[str, list[HospitalStay]] = {}
    for st in stays:
        by_person.setdefault(st.person_id, []).append(st)
    report = SelectionReport()
    index_events: list[IndexEvent] = []
    for pid in sorted(by_person):
        person_stays = sorted(by_person[pid], key=lambda s: (s.admission, s.separation))
        index_stay = None
        for st in person_stays:
            if st.primary_diagnosis is None:
                continue
            if not (window[0] <= st.admission <= window[1]):
                continue
            if registry.af_flutter.matches(st.primary_diagnosis) \
                    and any(registry.ablation_procedures.matches(p) for p in st.procedures):
                index_stay = st
                break
        if index_stay is None:
            continue
        report.candidates += 1
        if index_stay.birth_date is not None:
            age = (index_stay.admission - index_stay.birth_date).days / DAYS_PER_YEAR
            if age < 18:
                report.tally("under-18")
                continue
        history = [s for s in person_stays if s.admission <= index_stay.separation]
        excl = None
        for st in history:
            for code in st.diagnoses:
                if registry.valvular_exclusions.matches(code):
                    excl = "valvular-heart-disease"
                    break
                if registry.mitral_valve_exclusions.matches(code):
                    excl = "mitral-valve-disorder"
                    break
            if excl:
                break
            if any(registry.valve_replacement_procedures.matches(p) for p in st.procedures):
                excl = "mitral-valve-replacement"
                break
        if excl:
            report.tally(excl)
            continue
        report.included += 1
        index_events.append(IndexEvent(pid, index_stay, index_stay.admission))
    return index_events, report


def extract_features(person_stays: list[HospitalStay], person_dispensings: list[Dispensing],
                     index: IndexEvent, lookback_days: int = LOOKBACK_DAYS) -> dict[str, float]:
    """Binary feature per distinct diagnosis / drug code observed from three
    years before the index date through the index-stay separation, plus age
    at index (years) and sex. Emergency-department diagnoses are not a
    record stream here, so no feature ever derives from one."""
    window_lo = index.index_date - timedelta(days=lookback_days)
    window_hi = index.stay.separation
    feats: dict[str, float] = {}
    if index.stay.birth_date is None or index.stay.sex is None:
        raise MalformedRecordError(f"person {index.person_id}: missing birthdate or sex")
    for st in person_stays:
        if window_lo <= st.admission <= window_hi:
            for code in st.diagnoses:
                feats[f"dx:{code}"] = 1.0
    for disp in person_dispensings:
        if window_lo <= disp.supply_date <= window_hi:
            feats[f"rx:{disp.drug_code}"] = 1.0
    feats["age"] = (index.index_date - index.stay.birth_date).days / DAYS_PER_YEAR
    feats["sex"] = float(index.stay.sex)
    return feats


def apply_rare_filter(ds: SurvivalDataset, threshold: int = 10) -> SurvivalDataset:
    """Drop binary code features carried by fewer than `threshold` subjects.

    Age and sex are always retained."""
    keep = []
    for j, name in enumerate(ds.feature_names):
        if name in ("age", "sex"):
            keep.append(j)
            continue
        if int((ds.X[:, j] > 0).sum()) >= threshold:
            keep.append(j)
    if len(keep) == len(ds.feature_names):
        return ds
    return ds.with_feature_columns(keep)


@dataclass(frozen=True)
class OutcomePair:
    """Both target encodings for one person."""

    competing: tuple[int, Cause]
    cause_specific: tuple[int, Cause]


def derive_outcomes(person_stays: list[HospitalStay], person_deaths: list[DeathRecord],
                    index: IndexEvent, registry: CodeListRegistry, target: str,
                    admin_end: date, max_followup_days: int = MAX_FOLLOWUP_DAYS) -> OutcomePair:
    """Time and cause from the index date under the requested target.

    Composite: first of heart failure / stroke / cardiac arrest (primary
    diagnosis) or any registry death; single-risk. Bleeding: first major
    bleed is the event; an earlier composite event is the competing cause in
    the competing encoding and plain censoring in the cause-specific one.
    """
    horizon = min(max_followup_days, (admin_end - index.index_date).days)

    def _days(d: date) -> int:
        t = (d - index.index_date).days
        if t < 0:
            raise MalformedRecordError(
                f"person {index.person_id}: outcome record on {d} predates index "
                f"{index.index_date}")
        return t

    composite_t: int | None = None
    bleed_t: int | None = None
    for st in person_stays:
        if st.admission <= index.index_date or st.primary_diagnosis is None:
            continue
        t = _days(st.admission)
        if registry.composite_diagnosis(st.primary_diagnosis):
            composite_t = t if composite_t is None else min(composite_t, t)
        if registry.bleeding_diagnosis(st.primary_diagnosis):
            bleed_t = t if bleed_t is None else min(bleed_t, t)
    for death in person_deaths:
        t = _days(death.death_date)
        composite_t = t if composite_t is None else min(composite_t, t)
        if registry.bleeding_diagnosis(death.cause_code):
            bleed_t = t if bleed_t is None else min(bleed_t, t)

    if composite_t is not None and composite_t > horizon:
        composite_t = None
    if bleed_t is not None and bleed_t > horizon:
        bleed_t = None

    if target == TARGET_COMPOSITE:
        if composite_t is not None:
            pair = (composite_t, Cause.EVENT)
        else:
            pair = (horizon, Cause.CENSORED)
        return OutcomePair(pair, pair)
    if target != TARGET_BLEEDING:
        raise ValueError(f"unknown target {target!r}")

    # Ties between a bleed and a composite event resolve to the bleed.
    if bleed_t is not None and (composite_t is None or bleed_t <= composite_t):
        pair = (bleed_t, Cause.EVENT)
        return OutcomePair(pair, pair)
    if composite_t is not None:
        return OutcomePair((composite_t, Cause.COMPETING), (composite_t, Cause.CENSORED))
    pair = (horizon, Cause.CENSORED)
    return OutcomePair(pair, pair)


def build_dataset(bundle: AdminRecordBundle, registry: CodeListRegistry, target: str,
                  window: tuple[date, date] | None = None,
                  admin_end: date | None = None,
                  rare_threshold: int = 10) -> tuple[SurvivalDataset, SelectionReport]:
    """Full ETL: aggregate episodes, select the cohort, extract features,
    derive outcomes, apply the rare-feature filter.

    The bleeding target yields the competing-risk encoding; the
    cause-specific encoding is `dataset.recode_competing_as_censored()`.
    """
    if admin_end is None:
        if "administrative_end" in bundle.meta:
            admin_end = date.fromisoformat(bundle.meta["administrative_end"])
        else:
            admin_end = max([s.separation for s in bundle.stays]
                            + [d.death_date for d in bundle.deaths],
                            default=date(2018, 12, 31))
    if window is None:
        window = (date(2009, 1, 1), admin_end)
    stays = aggregate_stays(bundle.stays)
    index_events, report = select_cohort(stays, registry, window)

    stays_by_person: dict[str, list[HospitalStay]] = {}
    for st in stays:
        stays_by_person.setdefault(st.person_id, []).append(st)
    disp_by_person: dict[str, list[Dispensing]] = {}
    for d in bundle.dispensings:
        disp_by_person.setdefault(d.person_id, []).append(d)
    deaths_by_person: dict[str, list[DeathRecord]] = {}
    for d in bundle.deaths:
        deaths_by_person.setdefault(d.person_id, []).append(d)

    feature_maps: dict[str, dict[str, float]] = {}
    outcomes: dict[str, tuple[int, Cause]] = {}
    all_names: set[str] = set()
    for ev in index_events:
        fm = extract_features(stays_by_person.get(ev.person_id, []),
                              disp_by_person.get(ev.person_id, []), ev)
        pair = derive_outcomes(stays_by_person.get(ev.person_id, []),
                               deaths_by_person.get(ev.person_id, []),
                               ev, registry, target, admin_end)
        feature_maps[ev.person_id] = fm
        outcomes[ev.person_id] = pair.competing
        all_names.update(fm)

    code_names = sorted(n for n in all_names if n not in ("age", "sex"))
    names = code_names + ["age", "sex"]
    subjects = []
    for ev in index_events:
        fm = feature_maps[ev.person_id]
        t, cause = outcomes[ev.person_id]
        subjects.append(Subject(ev.person_id, tuple(fm.get(n, 0.0) for n in names), t, cause))
    meta = {"target": target, "admin_end": admin_end.isoformat(),
            "encoding": "competing" if target == TARGET_BLEEDING else "single-risk",
            "selection": {"candidates": report.candidates, "included": report.included,
                          "excluded": dict(sorted(report.excluded.items()))}}
    ds = SurvivalDataset(subjects, names, meta)
    return apply_rare_filter(ds, rare_threshold), report
