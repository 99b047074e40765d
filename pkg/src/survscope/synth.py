"""Synthetic linked-administrative record generator.

Emulates hospital-episode, dispensing and death-registry streams with
configurable cause-specific exponential hazards, so the full pipeline can be
exercised and benchmarked without access to real linked data. Ground truth
(per-person linear predictors and the sampled event) is embedded in the
bundle for oracle-based testing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import yaml

from .core import DAYS_PER_YEAR

CAUSE_COMPOSITE = "composite"
CAUSE_BLEEDING = "bleeding"

# Code families with generator-side meaning. The cohort ETL reads the same
# families from its registry configuration; agreement is enforced by the
# truth-recovery tests.
AF_CODES = ("I48.0", "I48.1", "I48.2", "I48.9")
ABLATION_CODES = ("38290-01", "38287-02")
EXCLUSION_DX = ("I05.1", "I05.8", "Q23.0", "Q23.3", "I34.0", "I34.1")
VALVE_REPLACEMENT_CODES = ("38488-09", "38488-02", "38488-03", "38489-02")
COMPOSITE_OUTCOME_DX = ("I50.0", "I50.9", "I11.0", "I63.3", "I63.9", "I46", "I46.9")
BLEEDING_OUTCOME_DX = ("K92.2", "K25.0", "I85.0", "I60.1", "I61.0", "S06.5", "R58", "K62.5")
SPECIAL_PREFIXES = ("I48", "I50", "I11.0", "I13.0", "I13.2", "I63", "I46", "I85.0",
                    "K22", "K25", "K26", "K27", "K28", "K29", "K31", "K55", "K57",
                    "K62.5", "K92", "I60", "I61", "S06", "I31.2", "K66.1", "M25.0",
                    "R04", "R31", "R58", "I05", "Q23", "I34")

FILLER_DX = ("E11.9", "E78.0", "J44.9", "J45.0", "M54.5", "N18.3", "K21.0", "F41.1",
             "G47.3", "H25.9", "L40.0", "M17.9", "N39.0", "E03.9", "D64.9", "J18.9",
             "I10", "E66.9", "M81.0", "K80.2", "R07.4", "N20.0", "H91.9", "B96.2")
SIGNAL_DRUGS = ("C03CA01", "B01AA03", "C01BD01", "C07AB07", "A10BA02", "M04AA01",
                "C01BC04", "C03DA01")
FILLER_DRUGS = ("A02BC02", "C10AA05", "J01CA04", "N02BE01", "R03AC02", "A12AX",
                "N06AB06", "H03AA01", "M01AE01", "D07AA02")


@dataclass(frozen=True)
class CodeVocabulary:
    """Flat code lists the generator draws from.

    Includes the inclusion/exclusion/outcome codes the cohort rules key on
    plus filler codes that carry no outcome meaning.
    """

    diagnosis_codes: tuple[str, ...]
    procedure_codes: tuple[str, ...]
    drug_codes: tuple[str, ...]

    def filler_diagnoses(self) -> tuple[str, ...]:
        return tuple(c for c in self.diagnosis_codes
                     if not any(c.startswith(p) for p in SPECIAL_PREFIXES))


def default_vocabulary() -> CodeVocabulary:
    dx = AF_CODES + EXCLUSION_DX + COMPOSITE_OUTCOME_DX + BLEEDING_OUTCOME_DX + FILLER_DX
    procs = ABLATION_CODES + VALVE_REPLACEMENT_CODES + ("30473-00", "49318-00")
    return CodeVocabulary(tuple(dict.fromkeys(dx)), procs, SIGNAL_DRUGS + FILLER_DRUGS)


@dataclass
class HazardConfig:
    """Cause-specific exponential hazards with log-linear covariate effects.

    baseline_rates are events per person-year at linear predictor 0.
    Coefficient keys are feature names: bare or ``dx:``-prefixed diagnosis
    codes, ``rx:``-prefixed drug codes, and the specials ``age`` (per decade
    over 60) and ``sex`` (1 = female).
    """

    baseline_rates: dict[str, float] = field(
        default_factory=lambda: {CAUSE_COMPOSITE: 0.02, CAUSE_BLEEDING: 0.018})
    coefficients: dict[str, dict[str, float]] = field(default_factory=dict)
    administrative_end: date = date(2018, 12, 31)
    max_followup_days: int = 1095

    def __post_init__(self):
        if isinstance(self.administrative_end, str):
            self.administrative_end = date.fromisoformat(self.administrative_end)
        for cause, rate in self.baseline_rates.items():
            if rate <= 0:
                raise ValueError(f"baseline rate for {cause!r} must be > 0, got {rate}")

    def causes(self) -> list[str]:
        return sorted(self.baseline_rates)


@dataclass
class GeneratorConfig:
    n_persons: int = 1000
    eligibility: float = 0.95
    index_start: date = date(2015, 1, 1)
    index_end: date = date(2015, 12, 31)
    female_fraction: float = 0.34
    age_min: float = 30.0
    age_max: float = 85.0
    under18_fraction: float = 0.0
    exclusion_fraction: float = 0.0
    transfer_chain_fraction: float = 0.15
    mean_lookback_stays: float = 1.5
    mean_lookback_dispensings: float = 4.0
    mean_postindex_stays: float = 0.6
    code_prevalence: dict[str, float] = field(default_factory=dict)
    filler_dx_prevalence: float = 0.08
    filler_rx_prevalence: float = 0.10
    death_share_of_composite: float = 0.35
    hazards: HazardConfig = field(default_factory=HazardConfig)

    def __post_init__(self):
        for name in ("index_start", "index_end"):
            v = getattr(self, name)
            if isinstance(v, str):
                setattr(self, name, date.fromisoformat(v))
        if isinstance(self.hazards, dict):
            self.hazards = HazardConfig(**self.hazards)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "GeneratorConfig":
        return cls(**yaml.safe_load(Path(path).read_text()))


@dataclass(frozen=True)
class StayEpisode:
    """One APDC-style episode of care; chained episodes form a hospital stay."""

    person_id: str
    admission: date
    separation: date
    mode: str  # discharge | transfer | type-change | death
    diagnoses: tuple[tuple[str, bool], ...]  # (code, is_primary)
    procedures: tuple[str, ...]
    birth_date: date
    sex: int  # 1 = female


@dataclass(frozen=True)
class Dispensing:
    person_id: str
    supply_date: date
    drug_code: str


@dataclass(frozen=True)
class DeathRecord:
    person_id: str
    death_date: date
    cause_code: str


@dataclass(frozen=True)
class PersonTruth:
    person_id: str
    linear_predictors: dict[str, float]
    index_date: date | None
    horizon_days: int | None
    time_days: int | None
    cause: str | None  # composite | bleeding | None (censored / no index)


@dataclass
class AdminRecordBundle:
    stays: list[StayEpisode]
    dispensings: list[Dispensing]
    deaths: list[DeathRecord]
    truth: dict[str, PersonTruth]
    meta: dict = field(default_factory=dict)


def sample_event_time(cfg: HazardConfig, linear_predictors: dict[str, float],
                      horizon_days: float, rng: np.random.Generator) -> tuple[float, str | None]:
    """Draw latent exponential times per cause and return the earliest.

    Rates are baseline * exp(linear predictor), converted to per-day. If the
    minimum exceeds the horizon the subject is censored there.
    """
    if horizon_days <= 0:
        raise ValueError(f"horizon must be positive, got {horizon_days}")
    best_t, best_cause = math.inf, None
    for cause in cfg.causes():
        lp = float(linear_predictors.get(cause, 0.0))
        if not math.isfinite(lp):
            raise ValueError(f"non-finite linear predictor for cause {cause!r}")
        rate_per_day = cfg.baseline_rates[cause] * math.exp(lp) / DAYS_PER_YEAR
        t = rng.exponential(1.0 / rate_per_day)
        if t < best_t:
            best_t, best_cause = t, cause
    if best_t > horizon_days:
        return float(horizon_days), None
    return float(best_t), best_cause


def _normalize_feature_key(key: str) -> tuple[str, str]:
    """Returns (kind, code) with kind in {age, sex, dx, rx}."""
    if key in ("age", "sex"):
        return key, key
    if key.startswith("rx:"):
        return "rx", key[3:]
    if key.startswith("dx:"):
        return "dx", key[3:]
    return "dx", key


def generate_population(cfg: GeneratorConfig, vocab: CodeVocabulary,
                        seed: int) -> AdminRecordBundle:
    """Generate a full record bundle, deterministic for a fixed seed.

    Each person draws from an independent substream keyed by (seed, index),
    so record counts for one person never shift another person's draws.
    """
    if not vocab.diagnosis_codes or not vocab.drug_codes:
        raise ValueError("vocabulary must contain diagnosis and drug codes")
    filler_dx = vocab.filler_diagnoses()
    if not filler_dx:
        raise ValueError("vocabulary has no filler diagnosis codes")
    filler_rx = tuple(c for c in vocab.drug_codes if c in FILLER_DRUGS) or vocab.drug_codes

    # Union of all hazard-linked features, split by kind.
    signal_dx: list[str] = []
    signal_rx: list[str] = []
    for cause_coeffs in cfg.hazards.coefficients.values():
        for key in cause_coeffs:
            kind, code = _normalize_feature_key(key)
            if kind == "dx" and code not in signal_dx:
                signal_dx.append(code)
            elif kind == "rx" and code not in signal_rx:
                signal_rx.append(code)

    stays: list[StayEpisode] = []
    dispensings: list[Dispensing] = []
    deaths: list[DeathRecord] = []
    truth: dict[str, PersonTruth] = {}
    admin_end = cfg.hazards.administrative_end
    index_span = (cfg.index_end - cfg.index_start).days

    for i in range(cfg.n_persons):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        pid = f"P{i:06d}"
        sex = int(rng.random() < cfg.female_fraction)
        if cfg.under18_fraction > 0 and rng.random() < cfg.under18_fraction:
            age = rng.uniform(8.0, 17.5)
        else:
            age = rng.uniform(cfg.age_min, cfg.age_max)
        index_date = cfg.index_start + timedelta(days=int(rng.integers(0, index_span + 1)))
        birth_date = index_date - timedelta(days=int(round(age * DAYS_PER_YEAR)))
        has_index = rng.random() < cfg.eligibility

        carried_dx = [c for c in signal_dx
                      if rng.random() < cfg.code_prevalence.get(c, cfg.code_prevalence.get(f"dx:{c}", 0.15))]
        carried_rx = [c for c in signal_rx
                      if rng.random() < cfg.code_prevalence.get(f"rx:{c}", 0.15)]
        noise_dx = [c for c in filler_dx if rng.random() < cfg.filler_dx_prevalence]
        noise_rx = [c for c in filler_rx if rng.random() < cfg.filler_rx_prevalence]

        lps = {}
        for cause in cfg.hazards.causes():
            lp = 0.0
            for key, coef in cfg.hazards.coefficients.get(cause, {}).items():
                kind, code = _normalize_feature_key(key)
                if kind == "age":
                    lp += coef * (age - 60.0) / 10.0
                elif kind == "sex":
                    lp += coef * sex
                elif kind == "dx":
                    lp += coef * (code in carried_dx)
                else:
                    lp += coef * (code in carried_rx)
            lps[cause] = lp

        lookback_start = index_date - timedelta(days=cfg.hazards.max_followup_days)

        def _random_date(lo: date, hi: date) -> date:
            span = max((hi - lo).days, 0)
            return lo + timedelta(days=int(rng.integers(0, span + 1)))

        # Lookback stays: every carried signal diagnosis is planted on one,
        # noise codes spread over a Poisson number of extra stays.
        lookback_codes = carried_dx + noise_dx
        n_noise_stays = int(rng.poisson(cfg.mean_lookback_stays))
        n_lb_stays = max(1 if lookback_codes else 0, n_noise_stays)
        if cfg.exclusion_fraction > 0 and rng.random() < cfg.exclusion_fraction:
            lookback_codes.append(EXCLUSION_DX[int(rng.integers(0, len(EXCLUSION_DX)))])
            n_lb_stays = max(n_lb_stays, 1)
        for s in range(n_lb_stays):
            adm = _random_date(lookback_start, index_date - timedelta(days=2))
            sep = adm + timedelta(days=int(rng.integers(0, 4)))
            codes = [lookback_codes[j] for j in range(s, len(lookback_codes), n_lb_stays)]
            if not codes:
                codes = [filler_dx[int(rng.integers(0, len(filler_dx)))]]
            _emit_stay(stays, rng, cfg, pid, adm, sep, codes, (), birth_date, sex)

        for code in carried_rx + noise_rx:
            dispensings.append(Dispensing(pid, _random_date(lookback_start, index_date), code))

        if not has_index:
            truth[pid] = PersonTruth(pid, lps, None, None, None, None)
            continue

        # Index stay: AF/flutter primary plus ablation procedure.
        primary_af = AF_CODES[int(rng.integers(0, len(AF_CODES)))]
        ablation = ABLATION_CODES[int(rng.integers(0, len(ABLATION_CODES)))]
        index_sep = index_date + timedelta(days=int(rng.integers(1, 4)))
        index_codes = [primary_af] + [c for c in noise_dx[:2]]
        stays.append(StayEpisode(pid, index_date, index_sep, "discharge",
                                 tuple((c, j == 0) for j, c in enumerate(index_codes)),
                                 (ablation,), birth_date, sex))

        horizon = min(cfg.hazards.max_followup_days, (admin_end - index_date).days)
        t, cause = sample_event_time(cfg.hazards, lps, horizon, rng)
        if cause is None:
            time_days = int(horizon)
        else:
            time_days = min(int(math.ceil(t)) if t > 0 else 1, int(horizon))
            event_date = index_date + timedelta(days=time_days)
            if cause == CAUSE_COMPOSITE:
                if rng.random() < cfg.death_share_of_composite:
                    code = COMPOSITE_OUTCOME_DX[int(rng.integers(0, len(COMPOSITE_OUTCOME_DX)))]
                    deaths.append(DeathRecord(pid, event_date, code))
                else:
                    code = COMPOSITE_OUTCOME_DX[int(rng.integers(0, len(COMPOSITE_OUTCOME_DX)))]
                    _emit_stay(stays, rng, cfg, pid, event_date,
                               event_date + timedelta(days=int(rng.integers(1, 5))),
                               [code], (), birth_date, sex, splittable=False)
            else:
                code = BLEEDING_OUTCOME_DX[int(rng.integers(0, len(BLEEDING_OUTCOME_DX)))]
                _emit_stay(stays, rng, cfg, pid, event_date,
                           event_date + timedelta(days=int(rng.integers(1, 5))),
                           [code], (), birth_date, sex, splittable=False)
        truth[pid] = PersonTruth(pid, lps, index_date, int(horizon), time_days, cause)

        # Post-index noise: filler primaries only, before the realized end of
        # follow-up so they never masquerade as outcomes or shift truth.
        for _ in range(int(rng.poisson(cfg.mean_postindex_stays))):
            if time_days <= 2:
                break
            offset = int(rng.integers(1, time_days))
            adm = index_date + timedelta(days=offset)
            code = filler_dx[int(rng.integers(0, len(filler_dx)))]
            _emit_stay(stays, rng, cfg, pid, adm, adm + timedelta(days=int(rng.integers(0, 3))),
                       [code], (), birth_date, sex)

    meta = {"administrative_end": admin_end.isoformat(),
            "max_followup_days": cfg.hazards.max_followup_days,
            "n_persons": cfg.n_persons, "seed": seed}
    return AdminRecordBundle(stays, dispensings, deaths, truth, meta)


def _emit_stay(stays: list, rng, cfg: GeneratorConfig, pid: str, adm: date, sep: date,
               codes: list[str], procs: tuple, birth_date: date, sex: int,
               splittable: bool = True) -> None:
    """Append a stay, occasionally split into a transfer/type-change chain."""
    diagnoses = tuple((c, j == 0) for j, c in enumerate(codes))
    span = (sep - adm).days
    if splittable and span >= 2 and len(codes) >= 2 and rng.random() < cfg.transfer_chain_fraction:
        mid = adm + timedelta(days=span // 2)
        mode = "transfer" if rng.random() < 0.5 else "type-change"
        first = codes[: max(1, len(codes) // 2)]
        rest = codes[max(1, len(codes) // 2):] or [codes[-1]]
        stays.append(StayEpisode(pid, adm, mid, mode,
                                 tuple((c, j == 0) for j, c in enumerate(first)),
                                 procs, birth_date, sex))
        stays.append(StayEpisode(pid, mid, sep, "discharge",
                                 tuple((c, False) for c in rest), (), birth_date, sex))
    else:
        stays.append(StayEpisode(pid, adm, sep, "discharge", diagnoses, procs, birth_date, sex))


def save_bundle(bundle: AdminRecordBundle, prefix: str | Path) -> list[Path]:
    """Write `<prefix>.stays.jsonl`, `.dispensings.jsonl`, `.deaths.jsonl`
    and `<prefix>.truth.json`."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = []

    def _date(v):
        return v.isoformat() if v is not None else None

    p = prefix.with_name(prefix.name + ".stays.jsonl")
    with p.open("w") as fh:
        for s in bundle.stays:
            fh.write(json.dumps({
                "person_id": s.person_id, "admission": _date(s.admission),
                "separation": _date(s.separation), "mode": s.mode,
                "diagnoses": [[c, bool(pr)] for c, pr in s.diagnoses],
                "procedures": list(s.procedures),
                "birth_date": _date(s.birth_date), "sex": s.sex,
            }) + "\n")
    paths.append(p)
    p = prefix.with_name(prefix.name + ".dispensings.jsonl")
    with p.open("w") as fh:
        for d in bundle.dispensings:
            fh.write(json.dumps({"person_id": d.person_id, "supply_date": _date(d.supply_date),
                                 "drug_code": d.drug_code}) + "\n")
    paths.append(p)
    p = prefix.with_name(prefix.name + ".deaths.jsonl")
    with p.open("w") as fh:
        for d in bundle.deaths:
            fh.write(json.dumps({"person_id": d.person_id, "death_date": _date(d.death_date),
                                 "cause_code": d.cause_code}) + "\n")
    paths.append(p)
    p = prefix.with_name(prefix.name + ".truth.json")
    truth = {pid: {**asdict(t), "index_date": _date(t.index_date)}
             for pid, t in bundle.truth.items()}
    p.write_text(json.dumps({"meta": bundle.meta, "persons": truth},
                            indent=1, sort_keys=True))
    paths.append(p)
    return paths


def load_bundle(prefix: str | Path) -> AdminRecordBundle:
    prefix = Path(prefix)

    def _lines(path: Path):
        with path.open() as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)

    stays = [StayEpisode(r["person_id"], date.fromisoformat(r["admission"]),
                         date.fromisoformat(r["separation"]), r["mode"],
                         tuple((c, bool(pr)) for c, pr in r["diagnoses"]),
                         tuple(r["procedures"]), date.fromisoformat(r["birth_date"]),
                         int(r["sex"]))
             for r in _lines(prefix.with_name(prefix.name + ".stays.jsonl"))]
    disp = [Dispensing(r["person_id"], date.fromisoformat(r["supply_date"]), r["drug_code"])
            for r in _lines(prefix.with_name(prefix.name + ".dispensings.jsonl"))]
    deaths = [DeathRecord(r["person_id"], date.fromisoformat(r["death_date"]), r["cause_code"])
              for r in _lines(prefix.with_name(prefix.name + ".deaths.jsonl"))]
    truth_raw = json.loads(prefix.with_name(prefix.name + ".truth.json").read_text())
    truth = {pid: PersonTruth(
        t["person_id"], t["linear_predictors"],
        date.fromisoformat(t["index_date"]) if t["index_date"] else None,
        t["horizon_days"], t["time_days"], t["cause"])
        for pid, t in truth_raw["persons"].items()}
    return AdminRecordBundle(stays, disp, deaths, truth, truth_raw.get("meta", {}))
