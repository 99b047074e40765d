import numpy as np
import pytest

from survscope.core import Cause, Subject, SurvivalDataset
from survscope.synth import GeneratorConfig, HazardConfig


def make_dataset(n=60, p=3, event_frac=0.4, seed=0, competing_frac=0.0):
    rng = np.random.default_rng(seed)
    subjects = []
    for i in range(n):
        u = rng.random()
        if u < event_frac:
            cause = Cause.EVENT
        elif u < event_frac + competing_frac:
            cause = Cause.COMPETING
        else:
            cause = Cause.CENSORED
        subjects.append(Subject(f"s{i:04d}", tuple(rng.binomial(1, 0.4, p).astype(float)),
                                int(rng.integers(1, 400)), cause))
    return SurvivalDataset(subjects, [f"f{j}" for j in range(p)])


@pytest.fixture
def small_dataset():
    return make_dataset()


def synthetic_cox_data(n=400, p=4, baseline=0.002, censor_at=1000.0, seed=0,
                       betas=None):
    """Exponential times with log-linear hazards: well-specified for every
    Cox-family model."""
    rng = np.random.default_rng(seed)
    X = rng.binomial(1, 0.35, size=(n, p)).astype(float)
    if betas is None:
        betas = np.linspace(1.0, -1.0, p)
    lp = X @ np.asarray(betas)
    t = rng.exponential(1.0 / (baseline * np.exp(lp)))
    events = t <= censor_at
    times = np.minimum(t, censor_at)
    return X, times, events, np.asarray(betas)


# Generator settings shared by the end-to-end tests: ~6% composite incidence
# on a cohort of about 4,000 with strong, prevalent signal codes.
ACCEPTANCE_PREVALENCE = {
    "I50.0": 0.18, "I10": 0.30, "E11.9": 0.22, "N18.3": 0.12, "J44.9": 0.15,
    "rx:C03CA01": 0.20, "rx:C01BD01": 0.15, "K21.0": 0.20, "rx:B01AA03": 0.25,
}
ACCEPTANCE_COEFFS_COMPOSITE = {
    "I50.0": 1.2, "I10": 0.8, "E11.9": 0.7, "N18.3": 1.0, "J44.9": 0.8,
    "rx:C03CA01": 0.9, "rx:C01BD01": 0.6, "age": 0.8, "sex": -0.2,
}
ACCEPTANCE_COEFFS_BLEEDING = {"K21.0": 0.8, "rx:B01AA03": 1.0, "age": 0.5}


def acceptance_generator_config(n_persons=4200):
    return GeneratorConfig(
        n_persons=n_persons, eligibility=0.96,
        code_prevalence=dict(ACCEPTANCE_PREVALENCE),
        hazards=HazardConfig(
            baseline_rates={"composite": 0.0030, "bleeding": 0.0026},
            coefficients={"composite": dict(ACCEPTANCE_COEFFS_COMPOSITE),
                          "bleeding": dict(ACCEPTANCE_COEFFS_BLEEDING)}))
