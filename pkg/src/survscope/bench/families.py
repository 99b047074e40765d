"""Model family registry: hyperparameter search spaces and fitters.

Search spaces follow the benchmark protocol: continuous ranges sample
uniformly, discrete sets uniformly. Baseline score families have nothing to
tune.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..core import SurvivalDataset
from ..models import (RiskScoreModel, coxnet_fit, deepsurv_fit, dsm_fit, gbt_fit,
                      rsf_fit)
from ..models.dsm import MODE_CAUSE_SPECIFIC, MODE_COMPETING

EPOCHS = 10  # fixed training length for the neural families


def _choice(rng: np.random.Generator, options):
    return options[int(rng.integers(0, len(options)))]


def _sample_coxnet(rng):
    return {"alpha": float(rng.uniform(0.0001, 0.05)),
            "l1_ratio": _choice(rng, [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])}


def _sample_rsf(rng):
    return {"n_estimators": _choice(rng, [10, 50, 100, 200]),
            "max_depth": _choice(rng, [3, 5, 10, None]),
            "max_features": _choice(rng, ["sqrt", "log2", 100, 200]),
            "min_samples_leaf": _choice(rng, [3, 10, 150, 200])}


def _sample_gbt(rng):
    return {"n_estimators": _choice(rng, [10, 50, 100, 200]),
            "max_depth": _choice(rng, [3, 5, 10]),
            "max_features": _choice(rng, ["sqrt", "log2", 100, 200]),
            "min_samples_leaf": _choice(rng, [1, 3, 10, 150, 200]),
            "learning_rate": _choice(rng, [0.001, 0.01, 0.1, 0.5])}


def _sample_deepsurv(rng):
    return {"layers": _choice(rng, [1, 2, None]),
            "nodes": _choice(rng, [10, 20, 50, 100, 200]),
            "learning_rate": _choice(rng, [0.0001, 0.001, 0.01]),
            "batch_size": _choice(rng, [64, 128])}


def _sample_dsm(rng):
    return {"distribution": _choice(rng, ["Weibull", "LogNormal"]),
            "k": _choice(rng, [2, 3, 4, 5, 6]),
            "discount": _choice(rng, [0.5, 0.75, 1.0]),
            "layers": _choice(rng, [1, 2, None]),
            "nodes": _choice(rng, [10, 20, 50, 100, 200]),
            "learning_rate": _choice(rng, [0.0001, 0.001, 0.01]),
            "batch_size": _choice(rng, [64, 128])}


def _fit_single_risk(fitter, seeded: bool = True):
    def fit(ds: SurvivalDataset, params: dict, seed: int, context: dict):
        cs = ds.recode_competing_as_censored()
        kwargs = dict(params, seed=seed) if seeded else params
        return fitter(cs.X, cs.times, cs.events, cs.feature_names, **kwargs)
    return fit


def _fit_deepsurv(ds, params, seed, context):
    cs = ds.recode_competing_as_censored()
    return deepsurv_fit(cs.X, cs.times, cs.events, cs.feature_names, seed=seed,
                        epochs=EPOCHS, **params)


def _fit_dsm(ds, params, seed, context):
    cs = ds.recode_competing_as_censored()
    return dsm_fit(cs.X, cs.times, cs.causes, cs.feature_names, seed=seed,
                   epochs=EPOCHS, mode=MODE_CAUSE_SPECIFIC, **params)


def _fit_dsm_competing(ds, params, seed, context):
    return dsm_fit(ds.X, ds.times, ds.causes, ds.feature_names, seed=seed,
                   epochs=EPOCHS, mode=MODE_COMPETING, **params)


def _fit_risk_score(scheme):
    def fit(ds: SurvivalDataset, params: dict, seed: int, context: dict):
        registry = context["registry"]
        return RiskScoreModel(ds.feature_names, scheme,
                              registry.risk_scores[scheme],
                              registry.rate_tables[scheme])
    return fit


@dataclass(frozen=True)
class FamilySpec:
    name: str
    label: str
    tunable: bool
    sample: Callable | None
    fit: Callable
    is_baseline: bool = False


FAMILY_SPECS: dict[str, FamilySpec] = {
    "coxnet": FamilySpec("coxnet", "Cox", True, _sample_coxnet,
                         _fit_single_risk(coxnet_fit, seeded=False)),
    "rsf": FamilySpec("rsf", "RSF", True, _sample_rsf, _fit_single_risk(rsf_fit)),
    "gbt": FamilySpec("gbt", "GBT", True, _sample_gbt, _fit_single_risk(gbt_fit)),
    "deepsurv": FamilySpec("deepsurv", "DeepSurv", True, _sample_deepsurv, _fit_deepsurv),
    "dsm": FamilySpec("dsm", "DSM - cause specific", True, _sample_dsm, _fit_dsm),
    "dsm-competing": FamilySpec("dsm-competing", "DSM - competing risks", True,
                                _sample_dsm, _fit_dsm_competing),
    "cha2ds2vasc": FamilySpec("cha2ds2vasc", "CHA2DS2-VASc", False, None,
                              _fit_risk_score("cha2ds2vasc"), is_baseline=True),
    "hasbled": FamilySpec("hasbled", "HAS-BLED", False, None,
                          _fit_risk_score("hasbled"), is_baseline=True),
}


def sample_params(family: str, rng: np.random.Generator) -> dict:
    spec = FAMILY_SPECS[family]
    return spec.sample(rng) if spec.tunable else {}


def fit_family(family: str, ds: SurvivalDataset, params: dict, seed: int,
               context: dict | None = None):
    if family not in FAMILY_SPECS:
        raise ValueError(f"unknown model family {family!r}")
    return FAMILY_SPECS[family].fit(ds, params, seed, context or {})
