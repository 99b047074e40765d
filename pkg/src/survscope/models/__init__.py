"""Survival model families behind one prediction contract."""

from .base import BreslowBaseline, FittedModel, load_model
from .baselines import RiskScoreModel, risk_score, score_to_survival, ScoringTable
from .coxnet import CoxnetModel, cox_gradient_hessian, cox_nll, coxnet_fit
from .deepsurv import DeepSurvModel, deepsurv_fit
from .dsm import DSMModel, dsm_fit
from .gbt import GBTModel, gbt_fit
from .km import KMCurve, km_at_risk_table, km_fit
from .rsf import RSFModel, rsf_fit


def cause_specific_wrap(base_fitter, dataset, **params):
    """Fit a single-risk family on the cause-specific recoding of a
    competing-risks dataset (competing events become censoring)."""
    ds = dataset.recode_competing_as_censored()
    return base_fitter(ds.X, ds.times, ds.events, ds.feature_names, **params)


__all__ = [
    "BreslowBaseline", "FittedModel", "load_model",
    "RiskScoreModel", "risk_score", "score_to_survival", "ScoringTable",
    "CoxnetModel", "cox_gradient_hessian", "cox_nll", "coxnet_fit",
    "DeepSurvModel", "deepsurv_fit", "DSMModel", "dsm_fit",
    "GBTModel", "gbt_fit", "KMCurve", "km_at_risk_table", "km_fit",
    "RSFModel", "rsf_fit", "cause_specific_wrap",
]
