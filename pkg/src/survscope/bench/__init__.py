"""Benchmark orchestration: nested hyperparameter search inside k-fold CV."""

from .config import ExperimentConfig
from .families import FAMILY_SPECS, fit_family, sample_params
from .runner import RunResult, TrialRecord, emit_report, run_cv, tune

__all__ = ["ExperimentConfig", "FAMILY_SPECS", "fit_family", "sample_params",
           "RunResult", "TrialRecord", "emit_report", "run_cv", "tune"]
