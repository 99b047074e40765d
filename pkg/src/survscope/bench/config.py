"""Experiment configuration with schema validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .families import FAMILY_SPECS


def _schema() -> dict:
    text = resources.files("survscope.data").joinpath("experiment_schema.json").read_text()
    return json.loads(text)


@dataclass
class AttributionConfig:
    max_subjects_per_fold: int = 50
    budget: int = 512
    background_size: int = 100
    top_k: int = 20


@dataclass
class ExperimentConfig:
    dataset: str
    target: str = "composite"
    families: list[str] = field(default_factory=lambda: ["coxnet", "rsf", "gbt",
                                                         "deepsurv", "dsm"])
    outer_folds: int = 10
    inner_folds: int = 3
    trials: int = 20
    seed: int = 0
    workers: int = 1
    include_baseline: bool = True
    registry: str | None = None
    attribution: AttributionConfig = field(default_factory=AttributionConfig)

    def __post_init__(self):
        if isinstance(self.attribution, dict):
            self.attribution = AttributionConfig(**self.attribution)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.target not in ("composite", "bleeding"):
            raise ValueError(f"unknown target {self.target!r}")
        for fam in self.families:
            if fam not in FAMILY_SPECS:
                raise ValueError(f"unrecognized family tag {fam!r}")

    def resolved_families(self) -> list[str]:
        """Expand the run list: bleeding adds the competing-risks DSM row and
        the appropriate clinical baseline."""
        fams = list(self.families)
        if self.target == "bleeding" and "dsm" in fams and "dsm-competing" not in fams:
            fams.append("dsm-competing")
        if self.include_baseline:
            baseline = "hasbled" if self.target == "bleeding" else "cha2ds2vasc"
            if baseline not in fams:
                fams.append(baseline)
        return fams

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        jsonschema.validate(raw, _schema())
        return cls(**raw)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset, "target": self.target,
            "families": list(self.families), "outer_folds": self.outer_folds,
            "inner_folds": self.inner_folds, "trials": self.trials,
            "seed": self.seed, "workers": self.workers,
            "include_baseline": self.include_baseline, "registry": self.registry,
            "attribution": {
                "max_subjects_per_fold": self.attribution.max_subjects_per_fold,
                "budget": self.attribution.budget,
                "background_size": self.attribution.background_size,
                "top_k": self.attribution.top_k,
            },
        }
