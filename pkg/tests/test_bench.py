import json

import numpy as np
import pytest

from survscope.bench import ExperimentConfig, emit_report, run_cv, tune
from survscope.bench.families import FAMILY_SPECS, FamilySpec
from survscope.cohort import CodeListRegistry, build_dataset
from survscope.core import Cause, Subject, SurvivalDataset, save_dataset
from survscope.exceptions import TuningFailedError
from survscope.synth import default_vocabulary, generate_population

from conftest import acceptance_generator_config


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    cfg = acceptance_generator_config(n_persons=700)
    bundle = generate_population(cfg, default_vocabulary(), seed=21)
    ds, _ = build_dataset(bundle, CodeListRegistry.default(), "composite")
    path = tmp_path_factory.mktemp("bench") / "cohort.jsonl"
    save_dataset(ds, path)
    return ds, path


@pytest.fixture(scope="module")
def bleeding_cohort(tmp_path_factory):
    cfg = acceptance_generator_config(n_persons=700)
    bundle = generate_population(cfg, default_vocabulary(), seed=21)
    ds, _ = build_dataset(bundle, CodeListRegistry.default(), "bleeding")
    path = tmp_path_factory.mktemp("bench") / "bleeding.jsonl"
    save_dataset(ds, path)
    return ds, path


def _config(path, **kw):
    defaults = dict(dataset=str(path), target="composite", families=["coxnet"],
                    outer_folds=4, inner_folds=2, trials=2, seed=5,
                    attribution={"max_subjects_per_fold": 8, "budget": 64,
                                 "background_size": 20})
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestTune:
    def test_single_trial_returns_it(self, cohort):
        ds, _ = cohort
        best, records = tune("coxnet", ds, trials=1, inner_k=2, seed=1)
        assert len(records) == 1
        assert best == records[0].params

    def test_degenerate_space_tie_breaks_by_trial_index(self, monkeypatch):
        rng = np.random.default_rng(0)
        n = 200
        X = rng.binomial(1, 0.4, size=(n, 4)).astype(float)
        t = rng.exponential(1 / (0.01 * np.exp(X[:, 0])))
        subjects = [Subject(f"s{i}", tuple(X[i]), int(t[i]) + 1, Cause.EVENT)
                    for i in range(n)]
        ds = SurvivalDataset(subjects, [f"f{j}" for j in range(4)])
        fixed = {"alpha": 0.01, "l1_ratio": 0.5}
        spec = FAMILY_SPECS["coxnet"]
        monkeypatch.setitem(
            FAMILY_SPECS, "coxnet",
            FamilySpec("coxnet", spec.label, True, lambda rng: dict(fixed), spec.fit))
        best, records = tune("coxnet", ds, trials=3, inner_k=2, seed=2)
        assert best == fixed
        scores = [r.mean_score for r in records]
        assert len(set(np.round(scores, 12))) == 1
        assert [r for r in records if r.rank == 0][0].trial == 0

    def test_low_alpha_wins_on_dense_weak_signal(self):
        # many weak features: heavy L1 zeroes most of the signal, so tuning
        # must land in the lower half of the alpha range
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            n, p = 400, 12
            X = rng.binomial(1, 0.3, size=(n, p)).astype(float)
            lp = 0.5 * X.sum(axis=1) - 0.5 * p * 0.3
            t = rng.exponential(1 / (0.0003 * np.exp(lp)))
            cens = rng.uniform(600, 1100, n)
            subjects = [Subject(f"s{i}", tuple(X[i]), int(min(t[i], cens[i])) + 1,
                                Cause.EVENT if t[i] <= cens[i] else Cause.CENSORED)
                        for i in range(n)]
            ds = SurvivalDataset(subjects, [f"f{j}" for j in range(p)])
            best, _ = tune("coxnet", ds, trials=8, inner_k=3, seed=seed)
            wins += best["alpha"] < (0.0001 + 0.05) / 2
        assert wins >= 8

    def test_all_trials_failing_raises_with_failures(self, cohort, monkeypatch):
        ds, _ = cohort

        def broken_fit(dataset, params, seed, context):
            raise RuntimeError("boom")

        spec = FAMILY_SPECS["coxnet"]
        monkeypatch.setitem(
            FAMILY_SPECS, "coxnet",
            FamilySpec("coxnet", spec.label, True, spec.sample, broken_fit))
        with pytest.raises(TuningFailedError) as err:
            tune("coxnet", ds, trials=3, inner_k=2, seed=3)
        assert len(err.value.failures) == 3


class TestRunCV:
    def test_reports_and_fold_values_consistent(self, cohort):
        _, path = cohort
        result = run_cv(_config(path, families=["coxnet", "gbt"]))
        for family, rep in result.reports.items():
            if rep.failed or not rep.fold_concordance:
                continue
            c = np.asarray(rep.fold_concordance)
            assert np.abs(c.mean(axis=0) - rep.concordance_mean).max() < 1e-12
            assert np.abs(c.std(axis=0) - rep.concordance_std).max() < 1e-12
            e = np.asarray(rep.fold_ece)
            assert np.abs(e.mean(axis=0) - rep.ece_mean).max() < 1e-12

    def test_trial_count_bookkeeping(self, cohort):
        _, path = cohort
        cfg = _config(path, families=["coxnet"])
        result = run_cv(cfg)
        assert len(result.trial_records["coxnet"]) == cfg.outer_folds * cfg.trials

    def test_failing_family_marked_run_continues(self, cohort, monkeypatch):
        _, path = cohort

        def broken_fit(dataset, params, seed, context):
            raise RuntimeError("kaput")

        spec = FAMILY_SPECS["gbt"]
        monkeypatch.setitem(FAMILY_SPECS, "gbt",
                            FamilySpec("gbt", spec.label, True, spec.sample, broken_fit))
        result = run_cv(_config(path, families=["coxnet", "gbt"]))
        assert result.reports["gbt"].failed
        assert not result.reports["coxnet"].failed

    def test_bleeding_target_adds_rows(self, bleeding_cohort):
        _, path = bleeding_cohort
        cfg = _config(path, target="bleeding", families=["dsm"], trials=1,
                      outer_folds=3)
        fams = cfg.resolved_families()
        assert fams == ["dsm", "dsm-competing", "hasbled"]
        result = run_cv(cfg)
        assert set(result.reports) == {"dsm", "dsm-competing", "hasbled"}

    def test_composite_target_includes_chads_baseline(self, cohort):
        _, path = cohort
        cfg = _config(path)
        assert "cha2ds2vasc" in cfg.resolved_families()

    def test_empty_family_list_warns(self, cohort, tmp_path):
        _, path = cohort
        cfg = _config(path, families=[], include_baseline=False)
        result = run_cv(cfg)
        assert result.warnings
        paths = emit_report(result, tmp_path)
        metrics = (tmp_path / "metrics.csv").read_text().splitlines()
        assert len(metrics) == 1  # header only

    def test_validation_failure_rejected(self, tmp_path):
        bad = SurvivalDataset([Subject("a", (1.0,), 5, Cause.EVENT),
                               Subject("a", (1.0,), 3, Cause.CENSORED)], ["f0"])
        path = tmp_path / "bad.jsonl"
        save_dataset(bad, path)
        with pytest.raises(ValueError, match="validation"):
            run_cv(_config(path))


class TestEmitReport:
    def test_files_and_layout(self, cohort, tmp_path):
        _, path = cohort
        result = run_cv(_config(path, families=["coxnet"]))
        paths = emit_report(result, tmp_path)
        names = {p.name for p in paths}
        assert {"metrics.csv", "metrics.json", "km.csv", "manifest.json"} <= names
        header = (tmp_path / "metrics.csv").read_text().splitlines()[0].split(",")
        assert header == ["model", "concordance_25%", "concordance_50%",
                          "concordance_75%", "ece_25%", "ece_50%", "ece_75%", "d_cal"]
        km_lines = (tmp_path / "km.csv").read_text().splitlines()
        assert km_lines[1].startswith("At risk")
        assert km_lines[2].startswith("Censored")
        assert km_lines[3].startswith("Events")
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["trials_executed"]["coxnet"] == 4 * 2
        assert "wall_time_s" in manifest

    def test_byte_identical_reports_across_runs(self, cohort, tmp_path):
        _, path = cohort
        cfg = _config(path, families=["coxnet", "deepsurv"])
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        emit_report(run_cv(cfg), out1)
        emit_report(run_cv(cfg), out2)
        for name in ("metrics.csv", "metrics.json", "km.csv",
                     "attribution_summary.csv", "attribution_long.csv"):
            a, b = out1 / name, out2 / name
            assert a.exists() == b.exists()
            if a.exists():
                assert a.read_bytes() == b.read_bytes(), name

    def test_tuning_never_sees_validation_ids(self, cohort):
        # structural invariant asserted inside run_cv; exercise it directly
        from survscope.core import stratified_kfold
        ds, _ = cohort
        for train, val in stratified_kfold(ds, 5, seed=1):
            assert len(np.intersect1d(train, val)) == 0
