import numpy as np
import pytest

from survscope.core import DAYS_PER_YEAR, Cause
from survscope.models.base import load_model
from survscope.models.dsm import (DSMModel, DSMParameters, dsm_fit,
                                  dsm_loss_and_grads)
from survscope.models.nets import MLP, softplus

from conftest import synthetic_cox_data
from test_deepsurv import finite_difference_check


def _random_params(dist, seed=1, p=4, d=6, k=3, causes=(1, 2)):
    rng = np.random.default_rng(seed)
    rep = MLP([p, d], rng, out_linear=False)
    params = DSMParameters(rep, list(causes), dist, k, d)
    for c in causes:
        for name in params.heads[c]:
            params.heads[c][name][:] = rng.normal(scale=0.3,
                                                  size=params.heads[c][name].shape)
    return params


class TestGradients:
    @pytest.mark.parametrize("dist", ["Weibull", "LogNormal"])
    def test_every_tensor_matches_finite_differences(self, dist):
        params = _random_params(dist)
        rng = np.random.default_rng(2)
        Xb = rng.normal(size=(5, 4))
        tb = np.array([0.5, 1.2, 2.0, 0.8, 3.0])
        cb = np.array([1, 0, 2, 1, 0])

        def loss_fn():
            return dsm_loss_and_grads(params, Xb, tb, cb, discount=0.7)

        worst = finite_difference_check(loss_fn, params.named_tensors())
        assert worst < 1e-4


class TestParameterRecovery:
    def test_weibull_k1_recovers_shape_and_scale(self):
        hits = 0
        for seed in range(3):
            rng = np.random.default_rng(seed)
            t_days = rng.weibull(1.5, 5000) * 2.0 * DAYS_PER_YEAR
            model = dsm_fit(np.zeros((5000, 1)), t_days, np.ones(5000, int),
                            ["dummy"], distribution="Weibull", k=1, layers=None,
                            learning_rate=0.01, batch_size=128, epochs=10, seed=seed)
            head = model.params.heads[1]
            shape = float(softplus(head["ba"])[0])
            scale = float(softplus(head["bb"])[0])
            hits += abs(shape - 1.5) / 1.5 < 0.10 and abs(scale - 2.0) / 2.0 < 0.10
        assert hits == 3


class TestContracts:
    def test_invalid_distribution_rejected(self):
        with pytest.raises(ValueError, match="distribution"):
            dsm_fit(np.zeros((10, 1)), np.arange(1, 11), np.ones(10, int), ["x"],
                    distribution="Gamma")

    def test_competing_events_require_competing_mode(self):
        causes = np.array([1, 2, 0, 1, 2, 0, 1, 1, 0, 2])
        with pytest.raises(ValueError, match="competing"):
            dsm_fit(np.zeros((10, 1)), np.arange(1, 11), causes, ["x"], mode="single")

    def test_survival_monotone_for_random_subjects(self):
        X, times, events, _ = synthetic_cox_data(n=400, p=4, seed=3, censor_at=900)
        model = dsm_fit(X, times, events.astype(int), [f"f{j}" for j in range(4)],
                        distribution="Weibull", k=3, layers=1, nodes=20,
                        learning_rate=0.01, batch_size=64, epochs=5, seed=4)
        grid = np.linspace(0, 1000, 50)
        S = model.predict_survival(X[:100], grid)
        assert np.all((0 <= S) & (S <= 1))
        assert np.all(np.diff(S, axis=1) <= 1e-12)
        assert np.allclose(S[:, 0], 1.0)  # S(0) = 1

    def test_lognormal_contract(self):
        X, times, events, _ = synthetic_cox_data(n=300, p=3, seed=5, censor_at=900)
        model = dsm_fit(X, times, events.astype(int), list("abc"),
                        distribution="LogNormal", k=2, layers=None,
                        learning_rate=0.001, batch_size=64, epochs=5, seed=6)
        S = model.predict_survival(X[:20], np.linspace(0, 900, 40))
        assert np.all((0 <= S) & (S <= 1))
        assert np.all(np.diff(S, axis=1) <= 1e-12)

    def test_roundtrip(self, tmp_path):
        X, times, events, _ = synthetic_cox_data(n=200, p=3, seed=7, censor_at=900)
        model = dsm_fit(X, times, events.astype(int), list("abc"),
                        distribution="Weibull", k=2, layers=1, nodes=10,
                        learning_rate=0.01, batch_size=64, epochs=3, seed=8)
        model.save(tmp_path / "dsm.json")
        loaded = load_model(tmp_path / "dsm.json")
        assert isinstance(loaded, DSMModel)
        assert np.allclose(loaded.predict_survival(X[:5], [100, 500]),
                           model.predict_survival(X[:5], [100, 500]))

    def test_reproducible_bit_for_bit(self):
        X, times, events, _ = synthetic_cox_data(n=200, p=3, seed=9, censor_at=900)
        kw = dict(distribution="Weibull", k=2, layers=1, nodes=10,
                  learning_rate=0.01, batch_size=64, epochs=3, seed=10)
        assert dsm_fit(X, times, events.astype(int), list("abc"), **kw).to_blob() \
            == dsm_fit(X, times, events.astype(int), list("abc"), **kw).to_blob()


def _competing_dataset(n=600, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.binomial(1, 0.4, size=(n, 3)).astype(float)
    lp1 = 0.8 * X[:, 0]
    lp2 = 0.6 * X[:, 1]
    t1 = rng.exponential(1.0 / (0.002 * np.exp(lp1)))
    t2 = rng.exponential(1.0 / (0.003 * np.exp(lp2)))
    horizon = 1000.0
    times = np.minimum(np.minimum(t1, t2), horizon)
    causes = np.where(times >= horizon, 0, np.where(t1 <= t2, 1, 2))
    return X, times, causes


class TestCompetingMode:
    def setup_method(self):
        X, times, causes, = _competing_dataset()
        self.model = dsm_fit(X, times, causes, list("abc"), distribution="Weibull",
                             k=2, layers=1, nodes=10, learning_rate=0.01,
                             batch_size=64, epochs=5, seed=1, mode="competing")
        self.X = X

    def test_cif_bounded_and_monotone(self):
        times = np.linspace(1, 1000, 30)
        cif1 = self.model.predict_cif(self.X[:50], times, int(Cause.EVENT))
        cif2 = self.model.predict_cif(self.X[:50], times, int(Cause.COMPETING))
        assert np.all(cif1 + cif2 <= 1.0 + 1e-9)
        assert np.all(np.diff(cif1, axis=1) >= -1e-12)
        assert np.all(np.diff(cif2, axis=1) >= -1e-12)

    def test_total_cif_plus_survival_is_one(self):
        times = np.linspace(1, 1000, 30)
        cif1 = self.model.predict_cif(self.X[:50], times, int(Cause.EVENT))
        cif2 = self.model.predict_cif(self.X[:50], times, int(Cause.COMPETING))
        s = self.model.predict_survival(self.X[:50], times)
        assert np.abs(cif1 + cif2 + s - 1.0).max() < 1e-6

    def test_risk_is_primary_cause_cif(self):
        r = self.model.predict_risk(self.X[:10], 500.0)
        cif = self.model.predict_cif(self.X[:10], [500.0], int(Cause.EVENT))[:, 0]
        assert np.allclose(r, cif)

    def test_single_mode_has_no_cif(self):
        X, times, events, _ = synthetic_cox_data(n=100, p=3, seed=2)
        m = dsm_fit(X, times, events.astype(int), list("abc"), k=1, layers=None,
                    epochs=2, seed=3)
        with pytest.raises(NotImplementedError):
            m.predict_cif(X[:2], [100.0], 1)
