import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from simcal import BayesianCalibrator, SimulatorCalibrator
from simcal.estimators import make_model

from conftest import scalar_dataset

XS = np.linspace(-2.0, 2.0, 9)


@pytest.fixture
def line():
    return scalar_dataset(XS, 2.0 * XS)


def _cal(**kw):
    base = dict(simulator="linear", bounds={"beta_0": (-5.0, 5.0)}, optimizer="nelder_mead", budget=400)
    base.update(kw)
    return SimulatorCalibrator(**base)


class TestMakeModel:
    def test_partition(self):
        m = make_model("gipps", {"V": (10, 25), "a": (0.5, 3)}, frozen={"b": 3, "b_hat": 3.2, "s": 6.5, "tau": 0.66})
        assert m.space.names == ("V", "a")
        assert m.frozen["b"] == 3.0

    def test_missing_parameter(self):
        with pytest.raises(ValueError, match="neither calibrated nor frozen"):
            make_model("gipps", {"V": (10, 25)})


class TestSimulatorCalibrator:
    def test_fit_recovers_slope(self, line):
        est = _cal().fit(line)
        assert est.theta_["beta_0"] == pytest.approx(2.0, abs=1e-6)
        assert est.result_.loss_hat < 1e-6
        assert est.theta_ is est.result_.theta_hat

    def test_predict_and_score(self, line):
        est = _cal().fit(line)
        pred = est.predict(line)
        assert len(pred) == len(line)
        np.testing.assert_allclose([p["y"][0] for p in pred], 2.0 * XS, atol=1e-5)
        assert -1e-6 < est.score(line) <= 0.0

    def test_predict_single_record(self, line):
        est = _cal().fit(line)
        (out,) = est.predict({"x": np.array([3.0])})
        assert out["y"][0] == pytest.approx(6.0, abs=1e-5)

    def test_unfitted(self, line):
        with pytest.raises(NotFittedError):
            _cal().predict(line)
        with pytest.raises(NotFittedError):
            _cal().score(line)

    def test_get_params_and_clone(self, line):
        est = _cal(starts=3, seed=7)
        params = est.get_params()
        assert params["starts"] == 3 and params["seed"] == 7
        fitted = est.fit(line)
        twin = clone(fitted)
        assert not hasattr(twin, "theta_")
        assert twin.get_params() == params

    def test_set_params(self):
        est = _cal().set_params(optimizer="grid", hyper={"resolution": 11})
        assert est.optimizer == "grid"

    def test_deterministic(self, line):
        a = _cal(optimizer="genetic", budget=300, seed=3).fit(line)
        b = _cal(optimizer="genetic", budget=300, seed=3).fit(line)
        assert a.theta_["beta_0"] == b.theta_["beta_0"]
        assert a.result_.trace == b.result_.trace

    def test_dispersion_kept(self, line):
        est = _cal(starts=4).fit(line)
        assert len(est.dispersion_.losses) == 4

    @pytest.mark.parametrize("kw, exc", [
        (dict(bounds={}), ValueError),
        (dict(budget=0), ValueError),
        (dict(budget=2.5), TypeError),
        (dict(starts=0), ValueError),
        (dict(lam=-1.0), ValueError),
        (dict(seed="x"), TypeError),
    ])
    def test_bad_hyperparameters(self, line, kw, exc):
        with pytest.raises(exc):
            _cal(**kw).fit(line)

    def test_rejects_non_dataset(self):
        with pytest.raises(TypeError, match="Dataset"):
            _cal().fit(np.zeros((3, 2)))

    def test_regularizer_pulls_toward_reference(self, line):
        free = _cal().fit(line)
        pulled = _cal(lam=100.0, regularizer="squared_distance", reference={"beta_0": 0.0}).fit(line)
        assert abs(pulled.theta_["beta_0"]) < abs(free.theta_["beta_0"])


class TestBayesianCalibrator:
    @pytest.fixture
    def noisy(self):
        rng = np.random.default_rng(5)
        return scalar_dataset(XS, 2.0 * XS + rng.normal(0, 0.5, XS.size))

    def _bayes(self, **kw):
        base = dict(simulator="linear", bounds={"beta_0": (-5.0, 5.0)}, noise={"y": 0.5}, iterations=6000,
                    burn_in=1000, scales=np.array([0.2]), seed=1)
        base.update(kw)
        return BayesianCalibrator(**base)

    def test_posterior_mean_near_least_squares(self, noisy):
        est = self._bayes().fit(noisy)
        xs = np.array([p.x_obs["x"][0] for p in noisy])
        ys = np.array([p.y_obs["y"][0] for p in noisy])
        ols = float(xs @ ys / (xs @ xs))
        sd = 0.5 / np.sqrt(xs @ xs)
        assert est.theta_["beta_0"] == pytest.approx(ols, abs=0.25 * sd)
        assert est.summary_.sd[0] == pytest.approx(sd, rel=0.2)
        assert est.diagnostics_ is not None

    def test_predict_uses_posterior_mean(self, noisy):
        est = self._bayes().fit(noisy)
        (out,) = est.predict({"x": np.array([1.0])})
        assert out["y"][0] == pytest.approx(est.theta_["beta_0"])

    def test_clone_and_unfitted(self, noisy):
        est = self._bayes(iterations=500, burn_in=100)
        with pytest.raises(NotFittedError):
            est.predict(noisy)
        twin = clone(est.fit(noisy))
        assert not hasattr(twin, "posterior_")
        assert twin.get_params()["iterations"] == 500

    def test_reproducible(self, noisy):
        a = self._bayes(iterations=800, burn_in=100).fit(noisy)
        b = self._bayes(iterations=800, burn_in=100).fit(noisy)
        np.testing.assert_array_equal(a.posterior_.samples, b.posterior_.samples)

    def test_short_chain_has_no_diagnostics(self, noisy):
        est = self._bayes(iterations=150, burn_in=100).fit(noisy)
        assert est.diagnostics_ is None
