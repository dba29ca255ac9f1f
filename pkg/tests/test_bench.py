import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from simcal import (LossSpec, Model, OptimizerConfig, ParameterSpace, SeedStream, Pipeline, SyntheticDGP,
                    calibrate, capacity_siegloch, ensemble_compare, estimator_mse, eval_loss, loss_landscape,
                    oat_sensitivity, recover, synthesize, variance_decomposition)
from simcal.bench import mse_report, near_minimum_fraction, uniform_flow
from simcal.simulators import LinearSimulator, RoundaboutParams, get_simulator

from conftest import scalar_dataset

SIEG_SPACE = ParameterSpace((("t_c", 3.0, 5.0), ("t_f", 1.5, 2.5)))
SIEG_GRID = OptimizerConfig("grid", {"resolution": [21, 11]}, budget=231)


def siegloch_dgp(sigma=0.0, t_c=4.0, t_f=2.0):
    model = Model(get_simulator("siegloch"), SIEG_SPACE, noise={"capacity": sigma} if sigma else {})
    return SyntheticDGP(model, {"t_c": t_c, "t_f": t_f}, uniform_flow(0.0, 1500.0), "siegloch")


def location_dgp(sigma=1.0, beta=0.3):
    model = Model(LinearSimulator(1), ParameterSpace((("beta_0", -5.0, 5.0),)), noise={"y": sigma})
    return SyntheticDGP(model, {"beta_0": beta}, lambda rng, i: {"x": np.array([1.0])}, "location")


class TestSynthesize:
    def test_noise_free_self_consistent(self):
        dgp = siegloch_dgp()
        ds = synthesize(dgp, 20, SeedStream(0))
        assert eval_loss(LossSpec({"capacity": "RMSE"}), dgp.model, dgp.theta_array, ds, SeedStream(0)) == 0.0

    def test_same_seed_identical(self):
        dgp = siegloch_dgp(5.0)
        a, b = synthesize(dgp, 10, SeedStream(1)), synthesize(dgp, 10, SeedStream(1))
        assert a.provenance == b.provenance
        for p, q in zip(a, b):
            assert p.x_obs["q_c"][0] == q.x_obs["q_c"][0] and p.y_obs["capacity"][0] == q.y_obs["capacity"][0]

    def test_generation_noise(self):
        dgp = location_dgp(0.1)
        ds = synthesize(dgp, 100, SeedStream(2))
        resid = ds.channel_values("y") - 0.3
        assert resid.std(ddof=1) == pytest.approx(0.1, rel=0.15)

    def test_provenance_records_truth(self):
        ds = synthesize(siegloch_dgp(), 3, SeedStream(0))
        assert "t_c=4" in ds.provenance and "t_f=2" in ds.provenance

    def test_infeasible_truth(self):
        with pytest.raises(ValueError):
            SyntheticDGP(siegloch_dgp().model, {"t_c": 6.0, "t_f": 2.0}, uniform_flow())

    def test_n_positive(self):
        with pytest.raises(ValueError):
            synthesize(siegloch_dgp(), 0)


class TestRecover:
    def test_siegloch_grid_exact(self):
        rep = recover(siegloch_dgp(), 15, Pipeline(LossSpec({"capacity": "RMSE"}), SIEG_GRID), SeedStream(0))
        np.testing.assert_array_equal(rep.theta_hat, [4.0, 2.0])
        assert rep.loss_hat == 0.0 and rep.noise_floor == 0.0
        assert np.all(rep.abs_error == 0) and np.all(rep.rel_error == 0)
        assert "wall_time" not in rep.as_dict()

    def test_noisy_loss_near_floor(self):
        pipe = Pipeline(LossSpec({"capacity": "RMSE"}), OptimizerConfig("nelder_mead", {"xtol": 1e-9}), starts=4)
        rep = recover(siegloch_dgp(20.0), 40, pipe, SeedStream(1))
        assert rep.loss_hat <= rep.noise_floor
        assert 0.5 * rep.noise_floor <= rep.loss_hat


class TestMSE:
    def test_constant_estimator(self):
        dgp = location_dgp()
        rep = estimator_mse(dgp, 5, lambda ds, seed: np.array([1.25]), 10, SeedStream(0))
        assert rep.variance[0] == 0.0 and rep.bias[0] == 1.25 - 0.3

    def test_sample_mean(self):
        dgp = location_dgp(1.0, 0.3)
        rep = estimator_mse(dgp, 25, lambda ds, seed: np.array([ds.channel_values("y").mean()]), 400,
                            SeedStream(3))
        assert rep.variance[0] == pytest.approx(1 / 25, rel=0.25)
        assert abs(rep.bias[0]) <= 3 * math.sqrt(1 / (25 * 400))
        assert rep.identity_gap[0] <= 1e-10

    @given(est=arrays(float, (7, 3), elements=st.floats(-100, 100)),
           truth=arrays(float, 3, elements=st.floats(-100, 100)))
    def test_identity(self, est, truth):
        rep = mse_report(est, truth, ("a", "b", "c"))
        assert np.all(rep.identity_gap <= 1e-10)
        assert np.all(rep.variance >= 0) and np.all(rep.mse >= 0)

    def test_failures_recorded(self):
        def flaky(ds, seed):
            if ds.channel_values("y")[0] > 0.3:
                raise RuntimeError("nope")
            return np.array([0.0])

        rep = estimator_mse(location_dgp(), 3, flaky, 12, SeedStream(0))
        assert rep.failures and rep.replications == 12 - len(rep.failures)

    def test_all_fail(self):
        with pytest.raises(RuntimeError):
            estimator_mse(location_dgp(), 3, lambda ds, seed: 1 / 0, 3, SeedStream(0))

    def test_parallel_identical(self):
        est = lambda ds, seed: np.array([ds.channel_values("y").mean() + seed.rng().normal()])  # noqa: E731
        a = estimator_mse(location_dgp(), 5, est, 8, SeedStream(4), n_jobs=1)
        b = estimator_mse(location_dgp(), 5, est, 8, SeedStream(4), n_jobs=4)
        np.testing.assert_array_equal(a.estimates, b.estimates)


class TestVarianceDecomposition:
    def test_deterministic_pipeline(self):
        pipe = Pipeline(LossSpec({"capacity": "RMSE"}), SIEG_GRID)
        rep = variance_decomposition(siegloch_dgp(20.0), 10, pipe.estimator(siegloch_dgp().model), 4, 4,
                                     SeedStream(0))
        assert np.all(rep.monte_carlo_error == 0) and np.all(rep.standard_error > 0)
        assert rep.dominant == ("standard", "standard")

    def test_stochastic_loss_has_monte_carlo_error(self):
        # calibrating the noisy model itself makes the loss depend on the estimator seed
        dgp = siegloch_dgp(20.0)
        pipe = Pipeline(LossSpec({"capacity": "RMSE"}), SIEG_GRID)
        rep = variance_decomposition(dgp, 10, pipe.estimator(dgp.model), 4, 4, SeedStream(0))
        assert rep.monte_carlo_error[0] > 0

    def test_no_randomness(self):
        pipe = Pipeline(LossSpec({"capacity": "RMSE"}), SIEG_GRID)
        rep = variance_decomposition(siegloch_dgp(), 10, pipe.estimator(siegloch_dgp().model), 3, 3, SeedStream(0))
        assert np.all(rep.monte_carlo_error == 0) and np.all(rep.standard_error == 0)

    def test_noisy_genetic(self):
        dgp = siegloch_dgp(20.0)
        cfg = OptimizerConfig("genetic", {"population": 8, "generations": 6})
        pipe = Pipeline(LossSpec({"capacity": "RMSE"}), cfg)
        rep = variance_decomposition(dgp, 8, pipe.estimator(dgp.model), 20, 20, SeedStream(0))
        assert np.all(rep.standard_error > 0) and np.all(rep.monte_carlo_error > 0)
        assert set(rep.as_dict()["t_c"]) == {"standard_error", "monte_carlo_error", "dominant"}

    def test_minimum_draws(self):
        with pytest.raises(ValueError):
            variance_decomposition(location_dgp(), 3, lambda ds, s: np.zeros(1), 1, 5)


class TestOAT:
    def test_inert_ranked_last(self):
        model = Model(LinearSimulator(3), ParameterSpace(tuple((f"beta_{j}", -1.0, 1.0) for j in range(3))))
        rep = oat_sensitivity(model, {"x": [2.0, 0.0, 1.0]}, 5, "y")
        assert rep.ranking[-1] == ("beta_1", 0.0)
        assert [n for n, _ in rep.ranking] == ["beta_0", "beta_2", "beta_1"]

    def test_siegloch_ranges(self):
        model = Model(get_simulator("siegloch"), ParameterSpace((("t_c", 3.0, 5.0), ("t_f", 1.9, 2.1))))
        rep = oat_sensitivity(model, {"q_c": [600.0]}, 5, "capacity")
        cap = lambda tc, tf: capacity_siegloch(600.0, RoundaboutParams(tc, tf))  # noqa: E731
        tc_vals = [cap(tc, 2.0) for tc in np.linspace(3, 5, 5)]
        tf_vals = [cap(4.0, tf) for tf in np.linspace(1.9, 2.1, 5)]
        assert rep.ranking[0][0] == "t_c"
        assert rep.ranking[0][1] == pytest.approx(max(tc_vals) - min(tc_vals), rel=1e-12)
        assert rep.ranking[1][1] == pytest.approx(max(tf_vals) - min(tf_vals), rel=1e-12)

    def test_deterministic(self):
        model = Model(get_simulator("siegloch"), SIEG_SPACE)
        assert oat_sensitivity(model, {"q_c": [300.0]}, 4, "capacity") == oat_sensitivity(
            model, {"q_c": [300.0]}, 4, "capacity")

    def test_levels(self):
        with pytest.raises(ValueError):
            oat_sensitivity(Model(get_simulator("siegloch"), SIEG_SPACE), {"q_c": [0.0]}, 2, "capacity")


def two_feature_model():
    return Model(LinearSimulator(2), ParameterSpace((("beta_0", -1.0, 1.0), ("beta_1", -1.0, 1.0))))


def feature_dataset(rows, ys):
    from simcal import Channel, DataPoint, Dataset, Schema
    schema = Schema((Channel("x", 2),), (Channel("y"),))
    return Dataset(schema, tuple(DataPoint({"x": r}, {"y": [y]}) for r, y in zip(rows, ys)))


class TestLandscape:
    def test_convex_unique(self):
        ds = feature_dataset([[1, 0], [0, 1]], [0.2, -0.4])
        land = loss_landscape(LossSpec({"y": "RMSE"}), two_feature_model(), ds, (0, 1), 41)
        assert not land.flat and land.near_min_fraction == 1 / 41 ** 2
        assert land.argmin() == pytest.approx((0.2, -0.4))

    def test_degenerate_band(self):
        ds = feature_dataset([[1, 1]], [0.0])
        land = loss_landscape(LossSpec({"y": "RMSE"}), two_feature_model(), ds, ("beta_0", "beta_1"), 11)
        assert land.flat
        diag = np.array([land.values[a, 10 - a] for a in range(11)])
        assert np.all(diag <= 1e-12)

    def test_grid_not_below_optimum(self):
        ds = feature_dataset([[1, 0.5], [0.3, 1], [1, -1]], [0.1, 0.7, -0.2])
        spec = LossSpec({"y": "RMSE"})
        best, _ = calibrate(two_feature_model(), spec, ds, OptimizerConfig("nelder_mead", {"xtol": 1e-12}), starts=4)
        land = loss_landscape(spec, two_feature_model(), ds, (0, 1), 15)
        assert land.minimum >= best.loss_hat - 1e-9

    def test_near_minimum_rule(self):
        assert near_minimum_fraction([[1.0, 1.009], [1.02, 5.0]]) == 0.5
        assert near_minimum_fraction([[0.0, 1e-13], [1e-11, 1.0]]) == 0.5

    @pytest.mark.parametrize("components, resolution", [((0, 0), 5), ((0, 1), 2), ((0, 2), 5)])
    def test_invalid(self, components, resolution):
        ds = feature_dataset([[1, 1]], [0.0])
        with pytest.raises(ValueError):
            loss_landscape(LossSpec({"y": "RMSE"}), two_feature_model(), ds, components, resolution)

    def test_parallel_identical(self):
        ds = feature_dataset([[1, 0.5]], [0.3])
        a = loss_landscape(LossSpec({"y": "RMSE"}), two_feature_model(), ds, (0, 1), 9, n_jobs=1)
        b = loss_landscape(LossSpec({"y": "RMSE"}), two_feature_model(), ds, (0, 1), 9, n_jobs=3)
        np.testing.assert_array_equal(a.values, b.values)


class TestEnsemble:
    nm = Pipeline(LossSpec({"capacity": "RMSE"}), OptimizerConfig("nelder_mead", {"xtol": 1e-9}), starts=3)

    def test_singleton(self):
        ds = synthesize(siegloch_dgp(10.0), 20, SeedStream(0))
        rows = ensemble_compare([("true", siegloch_dgp().model, self.nm)], ds, SeedStream(1))
        best, _ = self.nm.fit(siegloch_dgp().model, ds, SeedStream(1))
        assert len(rows) == 1 and rows[0].loss_hat == best.loss_hat

    def test_identical_candidates(self):
        ds = synthesize(siegloch_dgp(10.0), 20, SeedStream(0))
        m = siegloch_dgp().model
        rows = ensemble_compare([("a", m, self.nm), ("b", m, self.nm)], ds, SeedStream(1))
        assert rows[0].loss_hat == rows[1].loss_hat and rows[0].theta_hat == rows[1].theta_hat

    def test_true_model_wins(self):
        wrong = Model(get_simulator("siegloch"), ParameterSpace((("t_c", 3.0, 5.0),)), {"t_f": 2.3})
        wins = 0
        for s in range(20):
            ds = synthesize(siegloch_dgp(20.0), 20, SeedStream(s))
            rows = ensemble_compare([("true", siegloch_dgp().model, self.nm), ("restricted", wrong, self.nm)], ds,
                                    SeedStream(100 + s))
            wins += rows[0].loss_hat <= rows[1].loss_hat
        assert wins >= 18

    def test_failures_recorded(self):
        ds = synthesize(siegloch_dgp(), 5, SeedStream(0))
        lin = Model(LinearSimulator(1), ParameterSpace((("beta_0", -1.0, 1.0),)))
        rows = ensemble_compare([("true", siegloch_dgp().model, self.nm), ("linear", lin, self.nm)], ds)
        assert rows[1].loss_hat is None and "lacks inputs" in rows[1].error

    def test_unique_names(self):
        with pytest.raises(ValueError):
            ensemble_compare([("a", siegloch_dgp().model, self.nm)] * 2, synthesize(siegloch_dgp(), 3))
