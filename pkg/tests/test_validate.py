import math
import statistics

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

import simcal.validate as validate_mod
from simcal import (Channel, DataPoint, Dataset, LossSpec, Model, OptimizerConfig, ParameterSpace, Schema,
                    SeedStream, cross_validate, diagnose_bias_variance, error_on, eval_loss, scientific_validate,
                    welch_t_test)
from simcal.bench import gipps_leader
from simcal.simulators import LinearSimulator, get_simulator
from simcal.validate import classify_fit, select_regularization

from conftest import scalar_dataset

NM = OptimizerConfig("nelder_mead", budget=400)


def line_dataset(n, sigma, seed, slope=2.0, intercept=0.5):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1, 1, n)
    ys = intercept + slope * xs + rng.normal(0, sigma, n)
    schema = Schema((Channel("x", 2),), (Channel("y"),))
    return Dataset(schema, tuple(DataPoint({"x": [1.0, x]}, {"y": [y]}) for x, y in zip(xs, ys)))


def line_model():
    return Model(LinearSimulator(2), ParameterSpace((("beta_0", -5.0, 5.0), ("beta_1", -5.0, 5.0))))


class TestErrorOn:
    def test_perfect_fit(self):
        ds = line_dataset(6, 0.0, 0)
        assert error_on(ds, line_model(), [0.5, 2.0], LossSpec({"y": "RMSE"}), SeedStream(0)) == pytest.approx(0,
                                                                                                            abs=1e-15)

    @given(lam=st.floats(0, 10))
    def test_equals_unregularised_loss(self, lam):
        ds = line_dataset(6, 0.3, 1)
        spec = LossSpec({"y": "RMSE"}, lam=lam, regularizer="squared_distance", reference={"beta_0": 0, "beta_1": 0})
        m, theta = line_model(), [0.1, 1.0]
        got = error_on(ds, m, theta, spec, SeedStream(0))
        assert got == eval_loss(spec.with_lambda(0.0), m, theta, ds, SeedStream(0))

    def test_union_is_mean_of_equal_splits(self):
        ds = line_dataset(8, 0.3, 2)
        tr, val = ds.subset(range(4)), ds.subset(range(4, 8))
        spec, m, theta = LossSpec({"y": "MAE"}), line_model(), [0.0, 1.0]
        e = lambda d: error_on(d, m, theta, spec, SeedStream(0))  # noqa: E731
        assert e(tr.concat(val)) == pytest.approx((e(tr) + e(val)) / 2, rel=1e-14)


class TestDiagnose:
    @pytest.mark.parametrize("errors, label", [
        ((0.9, 1.0, 0.1), "under_fit"),
        ((0.1, 0.9, 0.12), "over_fit"),
        ((0.1, 0.11, 0.12), "acceptable"),
        ((0.2, 0.3, 0.1), "inconclusive"),
    ])
    def test_patterns(self, errors, label):
        rep = diagnose_bias_variance(*errors)
        assert rep.classification == label

    def test_report_ratios(self):
        rep = diagnose_bias_variance(0.1, 0.9, 0.12, eps_te=0.5)
        assert rep.val_over_tr == pytest.approx(9.0) and rep.tr_over_th == pytest.approx(0.1 / 0.12)
        d = rep.as_dict()
        assert d["eps_te"] == 0.5 and d["classification"] == "over_fit"
        assert diagnose_bias_variance(0.0, 0.0, 1.0).as_dict()["val_over_tr"] is None

    @pytest.mark.parametrize("args", [(-0.1, 1.0, 1.0), (0.1, 1.0, 0.0), (0.1, -1.0, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            diagnose_bias_variance(*args)

    @given(tr=st.floats(0, 10), val=st.floats(0, 10), th=st.floats(1e-3, 10),
           ratio=st.floats(1.01, 5), tol=st.floats(0, 1))
    def test_rules_consistent(self, tr, val, th, ratio, tol):
        label = classify_fit(tr, val, th, ratio, tol)
        under = val <= (1 + tol) * tr and tr > ratio * th
        over = val > ratio * tr and tr <= (1 + tol) * th
        ok = max(tr, val) <= (1 + tol) * th
        expected = "under_fit" if under else "over_fit" if over else "acceptable" if ok else "inconclusive"
        assert label == expected


class _CountingLinear(LinearSimulator):
    """Counts calls per first feature value while ``active`` is set."""

    def __init__(self, n_features, log):
        super().__init__(n_features)
        self.__dict__["_log"] = log

    def run(self, x, mu, seed=None):
        if self._log["active"]:
            key = float(x["x"][1])
            self._log["counts"][key] = self._log["counts"].get(key, 0) + 1
        return super().run(x, mu, seed)


class TestCrossValidate:
    def test_realizable(self):
        ds = line_dataset(15, 0.0, 3)
        res = cross_validate(line_model(), LossSpec({"y": "RMSE"}), ds, 5, NM, seed=0)
        assert res.cv_error <= 1e-6

    def test_leave_one_out(self):
        ds = line_dataset(5, 0.1, 4)
        res = cross_validate(line_model(), LossSpec({"y": "RMSE"}), ds, 5, NM, seed=0)
        assert res.fold_sizes == (1, 1, 1, 1, 1) and len(res.fold_errors) == 5
        assert res.cv_error == pytest.approx(np.mean(res.fold_errors), rel=1e-15)

    def test_noise_floor(self):
        sigma = 0.1
        ds = line_dataset(60, sigma, 5)
        res = cross_validate(line_model(), LossSpec({"y": "RMSE"}), ds, 5, NM, seed=0)
        # per-point RMSE is |residual|, so the cv error estimates E|e| = sigma * sqrt(2/pi)
        assert 0.5 * sigma <= res.cv_error <= 2 * sigma

    def test_split_hygiene(self, monkeypatch):
        log = {"active": False, "counts": {}}
        model = Model(_CountingLinear(2, log), line_model().space)
        ds = line_dataset(12, 0.1, 6)
        seen = []
        real = validate_mod.calibrate

        def spy(model, spec, train, *args, **kw):
            log["active"], log["counts"] = True, {}
            try:
                out = real(model, spec, train, *args, **kw)
            finally:
                log["active"] = False
            seen.append((set(float(p.x_obs["x"][1]) for p in train), dict(log["counts"])))
            return out

        monkeypatch.setattr(validate_mod, "calibrate", spy)
        cross_validate(model, LossSpec({"y": "RMSE"}), ds, 4, OptimizerConfig("nelder_mead", budget=50), seed=1)
        assert len(seen) == 4
        everything = {float(p.x_obs["x"][1]) for p in ds}
        for train_keys, counts in seen:
            held_out = everything - train_keys
            assert held_out and all(counts.get(k, 0) == 0 for k in held_out)
            assert all(counts[k] > 0 for k in train_keys)

    def test_fold_failure_names_fold(self):
        space = ParameterSpace((("t_c", 1.0, 5.0),))
        model = Model(get_simulator("siegloch"), space, {"t_f": 3.0})
        ds = scalar_dataset([100.0] * 4, [1000.0] * 4, "q_c", "capacity")
        with pytest.raises(RuntimeError, match="fold 0"):
            cross_validate(model, LossSpec({"capacity": "RMSE"}), ds, 2, OptimizerConfig("grid", {"resolution": 3}))

    def test_parallel_identical(self):
        ds = line_dataset(20, 0.2, 7)
        a = cross_validate(line_model(), LossSpec({"y": "RMSE"}), ds, 4, NM, seed=3, n_jobs=1)
        b = cross_validate(line_model(), LossSpec({"y": "RMSE"}), ds, 4, NM, seed=3, n_jobs=4)
        assert a == b

    def test_fold_sd_shrinks(self):
        sds = []
        for n in (20, 80, 320):
            ds = line_dataset(n, 0.5, 8)
            sds.append(cross_validate(line_model(), LossSpec({"y": "RMSE"}), ds, 5,
                                      OptimizerConfig("nelder_mead", {"xtol": 1e-6}, budget=300), seed=0).fold_sd)
        assert sds[0] > sds[1] > sds[2], sds


class TestSelectRegularization:
    def test_ties_go_first(self):
        ds = line_dataset(10, 0.0, 9)
        spec = LossSpec({"y": "RMSE"}, regularizer="zero")
        lam, errors = select_regularization(line_model(), spec, ds, [0.0, 1.0], 2, NM)
        assert lam == 0.0 and errors[0] == errors[1]

    def test_empty(self):
        with pytest.raises(ValueError):
            select_regularization(line_model(), LossSpec({"y": "RMSE"}), line_dataset(4, 0, 0), [], 2, NM)


GIPPS_FROZEN = dict(a=1.7, b=3.4, b_hat=3.2, s=6.5, tau=0.66)


def gipps_data(theta_v=15.0):
    x = gipps_leader(duration=40.0, phase=0.0, amplitude=6.0)(np.random.default_rng(0), 0)
    m = Model(get_simulator("gipps"), ParameterSpace((("V", 10.0, 25.0),)), GIPPS_FROZEN)
    y = m.simulate(x, [theta_v])
    schema = Schema(tuple(Channel(k, None) for k in x), (Channel("x", None), Channel("v", None)))
    return m, Dataset(schema, (DataPoint(x, {"x": y["x"], "v": y["v"]}),))


class TestScientificValidate:
    def test_mechanism(self):
        m, ds = gipps_data()
        best, _ = validate_mod.calibrate(m, LossSpec({"x": "RMSE"}), ds, OptimizerConfig("grid", {"resolution": 7}))
        rep = scientific_validate(m, best.theta_hat, ds, {"v": "RMSE"}, ["x"])
        assert rep.scientific and math.isfinite(rep.errors["v"])
        assert rep.as_dict()["validation"] == "scientific"

    def test_overlap_rejected(self):
        m, ds = gipps_data()
        with pytest.raises(ValueError, match="overlap"):
            scientific_validate(m, [15.0], ds, {"x": "RMSE"}, ["x"])

    def test_perfect_fit(self):
        m, ds = gipps_data()
        rep = scientific_validate(m, [15.0], ds, {"v": "RMSE", "x": "MAE"}, [])
        assert dict(rep.errors) == {"v": 0.0, "x": 0.0}

    def test_flag_only_labels(self):
        m, ds = gipps_data()
        a = scientific_validate(m, [14.0], ds, {"v": "RMSE"}, ["x"], different_scenarios=True)
        b = scientific_validate(m, [14.0], ds, {"v": "RMSE"}, ["x"])
        assert a.errors == b.errors and a.as_dict()["different_scenarios"]


def welch_oracle(a, b):
    va, vb = statistics.variance(a) / len(a), statistics.variance(b) / len(b)
    t = (statistics.fmean(a) - statistics.fmean(b)) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    mpmath.mp.dps = 30
    p = mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, df / (df + t * t), regularized=True)
    return t, df, float(p)


class TestWelch:
    def test_identical(self):
        a = [1.0, 2.0, 4.0]
        r = welch_t_test(a, a)
        assert r.t == 0.0 and r.p_value == 1.0

    def test_large_effect(self):
        rng = np.random.default_rng(0)
        r = welch_t_test(rng.normal(0, 1, 10**4), rng.normal(1, 1, 10**4))
        assert r.p_value < 1e-10

    def test_antisymmetry(self):
        a, b = [1.0, 2.0, 3.5, 2.2], [2.0, 2.5, 4.0]
        r1, r2 = welch_t_test(a, b), welch_t_test(b, a)
        assert r1.t == -r2.t and r1.p_value == r2.p_value and r1.df == r2.df

    @given(a=st.lists(st.floats(-100, 100), min_size=2, max_size=30),
           b=st.lists(st.floats(-100, 100), min_size=2, max_size=30))
    def test_matches_incomplete_beta(self, a, b):
        if statistics.variance(a) < 1e-6 or statistics.variance(b) < 1e-6:
            return
        t, df, p = welch_oracle(a, b)
        r = welch_t_test(a, b)
        assert r.t == pytest.approx(t, rel=1e-9, abs=1e-12)
        assert r.df == pytest.approx(df, rel=1e-9)
        assert abs(r.p_value - p) <= 1e-8

    @pytest.mark.parametrize("a, b", [([1.0], [1.0, 2.0]), ([1.0, 1.0], [1.0, 2.0])])
    def test_degenerate(self, a, b):
        with pytest.raises(ValueError):
            welch_t_test(a, b)
