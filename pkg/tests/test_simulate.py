import numpy as np
import pandas as pd
import pytest
from scipy.stats import kstest, norm, t as student_t

from copulaqr.simulate import (SimArm, fit_replicate, gen_dataset,
                               gen_latents, model_settings, score, true_beta)


class TestArmValidation:
    def test_standard_levels_enforced(self):
        with pytest.raises(ValueError):
            SimArm(alpha=0.3)
        with pytest.raises(ValueError):
            SimArm(delta=1.0)
        with pytest.raises(ValueError):
            SimArm(datatype=3)
        with pytest.raises(ValueError):
            SimArm(N=20)

    def test_extended_escape_hatch(self):
        arm = SimArm(alpha=0.3, delta=1.0, N=10, J=4, extended=True)
        assert arm.N == 10


class TestGeneration:
    def test_deterministic_in_seed_and_replicate(self):
        a = gen_dataset(SimArm(seed=5), 3)
        b = gen_dataset(SimArm(seed=5), 3)
        c = gen_dataset(SimArm(seed=5), 4)
        assert np.array_equal(a.y, b.y)
        assert not np.array_equal(a.y, c.y)

    def test_response_map_worked_values(self):
        # datatype 1 at U=0.25, X1=X2=1: 3 Phi^-1(0.25) + 2 * 0.25
        from copulaqr.simulate import _response_from_uniform
        y = _response_from_uniform(1, np.array(0.25), 1.0, 1.0)
        assert y == pytest.approx(3 * norm.ppf(0.25) + 0.5, abs=1e-12)
        assert y == pytest.approx(-1.523469, abs=1e-6)
        # datatype 2 at U=0.9, X1=0.5, X2=-1: 2.5 * t5 quantile
        y2 = _response_from_uniform(2, np.array(0.9), 0.5, -1.0)
        assert y2 == pytest.approx(2.5 * 1.475884, abs=1e-5)
        # above the median the kink term vanishes
        y3 = _response_from_uniform(1, np.array(0.7), 1.0, 1.0)
        assert y3 == pytest.approx(3 * norm.ppf(0.7), abs=1e-12)

    def test_latent_variance_structure(self):
        # psi = 1 + 1 + delta (1 + x1^2) at delta=3, alpha anything
        arm = SimArm(alpha=0.5, delta=3.0, datatype=1, seed=2)
        lat = gen_latents(arm, 0)
        expect = 2.0 + 3.0 * (1.0 + lat["X1"] ** 2)
        assert np.allclose(lat["psi"], expect)

    def test_uniform_scores_are_uniform(self):
        arm = SimArm(alpha=0.9, delta=3.0, datatype=1, N=100, seed=3)
        U = np.concatenate([gen_latents(arm, r)["U"].ravel()
                            for r in range(30)])
        assert kstest(U, "uniform").pvalue > 1e-3

    def test_covariate_ranges(self):
        data = gen_dataset(SimArm(seed=1), 0)
        x1 = data.X[..., 1]
        x2 = data.X[..., 2]
        assert np.all(np.abs(x1) <= 1.0)
        assert set(np.unique(x2)) == {-1.0, 1.0}
        # x2 constant within subject
        assert np.all(np.ptp(x2, axis=1) == 0)


class TestTruth:
    def test_datatype1(self):
        assert true_beta(1, "intercept", 0.5) == 0.0
        assert true_beta(1, "x1", 0.3) == pytest.approx(0.2)
        assert true_beta(1, "x2", 0.7) == 0.0
        assert true_beta(1, "intercept", 0.9) == pytest.approx(
            3 * norm.ppf(0.9))

    def test_datatype2(self):
        q = student_t.ppf(0.9, 5)
        assert true_beta(2, "intercept", 0.9) == pytest.approx(3 * q)
        assert true_beta(2, "x1", 0.9) == pytest.approx(q)
        assert true_beta(2, "x2", 0.1) == pytest.approx(-q, abs=1e-9)

    def test_truth_is_quantile_derivative(self):
        # numerical check: dY/dX1 of the datatype-2 map at fixed U
        eps = 1e-6
        from copulaqr.simulate import _response_from_uniform as f
        for tau in (0.1, 0.5, 0.9):
            d = (f(2, np.array(tau), eps, 0.0) - f(2, np.array(tau), -eps, 0.0)) / (2 * eps)
            assert d == pytest.approx(true_beta(2, "x1", tau), abs=1e-6)


class TestScoring:
    def test_model_settings_menu(self):
        assert model_settings("independent", 1)["family"] == "gaussian"
        assert model_settings("copula", 1)["M"] == 5
        assert model_settings("copula", 2) == {"family": "student_t", "M": 2,
                                               "dependence": "copula"}
        with pytest.raises(ValueError):
            model_settings("semiparametric", 1)

    def test_score_coverage_and_mse(self):
        rows = []
        for rep in range(4):
            for tau in (0.3, 0.7):
                # truth 1.0; interval covers in 3 of 4 replicates
                covered = rep < 3
                rows.append({"delta": 0.0, "datatype": 2, "alpha": 0.5,
                             "model": "copula", "parameter": "x1",
                             "replicate": rep, "tau": tau,
                             "mean": 1.2, "truth": 1.0,
                             "lower": 0.5 if covered else 1.5,
                             "upper": 1.5 if covered else 2.0})
        agg = score(pd.DataFrame(rows))
        assert len(agg) == 1
        assert agg.coverage.iloc[0] == pytest.approx(0.75)
        assert agg.mse.iloc[0] == pytest.approx(0.04)
        assert agg.n.iloc[0] == 4

    def test_run_study_deterministic_across_workers(self, tmp_path):
        from copulaqr.simulate import run_study
        arm = SimArm(alpha=0.3, delta=0.5, datatype=2, N=8, J=3,
                     replications=2, seed=13, extended=True)
        mcmc = {"iterations": 200, "burn_in": 100}
        agg1, det1, f1 = run_study([arm], models=("independent",), mcmc=mcmc)
        agg2, det2, f2 = run_study([arm], models=("independent",), mcmc=mcmc,
                                   workers=2)
        assert f1 == f2 == []
        pd.testing.assert_frame_equal(det1, det2)
        pd.testing.assert_frame_equal(agg1, agg2)

    def test_fit_replicate_smoke(self):
        arm = SimArm(alpha=0.5, delta=0.0, datatype=2, seed=9)
        summ, est = fit_replicate(arm, 0, "independent",
                                  {"iterations": 300, "burn_in": 150})
        assert {"replicate", "model", "truth", "parameter"} <= set(summ.columns)
        assert set(summ.parameter) == {"intercept", "x1", "x2"}
        # rough recovery at the median
        med = summ[(summ.parameter == "x1") & (summ.tau == 0.5)]
        assert abs(med["mean"].iloc[0] - true_beta(2, "x1", 0.5)) < 1.0
