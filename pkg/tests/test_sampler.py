import numpy as np
import pandas as pd
import pytest

from copulaqr.data import PanelDataset
from copulaqr.sampler import (MCMCConfig, ModelConfig, PosteriorDraws,
                              PriorSpec, run_sampler)
from copulaqr.simulate import SimArm, gen_dataset


def small_data(seed=0, N=12, J=3, missing=0, censor=0):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(N):
        for j in range(J):
            x1 = rng.uniform(-1, 1)
            rows.append({"subject": i, "visit": j, "response": "y",
                         "value": rng.normal(1.0 + 0.5 * x1, 1.0),
                         "censor_threshold": np.nan, "x1": x1, "z_one": 1.0})
    df = pd.DataFrame(rows)
    if missing:
        df.loc[df.index[:missing], "value"] = np.nan
    if censor:
        idx = df.index[missing:missing + censor]
        df.loc[idx, "censor_threshold"] = df.loc[idx, "value"] - 0.1
    return PanelDataset.from_long(df, ["x1"], ["z_one"])


def bivariate_data(seed=0, N=15, J=3):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(N):
        for j in range(J):
            x1 = rng.uniform(-1, 1)
            for r in ("a", "b"):
                rows.append({"subject": i, "visit": j, "response": r,
                             "value": rng.normal(0.2 * x1, 1.0),
                             "censor_threshold": np.nan,
                             "x1": x1, "z_one": 1.0})
    return PanelDataset.from_long(pd.DataFrame(rows), ["x1"], ["z_one"])


MC = MCMCConfig(iterations=200, burn_in=100, thin=1, seed=42)


class TestDeterminism:
    @pytest.mark.parametrize("dep", ["independent", "copula"])
    def test_identical_seeds_identical_draws(self, dep):
        data = small_data()
        model = ModelConfig(family="gaussian", M=2, dependence=dep)
        a = run_sampler(data, model, PriorSpec(), MC)
        b = run_sampler(small_data(), model, PriorSpec(), MC)
        for key in a.draws:
            assert np.array_equal(a.draws[key], b.draws[key]), key

    def test_different_seeds_differ(self):
        data = small_data()
        model = ModelConfig(family="gaussian", M=2, dependence="copula")
        a = run_sampler(data, model, PriorSpec(), MC)
        b = run_sampler(data, model, PriorSpec(),
                        MCMCConfig(iterations=200, burn_in=100, seed=7))
        assert not np.array_equal(a.draws["theta"], b.draws["theta"])


class TestShapesAndMeta:
    def test_storage_shapes(self):
        data = small_data()
        post = run_sampler(data, ModelConfig(M=3, dependence="copula"),
                           PriorSpec(), MCMCConfig(iterations=300, burn_in=120,
                                                   thin=3, seed=1))
        n_keep = (300 - 120) // 3
        assert post.n_draws == n_keep
        assert post.draws["theta"].shape == (n_keep, 1, 3, 2)
        assert post.draws["alpha"].shape == (n_keep,)
        assert post.draws["subject_loglik"].shape == (n_keep, 12)

    def test_meta_contents(self):
        post = run_sampler(small_data(), ModelConfig(dependence="copula"),
                           PriorSpec(), MC)
        assert post.meta["seed"] == 42
        assert post.meta["cpo_level"] == "subject"
        assert "acceptance_rates" in post.meta
        assert post.meta["model"]["dependence"] == "copula"

    def test_burn_in_must_precede_iterations(self):
        with pytest.raises(ValueError):
            MCMCConfig(iterations=100, burn_in=100)

    def test_save_load_round_trip(self, tmp_path):
        post = run_sampler(small_data(), ModelConfig(dependence="copula"),
                           PriorSpec(), MC)
        post.save(tmp_path / "run")
        again = PosteriorDraws.load(tmp_path / "run")
        for key in post.draws:
            assert np.array_equal(post.draws[key], again.draws[key])
        assert again.meta["seed"] == post.meta["seed"]


class TestConstraintInvariant:
    def test_stored_theta_rows_satisfy_constraint(self):
        post = run_sampler(small_data(), ModelConfig(M=3, dependence="copula"),
                           PriorSpec(), MC)
        theta = post.draws["theta"]          # (n, 1, 3, 2)
        dom = theta[..., 1:, 0] - np.abs(theta[..., 1:, 1:]).sum(axis=-1)
        assert np.all(dom > 0)


class TestPriorRecovery:
    def test_all_missing_theta_matches_prior(self):
        # with no data the theta* chain must sample its prior
        data = small_data()
        data.y[:] = np.nan
        data.censor[:] = np.nan
        priors = PriorSpec(theta_prior_var=4.0)
        post = run_sampler(data, ModelConfig(M=2, dependence="independent"),
                           priors,
                           MCMCConfig(iterations=12000, burn_in=2000, seed=3))
        ts = post.draws["theta_star"][:, 0]     # (n, 2, 2)
        target = np.array([[1.0, 0.0], [1.0, 0.0]])
        from copulaqr.posterior import ess
        for m in range(2):
            for p in range(2):
                chain = ts[:, m, p]
                n_eff = max(ess(chain), 10.0)
                se = chain.std() / np.sqrt(n_eff)
                assert abs(chain.mean() - target[m, p]) < 4 * se + 0.05
                assert chain.std() == pytest.approx(2.0, rel=0.2)


class TestAugmentation:
    def test_missing_and_censored_run(self):
        data = small_data(missing=5, censor=6)
        post = run_sampler(data, ModelConfig(dependence="copula"),
                           PriorSpec(), MC)
        u = post.draws["u_censored"]
        assert u.shape == (100, 6)
        assert np.all((u > 0) & (u < 1))

    def test_censored_u_respects_bound(self):
        # every augmented U must exceed the threshold's quantile level
        data = small_data(censor=4)
        post = run_sampler(data, ModelConfig(dependence="copula"),
                           PriorSpec(),
                           MCMCConfig(iterations=400, burn_in=200, seed=5))
        u = post.draws["u_censored"]
        # thresholds sit just below the observed values: recovered U should
        # concentrate above ~0: weak sanity check that bounds bind
        assert np.all(u > 0)
        assert u.mean() > 0.4

    def test_independent_mode_with_censoring(self):
        data = small_data(censor=4)
        post = run_sampler(data, ModelConfig(dependence="independent"),
                           PriorSpec(), MC)
        assert np.isfinite(post.draws["subject_loglik"]).all()


class TestMultivariate:
    def test_h2_run_and_lambda_spd(self):
        data = bivariate_data()
        post = run_sampler(data, ModelConfig(dependence="copula"),
                           PriorSpec(), MC)
        Lam = post.draws["Lambda"]
        assert Lam.shape == (100, 2, 2)
        eig = np.linalg.eigvalsh(Lam)
        assert np.all(eig > 0)
        assert np.allclose(Lam, np.swapaxes(Lam, 1, 2))
        assert "mu" in post.draws and "iota2" in post.draws

    def test_h2_independent(self):
        post = run_sampler(bivariate_data(),
                           ModelConfig(dependence="independent"),
                           PriorSpec(), MC)
        assert post.draws["theta"].shape[1] == 2


class TestFixedRows:
    def test_fixed_row_not_updated(self):
        data = small_data()
        fixed = {(0, 2): np.array([1.5, 0.0])}
        post = run_sampler(data, ModelConfig(M=2, dependence="independent",
                                             fixed_rows=fixed),
                           PriorSpec(), MC)
        ts = post.draws["theta_star"][:, 0, 1]
        assert np.allclose(ts, [1.5, 0.0])
        # the free row still moves
        assert np.ptp(post.draws["theta_star"][:, 0, 0, 0]) > 0


class TestEstimateDf:
    def test_t_shape_sampled(self):
        data = small_data()
        post = run_sampler(data, ModelConfig(family="student_t", M=2,
                                             dependence="copula",
                                             estimate_df=True),
                           PriorSpec(), MC)
        df = post.draws["df"]
        assert np.all(df > 0) and np.ptp(df) > 0
