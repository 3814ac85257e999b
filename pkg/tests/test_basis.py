import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm, t as student_t

from copulaqr.basis import (BasisSpec, base_cdf, base_density, base_quantile,
                            basis_deriv_matrix, basis_matrix, eval_basis,
                            eval_basis_deriv)

FAMILIES = ("gaussian", "student_t")


def spec_for(family, M, knots=None, df=5.0):
    return BasisSpec(family, M, knots, df)


class TestSpec:
    def test_default_knots_evenly_spaced(self):
        spec = spec_for("gaussian", 5)
        assert np.allclose(spec.knots, [0.25, 0.5, 0.75])

    def test_knot_grid_includes_endpoints(self):
        spec = spec_for("gaussian", 4, (0.3, 0.6))
        assert np.allclose(spec.knot_grid, [0.0, 0.3, 0.6, 1.0])

    def test_m2_has_no_interior_knots(self):
        assert len(spec_for("student_t", 2).knots) == 0

    @pytest.mark.parametrize("bad", [
        dict(family="cauchy", M=3),
        dict(family="gaussian", M=1),
        dict(family="gaussian", M=4, knots=(0.6, 0.3)),
        dict(family="gaussian", M=4, knots=(0.0, 0.5)),
        dict(family="gaussian", M=4, knots=(0.5,)),
        dict(family="student_t", M=2, df=0.0),
    ])
    def test_invalid_specs_rejected(self, bad):
        with pytest.raises(ValueError):
            BasisSpec(**bad)


class TestBaseFunctions:
    def test_gaussian_base_matches_normal(self):
        spec = spec_for("gaussian", 2)
        tau = np.array([0.1, 0.5, 0.975])
        assert np.allclose(base_quantile(spec, tau), norm.ppf(tau), atol=1e-12)
        # oracle: Phi^{-1}(0.975) = 1.959964 (Abramowitz & Stegun)
        assert base_quantile(spec, np.array([0.975]))[0] == pytest.approx(
            1.959964, abs=5e-7)

    def test_t_base_quantile_oracle(self):
        # t5 upper decile 1.475884 (standard t table)
        spec = spec_for("student_t", 2, df=5.0)
        assert base_quantile(spec, np.array([0.9]))[0] == pytest.approx(
            1.475884, abs=5e-7)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_cdf_inverts_quantile(self, family):
        spec = spec_for(family, 2)
        tau = np.linspace(0.001, 0.999, 301)
        assert np.allclose(base_cdf(spec, base_quantile(spec, tau)), tau,
                           atol=1e-12)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_density_integrates_to_cdf(self, family):
        spec = spec_for(family, 2)
        val, _ = integrate.quad(lambda z: base_density(spec, z), -np.inf, 1.3)
        assert val == pytest.approx(float(base_cdf(spec, 1.3)), abs=1e-9)

    def test_t_density_matches_scipy(self):
        spec = spec_for("student_t", 2, df=7.5)
        z = np.linspace(-6, 6, 41)
        assert np.allclose(base_density(spec, z), student_t.pdf(z, 7.5),
                           atol=1e-12)

    def test_levels_outside_unit_interval_rejected(self):
        spec = spec_for("gaussian", 2)
        for bad in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(ValueError):
                base_quantile(spec, np.array([bad]))


class TestBasisMatrix:
    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("M", [2, 3, 5])
    def test_telescoping_identity(self, family, M):
        # sum of the monotone pieces reconstructs q0 everywhere
        spec = spec_for(family, M)
        tau = np.linspace(0.005, 0.995, 397)
        B = basis_matrix(spec, tau)
        assert np.allclose(B[:, 0], 1.0)
        assert np.allclose(B[:, 1:].sum(axis=1), base_quantile(spec, tau),
                           atol=1e-10)

    def test_pieces_nondecreasing_and_capped(self):
        spec = spec_for("gaussian", 5, (0.25, 0.5, 0.75))
        tau = np.linspace(0.001, 0.999, 999)
        B = basis_matrix(spec, tau)
        for m in range(1, 5):
            col = B[:, m]
            assert np.all(np.diff(col) >= -1e-12)
        # piece 2 is capped above at q0(0.25), zero-cap pieces below their window
        q25 = float(base_quantile(spec, np.array([0.25]))[0])
        assert np.allclose(B[tau >= 0.25, 1], q25)
        assert np.allclose(B[tau <= 0.25, 2], 0.0)
        # last piece unbounded above, flat below its window
        assert np.allclose(B[tau <= 0.75, 4], 0.0)
        assert B[-1, 4] > 2.0

    def test_active_piece_localized(self):
        # only one non-constant piece changes on each knot interval
        spec = spec_for("student_t", 4, (0.4, 0.7))
        tau = np.linspace(0.41, 0.69, 50)
        B = basis_matrix(spec, tau)
        moving = [m for m in range(1, 4) if np.ptp(B[:, m]) > 1e-12]
        assert moving == [2]

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("M", [2, 3, 5])
    def test_derivative_matches_finite_differences(self, family, M):
        spec = spec_for(family, M)
        rng = np.random.default_rng(M)
        tau = rng.uniform(0.02, 0.98, 200)
        # stay off the knots where the derivative jumps
        for k in spec.knots:
            tau = tau[np.abs(tau - k) > 1e-3]
        eps = 1e-6
        D = basis_deriv_matrix(spec, tau)
        fd = (basis_matrix(spec, tau + eps) - basis_matrix(spec, tau - eps)) / (2 * eps)
        assert np.max(np.abs(D - fd)) < 1e-4

    def test_scalar_eval_consistency(self):
        spec = spec_for("gaussian", 3, (0.5,))
        for m in range(1, 4):
            assert eval_basis(spec, m, 0.37) == pytest.approx(
                basis_matrix(spec, np.array([0.37]))[0, m - 1])
            assert eval_basis_deriv(spec, m, 0.37) == pytest.approx(
                basis_deriv_matrix(spec, np.array([0.37]))[0, m - 1])
        with pytest.raises(ValueError):
            eval_basis(spec, 0, 0.5)
        with pytest.raises(ValueError):
            eval_basis(spec, 4, 0.5)


@given(tau=st.floats(0.01, 0.99),
       family=st.sampled_from(FAMILIES),
       M=st.integers(2, 6))
@settings(max_examples=60, deadline=None)
def test_basis_row_bounds_property(tau, family, M):
    spec = BasisSpec(family, M, None, 5.0)
    row = basis_matrix(spec, np.array([tau]))[0]
    assert row[0] == 1.0
    # every piece above the first two is nonnegative and below the last cap
    assert np.all(row[2:] >= -1e-12)
    assert np.isfinite(row).all()
