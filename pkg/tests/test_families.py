import math

import numpy as np
import pytest

from dyncount import (
    ConfigError,
    DataError,
    NumericWarning,
    families,
    grad_hess,
    loglik,
    mean,
    pmf,
)
from oracles import finite_diff_grad, finite_diff_hess


class TestLoglikValues:
    def test_poisson_zero_at_unit_rate(self):
        assert loglik("poisson", 0, 0.0) == pytest.approx(-1.0, abs=1e-12)

    def test_poisson_two_counts(self):
        assert loglik("poisson", 2, 0.0) == pytest.approx(-1.0 - math.log(2), abs=1e-12)

    def test_zip_zero_mixture(self):
        # p(0) = 1/2 + exp(-1)/2
        expected = math.log(0.5 + 0.5 * math.exp(-1.0))
        assert loglik("zip", 0, (0.0, 0.0)) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(-0.379885, abs=1e-6)

    def test_nb_geometric_zero(self):
        assert loglik("nb", 0, 0.0, nb_alpha=1.0) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_rejects_negative_count(self):
        with pytest.raises(DataError):
            loglik("poisson", -1, 0.0)

    def test_rejects_fractional_count(self):
        with pytest.raises(DataError):
            loglik("poisson", 1.5, 0.0)

    def test_nb_requires_alpha(self):
        with pytest.raises(ConfigError):
            loglik("nb", 1, 0.0)


class TestGradHess:
    def test_poisson_stationary_point(self):
        ev = grad_hess("poisson", 1, np.array([1.0]), np.array([0.0]))
        assert np.allclose(ev.grad, [0.0])
        assert np.allclose(ev.hess, [[-1.0]])

    def test_poisson_two_dim(self):
        ev = grad_hess("poisson", 3, np.array([1.0, 2.0]), np.zeros(2))
        assert np.allclose(ev.grad, [2.0, 4.0])
        assert np.allclose(ev.hess, [[-1.0, -2.0], [-2.0, -4.0]])

    def test_hessian_symmetry(self):
        rng = np.random.default_rng(0)
        u = rng.normal(size=4)
        v = rng.normal(size=4)
        g = rng.normal(size=4) * 0.3
        ev = grad_hess("zip", 0, (u, v), g)
        assert np.allclose(ev.hess, ev.hess.T)

    def test_clamp_warns(self):
        with pytest.warns(NumericWarning):
            grad_hess("poisson", 1, np.array([1.0]), np.array([40.0]))


FD_CASES = []
_rng = np.random.default_rng(42)
for y_val in (0, 1, 3, 7):
    for _ in range(3):
        FD_CASES.append((y_val, _rng.normal(size=3), _rng.normal(size=3) * 0.5))


class TestFiniteDifferences:
    @pytest.mark.parametrize("y,z,gamma", FD_CASES)
    def test_poisson(self, y, z, gamma):
        self._check("poisson", y, z, gamma, None)

    @pytest.mark.parametrize("y,z,gamma", FD_CASES)
    def test_nb(self, y, z, gamma):
        self._check("nb", y, z, gamma, 1.7)

    @pytest.mark.parametrize("y,z,gamma", FD_CASES)
    def test_zip(self, y, z, gamma):
        rng = np.random.default_rng(y + 1)
        u = np.concatenate([z, np.zeros(2)])
        v = np.concatenate([np.zeros(3), rng.normal(size=2)])
        self._check("zip", y, (u, v), np.concatenate([gamma, rng.normal(size=2) * 0.5]), None)

    @staticmethod
    def _check(family, y, design, gamma, alpha):
        ev = grad_hess(family, y, design, gamma, alpha)
        fd_g = finite_diff_grad(family, y, design, gamma, alpha)
        fd_h = finite_diff_hess(family, y, design, gamma, alpha)
        assert np.allclose(ev.grad, fd_g, rtol=1e-4, atol=1e-7)
        assert np.allclose(ev.hess, fd_h, rtol=1e-3, atol=1e-5)


class TestMeanMap:
    def test_poisson_unit(self):
        assert mean("poisson", 0.0) == pytest.approx(1.0)

    def test_zip_half(self):
        assert mean("zip", (0.0, 0.0)) == pytest.approx(0.5)

    def test_nb_exp_link(self):
        assert mean("nb", math.log(2.0), nb_alpha=3.0) == pytest.approx(2.0)

    def test_zip_degenerate_inflation(self):
        assert mean("zip", (0.0, 30.0)) == pytest.approx(0.0, abs=1e-12)


class TestPmf:
    def test_poisson_zero(self):
        assert pmf("poisson", 0, 0.0) == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_zip_zero_mixture(self):
        assert pmf("zip", 0, (0.0, 0.0)) == pytest.approx(0.5 + 0.5 * math.exp(-1.0), abs=1e-12)
        assert pmf("zip", 0, (0.0, 0.0)) == pytest.approx(0.683940, abs=1e-6)

    def test_poisson_sums_to_one(self):
        total = sum(pmf("poisson", k, 1.0) for k in range(201))
        assert total == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize(
        "family,eta,alpha",
        [
            ("poisson", -0.5, None),
            ("poisson", 1.2, None),
            ("zip", (0.3, -0.7), None),
            ("zip", (-1.0, 1.0), None),
            ("nb", 0.4, 0.6),
            ("nb", -1.0, 5.0),
        ],
    )
    def test_pmf_normalizes(self, family, eta, alpha):
        total = sum(pmf(family, k, eta, alpha) for k in range(400))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_pmf_matches_loglik(self):
        for k in range(5):
            assert math.log(pmf("poisson", k, 0.3)) == pytest.approx(
                loglik("poisson", k, 0.3), abs=1e-12
            )
            assert math.log(pmf("nb", k, 0.3, nb_alpha=2.0)) == pytest.approx(
                loglik("nb", k, 0.3, nb_alpha=2.0), abs=1e-12
            )
            assert math.log(pmf("zip", k, (0.3, -0.4))) == pytest.approx(
                loglik("zip", k, (0.3, -0.4)), abs=1e-12
            )


class TestFamilyLimits:
    def test_nb_converges_to_poisson(self):
        for y in range(11):
            for eta in (-2.0, -0.5, 0.0, 1.0, 2.0):
                gap = abs(loglik("nb", y, eta, nb_alpha=1e6) - loglik("poisson", y, eta))
                assert gap < 1e-3

    def test_zip_converges_to_poisson(self):
        for y in range(6):
            for eta in (-1.0, 0.0, 0.8):
                gap = abs(loglik("zip", y, (eta, -30.0)) - loglik("poisson", y, eta))
                assert gap < 1e-9

    def test_zip_mean_formula(self):
        # E[Y] = (1 - phi) * lambda
        from scipy.special import expit

        eta_r, eta_z = 0.4, -0.8
        expected = (1 - expit(eta_z)) * math.exp(eta_r)
        assert mean("zip", (eta_r, eta_z)) == pytest.approx(expected, rel=1e-12)


class TestVectorizedConsistency:
    """The vectorized family methods must agree with the scalar wrappers."""

    def test_poisson_batch(self):
        fam = families.Poisson()
        y = np.array([0.0, 1.0, 4.0])
        eta = np.array([-0.3, 0.2, 0.9])
        ll = fam.loglik(y, eta)
        for i in range(3):
            assert ll[i] == pytest.approx(loglik("poisson", y[i], eta[i]), rel=1e-12)

    def test_zip_batch(self):
        fam = families.ZeroInflatedPoisson()
        y = np.array([0.0, 2.0])
        eta = np.array([[0.1, -0.5], [0.4, 0.3]])
        ll = fam.loglik(y, eta)
        for i in range(2):
            assert ll[i] == pytest.approx(loglik("zip", y[i], tuple(eta[i])), rel=1e-12)

    def test_gaussian_hook_derivatives(self):
        fam = families.Gaussian(variance=0.5)
        d1, d2 = fam.predictor_derivs(np.array([1.0]), np.array([0.25]))
        assert d1[0] == pytest.approx(0.75 / 0.5)
        assert d2[0] == pytest.approx(-2.0)
        with pytest.raises(NotImplementedError):
            fam.pmf(np.array([0.0]), np.array([0.0]))
