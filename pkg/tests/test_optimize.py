"""
Pytest tests for the Levenberg-Marquardt optimizer and Wald inference.

Covers:
  - maximize  (quadratic, Rosenbrock, maxit, bad start)
  - fd_gradient / fd_derivatives
  - invert_hessian
  - standard_errors / wald_table  (delta method through a transform)
  - lcv / global_wald_test
"""

import logging

import numpy as np
import pytest
from scipy.stats import chi2

from surroval.config import OptimizerLimits
from surroval.errors import NonFiniteObjective, SingularHessian
from surroval.optimize import (
    FitResult,
    fd_derivatives,
    fd_gradient,
    global_wald_test,
    invert_hessian,
    lcv,
    maximize,
    standard_errors,
    wald_table,
)

TIGHT = OptimizerLimits(limparam=1e-10, limlogl=1e-10, limderiv=1e-10, maxit=500)


def neg_rosenbrock(x):
    return -((1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2)


# ---------------------------------------------------------------------------
# maximize
# ---------------------------------------------------------------------------


class TestMaximize:
    """Convergence and failure paths."""

    def test_quadratic_one_step(self):
        target = np.array([1.5, -2.0, 0.25])
        fit = maximize(lambda x: -np.sum((x - target) ** 2), np.zeros(3))
        assert fit.converged
        np.testing.assert_allclose(fit.x, target, atol=1e-6)
        assert fit.n_iter <= 3

    def test_rosenbrock(self):
        fit = maximize(neg_rosenbrock, [-1.2, 1.0], limits=TIGHT)
        assert fit.converged
        np.testing.assert_allclose(fit.x, [1.0, 1.0], atol=1e-6)

    def test_trace_never_decreases(self):
        fit = maximize(neg_rosenbrock, [-1.2, 1.0], limits=TIGHT)
        assert np.all(np.diff(fit.trace) >= 0)

    def test_maxit_reported_not_raised(self, caplog):
        with caplog.at_level(logging.WARNING, logger="surroval.optimize"):
            fit = maximize(neg_rosenbrock, [-1.2, 1.0], maxit=2)
        assert not fit.converged
        assert "No convergence after 2 iterations" in caplog.text
        assert fit.n_iter == 2
        assert fit.loglik_pen >= neg_rosenbrock([-1.2, 1.0])

    def test_non_finite_start(self):
        with pytest.raises(NonFiniteObjective):
            maximize(lambda x: np.nan, np.zeros(2))

    def test_names_default(self):
        fit = maximize(lambda x: -np.sum(x**2), np.ones(2))
        assert fit.names == ["x0", "x1"]


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


class TestDerivatives:
    """Central differences with Richardson extrapolation."""

    @staticmethod
    def f(x):
        return np.sin(x[0]) * np.exp(0.5 * x[1]) + x[0] * x[1] ** 2

    def test_gradient(self):
        x = np.array([0.7, -0.4])
        expected = [
            np.cos(x[0]) * np.exp(0.5 * x[1]) + x[1] ** 2,
            0.5 * np.sin(x[0]) * np.exp(0.5 * x[1]) + 2 * x[0] * x[1],
        ]
        np.testing.assert_allclose(fd_gradient(self.f, x), expected, rtol=1e-8)

    def test_hessian(self):
        x = np.array([0.7, -0.4])
        e = np.exp(0.5 * x[1])
        expected = np.array(
            [
                [-np.sin(x[0]) * e, 0.5 * np.cos(x[0]) * e + 2 * x[1]],
                [0.5 * np.cos(x[0]) * e + 2 * x[1], 0.25 * np.sin(x[0]) * e + 2 * x[0]],
            ]
        )
        f0, _, hess = fd_derivatives(self.f, x)
        assert f0 == pytest.approx(self.f(x))
        np.testing.assert_allclose(hess, expected, atol=1e-4)


# ---------------------------------------------------------------------------
# Covariance and Wald inference
# ---------------------------------------------------------------------------


class TestWaldInference:
    """Standard errors on the working and natural scales."""

    @pytest.fixture()
    def sample(self, rng):
        return rng.normal(3.0, 2.0, 400)

    def test_mean_standard_error(self, sample):
        sigma = 2.0

        def loglik(x):
            return -np.sum((sample - x[0]) ** 2) / (2 * sigma**2)

        fit = maximize(loglik, [0.0], names=["mu"])
        assert fit.x[0] == pytest.approx(sample.mean(), abs=1e-6)
        assert standard_errors(fit)["mu"] == pytest.approx(sigma / np.sqrt(len(sample)), rel=1e-5)

    def test_delta_method_through_transform(self, sample):
        n = len(sample)

        def loglik(x):
            mu, log_sigma = x
            return -n * log_sigma - np.sum((sample - mu) ** 2) / (2 * np.exp(2 * log_sigma))

        fit = maximize(loglik, [0.0, 0.0], limits=TIGHT, names=["mu", "log_sigma"])
        fit.to_natural = lambda x: np.array([x[0], np.exp(x[1])])
        fit.natural_names = ["mu", "sigma"]
        sigma_hat = sample.std()
        table = wald_table(fit)
        assert table.loc["sigma", "estimate"] == pytest.approx(sigma_hat, rel=1e-6)
        assert table.loc["sigma", "se"] == pytest.approx(sigma_hat / np.sqrt(2 * n), rel=1e-4)
        assert table.loc["mu", "se"] == pytest.approx(sigma_hat / np.sqrt(n), rel=1e-4)
        assert table.loc["mu", "lower"] < table.loc["mu", "estimate"] < table.loc["mu", "upper"]

    def test_invert_rejects_indefinite(self):
        with pytest.raises(SingularHessian):
            invert_hessian(np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_invert_rejects_zero_diagonal(self):
        with pytest.raises(SingularHessian):
            invert_hessian(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_invert(self):
        h = np.array([[4.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(invert_hessian(h) @ h, np.eye(2), atol=1e-12)


class TestCriteria:
    """LCV and the global Wald test."""

    def _fit(self):
        return FitResult(
            x=np.array([1.0, 2.0, 0.5]),
            names=["a", "b", "c"],
            hessian=np.eye(3),
            loglik_pen=-12.0,
            n_iter=4,
            criteria=(0.0, 0.0, 0.0),
            converged=True,
            vcov=np.eye(3),
            loglik=-10.0,
        )

    def test_lcv_without_penalty_counts_parameters(self):
        fit = self._fit()
        assert lcv(fit, n_obs=20, hessian_unpenalized=np.eye(3)) == pytest.approx((3 + 10.0) / 20)

    def test_lcv_needs_observations(self):
        with pytest.raises(ValueError):
            lcv(self._fit(), hessian_unpenalized=np.eye(3))

    def test_global_wald(self):
        stat, df, p = global_wald_test(self._fit(), ["a", "b"])
        assert stat == pytest.approx(5.0)
        assert df == 2
        assert p == pytest.approx(chi2.sf(5.0, 2))
