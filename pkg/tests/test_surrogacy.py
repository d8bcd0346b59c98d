"""
Pytest tests for surrogacy measures.

Covers:
  - r2_trial / strength_label
  - ste / prediction_bound
  - kendall_tau_no_mediation / kendall_tau_mediation  (slow: against simulated pairs)
  - counterfactual_survival / mediation_curves  (both models)
  - mediation_times
  - parametric_bootstrap  (thread determinism, rejections)
  - SurrogacyReport.to_dict
"""

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import kendalltau

from surroval.config import MediationSettings
from surroval.errors import (
    ConfigError,
    MediationLinkError,
    MediationPresent,
    NoThreshold,
    NotPositiveDefinite,
    TooManyRejections,
)
from surroval.integrate import MCSampler
from surroval.optimize import FitResult
from surroval.simulate import reference_model1_params, reference_model2_params, simulate_latent_pairs
from surroval.splines import make_mediation_basis
from surroval.surrogacy import (
    SurrogacyReport,
    counterfactual_survival,
    kendall_tau,
    kendall_tau_mediation,
    kendall_tau_no_mediation,
    mediation_curves,
    mediation_times,
    parametric_bootstrap,
    prediction_bound,
    r2_trial,
    ste,
    strength_label,
)

SURROGATE_TIMES = np.array([0.3, 0.7, 1.1, 1.6, 2.2, 3.0, 4.1])


def _mediated(coef):
    params = reference_model1_params()
    params.basis_g = make_mediation_basis(1, SURROGATE_TIMES, upper=10.0)
    params.gamma_fn_coef = np.asarray(coef, dtype=float)
    return params


def _fit(x, vcov):
    x = np.asarray(x, dtype=float)
    return FitResult(
        x=x,
        names=[f"x{k}" for k in range(len(x))],
        hessian=np.linalg.inv(vcov),
        loglik_pen=-1.0,
        n_iter=1,
        criteria=(0.0, 0.0, 0.0),
        converged=True,
        vcov=np.asarray(vcov, dtype=float),
    )


# ---------------------------------------------------------------------------
# Trial level
# ---------------------------------------------------------------------------


class TestR2Trial:
    """Squared correlation of the treatment-effect random effects."""

    def test_value(self):
        result = r2_trial([[0.551, 0.575], [0.575, 0.601]])
        assert result.r2 == pytest.approx(0.998, abs=5e-4)
        assert result.label == "High"
        assert result.se is None

    def test_reported_value_capped(self):
        result = r2_trial([[0.514, 0.899], [0.899, 1.572]])
        assert result.r2 > 1.0
        assert result.reported == 1.0

    def test_delta_method_interval(self):
        sigma = [[0.3, 0.24], [0.24, 0.3]]
        vcov = np.diag([0.01, 0.02, 0.02])
        result = r2_trial(sigma, vcov)
        assert result.r2 == pytest.approx(0.64)
        grad = np.array([2 * 0.24 / 0.09, -(0.24**2) / (0.09 * 0.3), -(0.24**2) / (0.09 * 0.3)])
        assert result.se == pytest.approx(np.sqrt(grad @ vcov @ grad))
        assert result.lower < result.r2 < result.upper

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(NotPositiveDefinite):
            r2_trial([[0.0, 0.1], [0.1, 0.5]])

    @pytest.mark.parametrize("r2,label", [(0.3, "Low"), (0.49, "Low"), (0.6, "Medium"), (0.72, "High"), (0.95, "High")])
    def test_strength_label(self, r2, label):
        assert strength_label(r2) == label


class TestSTE:
    """Surrogate threshold effect."""

    sigma = np.array([[0.3, 0.24], [0.24, 0.3]])

    @pytest.mark.parametrize("var_beta", [0.0, 0.02])
    def test_matches_root_of_prediction_bound(self, var_beta):
        value = ste(-0.4, self.sigma, var_beta)
        root = brentq(lambda nu: prediction_bound(nu, -0.4, self.sigma, var_beta), -50.0, 50.0, xtol=1e-14)
        assert value == pytest.approx(root, abs=1e-8)

    def test_lower_direction(self):
        value = ste(0.4, self.sigma, direction="lower")
        assert prediction_bound(value, 0.4, self.sigma, direction="lower") == pytest.approx(0.0, abs=1e-12)

    def test_no_threshold_without_covariance(self):
        with pytest.raises(NoThreshold):
            ste(-0.4, [[0.3, 0.0], [0.0, 0.3]])


# ---------------------------------------------------------------------------
# Kendall's tau
# ---------------------------------------------------------------------------


class TestKendallTau:
    """Individual-level association."""

    def test_independent_endpoints(self):
        params = reference_model1_params()
        params.zeta, params.gamma2 = 0.0, 0.0
        tau, _ = kendall_tau_no_mediation(params, MCSampler(2000, seed=0, antithetic=True))
        assert tau == pytest.approx(0.0, abs=1e-12)

    def test_increases_with_frailty_variance(self):
        mc = MCSampler(4000, seed=1)
        params = reference_model1_params()
        low = kendall_tau_no_mediation(params, mc)[0]
        params.theta2 = 8.0
        high = kendall_tau_no_mediation(params, mc)[0]
        assert 0.0 < low < high < 1.0

    def test_closed_form_refuses_mediation(self):
        with pytest.raises(MediationPresent):
            kendall_tau_no_mediation(_mediated([0.4, -0.2, 0.3, 0.1, -0.3]), MCSampler(100))

    def test_zero_mediation_function_agrees(self):
        mc = MCSampler(200, seed=2)
        params = _mediated(np.zeros(5))
        closed, _ = kendall_tau_no_mediation(params, mc)
        nested, _ = kendall_tau_mediation(params, mc)
        assert nested == pytest.approx(closed, abs=0.01)

    def test_dispatch(self):
        mc = MCSampler(150, seed=3)
        params = _mediated([0.8, 0.8, 0.8, 0.8, 0.8])
        assert kendall_tau(params, mc) == kendall_tau_mediation(params, mc)
        plain = reference_model1_params()
        assert kendall_tau(plain, mc) == kendall_tau_no_mediation(plain, mc)

    def test_mediation_stable_under_grid_refinement(self):
        mc = MCSampler(100, seed=4)
        params = _mediated(np.ones(5))
        coarse, _ = kendall_tau_mediation(params, mc)
        fine, _ = kendall_tau_mediation(params, mc, n_segments=32, n_per_segment=6)
        assert fine == pytest.approx(coarse, abs=0.005)

    @pytest.mark.slow
    def test_mediation_against_simulated_pairs(self):
        params = _mediated(np.ones(5))
        params.theta2 = 1.0
        np.testing.assert_allclose(params.gamma_fn([0.1, 1.0, 7.0]), 1.0, atol=1e-12)
        pairs = simulate_latent_pairs(params, 50000, seed=23)
        empirical = kendalltau(pairs["s"], pairs["t"]).statistic
        estimate, se = kendall_tau_mediation(params, MCSampler(16000, seed=2))
        assert se < 0.006
        assert abs(estimate - empirical) < 0.02


# ---------------------------------------------------------------------------
# Mediation
# ---------------------------------------------------------------------------


class TestMediationCurves:
    """Counterfactual survival and effect decomposition."""

    times = np.array([0.5, 1.0, 2.0, 4.0])

    def test_decomposition(self):
        curves = mediation_curves(_mediated([0.5, 0.3, -0.2, 0.4, 0.1]), self.times, MCSampler(300, seed=4))
        np.testing.assert_allclose(curves.tte, curves.nie + curves.nde, atol=1e-14)
        np.testing.assert_allclose(curves.nie, curves.s11 - curves.s10)
        assert np.all(np.abs(curves.nie) > 1e-6)
        assert curves.nie_se.shape == self.times.shape

    def test_no_indirect_effect_without_mediation_function(self):
        curves = mediation_curves(_mediated(np.zeros(5)), self.times, MCSampler(200, seed=5))
        np.testing.assert_allclose(curves.nie, 0.0, atol=1e-8)
        np.testing.assert_allclose(curves.pte, 0.0, atol=1e-6)

    def test_counterfactual_matches_curve(self):
        params = _mediated([0.5, 0.3, -0.2, 0.4, 0.1])
        mc = MCSampler(150, seed=6)
        curves = mediation_curves(params, self.times, mc)
        assert counterfactual_survival(params, 1, 0, 2.0, mc) == pytest.approx(curves.s10[2], rel=1e-12)

    def test_survival_curves_nonincreasing(self):
        curves = mediation_curves(_mediated([0.5, 0.3, -0.2, 0.4, 0.1]), self.times, MCSampler(200, seed=7))
        for name in ("s11", "s10", "s00"):
            assert np.all(np.diff(getattr(curves, name)) <= 1e-12)

    def test_longitudinal_no_marker_effect(self):
        params = reference_model2_params()
        params.beta_zm = params.beta_zm_time = 0.0
        curves = mediation_curves(params, self.times, MCSampler(200, seed=8))
        np.testing.assert_allclose(curves.nie, 0.0, atol=1e-12)

    def test_longitudinal_indirect_effect_sign(self):
        # treatment lowers the marker and a higher marker raises the hazard
        curves = mediation_curves(reference_model2_params(), self.times, MCSampler(200, seed=8))
        assert np.all(curves.nie > 0)

    def test_shared_link_rejected(self):
        params = reference_model2_params(link="shared_random_effects")
        with pytest.raises(MediationLinkError):
            mediation_curves(params, self.times, MCSampler(20))

    def test_times_must_increase(self):
        with pytest.raises(ValueError):
            mediation_curves(_mediated(np.zeros(5)), [2.0, 1.0], MCSampler(20))

    def test_near_zero_total_effect_flagged(self):
        params = _mediated(np.zeros(5))
        params.beta_zt = 0.0
        params.sigma_nu = np.array([[1e-8, 0.0], [0.0, 1e-8]])
        curves = mediation_curves(params, self.times, MCSampler(50, seed=9))
        assert curves.unstable.all()
        assert "tte_near_zero" in curves.to_frame().columns


class TestMediationTimes:
    """Evaluation grid for the mediation curves."""

    time_t = np.array([0.4, 1.0, 2.5, 6.0, 8.0])
    status_t = np.array([1, 1, 1, 1, 0])

    def test_even_grid_over_events(self):
        times = mediation_times(MediationSettings(pte_ntimes=5), self.time_t, self.status_t)
        np.testing.assert_allclose(times, np.linspace(0.4, 6.0, 5))

    def test_explicit_times(self):
        times = mediation_times(MediationSettings(pte_times="1:5:3"), self.time_t, self.status_t)
        np.testing.assert_allclose(times, [1.0, 3.0, 5.0])

    def test_time_after_last_event_within_follow_up(self):
        times = mediation_times(MediationSettings(pte_times=[7.0, 8.0]), self.time_t, self.status_t)
        np.testing.assert_allclose(times, [7.0, 8.0])

    def test_explicit_times_beyond_follow_up(self):
        with pytest.raises(ConfigError) as exc:
            mediation_times(MediationSettings(pte_times=[1.0, 8.5]), self.time_t, self.status_t)
        assert exc.value.field == "pte_times"
        assert "8.5" in str(exc.value)

    def test_all_censored(self):
        status = np.zeros_like(self.status_t)
        times = mediation_times(MediationSettings(pte_ntimes=3), self.time_t, status)
        np.testing.assert_allclose(times, [0.4, 4.2, 8.0])
        explicit = mediation_times(MediationSettings(pte_times=[7.5]), self.time_t, status)
        np.testing.assert_allclose(explicit, [7.5])


# ---------------------------------------------------------------------------
# Parametric bootstrap
# ---------------------------------------------------------------------------


class TestParametricBootstrap:
    """Redrawn parameter vectors."""

    fit = _fit([0.0, 1.0], [[1.0, 0.3], [0.3, 0.5]])

    def test_independent_of_thread_count(self):
        one = parametric_bootstrap(self.fit, lambda x: [x[0] + x[1]], 40, seed=3, threads=1)
        four = parametric_bootstrap(self.fit, lambda x: [x[0] + x[1]], 40, seed=3, threads=4)
        np.testing.assert_array_equal(one.values, four.values)

    def test_interval_covers_mean(self):
        boot = parametric_bootstrap(self.fit, lambda x: x, 400, seed=1)
        lower, upper = boot.interval()
        assert np.all(lower < self.fit.x) and np.all(self.fit.x < upper)
        assert boot.values.shape == (400, 2)

    def test_rejected_draws_are_redrawn(self):
        def statistic(x):
            if x[0] > 1.0:
                raise NotPositiveDefinite("draw")
            return [x[0]]

        boot = parametric_bootstrap(self.fit, statistic, 50, seed=2)
        assert boot.rejected > 0
        assert np.all(boot.values <= 1.0)

    def test_too_many_rejections(self):
        with pytest.raises(TooManyRejections) as exc:
            parametric_bootstrap(self.fit, lambda x: [np.nan], 4, seed=0)
        assert exc.value.requested == 4


class TestReport:
    """Serializable surrogacy summary."""

    def test_to_dict(self):
        report = SurrogacyReport(ktau=0.6, ktau_se=0.01, r2=r2_trial([[0.3, 0.24], [0.24, 0.3]]), ste=-0.3)
        out = report.to_dict()
        assert out["ktau"]["ci_boot"] is None
        assert out["r2_trial"]["strength"] == "Medium"
        assert out["ste"]["hr"] == pytest.approx(np.exp(-0.3))
        assert out["flags"] == []
