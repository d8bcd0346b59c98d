"""
Pytest tests for the longitudinal marker / time-to-event joint model.

Covers:
  - marker_trajectory / link_value
  - Model2Likelihood  (brute-force integration, standard and pseudo-adaptive nodes)
  - factorization without association (eta = 0)
  - Model2Layout  (pack / unpack)
  - conditional_survival
  - fit_model2 / marker_summary  (short fit)
"""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import multivariate_normal, norm

from surroval.config import IntegrationSettings, Model2Config, OptimizerLimits
from surroval.errors import MediationLinkError
from surroval.integrate import MCSampler, gh_rule
from surroval.model_long import (
    Model2Layout,
    conditional_survival,
    fit_model2,
    link_value,
    marker_summary,
    marker_trajectory,
    penalized_loglik2,
)
from surroval.simulate import Scenario, reference_model2_params, simulate_model2


def _params(r: int = 2, eta: float = 0.3):
    params = reference_model2_params(with_centers=False)
    # shape 2: the cumulative baseline is a polynomial, integrated exactly
    params.coef_t = np.array([2.0, 5.0])
    params.eta = np.array([eta])
    params.sigma_eps2 = 1.0
    if r == 1:
        params.D = np.array([[0.5]])
    return params


@pytest.fixture()
def no_center_dataset():
    params = _params()
    sc = Scenario(k_trials=1, n_per_trial=8, params=params, admin_censoring=4.0, seed=21, schedule_step=1.0, with_centers=False)
    return simulate_model2(sc)


def brute_force_loglik(params, ds) -> float:
    """Random intercept only, current-level link, integrals by adaptive quadrature."""
    sd = np.sqrt(params.D[0, 0])
    sigma = np.sqrt(params.sigma_eps2)
    base = params.baseline()
    eta = params.eta[0]
    total = 0.0
    for row in ds.survival.itertuples(index=False):
        meas = ds.measurements[ds.measurements["id"] == row.id]
        t_obs = meas["timevar"].to_numpy()
        y = meas["value"].to_numpy()
        z = row.trt

        def fixed(s, z=z):
            return params.b0 + params.b1 * s + params.beta_zm * z + params.beta_zm_time * z * s

        # w enters the hazard as exp(eta * w), so the time integral factors out
        cum0, _ = quad(lambda s, fixed=fixed: base.hazard([s])[0] * np.exp(eta * fixed(s)), 0.0, row.time_t, epsrel=1e-12)
        lin = params.beta_zt * z

        def integrand(w, t_obs=t_obs, y=y, fixed=fixed, cum0=cum0, lin=lin, row=row):
            ll = norm.logpdf(y, loc=fixed(t_obs) + w, scale=sigma).sum()
            if row.status_t:
                ll += np.log(base.hazard([row.time_t])[0]) + eta * (fixed(row.time_t) + w) + lin
            ll -= cum0 * np.exp(eta * w + lin)
            return np.exp(ll) * norm.pdf(w, scale=sd)

        value, _ = quad(integrand, -10 * sd, 10 * sd, epsabs=0.0, epsrel=1e-11, limit=200)
        total += np.log(value)
    return total


# ---------------------------------------------------------------------------
# Marker trajectory
# ---------------------------------------------------------------------------


class TestTrajectory:
    """Error-free marker and link values."""

    def test_level_and_slope(self):
        params = reference_model2_params()
        params.beta_zm_time = 0.1
        level, slope = marker_trajectory(params, 2.0, z=1, omega=[0.2, -0.05], nu_m=0.1)
        assert level == pytest.approx(3.0 + 0.2 + (-0.2 - 0.05) * 2.0 + (-0.5 + 0.1) + 0.1 * 2.0)
        assert slope == pytest.approx(-0.2 - 0.05 + 0.1)

    def test_without_intercept(self):
        params = reference_model2_params()
        params.intercept = False
        level, _ = marker_trajectory(params, 0.0)
        assert level == pytest.approx(0.0)

    def test_links(self):
        params = reference_model2_params()
        assert link_value(params, "current_slope", 1.0)[0] == pytest.approx(-0.2)
        assert link_value(params, "current_level", 1.0)[0] == pytest.approx(2.8)
        np.testing.assert_allclose(link_value(params, "shared_random_effects", 1.0, omega=[0.3, 0.1]), [0.3, 0.1])

    def test_shared_link_rejects_mediation(self):
        with pytest.raises(MediationLinkError):
            link_value(reference_model2_params(), "shared_random_effects", 1.0, mediation=True)


# ---------------------------------------------------------------------------
# Marginal likelihood
# ---------------------------------------------------------------------------


class TestMarginalLikelihood:
    """Integration over subject random effects."""

    @pytest.mark.parametrize("method,n_nodes", [("standard", 40), ("pseudo_adaptive", 15)])
    def test_matches_brute_force(self, no_center_dataset, method, n_nodes):
        params = _params(r=1)
        value = penalized_loglik2(params, no_center_dataset, "current_level", gh_rule(n_nodes), None, method=method)
        assert value == pytest.approx(brute_force_loglik(params, no_center_dataset), rel=1e-5)

    @pytest.mark.parametrize("method,n_nodes,tol", [("pseudo_adaptive", 3, 1e-9), ("standard", 30, 1e-5)])
    def test_factorizes_without_association(self, no_center_dataset, method, n_nodes, tol):
        params = _params(r=2, eta=0.0)
        ds = no_center_dataset
        marker = 0.0
        for row in ds.survival.itertuples(index=False):
            meas = ds.measurements[ds.measurements["id"] == row.id]
            t = meas["timevar"].to_numpy()
            design = np.column_stack([np.ones_like(t), t])
            mean = params.b0 + params.b1 * t + params.beta_zm * row.trt
            cov = design @ params.D @ design.T + params.sigma_eps2 * np.eye(len(t))
            marker += multivariate_normal(mean, cov).logpdf(meas["value"].to_numpy())
        base = params.baseline()
        lin = params.beta_zt * ds.survival["trt"].to_numpy()
        time = ds.survival["time_t"].to_numpy()
        status = ds.survival["status_t"].to_numpy()
        survival = np.sum(status * (np.log(base.hazard(time)) + lin) - base.cumulative(time) * np.exp(lin))
        value = penalized_loglik2(params, ds, "current_level", gh_rule(n_nodes), None, method=method)
        assert value == pytest.approx(marker + survival, rel=tol)

    def test_centers_use_monte_carlo(self, small_longi_dataset):
        params = reference_model2_params()
        params.coef_t = np.array([2.0, 5.0])
        gh = gh_rule(5)
        a = penalized_loglik2(params, small_longi_dataset, "current_level", gh, MCSampler(40, seed=1))
        b = penalized_loglik2(params, small_longi_dataset, "current_level", gh, MCSampler(40, seed=1))
        c = penalized_loglik2(params, small_longi_dataset, "current_level", gh, MCSampler(40, seed=2))
        assert a == b
        assert np.isfinite(c)
        assert a != c

    @pytest.mark.parametrize("link", ["current_slope", "shared_random_effects"])
    def test_other_links_finite(self, small_longi_dataset, link):
        params = reference_model2_params(link=link)
        value = penalized_loglik2(params, small_longi_dataset, link, gh_rule(5), MCSampler(20, seed=0))
        assert np.isfinite(value)


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------


class TestLayout:
    """Working-scale vector with and without centers."""

    def test_pack_unpack_with_centers(self):
        params = reference_model2_params()
        layout = Model2Layout(params, [], [], has_centers=True)
        back = layout.unpack(layout.pack(params))
        np.testing.assert_allclose(back.coef_t, params.coef_t)
        np.testing.assert_allclose(back.D, params.D, atol=1e-12)
        np.testing.assert_allclose(back.sigma_nu, params.sigma_nu)
        assert back.sigma_eps2 == pytest.approx(params.sigma_eps2)
        assert len(layout.natural_names) == layout.size == len(layout.natural(layout.pack(params)))
        assert "eta" in layout.natural_names

    def test_shared_link_has_one_eta_per_effect(self):
        params = reference_model2_params(link="shared_random_effects", with_centers=False)
        layout = Model2Layout(params, [], [], has_centers=False)
        assert layout.natural_names[-2:] == ["eta[0]", "eta[1]"]
        assert "sigma_nu_mm" not in layout.natural_names
        assert layout.unpack(layout.pack(params)).sigma_nu is None


# ---------------------------------------------------------------------------
# Conditional survival
# ---------------------------------------------------------------------------


class TestConditionalSurvival:
    """Final-endpoint survival given random effects."""

    def test_nonincreasing(self):
        params = reference_model2_params()
        omega = np.array([[0.0, 0.0], [0.5, -0.1], [-0.4, 0.2]])
        surv = conditional_survival(params, np.linspace(0.1, 8.0, 25), z=1, z_marker=0, omega=omega)
        assert surv.shape == (3, 25)
        assert np.all(np.diff(surv, axis=1) <= 1e-14)
        assert np.all((surv > 0) & (surv <= 1))

    def test_closed_form_without_association(self):
        params = _params(eta=0.0)
        times = np.array([0.5, 1.0, 3.0])
        surv = conditional_survival(params, times, z=1, z_marker=1, omega=np.zeros((1, 2)), nu_t=0.2)
        expected = np.exp(-((times / 5.0) ** 2) * np.exp(params.beta_zt + 0.2))
        np.testing.assert_allclose(surv[0], expected, rtol=1e-10)

    def test_marker_arm_changes_survival(self):
        params = _params(eta=0.3)
        times = np.array([2.0])
        treated_marker = conditional_survival(params, times, z=0, z_marker=1, omega=np.zeros((1, 2)))
        control_marker = conditional_survival(params, times, z=0, z_marker=0, omega=np.zeros((1, 2)))
        # beta_zm < 0 and eta > 0: a lower marker lowers the hazard
        assert treated_marker[0, 0] > control_marker[0, 0]

    def test_shared_link_rejected(self):
        params = reference_model2_params(link="shared_random_effects")
        with pytest.raises(MediationLinkError):
            conditional_survival(params, [1.0], z=1, z_marker=1, omega=np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


class TestFit:
    """Short fit on simulated centers."""

    def test_weibull_fit(self, small_longi_dataset):
        cfg = Model2Config(hazard="Weibull", random=("1",), method_gh="pseudo_adaptive")
        integration = IntegrationSettings(nb_mc=20, n_nodes_adaptive=5, seed=3)
        fit = fit_model2(small_longi_dataset, cfg, integration, OptimizerLimits(maxit=1))
        assert fit.natural_names[:2] == ["weibull_shape", "weibull_scale"]
        assert "sigma_nu_tt" in fit.natural_names
        assert fit.params.n_random == 1
        assert np.isfinite(fit.loglik_pen)
        assert marker_summary(small_longi_dataset, fit).empty
