"""
Joint frailty model for a time-to-event surrogate S and final endpoint T
under semi-competing risks.

    lambda_S(t) = lambda0_S(t) exp(w + u + z (nu_S + beta_zs) + beta_s' x)
    lambda_T(t) = lambda0_T(t) exp(zeta w + alpha u + z (nu_T + beta_zt) + beta_t' x
                                   + gamma_fn(S) 1{S <= t})

w ~ N(0, theta2) per subject, u ~ N(0, gamma2) per trial and
(nu_S, nu_T) ~ N(0, sigma_nu) per trial. Subjects are integrated over w by
Gauss-Hermite, trials over (u, nu_S, nu_T) by Monte-Carlo; the product of
subject integrals within a trial is formed in log space and max-shifted
before exponentiation.

Note on names: gamma2 is the variance of u; gamma_fn is the mediation
function of the surrogate time.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from scipy.stats import norm

from .config import IntegrationSettings, Model1Config, ModelDefaults, OptimizerLimits
from .data import SubjectRecord, SurrogacyDataset
from .errors import DegenerateData, NonFiniteContribution, NumericalError, NumericalUnderflow
from .integrate import MCSampler, QuadratureRule, gh_rule, safe_cholesky
from .optimize import FitResult, fd_derivatives, lcv, maximize
from .splines import (
    PenaltySpec,
    SplineBasis,
    SplineHazard,
    curvature_penalty,
    design_matrix,
    fit_marginal_hazard,
    make_basis,
    make_mediation_basis,
    select_kappa,
)
from .utils.parallel import map_ordered, ordered_sum

logger = logging.getLogger(__name__)

# upper bound on (subjects x MC draws x GH nodes) held in memory at once
CHUNK_ELEMENTS = 2_000_000


@dataclass
class Model1Params:
    basis_s: SplineBasis
    basis_t: SplineBasis
    coef_s: np.ndarray
    coef_t: np.ndarray
    theta2: float = 1.0
    gamma2: float = 0.0
    sigma_nu: np.ndarray = field(default_factory=lambda: np.array([[0.5, 0.48], [0.48, 0.5]]))
    zeta: float = 1.0
    alpha: float = 1.0
    beta_zs: float = 0.0
    beta_zt: float = 0.0
    beta_s_cov: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_t_cov: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_fn_coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    basis_g: SplineBasis | None = None

    def __post_init__(self):
        self.coef_s = np.asarray(self.coef_s, dtype=float)
        self.coef_t = np.asarray(self.coef_t, dtype=float)
        self.sigma_nu = np.asarray(self.sigma_nu, dtype=float)
        self.beta_s_cov = np.asarray(self.beta_s_cov, dtype=float)
        self.beta_t_cov = np.asarray(self.beta_t_cov, dtype=float)
        self.gamma_fn_coef = np.asarray(self.gamma_fn_coef, dtype=float)

    @property
    def mediation(self) -> bool:
        return self.basis_g is not None and self.gamma_fn_coef.size > 0

    def hazard_s(self, extrapolate: bool = False) -> SplineHazard:
        return SplineHazard(self.basis_s, self.coef_s, extrapolate)

    def hazard_t(self, extrapolate: bool = False) -> SplineHazard:
        return SplineHazard(self.basis_t, self.coef_t, extrapolate)

    def gamma_fn(self, s) -> np.ndarray:
        """Mediation function gamma(s); zero when mediation is off."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if not self.mediation:
            return np.zeros_like(s)
        return design_matrix(self.basis_g, s, extrapolate=True) @ self.gamma_fn_coef


# -------------------------
# Pointwise model quantities
# -------------------------


def hazards(params: Model1Params, t: float, s_event=None, z: int = 0, x=None, re=(0.0, 0.0, 0.0, 0.0)):
    """
    Conditional hazards (lambda_S, lambda_T) at time t.

    `s_event` is (surrogate time, occurred flag); the gamma_fn term switches
    on once the surrogate has occurred at or before t. `re` is (w, u, nu_S, nu_T).
    """
    omega, u, nu_s, nu_t = re
    x = np.zeros(params.beta_s_cov.size) if x is None else np.asarray(x, dtype=float)
    base_s = params.hazard_s().hazard([t])[0]
    base_t = params.hazard_t().hazard([t])[0]
    eta_s = omega + u + z * (nu_s + params.beta_zs) + (x @ params.beta_s_cov if x.size else 0.0)
    eta_t = params.zeta * omega + params.alpha * u + z * (nu_t + params.beta_zt)
    eta_t += x @ params.beta_t_cov if x.size else 0.0
    if s_event is not None and params.mediation:
        s, occurred = s_event
        if occurred and s <= t:
            eta_t += params.gamma_fn([s])[0]
    return base_s * np.exp(eta_s), base_t * np.exp(eta_t)


def subject_loglik(params: Model1Params, subj: SubjectRecord, re=(0.0, 0.0, 0.0, 0.0)) -> float:
    """
    Log-likelihood of one subject given its random effects (w, u, nu_S, nu_T).

    d log lambda_S(s*) - Lambda_S(s*) + delta log lambda_T(t*) - Lambda_T(t*),
    where Lambda_T switches to the gamma_fn-shifted hazard after an observed
    surrogate event when mediation is on.
    """
    omega, u, nu_s, nu_t = re
    x = np.array([v for _, v in subj.covariates], dtype=float)
    lin_s = omega + u + subj.trt * (nu_s + params.beta_zs) + (x @ params.beta_s_cov if x.size else 0.0)
    lin_t = params.zeta * omega + params.alpha * u + subj.trt * (nu_t + params.beta_zt)
    lin_t += x @ params.beta_t_cov if x.size else 0.0

    hs, ht = params.hazard_s(), params.hazard_t()
    cum_s = hs.cumulative([subj.time_s])[0]
    cum_t = ht.cumulative([subj.time_t])[0]
    shift = 0.0
    if params.mediation and subj.status_s == 1:
        shift = params.gamma_fn([subj.time_s])[0]
        before = ht.cumulative([subj.time_s])[0]
        cum_t = before + np.exp(shift) * (cum_t - before)

    value = -cum_s * np.exp(lin_s) - cum_t * np.exp(lin_t)
    with np.errstate(divide="ignore"):
        if subj.status_s:
            value += np.log(hs.hazard([subj.time_s])[0]) + lin_s
        if subj.status_t:
            value += np.log(ht.hazard([subj.time_t])[0]) + lin_t + shift
    if not np.isfinite(value):
        raise NonFiniteContribution(subj.patient_id, value)
    return float(value)


# -------------------------
# Working-scale parameter vector
# -------------------------


class Model1Layout:
    """
    Maps Model1Params to the unconstrained vector the optimizer sees:
    square-root spline coefficients, log variances, a log-diagonal Cholesky
    factor of sigma_nu, then the free power parameters and fixed effects.
    """

    def __init__(self, cfg: Model1Config, template: Model1Params):
        self.cfg = cfg
        self.template = template
        self.n_s = template.basis_s.n_basis
        self.n_t = template.basis_t.n_basis
        self.n_cov = template.beta_s_cov.size
        self.n_g = template.gamma_fn_coef.size if cfg.mediation else 0
        self.trial_frailty = cfg.include_trial_frailty
        self.estimate_zeta = cfg.estimate_zeta
        self.estimate_alpha = cfg.estimate_alpha and cfg.include_trial_frailty
        self.names = self._names()

    def _names(self) -> list[str]:
        names = [f"sqrt_coef_s[{k}]" for k in range(self.n_s)]
        names += [f"sqrt_coef_t[{k}]" for k in range(self.n_t)]
        names.append("log_theta2")
        if self.trial_frailty:
            names.append("log_gamma2")
        names += ["log_chol_ss", "chol_ts", "log_chol_tt"]
        if self.estimate_zeta:
            names.append("zeta")
        if self.estimate_alpha:
            names.append("alpha")
        names += ["beta_zs", "beta_zt"]
        names += [f"beta_s[{k}]" for k in range(self.n_cov)]
        names += [f"beta_t[{k}]" for k in range(self.n_cov)]
        names += [f"gamma_fn[{k}]" for k in range(self.n_g)]
        return names

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def pack(self, p: Model1Params) -> np.ndarray:
        chol = safe_cholesky(p.sigma_nu, "sigma_nu")
        parts = [np.sqrt(p.coef_s), np.sqrt(p.coef_t), [np.log(p.theta2)]]
        if self.trial_frailty:
            parts.append([np.log(p.gamma2)])
        parts.append([np.log(chol[0, 0]), chol[1, 0], np.log(chol[1, 1])])
        if self.estimate_zeta:
            parts.append([p.zeta])
        if self.estimate_alpha:
            parts.append([p.alpha])
        parts += [[p.beta_zs, p.beta_zt], p.beta_s_cov, p.beta_t_cov]
        if self.n_g:
            parts.append(p.gamma_fn_coef)
        return np.concatenate([np.asarray(a, dtype=float).ravel() for a in parts])

    def unpack(self, x) -> Model1Params:
        x = np.asarray(x, dtype=float)
        pos = 0

        def take(n):
            nonlocal pos
            out = x[pos : pos + n]
            pos += n
            return out

        coef_s = take(self.n_s) ** 2
        coef_t = take(self.n_t) ** 2
        theta2 = float(np.exp(take(1)[0]))
        gamma2 = float(np.exp(take(1)[0])) if self.trial_frailty else 0.0
        a, b, c = take(3)
        chol = np.array([[np.exp(a), 0.0], [b, np.exp(c)]])
        zeta = float(take(1)[0]) if self.estimate_zeta else 1.0
        alpha = float(take(1)[0]) if self.estimate_alpha else 1.0
        beta_zs, beta_zt = take(2)
        beta_s = take(self.n_cov)
        beta_t = take(self.n_cov)
        gamma_fn = take(self.n_g) if self.n_g else np.zeros(0)
        return replace(
            self.template,
            coef_s=coef_s,
            coef_t=coef_t,
            theta2=theta2,
            gamma2=gamma2,
            sigma_nu=chol @ chol.T,
            zeta=zeta,
            alpha=alpha,
            beta_zs=float(beta_zs),
            beta_zt=float(beta_zt),
            beta_s_cov=beta_s.copy(),
            beta_t_cov=beta_t.copy(),
            gamma_fn_coef=gamma_fn.copy(),
        )

    @property
    def natural_names(self) -> list[str]:
        names = [f"coef_s[{k}]" for k in range(self.n_s)] + [f"coef_t[{k}]" for k in range(self.n_t)]
        names.append("theta2")
        if self.trial_frailty:
            names.append("gamma2")
        names += ["sigma_ss", "sigma_tt", "sigma_st"]
        if self.estimate_zeta:
            names.append("zeta")
        if self.estimate_alpha:
            names.append("alpha")
        names += ["beta_zs", "beta_zt"]
        names += [f"beta_s[{k}]" for k in range(self.n_cov)]
        names += [f"beta_t[{k}]" for k in range(self.n_cov)]
        names += [f"gamma_fn[{k}]" for k in range(self.n_g)]
        return names

    def natural(self, x) -> np.ndarray:
        p = self.unpack(x)
        parts = [p.coef_s, p.coef_t, [p.theta2]]
        if self.trial_frailty:
            parts.append([p.gamma2])
        parts.append([p.sigma_nu[0, 0], p.sigma_nu[1, 1], p.sigma_nu[0, 1]])
        if self.estimate_zeta:
            parts.append([p.zeta])
        if self.estimate_alpha:
            parts.append([p.alpha])
        parts += [[p.beta_zs, p.beta_zt], p.beta_s_cov, p.beta_t_cov, p.gamma_fn_coef]
        return np.concatenate([np.asarray(a, dtype=float).ravel() for a in parts])


# -------------------------
# Marginal likelihood
# -------------------------


class Model1Likelihood:
    """
    Penalized marginal log-likelihood of a SurrogacyDataset.

    Spline design matrices at the observed times are computed once, so
    repeated evaluation during optimization only redoes the integration.
    """

    def __init__(
        self,
        ds: SurrogacyDataset,
        template: Model1Params,
        gh: QuadratureRule,
        mc: MCSampler,
        penalty: PenaltySpec | None = None,
        use_covariates: bool = False,
        threads: int | None = None,
    ):
        self.ds = ds
        self.gh = gh
        self.mc = mc
        self.penalty = penalty or PenaltySpec()
        self.threads = threads
        self.trials = ds.trial_indices()
        self.trial_ids = list(range(1, len(self.trials) + 1))

        s = ds.column("time_s").astype(float)
        t = ds.column("time_t").astype(float)
        self.d = ds.column("status_s").astype(bool)
        self.delta = ds.column("status_t").astype(bool)
        self.z = ds.column("trt").astype(float)
        self.x = ds.covariate_matrix() if use_covariates else np.zeros((ds.n_subjects, 0))
        self.patient_ids = ds.column("patient_id")

        bs, bt = template.basis_s, template.basis_t
        self.i_s = design_matrix(SplineBasis(bs.order, bs.knots, "I"), s)
        self.m_s = design_matrix(SplineBasis(bs.order, bs.knots, "M"), s)
        self.i_t = design_matrix(SplineBasis(bt.order, bt.knots, "I"), t)
        self.m_t = design_matrix(SplineBasis(bt.order, bt.knots, "M"), t)
        self.i_t_at_s = design_matrix(SplineBasis(bt.order, bt.knots, "I"), s)
        self.b_g = design_matrix(template.basis_g, s) if template.basis_g is not None else None
        self.p_s = curvature_penalty(bs) if self.penalty.kappa_s > 0 else None
        self.p_t = curvature_penalty(bt) if self.penalty.kappa_t > 0 else None

    def penalty_value(self, params: Model1Params) -> float:
        value = 0.0
        if self.p_s is not None:
            value += self.penalty.kappa_s * float(params.coef_s @ self.p_s @ params.coef_s)
        if self.p_t is not None:
            value += self.penalty.kappa_t * float(params.coef_t @ self.p_t @ params.coef_t)
        return value

    def _subject_terms(self, p: Model1Params) -> dict:
        """Per-subject quantities that do not depend on the random effects."""
        with np.errstate(divide="ignore"):
            cum_s = self.i_s @ p.coef_s
            cum_t = self.i_t @ p.coef_t
            shift = np.zeros_like(cum_s)
            if p.mediation and self.b_g is not None:
                shift = np.where(self.d, self.b_g @ p.gamma_fn_coef, 0.0)
                before = self.i_t_at_s @ p.coef_t
                cum_t = np.where(self.d, before + np.exp(shift) * (cum_t - before), cum_t)
            lin_s = self.z * p.beta_zs + (self.x @ p.beta_s_cov if self.x.shape[1] else 0.0)
            lin_t = self.z * p.beta_zt + (self.x @ p.beta_t_cov if self.x.shape[1] else 0.0)
            log_h_s = np.where(self.d, np.log(np.where(self.d, self.m_s @ p.coef_s, 1.0)), 0.0)
            log_h_t = np.where(self.delta, np.log(np.where(self.delta, self.m_t @ p.coef_t, 1.0)), 0.0)
            return {
                "log_cum_s": np.log(cum_s),
                "log_cum_t": np.log(cum_t),
                "event": log_h_s + self.d * lin_s + log_h_t + self.delta * (lin_t + shift),
                "lin_s": lin_s,
                "lin_t": lin_t,
            }

    def trial_loglik(self, p: Model1Params, k: int, terms: dict | None = None) -> float:
        """log of the MC average over trial effects of the product of subject integrals."""
        terms = terms or self._subject_terms(p)
        idx = self.trials[k - 1]
        draws = self.mc.standard_normal(3, stream_id=k)
        chol = safe_cholesky(p.sigma_nu, "sigma_nu")
        u = np.sqrt(p.gamma2) * draws[:, 0]
        nu = draws[:, 1:] @ chol.T

        omega = np.sqrt(p.theta2) * self.gh.nodes
        log_w = np.log(self.gh.weights)
        z = self.z[idx][:, None]
        d = self.d[idx][:, None, None]
        delta = self.delta[idx][:, None, None]

        # (subject, draw) parts of the linear predictors
        a_s = u[None, :] + z * nu[None, :, 0] + terms["lin_s"][idx][:, None]
        a_t = p.alpha * u[None, :] + z * nu[None, :, 1] + terms["lin_t"][idx][:, None]
        log_cs = terms["log_cum_s"][idx][:, None, None]
        log_ct = terms["log_cum_t"][idx][:, None, None]
        event = terms["event"][idx][:, None, None]

        n, m, q = len(idx), self.mc.n_points, self.gh.n_nodes
        chunk = max(1, CHUNK_ELEMENTS // max(1, n * q))
        per_draw = np.empty(m)
        for start in range(0, m, chunk):
            sl = slice(start, start + chunk)
            eta_s = a_s[:, sl, None] + omega[None, None, :]
            eta_t = a_t[:, sl, None] + p.zeta * omega[None, None, :]
            ll = event + d * eta_s + delta * eta_t - np.exp(log_cs + eta_s) - np.exp(log_ct + eta_t)
            subj = logsumexp(ll + log_w[None, None, :], axis=2)
            per_draw[sl] = subj.sum(axis=0)

        shift = per_draw.max()
        value = float(shift + np.log(np.mean(np.exp(per_draw - shift)))) if np.isfinite(shift) else shift
        logger.debug("Trial %d: log-likelihood %.6f (scaling shift %.3f)", k, value, shift)
        if not np.isfinite(value):
            self._raise_for(p, idx, k)
        return value

    def _raise_for(self, p, idx, k):
        for i in idx:
            subj = SubjectRecord(
                patient_id=int(self.patient_ids[i]),
                trial_id=k,
                trt=int(self.z[i]),
                time_s=float(self.ds.frame["time_s"].iloc[i]),
                status_s=int(self.d[i]),
                time_t=float(self.ds.frame["time_t"].iloc[i]),
                status_t=int(self.delta[i]),
                covariates=tuple(zip(map(str, range(self.x.shape[1])), self.x[i].tolist(), strict=True)),
            )
            subject_loglik(p, subj)
        raise NumericalUnderflow(k)

    def loglik(self, p: Model1Params) -> float:
        terms = self._subject_terms(p)
        contributions = map_ordered(lambda k: self.trial_loglik(p, k, terms), self.trial_ids, self.threads)
        return ordered_sum(contributions)

    def penalized(self, p: Model1Params) -> float:
        return self.loglik(p) - self.penalty_value(p)


def penalized_loglik(
    params: Model1Params,
    ds: SurrogacyDataset,
    cfg: Model1Config,
    gh: QuadratureRule,
    mc: MCSampler,
    use_covariates: bool = False,
) -> float:
    """Penalized marginal log-likelihood; the penalty uses cfg.kappa_s / cfg.kappa_t."""
    if not cfg.estimate_zeta and params.zeta != 1.0:
        raise ValueError("zeta is fixed by the configuration and must equal 1")
    if not cfg.estimate_alpha and cfg.include_trial_frailty and params.alpha != 1.0:
        raise ValueError("alpha is fixed by the configuration and must equal 1")
    penalty = PenaltySpec(cfg.kappa_s or 0.0, cfg.kappa_t or 0.0)
    return Model1Likelihood(ds, params, gh, mc, penalty, use_covariates).penalized(params)


# -------------------------
# Fitting
# -------------------------


def build_bases(ds: SurrogacyDataset, cfg: Model1Config):
    """Hazard bases on the final-endpoint times; gamma_fn basis on observed surrogate times."""
    times = ds.column("time_t")
    basis_s = make_basis("M", cfg.n_knots, cfg.placement, times)
    basis_t = make_basis("M", cfg.n_knots, cfg.placement, times)
    basis_g = None
    if cfg.mediation:
        surrogate = ds.column("time_s")[ds.column("status_s") == 1]
        if surrogate.size == 0:
            raise DegenerateData("mediation needs at least one observed surrogate event")
        basis_g = make_mediation_basis(cfg.g_nknots, surrogate, upper=basis_t.upper)
    return basis_s, basis_t, basis_g


def initial_params(ds, cfg: Model1Config, bases, coef_s, coef_t, use_covariates: bool = False) -> Model1Params:
    basis_s, basis_t, basis_g = bases
    n_cov = len(ds.covariates) if use_covariates else 0
    ss, tt, st = cfg.init_value("sigma_ss"), cfg.init_value("sigma_tt"), cfg.init_value("sigma_st")
    return Model1Params(
        basis_s=basis_s,
        basis_t=basis_t,
        basis_g=basis_g,
        coef_s=coef_s,
        coef_t=coef_t,
        theta2=cfg.init_value("theta"),
        gamma2=cfg.init_value("gamma") if cfg.include_trial_frailty else 0.0,
        sigma_nu=np.array([[ss, st], [st, tt]]),
        zeta=cfg.init_value("zeta") if cfg.estimate_zeta else 1.0,
        alpha=cfg.init_value("alpha") if cfg.estimate_alpha else 1.0,
        beta_zs=cfg.init_value("betas"),
        beta_zt=cfg.init_value("betat"),
        beta_s_cov=np.zeros(n_cov),
        beta_t_cov=np.zeros(n_cov),
        gamma_fn_coef=np.zeros(basis_g.n_basis) if basis_g is not None else np.zeros(0),
    )


def fit_model1(
    ds: SurrogacyDataset,
    cfg: Model1Config,
    integration: IntegrationSettings | None = None,
    limits: OptimizerLimits | None = None,
    use_covariates: bool = False,
) -> FitResult:
    """
    Fit the joint surrogate/final time-to-event model by penalized likelihood.

    Smoothing parameters come from the config, or from the marginal LCV grid
    when cfg.auto_kappa is set. Spline coefficients start from marginal
    penalized fits of each endpoint.
    """
    integration = integration or IntegrationSettings()
    limits = limits or OptimizerLimits()
    bases = build_bases(ds, cfg)
    s, t = ds.column("time_s"), ds.column("time_t")
    d, delta = ds.column("status_s"), ds.column("status_t")

    if cfg.auto_kappa:
        kappa_s, coef_s = select_kappa(bases[0], s, d, ModelDefaults.KAPPA_GRID)
        kappa_t, coef_t = select_kappa(bases[1], t, delta, ModelDefaults.KAPPA_GRID)
    else:
        kappa_s, kappa_t = float(cfg.kappa_s), float(cfg.kappa_t)
        coef_s, _ = fit_marginal_hazard(bases[0], s, d, kappa_s)
        coef_t, _ = fit_marginal_hazard(bases[1], t, delta, kappa_t)
    penalty = PenaltySpec(kappa_s, kappa_t)

    template = initial_params(ds, cfg, bases, coef_s, coef_t, use_covariates)
    layout = Model1Layout(cfg, template)
    gh = gh_rule(integration.nb_gh)
    mc = MCSampler(integration.nb_mc, integration.seed, integration.antithetic)
    lik = Model1Likelihood(ds, template, gh, mc, penalty, use_covariates, integration.threads)

    logger.info(
        "Fitting joint surrogate model: %d subjects, %d trials, %d parameters, kappa=(%g, %g)%s",
        ds.n_subjects,
        ds.n_trials,
        layout.size,
        kappa_s,
        kappa_t,
        ", mediation on" if cfg.mediation else "",
    )

    def objective(x):
        return lik.penalized(layout.unpack(x))

    fit = maximize(objective, layout.pack(template), limits=limits, names=layout.names)
    fit.params = layout.unpack(fit.x)
    fit.kappa_used = penalty
    fit.to_natural = layout.natural
    fit.unpack = layout.unpack
    fit.natural_names = layout.natural_names
    fit.n_obs = ds.n_subjects

    def penalty_of(x):
        return lik.penalty_value(layout.unpack(x))

    fit.loglik = fit.loglik_pen + penalty_of(fit.x)
    _, _, pen_hess = fd_derivatives(penalty_of, fit.x)
    try:
        fit.lcv = lcv(fit, n_obs=ds.n_subjects, hessian_unpenalized=fit.hessian - 0.5 * (pen_hess + pen_hess.T))
    except NumericalError as err:
        logger.warning("LCV unavailable: %s", err)
    logger.info(
        "Fit finished after %d iterations (converged=%s): penalized loglik %.3f, LCV %s",
        fit.n_iter,
        fit.converged,
        fit.loglik_pen,
        f"{fit.lcv:.4f}" if fit.lcv is not None else "n/a",
    )
    return fit


def gamma_report(fit: FitResult, times, level: float = 0.05):
    """gamma_fn estimates at `times` with pointwise Wald bands (a DataFrame)."""
    params: Model1Params = fit.params
    if not params.mediation:
        raise ValueError("the fit has no mediation function")
    times = np.asarray(times, dtype=float)
    design = design_matrix(params.basis_g, times, extrapolate=True)
    idx = [fit.names.index(f"gamma_fn[{k}]") for k in range(params.gamma_fn_coef.size)]
    values = design @ params.gamma_fn_coef
    if fit.vcov is None:
        se = np.full_like(values, np.nan)
    else:
        block = fit.vcov[np.ix_(idx, idx)]
        se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", design, block, design), 0.0, None))
    q = norm.ppf(1.0 - level / 2.0)
    return pd.DataFrame({"time": times, "gamma": values, "lower": values - q * se, "upper": values + q * se})
