"""
Joint model for a longitudinal biomarker surrogate and a time-to-event
final endpoint.

    observed marker   y_ij(t) = M_ij(t) + eps,   eps ~ N(0, sigma_eps2)
    latent marker     M_ij(t) = (b0 + w0) + (b1 + w1) t + beta_m' x(t)
                                + (beta_zm + nu_M) z + beta_zm_time z t
    final endpoint    lambda_ij(t) = lambda0(t) exp((beta_zt + nu_T) z + beta_t' x
                                                    + eta' h(M)(t))

w ~ N(0, D) per subject, (nu_M, nu_T) ~ N(0, sigma_nu) per center. h is the
current level, the current slope, or the random effects w themselves.
Subjects are integrated over w by (pseudo-adaptive) Gauss-Hermite, centers
over (nu_M, nu_T) by Monte-Carlo. Without center information the trial
effects are dropped.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy.special import logsumexp

from .config import IntegrationSettings, Model2Config, ModelDefaults, OptimizerLimits
from .data import LongitudinalDataset
from .errors import MediationLinkError, NonFiniteContribution, NumericalError, NumericalUnderflow
from .integrate import LOG_SQRT_2PI, MCSampler, QuadratureRule, adapt_product, gh_rule, gl_rule, product_rule, safe_cholesky
from .optimize import FitResult, fd_derivatives, global_wald_test, lcv, maximize
from .splines import (
    PenaltySpec,
    SplineBasis,
    SplineHazard,
    WeibullHazard,
    curvature_penalty,
    design_matrix,
    fit_marginal_hazard,
    make_basis,
    select_kappa,
)
from .utils.parallel import map_ordered, ordered_sum

logger = logging.getLogger(__name__)

LinkKind = Literal["current_level", "current_slope", "shared_random_effects"]

GL_NODES = 15
WEIBULL_SEGMENTS = 4
CHUNK_ELEMENTS = 2_000_000


@dataclass
class Model2Params:
    link: LinkKind
    hazard_kind: Literal["Splines", "Splines-per", "Weibull"]
    coef_t: np.ndarray
    basis_t: SplineBasis | None = None
    beta_fixed: np.ndarray = field(default_factory=lambda: np.zeros(2))
    beta_m_cov: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_zm: float = 0.0
    beta_zm_time: float = 0.0
    sigma_eps2: float = 1.0
    D: np.ndarray = field(default_factory=lambda: np.eye(2))
    sigma_nu: np.ndarray | None = None
    beta_zt: float = 0.0
    beta_t_cov: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(1))
    intercept: bool = True

    def __post_init__(self):
        self.coef_t = np.asarray(self.coef_t, dtype=float)
        self.beta_fixed = np.asarray(self.beta_fixed, dtype=float)
        self.beta_m_cov = np.asarray(self.beta_m_cov, dtype=float)
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        self.beta_t_cov = np.asarray(self.beta_t_cov, dtype=float)
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if self.sigma_nu is not None:
            self.sigma_nu = np.asarray(self.sigma_nu, dtype=float)

    @property
    def n_random(self) -> int:
        return self.D.shape[0]

    @property
    def b0(self) -> float:
        return float(self.beta_fixed[0]) if self.intercept else 0.0

    @property
    def b1(self) -> float:
        return float(self.beta_fixed[-1])

    def baseline(self, extrapolate: bool = False):
        if self.hazard_kind == "Weibull":
            shape, scale = self.coef_t
            return WeibullHazard(float(shape), float(scale))
        return SplineHazard(self.basis_t, self.coef_t, extrapolate)


# -------------------------
# Marker trajectory and link
# -------------------------


def marker_trajectory(params: Model2Params, t, z: int = 0, x=None, omega=None, nu_m: float = 0.0):
    """
    Error-free marker level and its time derivative at t.

    `omega` is (w0,) or (w0, w1); `x` the marker covariates in effect at t.
    """
    t = np.asarray(t, dtype=float)
    omega = np.zeros(params.n_random) if omega is None else np.atleast_1d(np.asarray(omega, dtype=float))
    w0 = omega[0]
    w1 = omega[1] if omega.size > 1 else 0.0
    x = np.zeros(params.beta_m_cov.size) if x is None else np.asarray(x, dtype=float)
    cov = float(x @ params.beta_m_cov) if x.size else 0.0
    slope = params.b1 + w1 + params.beta_zm_time * z
    level = params.b0 + w0 + (params.b1 + w1) * t + cov + (params.beta_zm + nu_m) * z + params.beta_zm_time * z * t
    return level, slope + 0.0 * t


def link_value(params: Model2Params, link: LinkKind, t, z: int = 0, x=None, omega=None, mediation: bool = False):
    """h(M)(t) for the chosen link: level, slope, or the random effects themselves."""
    if link == "shared_random_effects":
        if mediation:
            raise MediationLinkError("the shared random-effects link cannot carry a mediated effect")
        return np.zeros(params.n_random) if omega is None else np.atleast_1d(np.asarray(omega, dtype=float))
    level, slope = marker_trajectory(params, t, z, x, omega)
    return np.atleast_1d(level if link == "current_level" else slope)


# -------------------------
# Preprocessed data
# -------------------------


def _last_observation_covariates(ds: LongitudinalDataset, times: np.ndarray) -> np.ndarray:
    """Marker covariates in effect at each (subject, time): last measurement at or before it."""
    n, p = ds.n_subjects, len(ds.long_covariates)
    out = np.zeros(times.shape + (p,))
    if p == 0:
        return out
    meas = ds.measurements
    for i, rows in meas.groupby("id", sort=True):
        tv = rows["timevar"].to_numpy()
        xv = rows[list(ds.long_covariates)].to_numpy(dtype=float)
        pos = np.searchsorted(tv, times[i - 1], side="right") - 1
        out[i - 1] = xv[np.clip(pos, 0, len(tv) - 1)]
    if len(meas["id"].unique()) < n:
        logger.debug("Subjects without measurements get zero marker covariates")
    return out


class Model2Data:
    """Parameter-free arrays reused across likelihood evaluations."""

    def __init__(self, ds: LongitudinalDataset, hazard_kind: str, basis_t: SplineBasis | None):
        self.ds = ds
        surv = ds.survival
        self.n = ds.n_subjects
        self.z = surv["trt"].to_numpy(dtype=float)
        self.time = surv["time_t"].to_numpy(dtype=float)
        self.delta = surv["status_t"].to_numpy(dtype=bool)
        self.x_t = surv[list(ds.surv_covariates)].to_numpy(dtype=float) if ds.surv_covariates else np.zeros((self.n, 0))
        self.groups = ds.group_indices()
        self.has_centers = ds.has_centers

        meas = ds.measurements
        self.meas_idx = meas["id"].to_numpy(dtype=int) - 1
        self.meas_t = meas["timevar"].to_numpy(dtype=float)
        self.meas_y = meas["value"].to_numpy(dtype=float)
        self.meas_x = meas[list(ds.long_covariates)].to_numpy(dtype=float) if ds.long_covariates else np.zeros((len(meas), 0))
        self.meas_z = self.z[self.meas_idx]
        self.n_meas = self._sum(np.ones_like(self.meas_t))
        self.sum_t = self._sum(self.meas_t)
        self.sum_tt = self._sum(self.meas_t**2)

        self.hazard_kind = hazard_kind
        self.basis_t = basis_t
        self._integration_nodes()
        self.x_nodes = _last_observation_covariates(ds, self.nodes)
        self.x_at_t = _last_observation_covariates(ds, self.time[:, None])[:, 0, :]
        if basis_t is not None:
            m = SplineBasis(basis_t.order, basis_t.knots, "M")
            i = SplineBasis(basis_t.order, basis_t.knots, "I")
            self.m_nodes = design_matrix(m, self.nodes.ravel()).reshape(self.nodes.shape + (basis_t.n_basis,))
            self.m_time = design_matrix(m, self.time)
            self.i_time = design_matrix(i, self.time)

    def _sum(self, values) -> np.ndarray:
        return np.bincount(self.meas_idx, weights=values, minlength=self.n)

    def _integration_nodes(self):
        """Composite Gauss-Legendre nodes on (0, T_i], split at the hazard knots."""
        x, w = gl_rule(GL_NODES)
        rows = []
        for t in self.time:
            if self.basis_t is not None:
                inner = self.basis_t.knots[(self.basis_t.knots > 0) & (self.basis_t.knots < t)]
                breaks = np.concatenate([[0.0], inner, [t]])
            else:
                breaks = np.linspace(0.0, t, WEIBULL_SEGMENTS + 1)
            widths = np.diff(breaks)
            rows.append(((breaks[:-1, None] + widths[:, None] * x).ravel(), (widths[:, None] * w).ravel()))
        width = max(len(r[0]) for r in rows)
        self.nodes = np.zeros((self.n, width))
        self.weights = np.zeros((self.n, width))
        for i, (s, ws) in enumerate(rows):
            self.nodes[i, : len(s)] = s
            self.weights[i, : len(ws)] = ws


def lmm_posterior(data: Model2Data, params: Model2Params) -> tuple[np.ndarray, np.ndarray]:
    """
    Posterior mean and Cholesky factor of each subject's random effects under
    the linear mixed submodel alone (exact Gaussian update).
    """
    r = params.n_random
    resid = data.meas_y - _fixed_marker(data, params)
    zte = np.column_stack([data._sum(resid), data._sum(resid * data.meas_t)])[:, :r]
    ztz = np.empty((data.n, r, r))
    ztz[:, 0, 0] = data.n_meas
    if r == 2:
        ztz[:, 0, 1] = ztz[:, 1, 0] = data.sum_t
        ztz[:, 1, 1] = data.sum_tt
    precision = np.linalg.inv(params.D)[None] + ztz / params.sigma_eps2
    cov = np.linalg.inv(precision)
    mode = np.einsum("nij,nj->ni", cov, zte) / params.sigma_eps2
    return mode, np.linalg.cholesky(0.5 * (cov + np.swapaxes(cov, 1, 2)))


def _fixed_marker(data: Model2Data, p: Model2Params) -> np.ndarray:
    """Marker mean at each measurement without random effects."""
    value = p.b0 + p.b1 * data.meas_t + p.beta_zm * data.meas_z + p.beta_zm_time * data.meas_z * data.meas_t
    if data.meas_x.shape[1]:
        value = value + data.meas_x @ p.beta_m_cov
    return value


# -------------------------
# Marginal likelihood
# -------------------------


class Model2Likelihood:
    def __init__(
        self,
        data: Model2Data,
        gh: QuadratureRule,
        mc: MCSampler | None,
        penalty: PenaltySpec | None = None,
        adaptive: tuple[np.ndarray, np.ndarray] | None = None,
        threads: int | None = None,
    ):
        self.data = data
        self.gh = gh
        self.mc = mc
        self.penalty = penalty or PenaltySpec()
        self.threads = threads
        self.adaptive = None
        self.p_t = None
        if data.basis_t is not None and self.penalty.kappa_t > 0:
            self.p_t = curvature_penalty(data.basis_t)
        if adaptive is not None:
            mode, chol = adaptive
            r = mode.shape[1]
            nodes, log_w = [], []
            for i in range(data.n):
                b, lw = adapt_product(gh, mode[i], chol[i])
                nodes.append(b)
                log_w.append(lw)
            self.adaptive = (np.stack(nodes), np.stack(log_w), r)

    def penalty_value(self, p: Model2Params) -> float:
        if self.p_t is None:
            return 0.0
        return self.penalty.kappa_t * float(p.coef_t @ self.p_t @ p.coef_t)

    def _nodes(self, p: Model2Params) -> tuple[np.ndarray, np.ndarray]:
        """Random-effect nodes (N, Q, r) and log weights (N, Q) for expectations under N(0, D)."""
        r = p.n_random
        if self.adaptive is not None:
            b, log_w, _ = self.adaptive
            chol = safe_cholesky(p.D, "D")
            sol = np.linalg.solve(chol, b.reshape(-1, r).T).T.reshape(b.shape)
            log_prior = -0.5 * np.sum(sol**2, axis=2) - np.log(np.diag(chol)).sum() - r * LOG_SQRT_2PI
            return b, log_w + log_prior
        x, w = product_rule(self.gh, r)
        chol = safe_cholesky(p.D, "D")
        b = np.broadcast_to((x @ chol.T)[None], (self.data.n,) + x.shape)
        return b, np.broadcast_to(np.log(w)[None], (self.data.n, len(w)))

    def _baseline(self, p: Model2Params):
        d = self.data
        with np.errstate(divide="ignore"):
            if p.hazard_kind == "Weibull":
                base = p.baseline()
                log_h_nodes = np.log(base.hazard(d.nodes.ravel())).reshape(d.nodes.shape)
                log_h_time = np.log(base.hazard(d.time))
                log_cum_time = np.log(base.cumulative(d.time))
            else:
                log_h_nodes = np.log(d.m_nodes @ p.coef_t)
                log_h_time = np.log(d.m_time @ p.coef_t)
                log_cum_time = np.log(d.i_time @ p.coef_t)
        return log_h_nodes, log_h_time, log_cum_time

    def subject_terms(self, p: Model2Params) -> dict:
        """(N, Q) arrays of everything that does not involve the center effects."""
        d = self.data
        b, log_w = self._nodes(p)
        w0 = b[..., 0]
        w1 = b[..., 1] if p.n_random > 1 else np.zeros_like(w0)

        e = d.meas_y - _fixed_marker(d, p)
        se, see, set_ = d._sum(e), d._sum(e * e), d._sum(e * d.meas_t)
        n_i = d.n_meas[:, None]
        ss = (
            see[:, None]
            - 2.0 * w0 * se[:, None]
            - 2.0 * w1 * set_[:, None]
            + n_i * w0**2
            + 2.0 * w0 * w1 * d.sum_t[:, None]
            + w1**2 * d.sum_tt[:, None]
        )
        sr = se[:, None] - n_i * w0 - w1 * d.sum_t[:, None]

        log_h_nodes, log_h_time, log_cum_time = self._baseline(p)
        lin = p.beta_zt * d.z + (d.x_t @ p.beta_t_cov if d.x_t.shape[1] else 0.0)
        log_h_time = np.where(d.delta, log_h_time, 0.0)

        if p.link == "current_level":
            eta = p.eta[0]
            fixed_nodes = p.b0 + p.b1 * d.nodes + p.beta_zm * d.z[:, None] + p.beta_zm_time * d.z[:, None] * d.nodes
            if d.x_nodes.shape[2]:
                fixed_nodes = fixed_nodes + d.x_nodes @ p.beta_m_cov
            level = fixed_nodes[:, None, :] + w0[..., None] + w1[..., None] * d.nodes[:, None, :]
            with np.errstate(divide="ignore"):
                log_wg = np.log(d.weights)[:, None, :]
            log_cum = logsumexp(log_wg + log_h_nodes[:, None, :] + eta * level, axis=2)
            fixed_t = p.b0 + p.b1 * d.time + p.beta_zm * d.z + p.beta_zm_time * d.z * d.time
            if d.x_at_t.shape[1]:
                fixed_t = fixed_t + d.x_at_t @ p.beta_m_cov
            h_time = eta * (fixed_t[:, None] + w0 + w1 * d.time[:, None])
        elif p.link == "current_slope":
            h_time = p.eta[0] * (p.b1 + w1 + p.beta_zm_time * d.z[:, None])
            log_cum = log_cum_time[:, None] + h_time
        else:
            h_time = np.einsum("nqr,r->nq", b, p.eta)
            log_cum = log_cum_time[:, None] + h_time

        event = d.delta[:, None] * (log_h_time[:, None] + h_time + lin[:, None])
        return {
            "ss": ss,
            "sr": sr,
            "log_cum": log_cum + lin[:, None],
            "event": event,
            "log_w": log_w,
            "const": -d.n_meas * (0.5 * np.log(p.sigma_eps2) + LOG_SQRT_2PI),
        }

    def _subject_ll(self, p, terms, idx, nu_m=0.0, nu_t=0.0):
        """Conditional log-likelihood (subjects, [draws,] nodes) given center effects."""
        d = self.data
        z = d.z[idx][:, None, None]
        nu_m = np.atleast_1d(nu_m)[None, :, None]
        nu_t = np.atleast_1d(nu_t)[None, :, None]
        ss = terms["ss"][idx][:, None, :]
        sr = terms["sr"][idx][:, None, :]
        n_i = d.n_meas[idx][:, None, None]
        ss_nu = ss - 2.0 * nu_m * z * sr + nu_m**2 * z * n_i
        shift = (nu_t + (p.eta[0] * nu_m if p.link == "current_level" else 0.0)) * z
        delta = d.delta[idx][:, None, None]
        return (
            terms["const"][idx][:, None, None]
            - ss_nu / (2.0 * p.sigma_eps2)
            + terms["event"][idx][:, None, :]
            + delta * shift
            - np.exp(terms["log_cum"][idx][:, None, :] + shift)
        )

    def group_loglik(self, p: Model2Params, g: int, terms: dict) -> float:
        idx = self.data.groups[g - 1]
        log_w = terms["log_w"][idx][:, None, :]
        if not self.data.has_centers or p.sigma_nu is None:
            value = float(logsumexp(self._subject_ll(p, terms, idx) + log_w, axis=2).sum())
            if not np.isfinite(value):
                raise NonFiniteContribution(int(idx[0]) + 1, value)
            return value
        draws = self.mc.standard_normal(2, stream_id=g) @ safe_cholesky(p.sigma_nu, "sigma_nu").T
        m = len(draws)
        chunk = max(1, CHUNK_ELEMENTS // max(1, len(idx) * log_w.shape[2]))
        per_draw = np.empty(m)
        for start in range(0, m, chunk):
            sl = slice(start, start + chunk)
            ll = self._subject_ll(p, terms, idx, draws[sl, 0], draws[sl, 1])
            per_draw[sl] = logsumexp(ll + log_w, axis=2).sum(axis=0)
        shift = per_draw.max()
        value = float(shift + np.log(np.mean(np.exp(per_draw - shift)))) if np.isfinite(shift) else shift
        logger.debug("Center %d: log-likelihood %.6f (scaling shift %.3f)", g, value, shift)
        if not np.isfinite(value):
            raise NumericalUnderflow(g)
        return value

    def loglik(self, p: Model2Params) -> float:
        terms = self.subject_terms(p)
        ids = range(1, len(self.data.groups) + 1)
        return ordered_sum(map_ordered(lambda g: self.group_loglik(p, g, terms), ids, self.threads))

    def penalized(self, p: Model2Params) -> float:
        return self.loglik(p) - self.penalty_value(p)


def penalized_loglik2(
    params: Model2Params,
    ds: LongitudinalDataset,
    link: LinkKind,
    gh: QuadratureRule,
    mc: MCSampler | None,
    penalty: PenaltySpec | None = None,
    method: Literal["standard", "pseudo_adaptive"] = "pseudo_adaptive",
) -> float:
    """
    Penalized marginal log-likelihood of the longitudinal joint model.

    With the pseudo-adaptive method the nodes are centred on each subject's
    posterior under the mixed submodel at `params`.
    """
    params = replace(params, link=link)
    data = Model2Data(ds, params.hazard_kind, params.basis_t)
    adaptive = lmm_posterior(data, params) if method == "pseudo_adaptive" else None
    return Model2Likelihood(data, gh, mc, penalty, adaptive).penalized(params)


# -------------------------
# Working-scale parameter vector
# -------------------------


class Model2Layout:
    def __init__(self, template: Model2Params, m_names, t_names, has_centers: bool):
        self.template = template
        self.m_names = list(m_names)
        self.t_names = list(t_names)
        self.has_centers = has_centers
        self.r = template.n_random
        self.weibull = template.hazard_kind == "Weibull"
        self.n_h = 2 if self.weibull else template.coef_t.size
        self.n_fixed = template.beta_fixed.size
        self.n_eta = template.eta.size
        self.names = self._names(natural=False)
        self.natural_names = self._names(natural=True)

    def _names(self, natural: bool) -> list[str]:
        if self.weibull:
            names = ["weibull_shape", "weibull_scale"] if natural else ["log_shape", "log_scale"]
        else:
            names = [f"{'' if natural else 'sqrt_'}coef_t[{k}]" for k in range(self.n_h)]
        names += (["intercept"] if self.template.intercept else []) + ["time", "trt", "time:trt"]
        names += [f"beta_m:{n}" for n in self.m_names]
        names.append("sigma_eps2" if natural else "log_sigma_eps")
        if natural:
            names += ["D11"] + (["D22", "D12"] if self.r == 2 else [])
        else:
            names += ["log_chol_d11"] + (["chol_d21", "log_chol_d22"] if self.r == 2 else [])
        if self.has_centers:
            names += ["sigma_nu_mm", "sigma_nu_tt", "sigma_nu_mt"] if natural else ["log_chol_mm", "chol_tm", "log_chol_tt"]
        names.append("beta_zt")
        names += [f"beta_t:{n}" for n in self.t_names]
        names += ["eta"] if self.n_eta == 1 else [f"eta[{k}]" for k in range(self.n_eta)]
        return names

    @property
    def size(self) -> int:
        return len(self.names)

    def pack(self, p: Model2Params) -> np.ndarray:
        parts = [np.log(p.coef_t) if self.weibull else np.sqrt(p.coef_t)]
        parts += [p.beta_fixed, [p.beta_zm, p.beta_zm_time], p.beta_m_cov, [0.5 * np.log(p.sigma_eps2)]]
        ld = safe_cholesky(p.D, "D")
        parts.append([np.log(ld[0, 0])] + ([ld[1, 0], np.log(ld[1, 1])] if self.r == 2 else []))
        if self.has_centers:
            ln = safe_cholesky(p.sigma_nu, "sigma_nu")
            parts.append([np.log(ln[0, 0]), ln[1, 0], np.log(ln[1, 1])])
        parts += [[p.beta_zt], p.beta_t_cov, p.eta]
        return np.concatenate([np.asarray(a, dtype=float).ravel() for a in parts])

    def unpack(self, x) -> Model2Params:
        x = np.asarray(x, dtype=float)
        pos = 0

        def take(n):
            nonlocal pos
            out = x[pos : pos + n]
            pos += n
            return out

        coef = np.exp(take(2)) if self.weibull else take(self.n_h) ** 2
        beta_fixed = take(self.n_fixed).copy()
        beta_zm, beta_zm_time = take(2)
        beta_m = take(len(self.m_names)).copy()
        sigma_eps2 = float(np.exp(2.0 * take(1)[0]))
        if self.r == 2:
            a, b, c = take(3)
            ld = np.array([[np.exp(a), 0.0], [b, np.exp(c)]])
        else:
            ld = np.array([[np.exp(take(1)[0])]])
        sigma_nu = None
        if self.has_centers:
            a, b, c = take(3)
            ln = np.array([[np.exp(a), 0.0], [b, np.exp(c)]])
            sigma_nu = ln @ ln.T
        beta_zt = float(take(1)[0])
        beta_t = take(len(self.t_names)).copy()
        eta = take(self.n_eta).copy()
        return replace(
            self.template,
            coef_t=coef,
            beta_fixed=beta_fixed,
            beta_zm=float(beta_zm),
            beta_zm_time=float(beta_zm_time),
            beta_m_cov=beta_m,
            sigma_eps2=sigma_eps2,
            D=ld @ ld.T,
            sigma_nu=sigma_nu,
            beta_zt=beta_zt,
            beta_t_cov=beta_t,
            eta=eta,
        )

    def natural(self, x) -> np.ndarray:
        p = self.unpack(x)
        parts = [p.coef_t, p.beta_fixed, [p.beta_zm, p.beta_zm_time], p.beta_m_cov, [p.sigma_eps2]]
        parts.append([p.D[0, 0]] + ([p.D[1, 1], p.D[0, 1]] if self.r == 2 else []))
        if self.has_centers:
            parts.append([p.sigma_nu[0, 0], p.sigma_nu[1, 1], p.sigma_nu[0, 1]])
        parts += [[p.beta_zt], p.beta_t_cov, p.eta]
        return np.concatenate([np.asarray(a, dtype=float).ravel() for a in parts])


# -------------------------
# Fitting
# -------------------------


def preliminary_lmm(ds: LongitudinalDataset, cfg: Model2Config) -> dict:
    """
    Linear mixed model for the marker alone (statsmodels MixedLM, ML).

    Gives starting values for the marker parameters and the centring of the
    pseudo-adaptive nodes.
    """
    meas = ds.measurements
    z = meas["id"].map(ds.survival.set_index("id")["trt"]).to_numpy(dtype=float)
    t = meas["timevar"].to_numpy(dtype=float)
    columns = ([np.ones_like(t)] if cfg.intercept else []) + [t, z, z * t]
    exog = np.column_stack(columns + [meas[c].to_numpy(dtype=float) for c in ds.long_covariates])
    exog_re = np.column_stack([np.ones_like(t), t][: cfg.n_random])
    y = meas["value"].to_numpy(dtype=float)
    n_fixed = len(columns) - 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = sm.MixedLM(y, exog, groups=meas["id"].to_numpy(), exog_re=exog_re).fit(reml=False)
        fe = np.asarray(res.fe_params, dtype=float)
        d = np.atleast_2d(np.asarray(res.cov_re, dtype=float))
        sigma2 = float(res.scale)
        np.linalg.cholesky(d)
    except (np.linalg.LinAlgError, ValueError) as err:
        logger.warning("Preliminary mixed model failed (%s); starting from least squares", err)
        fe = np.linalg.lstsq(exog, y, rcond=None)[0]
        resid = y - exog @ fe
        sigma2 = float(np.var(resid)) / 2.0
        d = np.eye(cfg.n_random) * max(sigma2, 1e-2)
    logger.info("Preliminary mixed model: fixed effects %s, residual variance %.4f", np.round(fe, 4).tolist(), sigma2)
    return {
        "beta_fixed": fe[:n_fixed],
        "beta_zm": float(fe[n_fixed]),
        "beta_zm_time": float(fe[n_fixed + 1]),
        "beta_m_cov": fe[n_fixed + 2 :],
        "sigma_eps2": max(sigma2, 1e-6),
        "D": d,
    }


def fit_model2(
    ds: LongitudinalDataset,
    cfg: Model2Config,
    integration: IntegrationSettings | None = None,
    limits: OptimizerLimits | None = None,
) -> FitResult:
    """Fit the longitudinal joint model by penalized likelihood."""
    integration = integration or IntegrationSettings()
    limits = limits or OptimizerLimits()
    if cfg.mediation and cfg.link == "shared_random_effects":
        raise MediationLinkError("the shared random-effects link cannot carry a mediated effect")
    surv = ds.survival
    times = surv["time_t"].to_numpy(dtype=float)
    events = surv["status_t"].to_numpy(dtype=int)

    basis_t = None
    kappa = 0.0
    if cfg.hazard == "Weibull":
        rate = events.sum() / times.sum()
        coef = np.array([1.0, 1.0 / max(rate, 1e-8)])
    else:
        placement = "percentile" if cfg.hazard == "Splines-per" else "equidistant"
        basis_t = make_basis("M", cfg.n_knots, placement, times)
        if cfg.auto_kappa:
            kappa, coef = select_kappa(basis_t, times, events, ModelDefaults.KAPPA_GRID)
        else:
            kappa = float(cfg.kappa)
            coef, _ = fit_marginal_hazard(basis_t, times, events, kappa)
    penalty = PenaltySpec(0.0, kappa)

    prelim = preliminary_lmm(ds, cfg)
    init = ModelDefaults.MODEL2_INIT
    sigma_nu = None
    if ds.has_centers:
        mm, tt, mt = init["sigma_nu_mm"], init["sigma_nu_tt"], init["sigma_nu_mt"]
        sigma_nu = np.array([[mm, mt], [mt, tt]])
    n_eta = cfg.n_random if cfg.link == "shared_random_effects" else 1
    template = Model2Params(
        link=cfg.link,
        hazard_kind=cfg.hazard,
        coef_t=coef,
        basis_t=basis_t,
        beta_fixed=prelim["beta_fixed"],
        beta_m_cov=prelim["beta_m_cov"],
        beta_zm=prelim["beta_zm"],
        beta_zm_time=prelim["beta_zm_time"],
        sigma_eps2=prelim["sigma_eps2"],
        D=prelim["D"],
        sigma_nu=sigma_nu,
        beta_zt=init["betat"],
        beta_t_cov=np.zeros(len(ds.surv_covariates)),
        eta=np.full(n_eta, init["eta"]),
        intercept=cfg.intercept,
    )
    layout = Model2Layout(template, ds.long_covariates, ds.surv_covariates, ds.has_centers)
    data = Model2Data(ds, cfg.hazard, basis_t)
    gh = gh_rule(integration.n_nodes_adaptive if cfg.method_gh == "pseudo_adaptive" else integration.nb_gh2)
    adaptive = lmm_posterior(data, template) if cfg.method_gh == "pseudo_adaptive" else None
    mc = MCSampler(integration.nb_mc, integration.seed, integration.antithetic) if ds.has_centers else None
    lik = Model2Likelihood(data, gh, mc, penalty, adaptive, integration.threads)

    logger.info(
        "Fitting longitudinal joint model: %d subjects, %d measurements, link %s, %s GH with %d nodes, %d parameters",
        ds.n_subjects,
        ds.n_measurements,
        cfg.link,
        cfg.method_gh.replace("_", "-"),
        gh.n_nodes,
        layout.size,
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
        "Fit finished after %d iterations (converged=%s): penalized loglik %.3f",
        fit.n_iter,
        fit.converged,
        fit.loglik_pen,
    )
    return fit


# -------------------------
# Prediction
# -------------------------


def conditional_survival(
    params: Model2Params,
    times,
    z: int,
    z_marker: int,
    omega: np.ndarray,
    nu_m=0.0,
    nu_t=0.0,
    x_t=None,
    x_m=None,
) -> np.ndarray:
    """
    Survival of the final endpoint on an increasing time grid, one row per
    draw of (omega, nu_M, nu_T). The marker follows treatment `z_marker`, the
    direct effect uses `z`. `x_t` / `x_m` hold one covariate row per draw.
    Cumulative hazards accumulate segment by segment, so each row is
    nonincreasing.
    """
    if params.link == "shared_random_effects":
        raise MediationLinkError("the shared random-effects link cannot carry a mediated effect")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    n_draws = omega.shape[0]
    w0 = omega[:, 0]
    w1 = omega[:, 1] if omega.shape[1] > 1 else np.zeros(n_draws)
    nu_m = np.broadcast_to(np.asarray(nu_m, dtype=float), (n_draws,))
    nu_t = np.broadcast_to(np.asarray(nu_t, dtype=float), (n_draws,))
    cov_t = np.asarray(x_t, dtype=float) @ params.beta_t_cov if x_t is not None and params.beta_t_cov.size else 0.0
    cov_m = np.asarray(x_m, dtype=float) @ params.beta_m_cov if x_m is not None and params.beta_m_cov.size else 0.0
    lin = (params.beta_zt + nu_t) * z + cov_t
    base = params.baseline(extrapolate=True)

    knots = params.basis_t.knots if params.basis_t is not None else np.zeros(0)
    breaks = np.unique(np.concatenate([[0.0], times, knots[(knots > 0) & (knots < times.max())]]))
    x, w = gl_rule(GL_NODES)
    widths = np.diff(breaks)
    s = breaks[:-1, None] + widths[:, None] * x
    ws = widths[:, None] * w
    with np.errstate(divide="ignore"):
        log_h = np.log(base.hazard(s.ravel())).reshape(s.shape)

    if params.link == "current_level":
        level = (
            params.b0
            + w0[:, None, None]
            + (params.b1 + w1[:, None, None]) * s[None]
            + np.reshape(cov_m, (-1, 1, 1))
            + (params.beta_zm + nu_m[:, None, None]) * z_marker
            + params.beta_zm_time * z_marker * s[None]
        )
        h = params.eta[0] * level
    else:
        h = (params.eta[0] * (params.b1 + w1 + params.beta_zm_time * z_marker))[:, None, None] + np.zeros((1,) + s.shape)

    seg = np.sum(ws[None] * np.exp(log_h[None] + h), axis=2)
    cum = np.concatenate([np.zeros((n_draws, 1)), np.cumsum(seg, axis=1)], axis=1)
    cum_at = cum[:, np.searchsorted(breaks, times)]
    return np.exp(-cum_at * np.exp(np.reshape(lin, (-1, 1))))


def marker_summary(ds: LongitudinalDataset, fit: FitResult) -> pd.DataFrame:
    """Group-level global Wald tests for multi-level categorical covariates."""
    rows = []
    for name, columns in ds.covariate_groups.items():
        if len(columns) < 2:
            continue
        for prefix in ("beta_m:", "beta_t:"):
            targets = [prefix + c for c in columns if prefix + c in (fit.natural_names or [])]
            if len(targets) >= 2:
                chi2, df, p = global_wald_test(fit, targets)
                rows.append({"covariate": name, "submodel": prefix[:-1], "chi2": chi2, "df": df, "p": p})
    return pd.DataFrame(rows, columns=["covariate", "submodel", "chi2", "df", "p"])
