"""
Surrogacy measures computed from fitted joint models.

Individual level: Kendall's tau between the surrogate and the final
endpoint. Trial level: R2_trial of the treatment-effect random effects and
the surrogate threshold effect (STE). Mediation: counterfactual survival
S^{zz'}(t) of the final endpoint and the natural indirect / direct / total
effects with the proportion of treatment effect (PTE) they imply.
Uncertainty comes from a parametric bootstrap on the working-scale
parameter vector.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import norm
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt
from tqdm import tqdm

from .config import ModelDefaults, RunConfig
from .data import LongitudinalDataset, SurrogacyDataset
from .errors import (
    ConfigError,
    MediationLinkError,
    MediationPresent,
    NoThreshold,
    NotPositiveDefinite,
    NumericalError,
    TooManyRejections,
)
from .integrate import MCSampler, gl_rule, safe_cholesky
from .model_long import Model2Params, conditional_survival
from .model_tte import Model1Params, gamma_report
from .optimize import FitResult, invert_hessian, natural_vcov
from .utils.parallel import map_ordered, ordered_sum

logger = logging.getLogger(__name__)

ModelKind = Literal["tte", "longitudinal"]

S_NODES = 64
TAU_SEGMENTS = 24
TAU_NODES_PER_SEGMENT = 5
TAU_CHUNK_ELEMENTS = 2_000_000
MAX_ATTEMPTS = 10

# natural-scale names of (sigma_12, sigma_1^2, sigma_2^2) per model
SIGMA_NAMES = {
    "tte": ("sigma_st", "sigma_ss", "sigma_tt"),
    "longitudinal": ("sigma_nu_mt", "sigma_nu_mm", "sigma_nu_tt"),
}


def strength_label(r2: float) -> str:
    low, high = ModelDefaults.STRENGTH_CUTOFFS
    if r2 <= low:
        return "Low"
    if r2 >= high:
        return "High"
    return "Medium"


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    n = len(values)
    mean = ordered_sum(values) / n
    if n < 2:
        return mean, 0.0
    return mean, float(np.sqrt(ordered_sum((values - mean) ** 2) / (n - 1) / n))


# -------------------------
# Kendall's tau
# -------------------------


def kendall_tau_no_mediation(params: Model1Params, mc: MCSampler) -> tuple[float, float]:
    """
    tau = 4 E[P(S1 > S2 | xi) P(T1 > T2 | xi)] - 1 over two independent
    subjects' (w, u). Given the frailties both endpoints are proportional
    hazards with a shared baseline, so each probability is a logistic
    function of the difference in linear predictors. Returns (tau, MC SE).
    """
    if params.mediation and np.any(params.gamma_fn_coef != 0):
        raise MediationPresent("use kendall_tau_mediation when the mediation function is not zero")
    d = mc.standard_normal(4, stream_id=0)
    w1, w2 = np.sqrt(params.theta2) * d[:, 0], np.sqrt(params.theta2) * d[:, 1]
    u1, u2 = np.sqrt(params.gamma2) * d[:, 2], np.sqrt(params.gamma2) * d[:, 3]
    p_s = expit((w2 + u2) - (w1 + u1))
    p_t = expit(params.zeta * (w2 - w1) + params.alpha * (u2 - u1))
    return _mean_se(4.0 * p_s * p_t - 1.0)


def _tau_grid(params: Model1Params, a_s: np.ndarray, a_t: np.ndarray, n_segments: int, n_per_segment: int):
    """Time grid covering the latent event times of every frailty draw."""
    hs, ht = params.hazard_s(True), params.hazard_t(True)
    low_s, high_s = np.quantile(a_s, [0.001, 0.999])
    low_t, high_t = np.quantile(a_t, [0.001, 0.999])
    scan = np.linspace(0.0, params.basis_t.upper, 50)
    g_min = min(0.0, float(params.gamma_fn(scan).min()))
    t_hi = max(
        hs.inverse_cumulative([10.0 * np.exp(-low_s)])[0],
        ht.inverse_cumulative([10.0 * np.exp(-low_t - g_min)])[0],
    )
    t_lo = min(
        hs.inverse_cumulative([1e-4 * np.exp(-high_s)])[0],
        ht.inverse_cumulative([1e-4 * np.exp(-high_t)])[0],
    )
    t_lo = max(t_lo, 1e-8 * t_hi)
    breaks = np.concatenate([[0.0], np.geomspace(t_lo, t_hi, n_segments)])
    x, w = gl_rule(n_per_segment)
    widths = np.diff(breaks)
    return (breaks[:-1, None] + widths[:, None] * x).ravel(), (widths[:, None] * w).ravel()


def kendall_tau_mediation(
    params: Model1Params,
    mc: MCSampler,
    n_segments: int = TAU_SEGMENTS,
    n_per_segment: int = TAU_NODES_PER_SEGMENT,
) -> tuple[float, float]:
    """
    tau = 4 P(S1 > S2, T1 > T2) - 1 when T's hazard jumps by exp(gamma(S))
    after the surrogate event.

    Per pair of frailty draws the concordance probability is a nested
    integral over (s1, s2, t); s and t share one composite Gauss-Legendre
    grid and ties on the grid count one half. Returns (tau, MC SE).
    """
    d = mc.standard_normal(4, stream_id=0)
    w = np.sqrt(params.theta2) * d[:, :2]
    u = np.sqrt(params.gamma2) * d[:, 2:]
    a_s = w + u
    a_t = params.zeta * w + params.alpha * u

    s, ws = _tau_grid(params, a_s.ravel(), a_t.ravel(), n_segments, n_per_segment)
    hs, ht = params.hazard_s(True), params.hazard_t(True)
    cum_s, haz_s = hs.cumulative(s), hs.hazard(s)
    cum_t, haz_t = ht.cumulative(s), ht.hazard(s)
    jump = np.exp(params.gamma_fn(s))
    after = s[None, :] > s[:, None]
    order = np.tril(np.ones((len(s), len(s))), -1) + 0.5 * np.eye(len(s))
    # cumulative / instantaneous T hazard at t (columns) given S = s (rows);
    # the jump at t == s counts one half, like the ties in `order`
    cum_ts = np.where(after, cum_t[:, None] + jump[:, None] * (cum_t[None, :] - cum_t[:, None]), cum_t[None, :])
    rate_ts = haz_t[None, :] * (1.0 + order.T * (jump[:, None] - 1.0))

    def density_s(a):
        e = np.exp(a)[:, None]
        return ws[None, :] * haz_s[None, :] * e * np.exp(-cum_s[None, :] * e)

    n = len(d)
    chunk = max(1, TAU_CHUNK_ELEMENTS // (len(s) ** 2))
    concord = np.empty(n)
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        e1 = np.exp(a_t[sl, 0])[:, None, None]
        e2 = np.exp(a_t[sl, 1])[:, None, None]
        surv_t1 = np.exp(-e1 * cum_ts[None])
        dens_t2 = ws[None, None, :] * rate_ts[None] * e2 * np.exp(-e2 * cum_ts[None])
        inner = np.einsum("mgh,mkh->mgk", surv_t1, dens_t2)
        f1, f2 = density_s(a_s[sl, 0]), density_s(a_s[sl, 1])
        concord[sl] = np.einsum("mg,mk,gk,mgk->m", f1, f2, order, inner)
    logger.debug("Kendall tau grid: %d nodes on (0, %.4g]", len(s), s[-1])
    return _mean_se(4.0 * concord - 1.0)


def kendall_tau(params: Model1Params, mc: MCSampler) -> tuple[float, float]:
    if params.mediation and np.any(params.gamma_fn_coef != 0):
        return kendall_tau_mediation(params, mc)
    return kendall_tau_no_mediation(params, mc)


# -------------------------
# Trial level
# -------------------------


@dataclass
class R2Result:
    r2: float
    reported: float
    se: float | None
    lower: float | None
    upper: float | None
    label: str


def r2_trial(sigma_nu, vcov=None, level: float = 0.05) -> R2Result:
    """
    R2_trial = sigma_12^2 / (sigma_1^2 sigma_2^2) with a delta-method SE.

    `vcov` is the covariance of (sigma_12, sigma_1^2, sigma_2^2). The normal
    interval is left unclamped; only the reported value is capped at 1.
    """
    sigma_nu = np.asarray(sigma_nu, dtype=float)
    s1, s2, s12 = sigma_nu[0, 0], sigma_nu[1, 1], sigma_nu[0, 1]
    if not (s1 > 0 and s2 > 0) or not np.isclose(sigma_nu[0, 1], sigma_nu[1, 0]):
        raise NotPositiveDefinite("sigma_nu")
    r2 = s12**2 / (s1 * s2)
    se = lower = upper = None
    if vcov is not None:
        grad = np.array([2.0 * s12 / (s1 * s2), -(s12**2) / (s1**2 * s2), -(s12**2) / (s1 * s2**2)])
        se = float(np.sqrt(max(grad @ np.asarray(vcov, dtype=float) @ grad, 0.0)))
        q = norm.ppf(1.0 - level / 2.0)
        lower, upper = r2 - q * se, r2 + q * se
    reported = min(r2, 1.0)
    return R2Result(float(r2), float(reported), se, lower, upper, strength_label(reported))


def sigma_vcov(fit: FitResult, kind: ModelKind) -> np.ndarray:
    """Natural-scale covariance of (sigma_12, sigma_1^2, sigma_2^2)."""
    idx = [fit.natural_names.index(n) for n in SIGMA_NAMES[kind]]
    return natural_vcov(fit)[np.ix_(idx, idx)]


def prediction_bound(nu, beta_zt: float, sigma_nu, var_beta_zt: float = 0.0, level: float = 0.05, direction="upper"):
    """Bound of the prediction interval of beta_zt + nu_T given nu_S = nu."""
    sigma_nu = np.asarray(sigma_nu, dtype=float)
    s1, s2, s12 = sigma_nu[0, 0], sigma_nu[1, 1], sigma_nu[0, 1]
    mean = beta_zt + (s12 / s1) * np.asarray(nu, dtype=float)
    var = max(s2 - s12**2 / s1, 0.0) + var_beta_zt
    half = norm.ppf(1.0 - level / 2.0) * np.sqrt(var)
    return mean + half if direction == "upper" else mean - half


def ste(
    beta_zt: float,
    sigma_nu,
    var_beta_zt: float = 0.0,
    level: float = 0.05,
    direction: Literal["lower", "upper"] = "upper",
) -> float:
    """
    Surrogate threshold effect: the nu_S at which the chosen prediction bound
    for the final-endpoint effect crosses zero.

    The conditional variance does not depend on nu_S, so the bound is linear
    in nu_S and the root is closed form. "upper" suits treatments that lower
    the hazard (the bound must fall below zero).
    """
    sigma_nu = np.asarray(sigma_nu, dtype=float)
    s1, s12 = sigma_nu[0, 0], sigma_nu[0, 1]
    if not s1 > 0:
        raise NotPositiveDefinite("sigma_nu")
    slope = s12 / s1
    if slope == 0:
        raise NoThreshold("the surrogate effect carries no information on the final-endpoint effect")
    offset = prediction_bound(0.0, beta_zt, sigma_nu, var_beta_zt, level, direction)
    return float(-offset / slope)


# -------------------------
# Counterfactual survival and mediation curves
# -------------------------


@dataclass
class MediationCurves:
    times: np.ndarray
    s11: np.ndarray
    s10: np.ndarray
    s00: np.ndarray
    nie: np.ndarray
    nde: np.ndarray
    tte: np.ndarray
    pte: np.ndarray
    unstable: np.ndarray
    nie_se: np.ndarray | None = None
    bands: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    CURVES = ("s11", "s10", "s00", "nie", "nde", "tte", "pte")

    def stacked(self) -> np.ndarray:
        return np.vstack([getattr(self, name) for name in self.CURVES])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"time": self.times, **{name: getattr(self, name) for name in self.CURVES}})
        frame["tte_near_zero"] = self.unstable
        for name, (lower, upper) in self.bands.items():
            frame[f"{name}_lower"] = lower
            frame[f"{name}_upper"] = upper
        return frame


def _draw_dim(params) -> int:
    if isinstance(params, Model1Params):
        return 4
    return params.n_random + (2 if params.sigma_nu is not None else 0)


def _rows(cov, n_draws: int):
    """One covariate row per draw, cycling through the observed rows."""
    if cov is None or cov.shape[1] == 0:
        return None
    return cov[np.arange(n_draws) % len(cov)]


def _model1_survival(params: Model1Params, times, z: int, z_prime: int, draws, cov=None) -> np.ndarray:
    """S_T(t) per draw: no surrogate before t, plus the integral over a surrogate at s <= t."""
    omega = np.sqrt(params.theta2) * draws[:, 0]
    u = np.sqrt(params.gamma2) * draws[:, 1]
    nu = draws[:, 2:4] @ safe_cholesky(params.sigma_nu, "sigma_nu").T
    x = _rows(cov, len(draws))
    a_s = omega + u + z_prime * (params.beta_zs + nu[:, 0])
    a_t = params.zeta * omega + params.alpha * u + z * (params.beta_zt + nu[:, 1])
    if x is not None:
        a_s = a_s + x @ params.beta_s_cov
        a_t = a_t + x @ params.beta_t_cov
    e_s, e_t = np.exp(a_s)[:, None], np.exp(a_t)[:, None]
    hs, ht = params.hazard_s(True), params.hazard_t(True)
    xg, wg = gl_rule(S_NODES)

    out = np.ones((len(draws), len(times)))
    for k, t in enumerate(times):
        if t <= 0:
            continue
        s, ws = t * xg, t * wg
        cum_t_t = ht.cumulative([t])[0]
        cum_t_s = ht.cumulative(s)
        dens_s = hs.hazard(s) * e_s * np.exp(-hs.cumulative(s) * e_s)
        surv_after = np.exp(-e_t * (cum_t_s + np.exp(params.gamma_fn(s)) * (cum_t_t - cum_t_s)))
        no_surrogate = np.exp(-hs.cumulative([t])[0] * e_s[:, 0] - cum_t_t * e_t[:, 0])
        out[:, k] = no_surrogate + (ws * dens_s * surv_after).sum(axis=1)
    return out


def _model2_survival(params: Model2Params, times, z: int, z_prime: int, draws, cov=None) -> np.ndarray:
    r = params.n_random
    omega = draws[:, :r] @ safe_cholesky(params.D, "D").T
    nu_m = nu_t = 0.0
    if params.sigma_nu is not None:
        nu = draws[:, r : r + 2] @ safe_cholesky(params.sigma_nu, "sigma_nu").T
        nu_m, nu_t = nu[:, 0], nu[:, 1]
    x_t = x_m = None
    if cov is not None:
        x_t, x_m = _rows(cov[0], len(draws)), _rows(cov[1], len(draws))
    return conditional_survival(params, times, z, z_prime, omega, nu_m, nu_t, x_t, x_m)


def _survival_draws(params, times, z, z_prime, draws, cov) -> np.ndarray:
    if isinstance(params, Model1Params):
        return _model1_survival(params, times, z, z_prime, draws, cov)
    if params.link == "shared_random_effects":
        raise MediationLinkError("the shared random-effects link cannot carry a mediated effect")
    return _model2_survival(params, times, z, z_prime, draws, cov)


def counterfactual_survival(params, z: int, z_prime: int, t: float, mc: MCSampler, covariates=None) -> float:
    """
    S^{zz'}(t): survival of the final endpoint with treatment z on its direct
    path and z' on the surrogate, averaged over random effects and the
    observed covariate rows.
    """
    draws = mc.standard_normal(_draw_dim(params), stream_id=0)
    return float(np.mean(_survival_draws(params, np.array([float(t)]), z, z_prime, draws, covariates)[:, 0]))


def _check_times(params, times: np.ndarray):
    if np.any(np.diff(times) <= 0) or np.any(times < 0):
        raise ValueError("mediation times must be nonnegative and increasing")
    basis = params.basis_t
    if basis is not None:
        basis.check_support(times)


def mediation_curves(params, times, mc: MCSampler, covariates=None, tte_floor: float = 1e-3) -> MediationCurves:
    """
    NIE = S11 - S10, NDE = S10 - S00, TTE = NIE + NDE, PTE = NIE / TTE.

    The three counterfactual curves use the same draws. Times where
    |TTE| < tte_floor are flagged; PTE is reported there anyway.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    _check_times(params, times)
    draws = mc.standard_normal(_draw_dim(params), stream_id=0)
    s11 = _survival_draws(params, times, 1, 1, draws, covariates)
    s10 = _survival_draws(params, times, 1, 0, draws, covariates)
    s00 = _survival_draws(params, times, 0, 0, draws, covariates)

    nie_draws = s11 - s10
    m11, m10, m00 = s11.mean(axis=0), s10.mean(axis=0), s00.mean(axis=0)
    nie = m11 - m10
    nde = m10 - m00
    tte = nie + nde
    with np.errstate(divide="ignore", invalid="ignore"):
        pte = np.where(tte != 0, nie / tte, np.nan)
    unstable = np.abs(tte) < tte_floor
    for t in times[unstable]:
        logger.warning("Total effect near zero at t=%.4g; PTE is unstable there", t)
    nie_se = nie_draws.std(axis=0, ddof=1) / np.sqrt(len(draws)) if len(draws) > 1 else np.zeros_like(nie)
    return MediationCurves(times, m11, m10, m00, nie, nde, tte, pte, unstable, nie_se)


def mediation_times(settings, time_t, status_t=None) -> np.ndarray:
    """Explicit pte_times, or pte_ntimes points spread evenly over the observed event times.

    Explicit times must lie in (0, max observed T]. Without any final-endpoint
    event the even grid spans the observed follow-up instead.
    """
    time_t = np.asarray(time_t, dtype=float)
    if time_t.size == 0:
        raise ConfigError("pte_times", "no subjects to evaluate the mediation curves on")
    t_max = float(time_t.max())
    if settings.pte_times is not None:
        times = np.asarray(settings.pte_times, dtype=float)
        bad = times[(times <= 0) | (times > t_max)]
        if bad.size:
            raise ConfigError("pte_times", f"time {bad[0]:g} outside (0, {t_max:g}]")
        return times
    events = time_t if status_t is None else time_t[np.asarray(status_t) == 1]
    if events.size == 0:
        logger.warning("No final-endpoint events; spreading the mediation times over the follow-up")
        events = time_t
    return np.linspace(events.min(), events.max(), settings.pte_ntimes)


# -------------------------
# Parametric bootstrap
# -------------------------


@dataclass
class BootstrapResult:
    values: np.ndarray
    rejected: int

    def interval(self, level: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
        lower, upper = np.nanpercentile(self.values, [50 * level, 100 - 50 * level], axis=0)
        return lower, upper


def parametric_bootstrap(
    fit: FitResult,
    statistic: Callable,
    n_boot: int,
    seed: int = 0,
    max_reject_fraction: float = 0.5,
    threads: int | None = None,
    desc: str = "Bootstrap",
) -> BootstrapResult:
    """
    Recompute `statistic(params)` at parameter vectors drawn from
    N(x_hat, vcov) on the working scale.

    A draw whose statistic raises a NumericalError is rejected and redrawn
    from the replicate's own stream. Each replicate has a seed spawned from
    `seed`, so results do not depend on the thread count.
    """
    vcov = fit.vcov if fit.vcov is not None else invert_hessian(fit.hessian)
    chol = safe_cholesky(vcov, "parameter covariance")
    unpack = fit.unpack or (lambda x: x)
    seeds = np.random.SeedSequence(seed).spawn(n_boot)
    rejected = np.zeros(n_boot, dtype=int)

    with tqdm(total=n_boot, desc=desc, leave=False, disable=n_boot < 2) as bar:

        def replicate(i):
            rng = np.random.default_rng(seeds[i])
            value = None
            try:
                for attempt in Retrying(
                    retry=retry_if_exception_type(NumericalError),
                    stop=stop_after_attempt(MAX_ATTEMPTS),
                    reraise=True,
                ):
                    with attempt:
                        rejected[i] = attempt.retry_state.attempt_number - 1
                        x = fit.x + chol @ rng.standard_normal(len(fit.x))
                        value = np.asarray(statistic(unpack(x)), dtype=float)
                        if not np.all(np.isfinite(value)):
                            raise NotPositiveDefinite("bootstrap draw")
            except NumericalError:
                rejected[i] = MAX_ATTEMPTS
                value = None
            bar.update(1)
            return value

        results = map_ordered(replicate, range(n_boot), threads)

    total = int(rejected.sum())
    if total > max_reject_fraction * n_boot:
        raise TooManyRejections(total, n_boot)
    if total:
        logger.warning("%s: %d parameter draws rejected and redrawn", desc, total)
    shape = next((r.shape for r in results if r is not None), ())
    values = np.stack([r if r is not None else np.full(shape, np.nan) for r in results])
    logger.info("%s: %d replicates done", desc, n_boot)
    return BootstrapResult(values, total)


# -------------------------
# Reports
# -------------------------


@dataclass
class SurrogacyReport:
    ktau: float | None = None
    ktau_se: float | None = None
    ktau_ci: tuple[float, float] | None = None
    r2: R2Result | None = None
    r2_boot_ci: tuple[float, float] | None = None
    ste: float | None = None
    ste_direction: str = "upper"
    flags: list[str] = field(default_factory=list)

    @property
    def ste_hr(self) -> float | None:
        return float(np.exp(self.ste)) if self.ste is not None else None

    def to_dict(self) -> dict:
        r2 = None
        if self.r2 is not None:
            r2 = {
                "value": self.r2.r2,
                "reported": self.r2.reported,
                "se_delta": self.r2.se,
                "ci_delta": [self.r2.lower, self.r2.upper],
                "ci_boot": list(self.r2_boot_ci) if self.r2_boot_ci else None,
                "strength": self.r2.label,
            }
        return {
            "ktau": None
            if self.ktau is None
            else {"value": self.ktau, "mc_se": self.ktau_se, "ci_boot": list(self.ktau_ci) if self.ktau_ci else None},
            "r2_trial": r2,
            "ste": None if self.ste is None else {"value": self.ste, "hr": self.ste_hr, "direction": self.ste_direction},
            "flags": list(self.flags),
        }


def _trial_level(report: SurrogacyReport, fit: FitResult, kind: ModelKind, sigma_nu, beta_zt, run: RunConfig):
    try:
        report.r2 = r2_trial(sigma_nu, sigma_vcov(fit, kind), run.ste_level)
    except (NumericalError, ValueError) as err:
        logger.warning("Delta-method SE of R2_trial unavailable: %s", err)
        report.r2 = r2_trial(sigma_nu)
    var_b = 0.0
    if run.ste_include_var:
        idx = fit.natural_names.index("beta_zt")
        var_b = float(natural_vcov(fit)[idx, idx])
    direction = "upper" if beta_zt <= 0 else "lower"
    report.ste_direction = direction
    try:
        report.ste = ste(beta_zt, sigma_nu, var_b, run.ste_level, direction)
    except NoThreshold as err:
        logger.warning("No surrogate threshold effect: %s", err)
        report.flags.append("no_threshold")


def _curve_bands(fit, times, run, covariates, seed) -> dict:
    mc = MCSampler(run.mediation.pte_boot_nmc, seed, run.integration.antithetic)

    def statistic(p):
        return mediation_curves(p, times, mc, covariates, run.mediation.tte_floor).stacked()

    boot = parametric_bootstrap(
        fit,
        statistic,
        run.mediation.pte_nboot,
        seed,
        run.bootstrap.max_reject_fraction,
        run.integration.threads,
        desc="PTE bootstrap",
    )
    lower, upper = boot.interval()
    return {name: (lower[k], upper[k]) for k, name in enumerate(MediationCurves.CURVES)}


def evaluate_tte(fit: FitResult, ds: SurrogacyDataset, run: RunConfig, use_covariates: bool = False):
    """
    Surrogacy report, mediation curves (when gamma_fn is estimated) and the
    gamma_fn table for a fitted time-to-event surrogate model.
    """
    params: Model1Params = fit.params
    integ = run.integration
    mc_tau = MCSampler(integ.nb_mc_kendall, integ.seed, integ.antithetic)
    report = SurrogacyReport()
    report.ktau, report.ktau_se = kendall_tau(params, mc_tau)
    _trial_level(report, fit, "tte", params.sigma_nu, params.beta_zt, run)

    if run.bootstrap.nboot_kendall > 0 and fit.vcov is not None:
        mc_boot = mc_tau.with_points(min(integ.nb_mc_kendall, 1000)) if params.mediation else mc_tau

        def tau_r2(p):
            return [kendall_tau(p, mc_boot)[0], min(r2_trial(p.sigma_nu).r2, 1.0)]

        boot = parametric_bootstrap(
            fit,
            tau_r2,
            run.bootstrap.nboot_kendall,
            integ.seed + 1,
            run.bootstrap.max_reject_fraction,
            integ.threads,
            desc="Kendall tau / R2 bootstrap",
        )
        lower, upper = boot.interval()
        report.ktau_ci = (float(lower[0]), float(upper[0]))
        report.r2_boot_ci = (float(lower[1]), float(upper[1]))

    curves = gamma_table = None
    if params.mediation:
        covariates = ds.covariate_matrix() if use_covariates else None
        times = mediation_times(run.mediation, ds.column("time_t"), ds.column("status_t"))
        mc = MCSampler(run.mediation.pte_nmc, integ.seed, integ.antithetic)
        curves = mediation_curves(params, times, mc, covariates, run.mediation.tte_floor)
        if run.mediation.pte_boot and fit.vcov is not None:
            curves.bands = _curve_bands(fit, times, run, covariates, integ.seed + 2)
        if curves.unstable.any():
            report.flags.append("tte_near_zero")
        surrogate = ds.column("time_s")[ds.column("status_s") == 1]
        gamma_table = gamma_report(fit, np.quantile(surrogate, [0.25, 0.5, 0.75]), run.ste_level)
    return report, curves, gamma_table


def longitudinal_covariates(ds: LongitudinalDataset):
    """(survival covariate rows, baseline marker covariate rows) for covariate averaging."""
    x_t = ds.survival[list(ds.surv_covariates)].to_numpy(dtype=float) if ds.surv_covariates else np.zeros((ds.n_subjects, 0))
    if ds.long_covariates:
        first = ds.measurements.groupby("id", sort=True).first()
        x_m = first.reindex(ds.survival["id"])[list(ds.long_covariates)].fillna(0.0).to_numpy(dtype=float)
    else:
        x_m = np.zeros((ds.n_subjects, 0))
    return x_t, x_m


def evaluate_longitudinal(fit: FitResult, ds: LongitudinalDataset, run: RunConfig):
    """Trial-level measures (with center information) and mediation curves for the longitudinal model."""
    params: Model2Params = fit.params
    report = SurrogacyReport()
    if params.sigma_nu is not None:
        _trial_level(report, fit, "longitudinal", params.sigma_nu, params.beta_zt, run)
        if run.bootstrap.nboot_kendall > 0 and fit.vcov is not None:
            boot = parametric_bootstrap(
                fit,
                lambda p: [min(r2_trial(p.sigma_nu).r2, 1.0)],
                run.bootstrap.nboot_kendall,
                run.integration.seed + 1,
                run.bootstrap.max_reject_fraction,
                run.integration.threads,
                desc="R2 bootstrap",
            )
            lower, upper = boot.interval()
            report.r2_boot_ci = (float(lower[0]), float(upper[0]))
    else:
        report.flags.append("no_center_information")

    curves = None
    if run.model2 is not None and run.model2.mediation:
        integ = run.integration
        covariates = longitudinal_covariates(ds)
        times = mediation_times(run.mediation, ds.survival["time_t"].to_numpy(), ds.survival["status_t"].to_numpy())
        mc = MCSampler(run.mediation.pte_nmc, integ.seed, integ.antithetic)
        curves = mediation_curves(params, times, mc, covariates, run.mediation.tte_floor)
        if run.mediation.pte_boot and fit.vcov is not None:
            curves.bands = _curve_bands(fit, times, run, covariates, integ.seed + 2)
        if curves.unstable.any():
            report.flags.append("tte_near_zero")
    return report, curves
