"""
Data generators for both joint models.

Every trial (or center) draws from its own stream spawned from the
scenario seed, so output is identical for a given seed and independent of
how trials are scheduled. Event times are drawn by inverting cumulative
hazards: closed form through the baseline inverse for the frailty model,
bracketing plus bisection for the longitudinal model whose exponent moves
with the marker.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import LongitudinalDataset, SurrogacyDataset, _finish_longitudinal, _finish_tte
from .errors import RootFindingFailure
from .integrate import gl_rule, safe_cholesky
from .model_long import Model2Params
from .model_tte import Model1Params
from .splines import constant_hazard

logger = logging.getLogger(__name__)

BISECTION_TOL = 1e-10
MAX_DOUBLINGS = 80
CUMULATIVE_NODES = 30


@dataclass
class Scenario:
    k_trials: int
    n_per_trial: int
    params: Model1Params | Model2Params
    admin_censoring: float = np.inf
    censoring_rate: float = 0.0
    seed: int = 0
    covariate: bool = False
    schedule_step: float = 0.1
    with_centers: bool = True

    def __post_init__(self):
        if self.k_trials < 1 or self.n_per_trial < 1:
            raise ValueError("a scenario needs at least one trial and one subject per trial")
        if self.censoring_rate < 0:
            raise ValueError(f"censoring rate must be >= 0, got {self.censoring_rate}")
        if not self.schedule_step > 0:
            raise ValueError(f"schedule step must be > 0, got {self.schedule_step}")

    def streams(self) -> list[np.random.Generator]:
        return [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(self.k_trials)]


def _censoring(sc: Scenario, rng, n: int) -> np.ndarray:
    c = np.full(n, float(sc.admin_censoring))
    if sc.censoring_rate > 0:
        c = np.minimum(c, rng.exponential(1.0 / sc.censoring_rate, n))
    return c


# -------------------------
# Time-to-event surrogate
# -------------------------


def _latent_times(params: Model1Params, a_s, a_t, rng) -> tuple[np.ndarray, np.ndarray]:
    """Latent (S, T) given linear predictors; T's hazard jumps by exp(gamma(S)) once S has occurred."""
    hs, ht = params.hazard_s(True), params.hazard_t(True)
    s = hs.inverse_cumulative(rng.exponential(size=len(a_s)) * np.exp(-a_s))
    target = rng.exponential(size=len(a_t)) * np.exp(-a_t)
    if not params.mediation:
        return s, ht.inverse_cumulative(target)
    at_s = ht.cumulative(s)
    shifted = at_s + (target - at_s) * np.exp(-params.gamma_fn(s))
    return s, ht.inverse_cumulative(np.where(target <= at_s, target, shifted))


def simulate_model1(sc: Scenario) -> SurrogacyDataset:
    p: Model1Params = sc.params
    chol = safe_cholesky(p.sigma_nu, "sigma_nu")
    frames = []
    for k, rng in enumerate(sc.streams(), start=1):
        n = sc.n_per_trial
        u = np.sqrt(p.gamma2) * rng.standard_normal()
        nu_s, nu_t = chol @ rng.standard_normal(2)
        omega = np.sqrt(p.theta2) * rng.standard_normal(n)
        z = rng.binomial(1, 0.5, n)
        a_s = omega + u + z * (nu_s + p.beta_zs)
        a_t = p.zeta * omega + p.alpha * u + z * (nu_t + p.beta_zt)
        x = None
        if sc.covariate:
            x = rng.standard_normal(n)
            if p.beta_s_cov.size:
                a_s = a_s + x * p.beta_s_cov[0]
                a_t = a_t + x * p.beta_t_cov[0]
        s, t = _latent_times(p, a_s, a_t, rng)
        c = _censoring(sc, rng, n)

        time_t = np.minimum(t, c)
        time_s = np.minimum(s, time_t)
        frame = pd.DataFrame(
            {
                "patient_id": (k - 1) * n + np.arange(1, n + 1),
                "trial_id": k,
                "trt": z,
                "time_s": time_s,
                "status_s": (s <= time_t).astype(int),
                "time_t": time_t,
                "status_t": (t <= c).astype(int),
            }
        )
        if x is not None:
            frame["x"] = x
        frames.append(frame)
    frame = pd.concat(frames, ignore_index=True)
    covs = ("x",) if sc.covariate else ()
    ds = _finish_tte(frame, covs, {c: [c] for c in covs}, 1.0, original_ids=True)
    logger.info(
        "Simulated %d subjects in %d trials (%d surrogate events, %d final events)",
        ds.n_subjects,
        ds.n_trials,
        int(ds.frame["status_s"].sum()),
        int(ds.frame["status_t"].sum()),
    )
    return ds


def simulate_latent_pairs(params: Model1Params, n: int, seed: int = 0) -> pd.DataFrame:
    """Uncensored (S, T) pairs, each with its own frailties (w, u) and no treatment."""
    rng = np.random.default_rng(seed)
    omega = np.sqrt(params.theta2) * rng.standard_normal(n)
    u = np.sqrt(params.gamma2) * rng.standard_normal(n)
    s, t = _latent_times(params, omega + u, params.zeta * omega + params.alpha * u, rng)
    return pd.DataFrame({"s": s, "t": t})


# -------------------------
# Longitudinal surrogate
# -------------------------


def _exponent(p: Model2Params, s, z, omega, nu_m, lin):
    """log hazard minus log baseline at times s (subjects x nodes)."""
    w0 = omega[:, :1]
    w1 = omega[:, 1:2] if omega.shape[1] > 1 else np.zeros_like(w0)
    z = z[:, None]
    if p.link == "current_level":
        level = p.b0 + w0 + (p.b1 + w1) * s + (p.beta_zm + nu_m[:, None]) * z + p.beta_zm_time * z * s
        h = p.eta[0] * level
    elif p.link == "current_slope":
        h = p.eta[0] * (p.b1 + w1 + p.beta_zm_time * z) + 0.0 * s
    else:
        h = (omega @ p.eta)[:, None] + 0.0 * s
    return lin[:, None] + h


def _cumulative(p: Model2Params, t, z, omega, nu_m, lin) -> np.ndarray:
    x, w = gl_rule(CUMULATIVE_NODES)
    s = t[:, None] * x[None, :]
    base = p.baseline(extrapolate=True)
    h = base.hazard(s.ravel()).reshape(s.shape)
    return np.sum(t[:, None] * w[None, :] * h * np.exp(_exponent(p, s, z, omega, nu_m, lin)), axis=1)


def invert_joint_cumulative(p: Model2Params, target, z, omega, nu_m, lin, ids=None) -> np.ndarray:
    """Solve Lambda(t) = target per subject by doubling a bracket then bisecting."""
    n = len(target)
    lo = np.zeros(n)
    hi = np.ones(n)
    for _ in range(MAX_DOUBLINGS):
        short = _cumulative(p, hi, z, omega, nu_m, lin) < target
        if not short.any():
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, 2.0 * hi, hi)
    else:
        bad = int(np.flatnonzero(_cumulative(p, hi, z, omega, nu_m, lin) < target)[0])
        raise RootFindingFailure(ids[bad] if ids is not None else bad + 1)
    for _ in range(400):
        if np.max((hi - lo) / np.maximum(1.0, hi)) <= BISECTION_TOL:
            break
        mid = 0.5 * (lo + hi)
        below = _cumulative(p, mid, z, omega, nu_m, lin) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def simulate_model2(sc: Scenario) -> LongitudinalDataset:
    p: Model2Params = sc.params
    chol_d = safe_cholesky(p.D, "D")
    chol_nu = safe_cholesky(p.sigma_nu, "sigma_nu") if p.sigma_nu is not None else None
    surv_frames, meas_frames = [], []
    for k, rng in enumerate(sc.streams(), start=1):
        n = sc.n_per_trial
        nu_m = nu_t = 0.0
        if chol_nu is not None:
            nu_m, nu_t = chol_nu @ rng.standard_normal(2)
        omega = rng.standard_normal((n, p.n_random)) @ chol_d.T
        z = rng.binomial(1, 0.5, n).astype(float)
        lin = (p.beta_zt + nu_t) * z
        x = None
        if sc.covariate:
            x = rng.standard_normal(n)
            if p.beta_t_cov.size:
                lin = lin + x * p.beta_t_cov[0]
        ids = (k - 1) * n + np.arange(1, n + 1)
        t = invert_joint_cumulative(p, rng.exponential(size=n), z, omega, np.full(n, nu_m), lin, ids)
        c = _censoring(sc, rng, n)
        time_t = np.minimum(t, c)

        surv = pd.DataFrame({"id": ids, "time_t": time_t, "status_t": (t <= c).astype(int), "trt": z.astype(int)})
        if sc.with_centers:
            surv["center_id"] = k
        if x is not None:
            surv["x"] = x
        surv_frames.append(surv)

        for i in range(n):
            tv = np.arange(0.0, time_t[i], sc.schedule_step)
            w1 = omega[i, 1] if p.n_random > 1 else 0.0
            level = (
                p.b0
                + omega[i, 0]
                + (p.b1 + w1) * tv
                + (p.beta_zm + nu_m) * z[i]
                + p.beta_zm_time * z[i] * tv
            )
            noise = np.sqrt(p.sigma_eps2) * rng.standard_normal(len(tv)) if p.sigma_eps2 > 0 else 0.0
            meas_frames.append(pd.DataFrame({"id": ids[i], "timevar": tv, "value": level + noise}))

    survival = pd.concat(surv_frames, ignore_index=True)
    measurements = pd.concat(meas_frames, ignore_index=True)
    covs = ("x",) if sc.covariate else ()
    ds = _finish_longitudinal(survival, measurements, covs, (), {c: [c] for c in covs}, 1.0)
    logger.info(
        "Simulated %d subjects with %d measurements (%d events)",
        ds.n_subjects,
        ds.n_measurements,
        int(ds.survival["status_t"].sum()),
    )
    return ds


# -------------------------
# Reference scenarios
# -------------------------


def reference_model1_params(upper: float = 10.0) -> Model1Params:
    """Constant baselines, strong trial-level association (R2_trial = 0.64)."""
    hs = constant_hazard(0.5, upper)
    ht = constant_hazard(0.3, upper)
    return Model1Params(
        basis_s=hs.basis,
        basis_t=ht.basis,
        coef_s=hs.coef,
        coef_t=ht.coef,
        theta2=2.0,
        gamma2=0.1,
        sigma_nu=np.array([[0.3, 0.24], [0.24, 0.3]]),
        beta_zs=-0.5,
        beta_zt=-0.4,
    )


def reference_model2_params(link: str = "current_level", with_centers: bool = True) -> Model2Params:
    """Weibull baseline, random intercept and slope, treatment lowers the marker."""
    return Model2Params(
        link=link,
        hazard_kind="Weibull",
        coef_t=np.array([1.2, 5.0]),
        beta_fixed=np.array([3.0, -0.2]),
        beta_zm=-0.5,
        sigma_eps2=0.25,
        D=np.array([[0.5, 0.0], [0.0, 0.05]]),
        sigma_nu=np.array([[0.3, 0.24], [0.24, 0.3]]) if with_centers else None,
        beta_zt=-0.3,
        eta=np.array([0.3, 0.3]) if link == "shared_random_effects" else np.array([0.3]),
    )
