"""
Levenberg-Marquardt maximization of penalized log-likelihoods.

Derivatives come from finite differences of the objective alone. Each
iteration solves (H + mu * diag|H|) step = g with H the negated Hessian,
accepts the step only if the objective does not decrease, and shrinks or
grows mu accordingly. Convergence needs all three criteria below their
limits: max |step|, |change in objective| and g' H^-1 g.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import chi2, norm

from .config import OptimizerLimits
from .errors import NonFiniteObjective, NumericalError, SingularHessian

logger = logging.getLogger(__name__)

MU_START = 1e-3
MU_MIN = 1e-12
MU_MAX = 1e12
RICHARDSON_EVERY = 5
RICHARDSON_TOL = 1e-4


@dataclass
class FitResult:
    x: np.ndarray
    names: list[str]
    hessian: np.ndarray
    loglik_pen: float
    n_iter: int
    criteria: tuple[float, float, float]
    converged: bool
    vcov: np.ndarray | None = None
    params: object = None
    loglik: float | None = None
    lcv: float | None = None
    kappa_used: object = None
    trace: list[float] = field(default_factory=list)
    to_natural: Callable | None = None
    natural_names: list[str] | None = None
    n_obs: int | None = None
    unpack: Callable | None = None


def step_sizes(x: np.ndarray) -> np.ndarray:
    return np.maximum(1e-4, 1e-4 * np.abs(x))


def _safe(objective, x) -> float:
    try:
        value = float(objective(x))
    except NumericalError as err:
        logger.debug("Objective failed at trial point: %s", err)
        return -np.inf
    return value if np.isfinite(value) else -np.inf


def fd_gradient(objective, x, h=None) -> np.ndarray:
    """Central-difference gradient with one Richardson extrapolation step."""
    x = np.asarray(x, dtype=float)
    h = step_sizes(x) if h is None else np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    grad = np.empty_like(x)
    for i in range(len(x)):
        grad[i] = _richardson(objective, x, i, h[i])[0]
    return grad


def _central(objective, x, i, h) -> tuple[float, float, float]:
    e = np.zeros_like(x)
    e[i] = h
    up, down = objective(x + e), objective(x - e)
    return (up - down) / (2.0 * h), up, down


def _richardson(objective, x, i, h) -> tuple[float, float, float, float]:
    coarse, up, down = _central(objective, x, i, h)
    fine = _central(objective, x, i, 0.5 * h)[0]
    return (4.0 * fine - coarse) / 3.0, coarse, up, down


def fd_derivatives(objective, x, f0: float | None = None, check: bool = False) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Objective value, gradient and Hessian at x.

    The Hessian diagonal reuses the gradient's +-h evaluations; off-diagonal
    terms use the four-point cross difference.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    h = step_sizes(x)
    f0 = objective(x) if f0 is None else f0
    grad = np.empty(n)
    hess = np.empty((n, n))
    worst = 0.0
    for i in range(n):
        grad[i], coarse, up, down = _richardson(objective, x, i, h[i])
        hess[i, i] = (up - 2.0 * f0 + down) / h[i] ** 2
        scale = max(abs(grad[i]), 1.0)
        worst = max(worst, abs(coarse - grad[i]) / scale)
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            value = (
                objective(x + ei + ej) - objective(x + ei - ej) - objective(x - ei + ej) + objective(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = value
    if check and worst > RICHARDSON_TOL:
        logger.warning("Finite-difference gradient: Richardson disagreement %.2e exceeds %.0e", worst, RICHARDSON_TOL)
    return f0, grad, hess


def _solve_damped(neg_hess: np.ndarray, grad: np.ndarray, mu: float) -> np.ndarray | None:
    diag = np.maximum(np.abs(np.diag(neg_hess)), 1e-8)
    a = neg_hess + mu * np.diag(diag)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    return np.linalg.solve(chol.T, np.linalg.solve(chol, grad))


def _gradient_criterion(neg_hess: np.ndarray, grad: np.ndarray) -> float:
    try:
        return float(grad @ np.linalg.solve(neg_hess, grad))
    except np.linalg.LinAlgError:
        return np.inf


def maximize(
    objective: Callable[[np.ndarray], float],
    init,
    limits: OptimizerLimits | None = None,
    maxit: int | None = None,
    names: list[str] | None = None,
) -> FitResult:
    """
    Maximize `objective` from `init`.

    Returns the best point found. When maxit is reached the result carries
    converged=False instead of raising.
    """
    limits = limits or OptimizerLimits()
    maxit = limits.maxit if maxit is None else maxit
    x = np.asarray(init, dtype=float).copy()
    names = list(names) if names is not None else [f"x{i}" for i in range(len(x))]

    f = float(objective(x))
    if not np.isfinite(f):
        raise NonFiniteObjective(f)

    mu = MU_START
    trace = [f]
    criteria = (np.inf, np.inf, np.inf)
    converged = False
    n_iter = 0
    neg_hess = None

    for n_iter in range(1, maxit + 1):
        _, grad, hess = fd_derivatives(objective, x, f0=f, check=n_iter % RICHARDSON_EVERY == 0)
        neg_hess = -0.5 * (hess + hess.T)
        grad_crit = _gradient_criterion(neg_hess, grad)

        step, f_new = None, -np.inf
        while mu <= MU_MAX:
            step = _solve_damped(neg_hess, grad, mu)
            if step is not None:
                f_new = _safe(objective, x + step)
                if f_new >= f:
                    mu = max(mu / 10.0, MU_MIN)
                    break
            mu *= 10.0
        else:
            step = None

        if step is None:
            # no improving step: stationary up to finite-difference noise
            criteria = (0.0, 0.0, grad_crit)
            converged = grad_crit < limits.limderiv
            logger.info("Iteration %d: no ascent step found (gradient criterion %.3e)", n_iter, grad_crit)
            if not converged:
                raise SingularHessian("damped Hessian could not produce an ascent step")
            break

        criteria = (float(np.max(np.abs(step))), abs(f_new - f), grad_crit)
        x = x + step
        f = f_new
        trace.append(f)
        logger.info(
            "Iteration %d: penalized loglik %.6f, criteria param %.2e loglik %.2e gradient %.2e, mu %.1e",
            n_iter,
            f,
            *criteria,
            mu,
        )
        if criteria[0] < limits.limparam and criteria[1] < limits.limlogl and criteria[2] < limits.limderiv:
            converged = True
            break

    # Hessian at the returned point, for the covariance matrix
    _, _, hess = fd_derivatives(objective, x, f0=f)
    neg_hess = -0.5 * (hess + hess.T)

    if not converged:
        logger.warning("No convergence after %d iterations; returning the best point found", maxit)

    result = FitResult(
        x=x,
        names=names,
        hessian=neg_hess,
        loglik_pen=f,
        n_iter=n_iter,
        criteria=criteria,
        converged=converged,
        trace=trace,
    )
    try:
        result.vcov = invert_hessian(neg_hess)
    except SingularHessian as err:
        logger.warning("Covariance matrix unavailable: %s", err)
    return result


def invert_hessian(neg_hess: np.ndarray) -> np.ndarray:
    """Inverse of the negated Hessian; it must be positive definite after diagonal scaling."""
    d = np.sqrt(np.abs(np.diag(neg_hess)))
    if np.any(d == 0) or not np.all(np.isfinite(neg_hess)):
        raise SingularHessian("Hessian has a zero or non-finite diagonal entry")
    scaled = neg_hess / np.outer(d, d)
    eig = np.linalg.eigvalsh(scaled)
    if eig.min() < 1e-10:
        raise SingularHessian(f"Hessian is not positive definite (smallest scaled eigenvalue {eig.min():.3e})")
    inv = np.linalg.inv(scaled) / np.outer(d, d)
    return 0.5 * (inv + inv.T)


# -------------------------
# Standard errors and model selection
# -------------------------


def fd_jacobian(fn, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    h = step_sizes(x)
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2.0 * h[i]))
    return np.column_stack(cols)


def natural_vcov(fit: FitResult) -> np.ndarray:
    """Covariance of the natural-scale parameters by the delta method."""
    vcov = fit.vcov if fit.vcov is not None else invert_hessian(fit.hessian)
    if fit.to_natural is None:
        return vcov
    jac = fd_jacobian(fit.to_natural, fit.x)
    cov = jac @ vcov @ jac.T
    return 0.5 * (cov + cov.T)


def standard_errors(fit: FitResult) -> pd.Series:
    """
    Wald standard errors, sqrt(diag(H^-1)) on the working scale carried to the
    natural scale by the delta method when the fit has a transform.
    """
    cov = natural_vcov(fit)
    names = fit.natural_names if fit.to_natural is not None else fit.names
    return pd.Series(np.sqrt(np.clip(np.diag(cov), 0.0, None)), index=names)


def wald_table(fit: FitResult, level: float = 0.05) -> pd.DataFrame:
    """Estimate, SE, z, two-sided p and a normal confidence interval per parameter."""
    estimate = np.asarray(fit.to_natural(fit.x)) if fit.to_natural is not None else fit.x
    se = standard_errors(fit)
    q = norm.ppf(1.0 - level / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = estimate / se.to_numpy()
    table = pd.DataFrame(
        {
            "estimate": estimate,
            "se": se.to_numpy(),
            "z": z,
            "p": 2.0 * norm.sf(np.abs(z)),
            "lower": estimate - q * se.to_numpy(),
            "upper": estimate + q * se.to_numpy(),
        },
        index=se.index,
    )
    return table


def lcv(fit: FitResult, objective_unpenalized=None, n_obs: int | None = None, hessian_unpenalized=None) -> float:
    """
    Approximate likelihood cross-validation criterion
    (1/n) [trace(H_pen^-1 H) - l(x)], lower is better.

    H (the unpenalized negated Hessian) is computed by finite differences of
    `objective_unpenalized` unless given directly.
    """
    n_obs = n_obs or fit.n_obs
    if not n_obs:
        raise ValueError("lcv needs the number of observations")
    loglik = fit.loglik
    if hessian_unpenalized is None:
        if objective_unpenalized is None:
            raise ValueError("give objective_unpenalized or hessian_unpenalized")
        loglik, _, hess = fd_derivatives(objective_unpenalized, fit.x)
        hessian_unpenalized = -0.5 * (hess + hess.T)
    elif loglik is None:
        loglik = float(objective_unpenalized(fit.x))
    vcov = fit.vcov if fit.vcov is not None else invert_hessian(fit.hessian)
    trace = float(np.trace(vcov @ hessian_unpenalized))
    return (trace - loglik) / n_obs


def global_wald_test(fit: FitResult, names: list[str]) -> tuple[float, int, float]:
    """Joint Wald chi-square test that the named natural-scale parameters are all zero."""
    estimate = np.asarray(fit.to_natural(fit.x)) if fit.to_natural is not None else fit.x
    all_names = fit.natural_names if fit.to_natural is not None else fit.names
    idx = [all_names.index(n) for n in names]
    theta = estimate[idx]
    cov = natural_vcov(fit)[np.ix_(idx, idx)]
    stat = float(theta @ np.linalg.solve(cov, theta))
    return stat, len(idx), float(chi2.sf(stat, len(idx)))
