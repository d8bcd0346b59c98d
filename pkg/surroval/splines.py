"""
Spline bases for baseline hazards and the mediation function.

M-splines carry the baseline hazards (each basis function integrates to 1),
I-splines are their running integrals (cumulative hazards), and plain
B-splines carry the mediation function gamma(s). The curvature penalty
matrix gives coef' P coef = integral of (lambda0'')^2.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline
from scipy.optimize import nnls
from scipy.special import roots_legendre
from scipy.stats import norm

from .errors import DegenerateData, KnotRangeError, NumericalError, OrderTooLow, OutOfSupport
from .optimize import lcv, maximize

logger = logging.getLogger(__name__)

KNOT_RANGE = (4, 20)
MEDIATION_KNOT_RANGE = (1, 5)

BasisKind = Literal["M", "I", "B"]
Placement = Literal["equidistant", "percentile"]


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """
    A clamped spline basis.

    `knots` holds the distinct breakpoints, boundary knots included, so
    `n_knots` is the total count (inner + 2 boundary) and `n_basis` is
    n_inner + order.
    """

    order: int
    knots: np.ndarray
    kind: BasisKind
    placement: Placement = "equidistant"

    @property
    def lower(self) -> float:
        return float(self.knots[0])

    @property
    def upper(self) -> float:
        return float(self.knots[-1])

    @property
    def inner_knots(self) -> np.ndarray:
        return self.knots[1:-1]

    @property
    def n_inner(self) -> int:
        return len(self.knots) - 2

    @property
    def n_knots(self) -> int:
        return len(self.knots)

    @property
    def n_basis(self) -> int:
        return self.n_inner + self.order

    @cached_property
    def augmented(self) -> np.ndarray:
        return _clamped(self.knots, self.order)

    def check_support(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tol = 1e-12 * max(1.0, abs(self.upper))
        bad = (t < self.lower - tol) | (t > self.upper + tol) | ~np.isfinite(t)
        if bad.any():
            raise OutOfSupport(t[bad][0], self.lower, self.upper)
        return np.clip(t, self.lower, self.upper)


@dataclass(frozen=True)
class PenaltySpec:
    kappa_s: float = 0.0
    kappa_t: float = 0.0

    def __post_init__(self):
        for name in ("kappa_s", "kappa_t"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


def _clamped(breaks: np.ndarray, order: int) -> np.ndarray:
    return np.concatenate([np.repeat(breaks[0], order), breaks[1:-1], np.repeat(breaks[-1], order)])


# -------------------------
# Construction
# -------------------------


def make_basis(
    kind: BasisKind,
    n_knots: int,
    placement: Placement = "equidistant",
    data_times=None,
    order: int = 4,
    upper: float | None = None,
) -> SplineBasis:
    """
    Build a hazard basis with `n_knots` total knots on [0, max(data_times)].

    Equidistant placement splits the range evenly; percentile placement puts
    the inner knots at empirical quantiles of `data_times`.
    """
    low, high = KNOT_RANGE
    if not low <= n_knots <= high:
        raise KnotRangeError(n_knots, low, high)
    times = _positive_times(data_times)
    upper = float(times.max()) if upper is None else float(upper)
    n_inner = n_knots - 2
    if placement == "equidistant":
        inner = np.linspace(0.0, upper, n_knots)[1:-1]
    elif placement == "percentile":
        inner = np.quantile(times, np.linspace(0.0, 1.0, n_inner + 2)[1:-1])
    else:
        raise ValueError(f"unknown knot placement '{placement}'")
    return _finish(kind, order, upper, inner, placement)


def make_mediation_basis(g_nknots: int, data_times, upper: float, order: int = 4) -> SplineBasis:
    """B-spline basis for gamma(s) with `g_nknots` inner knots at quantiles of the surrogate times."""
    low, high = MEDIATION_KNOT_RANGE
    if not low <= g_nknots <= high:
        raise KnotRangeError(g_nknots, low, high)
    times = _positive_times(data_times)
    inner = np.quantile(times, np.linspace(0.0, 1.0, g_nknots + 2)[1:-1])
    return _finish("B", order, float(upper), inner, "percentile")


def _positive_times(data_times) -> np.ndarray:
    if data_times is None:
        raise DegenerateData("no data times given for knot placement")
    times = np.asarray(data_times, dtype=float).ravel()
    times = times[np.isfinite(times)]
    if times.size == 0:
        raise DegenerateData("no data times given for knot placement")
    if (times <= 0).any():
        raise DegenerateData("data times must be positive for knot placement")
    if np.ptp(times) == 0:
        raise DegenerateData(f"all {times.size} data times equal {times[0]}")
    return times


def _finish(kind, order, upper, inner, placement) -> SplineBasis:
    knots = np.concatenate([[0.0], np.asarray(inner, dtype=float), [upper]])
    if np.any(np.diff(knots) <= 0):
        raise DegenerateData(f"knots are not strictly increasing: {np.round(knots, 6).tolist()}")
    return SplineBasis(order=order, knots=knots, kind=kind, placement=placement)


# -------------------------
# Evaluation
# -------------------------


def _b_design(aug: np.ndarray, degree: int, t: np.ndarray) -> np.ndarray:
    return BSpline.design_matrix(t, aug, degree).toarray()


def _m_design(basis: SplineBasis, t: np.ndarray) -> np.ndarray:
    aug = basis.augmented
    k = basis.order
    widths = aug[k:] - aug[:-k]
    return _b_design(aug, k - 1, t) * (k / widths)


def _i_design(basis: SplineBasis, t: np.ndarray) -> np.ndarray:
    # I_k(t) = sum_{j > k} B_j,order+1(t) on the knot vector clamped one order higher
    aug = _clamped(basis.knots, basis.order + 1)
    b = _b_design(aug, basis.order, t)
    tail = np.cumsum(b[:, ::-1], axis=1)[:, ::-1]
    return tail[:, 1:]


def design_matrix(basis: SplineBasis, t, extrapolate: bool = False) -> np.ndarray:
    """
    Basis values at every time in `t`, shape (len(t), n_basis).

    With `extrapolate`, times outside the support are evaluated at the nearest
    boundary (constant extension); otherwise they raise OutOfSupport.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if extrapolate:
        t = np.clip(t, basis.lower, basis.upper)
    else:
        t = basis.check_support(t)
    if basis.kind == "M":
        return _m_design(basis, t)
    if basis.kind == "I":
        return _i_design(basis, t)
    return _b_design(basis.augmented, basis.order - 1, t)


def eval_basis(basis: SplineBasis, t: float) -> np.ndarray:
    return design_matrix(basis, [t])[0]


def m_derivative_matrix(basis: SplineBasis, t, nu: int) -> np.ndarray:
    """nu-th time derivative of the M-spline basis functions."""
    t = basis.check_support(t)
    aug = basis.augmented
    k = basis.order
    widths = aug[k:] - aug[:-k]
    spline = BSpline(aug, np.eye(basis.n_basis), k - 1, extrapolate=False)
    values = spline.derivative(nu)(t) if nu > 0 else spline(t)
    return np.nan_to_num(values) * (k / widths)


def curvature_penalty(basis: SplineBasis) -> np.ndarray:
    """
    Matrix P such that coef' P coef = integral over the support of
    (sum_k coef_k M_k''(t))^2 dt. Exact: Gauss-Legendre per knot interval.
    """
    if basis.order < 3:
        raise OrderTooLow(basis.order)
    nodes, weights = roots_legendre(basis.order)
    pts, wts = [], []
    for a, b in zip(basis.knots[:-1], basis.knots[1:], strict=True):
        half = 0.5 * (b - a)
        pts.append(a + half * (nodes + 1.0))
        wts.append(half * weights)
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)
    d2 = m_derivative_matrix(basis, pts, 2)
    penalty = (d2 * wts[:, None]).T @ d2
    return 0.5 * (penalty + penalty.T)


# -------------------------
# Baseline hazards
# -------------------------


@dataclass(frozen=True, eq=False)
class SplineHazard:
    """lambda0(t) = sum_k coef_k M_k(t); Lambda0(t) = sum_k coef_k I_k(t)."""

    basis: SplineBasis
    coef: np.ndarray
    extrapolate: bool = False
    _i_basis: SplineBasis = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))
        object.__setattr__(
            self, "_i_basis", SplineBasis(self.basis.order, self.basis.knots, "I", self.basis.placement)
        )

    @property
    def upper(self) -> float:
        return self.basis.upper

    def hazard(self, t) -> np.ndarray:
        m = SplineBasis(self.basis.order, self.basis.knots, "M", self.basis.placement)
        return design_matrix(m, t, extrapolate=self.extrapolate) @ self.coef

    def cumulative(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        base = design_matrix(self._i_basis, t, extrapolate=self.extrapolate) @ self.coef
        if self.extrapolate:
            over = np.clip(t - self.upper, 0.0, None)
            if over.any():
                base = base + over * self.hazard([self.upper])[0]
        return base

    def inverse_cumulative(self, y) -> np.ndarray:
        return invert_cumulative(self.cumulative, y, self.upper, self.hazard([self.upper])[0] if self.extrapolate else 0.0)


@dataclass(frozen=True)
class WeibullHazard:
    """lambda0(t) = (shape/scale) (t/scale)^(shape-1)."""

    shape: float
    scale: float
    extrapolate: bool = True

    def hazard(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        with np.errstate(divide="ignore"):
            return (self.shape / self.scale) * np.power(t / self.scale, self.shape - 1.0)

    def cumulative(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.power(np.clip(t, 0.0, None) / self.scale, self.shape)

    def inverse_cumulative(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.scale * np.power(y, 1.0 / self.shape)


def invert_cumulative(cumulative, y, upper: float, tail_rate: float, tol: float = 1e-10) -> np.ndarray:
    """
    Solve Lambda0(t) = y for nondecreasing Lambda0 by vectorized bisection on
    [0, upper]; beyond `upper` the cumulative grows at `tail_rate`
    (inf when it does not grow).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    top = cumulative([upper])[0]
    out = np.empty_like(y)
    beyond = y >= top
    if beyond.any():
        with np.errstate(divide="ignore"):
            out[beyond] = np.where(tail_rate > 0, upper + (y[beyond] - top) / tail_rate, np.inf)
    inside = ~beyond
    if inside.any():
        target = y[inside]
        lo = np.zeros_like(target)
        hi = np.full_like(target, upper)
        scale = max(1.0, upper)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = cumulative(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) <= tol * scale:
                break
        out[inside] = 0.5 * (lo + hi)
    return out


def constant_hazard(rate: float, upper: float) -> SplineHazard:
    """Order-1 spline on a single interval: lambda0 = rate, extended beyond `upper`."""
    basis = SplineBasis(order=1, knots=np.array([0.0, float(upper)]), kind="M")
    return SplineHazard(basis, np.array([rate * upper]), extrapolate=True)


# -------------------------
# Marginal hazard fits
# -------------------------


def nelson_aalen_coef(basis: SplineBasis, times, events) -> np.ndarray:
    """Nonnegative M-spline coefficients whose I-spline sum tracks the Nelson-Aalen estimate."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    grid = np.unique(times[events == 1])
    if grid.size == 0:
        raise DegenerateData("no events to initialize the baseline hazard")
    at_risk = np.array([(times >= g).sum() for g in grid], dtype=float)
    n_events = np.array([((times == g) & (events == 1)).sum() for g in grid], dtype=float)
    cum = np.cumsum(n_events / at_risk)
    design = design_matrix(SplineBasis(basis.order, basis.knots, "I", basis.placement), grid)
    coef, _ = nnls(design, cum)
    floor = 1e-2 * max(coef.max(), cum[-1] / max(basis.n_basis, 1))
    return np.maximum(coef, floor)


def marginal_loglik(basis: SplineBasis, coef, times, events) -> float:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    hazard = SplineHazard(basis, coef)
    with np.errstate(divide="ignore"):
        log_h = np.log(hazard.hazard(times[events]))
    return float(log_h.sum() - hazard.cumulative(times).sum())


def fit_marginal_hazard(basis: SplineBasis, times, events, kappa: float, limits=None):
    """
    Penalized spline hazard fit without random effects.

    Returns (coef, lcv). Coefficients are optimized on the square-root scale.
    """
    penalty = curvature_penalty(basis)
    start = np.sqrt(nelson_aalen_coef(basis, times, events))

    def unpenalized(x):
        return marginal_loglik(basis, x**2, times, events)

    def penalized(x):
        c = x**2
        return unpenalized(x) - kappa * float(c @ penalty @ c)

    fit = maximize(penalized, start, limits=limits)
    fit.loglik = unpenalized(fit.x)
    try:
        score = lcv(fit, unpenalized, n_obs=len(times))
    except NumericalError as err:
        logger.warning("LCV unavailable for kappa=%g: %s", kappa, err)
        score = np.inf
    return fit.x**2, score


def select_kappa(basis: SplineBasis, times, events, grid, limits=None) -> tuple[float, np.ndarray]:
    """Smoothing parameter with the smallest marginal LCV over `grid`."""
    best = (np.inf, None, None)
    for kappa in grid:
        coef, score = fit_marginal_hazard(basis, times, events, kappa, limits)
        logger.info("kappa=%g: marginal LCV %.5f", kappa, score)
        if score < best[0]:
            best = (score, kappa, coef)
    if best[1] is None:
        raise DegenerateData("no smoothing parameter on the grid gave a usable fit")
    logger.info("Selected kappa=%g (LCV %.5f)", best[1], best[0])
    return float(best[1]), best[2]


def hazard_bands(basis: SplineBasis, sqrt_coef, vcov, grid, level: float = 0.05) -> pd.DataFrame:
    """
    Baseline hazard and survival on `grid` with pointwise delta-method bands.

    `vcov` is the working-scale covariance of the square-root coefficients.
    """
    sqrt_coef = np.asarray(sqrt_coef, dtype=float)
    coef = sqrt_coef**2
    grid = np.asarray(grid, dtype=float)
    m = design_matrix(SplineBasis(basis.order, basis.knots, "M", basis.placement), grid, extrapolate=True)
    i = design_matrix(SplineBasis(basis.order, basis.knots, "I", basis.placement), grid, extrapolate=True)
    q = norm.ppf(1.0 - level / 2.0)
    jac_h = m * (2.0 * sqrt_coef)
    jac_c = i * (2.0 * sqrt_coef)
    se_h = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", jac_h, vcov, jac_h), 0.0, None))
    se_c = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", jac_c, vcov, jac_c), 0.0, None))
    hazard = m @ coef
    cumulative = i @ coef
    return pd.DataFrame(
        {
            "time": grid,
            "hazard": hazard,
            "hazard_lower": np.clip(hazard - q * se_h, 0.0, None),
            "hazard_upper": hazard + q * se_h,
            "survival": np.exp(-cumulative),
            "survival_lower": np.exp(-(cumulative + q * se_c)),
            "survival_upper": np.exp(-np.clip(cumulative - q * se_c, 0.0, None)),
        }
    )
