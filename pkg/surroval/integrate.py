"""
Numerical integration over random-effect distributions.

Gauss-Hermite rules are stored in standard-normal expectation form:
E[g(X)], X ~ N(0, 1), is approximated by sum(weights * g(nodes)).
Monte-Carlo draws come from counter-based Philox streams keyed by
(seed, stream id), so a trial's draws do not depend on evaluation order.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Literal

import numpy as np
from scipy.special import roots_hermite, roots_legendre

from .errors import BadCurvature, NodeCountError, NotPositiveDefinite
from .utils.parallel import ordered_sum

logger = logging.getLogger(__name__)

MAX_NODES = 128
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: Literal["standard_GH", "pseudo_adaptive_GH"] = "standard_GH"

    @property
    def n_nodes(self) -> int:
        return len(self.weights)

    def expect(self, values) -> float:
        return float(np.dot(self.weights, values))


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def gh_rule(n_nodes: int) -> QuadratureRule:
    """Gauss-Hermite rule with n_nodes points, rescaled to N(0, 1) expectations."""
    if not 1 <= int(n_nodes) <= MAX_NODES:
        raise NodeCountError(n_nodes)
    x, w = roots_hermite(int(n_nodes))
    # e^{-x^2} weight -> standard normal: x * sqrt(2), w / sqrt(pi)
    nodes = x * np.sqrt(2.0)
    weights = w / np.sqrt(np.pi)
    if n_nodes % 2 == 1:
        nodes[n_nodes // 2] = 0.0
    return QuadratureRule(_readonly(nodes), _readonly(weights), "standard_GH")


def adapt_rule(rule: QuadratureRule, mode: float, curvature: float) -> QuadratureRule:
    """
    Re-centre a rule on `mode` with scale curvature^(-1/2).

    The returned weights still approximate expectations under N(0, 1):
    sum(w' g(b)) ~ E[g(X)], with b = mode + x / sqrt(curvature) and
    w' = w * sigma * phi(b) / phi(x).
    """
    if not np.isfinite(curvature) or curvature <= 0:
        raise BadCurvature(curvature)
    sigma = curvature**-0.5
    b = mode + sigma * rule.nodes
    log_ratio = 0.5 * (rule.nodes**2 - b**2)
    weights = rule.weights * sigma * np.exp(log_ratio)
    return QuadratureRule(b, weights, "pseudo_adaptive_GH")


def product_rule(rule: QuadratureRule, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor product of a 1-D rule: nodes (n^dim, dim) and weights (n^dim,)."""
    idx = np.array(list(product(range(rule.n_nodes), repeat=dim)), dtype=int).reshape(-1, dim)
    nodes = rule.nodes[idx]
    weights = np.prod(rule.weights[idx], axis=1)
    return nodes, weights


def adapt_product(rule: QuadratureRule, mode: np.ndarray, scale_chol: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Multivariate pseudo-adaptive nodes b = mode + A x over the tensor grid.

    Returns the nodes and log Lebesgue weights, so that
    integral h(b) db ~ sum(exp(log_w) * h(b)). Callers add the log prior
    density of b themselves, which lets the prior change between
    optimizer iterations while the nodes stay fixed.
    """
    mode = np.atleast_1d(np.asarray(mode, dtype=float))
    a = np.atleast_2d(np.asarray(scale_chol, dtype=float))
    dim = len(mode)
    x, w = product_rule(rule, dim)
    b = mode + x @ a.T
    _, logdet = np.linalg.slogdet(a)
    log_phi_x = -0.5 * np.sum(x**2, axis=1) - dim * LOG_SQRT_2PI
    return b, np.log(w) + logdet - log_phi_x


@lru_cache(maxsize=None)
def gl_rule(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = roots_legendre(int(n_nodes))
    return _readonly(0.5 * (x + 1.0)), _readonly(0.5 * w)


def gl_segments(breaks, n_nodes: int = 15) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights over consecutive intervals of `breaks`."""
    breaks = np.asarray(breaks, dtype=float)
    x, w = gl_rule(n_nodes)
    widths = np.diff(breaks)
    nodes = breaks[:-1, None] + widths[:, None] * x[None, :]
    weights = widths[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


# -------------------------
# Monte-Carlo
# -------------------------


@dataclass(frozen=True)
class MCSampler:
    """Seeded standard-normal draws; identical (seed, stream_id) gives identical draws."""

    n_points: int
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def generator(self, stream_id: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(int(stream_id),))
        return np.random.Generator(np.random.Philox(seq))

    def standard_normal(self, dim: int, stream_id: int = 0) -> np.ndarray:
        rng = self.generator(stream_id)
        if not self.antithetic:
            return rng.standard_normal((self.n_points, dim))
        half = (self.n_points + 1) // 2
        draws = rng.standard_normal((half, dim))
        return np.concatenate([draws, -draws])[: self.n_points]

    def with_points(self, n_points: int) -> "MCSampler":
        return MCSampler(n_points, self.seed, self.antithetic)


def safe_cholesky(cov, what: str = "covariance matrix") -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise NotPositiveDefinite(what)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefinite(what) from err


def mc_gaussian(sampler: MCSampler, cov, f, stream_id: int = 0, vectorized: bool = False) -> tuple[float, float]:
    """
    Monte-Carlo mean of f(X), X ~ N(0, cov), with its standard error.

    With `vectorized`, f receives the whole (n_points, dim) draw matrix and
    returns one value per row.
    """
    chol = safe_cholesky(cov)
    x = sampler.standard_normal(chol.shape[0], stream_id) @ chol.T
    values = np.asarray(f(x) if vectorized else [f(row) for row in x], dtype=float)
    n = len(values)
    estimate = ordered_sum(values) / n
    if n < 2:
        return estimate, 0.0
    sd = float(np.sqrt(ordered_sum((values - estimate) ** 2) / (n - 1)))
    return estimate, sd / np.sqrt(n)
