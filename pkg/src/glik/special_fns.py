"""Special functions and Gaussian quadrature.

``digamma`` and ``trigamma`` shift the argument above 6 with the standard
recurrences and then apply the Stirling-type asymptotic series.  ``log_gamma``
defers to the C library ``lgamma``.  Gauss-Hermite rules are built with the
Golub-Welsch eigenvalue method, polished by Newton steps and cached per node count.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .errors import DomainError

EULER_GAMMA = 0.57721566490153286061

_SHIFT = 6.0

# B_{2n} / (2n) for n = 1..7
_DIGAMMA_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_{2n} for n = 1..7
_TRIGAMMA_COEFFS = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _positive_array(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        raise DomainError(f"{name}: empty input")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} requires finite positive arguments")
    return arr


def _unwrap(arr):
    return float(arr) if arr.ndim == 0 else arr


def log_gamma(x):
    """Natural log of the gamma function for positive arguments."""
    arr = _positive_array(x, "log_gamma")
    out = np.vectorize(math.lgamma, otypes=[float])(arr)
    return _unwrap(out)


def digamma(x):
    """Digamma function, the derivative of ``log_gamma``."""
    x = _positive_array(x, "digamma").copy()
    acc = np.zeros_like(x)
    small = x < _SHIFT
    while np.any(small):
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < _SHIFT
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for c in reversed(_DIGAMMA_COEFFS):
        series = (series + c) * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return _unwrap(out)


def trigamma(x):
    """Trigamma function, the derivative of ``digamma``."""
    x = _positive_array(x, "trigamma").copy()
    acc = np.zeros_like(x)
    small = x < _SHIFT
    while np.any(small):
        acc[small] += 1.0 / (x[small] * x[small])
        x[small] += 1.0
        small = x < _SHIFT
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    for c in reversed(_TRIGAMMA_COEFFS):
        series = (series + c) * inv2
    out = acc + inv + 0.5 * inv2 + series * inv
    return _unwrap(out)


def log_multivariate_beta(alpha) -> float:
    """log B(alpha) = sum_k log Gamma(alpha_k) - log Gamma(sum_k alpha_k)."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size < 2:
        raise DomainError("log_multivariate_beta needs a vector of length >= 2")
    lg = log_gamma(alpha)
    return float(np.sum(lg) - log_gamma(float(np.sum(alpha))))


def log_sum_exp(v, axis=None):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty vector")
    vmax = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(v, axis=-1):
    """Softmax along ``axis`` with the max shifted out."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise DomainError("softmax of an empty vector")
    z = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=float)
    vmax = np.max(v, axis=axis, keepdims=True)
    shifted = v - vmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def sigmoid(x):
    return _unwrap(expit(np.asarray(x, dtype=float)))


def log_sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _unwrap(out)


class QuadratureKind(enum.Enum):
    GAUSS_HERMITE = "gauss_hermite"
    TRAPEZOID = "trapezoid"


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights of a one-dimensional quadrature rule.

    For Gauss-Hermite rules the nodes are already mapped to
    ``center + sqrt(2) * scale * x`` while the weights are left in their
    physicists' normalisation (summing to sqrt(pi)); use :meth:`expect` to
    take Gaussian expectations.  Trapezoid rules integrate over
    ``[center - scale, center + scale]`` with :meth:`integrate`.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: QuadratureKind

    def __post_init__(self):
        if len(self.nodes) != len(self.weights) or len(self.nodes) < 2:
            raise DomainError("quadrature needs >= 2 matching nodes and weights")
        if np.any(self.weights <= 0):
            raise DomainError("quadrature weights must be positive")

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def expect(self, f) -> float:
        """E[f(psi)] under the Gaussian the rule was built for."""
        if self.kind is not QuadratureKind.GAUSS_HERMITE:
            raise DomainError("expect() is only defined for Gauss-Hermite rules")
        return float(np.dot(self.weights, f(self.nodes)) / math.sqrt(math.pi))


def _hermite_orthonormal(n: int, x):
    """Orthonormal Hermite polynomials p_{n-1}, p_n (weight exp(-x^2)) at x."""
    prev = np.zeros_like(x)
    cur = np.full_like(x, math.pi**-0.25)
    for k in range(n):
        prev, cur = cur, math.sqrt(2.0 / (k + 1)) * x * cur - math.sqrt(k / (k + 1)) * prev
    return prev, cur


@lru_cache(maxsize=64)
def _hermite_nodes(n: int):
    # Golub-Welsch on the symmetric Jacobi matrix of the physicists' Hermite
    # polynomials gives starting nodes
    off = np.sqrt(np.arange(1, n) / 2.0)
    jacobi = np.diag(off, 1) + np.diag(off, -1)
    nodes = np.linalg.eigvalsh(jacobi)
    # Newton polish; p_n' = sqrt(2n) p_{n-1}
    for _ in range(3):
        p_prev, p_n = _hermite_orthonormal(n, nodes)
        nodes = nodes - p_n / (math.sqrt(2.0 * n) * p_prev)
    # Christoffel-Darboux weights keep full relative accuracy in the tails
    p_prev, _ = _hermite_orthonormal(n, nodes)
    weights = 1.0 / (n * p_prev**2)
    # symmetrise to remove eigensolver asymmetry
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def make_quadrature(kind, n: int, center: float = 0.0, scale: float = 1.0) -> QuadratureRule:
    kind = QuadratureKind(kind)
    if int(n) != n or n < 2:
        raise DomainError("quadrature size must be an integer >= 2")
    if not (np.isfinite(scale) and scale > 0) or not np.isfinite(center):
        raise DomainError("quadrature scale must be positive and center finite")
    n = int(n)
    if kind is QuadratureKind.GAUSS_HERMITE:
        x, w = _hermite_nodes(n)
        return QuadratureRule(center + math.sqrt(2.0) * scale * x, w.copy(), kind)
    nodes = np.linspace(center - scale, center + scale, n)
    h = nodes[1] - nodes[0]
    weights = np.full(n, h)
    weights[[0, -1]] = 0.5 * h
    return QuadratureRule(nodes, weights, kind)


def gauss_hermite(n: int = 64):
    """Standard-normal nodes and normalised weights (summing to one)."""
    x, w = _hermite_nodes(int(n))
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)
