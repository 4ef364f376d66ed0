"""Gaussian matching of log- and logit-transformed densities.

A positive (or unit-interval) random variable ``omega`` is mapped to the real
line with ``psi = log(omega)`` (or ``logit(omega)``) and the density of
``psi`` is approximated by a univariate Gaussian.  Three criteria are
supported for every family:

* Laplace: mode and negative inverse curvature of ``log p(psi)``.
* Variational: the minimiser of ``KL(q || p)``.
* Moment: the mean and variance of ``psi``.

plus the log-normal moment match of the original Gamma variable
(``MOMENT_ORI``).  Closed forms are in :func:`match`; the ``numeric_*``
functions and :func:`variational_numeric` compute the same quantities by
integration and optimisation and serve as independent checks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .errors import ConvergenceError, DomainError, NumericalError, UsageError
from .special_fns import (
    EULER_GAMMA,
    digamma,
    gauss_hermite,
    log_gamma,
    log_sigmoid,
    sigmoid,
    trigamma,
)

DEFAULT_QUAD_NODES = 64

_Z_HALF_WIDTH = 12.0


class MatchMethod(enum.Enum):
    LAPLACE = "laplace"
    VARIATIONAL = "variational"
    MOMENT = "moment"
    MOMENT_ORI = "moment-ori"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise UsageError(f"unknown matching method {value!r}")


@dataclass(frozen=True)
class GaussianApprox:
    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise NumericalError(f"non-finite Gaussian ({self.mean}, {self.variance})")
        if self.variance <= 0:
            raise NumericalError(f"non-positive variance {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def log_pdf(self, psi):
        psi = np.asarray(psi, dtype=float)
        return -0.5 * (np.log(2 * np.pi * self.variance) + (psi - self.mean) ** 2 / self.variance)


def _check_positive(**params):
    for name, value in params.items():
        if not (math.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be a finite positive number, got {value}")


class TransformedDensity:
    """Density of ``psi = g(omega)`` for a base distribution of ``omega``.

    Subclasses provide the log-density and its first two derivatives in the
    transformed basis, and the base distribution (as a frozen scipy object)
    used to size integration windows.
    """

    family: str

    def log_pdf(self, psi):
        raise NotImplementedError

    def dlog_pdf(self, psi):
        raise NotImplementedError

    def d2log_pdf(self, psi):
        raise NotImplementedError

    def transform(self, omega):
        return np.log(omega)

    def base_distribution(self):
        raise NotImplementedError

    def expected_log_pdf(self, mean, log_var, n_nodes=DEFAULT_QUAD_NODES):
        """E_q[log p(psi)] for q = N(mean, exp(log_var)) and its gradient.

        The gradient is the exact derivative of the quadrature sum with
        respect to (mean, log_var), so objective and gradient stay consistent.
        """
        x, w = gauss_hermite(n_nodes)
        std = math.exp(0.5 * log_var)
        psi = mean + std * x
        value = float(np.dot(w, self.log_pdf(psi)))
        dlp = w * self.dlog_pdf(psi)
        return value, np.array([np.sum(dlp), 0.5 * std * np.dot(dlp, x)])

    def support_window(self, tail: float = 1e-12, pad: float = 5.0):
        """Interval in the transformed basis holding all but ``2 * tail`` mass."""
        base = self.base_distribution()
        lo_w, hi_w = base.ppf(tail), base.isf(tail)
        lo = self.transform(lo_w) if lo_w > 0 else None
        hi = self.transform(hi_w)
        if lo is None or not np.isfinite(lo):
            # ppf underflowed to zero: use the left-tail power law of the density
            lo = self._left_tail_fallback(tail)
        return float(lo) - pad, float(hi) + pad

    def _left_tail_fallback(self, tail):
        raise NumericalError(f"{self.family}: cannot size integration window")

    @property
    def params(self) -> tuple:
        raise NotImplementedError


@dataclass(frozen=True)
class GammaLog(TransformedDensity):
    """``omega ~ Gamma(alpha, rate=beta)``, ``psi = log(omega)``."""

    alpha: float
    beta: float
    family = "gamma"

    def __post_init__(self):
        _check_positive(alpha=self.alpha, beta=self.beta)

    @property
    def params(self):
        return (self.alpha, self.beta)

    def log_pdf(self, psi):
        psi = np.asarray(psi, dtype=float)
        a, b = self.alpha, self.beta
        return a * math.log(b) - log_gamma(a) + a * psi - b * np.exp(psi)

    def dlog_pdf(self, psi):
        return self.alpha - self.beta * np.exp(psi)

    def d2log_pdf(self, psi):
        return -self.beta * np.exp(psi)

    def base_distribution(self):
        return stats.gamma(self.alpha, scale=1.0 / self.beta)

    def _left_tail_fallback(self, tail):
        # P(psi < t) ~ (beta e^t)^alpha / Gamma(alpha + 1) for t -> -inf
        a, b = self.alpha, self.beta
        return (math.log(tail) + log_gamma(a + 1.0)) / a - math.log(b)


@dataclass(frozen=True)
class BetaLogit(TransformedDensity):
    """``omega ~ Beta(alpha, beta)``, ``psi = logit(omega)``."""

    alpha: float
    beta: float
    family = "beta"

    def __post_init__(self):
        _check_positive(alpha=self.alpha, beta=self.beta)

    @property
    def params(self):
        return (self.alpha, self.beta)

    def log_pdf(self, psi):
        psi = np.asarray(psi, dtype=float)
        a, b = self.alpha, self.beta
        log_b = log_gamma(a) + log_gamma(b) - log_gamma(a + b)
        return -log_b + a * log_sigmoid(psi) + b * log_sigmoid(-psi)

    def dlog_pdf(self, psi):
        s = sigmoid(psi)
        return self.alpha * (1.0 - s) - self.beta * s

    def d2log_pdf(self, psi):
        s = sigmoid(psi)
        return -(self.alpha + self.beta) * s * (1.0 - s)

    def transform(self, omega):
        return np.log(omega) - np.log1p(-omega)

    def expected_log_pdf(self, mean, log_var, n_nodes=DEFAULT_QUAD_NODES):
        # Gauss-Hermite nodes spread out as the Gaussian widens and stop
        # resolving the unit-scale curvature of log sigmoid.  A trapezoid rule
        # in standardised coordinates with psi-spacing well below that scale
        # converges geometrically for this analytic integrand.
        std = math.exp(0.5 * log_var)
        step = min(0.05, 0.2 / std)
        half = int(math.ceil(_Z_HALF_WIDTH / step))
        z = np.linspace(-half * step, half * step, 2 * half + 1)
        w = np.exp(-0.5 * z * z) * (step / math.sqrt(2 * math.pi))
        psi = mean + std * z
        value = float(np.dot(w, self.log_pdf(psi)))
        dlp = w * self.dlog_pdf(psi)
        return value, np.array([np.sum(dlp), 0.5 * std * np.dot(dlp, z)])

    def base_distribution(self):
        return stats.beta(self.alpha, self.beta)

    def support_window(self, tail=1e-12, pad=5.0):
        # both tails are power laws in omega; solve them on the logit scale
        a, b = self.alpha, self.beta
        log_b = log_gamma(a) + log_gamma(b) - log_gamma(a + b)
        base = self.base_distribution()
        lo_w, hi_w = base.ppf(tail), base.isf(tail)
        if lo_w > 0:
            lo = float(self.transform(lo_w))
        else:
            lo = (math.log(tail) + log_b + math.log(a)) / a
        if hi_w < 1:
            hi = float(self.transform(hi_w))
        else:
            hi = -(math.log(tail) + log_b + math.log(b)) / b
        return lo - pad, hi + pad


@dataclass(frozen=True)
class ExpLog(TransformedDensity):
    """``omega ~ Exponential(rate=lam)``, ``psi = log(omega)``."""

    lam: float
    family = "exponential"

    def __post_init__(self):
        _check_positive(lam=self.lam)

    @property
    def params(self):
        return (self.lam,)

    def log_pdf(self, psi):
        psi = np.asarray(psi, dtype=float)
        return math.log(self.lam) + psi - self.lam * np.exp(psi)

    def dlog_pdf(self, psi):
        return 1.0 - self.lam * np.exp(psi)

    def d2log_pdf(self, psi):
        return -self.lam * np.exp(psi)

    def base_distribution(self):
        return stats.expon(scale=1.0 / self.lam)

    def _left_tail_fallback(self, tail):
        return math.log(tail) - math.log(self.lam)


@dataclass(frozen=True)
class InvGammaLog(TransformedDensity):
    """``omega ~ InvGamma(alpha, scale=beta)``, ``psi = log(omega)``."""

    alpha: float
    beta: float
    family = "invgamma"

    def __post_init__(self):
        _check_positive(alpha=self.alpha, beta=self.beta)

    @property
    def params(self):
        return (self.alpha, self.beta)

    def log_pdf(self, psi):
        psi = np.asarray(psi, dtype=float)
        a, b = self.alpha, self.beta
        return a * math.log(b) - log_gamma(a) - a * psi - b * np.exp(-psi)

    def dlog_pdf(self, psi):
        return -self.alpha + self.beta * np.exp(-psi)

    def d2log_pdf(self, psi):
        return -self.beta * np.exp(-psi)

    def base_distribution(self):
        return stats.invgamma(self.alpha, scale=self.beta)

    def support_window(self, tail=1e-12, pad=5.0):
        # mirror image of GammaLog(alpha, beta) under psi -> -psi
        lo, hi = GammaLog(self.alpha, self.beta).support_window(tail, pad)
        return -hi, -lo


@dataclass(frozen=True)
class ChiSqLog(TransformedDensity):
    """``omega ~ ChiSquared(k)``, ``psi = log(omega)``."""

    k: float
    family = "chisq"

    def __post_init__(self):
        _check_positive(k=self.k)

    @property
    def params(self):
        return (self.k,)

    def as_gamma(self) -> GammaLog:
        return GammaLog(0.5 * self.k, 0.5)

    def log_pdf(self, psi):
        return self.as_gamma().log_pdf(psi)

    def dlog_pdf(self, psi):
        return 0.5 * (self.k - np.exp(psi))

    def d2log_pdf(self, psi):
        return -0.5 * np.exp(psi)

    def base_distribution(self):
        return stats.chi2(self.k)

    def _left_tail_fallback(self, tail):
        return self.as_gamma()._left_tail_fallback(tail)


FAMILIES = {
    "gamma": GammaLog,
    "beta": BetaLogit,
    "exponential": ExpLog,
    "invgamma": InvGammaLog,
    "chisq": ChiSqLog,
}


def make_density(family: str, *params) -> TransformedDensity:
    try:
        cls = FAMILIES[family.lower()]
    except KeyError:
        raise UsageError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}") from None
    return cls(*map(float, params))


def log_pdf(d: TransformedDensity, psi):
    return d.log_pdf(psi)


def _laplace(d):
    if isinstance(d, GammaLog):
        return math.log(d.alpha / d.beta), 1.0 / d.alpha
    if isinstance(d, BetaLogit):
        a, b = d.alpha, d.beta
        return math.log(a / b), (a + b) / (a * b)
    if isinstance(d, ExpLog):
        return -math.log(d.lam), 1.0
    if isinstance(d, InvGammaLog):
        return math.log(d.beta / d.alpha), 1.0 / d.alpha
    if isinstance(d, ChiSqLog):
        return math.log(d.k), 2.0 / d.k
    raise UsageError(f"no Laplace match for {d!r}")


def _variational(d):
    if isinstance(d, GammaLog):
        return math.log(d.alpha / d.beta) - 0.5 / d.alpha, 1.0 / d.alpha
    if isinstance(d, ExpLog):
        return -math.log(d.lam) - 0.5, 1.0
    if isinstance(d, InvGammaLog):
        return math.log(d.beta / d.alpha) + 0.5 / d.alpha, 1.0 / d.alpha
    if isinstance(d, ChiSqLog):
        return math.log(d.k) - 1.0 / d.k, 2.0 / d.k
    raise UsageError(f"no closed-form variational match for {d!r}")


def _moment(d):
    if isinstance(d, GammaLog):
        return digamma(d.alpha) - math.log(d.beta), trigamma(d.alpha)
    if isinstance(d, BetaLogit):
        return digamma(d.alpha) - digamma(d.beta), trigamma(d.alpha) + trigamma(d.beta)
    if isinstance(d, ExpLog):
        return -math.log(d.lam) - EULER_GAMMA, math.pi**2 / 6.0
    if isinstance(d, InvGammaLog):
        return math.log(d.beta) - digamma(d.alpha), trigamma(d.alpha)
    if isinstance(d, ChiSqLog):
        return digamma(0.5 * d.k) + math.log(2.0), trigamma(0.5 * d.k)
    raise UsageError(f"no moment match for {d!r}")


def _moment_ori(d):
    if not isinstance(d, GammaLog):
        raise UsageError("moment-ori is only defined for the Gamma/log family")
    var = math.log1p(d.beta / d.alpha)
    return math.log(d.alpha / d.beta) - 0.5 * var, var


def match(d: TransformedDensity, method) -> GaussianApprox:
    """Closed-form Gaussian match of ``d`` in its transformed basis.

    Beta/logit has no closed-form variational solution; that combination is
    routed to :func:`variational_numeric`.
    """
    method = MatchMethod.parse(method)
    if method is MatchMethod.LAPLACE:
        mean, var = _laplace(d)
    elif method is MatchMethod.MOMENT:
        mean, var = _moment(d)
    elif method is MatchMethod.MOMENT_ORI:
        mean, var = _moment_ori(d)
    elif isinstance(d, BetaLogit):
        return variational_numeric(d)
    else:
        mean, var = _variational(d)
    return GaussianApprox(float(mean), float(var))


def kl_q_to_p(q: GaussianApprox, d: TransformedDensity, n_nodes: int = DEFAULT_QUAD_NODES) -> float:
    """KL(q || p_psi), with E_q[log p] from quadrature centred on ``q``."""
    neg_entropy = -0.5 * math.log(2 * math.pi * math.e * q.variance)
    return neg_entropy - d.expected_log_pdf(q.mean, math.log(q.variance), n_nodes)[0]


def _kl_and_grad(params, d, n_nodes):
    mean, log_var = params
    ell, grad = d.expected_log_pdf(mean, log_var, n_nodes)
    value = -0.5 * (math.log(2 * math.pi * math.e) + log_var) - ell
    return float(value), np.array([-grad[0], -0.5 - grad[1]])


def variational_numeric(
    d: TransformedDensity,
    init: GaussianApprox | None = None,
    tol: float = 1e-8,
    n_nodes: int = DEFAULT_QUAD_NODES,
    max_iter: int = 500,
) -> GaussianApprox:
    """Minimise KL(q || p) over (mean, log variance) numerically.

    Expectations use a Gauss-Hermite rule, so the objective and its gradient
    are deterministic.  The result satisfies ``||grad|| <= tol``.
    """
    if not (0 < tol <= 1e-2):
        raise DomainError("tol must lie in (0, 1e-2]")
    if init is None:
        init = GaussianApprox(*_laplace(d))
    x0 = np.array([init.mean, math.log(init.variance)])
    if not np.all(np.isfinite(x0)):
        raise DomainError("initial Gaussian must be finite")

    res = optimize.minimize(
        _kl_and_grad,
        x0,
        args=(d, n_nodes),
        jac=True,
        method="BFGS",
        options={"gtol": tol * 1e-2, "maxiter": max_iter},
    )
    x = res.x
    _, grad = _kl_and_grad(x, d, n_nodes)
    # polish with Newton steps on the exact 2x2 Hessian
    for _ in range(20):
        if np.linalg.norm(grad) <= tol * 1e-2:
            break
        hess = _kl_hessian(x, d, n_nodes)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        x_new = x - step
        _, g_new = _kl_and_grad(x_new, d, n_nodes)
        if not np.all(np.isfinite(g_new)) or np.linalg.norm(g_new) >= np.linalg.norm(grad):
            break
        x, grad = x_new, g_new
    if not np.all(np.isfinite(x)) or np.linalg.norm(grad) > tol:
        last = GaussianApprox(float(x[0]), float(math.exp(x[1]))) if np.all(np.isfinite(x)) else None
        raise ConvergenceError(
            f"variational matching of {d!r} stalled with |grad| = {np.linalg.norm(grad):.3g}",
            last=last,
        )
    return GaussianApprox(float(x[0]), float(math.exp(x[1])))


def variational_mc(
    d: TransformedDensity,
    n_samples: int = 4096,
    rng_seed: int = 0,
    init: GaussianApprox | None = None,
) -> GaussianApprox:
    """Reparameterised Monte Carlo variant of :func:`variational_numeric`.

    Draws ``eps`` once and minimises the sample-average KL estimate
    ``-H[q] - mean log p(mean + std * eps)`` with exact pathwise gradients.
    Meant for parity experiments; the quadrature version is the default.
    """
    if n_samples < 2:
        raise DomainError("n_samples must be >= 2")
    eps = np.random.default_rng(rng_seed).standard_normal(n_samples)
    init = init or GaussianApprox(*_laplace(d))

    def objective(params):
        mean, log_var = params
        std = math.exp(0.5 * log_var)
        psi = mean + std * eps
        value = -0.5 * (math.log(2 * math.pi * math.e) + log_var) - np.mean(d.log_pdf(psi))
        g = d.dlog_pdf(psi)
        return float(value), np.array([-np.mean(g), -0.5 - 0.5 * std * np.mean(g * eps)])

    res = optimize.minimize(objective, [init.mean, math.log(init.variance)], jac=True, method="BFGS")
    if not np.all(np.isfinite(res.x)):
        raise ConvergenceError(f"Monte Carlo variational matching of {d!r} diverged")
    return GaussianApprox(float(res.x[0]), float(math.exp(res.x[1])))


def _kl_hessian(params, d, n_nodes):
    # finite differences of the analytic gradient; only used for polishing
    h = 1e-6
    hess = np.empty((2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        hess[:, i] = (_kl_and_grad(params + e, d, n_nodes)[1] - _kl_and_grad(params - e, d, n_nodes)[1]) / (2 * h)
    return 0.5 * (hess + hess.T)


def _trapezoid_converged(f, lo, hi, rtol=1e-13, start=4096, max_points=2**22):
    """Trapezoid rule on [lo, hi], halving the step until successive values agree."""
    n = start
    grid = np.linspace(lo, hi, n + 1)
    vals = f(grid)
    prev = np.trapezoid(vals, grid, axis=-1)
    while n < max_points:
        mid = 0.5 * (grid[:-1] + grid[1:])
        mid_vals = f(mid)
        h = (hi - lo) / n
        # refined trapezoid = half the coarse value plus the new midpoints
        cur = 0.5 * prev + 0.5 * h * np.sum(mid_vals, axis=-1)
        merged_grid = np.empty(2 * n + 1)
        merged_grid[0::2] = grid
        merged_grid[1::2] = mid
        merged_vals = np.empty(vals.shape[:-1] + (2 * n + 1,))
        merged_vals[..., 0::2] = vals
        merged_vals[..., 1::2] = mid_vals
        grid, vals, n = merged_grid, merged_vals, 2 * n
        scale = np.maximum(np.abs(cur), 1.0)
        if np.all(np.abs(cur - prev) <= rtol * scale):
            return cur
        prev = cur
    return prev


def numeric_moments(d: TransformedDensity, tail: float = 1e-20) -> GaussianApprox:
    """Mean and variance of ``psi`` by trapezoid integration of the density."""
    lo, hi = d.support_window(tail)

    def integrand(psi):
        p = np.exp(d.log_pdf(psi))
        return np.stack([p, psi * p])

    with np.errstate(over="ignore", under="ignore"):
        z, m1 = _trapezoid_converged(integrand, lo, hi)
    if not all(np.isfinite([z, m1])) or z <= 0:
        raise NumericalError(f"moment integration failed for {d!r}")
    mean = m1 / z
    # second pass on the centred integrand avoids cancellation in E[psi^2] - mean^2
    with np.errstate(over="ignore", under="ignore"):
        var = _trapezoid_converged(lambda s: (s - mean) ** 2 * np.exp(d.log_pdf(s)), lo, hi) / z
    if not (np.isfinite(var) and var > 0):
        raise NumericalError(f"variance integration failed for {d!r}")
    return GaussianApprox(float(mean), float(var))


def numeric_mode_hessian(d: TransformedDensity, max_iter: int = 200) -> GaussianApprox:
    """Mode by safeguarded Newton iteration and variance from the curvature."""
    x = numeric_moments(d).mean
    lo, hi = d.support_window()
    # bracket the root of the (monotone decreasing) first derivative
    while d.dlog_pdf(lo) <= 0:
        lo -= 10.0
    while d.dlog_pdf(hi) >= 0:
        hi += 10.0
    for _ in range(max_iter):
        g = float(d.dlog_pdf(x))
        h = float(d.d2log_pdf(x))
        if g > 0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        step = -g / h if h < 0 else np.inf
        x_new = x + step
        if not (np.isfinite(x_new) and lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    else:
        raise NumericalError(f"Newton mode search did not settle for {d!r}")
    curv = float(d.d2log_pdf(x))
    if not (np.isfinite(curv) and curv < 0):
        raise NumericalError(f"non-negative curvature at the mode of {d!r}")
    return GaussianApprox(float(x), -1.0 / curv)
