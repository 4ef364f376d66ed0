"""Exact heteroscedastic GP regression for classification-as-regression.

Class labels are replaced by Gaussian pseudo-observations (one target and
noise variance per point and output), after which each output is an
independent GP regression with a zero mean function and an exponentiated
quadratic kernel shared across outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .bayes_linear import mc_class_probs
from .errors import DomainError, NumericalError
from .likelihood_approx import ApproxConfig, binary_targets, class_targets
from .special_fns import log_sigmoid, log_softmax

JITTER = 1e-8
MAX_JITTER = 1e-4
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class EQKernel:
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not (self.variance > 0 and self.lengthscale > 0):
            raise DomainError("kernel variance and lengthscale must be positive")
        if not (math.isfinite(self.variance) and math.isfinite(self.lengthscale)):
            raise DomainError("kernel hyperparameters must be finite")

    @classmethod
    def from_log(cls, log_variance, log_lengthscale):
        return cls(math.exp(log_variance), math.exp(log_lengthscale))

    @property
    def log_params(self):
        return np.array([math.log(self.variance), math.log(self.lengthscale)])


def _sq_dists(A, B):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DomainError(f"input dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    d2 = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def kernel_matrix(kernel: EQKernel, A, B=None):
    """variance * exp(-|a - b|^2 / (2 lengthscale^2))."""
    if B is None:
        B = A
    return kernel.variance * np.exp(-0.5 * _sq_dists(A, B) / kernel.lengthscale**2)


@dataclass(frozen=True)
class HeteroGP:
    """GP regression with per-point, per-output noise.

    ``targets`` and ``noise`` have shape (N, K).  ``jitter`` is relative to
    the kernel variance.
    """

    X: np.ndarray
    targets: np.ndarray
    noise: np.ndarray
    kernel: EQKernel
    jitter: float = JITTER
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.targets, dtype=float)
        V = np.asarray(self.noise, dtype=float)
        if Y.ndim == 1:
            Y, V = Y[:, None], V.reshape(-1, 1)
        if X.shape[0] < 1 or Y.shape != V.shape or Y.shape[0] != X.shape[0]:
            raise DomainError("X, targets and noise must agree on N (targets/noise N x K)")
        if np.any(~(V > 0)):
            raise DomainError("noise variances must be positive")
        if not 0 < self.jitter <= MAX_JITTER:
            raise DomainError(f"jitter must lie in (0, {MAX_JITTER}]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "targets", Y)
        object.__setattr__(self, "noise", V)

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def K(self):
        return self.targets.shape[1]

    def with_kernel(self, kernel: EQKernel) -> "HeteroGP":
        return replace(self, kernel=kernel)

    def gram(self):
        if "gram" not in self._cache:
            self._cache["gram"] = kernel_matrix(self.kernel, self.X)
        return self._cache["gram"]

    def factor(self, k: int):
        """Cholesky of K + diag(noise_k) + jitter I, escalating the jitter.

        Returns ``(L, jitter_used)`` where ``jitter_used`` is absolute.
        """
        key = ("chol", k)
        if key not in self._cache:
            Kf = self.gram()
            base = Kf + np.diag(self.noise[:, k])
            if not np.all(np.isfinite(base)):
                raise NumericalError("non-finite kernel matrix")
            rel = self.jitter
            while True:
                jit = rel * self.kernel.variance
                try:
                    L = linalg.cholesky(base + jit * np.eye(self.N), lower=True)
                    break
                except linalg.LinAlgError:
                    rel *= 10.0
                    if rel > MAX_JITTER:
                        raise NumericalError("Cholesky failed even with maximal jitter") from None
            self._cache[key] = (L, jit)
        return self._cache[key]


def from_labels(X, labels, K: int, kernel: EQKernel, cfg: ApproxConfig | None, binary: bool = False) -> HeteroGP:
    """Build a GP on pseudo-observations of ``labels``.

    Multiclass labels use the Dirichlet/Gamma construction with one output per
    class; ``binary=True`` uses a single logistic output.  ``cfg=None`` gives
    one-hot (or 0/1) targets with unit noise.
    """
    if binary:
        m, v = binary_targets(labels, cfg)
        return HeteroGP(X, m[:, None], v[:, None], kernel)
    m, v = class_targets(labels, K, cfg)
    return HeteroGP(X, m, v, kernel)


def log_marginal_likelihood(gp: HeteroGP) -> float:
    total = 0.0
    for k in range(gp.K):
        L, _ = gp.factor(k)
        alpha = linalg.cho_solve((L, True), gp.targets[:, k])
        total += -0.5 * gp.targets[:, k] @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * gp.N * LOG_2PI
    return float(total)


def log_marginal_likelihood_grad(gp: HeteroGP):
    """Value and gradient w.r.t. (log variance, log lengthscale).

    Uses dL/dt = 0.5 * sum_k [a_k' dK a_k - tr((K + V_k)^-1 dK)].  The jitter
    scales with the kernel variance, so it is part of dK/dlog variance.
    """
    Kf = gp.gram()
    d2 = _sq_dists(gp.X, gp.X)
    dK_len = Kf * d2 / gp.kernel.lengthscale**2
    value, grad = 0.0, np.zeros(2)
    for k in range(gp.K):
        L, jit = gp.factor(k)
        dK_var = Kf + jit * np.eye(gp.N)
        a = linalg.cho_solve((L, True), gp.targets[:, k])
        Kinv = linalg.cho_solve((L, True), np.eye(gp.N))
        value += -0.5 * gp.targets[:, k] @ a - np.sum(np.log(np.diag(L))) - 0.5 * gp.N * LOG_2PI
        for i, dK in enumerate((dK_var, dK_len)):
            grad[i] += 0.5 * (a @ dK @ a - np.sum(Kinv * dK))
    return float(value), grad


def predict_latent(gp: HeteroGP, Xs):
    """Posterior mean and variance of each latent output at ``Xs``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    Ks = kernel_matrix(gp.kernel, gp.X, Xs)
    mean = np.empty((Xs.shape[0], gp.K))
    var = np.empty_like(mean)
    for k in range(gp.K):
        L, _ = gp.factor(k)
        a = linalg.cho_solve((L, True), gp.targets[:, k])
        B = linalg.solve_triangular(L, Ks, lower=True)
        mean[:, k] = Ks.T @ a
        var[:, k] = gp.kernel.variance - np.sum(B * B, axis=0)
    if np.any(var < -1e-8 * gp.kernel.variance):
        raise NumericalError("negative predictive variance")
    return mean, np.maximum(var, 1e-12)


def predict_class_proba(gp: HeteroGP, Xs, n_samples: int = 1024, rng_seed=0):
    """Monte Carlo class probabilities; rows sum to one.

    A single-output GP is treated as a logistic model and returns
    ``[p(y=0), p(y=1)]`` per row.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    mean, var = predict_latent(gp, Xs)
    return mc_class_probs(mean, var, n_samples, np.random.default_rng(rng_seed))


def landscape(X, labels, K, log_lengthscales, log_variances, cfg: ApproxConfig | None, binary=False):
    """Log marginal likelihood on a grid; rows index log variance, columns log lengthscale.

    Cells whose factorisation fails hold NaN.
    """
    template = from_labels(X, labels, K, EQKernel(), cfg, binary)
    out = np.full((len(log_variances), len(log_lengthscales)), np.nan)
    for i, lv in enumerate(log_variances):
        for j, ll in enumerate(log_lengthscales):
            try:
                out[i, j] = log_marginal_likelihood(template.with_kernel(EQKernel.from_log(lv, ll)))
            except (NumericalError, DomainError, OverflowError):
                pass
    return out


def landscape_argmax(log_lengthscales, log_variances, values):
    """(log lengthscale, log variance) of the best finite grid cell."""
    masked = np.where(np.isfinite(values), values, -np.inf)
    i, j = np.unravel_index(np.argmax(masked), masked.shape)
    return float(log_lengthscales[j]), float(log_variances[i])


class _BudgetExhausted(Exception):
    pass


def fit_hyperparams(gp: HeteroGP, init: EQKernel | None = None, budget: int = 300, n_starts: int = 3):
    """Maximise the log marginal likelihood over the log hyperparameters.

    Multi-start Nelder-Mead; starts are ``init`` and ``init`` shifted by +-1
    in both log coordinates.  ``budget`` caps the total number of likelihood
    evaluations (the first is always ``init``).  Returns the best kernel seen,
    which is never worse than ``init``.
    """
    if budget < 1:
        raise DomainError("budget must be >= 1")
    init = init or gp.kernel
    x0 = init.log_params
    best = {"x": x0, "f": -np.inf}
    counter = {"n": 0, "cap": budget}

    def objective(x):
        if counter["n"] >= counter["cap"]:
            raise _BudgetExhausted
        counter["n"] += 1
        try:
            val = log_marginal_likelihood(gp.with_kernel(EQKernel.from_log(*x)))
        except (NumericalError, DomainError, OverflowError):
            return np.inf
        if not np.isfinite(val):
            return np.inf
        if val > best["f"]:
            best["x"], best["f"] = np.array(x, dtype=float), val
        return -val

    objective(x0)
    remaining = budget - 1
    starts = [x0, x0 + 1.0, x0 - 1.0][:n_starts]
    shares = [remaining // len(starts) + (1 if i < remaining % len(starts) else 0) for i in range(len(starts))]
    for start, share in zip(starts, shares):
        if share <= 0:
            continue
        counter["cap"] = counter["n"] + share
        try:
            optimize.minimize(
                objective,
                start,
                method="Nelder-Mead",
                options={"maxfev": share, "xatol": 1e-6, "fatol": 1e-9},
            )
        except _BudgetExhausted:
            pass
    if not np.isfinite(best["f"]):
        raise NumericalError("every hyperparameter evaluation failed")
    return EQKernel.from_log(*best["x"])


def _kl_to_prior(gp: HeteroGP, k: int):
    """KL[q(f_k) || p(f_k)] at the training inputs, plus q's marginals.

    With q the heteroscedastic regression posterior, the KL reduces to
    0.5 [a'Ka - tr((K+V)^-1 K) + log|K+V| - sum log v] with a = (K+V)^-1 y,
    which avoids inverting the (possibly ill-conditioned) prior covariance.
    """
    L, jit = gp.factor(k)
    Kp = gp.gram() + jit * np.eye(gp.N)
    y = gp.targets[:, k]
    a = linalg.cho_solve((L, True), y)
    B = linalg.solve_triangular(L, Kp, lower=True)
    trace = np.trace(linalg.cho_solve((L, True), Kp))
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    kl = 0.5 * (a @ Kp @ a - trace + logdet - np.sum(np.log(gp.noise[:, k])))
    mean = Kp @ a
    var = np.diag(Kp) - np.sum(B * B, axis=0)
    return float(kl), mean, np.maximum(var, 1e-12)


@dataclass
class ELBOTerms:
    kl: float
    expected_loglik: float
    expected_loglik_stderr: float

    @property
    def value(self):
        return self.expected_loglik - self.kl


def elbo_terms(X, labels, K, kernel: EQKernel, cfg: ApproxConfig, n_mc: int = 256, rng_seed=0) -> ELBOTerms:
    """Variational bound with q(f) set to the pseudo-observation GP posterior.

    The KL term is closed-form between N-point marginals; the expected
    categorical log-likelihood is a Monte Carlo average over per-point
    marginals of q.  ``K == 2`` with labels in {0, 1} still uses the softmax
    construction (two outputs).
    """
    if n_mc < 1:
        raise DomainError("n_mc must be >= 1")
    gp = from_labels(X, labels, K, kernel, cfg)
    labels = np.asarray(labels, dtype=int)
    kl, means, variances = 0.0, [], []
    for k in range(gp.K):
        kl_k, m, v = _kl_to_prior(gp, k)
        kl += kl_k
        means.append(m)
        variances.append(v)
    mean = np.stack(means, axis=1)
    std = np.sqrt(np.stack(variances, axis=1))
    rng = np.random.default_rng(rng_seed)
    N = gp.N
    per_sample = np.zeros(n_mc)
    chunk = max(1, 2**20 // max(1, N * gp.K))
    for start in range(0, n_mc, chunk):
        n = min(chunk, n_mc - start)
        f = mean + std * rng.standard_normal((n, N, gp.K))
        if gp.K == 1:
            sign = np.where(labels == 1, 1.0, -1.0)
            ll = log_sigmoid(sign * f[..., 0])
        else:
            ll = np.take_along_axis(log_softmax(f, axis=-1), labels[None, :, None], axis=-1)[..., 0]
        per_sample[start : start + n] = ll.sum(axis=1)
    ell = float(per_sample.mean())
    stderr = float(per_sample.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else float("nan")
    return ELBOTerms(kl, ell, stderr)


def elbo(X, labels, K, kernel, cfg, n_mc=256, rng_seed=0) -> float:
    return elbo_terms(X, labels, K, kernel, cfg, n_mc, rng_seed).value


@dataclass
class AlphaOptResult:
    config: ApproxConfig
    kernel: EQKernel
    elbo: float
    history: list


def optimize_alpha_eps(
    X,
    labels,
    K,
    kernel: EQKernel,
    method,
    grid=None,
    budget: int = 60,
    n_mc: int = 256,
    rng_seed=0,
    init_alpha: float = 0.1,
    optimize_kernel: bool = True,
) -> AlphaOptResult:
    """Maximise the ELBO over alpha_eps (and optionally the kernel).

    With a ``grid`` and ``optimize_kernel=False`` this is an argmax over the
    grid (ties to the smaller value).  Otherwise coordinate ascent alternates
    a bounded search in log alpha_eps with Nelder-Mead over the log kernel
    hyperparameters.  A fixed ``rng_seed`` gives common random numbers, so the
    objective is deterministic and the accepted ELBO never decreases.
    ``budget`` caps ELBO evaluations; ``budget=1`` returns the initial point.
    """
    if budget < 1:
        raise DomainError("budget must be >= 1")
    base = ApproxConfig(method, init_alpha)
    evals = {"n": 0}
    history = []

    def objective(log_alpha, log_kernel):
        if evals["n"] >= budget:
            return -np.inf
        evals["n"] += 1
        try:
            val = elbo(X, labels, K, EQKernel.from_log(*log_kernel), base.with_alpha(math.exp(log_alpha)), n_mc, rng_seed)
        except (NumericalError, DomainError, OverflowError):
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    if grid is not None and not optimize_kernel:
        grid = sorted(float(a) for a in grid)
        best_alpha, best_val = grid[0], -np.inf
        for a in grid[:budget]:
            val = objective(math.log(a), kernel.log_params)
            history.append((a, kernel, val))
            if val > best_val:
                best_alpha, best_val = a, val
        return AlphaOptResult(base.with_alpha(best_alpha), kernel, best_val, history)

    cur_a, cur_k = math.log(init_alpha), kernel.log_params
    cur_val = objective(cur_a, cur_k)
    history.append((math.exp(cur_a), EQKernel.from_log(*cur_k), cur_val))
    while evals["n"] < budget:
        start_n, round_start = evals["n"], cur_val
        remaining = budget - evals["n"]
        if grid is not None:
            cands = [(objective(math.log(a), cur_k), math.log(a)) for a in sorted(grid)[:remaining]]
            val, la = max(cands, key=lambda t: (t[0], -t[1]))
        else:
            res = optimize.minimize_scalar(
                lambda la: -objective(la, cur_k),
                bounds=(math.log(1e-3), math.log(10.0)),
                method="bounded",
                options={"maxiter": max(1, min(20, remaining)), "xatol": 1e-3},
            )
            la, val = float(res.x), -float(res.fun)
        if val > cur_val:
            cur_a, cur_val = la, val
            history.append((math.exp(cur_a), EQKernel.from_log(*cur_k), cur_val))
        remaining = budget - evals["n"]
        if optimize_kernel and remaining > 0:
            res = optimize.minimize(
                lambda lk: -objective(cur_a, lk),
                cur_k,
                method="Nelder-Mead",
                options={"maxfev": min(40, remaining), "xatol": 1e-3, "fatol": 1e-4},
            )
            if -res.fun > cur_val:
                cur_k, cur_val = np.array(res.x), -float(res.fun)
                history.append((math.exp(cur_a), EQKernel.from_log(*cur_k), cur_val))
        if evals["n"] == start_n or cur_val <= round_start + 1e-9:
            break
    return AlphaOptResult(base.with_alpha(math.exp(cur_a)), EQKernel.from_log(*cur_k), cur_val, history)
