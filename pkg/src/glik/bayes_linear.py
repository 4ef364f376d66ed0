"""Bayesian multi-output linear regression on fixed features.

Each output ``k`` has its own Gaussian posterior ``N(m_k, S_k)`` over a
weight vector, so heteroscedastic pseudo-observation noise ``v_nk`` can differ
per output.  Updates are exact Gaussian conditioning; the streaming
baselines (assumed density filtering on the exact softmax likelihood and
SGD with momentum on cross-entropy) live here as well.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.linalg import blas

from .errors import DomainError, NumericalError
from .likelihood_approx import BinaryPseudoObs, ClassPseudoObs
from .special_fns import log_sigmoid, log_softmax, sigmoid, softmax

DEFAULT_PRIOR_VARIANCE = 1.0
DEFAULT_ADF_DAMPING = 0.5
DEFAULT_ADF_SAMPLES = 512
DEFAULT_FEATURE_DIM = 512


class FeatureKind(enum.Enum):
    IDENTITY = "identity"
    RANDOM_RELU = "random_relu"
    PRECOMPUTED = "precomputed"


@dataclass(frozen=True)
class FeatureMap:
    """Fixed feature extractor applied before the linear model.

    ``RANDOM_RELU`` computes ``relu(x W + b) / sqrt(output_dim)`` with
    ``W ~ N(0, 1/D_in)`` and ``b ~ N(0, 1)`` drawn from ``seed``.
    ``PRECOMPUTED`` passes dataset features through unchanged; the dataset is
    expected to already hold extracted features.
    """

    kind: FeatureKind
    output_dim: int | None = None
    weights: np.ndarray | None = field(default=None, repr=False)
    bias: np.ndarray | None = field(default=None, repr=False)
    seed: int | None = None

    @classmethod
    def identity(cls):
        return cls(FeatureKind.IDENTITY)

    @classmethod
    def precomputed(cls):
        return cls(FeatureKind.PRECOMPUTED)

    @classmethod
    def random_relu(cls, input_dim: int, output_dim: int = DEFAULT_FEATURE_DIM, seed: int = 0):
        rng = np.random.default_rng(seed)
        W = rng.standard_normal((input_dim, output_dim)) / np.sqrt(input_dim)
        b = rng.standard_normal(output_dim)
        return cls(FeatureKind.RANDOM_RELU, output_dim, W, b, seed)

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if self.kind is FeatureKind.RANDOM_RELU:
            if X.shape[-1] != self.weights.shape[0]:
                raise DomainError(f"expected inputs of dimension {self.weights.shape[0]}, got {X.shape[-1]}")
            return np.maximum(X @ self.weights + self.bias, 0.0) / np.sqrt(self.output_dim)
        return X


@dataclass(frozen=True)
class PosteriorState:
    """Independent Gaussian posteriors, one per output.

    ``means`` has shape (K, D) and ``covs`` (K, D, D).  States are treated as
    values: every update returns a new state.
    """

    means: np.ndarray
    covs: np.ndarray
    prior_variance: float

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]

    def logit_moments(self, phi):
        """Mean and variance of each output's logit at feature rows ``phi``."""
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        mean = phi @ self.means.T
        var = np.stack([np.einsum("nd,nd->n", phi @ S, phi) for S in self.covs], axis=1)
        return mean, np.maximum(var, 0.0)


def init_posterior(D: int, K: int, prior_variance: float = DEFAULT_PRIOR_VARIANCE) -> PosteriorState:
    if D < 1 or K < 1:
        raise DomainError("D and K must be positive")
    if not prior_variance > 0:
        raise DomainError("prior variance must be positive")
    covs = np.broadcast_to(prior_variance * np.eye(D), (K, D, D)).copy()
    return PosteriorState(np.zeros((K, D)), covs, float(prior_variance))


def _obs_arrays(obs, K):
    if isinstance(obs, BinaryPseudoObs):
        means, variances = np.array([obs.mean]), np.array([obs.variance])
    elif isinstance(obs, ClassPseudoObs):
        means, variances = obs.means, obs.variances
    else:
        means, variances = (np.atleast_1d(np.asarray(a, dtype=float)) for a in obs)
    if means.shape != (K,):
        raise DomainError(f"pseudo-observation has {means.size} outputs, posterior has {K}")
    return means, variances


def update_one(state: PosteriorState, phi, obs) -> PosteriorState:
    """Condition every output on one pseudo-observation at feature ``phi``.

    ``obs`` is a :class:`ClassPseudoObs`, a :class:`BinaryPseudoObs` (K=1) or
    a ``(means, variances)`` pair.  The covariance uses the expanded Joseph
    form ``S - g u' - u g' + (s + v) g g'`` with ``u = S phi`` and gain
    ``g = u / (s + v)``, which is symmetric term by term.
    """
    phi = np.asarray(phi, dtype=float)
    y, v = _obs_arrays(obs, state.K)
    u = state.covs @ phi
    s = u @ phi
    denom = s + v
    g = u / denom[:, None]
    resid = y - state.means @ phi
    means = state.means + g * resid[:, None]
    gu = np.einsum("ki,kj->kij", g, u)
    covs = state.covs - gu - gu.transpose(0, 2, 1) + (denom)[:, None, None] * np.einsum("ki,kj->kij", g, g)
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
        raise NumericalError("non-finite posterior after update")
    return PosteriorState(means, covs, state.prior_variance)


def update_many(state: PosteriorState, Phi, means, variances) -> PosteriorState:
    """Condition on a block of observations at once (Woodbury form).

    Equivalent to applying :func:`update_one` to each row in turn.
    ``means`` and ``variances`` have shape (B, K).
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    means = np.asarray(means, dtype=float).reshape(Phi.shape[0], state.K)
    variances = np.asarray(variances, dtype=float).reshape(Phi.shape[0], state.K)
    if Phi.shape[0] == 0:
        return state
    new_means = np.empty_like(state.means)
    new_covs = np.empty_like(state.covs)
    for k in range(state.K):
        S = state.covs[k]
        SPt = S @ Phi.T
        gram = Phi @ SPt + np.diag(variances[:, k])
        try:
            chol = linalg.cho_factor(gram, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("block update Gram matrix is not positive definite") from exc
        resid = means[:, k] - Phi @ state.means[k]
        new_means[k] = state.means[k] + SPt @ linalg.cho_solve(chol, resid)
        Snew = S - SPt @ linalg.cho_solve(chol, SPt.T)
        new_covs[k] = 0.5 * (Snew + Snew.T)
    return PosteriorState(new_means, new_covs, state.prior_variance)


def fit_batch(state0: PosteriorState, features, obs) -> PosteriorState:
    """Closed-form posterior in information form, one Cholesky per output.

    ``obs`` is either a sequence of pseudo-observation objects or a
    ``(means, variances)`` pair of (N, K) arrays.
    """
    Phi = np.atleast_2d(np.asarray(features, dtype=float))
    if isinstance(obs, tuple) and len(obs) == 2 and not isinstance(obs[0], (ClassPseudoObs, BinaryPseudoObs)):
        Y, V = (np.asarray(a, dtype=float).reshape(-1, state0.K) for a in obs)
    else:
        pairs = [_obs_arrays(o, state0.K) for o in obs]
        if not pairs:
            return state0
        Y = np.stack([p[0] for p in pairs])
        V = np.stack([p[1] for p in pairs])
    if Y.shape[0] == 0:
        return state0
    if Phi.shape[0] != Y.shape[0]:
        raise DomainError("features and observations disagree on N")
    means = np.empty_like(state0.means)
    covs = np.empty_like(state0.covs)
    eye = np.eye(state0.D)
    for k in range(state0.K):
        try:
            c0 = linalg.cho_factor(state0.covs[k], lower=True)
            P0 = linalg.cho_solve(c0, eye)
            prec = P0 + Phi.T @ (Phi / V[:, k, None])
            cp = linalg.cho_factor(0.5 * (prec + prec.T), lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("posterior precision is not positive definite") from exc
        rhs = P0 @ state0.means[k] + Phi.T @ (Y[:, k] / V[:, k])
        means[k] = linalg.cho_solve(cp, rhs)
        S = linalg.cho_solve(cp, eye)
        covs[k] = 0.5 * (S + S.T)
    return PosteriorState(means, covs, state0.prior_variance)


def mc_class_probs(mean, var, n_samples, rng, chunk=256):
    """Average softmax (or sigmoid for one output) over Gaussian logit draws.

    With two outputs only the logit difference matters, so one draw per
    sample is shared by all points (common random numbers).
    """
    M, K = mean.shape
    if K == 2:
        d_mean = mean[:, 1] - mean[:, 0]
        d_std = np.sqrt(var[:, 0] + var[:, 1])
        z = rng.standard_normal((n_samples, 1))
        p1 = np.empty(M)
        for start in range(0, M, chunk):
            sl = slice(start, start + chunk)
            p1[sl] = np.mean(sigmoid(d_mean[sl] + d_std[sl] * z), axis=0)
        return np.stack([1.0 - p1, p1], axis=1)
    out = np.empty((M, 2 if K == 1 else K))
    std = np.sqrt(var)
    for start in range(0, M, chunk):
        sl = slice(start, start + chunk)
        z = rng.standard_normal((n_samples, min(chunk, M - start), K))
        f = mean[sl] + std[sl] * z
        if K == 1:
            p1 = np.mean(sigmoid(f[..., 0]), axis=0)
            out[sl] = np.stack([1.0 - p1, p1], axis=1)
        else:
            out[sl] = np.mean(softmax(f, axis=-1), axis=0)
    return out


def predict_proba(state: PosteriorState, phi, n_samples: int = 1024, rng_seed=0):
    """Monte Carlo predictive class probabilities.

    Logits are drawn independently per output from their Gaussian marginals
    and pushed through the softmax.  With a single output the logistic link
    is used and the result holds ``[p(y=0), p(y=1)]``.  Accepts one feature
    vector or a matrix of rows.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    phi = np.asarray(phi, dtype=float)
    single = phi.ndim == 1
    mean, var = state.logit_moments(phi)
    if np.all(var == 0.0):
        if state.K == 1:
            p1 = sigmoid(mean[:, 0])
            probs = np.stack([1.0 - p1, p1], axis=1)
        else:
            probs = softmax(mean, axis=-1)
    else:
        rng = np.random.default_rng(rng_seed)
        probs = mc_class_probs(mean, var, n_samples, rng)
    return probs[0] if single else probs


@dataclass
class ADFDiagnostics:
    updates: int = 0
    skipped: int = 0
    projected: int = 0
    min_ess: float = np.inf


def _categorical_loglik(y, K):
    if K == 1:
        sign = 1.0 if y == 1 else -1.0
        return lambda f: log_sigmoid(sign * f[:, 0])
    return lambda f: log_softmax(f, axis=-1)[:, y]


def adf_update(
    state: PosteriorState,
    phi,
    y: int,
    n_mc: int = DEFAULT_ADF_SAMPLES,
    damping: float = DEFAULT_ADF_DAMPING,
    rng_seed=0,
    diagnostics: ADFDiagnostics | None = None,
    log_likelihood=None,
    inplace: bool = False,
) -> PosteriorState:
    """One assumed-density-filtering step on the exact likelihood.

    Logit draws from the current marginals are importance weighted by the
    likelihood of ``y``; the weighted moments give the tilted marginal of each
    logit, which is propagated back to the weights by a rank-one correction
    and blended with the old state by ``damping``.  A tilted variance outside
    ``[1e-10 s, s]`` (s the current marginal variance) can only come from
    Monte Carlo noise; it is clipped back and counted as a projection.
    ``log_likelihood`` overrides the categorical likelihood (maps an
    (n_mc, K) array of logits to log-weights).  ``inplace=True`` overwrites
    the arrays of ``state`` (for callers that own it) and returns it.
    """
    if not 0 < damping <= 1:
        raise DomainError("damping must lie in (0, 1]")
    if n_mc < 100:
        raise DomainError("n_mc must be at least 100")
    diag = diagnostics if diagnostics is not None else ADFDiagnostics()
    phi = np.asarray(phi, dtype=float)
    mu = state.means @ phi
    u = state.covs @ phi
    s = np.maximum(u @ phi, 1e-300)
    rng = np.random.default_rng(rng_seed)
    f = mu + np.sqrt(s) * rng.standard_normal((n_mc, state.K))
    loglik = log_likelihood or _categorical_loglik(y, state.K)
    logw = np.asarray(loglik(f), dtype=float)
    w = np.exp(logw - np.max(logw))
    w /= np.sum(w)
    ess = 1.0 / np.sum(w * w)
    diag.min_ess = min(diag.min_ess, ess)
    if not np.isfinite(ess) or ess < 10:
        diag.skipped += 1
        return state
    mu_t = w @ f
    var_t = w @ (f - mu_t) ** 2
    clipped = np.clip(var_t, 1e-10 * s, s)
    if np.any(clipped != var_t):
        diag.projected += 1
    dmeans = damping * u * ((mu_t - mu) / s)[:, None]
    scale = damping * (clipped - s) / s**2
    diag.updates += 1
    if inplace and state.covs.flags.c_contiguous:
        means, covs = state.means, state.covs
        means += dmeans
    else:
        means, covs = state.means + dmeans, np.array(state.covs, order="C")
    for k in range(state.K):
        # in-place rank-one BLAS update; the transposed view of a C-ordered
        # symmetric block is the same matrix in Fortran order
        blas.dger(scale[k], u[k], u[k], a=covs[k].T, overwrite_a=1)
    return state if means is state.means else PosteriorState(means, covs, state.prior_variance)


@dataclass
class SGDResult:
    weights: np.ndarray
    trajectory: list
    steps: int
    diverged: bool = False


def sgd_momentum_fit(
    weights,
    features,
    labels,
    lr: float,
    momentum: float,
    record_every: int | None = None,
) -> SGDResult:
    """Per-observation SGD with momentum on softmax cross-entropy.

    ``weights`` has shape (K, D).  ``trajectory`` holds copies of the weights
    after every ``record_every`` steps (and the final weights).  A non-finite
    loss stops the run early with ``diverged=True``.
    """
    if not lr >= 0:
        raise DomainError("learning rate must be non-negative")
    if not 0 <= momentum < 1:
        raise DomainError("momentum must lie in [0, 1)")
    W = np.array(weights, dtype=float)
    vel = np.zeros_like(W)
    X = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels, dtype=int)
    trajectory = [W.copy()]
    # divergence is detected from the loss, so overflow warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for t, (phi, y) in enumerate(zip(X, labels), start=1):
            logits = W @ phi
            lsm = log_softmax(logits)
            if not np.isfinite(lsm[y]):
                return SGDResult(W, trajectory, t - 1, diverged=True)
            grad_logits = np.exp(lsm)
            grad_logits[y] -= 1.0
            vel = momentum * vel + np.outer(grad_logits, phi)
            W = W - lr * vel
            if record_every and t % record_every == 0:
                trajectory.append(W.copy())
    if not record_every or len(labels) % record_every:
        trajectory.append(W.copy())
    return SGDResult(W, trajectory, len(labels))
