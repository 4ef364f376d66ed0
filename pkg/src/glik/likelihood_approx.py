"""Gaussian pseudo-observations for softmax and logistic likelihoods.

Softmax: a one-hot label ``c`` with a symmetric Dirichlet prior gives the
posterior ``Dir(alpha_eps + c)``, equivalently independent
``Gamma(alpha_eps + c_k, 1)`` variables whose logs are the logits.  Matching
each log-Gamma with a Gaussian yields a per-class regression target and noise
variance.

Logistic: a Bernoulli label with a ``Beta(alpha_eps, beta_eps)`` prior gives
``Beta(alpha_eps + y, beta_eps + 1 - y)``; its logit is matched the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError, SelectionError
from .matching import BetaLogit, GammaLog, MatchMethod, match

DEFAULT_ALPHA_EPS = 0.1
DEFAULT_BETA_EPS = 0.1
DEFAULT_ALPHA_GRID = (0.001, 0.01, 0.05, 0.1, 0.2, 0.5)


@dataclass(frozen=True)
class ApproxConfig:
    method: MatchMethod = MatchMethod.VARIATIONAL
    alpha_eps: float = DEFAULT_ALPHA_EPS
    beta_eps: float = DEFAULT_BETA_EPS

    def __post_init__(self):
        object.__setattr__(self, "method", MatchMethod.parse(self.method))
        if not (self.alpha_eps > 0 and math.isfinite(self.alpha_eps)):
            raise DomainError(f"alpha_eps must be positive, got {self.alpha_eps}")
        if not (self.beta_eps > 0 and math.isfinite(self.beta_eps)):
            raise DomainError(f"beta_eps must be positive, got {self.beta_eps}")

    def with_alpha(self, alpha_eps: float) -> "ApproxConfig":
        return ApproxConfig(self.method, alpha_eps, self.beta_eps)


@dataclass(frozen=True)
class ClassPseudoObs:
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        variances = np.asarray(self.variances, dtype=float)
        if means.shape != variances.shape or means.ndim != 1:
            raise DomainError("pseudo-observation means and variances must be equal-length vectors")
        if np.any(variances <= 0):
            raise DomainError("pseudo-observation variances must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def K(self) -> int:
        return self.means.size


@dataclass(frozen=True)
class BinaryPseudoObs:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError("pseudo-observation variance must be positive")


@lru_cache(maxsize=256)
def _class_targets(method: MatchMethod, alpha_eps: float):
    """(mean, variance) for the unobserved and the observed class."""
    off = match(GammaLog(alpha_eps, 1.0), method)
    on = match(GammaLog(alpha_eps + 1.0, 1.0), method)
    return (off.mean, off.variance), (on.mean, on.variance)


@lru_cache(maxsize=256)
def _binary_targets(method: MatchMethod, alpha_eps: float, beta_eps: float):
    neg = match(BetaLogit(alpha_eps, beta_eps + 1.0), method)
    pos = match(BetaLogit(alpha_eps + 1.0, beta_eps), method)
    return (neg.mean, neg.variance), (pos.mean, pos.variance)


def softmax_pseudo_obs(y: int, K: int, cfg: ApproxConfig) -> ClassPseudoObs:
    if K < 2:
        raise DomainError("softmax pseudo-observations need K >= 2")
    if int(y) != y or not 0 <= y < K:
        raise DomainError(f"class index {y} outside [0, {K})")
    (m0, v0), (m1, v1) = _class_targets(cfg.method, cfg.alpha_eps)
    means = np.full(K, m0)
    variances = np.full(K, v0)
    means[int(y)] = m1
    variances[int(y)] = v1
    return ClassPseudoObs(means, variances)


def logistic_pseudo_obs(y: int, cfg: ApproxConfig) -> BinaryPseudoObs:
    if y not in (0, 1):
        raise DomainError(f"binary label must be 0 or 1, got {y!r}")
    (mean, var) = _binary_targets(cfg.method, cfg.alpha_eps, cfg.beta_eps)[int(y)]
    return BinaryPseudoObs(mean, var)


def class_targets(labels, K: int, cfg: ApproxConfig | None):
    """Vectorised pseudo-observations for a label vector.

    Returns ``(means, variances)`` of shape (N, K).  ``cfg=None`` gives the
    one-hot least-squares baseline (targets ``c_nk``, unit variance).
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= K):
        raise DomainError(f"labels must be integers in [0, {K})")
    onehot = np.eye(K, dtype=bool)[labels.astype(int)]
    if cfg is None:
        return onehot.astype(float), np.ones(onehot.shape)
    (m0, v0), (m1, v1) = _class_targets(cfg.method, cfg.alpha_eps)
    return np.where(onehot, m1, m0), np.where(onehot, v1, v0)


def binary_targets(labels, cfg: ApproxConfig | None):
    """Vectorised logistic pseudo-observations, shapes (N,) each.

    ``cfg=None`` regresses directly on the 0/1 labels with unit variance.
    """
    labels = np.asarray(labels).astype(int)
    if np.any((labels != 0) & (labels != 1)):
        raise DomainError("binary labels must be 0 or 1")
    if cfg is None:
        return labels.astype(float), np.ones(labels.shape)
    (mn, vn), (mp, vp) = _binary_targets(cfg.method, cfg.alpha_eps, cfg.beta_eps)
    pos = labels == 1
    return np.where(pos, mp, mn), np.where(pos, vp, vn)


def approx_log_lik(logits, obs) -> float:
    """Sum of Gaussian log-densities of the logits under the pseudo-observations."""
    if isinstance(obs, BinaryPseudoObs):
        means, variances = np.atleast_1d(obs.mean), np.atleast_1d(obs.variance)
    else:
        means, variances = obs.means, obs.variances
    logits = np.atleast_1d(np.asarray(logits, dtype=float))
    if logits.shape != means.shape:
        raise DomainError(f"logits shape {logits.shape} does not match pseudo-observations {means.shape}")
    return float(np.sum(-0.5 * np.log(2 * np.pi * variances) - 0.5 * (logits - means) ** 2 / variances))


@dataclass
class SelectionResult:
    config: ApproxConfig
    scores: dict = field(default_factory=dict)


def select_alpha_eps(train, grid, method, trainer, beta_eps: float = DEFAULT_BETA_EPS) -> ApproxConfig:
    """Pick alpha_eps from ``grid`` by mean categorical train log-likelihood.

    ``trainer(cfg, train)`` must return predictive class probabilities on the
    training inputs, shape (N, K).  Ties go to the smaller alpha_eps.
    """
    return select_alpha_eps_scored(train, grid, method, trainer, beta_eps).config


def select_alpha_eps_scored(train, grid, method, trainer, beta_eps=DEFAULT_BETA_EPS) -> SelectionResult:
    grid = sorted(float(a) for a in grid)
    if not grid:
        raise DomainError("alpha_eps grid is empty")
    method = MatchMethod.parse(method)
    best, best_score, scores = None, -np.inf, {}
    for alpha in grid:
        cfg = ApproxConfig(method, alpha, beta_eps)
        try:
            probs = np.asarray(trainer(cfg, train), dtype=float)
        except Exception as exc:
            raise SelectionError(f"training failed for alpha_eps={alpha}", alpha) from exc
        p_true = probs[np.arange(len(train.labels)), train.labels]
        score = float(np.mean(np.log(np.maximum(p_true, 1e-12))))
        scores[alpha] = score
        # strict improvement keeps the smaller alpha on ties
        if score > best_score:
            best, best_score = cfg, score
    return SelectionResult(best, scores)
