"""Metrics and experiment drivers.

Classification metrics, streaming replay of a conjugate or approximate
online learner, pool-based active learning, and a Monte Carlo check of the
Gamma-normalisation construction of the Dirichlet distribution.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .bayes_linear import (
    DEFAULT_ADF_DAMPING,
    DEFAULT_ADF_SAMPLES,
    DEFAULT_PRIOR_VARIANCE,
    ADFDiagnostics,
    FeatureMap,
    adf_update,
    init_posterior,
    predict_proba,
    sgd_momentum_fit,
    update_many,
    update_one,
)
from .data import Dataset
from .errors import DomainError, UsageError
from .likelihood_approx import ApproxConfig, class_targets
from .matching import MatchMethod
from .special_fns import softmax

PROB_FLOOR = 1e-12
DEFAULT_ECE_BINS = 15
DEFAULT_CADENCE = 100
PREDICTIVE_SAMPLES = 1024
STREAM_METHODS = ("gauss", "moment-ori", "moment", "laplace", "variational", "adf", "sgd+m")


def _check_probs(probs, labels=None):
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise DomainError("probability rows must sum to 1")
    if labels is not None:
        labels = np.asarray(labels, dtype=int).ravel()
        if labels.size != probs.shape[0]:
            raise DomainError(f"{probs.shape[0]} probability rows but {labels.size} labels")
        if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
            raise DomainError("labels outside the probability columns")
    return probs, labels


def accuracy(probs, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    probs, labels = _check_probs(probs, labels)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def nll(probs, labels) -> float:
    """Mean negative log probability of the true class, floored at 1e-12."""
    probs, labels = _check_probs(probs, labels)
    p = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def entropy(p):
    """Shannon entropy in nats of a distribution (or of each row)."""
    p = np.asarray(p, dtype=float)
    terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def ece(probs, labels, n_bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error over equal-width confidence bins."""
    if n_bins < 1:
        raise DomainError("n_bins must be >= 1")
    probs, labels = _check_probs(probs, labels)
    conf = probs.max(axis=1)
    correct = np.argmax(probs, axis=1) == labels
    # bin b holds (b/n, (b+1)/n]; confidence 0 cannot occur
    bins = np.clip(np.ceil(conf * n_bins).astype(int) - 1, 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        sel = bins == b
        if sel.any():
            total += sel.mean() * abs(correct[sel].mean() - conf[sel].mean())
    return float(total)


def roc_auc(scores_pos, scores_neg) -> float:
    """Mann-Whitney estimate of P(pos > neg) with half credit for ties."""
    pos = np.asarray(scores_pos, dtype=float).ravel()
    neg = np.asarray(scores_neg, dtype=float).ravel()
    if pos.size == 0 or neg.size == 0:
        raise DomainError("both score sets must be nonempty")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    ties = np.searchsorted(neg_sorted, pos, side="right") - below
    return float((below.sum() + 0.5 * ties.sum()) / (pos.size * neg.size))


@dataclass(frozen=True)
class StreamRecord:
    step: int
    seen: int
    test_accuracy: float
    test_loglik: float


@dataclass(frozen=True)
class ALRecord:
    step: int
    train_size: int
    test_accuracy: float
    test_loglik: float
    chosen_index: int


def records_to_csv(records) -> str:
    """CSV text with one column per record field; floats written exactly."""
    if not records:
        raise DomainError("no records")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(records[0])])
    for r in records:
        w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(r)])
    return buf.getvalue()


@dataclass(frozen=True)
class StreamConfig:
    alpha_eps: float = 0.1
    prior_variance: float = DEFAULT_PRIOR_VARIANCE
    cadence: int = DEFAULT_CADENCE
    n_samples: int = PREDICTIVE_SAMPLES
    adf_samples: int = DEFAULT_ADF_SAMPLES
    adf_damping: float = DEFAULT_ADF_DAMPING
    sgd_lr: float = 0.05
    sgd_momentum: float = 0.9

    def __post_init__(self):
        if self.cadence < 1:
            raise DomainError("cadence must be >= 1")


def _method_config(method: str, cfg: StreamConfig):
    if method == "gauss":
        return None
    return ApproxConfig(MatchMethod.parse(method), cfg.alpha_eps)


def _test_metrics(probs, labels):
    return accuracy(probs, labels), -nll(probs, labels)


def _checkpoints(N, cadence):
    stops = list(range(cadence, N + 1, cadence))
    if not stops or stops[-1] != N:
        stops.append(N)
    return stops


def streaming_run(
    train: Dataset,
    test: Dataset,
    method: str,
    feature_map: FeatureMap | None = None,
    config: StreamConfig = StreamConfig(),
    rng_seed: int = 0,
    return_state: bool = False,
):
    """Replay ``train`` in a seeded order, evaluating on ``test`` every ``cadence`` points.

    Conjugate methods absorb each block between evaluations in one exact
    block update (identical to one-at-a-time conditioning).  ``adf`` updates
    per observation with seeds derived from ``rng_seed``; ``sgd+m`` runs
    per-observation SGD with momentum from zero weights.  Test
    probabilities use ``n_samples`` Monte Carlo draws, seeded per checkpoint.
    """
    method = method.strip().lower()
    if method not in STREAM_METHODS:
        raise UsageError(f"unknown stream method {method!r}; expected one of {', '.join(STREAM_METHODS)}")
    if train.K != test.K:
        raise DomainError("train and test sets disagree on K")
    fmap = feature_map or FeatureMap.identity()
    ss = np.random.SeedSequence(rng_seed)
    order_seed, eval_seed, adf_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    order = np.random.default_rng(order_seed).permutation(len(train))
    Phi = fmap(train.features[order])
    y = train.labels[order]
    Phi_test = fmap(test.features)
    K, D = train.K, Phi.shape[1]
    stops = _checkpoints(len(y), config.cadence)
    records = []

    if method == "sgd+m":
        result = sgd_momentum_fit(np.zeros((K, D)), Phi, y, config.sgd_lr, config.sgd_momentum, config.cadence)
        for i, W in enumerate(result.trajectory[1:]):
            if result.diverged and i >= len(stops):
                break
            probs = softmax(Phi_test @ W.T, axis=1)
            records.append(StreamRecord(i + 1, stops[i], *_test_metrics(probs, test.labels)))
        return (records, result) if return_state else records

    state = init_posterior(D, K, config.prior_variance)
    diag = ADFDiagnostics()
    adf_seeds = np.random.SeedSequence(adf_seed).generate_state(len(y)) if method == "adf" else None
    approx = None if method == "adf" else _method_config(method, config)
    start = 0
    for step, stop in enumerate(stops, start=1):
        if method == "adf":
            for n in range(start, stop):
                adf_update(
                    state,
                    Phi[n],
                    int(y[n]),
                    config.adf_samples,
                    config.adf_damping,
                    int(adf_seeds[n]),
                    diag,
                    inplace=True,
                )
        else:
            means, variances = class_targets(y[start:stop], K, approx)
            state = update_many(state, Phi[start:stop], means, variances)
        start = stop
        probs = predict_proba(state, Phi_test, config.n_samples, rng_seed=(eval_seed, step))
        records.append(StreamRecord(step, stop, *_test_metrics(probs, test.labels)))
    if return_state:
        return records, (state, diag) if method == "adf" else state
    return records


def active_learning_run(
    pool: Dataset,
    test: Dataset,
    init_size: int,
    steps: int,
    method: str = "variational",
    rng_seed: int = 0,
    acquisition: str = "entropy",
    feature_map: FeatureMap | None = None,
    alpha_eps: float = 0.1,
    prior_variance: float = DEFAULT_PRIOR_VARIANCE,
    n_samples: int = PREDICTIVE_SAMPLES,
):
    """Pool-based active learning with a conjugate pseudo-observation model.

    ``acquisition='entropy'`` moves the remaining pool point with the highest
    predictive entropy (lowest index on ties) into the training set;
    ``'random'`` picks uniformly.  Record 0 is the initial model with
    ``chosen_index = -1``.
    """
    if acquisition not in ("entropy", "random"):
        raise UsageError("acquisition must be 'entropy' or 'random'")
    if init_size < 0 or steps < 0 or init_size + steps > len(pool):
        raise DomainError("need 0 <= init_size and init_size + steps <= pool size")
    if method.strip().lower() in ("adf", "sgd+m"):
        raise UsageError("active learning needs a closed-form update method")
    approx = _method_config(method.strip().lower(), StreamConfig(alpha_eps=alpha_eps))
    fmap = feature_map or FeatureMap.identity()
    K = pool.K
    Phi = fmap(pool.features)
    Phi_test = fmap(test.features)
    ss = np.random.SeedSequence(rng_seed)
    init_seed, pick_seed, eval_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    init_idx = np.random.default_rng(init_seed).choice(len(pool), size=init_size, replace=False)
    remaining = np.ones(len(pool), dtype=bool)
    remaining[init_idx] = False
    state = init_posterior(Phi.shape[1], K, prior_variance)
    if init_size:
        means, variances = class_targets(pool.labels[init_idx], K, approx)
        state = update_many(state, Phi[init_idx], means, variances)
    pick_rng = np.random.default_rng(pick_seed)

    def record(step, chosen):
        probs = predict_proba(state, Phi_test, n_samples, rng_seed=(eval_seed, step))
        return ALRecord(step, init_size + step, *_test_metrics(probs, test.labels), chosen)

    records = [record(0, -1)]
    for step in range(1, steps + 1):
        cand = np.flatnonzero(remaining)
        if acquisition == "entropy":
            probs = predict_proba(state, Phi[cand], n_samples, rng_seed=(eval_seed, step, 1))
            chosen = int(cand[select_max_entropy(entropy(probs))])
        else:
            chosen = int(pick_rng.choice(cand))
        remaining[chosen] = False
        m, v = class_targets(pool.labels[chosen : chosen + 1], K, approx)
        state = update_one(state, Phi[chosen], (m[0], v[0]))
        records.append(record(step, chosen))
    return records


def select_max_entropy(entropies) -> int:
    """Position of the largest entropy; the first one on ties."""
    return int(np.argmax(np.asarray(entropies, dtype=float)))


def steps_to_reach(records, threshold: float, metric: str = "test_accuracy"):
    """First step whose ``metric`` reaches ``threshold``, or None."""
    for r in records:
        if getattr(r, metric) >= threshold:
            return r.step
    return None


def gamma_sample(alpha: float, size, rng: np.random.Generator, log: bool = False):
    """Marsaglia-Tsang Gamma(alpha, 1) sampler (with the alpha < 1 boost).

    ``log=True`` returns log-draws, which stay finite for tiny shapes where
    the draws themselves underflow to zero.
    """
    if not alpha > 0:
        raise DomainError("Gamma shape must be positive")
    n = int(np.prod(size))
    boost = alpha < 1
    a = alpha + 1.0 if boost else alpha
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = int(1.1 * (n - filled)) + 16
        x = rng.standard_normal(m)
        v = (1.0 + c * x) ** 3
        u = rng.random(m)
        ok = v > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            accept = ok & (np.log(u) < 0.5 * x * x + d - d * v + d * np.log(np.where(ok, v, 1.0)))
        take = (d * v[accept])[: n - filled]
        out[filled : filled + take.size] = take
        filled += take.size
    out = np.log(out)
    if boost:
        # Gamma(a) = Gamma(a + 1) * U^(1/a)
        out += np.log(rng.random(n)) / alpha
    return (out if log else np.exp(out)).reshape(size)


@dataclass
class DirichletReport:
    alpha: np.ndarray
    n_samples: int
    mean: np.ndarray
    mean_stderr: np.ndarray
    mean_z: np.ndarray
    cov: np.ndarray
    cov_z: np.ndarray
    corner_fraction: float

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.mean_z)), np.max(np.abs(self.cov_z))))


def dirichlet_construction_check(alpha, n_samples: int = 100_000, rng_seed: int = 0) -> DirichletReport:
    """Normalised independent Gamma draws against analytic Dirichlet moments.

    ``corner_fraction`` is the share of samples whose largest component
    exceeds 0.9.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size < 2 or np.any(~(alpha > 0)):
        raise DomainError("alpha must be a vector of at least two positive entries")
    if n_samples < 10_000:
        raise DomainError("n_samples must be >= 1e4")
    rng = np.random.default_rng(rng_seed)
    # normalising in log space keeps tiny shapes from dividing 0 by 0
    logw = np.stack([gamma_sample(a, n_samples, rng, log=True) for a in alpha], axis=1)
    pi = np.exp(logw - np.max(logw, axis=1, keepdims=True))
    pi /= pi.sum(axis=1, keepdims=True)
    a0 = alpha.sum()
    mean_true = alpha / a0
    cov_true = (np.diag(alpha) * a0 - np.outer(alpha, alpha)) / (a0**2 * (a0 + 1))
    mean = pi.mean(axis=0)
    mean_se = pi.std(axis=0, ddof=1) / math.sqrt(n_samples)
    centred = pi - mean_true
    prods = centred[:, :, None] * centred[:, None, :]
    cov = prods.mean(axis=0)
    cov_se = prods.std(axis=0, ddof=1) / math.sqrt(n_samples)
    return DirichletReport(
        alpha=alpha,
        n_samples=n_samples,
        mean=mean,
        mean_stderr=mean_se,
        mean_z=(mean - mean_true) / mean_se,
        cov=cov,
        cov_z=(cov - cov_true) / np.maximum(cov_se, 1e-300),
        corner_fraction=float(np.mean(pi.max(axis=1) > 0.9)),
    )
