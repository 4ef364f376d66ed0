"""A small ReLU network with hand-written backpropagation.

Three training losses are supported: softmax cross-entropy, least squares on
one-hot labels, and the heteroscedastic Gaussian loss on matched
pseudo-observations.  Training is minibatch SGD with momentum.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalError, UsageError
from .likelihood_approx import ApproxConfig, binary_targets, class_targets
from .special_fns import log_softmax, sigmoid, softmax

LOG_2PI = np.log(2 * np.pi)


@dataclass
class MLP:
    """Weights ``W[i]`` of shape (sizes[i], sizes[i+1]) and biases ``b[i]``."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise DomainError(f"layer {i}: weight {W.shape} and bias {b.shape} do not agree")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise DomainError(f"layer {i} input size {W.shape[0]} != previous output size")

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "MLP":
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_flat(self, theta) -> "MLP":
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise DomainError(f"expected {self.n_params} parameters, got {theta.size}")
        Ws, bs, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(theta[pos : pos + W.size].reshape(W.shape))
            pos += W.size
            bs.append(theta[pos : pos + b.size].copy())
            pos += b.size
        return MLP(Ws, bs)


def init_mlp(sizes, rng_seed: int = 0) -> MLP:
    """He-normal weights and zero biases."""
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise DomainError("sizes must list at least two positive layer widths")
    rng = np.random.default_rng(rng_seed)
    Ws = [rng.standard_normal((m, n)) * np.sqrt(2.0 / m) for m, n in zip(sizes[:-1], sizes[1:])]
    return MLP(Ws, [np.zeros(n) for n in sizes[1:]])


def _forward_cache(net: MLP, X):
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(net: MLP, x):
    """Logits for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != net.sizes[0]:
        raise DomainError(f"input has {X.shape[1]} features, network expects {net.sizes[0]}")
    out = _forward_cache(net, X)[-1]
    return out[0] if single else out


class LossType(enum.Enum):
    EXACT_CE = "exact"
    GAUSS_ONE_HOT = "gauss"
    MATCHED = "matched"


@dataclass(frozen=True)
class LossKind:
    """Training objective.  ``cfg`` and ``binary`` only apply to MATCHED."""

    type: LossType
    cfg: ApproxConfig | None = None
    binary: bool = False

    def __post_init__(self):
        if self.type is LossType.MATCHED and self.cfg is None:
            raise UsageError("matched loss needs an ApproxConfig")
        if self.binary and self.type is not LossType.MATCHED:
            raise UsageError("the binary flag applies to matched losses only")

    @classmethod
    def exact(cls):
        return cls(LossType.EXACT_CE)

    @classmethod
    def gauss(cls):
        return cls(LossType.GAUSS_ONE_HOT)

    @classmethod
    def matched(cls, cfg: ApproxConfig, binary: bool = False):
        return cls(LossType.MATCHED, cfg, binary)

    @classmethod
    def parse(cls, name: str, alpha_eps: float = 0.1):
        """'exact', 'gauss', or a matching method name for a matched loss."""
        name = name.strip().lower()
        if name == "exact":
            return cls.exact()
        if name == "gauss":
            return cls.gauss()
        return cls.matched(ApproxConfig(name, alpha_eps))

    @property
    def name(self):
        return self.cfg.method.value if self.type is LossType.MATCHED else self.type.value


def _per_example_loss(logits, labels, kind: LossKind):
    """Per-example loss and its gradient w.r.t. the logits."""
    N, K = logits.shape
    if kind.type is LossType.EXACT_CE:
        if K < 2:
            raise DomainError("cross-entropy needs K >= 2 outputs")
        lsm = log_softmax(logits, axis=1)
        loss = -lsm[np.arange(N), labels]
        grad = np.exp(lsm)
        grad[np.arange(N), labels] -= 1.0
        return loss, grad
    if kind.type is LossType.GAUSS_ONE_HOT:
        target = np.eye(K)[labels]
        diff = logits - target
        return 0.5 * np.sum(diff**2, axis=1), diff
    if kind.binary:
        if K != 1:
            raise DomainError("binary matched loss needs a single output")
        m, v = binary_targets(labels, kind.cfg)
        m, v = m[:, None], v[:, None]
    else:
        if K < 2:
            raise DomainError("matched softmax loss needs K >= 2 outputs; use binary=True")
        m, v = class_targets(labels, K, kind.cfg)
    diff = logits - m
    return np.sum(0.5 * (diff**2 / v + LOG_2PI + np.log(v)), axis=1), diff / v


def loss_and_grad(net: MLP, X, labels, kind: LossKind, weight_decay: float = 0.0):
    """Mean batch loss plus ``weight_decay * 0.5 * |theta|^2``, and its gradient.

    The gradient is returned as an ``MLP`` with the same layout as ``net``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=int).ravel()
    if labels.size == 0 or X.shape[0] != labels.size:
        raise DomainError("batch must be nonempty with one label per row")
    if weight_decay < 0:
        raise DomainError("weight_decay must be nonnegative")
    # non-finite values are reported below with the offending example
    with np.errstate(over="ignore", invalid="ignore"):
        acts = _forward_cache(net, X)
        per_ex, dlogits = _per_example_loss(acts[-1], labels, kind)
    bad = np.flatnonzero(~np.isfinite(per_ex))
    if bad.size:
        raise NumericalError(f"non-finite loss at batch example {int(bad[0])}")
    N = labels.size
    delta = dlogits / N
    gW, gb = [None] * len(net.weights), [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta + weight_decay * net.weights[i]
        gb[i] = delta.sum(axis=0) + weight_decay * net.biases[i]
        if i:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0)
    reg = 0.5 * weight_decay * float(np.sum(net.flat() ** 2)) if weight_decay else 0.0
    return float(per_ex.mean()) + reg, MLP(gW, gb)


def predict_proba_point(net: MLP, x):
    """Softmax of the logits; a single-output net gives [1 - sigmoid, sigmoid]."""
    f = forward(net, x)
    f2 = np.atleast_2d(f)
    if f2.shape[1] == 1:
        p1 = sigmoid(f2[:, 0])
        probs = np.stack([1.0 - p1, p1], axis=1)
    else:
        probs = softmax(f2, axis=1)
    return probs[0] if np.ndim(f) == 1 else probs


@dataclass(frozen=True)
class SGDConfig:
    lr: float = 0.02
    momentum: float = 0.9
    batch_size: int = 64
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.batch_size < 1 or self.weight_decay < 0:
            raise DomainError("need lr >= 0, momentum in [0, 1), batch_size >= 1, weight_decay >= 0")


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for i, (l, a) in enumerate(zip(self.loss, self.accuracy), start=1):
            w.writerow([i, repr(float(l)), repr(float(a))])
        return buf.getvalue()


class TrainingDiverged(NumericalError):
    """Raised when the loss becomes non-finite; keeps the history so far."""

    def __init__(self, message, history: TrainHistory, net: MLP):
        super().__init__(message)
        self.history = history
        self.net = net


def _evaluate(net, X, y, kind, weight_decay):
    loss, _ = loss_and_grad(net, X, y, kind, weight_decay)
    acc = float(np.mean(np.argmax(predict_proba_point(net, X), axis=1) == y))
    return loss, acc


def train(net0: MLP, X, y, kind: LossKind, opt: SGDConfig = SGDConfig(), epochs: int = 300, rng_seed: int = 0):
    """Minibatch SGD with momentum; returns ``(net, history)``.

    The shuffle order is drawn from ``rng_seed``, so runs are reproducible.
    History entries are the full-data loss and accuracy after each epoch.
    """
    if epochs < 1:
        raise DomainError("epochs must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(rng_seed)
    net = net0.copy()
    vel = np.zeros(net.n_params)
    theta = net.flat()
    history = TrainHistory()
    N = y.size
    for epoch in range(epochs):
        order = rng.permutation(N)
        for start in range(0, N, opt.batch_size):
            idx = order[start : start + opt.batch_size]
            try:
                _, g = loss_and_grad(net, X[idx], y[idx], kind, opt.weight_decay)
            except NumericalError as exc:
                raise TrainingDiverged(f"epoch {epoch + 1}: {exc}", history, net) from exc
            vel = opt.momentum * vel - opt.lr * g.flat()
            theta = theta + vel
            if not np.all(np.isfinite(theta)):
                raise TrainingDiverged(f"epoch {epoch + 1}: parameters became non-finite", history, net)
            net = net.with_flat(theta)
        try:
            loss, acc = _evaluate(net, X, y, kind, opt.weight_decay)
        except NumericalError as exc:
            raise TrainingDiverged(f"epoch {epoch + 1}: {exc}", history, net) from exc
        history.loss.append(loss)
        history.accuracy.append(acc)
    return net, history
