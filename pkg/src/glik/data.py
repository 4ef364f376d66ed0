"""Datasets: the container type, CSV reading/writing and seeded generators."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError


class DataError(ValueError):
    """A dataset file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    K: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DomainError("features must be N x D and labels length N")
        if X.shape[0] < 1:
            raise DomainError("dataset is empty")
        if not np.all(np.isfinite(X)):
            raise DomainError("features must be finite")
        if not np.array_equal(y, np.round(y)) or y.min() < 0 or y.max() >= self.K:
            raise DomainError(f"labels must be integers in [0, {self.K})")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y.astype(int))

    def __len__(self):
        return self.labels.size

    @property
    def D(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.features[idx], self.labels[idx], self.K)

    def subsample(self, cap: int, rng_seed: int):
        """Seeded shuffle truncated to ``cap`` rows; returns (dataset, indices)."""
        idx = np.random.default_rng(rng_seed).permutation(len(self))[: min(cap, len(self))]
        idx.sort()
        return self.subset(idx), idx

    def split(self, n_first: int, rng_seed: int):
        perm = np.random.default_rng(rng_seed).permutation(len(self))
        return self.subset(perm[:n_first]), self.subset(perm[n_first:])


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_dataset_csv(path) -> Dataset:
    """Parse feature columns followed by an integer label column.

    A header row is detected (any non-numeric field) and skipped.  Labels must
    cover a contiguous range starting at 0.
    """
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        width = None
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not all(_is_number(c) for c in row):
                continue
            if len(row) < 2:
                raise DataError("need at least one feature column and a label column", lineno)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"expected {width} columns, found {len(row)}", lineno)
            try:
                feats = [float(c) for c in row[:-1]]
            except ValueError as exc:
                raise DataError(f"non-numeric feature ({exc})", lineno) from None
            label_text = row[-1].strip()
            try:
                label = float(label_text)
            except ValueError:
                raise DataError(f"label {label_text!r} is not an integer", lineno) from None
            if label != int(label) or label < 0:
                raise DataError(f"label {label_text!r} is not a non-negative integer", lineno)
            rows.append(feats)
            labels.append(int(label))
    if not rows:
        raise DataError("no data rows")
    labels = np.array(labels)
    present = np.unique(labels)
    if not np.array_equal(present, np.arange(present.size)):
        raise DataError(f"labels must form a contiguous range from 0, found {present.tolist()}")
    return Dataset(np.array(rows), labels, int(present.size))


def dataset_to_csv(ds: Dataset, header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow([f"x{j}" for j in range(ds.D)] + ["label"])
    for x, y in zip(ds.features, ds.labels):
        writer.writerow([repr(float(v)) for v in x] + [int(y)])
    return buf.getvalue()


def write_dataset_csv(ds: Dataset, path, header: bool = True) -> None:
    Path(path).write_text(dataset_to_csv(ds, header))


def four_blobs(n_per_class: int = 100, std: float = 0.6, rng_seed: int = 0) -> Dataset:
    """Four Gaussian clusters centred at (+-2, +-2)."""
    rng = np.random.default_rng(rng_seed)
    centres = np.array([[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]])
    X = np.concatenate([c + std * rng.standard_normal((n_per_class, 2)) for c in centres])
    y = np.repeat(np.arange(4), n_per_class)
    perm = rng.permutation(y.size)
    return Dataset(X[perm], y[perm], 4)


def separable_binary(n: int = 1000, margin: float = 0.3, rng_seed: int = 0) -> Dataset:
    """2-D points split by a random line through the origin, with a margin gap."""
    rng = np.random.default_rng(rng_seed)
    angle = rng.uniform(0, 2 * np.pi)
    normal = np.array([np.cos(angle), np.sin(angle)])
    X = []
    while len(X) < n:
        cand = rng.uniform(-3, 3, size=(2 * n, 2))
        keep = np.abs(cand @ normal) > margin
        X.extend(cand[keep])
    X = np.array(X[:n])
    y = (X @ normal > 0).astype(int)
    return Dataset(X, y, 2)


def gaussian_classes(
    n: int, K: int = 10, dim: int = 20, separation: float = 1.6, rng_seed: int = 0
) -> Dataset:
    """Overlapping isotropic Gaussian classes with random centres in ``dim`` dimensions."""
    rng = np.random.default_rng(rng_seed)
    centres = separation * rng.standard_normal((K, dim))
    y = rng.integers(0, K, size=n)
    X = centres[y] + rng.standard_normal((n, dim))
    return Dataset(X, y, K)


def ionosphere_like(n: int = 351, dim: int = 34, rng_seed: int = 0) -> Dataset:
    """Synthetic stand-in with the shape of the UCI ionosphere data.

    Labels come from a radial rule on a 3-D latent code (roughly 64/36 class
    balance, 5% label noise); features are a bounded nonlinear embedding of
    the code plus noise, clipped to [-1, 1].
    """
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((n, 3))
    radius = np.linalg.norm(z, axis=1)
    y = (radius < np.quantile(radius, 0.64)).astype(int)
    flip = rng.random(n) < 0.05
    y[flip] = 1 - y[flip]
    A = rng.standard_normal((3, dim))
    b = rng.uniform(-1, 1, dim)
    X = np.tanh(z @ A / np.sqrt(3) + b) + 0.15 * rng.standard_normal((n, dim))
    return Dataset(np.clip(X, -1, 1), y, 2)
