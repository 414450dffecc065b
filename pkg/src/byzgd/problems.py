"""Synthetic learning problems, sharding, and gradient oracles.

Two problems are provided: noiseless (or noisy) least squares with Gaussian
design, ``F_i(w) = ||X_i w - y_i||^2 / (2 n_i)``, and a multinomial logistic
classifier whose parameter is the row-major flattening of a ``d x C`` weight
matrix.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from byzgd.errors import InvalidInput, InvalidSpec, UnsupportedOperation

PROBLEM_KINDS = ("least_squares", "logistic")
_ALIASES = {
    "least_squares": "least_squares",
    "leastsquares": "least_squares",
    "regression": "least_squares",
    "logistic": "logistic",
    "logistic_softmax": "logistic",
    "logisticsoftmax": "logistic",
}


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "least_squares"
    N: int = 4000
    d: int = 100
    m: int = 20
    noise_std: float = 0.0
    seed: int = 0
    num_classes: int = 10

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower().replace("-", "_"))
        if kind is None:
            raise InvalidSpec(f"unknown problem kind {self.kind!r}; expected one of {PROBLEM_KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.d <= 0:
            raise InvalidSpec(f"d must be positive, got {self.d}")
        if self.m <= 0:
            raise InvalidSpec(f"m must be positive, got {self.m}")
        if self.N < self.m:
            raise InvalidSpec(f"N must be at least m, got N={self.N}, m={self.m}")
        if self.noise_std < 0:
            raise InvalidSpec("noise_std must be nonnegative")
        if kind == "logistic" and self.num_classes < 2:
            raise InvalidSpec("logistic problems need num_classes >= 2")

    @property
    def param_dim(self) -> int:
        return self.d * self.num_classes if self.kind == "logistic" else self.d


@dataclass(frozen=True, eq=False)
class Dataset:
    """One worker's shard. ``w_star`` is the regression ground truth (None for logistic)."""

    X: np.ndarray
    y: np.ndarray
    kind: str = "least_squares"
    w_star: np.ndarray | None = None
    num_classes: int = 0

    def __post_init__(self):
        for arr in (self.X, self.y, self.w_star):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def param_dim(self) -> int:
        d = self.X.shape[1]
        return d * self.num_classes if self.kind == "logistic" else d

    def replace_labels(self, y: np.ndarray) -> Dataset:
        return Dataset(self.X, np.array(y), self.kind, self.w_star, self.num_classes)


def shard_sizes(N: int, m: int) -> list[int]:
    """Near-equal split; the first ``N mod m`` shards take one extra point."""
    base, extra = divmod(N, m)
    return [base + (i < extra) for i in range(m)]


def split(X, y, m: int, kind: str = "least_squares", w_star=None, num_classes: int = 0) -> list[Dataset]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InvalidInput(f"need X of shape (N, d) and y of shape (N,), got {X.shape} and {y.shape}")
    if X.shape[0] < m:
        raise InvalidSpec(f"cannot split {X.shape[0]} points over {m} workers")
    shards, start = [], 0
    for size in shard_sizes(X.shape[0], m):
        stop = start + size
        shards.append(Dataset(X[start:stop].copy(), y[start:stop].copy(), kind,
                              None if w_star is None else np.array(w_star, dtype=np.float64),
                              num_classes))
        start = stop
    return shards


def generate(spec: ProblemSpec) -> list[Dataset]:
    """Draw the pooled data from ``spec.seed`` and split it over ``spec.m`` workers."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    X = rng.standard_normal((spec.N, spec.d))
    if spec.kind == "least_squares":
        w_star = rng.standard_normal(spec.d)
        y = X @ w_star
        if spec.noise_std > 0:
            y = y + spec.noise_std * rng.standard_normal(spec.N)
        return split(X, y, spec.m, "least_squares", w_star)
    W = rng.standard_normal((spec.d, spec.num_classes)) / math.sqrt(spec.d)
    logits = X @ W
    # Gumbel-max draws a label from softmax(logits).
    labels = np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)
    return split(X, labels, spec.m, "logistic", None, spec.num_classes)


def load_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a header row then one sample per line, label in the last column."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidInput(f"{path}: need a header and at least one sample")
    data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=np.float64)
    return data[:, :-1], data[:, -1]


def _check_w(shard: Dataset, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (shard.param_dim,):
        raise InvalidInput(f"parameter has shape {w.shape}, shard expects ({shard.param_dim},)")
    return w


def _softmax_parts(shard: Dataset, w: np.ndarray):
    W = w.reshape(shard.X.shape[1], shard.num_classes)
    logits = shard.X @ W
    logits = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    labels = shard.y.astype(np.int64)
    return logits, logz, labels


def local_loss(shard: Dataset, w) -> float:
    w = _check_w(shard, w)
    if shard.kind == "least_squares":
        r = shard.X @ w - shard.y
        return float(r @ r) / (2 * shard.n)
    logits, logz, labels = _softmax_parts(shard, w)
    return float(np.mean(logz - logits[np.arange(shard.n), labels]))


def local_gradient(shard: Dataset, w) -> np.ndarray:
    w = _check_w(shard, w)
    if shard.kind == "least_squares":
        return shard.X.T @ (shard.X @ w - shard.y) / shard.n
    logits, logz, labels = _softmax_parts(shard, w)
    probs = np.exp(logits - logz[:, None])
    probs[np.arange(shard.n), labels] -= 1.0
    return (shard.X.T @ probs / shard.n).ravel()


def population_loss(shards: list[Dataset], w) -> float:
    return float(np.mean([local_loss(s, w) for s in shards]))


def population_gradient(shards: list[Dataset], w) -> np.ndarray:
    """Arithmetic mean of the local gradients."""
    if not shards:
        raise InvalidInput("need at least one shard")
    return np.mean([local_gradient(s, w) for s in shards], axis=0)


def smoothness_estimate(shards: list[Dataset], tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of X^T X / N over the pooled data, by power iteration."""
    if any(s.kind != "least_squares" for s in shards):
        raise UnsupportedOperation("smoothness is only estimated for least squares; configure it otherwise")
    X = np.vstack([s.X for s in shards])
    gram = X.T @ X / X.shape[0]
    v = np.random.default_rng(0).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = gram @ v
        rayleigh = float(v @ u)
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            return 0.0
        v = u / norm
        if abs(rayleigh - lam) <= tol * max(rayleigh, 1.0):
            return rayleigh
        lam = rayleigh
    return lam


def gradient_norm_bound(shard: Dataset, D: float) -> float:
    """Fixed-design bound (R^2 D / n + R / sqrt(n))^2 with R = ||X||_op."""
    if shard.kind != "least_squares":
        raise UnsupportedOperation("gradient norm bound is derived for least squares only")
    R = float(np.linalg.norm(shard.X, 2))
    n = shard.n
    return (R * R * D / n + R / math.sqrt(n)) ** 2
