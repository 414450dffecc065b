"""Attack models for Byzantine workers.

Gradient-level attacks turn a worker's would-be message into the arbitrary
vector the adversary sends; data-level attacks corrupt the labels of a
classification shard once, after which the worker behaves honestly on the
corrupted data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from byzgd.errors import InvalidSpec, UnsupportedOperation
from byzgd.problems import Dataset

ATTACK_KINDS = ("none", "gaussian", "negative", "random_label", "label_shift")
GRADIENT_ATTACKS = ("none", "gaussian", "negative")
DATA_ATTACKS = ("random_label", "label_shift")

_ALIASES = {
    "none": "none",
    "gaussian": "gaussian",
    "gaussian_additive": "gaussian",
    "gaussianadditive": "gaussian",
    "negative": "negative",
    "negative_scaled": "negative",
    "negativescaled": "negative",
    "random_label": "random_label",
    "randomlabel": "random_label",
    "label_shift": "label_shift",
    "labelshift": "label_shift",
}


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    noise_var: float = 10.0
    eps: float = 0.9
    num_classes: int = 10

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower().replace("-", "_"))
        if kind is None:
            raise InvalidSpec(f"unknown attack kind {self.kind!r}; expected one of {ATTACK_KINDS}")
        object.__setattr__(self, "kind", kind)
        if not 0.0 <= self.eps <= 1.0:
            raise InvalidSpec(f"attack eps must lie in [0, 1], got {self.eps}")
        if self.noise_var < 0:
            raise InvalidSpec(f"attack noise_var must be nonnegative, got {self.noise_var}")
        if self.num_classes < 2:
            raise InvalidSpec("attack num_classes must be at least 2")

    @property
    def is_data_level(self) -> bool:
        return self.kind in DATA_ATTACKS


def byzantine_count(m: int, alpha: float) -> int:
    # tolerance guards products such as 0.29 * 100 = 28.999...
    return int(math.floor(alpha * m + 1e-9))


def select_byzantine(m: int, alpha: float, seed: int) -> tuple[int, ...]:
    """floor(alpha * m) distinct worker indices drawn from the run seed, sorted."""
    count = byzantine_count(m, alpha)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    return tuple(sorted(int(i) for i in rng.choice(m, size=count, replace=False)))


def corrupt_gradient(spec: AttackSpec, g, rng: np.random.Generator | None = None) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if spec.kind == "gaussian":
        if spec.noise_var == 0:
            return g.copy()
        if rng is None:
            raise ValueError("gaussian attack needs a random generator")
        return g + math.sqrt(spec.noise_var) * rng.standard_normal(g.shape)
    if spec.kind == "negative":
        return -spec.eps * g
    if spec.kind == "none":
        return g.copy()
    raise UnsupportedOperation(f"{spec.kind} corrupts data, not gradients")


def corrupt_shard(spec: AttackSpec, shard: Dataset, rng: np.random.Generator | None = None) -> Dataset:
    if spec.kind in GRADIENT_ATTACKS:
        raise UnsupportedOperation(f"{spec.kind} corrupts gradients, not data")
    if shard.kind != "logistic":
        raise UnsupportedOperation("label attacks need a classification shard")
    classes = shard.num_classes or spec.num_classes
    if spec.kind == "label_shift":
        return shard.replace_labels((classes - 1) - shard.y)
    if rng is None:
        raise ValueError("random_label attack needs a random generator")
    return shard.replace_labels(rng.integers(0, classes, size=shard.n))
