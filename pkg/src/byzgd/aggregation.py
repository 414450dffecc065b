"""Center-side aggregation: norm-based trimming and the comparison baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from byzgd.compressors import CompressedMsg
from byzgd.errors import InvalidInput, InvalidSpec

AGGREGATOR_KINDS = ("norm_trim", "vanilla_mean", "coord_trimmed_mean", "sign_majority")
_ALIASES = {
    "norm_trim": "norm_trim",
    "normtrim": "norm_trim",
    "vanilla_mean": "vanilla_mean",
    "vanillamean": "vanilla_mean",
    "mean": "vanilla_mean",
    "coord_trimmed_mean": "coord_trimmed_mean",
    "coordtrimmedmean": "coord_trimmed_mean",
    "trimmed_mean": "coord_trimmed_mean",
    "sign_majority": "sign_majority",
    "signmajority": "sign_majority",
}


@dataclass(frozen=True)
class AggregatorSpec:
    kind: str = "norm_trim"
    beta: float = 0.0

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower().replace("-", "_"))
        if kind is None:
            raise InvalidSpec(f"unknown aggregator kind {self.kind!r}; expected one of {AGGREGATOR_KINDS}")
        object.__setattr__(self, "kind", kind)
        if not 0.0 <= self.beta < 0.5:
            raise InvalidSpec(f"beta must lie in [0, 1/2), got {self.beta}")

    @property
    def trims(self) -> bool:
        return self.kind in ("norm_trim", "coord_trimmed_mean")


@dataclass(frozen=True, eq=False)
class TrimOutcome:
    kept: tuple[int, ...]
    trimmed: tuple[int, ...]
    update: np.ndarray


def exact_mean(vectors) -> np.ndarray:
    """Coordinate-wise mean with correctly rounded sums, so input order never matters."""
    stack = np.asarray(vectors, dtype=np.float64)
    return np.array([math.fsum(col) for col in stack.T]) / stack.shape[0]


def trim_count(m: int, beta: float) -> int:
    """ceil(beta * m), tolerant of float products like 0.15 * 20."""
    return int(math.ceil(beta * m - 1e-9))


def trim_by_keys(vectors, keys, beta: float) -> TrimOutcome:
    """Drop the ceil(beta m) largest keys (ties by index) and average the rest."""
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    keys = np.asarray(keys, dtype=np.float64)
    m = len(vectors)
    if m == 0:
        raise InvalidInput("no messages to aggregate")
    if keys.shape != (m,):
        raise InvalidInput(f"need one key per message, got {keys.shape} for {m}")
    if not 0.0 <= beta < 1.0:
        raise InvalidInput(f"beta must lie in [0, 1), got {beta}")
    drop = trim_count(m, beta)
    if drop >= m:
        raise InvalidInput(f"trimming {drop} of {m} workers leaves nothing to average")
    order = np.lexsort((np.arange(m), keys))
    kept = tuple(sorted(int(i) for i in order[: m - drop]))
    trimmed = tuple(sorted(int(i) for i in order[m - drop:]))
    update = exact_mean([vectors[i] for i in kept])
    return TrimOutcome(kept, trimmed, update)


def norm_trim(msgs: list[CompressedMsg], beta: float, option: int) -> TrimOutcome:
    """Norm-based thresholding.

    Option 1 sorts by the norm each worker reported for its uncompressed input;
    option 2 ignores reported norms and sorts by the norm of the decoded message.
    """
    if not msgs:
        raise InvalidInput("no messages to aggregate")
    decoded = [m.decode() for m in msgs]
    if len({v.shape for v in decoded}) != 1:
        raise InvalidInput("messages disagree on dimension")
    if option == 1:
        if any(m.reported_norm is None for m in msgs):
            raise InvalidInput("option 1 needs a reported norm on every message")
        keys = [m.reported_norm for m in msgs]
    elif option == 2:
        keys = [float(np.linalg.norm(v)) for v in decoded]
    else:
        raise InvalidInput(f"option must be 1 or 2, got {option}")
    return trim_by_keys(decoded, keys, beta)


def vanilla_mean(msgs: list[CompressedMsg]) -> np.ndarray:
    if not msgs:
        raise InvalidInput("no messages to aggregate")
    return exact_mean([m.decode() for m in msgs])


def coord_trimmed_mean(vectors, beta: float) -> np.ndarray:
    """Per coordinate, drop the ceil(beta m) largest and smallest values and average."""
    stack = np.asarray([np.asarray(v, dtype=np.float64) for v in vectors])
    if stack.ndim != 2:
        raise InvalidInput("need a nonempty list of equal-length vectors")
    m = stack.shape[0]
    b = trim_count(m, beta)
    if m <= 2 * b:
        raise InvalidInput(f"{m} workers cannot lose {b} from each side")
    ordered = np.sort(stack, axis=0)
    return ordered[b:m - b].mean(axis=0)


def sign_majority(signs) -> np.ndarray:
    """Coordinate-wise majority of +-1 votes; a tied vote gives +1.

    Accepts sign messages or raw sign vectors.
    """
    votes = [m.decode() if isinstance(m, CompressedMsg) else np.asarray(m, dtype=np.float64)
             for m in signs]
    if not votes:
        raise InvalidInput("no votes to aggregate")
    total = np.sum(np.where(np.asarray(votes) >= 0, 1.0, -1.0), axis=0)
    return np.where(total >= 0, 1.0, -1.0)
