"""Parameter-server simulation of robust compressed gradient descent.

:func:`run_alg1` is compressed gradient descent with norm-based trimming
(option 1: restricted adversary, workers report ``||x||``; option 2: arbitrary
adversary, the center sorts by the norm of what it received) or one of the
baseline aggregators. :func:`run_alg2` adds per-worker error feedback; there
the step size lives inside the workers' messages and the center applies none.

All randomness is drawn from streams keyed by ``(run seed, purpose, worker,
iteration)``, so a run is a pure function of its configuration.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from byzgd import problems
from byzgd.aggregation import (
    AggregatorSpec,
    coord_trimmed_mean,
    norm_trim,
    sign_majority,
    trim_count,
    vanilla_mean,
)
from byzgd.byzantine import AttackSpec, corrupt_gradient, corrupt_shard, select_byzantine
from byzgd.compressors import (
    NONE,
    CompressedMsg,
    CompressorSpec,
    compress,
    message_bits,
    stated_delta,
)
from byzgd.errors import InvalidInput, InvalidSpec
from byzgd.problems import Dataset, ProblemSpec

log = logging.getLogger(__name__)

# stream purposes
_ATTACK, _QUANT, _LABELS = 2, 3, 4


def stream(seed: int, purpose: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, *key)))


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    compressor: CompressorSpec = field(default_factory=CompressorSpec)
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    option: int = 1
    algorithm: int = 1
    alpha: float = 0.0
    attack: AttackSpec = field(default_factory=AttackSpec)
    gamma: float | str = "auto"
    gamma_c: float = 0.5
    T: int = 100
    w0: tuple[float, ...] | None = None
    seed: int = 0
    smoothness: float | None = None
    radius: float | None = None

    def validate(self) -> list[str]:
        """Raise :class:`InvalidSpec` naming the first violated invariant; return warnings."""
        warnings = []
        if self.option not in (1, 2):
            raise InvalidSpec(f"option must be 1 or 2, got {self.option!r}")
        if self.algorithm not in (1, 2):
            raise InvalidSpec(f"algorithm must be 1 or 2, got {self.algorithm!r}")
        if not 0.0 <= self.alpha <= 0.5:
            raise InvalidSpec(f"alpha must lie in [0, 1/2], got {self.alpha}")
        if self.alpha == 0.5:
            warnings.append("alpha = 1/2 is at the breakdown point; no guarantee applies")
        if self.gamma != "auto":
            if isinstance(self.gamma, str) or not self.gamma > 0:
                raise InvalidSpec(f"gamma must be positive or 'auto', got {self.gamma!r}")
        if not self.gamma_c > 0:
            raise InvalidSpec(f"gamma_c must be positive, got {self.gamma_c}")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidSpec(f"T must be an integer >= 1, got {self.T}")
        dim = self.problem.param_dim
        if self.w0 is not None and len(self.w0) != dim:
            raise InvalidSpec(f"w0 has length {len(self.w0)}, problem dimension is {dim}")
        try:
            self.compressor.check_dim(dim)
        except InvalidInput as exc:
            raise InvalidSpec(str(exc)) from None
        signsgd = self.aggregator.kind == "sign_majority"
        if signsgd != (self.compressor.kind == "sign"):
            raise InvalidSpec("sign_majority aggregation and the sign compressor go together")
        if self.algorithm == 2 and self.aggregator.kind != "norm_trim":
            raise InvalidSpec("error feedback (algorithm 2) uses norm_trim aggregation")
        if self.attack.is_data_level and self.problem.kind != "logistic":
            raise InvalidSpec(f"{self.attack.kind} attack needs a logistic problem")
        if self.gamma == "auto" and self.problem.kind != "least_squares" and self.smoothness is None:
            raise InvalidSpec("gamma 'auto' on a logistic problem needs a configured smoothness")
        if self.smoothness is not None and not self.smoothness > 0:
            raise InvalidSpec("smoothness must be positive")
        m = self.problem.m
        if self.aggregator.kind == "coord_trimmed_mean" and m <= 2 * trim_count(m, self.aggregator.beta):
            raise InvalidSpec("coord_trimmed_mean needs m > 2 ceil(beta m)")
        if self.aggregator.trims and self.aggregator.beta < self.alpha:
            warnings.append(f"beta={self.aggregator.beta} < alpha={self.alpha}: trimming cannot cover every Byzantine worker")
        return warnings

    @property
    def sends_norm(self) -> bool:
        """Whether option-1 messages pay for a separate norm field.

        Dense and QSGD payloads already determine ||x||, so only top-k and
        l1-QSGD need the extra float.
        """
        return (self.algorithm == 1 and self.option == 1 and self.aggregator.kind != "sign_majority"
                and self.compressor.kind in ("topk", "l1qsgd"))


@dataclass(frozen=True)
class TraceRecord:
    t: int
    dist_to_opt: float | None
    loss: float
    grad_norm: float
    trimmed: tuple[int, ...]
    byz_caught: int
    cum_bits: int
    delta_norm: float | None


@dataclass
class RunResult:
    config: RunConfig
    records: list[TraceRecord]
    w: np.ndarray
    byzantine: tuple[int, ...]
    gamma: float
    converged_at: int | None = None
    iterates: list[np.ndarray] = field(default_factory=list)
    honest_grad_sq: list[float] = field(default_factory=list)
    memory_check: list[tuple[int, float, float]] = field(default_factory=list)
    aux_dist: list[float] = field(default_factory=list)
    min_delta: float | None = None
    w_star: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def final_dist(self) -> float | None:
        return self.records[-1].dist_to_opt

    @property
    def bits_to_converge(self) -> int | None:
        if self.converged_at is None:
            return None
        return self.records[self.converged_at].cum_bits


def _with_norm(msg: CompressedMsg, x: np.ndarray, paid: bool) -> CompressedMsg:
    return msg.with_norm(float(np.linalg.norm(x)), 32 if paid else 0)


def error_feedback_step(spec: CompressorSpec, grad, memory, gamma: float,
                        rng: np.random.Generator | None = None) -> tuple[CompressedMsg, np.ndarray]:
    """One honest worker round with error feedback; returns the message and the new memory."""
    p = gamma * np.asarray(grad, dtype=np.float64) + memory
    msg = compress(spec, p, rng)
    return msg, p - msg.decode()


class _Simulation:
    def __init__(self, cfg: RunConfig, shards: Sequence[Dataset] | None, byzantine: Sequence[int] | None):
        self.warnings = cfg.validate()
        for w in self.warnings:
            log.warning(w)
        self.cfg = cfg
        self.shards = list(shards) if shards is not None else problems.generate(cfg.problem)
        m = len(self.shards)
        if shards is not None and m != cfg.problem.m:
            raise InvalidSpec(f"got {m} shards for m={cfg.problem.m}")
        self.byz = tuple(sorted(byzantine)) if byzantine is not None else select_byzantine(m, cfg.alpha, cfg.seed)
        self.byz_set = set(self.byz)
        self.honest = [i for i in range(m) if i not in self.byz_set]
        self.worker_data = [
            corrupt_shard(cfg.attack, s, stream(cfg.seed, _LABELS, i))
            if i in self.byz_set and cfg.attack.is_data_level else s
            for i, s in enumerate(self.shards)
        ]
        self.dim = self.shards[0].param_dim
        if cfg.gamma == "auto":
            smooth = cfg.smoothness if cfg.smoothness is not None else problems.smoothness_estimate(self.shards)
            self.gamma = cfg.gamma_c / smooth
        else:
            self.gamma = float(cfg.gamma)
        self.w_star = self.shards[0].w_star
        self.per_msg_bits = message_bits(cfg.compressor, self.dim, with_norm=cfg.sends_norm)

    def _snapshot(self, t, w, trimmed, caught, bits, delta_norm) -> TraceRecord:
        dist = None if self.w_star is None else float(np.linalg.norm(w - self.w_star))
        grad = problems.population_gradient(self.shards, w)
        return TraceRecord(t, dist, problems.population_loss(self.shards, w), float(np.linalg.norm(grad)),
                           tuple(trimmed), caught, bits, delta_norm)

    def _byzantine_message(self, i: int, t: int, u: np.ndarray, error_feedback: bool) -> CompressedMsg:
        cfg = self.cfg
        gradient_attack = cfg.attack if not cfg.attack.is_data_level else AttackSpec("none")
        star = corrupt_gradient(gradient_attack, u, stream(cfg.seed, _ATTACK, i, t))
        if cfg.compressor.kind == "sign":
            return compress(cfg.compressor, star)
        if not error_feedback and cfg.option == 1:
            msg = compress(cfg.compressor, star, stream(cfg.seed, _QUANT, i, t))
            return _with_norm(msg, star, cfg.sends_norm)
        # option 2 and error feedback: the adversary sends an arbitrary raw vector
        return compress(NONE, star)

    def run(self, error_feedback: bool, target: float | None) -> RunResult:
        cfg, gamma, m = self.cfg, self.gamma, len(self.shards)
        w = np.zeros(self.dim) if cfg.w0 is None else np.array(cfg.w0, dtype=np.float64)
        w_init = w.copy()
        memory = [np.zeros(self.dim) for _ in range(m)]
        res = RunResult(cfg, [self._snapshot(0, w, (), 0, 0, None)], w, self.byz, gamma,
                        w_star=self.w_star, warnings=list(self.warnings))
        res.iterates.append(w.copy())
        bits = 0
        sigma_sq = 0.0
        radius_warned = False
        deltas = []
        if target is not None and res.records[0].dist_to_opt is not None and res.records[0].dist_to_opt <= target:
            res.converged_at = 0
        t = 0
        while res.converged_at is None and t < cfg.T:
            grads = [problems.local_gradient(self.worker_data[i], w) for i in range(m)]
            honest_sq = max((float(grads[i] @ grads[i]) for i in self.honest), default=0.0)
            res.honest_grad_sq.append(honest_sq)
            sigma_sq = max(sigma_sq, honest_sq)
            if error_feedback:
                worst = max((float(memory[i] @ memory[i]) for i in self.honest), default=0.0)
                res.memory_check.append((t, worst, sigma_sq))
                if self.honest and self.w_star is not None:
                    aux = w - np.mean([memory[i] for i in self.honest], axis=0)
                    res.aux_dist.append(float(np.linalg.norm(aux - self.w_star)))
            msgs = []
            for i in range(m):
                rng = stream(cfg.seed, _QUANT, i, t)
                if i in self.byz_set and not cfg.attack.is_data_level:
                    u = gamma * grads[i] if error_feedback else grads[i]
                    msgs.append(self._byzantine_message(i, t, u, error_feedback))
                    continue
                if error_feedback:
                    msg, memory[i] = error_feedback_step(cfg.compressor, grads[i], memory[i], gamma, rng)
                    x = gamma * grads[i]
                else:
                    x = grads[i]
                    msg = compress(cfg.compressor, x, rng)
                    if cfg.option == 1 and cfg.aggregator.kind != "sign_majority":
                        msg = _with_norm(msg, x, cfg.sends_norm)
                if cfg.compressor.kind == "l1qsgd" and i not in self.byz_set:
                    deltas.append(stated_delta(cfg.compressor, self.dim, x))
                msgs.append(msg)

            trimmed: tuple[int, ...] = ()
            kind = cfg.aggregator.kind
            if kind == "norm_trim":
                outcome = norm_trim(msgs, cfg.aggregator.beta, 2 if error_feedback else cfg.option)
                update, trimmed = outcome.update, outcome.trimmed
            elif kind == "vanilla_mean":
                update = vanilla_mean(msgs)
            elif kind == "coord_trimmed_mean":
                update = coord_trimmed_mean([msg.decode() for msg in msgs], cfg.aggregator.beta)
            else:
                update = sign_majority(msgs)

            step = update if error_feedback else gamma * update
            direction = step / gamma
            delta_norm = float(np.linalg.norm(direction - problems.population_gradient(self.shards, w)))
            w = w - step
            bits += m * self.per_msg_bits
            t += 1
            caught = len(self.byz_set.intersection(trimmed))
            rec = self._snapshot(t, w, trimmed, caught, bits, delta_norm)
            res.records.append(rec)
            res.iterates.append(w.copy())
            if cfg.radius is not None and not radius_warned and np.linalg.norm(w - w_init) > cfg.radius:
                radius_warned = True
                msg = f"iterate left the radius-{cfg.radius} ball around w0 at t={t}"
                log.warning(msg)
                res.warnings.append(msg)
            if not np.all(np.isfinite(w)):
                res.warnings.append(f"iterate diverged to non-finite values at t={t}")
                break
            if target is not None and rec.dist_to_opt is not None and rec.dist_to_opt <= target:
                res.converged_at = t

        if error_feedback and self.honest:
            grads = [problems.local_gradient(self.shards[i], w) for i in self.honest]
            sigma_sq = max(sigma_sq, max(float(g @ g) for g in grads))
            worst = max(float(memory[i] @ memory[i]) for i in self.honest)
            res.memory_check.append((t, worst, sigma_sq))
        res.w = w
        if deltas:
            res.min_delta = min(deltas)
        elif cfg.compressor.kind not in ("l1qsgd", "sign"):
            res.min_delta = stated_delta(cfg.compressor, self.dim)
        return res


def run_alg1(cfg: RunConfig, shards: Sequence[Dataset] | None = None,
             byzantine: Sequence[int] | None = None, target: float | None = None) -> RunResult:
    """Robust compressed gradient descent for ``cfg.T`` rounds (or until ``target``)."""
    return _Simulation(cfg, shards, byzantine).run(False, target)


def run_alg2(cfg: RunConfig, shards: Sequence[Dataset] | None = None,
             byzantine: Sequence[int] | None = None, target: float | None = None) -> RunResult:
    """Robust compressed gradient descent with error feedback at honest workers."""
    return _Simulation(cfg, shards, byzantine).run(True, target)


def run(cfg: RunConfig, **kwargs) -> RunResult:
    return (run_alg2 if cfg.algorithm == 2 else run_alg1)(cfg, **kwargs)


@dataclass(frozen=True)
class ThresholdResult:
    converged: bool
    iterations: int
    bits: int
    result: RunResult


def run_to_threshold(cfg: RunConfig, target_dist: float, **kwargs) -> ThresholdResult:
    """Run until ``||w_t - w*|| <= target_dist`` or ``cfg.T`` rounds pass."""
    if cfg.problem.kind != "least_squares" and kwargs.get("shards") is None:
        raise InvalidSpec("run_to_threshold needs a regression problem with a known optimum")
    res = run(cfg, target=target_dist, **kwargs)
    last = res.records[-1]
    return ThresholdResult(res.converged_at is not None, last.t, last.cum_bits, res)


def honest_memory_bound(delta: float, gamma: float, sigma_sq: float) -> float:
    """3 (1 - delta) / delta * gamma^2 * sigma^2, the honest error-memory ceiling."""
    return 3 * (1 - delta) / delta * gamma**2 * sigma_sq


def iterate_diameter(result: RunResult) -> float:
    """Diameter of the visited iterates together with w* (when known)."""
    pts = list(result.iterates)
    if result.w_star is not None:
        pts.append(result.w_star)
    pts = np.asarray(pts)
    sq = np.sum(pts**2, axis=1)
    gram = sq[:, None] + sq[None, :] - 2 * pts @ pts.T
    return float(math.sqrt(max(float(np.max(gram)), 0.0)))
