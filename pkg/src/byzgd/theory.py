"""Closed-form error-floor quantities and compression/adversary feasibility checks.

All logarithms are natural. The universal constants of the bounds are not
identified, so every bound is reported up to ``c_univ``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

EF_LIMIT = 0.107


@dataclass(frozen=True)
class TheoryParams:
    v: float = 1.0
    Lhat: float = 1.0
    L_F: float = 1.0
    L: float = 1.0
    D: float = 1.0
    sigma_sq: float = 0.0
    lambda0: float = 1e-2
    c_univ: float = 1.0
    d: int = 1
    n: int = 1
    m: int = 1
    alpha: float = 0.0
    beta: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        if not 0 <= self.alpha <= self.beta < 0.5:
            raise ValueError(f"need 0 <= alpha <= beta < 1/2, got alpha={self.alpha}, beta={self.beta}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        for name in ("v", "Lhat", "D", "lambda0", "c_univ"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if min(self.d, self.n, self.m) < 1:
            raise ValueError("d, n and m must be positive integers")


def _deviation(v: float, d: int, samples: float, D: float, Lhat: float) -> float:
    ratio = d / samples * math.log(1 + 2 * samples * D * Lhat * d)
    return v * math.sqrt(d) * max(ratio, math.sqrt(ratio))


def eps1(p: TheoryParams) -> float:
    """Deviation of one honest local gradient from the population gradient."""
    return _deviation(p.v, p.d, p.n, p.D, p.Lhat) + 1.0 / p.n


def eps2(p: TheoryParams) -> float:
    """Deviation of the honest average, over (1 - alpha) m n samples."""
    return _deviation(p.v, p.d, (1 - p.alpha) * p.m * p.n, p.D, p.Lhat)


def _floor(p: TheoryParams, e1: float | None, e2: float | None, scale: float) -> float:
    e1 = eps1(p) if e1 is None else e1
    e2 = eps2(p) if e2 is None else e2
    honest = ((1 - p.alpha) / (1 - p.beta)) ** 2 * e2**2
    mixed = ((scale * math.sqrt(1 - p.delta) + p.alpha + p.beta) / (1 - p.beta)) ** 2 * e1**2
    return 2 * (1 + 1 / p.lambda0) * (honest + mixed)


def eps_combined(p: TheoryParams, e1: float | None = None, e2: float | None = None) -> float:
    """Error floor against restricted adversaries; ``e1``/``e2`` override the computed deviations."""
    return _floor(p, e1, e2, 1.0)


def eps_tilde(p: TheoryParams, e1: float | None = None, e2: float | None = None) -> float:
    """Error floor against arbitrary adversaries (compressed-norm sorting)."""
    return _floor(p, e1, e2, 1.0 + p.beta)


def delta_threshold_option1(alpha: float, beta: float, lambda0: float) -> float:
    delta0 = 1 - (1 - beta) ** 2 / (1 + lambda0)
    return delta0 + 4 * alpha - 9 * alpha**2 + 4 * alpha**3


def delta_threshold_option2(alpha: float, beta: float, lambda0: float) -> float:
    delta0 = 1 - (1 - beta) ** 2 / ((1 + beta) ** 2 * (1 + lambda0))
    return delta0 + 4 * alpha - 8 * alpha**2 + 4 * alpha**3


def _adversary_mass(alpha: float, beta: float, delta: float) -> float:
    return (1 + math.sqrt(1 - delta)) ** 2 / (1 - beta) ** 2 * (alpha**2 + beta**2 + (beta - alpha) ** 2)


def ef_condition(alpha: float, beta: float, delta: float) -> tuple[float, bool]:
    """Left-hand side of the error-feedback feasibility condition and whether it is below 0.107."""
    value = _adversary_mass(alpha, beta, delta)
    return value, value < EF_LIMIT


def ef_deltas(p: TheoryParams, e1: float | None = None, e2: float | None = None) -> tuple[float, float, float]:
    """The three error-feedback floor terms (constant, times gamma, times gamma^2)."""
    e1 = eps1(p) if e1 is None else e1
    e2 = eps2(p) if e2 is None else e2
    c, L = p.c_univ, p.L_F
    memory = 3 * (1 - p.delta) / p.delta * p.sigma_sq
    mass = _adversary_mass(p.alpha, p.beta, p.delta)
    d1 = 9 / (2 * c) * mass * (e1**2 + memory) + 50 / c * e2**2
    d2 = L**2 / 2 * memory / c + 2 * L * e2**2 / c + (0.5 + L) * 9 / c * mass * (e1**2 + memory)
    d3 = (L**2 / 100 + 25 * L**2) * memory / c
    return d1, d2, d3


def ef_bound(p: TheoryParams, F0_gap: float, gamma: float, T: int,
             e1: float | None = None, e2: float | None = None) -> float:
    d1, d2, d3 = ef_deltas(p, e1, e2)
    return F0_gap / (p.c_univ * gamma * (T + 1)) + d1 + gamma * d2 + gamma**2 * d3


def ef_nobyz_terms(F0_gap: float, gamma: float, T: int, L_F: float, L: float, delta: float) -> tuple[float, float]:
    """Optimization and compression terms of the no-adversary error-feedback bound."""
    if not gamma < 1 / L_F:
        raise ValueError(f"need gamma < 1/L_F, got gamma={gamma}, L_F={L_F}")
    denom = 0.5 - L_F * gamma / 2
    first = F0_gap / (gamma * (T + 1) * denom)
    second = 4 * gamma**2 * L_F**2 * L**2 * (1 - delta) / (delta**2 * denom)
    return first, second


def ef_nobyz_bound(F0_gap: float, gamma: float, T: int, L_F: float, L: float, delta: float) -> float:
    return sum(ef_nobyz_terms(F0_gap, gamma, T, L_F, L, delta))


def failure_probability(p: TheoryParams) -> float:
    """The bounds' failure-probability terms, with both constants set to c_univ."""
    n, m, d = p.n, p.m, p.d
    a = p.c_univ * (1 - p.alpha) * m * d / (1 + n * p.Lhat * p.D) ** d
    b = p.c_univ * d / (1 + (1 - p.alpha) * m * n * p.Lhat * p.D) ** d
    return a + b


def check(alpha: float, beta: float, delta: float, option: str, lambda0: float = 1e-2) -> dict:
    """Feasibility verdict for one (alpha, beta, delta) triple under option '1', '2' or 'ef'."""
    option = str(option).lower()
    if option in ("1", "2"):
        fn = delta_threshold_option1 if option == "1" else delta_threshold_option2
        threshold = fn(alpha, beta, lambda0)
        return {
            "option": option,
            "threshold": threshold,
            "delta": delta,
            "margin": delta - threshold,
            "feasible": delta > threshold,
            "beta_covers_alpha": beta >= alpha,
        }
    if option == "ef":
        value, ok = ef_condition(alpha, beta, delta)
        return {
            "option": option,
            "value": value,
            "limit": EF_LIMIT,
            "margin": EF_LIMIT - value,
            "feasible": ok,
            "beta_covers_alpha": beta >= alpha,
        }
    raise ValueError(f"option must be '1', '2' or 'ef', got {option!r}")
