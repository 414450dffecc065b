import math
import sys
from pathlib import Path

import numpy as np
import pytest
import sympy as sp

from byzgd import theory
from byzgd.theory import TheoryParams

sys.path.insert(0, str(Path(__file__).parent / "oracles"))
import theory_oracle as oracle  # noqa: E402

R = sp.Rational


def test_eps1_unit_params():
    assert theory.eps1(TheoryParams()) == pytest.approx(math.log(3) + 1, rel=1e-14)


def test_eps2_unit_params():
    assert theory.eps2(TheoryParams()) == pytest.approx(math.log(3), rel=1e-14)


def test_eps2_reduces_to_eps1_without_tail():
    p = TheoryParams(v=1.3, d=4, n=50, m=1, D=2.0, Lhat=0.7)
    assert theory.eps2(p) == pytest.approx(theory.eps1(p) - 1 / 50, rel=1e-14)


def test_eps_vanish_with_samples():
    big = TheoryParams(n=10**12, m=10**3)
    assert theory.eps1(big) < 1e-4 and theory.eps2(big) < 1e-6


def test_eps1_linear_in_v():
    a, b = TheoryParams(v=1.0, n=7, d=3), TheoryParams(v=2.0, n=7, d=3)
    assert theory.eps1(b) - 1 / 7 == pytest.approx(2 * (theory.eps1(a) - 1 / 7))


def test_eps_combined_worked_example():
    p = TheoryParams(alpha=0.1, beta=0.1, delta=0.96, lambda0=1.0)
    want = float(oracle.floor_value(R(1, 10), R(1, 10), R(96, 100), 1, 1, 1, widen=1))
    assert theory.eps_combined(p, 1.0, 1.0) == pytest.approx(want, rel=1e-13)
    assert want == pytest.approx(4.790123456790123)


def test_eps_tilde_worked_example():
    p = TheoryParams(alpha=0.1, beta=0.1, delta=0.96, lambda0=1.0)
    want = float(oracle.floor_value(R(1, 10), R(1, 10), R(96, 100), 1, 1, 1, widen=R(11, 10)))
    assert theory.eps_tilde(p, 1.0, 1.0) == pytest.approx(want, rel=1e-13)
    assert want == pytest.approx(4.871111111111111)


def test_eps_collapse_at_full_delta():
    p = TheoryParams(lambda0=0.5)
    assert theory.eps_combined(p, 3.0, 2.0) == pytest.approx(2 * 3 * 4.0)
    assert theory.eps_tilde(p, 3.0, 2.0) == theory.eps_combined(p, 3.0, 2.0)


def test_eps_tilde_dominates():
    g = np.random.default_rng(0)
    for _ in range(200):
        beta = g.uniform(0, 0.49)
        p = TheoryParams(alpha=g.uniform(0, beta), beta=beta, delta=g.uniform(0.01, 1), lambda0=g.uniform(0.01, 5))
        assert theory.eps_tilde(p, 1.0, 1.0) >= theory.eps_combined(p, 1.0, 1.0)


@pytest.mark.parametrize("a,b,lam", [(0.05, 0.06, 0), (0, 0.1, 0), (0.2, 0.3, 0.01), (0.1, 0.45, 1.0)])
def test_thresholds_match_oracle(a, b, lam):
    ra, rb, rl = (sp.nsimplify(v) for v in (a, b, lam))
    assert theory.delta_threshold_option1(a, b, lam) == pytest.approx(float(oracle.threshold_restricted(ra, rb, rl)), abs=1e-14)
    assert theory.delta_threshold_option2(a, b, lam) == pytest.approx(float(oracle.threshold_arbitrary(ra, rb, rl)), abs=1e-14)


def test_threshold_examples():
    assert theory.delta_threshold_option1(0, 0, 0) == 0
    assert theory.delta_threshold_option1(0, 0.1, 0) == pytest.approx(0.19, abs=1e-15)
    assert theory.delta_threshold_option2(0, 0, 0) == 0


def test_thresholds_monotone_in_beta():
    grid = np.linspace(0, 0.49, 30)
    for fn in (theory.delta_threshold_option1, theory.delta_threshold_option2):
        for a in grid:
            assert np.all(np.diff([fn(a, b, 0.01) for b in grid]) >= 0)


@pytest.mark.parametrize("fn,turn", [(theory.delta_threshold_option1, (18 - math.sqrt(132)) / 24),
                                     (theory.delta_threshold_option2, 1 / 3)])
def test_thresholds_monotone_in_alpha_up_to_cubic_turning_point(fn, turn):
    below = np.linspace(0, turn, 40)
    above = np.linspace(turn, 0.49, 40)
    for b in np.linspace(0, 0.49, 10):
        assert np.all(np.diff([fn(a, b, 0.01) for a in below]) >= -1e-15)
        # past the turning point the alpha cubic decreases
        assert np.all(np.diff([fn(a, b, 0.01) for a in above]) <= 1e-15)


def test_option2_stricter_when_beta_covers_alpha():
    for b in np.linspace(0, 0.49, 20):
        for a in np.linspace(0, b, 5):
            assert theory.delta_threshold_option2(a, b, 0.01) >= theory.delta_threshold_option1(a, b, 0.01) - 1e-15


def test_ef_condition_examples():
    value, ok = theory.ef_condition(0.05, 0.1, 1.0)
    assert value == pytest.approx(float(oracle.ef_lhs(R(5, 100), R(1, 10), 1)), rel=1e-14)
    assert ok
    value, ok = theory.ef_condition(0.25, 0.25, 0.0)
    assert value == pytest.approx(8 / 9) and not ok
    assert theory.ef_condition(0, 0, 0.3) == (0.0, True)


def test_ef_deltas_no_adversary_full_delta():
    p = TheoryParams(L_F=2.0, c_univ=0.5, sigma_sq=9.0)
    d1, d2, d3 = theory.ef_deltas(p, 1.5, 0.7)
    assert d1 == pytest.approx(50 / 0.5 * 0.49)
    assert d2 == pytest.approx(2 * 2.0 * 0.49 / 0.5)
    assert d3 == 0


def test_ef_deltas_scale_inversely_with_c():
    kw = dict(alpha=0.05, beta=0.1, delta=0.5, sigma_sq=2.0, L_F=1.5)
    one = theory.ef_deltas(TheoryParams(c_univ=1.0, **kw), 1.0, 1.0)
    two = theory.ef_deltas(TheoryParams(c_univ=2.0, **kw), 1.0, 1.0)
    assert np.allclose(np.array(one) / 2, two)


def test_ef_nobyz_full_delta_has_no_compression_term():
    first, second = theory.ef_nobyz_terms(1.0, 0.1, 9, 2.0, 1.0, 1.0)
    assert second == 0
    assert theory.ef_nobyz_bound(1.0, 0.1, 9, 2.0, 1.0, 1.0) == first


def test_ef_nobyz_requires_small_step():
    with pytest.raises(ValueError):
        theory.ef_nobyz_bound(1.0, 1.0, 10, 1.0, 1.0, 0.5)


def test_ef_nobyz_rates():
    L_F, L, delta = 1.0, 1.0, 0.3
    Ts = np.array([1e2, 1e4, 1e6])
    terms = np.array([theory.ef_nobyz_terms(1.0, 1 / (L_F * math.sqrt(T + 1)), int(T), L_F, L, delta) for T in Ts])
    slope_first = np.polyfit(np.log(Ts), np.log(terms[:, 0]), 1)[0]
    slope_second = np.polyfit(np.log(Ts), np.log(terms[:, 1]), 1)[0]
    assert slope_first == pytest.approx(-0.5, abs=0.02)
    assert slope_second == pytest.approx(-1.0, abs=0.02)


def test_params_validation():
    with pytest.raises(ValueError):
        TheoryParams(alpha=0.2, beta=0.1)
    with pytest.raises(ValueError):
        TheoryParams(delta=0.0)
    with pytest.raises(ValueError):
        TheoryParams(beta=0.5)


def test_check_reports_margin():
    res = theory.check(0.05, 0.06, 0.5, "1", 0.0)
    assert res["feasible"] and res["margin"] == pytest.approx(0.5 - 0.2944)
    assert not theory.check(0.25, 0.25, 0.0, "ef")["feasible"]
    with pytest.raises(ValueError):
        theory.check(0.1, 0.1, 0.5, "3")


def test_failure_probability_small_for_large_samples():
    p = TheoryParams(d=5, n=1000, m=10, Lhat=1.0, D=1.0)
    assert 0 < theory.failure_probability(p) < 1e-10
