import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eosdyn import precision as P
from eosdyn.dynamics_approx import (DOMINANT_TERMS, ConditionId, ConditionViolated, EmptySample, LemmaId,
                                    a_two_step_approx, ab_one_step_exact, ab_one_step_literal, ab_two_step_exact,
                                    b_two_step_approx, calibrate_K, check_condition, residual_sweep,
                                    sample_in_regime, sample_rng, two_step_residuals, verify_residual_bound,
                                    xi_two_step_approx)
from eosdyn.reparam import ABState, ab_to_xy, xy_to_ab
from eosdyn.scalar_model import DomainError, gd_step


def xy_route(ab, kappa):
    eta = kappa * kappa
    return xy_to_ab(gd_step(ab_to_xy(ab, eta), eta), eta)


def mp_one_step(a, b, k):
    """Textbook one-step map at 80 digits, independent of the package's precision module."""
    with mpmath.workdps(80):
        a, b, k = mpmath.mpf(a), mpmath.mpf(b), mpmath.mpf(k)
        C = (k ** -4 - 4) ** mpmath.mpf("0.25")
        d = 1 + b
        a1 = (a + C) * mpmath.sqrt(1 - (d ** 3 - d) ** 2 * k ** 4) - C
        u = a * k + (1 - 4 * k ** 4) ** mpmath.mpf("0.25")
        b1 = b + (d ** 3 - 2 * d ** 5 + d ** 7) * k ** 4 + (d - d ** 3) * mpmath.sqrt(4 * d * d * k ** 4 + u ** 4)
        return a1, b1


def test_origin_is_fixed():
    for k in (0.01, 0.1, 0.3):
        s = ab_one_step_exact(ABState(0.0, 0.0), k)
        assert abs(s.a) < 1e-15 and s.b == 0
        s2 = ab_two_step_exact(ABState(0.0, 0.0), k)
        assert abs(s2.a) < 1e-15 and s2.b == 0


def test_axis_point_keeps_d_zero():
    s = ab_one_step_exact(ABState(0.3, -1.0), 0.2)
    assert s.b == -1.0


def test_two_routes_double():
    ab = ABState(0.1, 0.01)
    a1 = ab_one_step_exact(ab, 0.3)
    a2 = xy_route(ab, 0.3)
    assert a1.a == pytest.approx(a2.a, rel=1e-10)
    assert a1.b == pytest.approx(a2.b, rel=1e-10)


def test_two_routes_extended():
    a, b, k = P.lift((0.1, 0.01, 0.3), "extended")
    s1 = ab_one_step_exact(ABState(a, b), k)
    s2 = xy_route(ABState(a, b), k)
    assert abs(s1.a - s2.a) < P.ext("1e-25") and abs(s1.b - s2.b) < P.ext("1e-25")


@settings(max_examples=60)
@given(st.floats(-0.5, 0.5), st.floats(-0.05, 0.05), st.floats(0.01, 0.5))
def test_route_consistency_property(a, b, k):
    s1 = ab_one_step_exact(ABState(a, b), k)
    s2 = xy_route(ABState(a, b), k)
    ref = max(1.0, abs(s1.a))
    assert abs(s1.a - s2.a) <= 1e-9 * ref / k
    assert abs(s1.b - s2.b) <= 1e-9 * max(1.0, abs(s1.b)) / k


def test_matches_independent_mpmath_map():
    for a, b, k in [(0.1, 0.01, 0.3), (1e-4, 3e-5, 1e-2), (-2e-7, -1e-5, 1e-3)]:
        ea, eb = mp_one_step(a, b, k)
        s = ab_one_step_exact(ABState(P.ext(a), P.ext(b)), P.ext(k))
        assert abs(float(s.a - P.ext(mpmath.nstr(ea, 60)))) < 1e-30
        assert abs(float(s.b - P.ext(mpmath.nstr(eb, 60)))) < 1e-30
        lit = ab_one_step_literal(ABState(P.ext(a), P.ext(b)), P.ext(k))
        assert abs(float(lit.b - s.b)) < 1e-30


@given(st.floats(-1, 1), st.floats(0.001, 0.5))
def test_manifold_invariance(a, k):
    assert ab_one_step_exact(ABState(a, 0.0), k).b == 0
    assert ab_two_step_exact(ABState(a, 0.0), k).b == 0


def test_domain_error_on_negative_radicand():
    with pytest.raises(DomainError):
        ab_one_step_exact(ABState(0.0, 5.0), 0.6)


def test_approximations_trivial_cases():
    k = 0.01
    assert b_two_step_approx(ABState(0.3, 0.0), k) == 0
    assert b_two_step_approx(ABState(0.0, 0.02), k) == pytest.approx(0.02 - 16 * 0.02 ** 3)
    assert a_two_step_approx(ABState(0.3, 0.0), k) == 0.3
    assert a_two_step_approx(ABState(0.3, 1e-3), k) < 0.3
    assert xi_two_step_approx(0.0, 0.1, k) == 0
    assert xi_two_step_approx(1e-6, 0.0, k) == 1e-6


def test_conditions():
    assert check_condition(ConditionId.D_DELTA_REGIME, 1e-3, 0.1, 1e-4, K=600)
    k, a = 1e-3, 1e-3
    b = math.sqrt(a * k)
    assert not check_condition(ConditionId.B_LARGE, k, a, b, K=600)
    k = 3e-7
    assert check_condition(ConditionId.PHASE1_SHRINK, k, k ** 2.5, 2 * math.sqrt(2) * k ** 1.75 * 0.9,
                           K=600, delta=0.04)
    assert not check_condition(ConditionId.PHASE1_SHRINK, 1e-3, k ** 2.5, 0.0, K=600)


@pytest.mark.parametrize("lemma", list(LemmaId))
def test_b_zero_has_zero_residual(lemma):
    k = 1e-3
    a = {LemmaId.XI_REGIME: k ** 2.5, LemmaId.XI_SHRINK: k ** 2.5}.get(lemma, 1e-6)
    try:
        rep = verify_residual_bound(lemma, ABState(a, 0.0), k, enforce_kappa=False)
    except ConditionViolated:
        pytest.skip("b = 0 lies outside this lemma's open regime")
    if lemma in (LemmaId.XI_REGIME, LemmaId.XI_SHRINK):
        assert rep.satisfied
    else:
        assert rep.residual == 0 and rep.satisfied


def test_out_of_regime_raises():
    with pytest.raises(ConditionViolated):
        verify_residual_bound(LemmaId.B_LARGE, ABState(0.5, 0.5), 1e-3)
    with pytest.raises(ConditionViolated):
        # kappa clause enforced by default: 1e-3 is not below 1/K
        verify_residual_bound(LemmaId.A_MOVEMENT, ABState(1e-6, 1e-4), 1e-2, K=600)


def test_report_fields_consistent():
    rng = sample_rng(3, 0)
    ab = sample_in_regime(LemmaId.B_SMALL, 1e-3, rng, enforce_kappa=False)
    rep = verify_residual_bound(LemmaId.B_SMALL, ab, 1e-3, enforce_kappa=False)
    # exact and approx are rounded to double after an extended-precision subtraction
    assert abs(rep.residual - abs(rep.exact_next - rep.approx_next)) <= 4e-16 * abs(rep.exact_next)
    assert rep.satisfied == (rep.residual <= rep.bound)


@pytest.mark.parametrize("lemma", [LemmaId.A_MOVEMENT, LemmaId.B_LARGE, LemmaId.B_SMALL,
                                   LemmaId.B_BOUNDED_MOVE, LemmaId.XI_SHRINK])
def test_small_sweep_satisfied(lemma):
    reps = residual_sweep(lemma, 60, (5e-4, 1.9e-3), seed=5, enforce_kappa=False)
    assert all(r.satisfied for r in reps)


def test_sweep_is_deterministic():
    r1 = residual_sweep(LemmaId.B_LARGE, 5, (5e-4, 1.9e-3), seed=9, enforce_kappa=False)
    r2 = residual_sweep(LemmaId.B_LARGE, 5, (5e-4, 1.9e-3), seed=9, enforce_kappa=False)
    assert r1 == r2


def test_xi_regime_counterexample():
    # near a = 0 the xi residual is about -48 b^5, which outgrows 0.04 b^2 kappa^4 once
    # |b| approaches 2 sqrt(2) kappa^(7/4); the lemma's bound fails there
    k = 1.83e-3
    ab = ABState(-4.275e-06 * k ** 2.5, -2.639 * k ** 1.75)
    rep = verify_residual_bound(LemmaId.XI_REGIME, ab, k, enforce_kappa=False)
    assert not rep.satisfied and rep.ratio > 1


def test_residual_orders_extended():
    # frozen from an 80-digit fit: R_b ~ kappa^7, R_a ~ kappa^8.25, R_xi ~ kappa^8.75
    ks = [P.ext(v) for v in ("0.001", "0.002", "0.004")]
    rs = [two_step_residuals(ABState(k ** P.ext(2.5), k ** P.ext(1.75)), k) for k in ks]
    logk = np.log([float(k) for k in ks])
    for i, order in enumerate((7.0, 8.25, 8.75)):
        slope = np.polyfit(logk, np.log([abs(float(r[i])) for r in rs]), 1)[0]
        assert abs(slope - order) < 0.05


def test_b_residual_leading_coefficient():
    # at a = 0 the b residual is -24 b^4 to leading order
    k = P.ext("1e-4")
    b = 2 * k ** P.ext(1.75)
    rb = two_step_residuals(ABState(P.ext(0), b), k)[0]
    assert float(rb / b ** 4) == pytest.approx(-24, rel=1e-3)


def test_calibration():
    with pytest.raises(EmptySample):
        calibrate_K(0, (1e-3, 1e-2))
    ks = [1e-3, 3e-3, 1e-2, 5e-2]
    cals = [calibrate_K(20, (k, k), seed=1) for k in ks]
    for q, terms in DOMINANT_TERMS.items():
        for t in terms:
            r = [c.per_term[(q, t)] for c in cals]
            slope = np.polyfit(np.log(ks), np.log(r), 1)[0]
            assert abs(slope) < 0.2


def test_calibration_skips_zero_denominators():
    cal = calibrate_K(3, (1e-3, 1e-3), scale_a=(1.0, 1.0), scale_b=(1.0, 1.0))
    assert all(math.isfinite(v) for v in cal.per_term.values())
