"""Exact (a, b) maps, their polynomial 2-step approximations and residual checks.

The exact maps are algebraically identical to one GD step pushed through the
(a, b) coordinates.  They are written in a cancellation-free arrangement: the a
update uses (a + C) s - C = a s - C X / (1 + s) with s = sqrt(1 - X), and the
b update uses d - d^3 = -d b (2 + b).  Near the EoS minimum C ~ 1/kappa is large
while the 2-step movement is O(b^2 kappa^3), so the naive form throws away most
of the significant digits.

Residual checks run in extended precision by default (see
:mod:`eosdyn.precision`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import precision as P
from .reparam import ABState, c_center_kappa, delta_exact, xi
from .scalar_model import DomainError

DEFAULT_K = 600.0
DEFAULT_DELTA = 0.04


# exact maps


def ab_one_step_exact(ab: ABState, kappa) -> ABState:
    a, b = ab.a, ab.b
    k4 = kappa ** 4
    d = 1 + b
    w = b * d * (2 + b)  # (1+b)^3 - (1+b)
    X = w * w * k4
    if np.any(np.asarray(X > 1)):
        raise DomainError("negative radicand in the a update")
    s = P.sqrt(1 - X)
    C = c_center_kappa(kappa)
    a_next = a * s - C * X / (1 + s)
    dl = delta_exact(ab, kappa)
    # (1+b)^3 - 2(1+b)^5 + (1+b)^7 = d^3 (d^2 - 1)^2
    b_next = b + d * w * w * k4 - d * b * (2 + b) * dl
    return ABState(a_next, b_next)


def ab_one_step_literal(ab: ABState, kappa) -> ABState:
    """The same map in its textbook arrangement (kept as a cross-check)."""
    a, b = ab.a, ab.b
    C = P.quarter_root(kappa ** -4 - 4)
    d = 1 + b
    a_next = (a + C) * P.sqrt(1 - (d ** 3 - d) ** 2 * kappa ** 4) - C
    u = a * kappa + P.quarter_root(1 - 4 * kappa ** 4)
    b_next = (b + (d ** 3 - 2 * d ** 5 + d ** 7) * kappa ** 4
              + (d - d ** 3) * P.sqrt(4 * d * d * kappa ** 4 + u ** 4))
    return ABState(a_next, b_next)


def ab_two_step_exact(ab: ABState, kappa) -> ABState:
    return ab_one_step_exact(ab_one_step_exact(ab, kappa), kappa)


def b_two_step_approx(ab: ABState, kappa):
    b = ab.b
    return b - 16 * b ** 3 + 8 * ab.a * b * kappa


def a_two_step_approx(ab: ABState, kappa):
    return ab.a - 4 * ab.b ** 2 * kappa ** 3


def xi_two_step_approx(xi_val, b, kappa):
    return (1 - 32 * b * b) * xi_val


# neglected terms of the 2-step approximations, as functions of (a, b, kappa, eps)

REMAINDER_TERMS = {
    "b": {
        "b^4": lambda a, b, k, e: b ** 4,
        "a b^2 k": lambda a, b, k, e: a * b * b * k,
        "a^2 b k^2": lambda a, b, k, e: a * a * b * k * k,
        "b^2 k^4": lambda a, b, k, e: b * b * k ** 4,
        "b k^5": lambda a, b, k, e: b * k ** 5,
        "eps b^2 k^3": lambda a, b, k, e: e * b * b * k ** 3,
    },
    "a": {
        "eps b^2 k^3": lambda a, b, k, e: e * b * b * k ** 3,
        "b^3 k^3": lambda a, b, k, e: b ** 3 * k ** 3,
        "b^2 k^4": lambda a, b, k, e: b * b * k ** 4,
    },
    "xi": {
        "b^5": lambda a, b, k, e: b ** 5,
        "a b^3 k": lambda a, b, k, e: a * b ** 3 * k,
        "a^2 b^2 k^2": lambda a, b, k, e: a * a * b * b * k * k,
        "b^3 k^4": lambda a, b, k, e: b ** 3 * k ** 4,
        "eps b^2 k^4": lambda a, b, k, e: e * b * b * k ** 4,
    },
}

# kappa-order of each term when a ~ kappa^(5/2), b ~ kappa^(7/4) and eps is fixed
TERM_ORDERS = {
    "b": {"b^4": 7.0, "a b^2 k": 7.0, "a^2 b k^2": 8.75, "b^2 k^4": 7.5, "b k^5": 6.75,
          "eps b^2 k^3": 6.5},
    "a": {"eps b^2 k^3": 6.5, "b^3 k^3": 8.25, "b^2 k^4": 7.5},
    "xi": {"b^5": 8.75, "a b^3 k": 8.75, "a^2 b^2 k^2": 10.5, "b^3 k^4": 9.25,
           "eps b^2 k^4": 7.5},
}

# terms that actually carry the leading residual (coefficients of the lower-order
# candidates vanish identically; established with a 80-digit series fit)
DOMINANT_TERMS = {"b": ("b^4", "a b^2 k"), "a": ("b^3 k^3",), "xi": ("b^5", "a b^3 k")}


def two_step_residuals(ab: ABState, kappa):
    """(R_b, R_a, R_xi): exact 2-step value minus the polynomial approximation."""
    nxt = ab_two_step_exact(ab, kappa)
    rb = nxt.b - b_two_step_approx(ab, kappa)
    ra = nxt.a - a_two_step_approx(ab, kappa)
    rx = xi(nxt, kappa) - xi_two_step_approx(xi(ab, kappa), ab.b, kappa)
    return rb, ra, rx


# regime conditions


class ConditionId(enum.Enum):
    ONE_STEP_DYNAMICS = "OneStepDynamics"
    D_DELTA_REGIME = "DDeltaRegime"
    B_LARGE = "BLarge"
    B_SMALL = "BSmall"
    B_MOVEMENT_BOUNDED = "BMovementBounded"
    PHASE1_SHRINK = "Phase1Shrink"


def kappa_clause(cid: ConditionId, kappa, K=DEFAULT_K, eps=None, delta=DEFAULT_DELTA) -> bool:
    """The kappa-only part of a condition."""
    cid = ConditionId(cid)
    if cid is ConditionId.ONE_STEP_DYNAMICS:
        eps = 1 / K if eps is None else eps
        return kappa < min(0.1, eps ** 0.25)
    if cid is ConditionId.PHASE1_SHRINK:
        return kappa < delta / (80 * math.sqrt(2) * K)
    return kappa < 1 / K


def region_clause(cid: ConditionId, kappa, a, b, K=DEFAULT_K, eps=None, delta=DEFAULT_DELTA) -> bool:
    """The (a, b) part of a condition, with kappa treated as given."""
    cid = ConditionId(cid)
    aa, bb = abs(a), abs(b)
    if cid is ConditionId.ONE_STEP_DYNAMICS:
        eps = 1 / K if eps is None else eps
        return aa < eps / kappa and bb < min(1, eps / (5 * kappa * kappa))
    if cid is ConditionId.D_DELTA_REGIME:
        return aa < 1 / (K * kappa) and bb < 1 / K
    if cid is ConditionId.B_LARGE:
        return (kappa ** 3 < aa < 1 / (K * K * kappa)
                and P.sqrt(aa * kappa) < bb < 1 / K)
    if cid is ConditionId.B_SMALL:
        return (kappa ** 3 < aa < 1 / (K * K * kappa)
                and bb < min(P.sqrt(aa * kappa) / (2 * math.sqrt(2)), 1 / K))
    if cid is ConditionId.B_MOVEMENT_BOUNDED:
        return 0 < a < 1 / (4 * K * K * kappa) and bb < 2 * P.sqrt(a * kappa)
    if cid is ConditionId.PHASE1_SHRINK:
        return bb < 2 * math.sqrt(2) * kappa ** 1.75 and aa < 2 * kappa ** 2.5
    raise ValueError(cid)


def check_condition(cid: ConditionId, kappa, a, b, K=DEFAULT_K, eps=None,
                    delta=DEFAULT_DELTA) -> bool:
    """Full predicate of a named regime condition.  ``eps`` defaults to 1/K."""
    return (kappa_clause(cid, kappa, K, eps, delta)
            and region_clause(cid, kappa, a, b, K, eps, delta))


# residual-bound verification


class LemmaId(enum.Enum):
    A_MOVEMENT = "a_movement"
    B_LARGE = "b_large"
    B_SMALL = "b_small"
    B_BOUNDED_MOVE = "b_bounded_move"
    XI_REGIME = "xi_regime"
    XI_SHRINK = "xi_shrink"


LEMMA_CONDITION = {
    LemmaId.A_MOVEMENT: ConditionId.D_DELTA_REGIME,
    LemmaId.B_LARGE: ConditionId.B_LARGE,
    LemmaId.B_SMALL: ConditionId.B_SMALL,
    LemmaId.B_BOUNDED_MOVE: ConditionId.B_MOVEMENT_BOUNDED,
    LemmaId.XI_REGIME: ConditionId.PHASE1_SHRINK,
    LemmaId.XI_SHRINK: ConditionId.PHASE1_SHRINK,
}


class ConditionViolated(Exception):
    """Input lies outside the regime a lemma speaks about (a skip, not a failure)."""


@dataclass(frozen=True)
class ResidualReport:
    lemma: LemmaId
    kappa: float
    a: float
    b: float
    exact_next: float
    approx_next: float
    residual: float
    bound: float
    ratio: float
    satisfied: bool


def in_lemma_regime(lemma: LemmaId, kappa, a, b, K=DEFAULT_K, delta=DEFAULT_DELTA,
                    enforce_kappa=True) -> bool:
    """Regime test for a lemma.

    ``enforce_kappa=False`` drops the kappa-only clause and keeps the (a, b)
    region at the given K.  The shrinking corollary also needs
    |xi| > delta kappa^4 / 16 and |b| > kappa^(7/4) / 2; the second is the
    band lower edge its argument relies on.
    """
    lemma = LemmaId(lemma)
    cid = LEMMA_CONDITION[lemma]
    if enforce_kappa and not kappa_clause(cid, kappa, K, None, delta):
        return False
    if not region_clause(cid, kappa, a, b, K, None, delta):
        return False
    if lemma is LemmaId.XI_SHRINK:
        x = xi(ABState(a, b), kappa)
        return abs(x) > delta * kappa ** 4 / 16 and abs(b) > kappa ** 1.75 / 2
    return True


def verify_residual_bound(lemma: LemmaId, ab: ABState, kappa, K=DEFAULT_K,
                          delta=DEFAULT_DELTA, precision="extended",
                          enforce_kappa=True) -> ResidualReport:
    """Compare the exact 2-step update with a lemma's approximation and bound.

    Raises :class:`ConditionViolated` when (a, b, kappa) is outside the
    lemma's regime.
    """
    lemma = LemmaId(lemma)
    a0, b0, k0 = float(ab.a), float(ab.b), float(kappa)
    if not in_lemma_regime(lemma, k0, a0, b0, K, delta, enforce_kappa):
        raise ConditionViolated(f"{lemma.value}: (kappa={k0:g}, a={a0:g}, b={b0:g}) outside regime")
    a, b, k = P.lift((a0, b0, k0), precision)
    s = ABState(a, b)
    nxt = ab_two_step_exact(s, k)
    if lemma is LemmaId.A_MOVEMENT:
        exact, approx = nxt.a, a_two_step_approx(s, k)
        bound = 3 * b * b * k ** 3
    elif lemma is LemmaId.B_LARGE:
        exact, approx = nxt.b, b - 16 * b ** 3
        bound = 14 * abs(b) ** 3
    elif lemma is LemmaId.B_SMALL:
        exact, approx = nxt.b, b + 8 * a * b * k
        bound = 7 * abs(a * b * k)
    elif lemma is LemmaId.B_BOUNDED_MOVE:
        exact, approx = nxt.b, b
        bound = P.sqrt(a * k) / 16
    elif lemma is LemmaId.XI_REGIME:
        x0 = xi(s, k)
        exact, approx = xi(nxt, k), xi_two_step_approx(x0, b, k)
        bound = delta * b * b * k ** 4
    else:
        x0 = xi(s, k)
        exact, approx = abs(xi(nxt, k)), 0 * k
        bound = (1 - 4 * k ** 3.5) * abs(x0)
    residual = abs(exact - approx)
    if lemma in (LemmaId.B_LARGE, LemmaId.B_SMALL):
        ok = residual <= bound
    else:
        # strict bounds; at b = 0 both sides vanish and the update is exact
        ok = residual < bound or (residual == 0 and bound == 0)
    ratio = float(residual / bound) if bound != 0 else (0.0 if residual == 0 else math.inf)
    return ResidualReport(lemma, k0, a0, b0, float(exact), float(approx), float(residual),
                          float(bound), ratio, bool(ok))


# regime sampling


def _log_uniform(rng, lo, hi):
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


def _ab_intervals(lemma: LemmaId, kappa, K, delta):
    """Magnitude intervals (a_lo, a_hi) and a function a -> (b_lo, b_hi)."""
    k = kappa
    spread = 1e-6  # lower edge of open-ended b intervals, relative to the upper one
    if lemma is LemmaId.A_MOVEMENT:
        return (k ** 4, 1 / (K * k)), lambda a: (spread / K, 1 / K)
    if lemma is LemmaId.B_LARGE:
        return (k ** 3, 1 / (K * K * k)), lambda a: (math.sqrt(a * k), 1 / K)
    if lemma is LemmaId.B_SMALL:
        def bs(a):
            hi = min(math.sqrt(a * k) / (2 * math.sqrt(2)), 1 / K)
            return hi * spread, hi
        return (k ** 3, 1 / (K * K * k)), bs
    if lemma is LemmaId.B_BOUNDED_MOVE:
        return (k ** 4, 1 / (4 * K * K * k)), lambda a: (2 * spread * math.sqrt(a * k),
                                                         2 * math.sqrt(a * k))
    hi_b = 2 * math.sqrt(2) * k ** 1.75
    if lemma is LemmaId.XI_REGIME:
        return (k ** 5, 2 * k ** 2.5), lambda a: (hi_b * spread, hi_b)
    return (k ** 5, 2 * k ** 2.5), lambda a: (k ** 1.75 / 2, hi_b)


def sample_in_regime(lemma: LemmaId, kappa, rng, K=DEFAULT_K, delta=DEFAULT_DELTA,
                     enforce_kappa=True, max_tries=10_000) -> ABState:
    """Draw |a| log-uniformly, then |b| log-uniformly given a, then reject.

    Signs are random except where the regime fixes them (a > 0 for the
    bounded-movement lemma).
    """
    lemma = LemmaId(lemma)
    (alo, ahi), bint = _ab_intervals(lemma, kappa, K, delta)
    for _ in range(max_tries):
        a = _log_uniform(rng, alo, ahi)
        if lemma is not LemmaId.B_BOUNDED_MOVE and rng.random() < 0.5:
            a = -a
        blo, bhi = bint(abs(a))
        if not blo < bhi:
            continue
        b = _log_uniform(rng, blo, bhi)
        if rng.random() < 0.5:
            b = -b
        if in_lemma_regime(lemma, kappa, a, b, K, delta, enforce_kappa):
            return ABState(a, b)
    raise ConditionViolated(f"no in-regime sample for {lemma.value} at kappa={kappa:g}")


def sample_rng(seed: int, *keys: int):
    """Deterministic generator for sample ``keys`` under a run seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


LEMMA_CODES = {lem: i for i, lem in enumerate(LemmaId)}


def residual_sweep(lemma: LemmaId, samples: int, kappa_range, K=DEFAULT_K,
                   delta=DEFAULT_DELTA, seed=0, precision="extended",
                   enforce_kappa=True):
    """Check ``samples`` seeded in-regime draws; kappa is log-uniform in the range."""
    lemma = LemmaId(lemma)
    lo, hi = kappa_range
    out = []
    for i in range(samples):
        rng = sample_rng(seed, LEMMA_CODES[lemma], i)
        kappa = _log_uniform(rng, lo, hi) if hi > lo else lo
        ab = sample_in_regime(lemma, kappa, rng, K, delta, enforce_kappa)
        out.append(verify_residual_bound(lemma, ab, kappa, K, delta, precision, enforce_kappa))
    return out


# constant calibration


class EmptySample(ValueError):
    pass


@dataclass
class KCalibration:
    per_term: dict  # (residual, term) -> sup of |R| / |term|
    aggregate: dict  # residual -> sup of |R| / sum of |terms|
    samples: int


def calibrate_K(samples: int, kappa_range, seed=0, eps=None, K=DEFAULT_K,
                scale_a=(0.5, 4.0), scale_b=(0.25, 3.0)) -> KCalibration:
    """Largest observed ratio of each 2-step residual to each neglected term.

    Samples sit on the regime scaling a = A kappa^(5/2), b = B kappa^(7/4) with
    random signs; eps defaults to 1/K.  Ratios with a zero denominator are
    skipped.
    """
    if samples < 1:
        raise EmptySample("calibration needs at least one sample")
    eps = 1 / K if eps is None else eps
    lo, hi = kappa_range
    per_term = {(r, t): 0.0 for r, terms in REMAINDER_TERMS.items() for t in terms}
    aggregate = {r: 0.0 for r in REMAINDER_TERMS}
    for i in range(samples):
        rng = sample_rng(seed, 99, i)
        k = _log_uniform(rng, lo, hi) if hi > lo else lo
        A = rng.uniform(*scale_a) * rng.choice([-1, 1])
        B = rng.uniform(*scale_b) * rng.choice([-1, 1])
        ke, e = P.ext(k), P.ext(eps)
        a, b = P.ext(A) * ke ** 2.5, P.ext(B) * ke ** 1.75
        rb, ra, rx = two_step_residuals(ABState(a, b), ke)
        for name, r in (("b", rb), ("a", ra), ("xi", rx)):
            tot = 0
            for t, f in REMAINDER_TERMS[name].items():
                m = abs(f(a, b, ke, e))
                tot += m
                if m != 0:
                    per_term[(name, t)] = max(per_term[(name, t)], float(abs(r) / m))
            if tot != 0:
                aggregate[name] = max(aggregate[name], float(abs(r) / tot))
    return KCalibration(per_term, aggregate, samples)
