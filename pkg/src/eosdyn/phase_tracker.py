"""Phase labels, hitting times and time-bound checks for 2-step trajectories.

A trajectory in (a, b) coordinates first relaxes onto a band around the
parabola b^2 = a kappa / 2 (phase I), then slides along it towards negative a
and settles on a minimum just flatter than the EoS minimum (phase II, stages
1-3).  Indices count 2-step updates.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import precision as P
from .dynamics_approx import DEFAULT_DELTA, DEFAULT_K, ab_two_step_exact
from .reparam import ABState, ab_to_xy, xi, xy_to_ab
from .scalar_model import TrajectoryList, XYState, sharpness


class PhaseLabel(enum.IntEnum):
    # ordered along a typical run; Outside and Diverged sit apart
    P1_LargeB = 0
    P1_SmallB = 1
    P1_InBand = 2
    P2_Stage1 = 3
    P2_Stage2 = 4
    P2_Stage3 = 5
    Converged = 6
    Outside = 7
    Diverged = 8


PHASE_RANK = {
    PhaseLabel.P1_LargeB: 0, PhaseLabel.P1_SmallB: 0, PhaseLabel.P1_InBand: 0,
    PhaseLabel.P2_Stage1: 1, PhaseLabel.P2_Stage2: 2, PhaseLabel.P2_Stage3: 3,
    PhaseLabel.Converged: 4,
}


@dataclass(frozen=True)
class Thresholds:
    kappa: float
    delta: float = DEFAULT_DELTA

    @property
    def a_phase1(self):  # phase I lives above 2 kappa^(5/2)
        return 2 * self.kappa ** 2.5

    @property
    def xi_small(self):
        return self.delta * self.kappa ** 4 / 8

    @property
    def a_stage3(self):  # stage 3 starts at a <= -(1/10)(1+2 delta) kappa^3
        return -(1 + 2 * self.delta) * self.kappa ** 3 / 10

    @property
    def a_stage2_exit(self):
        return -(1 - 3 * self.delta) * self.kappa ** 3 / 8

    @property
    def a_floor(self):
        return -5 * self.kappa ** 3 / 3


def loss_ab(ab: ABState):
    p = ab.b * (2 + ab.b)  # (xy)^2 - 1
    return 0.25 * p * p


def classify(ab: ABState, kappa, xi_val=None, delta=DEFAULT_DELTA, loss=None, eps=None) -> PhaseLabel:
    """Phase label of a single point.  Ties on open boundaries go to the outer region."""
    a, b = ab.a, ab.b
    if not (math.isfinite(float(a)) and math.isfinite(float(b))):
        return PhaseLabel.Diverged
    if loss is not None and eps is not None and loss < eps:
        return PhaseLabel.Converged
    if abs(b) >= 1:
        return PhaseLabel.Outside
    th = Thresholds(kappa, delta)
    if a > th.a_phase1:
        r = P.sqrt(a * kappa)
        if abs(b) >= 2 * r:
            return PhaseLabel.P1_LargeB
        if abs(b) <= r / 4:
            return PhaseLabel.P1_SmallB
        return PhaseLabel.P1_InBand
    if a <= th.a_floor:
        return PhaseLabel.Outside
    if a > th.a_stage3:
        x = xi(ab, kappa) if xi_val is None else xi_val
        return PhaseLabel.P2_Stage1 if abs(x) >= th.xi_small else PhaseLabel.P2_Stage2
    if abs(b) < P.sqrt(-a * kappa) / (2 * math.sqrt(2)):
        return PhaseLabel.P2_Stage3
    return PhaseLabel.Outside


def classify_array(a, b, kappa, delta=DEFAULT_DELTA, loss=None, eps=None):
    """Vectorised :func:`classify` returning integer label codes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    th = Thresholds(kappa, delta)
    ab_ = np.abs(b)
    with np.errstate(invalid="ignore"):
        r = np.sqrt(np.maximum(a, 0) * kappa)
        x = b * b - a * kappa / 2 - kappa ** 4 / 16
        rs = np.sqrt(np.maximum(-a, 0) * kappa) / (2 * math.sqrt(2))
    lab = np.full(a.shape, int(PhaseLabel.Outside), dtype=np.int8)
    p1 = a > th.a_phase1
    lab[p1] = int(PhaseLabel.P1_InBand)
    lab[p1 & (ab_ >= 2 * r)] = int(PhaseLabel.P1_LargeB)
    lab[p1 & (ab_ <= r / 4)] = int(PhaseLabel.P1_SmallB)
    mid = ~p1 & (a > th.a_stage3) & (a > th.a_floor)
    lab[mid] = np.where(np.abs(x[mid]) >= th.xi_small, int(PhaseLabel.P2_Stage1), int(PhaseLabel.P2_Stage2))
    s3 = ~p1 & (a <= th.a_stage3) & (a > th.a_floor) & (ab_ < rs)
    lab[s3] = int(PhaseLabel.P2_Stage3)
    lab[ab_ >= 1] = int(PhaseLabel.Outside)
    if loss is not None and eps is not None:
        lab[np.asarray(loss) < eps] = int(PhaseLabel.Converged)
    lab[~(np.isfinite(a) & np.isfinite(b))] = int(PhaseLabel.Diverged)
    return lab


@dataclass(frozen=True)
class TrajectoryRecord:
    step_pair_index: int
    ab: ABState
    xi: float
    loss: float
    sharpness: float
    label: PhaseLabel


HIT_NAMES = ("in_band", "a_window", "xi_small", "a_stage3", "converged")


@dataclass
class HittingTimes:
    """First 2-step index of each event (None if never reached).

    in_band: first P1_InBand point; a_window: first a in (3/2, 2) kappa^(5/2);
    xi_small: first |xi| < delta kappa^4 / 8 once a <= 2 kappa^(5/2);
    a_stage3: first a <= -(1/10)(1+2 delta) kappa^3; converged: first loss < eps.
    A run whose first point is already converged has all five at 0.
    Two auxiliary times support the time-bound checks.
    """
    in_band: int | None = None
    a_window: int | None = None
    xi_small: int | None = None
    a_stage3: int | None = None
    converged: int | None = None
    a_below_k52: int | None = None  # first a < kappa^(5/2)
    a_stage2_exit: int | None = None  # first a < -(1/8)(1 - 3 delta) kappa^3
    stage2_entry: int | None = None  # first a in (1, 2) kappa^(5/2) with |xi| small
    stage3_entry: int | None = None  # first a in the stay interval with |xi| small

    def ordered(self):
        return [getattr(self, n) for n in HIT_NAMES]


@dataclass
class TrackResult:
    kappa: float
    delta: float
    eps: float
    records: list = field(default_factory=list)  # thinned TrajectoryRecords
    hits: HittingTimes = field(default_factory=HittingTimes)
    transitions: list = field(default_factory=list)  # (index, label) at each label change
    band_violation: int | None = None  # first in-band exit before a < kappa^(5/2)
    n_pairs: int = 0
    final: ABState | None = None
    final_label: PhaseLabel | None = None
    stage3_b_increase: int | None = None  # first |b| increase while in stage 3

    @property
    def init(self) -> ABState:
        return self.records[0].ab

    def label_sequence(self):
        return [lab for _, lab in self.transitions]


class _Tracker:
    """Streaming bookkeeping shared by the double and extended runners.

    Points arrive in chunks of consecutive 2-step indices; every statistic is
    computed with array operations so long double-precision runs stay cheap.
    """

    def __init__(self, kappa, delta, eps, record_every=1):
        self.res = TrackResult(kappa=kappa, delta=delta, eps=eps)
        self.th = Thresholds(kappa, delta)
        self.k52 = kappa ** 2.5
        self.record_every = record_every
        self.entered_band = False
        self.prev_b = None
        self.prev_label = None

    @staticmethod
    def _first(mask):
        idx = np.flatnonzero(mask)
        return int(idx[0]) if idx.size else None

    def feed(self, i0, A, B, labs, states=None):
        """Consume points i0, i0+1, ... with coordinates A, B and label codes ``labs``.

        ``states`` optionally supplies the points in working precision for
        the kept records.
        """
        res, th, h, k = self.res, self.th, self.res.hits, self.res.kappa
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        labs = np.asarray(labs)
        n = len(A)
        prev = np.concatenate(([-1 if self.prev_label is None else self.prev_label], labs[:-1]))
        changed = labs != prev
        for j in np.flatnonzero(changed):
            res.transitions.append((i0 + int(j), PhaseLabel(int(labs[j]))))
        keep = changed | ((i0 + np.arange(n)) % self.record_every == 0)
        for j in np.flatnonzero(keep):
            ab = states[j] if states is not None else ABState(A[j], B[j])
            res.records.append(_record(i0 + int(j), ab, k, labs[j]))
        ok = labs != int(PhaseLabel.Diverged)
        with np.errstate(invalid="ignore"):
            XI = B * B - A * k / 2 - k ** 4 / 16
            R = np.sqrt(np.maximum(A, 0) * k)
        events = {
            "in_band": labs == int(PhaseLabel.P1_InBand),
            "a_window": (1.5 * self.k52 < A) & (A < 2 * self.k52),
            "a_below_k52": A < self.k52,
            "xi_small": (A <= th.a_phase1) & (np.abs(XI) < th.xi_small),
            "a_stage3": A <= th.a_stage3,
            "a_stage2_exit": A < th.a_stage2_exit,
            "converged": labs == int(PhaseLabel.Converged),
            "stage2_entry": (self.k52 < A) & (A < 2 * self.k52) & (np.abs(XI) < th.xi_small),
            "stage3_entry": ((th.a_stage2_exit < A) & (A < th.a_stage3)
                             & (np.abs(XI) < th.xi_small)),
        }
        if i0 == 0 and n and labs[0] == int(PhaseLabel.Converged):
            # a run that starts converged has passed every milestone at index 0
            for name in HIT_NAMES:
                setattr(h, name, 0)
        for name, mask in events.items():
            if getattr(h, name) is None:
                j = self._first(mask & ok)
                if j is not None:
                    setattr(h, name, i0 + j)
        # band invariant: once inside the band, stay there until a < kappa^(5/2)
        if res.band_violation is None:
            inside = (R / 4 < np.abs(B)) & (np.abs(B) < 2 * R)
            live = (A >= self.k52) & ok
            if self.entered_band:
                start = 0
            else:
                j = self._first(inside & live & (A > th.a_phase1))
                start = n if j is None else j
                self.entered_band = j is not None
            if start < n:
                bad = self._first(live[start:] & ~inside[start:])
                if bad is not None:
                    res.band_violation = i0 + start + bad
        if res.stage3_b_increase is None:
            pb = np.concatenate(([np.nan if self.prev_b is None else self.prev_b], B[:-1]))
            up = (labs == int(PhaseLabel.P2_Stage3)) & (np.abs(B) >= np.abs(pb)) & (B != 0)
            j = self._first(up)
            if j is not None:
                res.stage3_b_increase = i0 + j
        self.prev_b = B[-1]
        self.prev_label = int(labs[-1])


def _record(i, ab, kappa, label):
    ls = loss_ab(ab)
    try:
        sh = sharpness(ab_to_xy(ab, kappa * kappa))
    except ValueError:
        sh = float("nan")
    return TrajectoryRecord(i, ab, float(xi(ab, kappa)), float(ls), float(sh), PhaseLabel(int(label)))


@numba.njit(cache=True)
def _ab_pairs_kernel(a, b, kappa, n):
    """n exact 2-step updates in double precision; returns the n+1 visited points."""
    k4 = kappa ** 4
    q = math.sqrt(math.sqrt(1.0 - 4.0 * k4))
    C = q / kappa
    out_a = np.empty(n + 1)
    out_b = np.empty(n + 1)
    out_a[0] = a
    out_b[0] = b
    for i in range(n):
        for _ in range(2):
            d = 1.0 + b
            w = b * d * (2.0 + b)
            X = w * w * k4
            if X > 1.0 or not math.isfinite(X):
                a = math.nan
                b = math.nan
                break
            s = math.sqrt(1.0 - X)
            u = a * kappa + q
            u2 = u * u
            dl = math.sqrt(4.0 * k4 * d * d + u2 * u2)
            a_next = a * s - C * X / (1.0 + s)
            b = b + d * w * w * k4 - d * b * (2.0 + b) * dl
            a = a_next
        out_a[i + 1] = a
        out_b[i + 1] = b
    return out_a, out_b


def ab_pairs_double(ab0: ABState, kappa: float, n: int):
    """Arrays (a_t, b_t), t = 0..n, of 2-step iterates in double precision."""
    return _ab_pairs_kernel(float(ab0.a), float(ab0.b), float(kappa), int(n))


def run_ab(ab0: ABState, kappa, max_pairs: int, eps: float = 1e-10, delta=DEFAULT_DELTA,
           precision: str = "double", record_every: int = 1, chunk: int = 65536,
           stop_on_converged: bool = True) -> TrackResult:
    """Iterate the exact 2-step map from ``ab0``, labelling every point.

    Only every ``record_every``-th point plus every label change is kept as a
    :class:`TrajectoryRecord`; hitting times and invariants use every point.
    """
    kappa_f = float(kappa)
    tr = _Tracker(kappa_f, delta, eps, record_every)
    res = tr.res
    stop_labels = {int(PhaseLabel.Diverged)}
    if stop_on_converged:
        stop_labels.add(int(PhaseLabel.Converged))
    if precision == "double":
        cur = ABState(float(ab0.a), float(ab0.b))
        done = 0  # index of cur
        first = True
        while True:
            n = min(chunk, max_pairs - done)
            A, B = ab_pairs_double(cur, kappa_f, n)
            if not first:
                A, B = A[1:], B[1:]
            i0 = done if first else done + 1
            L = 0.25 * (B * (2 + B)) ** 2
            labs = classify_array(A, B, kappa_f, delta, L, eps)
            stop = np.flatnonzero(np.isin(labs, list(stop_labels)))
            if stop.size:
                m = int(stop[0]) + 1
                tr.feed(i0, A[:m], B[:m], labs[:m])
                res.n_pairs = i0 + m - 1
                res.final = ABState(float(A[m - 1]), float(B[m - 1]))
                break
            tr.feed(i0, A, B, labs)
            done += n
            first = False
            cur = ABState(float(A[-1]), float(B[-1]))
            if done >= max_pairs:
                res.n_pairs = done
                res.final = cur
                break
    else:
        a, b, k = P.lift((ab0.a, ab0.b, kappa), precision)
        s = ABState(a, b)
        i = 0
        while True:
            lab = int(classify(s, k, delta=delta, loss=loss_ab(s), eps=eps))
            tr.feed(i, [float(s.a)], [float(s.b)], np.array([lab]), states=[s])
            if lab in stop_labels or i == max_pairs:
                break
            try:
                s = ab_two_step_exact(s, k)
            except ValueError:
                s = ABState(float("nan"), float("nan"))
            i += 1
        res.n_pairs = i
        res.final = s
    if res.records[-1].step_pair_index != res.n_pairs:
        lab = classify(res.final, kappa_f, delta=delta, loss=loss_ab(res.final), eps=eps)
        res.records.append(_record(res.n_pairs, res.final, kappa_f, lab))
    res.final_label = res.records[-1].label
    return res


def track(traj: TrajectoryList, eta, eps: float = 1e-10, delta=DEFAULT_DELTA) -> TrackResult:
    """Label the 2-step subsequence (even steps) of a recorded (x, y) trajectory.

    The trajectory must have been recorded at every step.  A point leaving the
    analysed quadrant x > y > 0 is labelled Outside and ends the tracking.
    """
    kappa = float(P.sqrt(eta))
    tr = _Tracker(kappa, delta, eps)
    res = tr.res
    by_step = dict(zip(traj.steps, zip(traj.x, traj.y)))
    i = 0
    while 2 * i in by_step:
        x, y = by_step[2 * i]
        if not (math.isfinite(float(x)) and math.isfinite(float(y))):
            ab, lab = ABState(math.nan, math.nan), PhaseLabel.Diverged
        else:
            try:
                ab = xy_to_ab(XYState(x, y), eta)
                lab = classify(ab, kappa, delta=delta, loss=loss_ab(ab), eps=eps)
            except ValueError:
                ab, lab = ABState(math.nan, math.nan), PhaseLabel.Outside
        tr.feed(i, [float(ab.a)], [float(ab.b)], np.array([int(lab)]), states=[ab])
        if lab in (PhaseLabel.Diverged, PhaseLabel.Outside) and math.isnan(float(ab.a)):
            break
        i += 1
    res.n_pairs = res.records[-1].step_pair_index if res.records else 0
    if res.records:
        res.final = res.records[-1].ab
        res.final_label = res.records[-1].label
    return res


# time-bound verification


class BoundStatus(enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"
    SKIPPED = "Skipped"


@dataclass
class BoundCheck:
    name: str
    status: BoundStatus
    measured: float | None = None
    bound: float | None = None
    reason: str = ""


@dataclass
class BoundReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.status is not BoundStatus.FAIL for c in self.checks)

    def by_name(self, name):
        return next(c for c in self.checks if c.name == name)


def verify_time_bounds(res: TrackResult, K=DEFAULT_K, enforce_kappa=True) -> BoundReport:
    """Check each lemma time bound whose initialisation region the run satisfies.

    Phase I bounds use the initial point.  Phase II bounds start the clock at
    the first point satisfying the lemma's initialisation.  With
    ``enforce_kappa=False`` the kappa-only hypotheses are not required.
    """
    k, delta, eps = res.kappa, res.delta, res.eps
    h = res.hits
    a0, b0 = float(res.init.a), float(res.init.b)
    k52 = k ** 2.5
    checks = []

    def kap(ok, name):
        if enforce_kappa and not ok:
            checks.append(BoundCheck(name, BoundStatus.SKIPPED, reason="kappa hypothesis fails"))
            return False
        return True

    def timed(name, start, hit, bound, strict_lower=False):
        if hit is None:
            checks.append(BoundCheck(name, BoundStatus.FAIL, None, bound, "event not reached"))
            return
        T = hit - start
        ok = T > bound if strict_lower else T < bound
        checks.append(BoundCheck(name, BoundStatus.PASS if ok else BoundStatus.FAIL, T, bound))

    a_hi = 1 / (4 * K * K * k)
    r0 = math.sqrt(max(a0, 0) * k)
    name = "phase1_large_b"
    if 12 * k52 < a0 < a_hi and 2 * r0 <= abs(b0) < 1 / K:
        if kap(k < 1 / K, name):
            timed(name, 0, h.in_band, k ** -4)
    else:
        checks.append(BoundCheck(name, BoundStatus.SKIPPED, reason="init outside region"))
    name = "phase1_small_b"
    if 12 * k52 < a0 < a_hi and 0 < abs(b0) <= r0 / 4:
        if kap(k < 1 / K, name):
            timed(name, 0, h.in_band, 0.5 * math.log(1 / abs(b0)) * k ** -3.5)
    else:
        checks.append(BoundCheck(name, BoundStatus.SKIPPED, reason="init outside region"))
    name = "phase1_stay"
    if k52 < a0 < a_hi and r0 / 4 < abs(b0) < 2 * r0:
        if kap(k < 1 / (16 * K), name):
            timed(name, 0, h.a_below_k52, 16 * a0 * k ** -6.5 + 1e-9)
            if res.band_violation is not None:
                checks[-1] = BoundCheck(name, BoundStatus.FAIL, reason="left the band early")
    else:
        checks.append(BoundCheck(name, BoundStatus.SKIPPED, reason="init outside region"))
    name = "phase1_terminate_lower"
    if 1.5 * k52 < a0 < 2 * k52 and r0 / 4 < abs(b0) < 2 * r0:
        if kap(k < 1 / (16 * K), name):
            timed(name, 0, h.a_below_k52, k ** -4 / 128, strict_lower=True)
    else:
        checks.append(BoundCheck(name, BoundStatus.SKIPPED, reason="init outside region"))
    th = Thresholds(k, delta)
    shrink_k = k < delta / (80 * math.sqrt(2) * K)
    name = "phase2_stage1"
    if h.a_window is None:
        checks.append(BoundCheck(name, BoundStatus.SKIPPED, reason="never entered the a window"))
    elif kap(shrink_k, name):
        # |xi| must fall below delta kappa^4 / 8 before a leaves (kappa^(5/2), 2 kappa^(5/2))
        ok = h.xi_small is not None and (h.a_below_k52 is None or h.xi_small <= h.a_below_k52)
        checks.append(BoundCheck(name, BoundStatus.PASS if ok else BoundStatus.FAIL,
                                 h.xi_small, h.a_below_k52))
    name = "phase2_stay"
    if h.stage2_entry is None:
        checks.append(BoundCheck(name, BoundStatus.SKIPPED, reason="entry region never visited"))
    elif kap(shrink_k, name):
        timed(name, h.stage2_entry, h.a_stage2_exit, 48 / delta * k ** -4.5 + 1)
    name = "phase2_final"
    if h.stage3_entry is None:
        checks.append(BoundCheck(name, BoundStatus.SKIPPED, reason="entry region never visited"))
    elif kap(shrink_k, name):
        timed(name, h.stage3_entry, h.converged, 25 * math.log(1 / eps))
    return BoundReport(checks)
