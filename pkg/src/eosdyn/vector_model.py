"""Rank-1 factorisation of the identity: minimise 1/4 ||I - x y^T x y^T||_F^2 over x, y in R^d.

With P = ||x||^2, Q = ||y||^2 and s = x^T y the loss is 1/4 (d - 2 s^2 + s^2 P Q)
and one GD step is linear in (x, y):

    x' = A x + B y,  y' = B x + C y,
    A = 1 - eta s^2 Q / 2,  C = 1 - eta s^2 P / 2,  B = eta s (1 - P Q / 2).

The alignment defect xi = P Q - s^2 therefore evolves as xi' = (AC - B^2)^2 xi.
Aligned pairs (xi = 0) follow the scalar model exactly through their norms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import precision as Pr
from .reparam import ABState
from .scalar_model import DIVERGENCE_GUARD, DomainError, XYState, eos_minimum

CONTRACTION = 0.7
# xi / (P Q) below this is rounding noise in double precision, not geometry
XI_NOISE_FLOOR = 1e-24


@dataclass(frozen=True)
class VecPair:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("x and y must be vectors of equal dimension >= 2")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.size

    @property
    def nx2(self) -> float:
        return float(self.x @ self.x)

    @property
    def ny2(self) -> float:
        return float(self.y @ self.y)

    @property
    def ip(self) -> float:
        return float(self.x @ self.y)


def loss_vec(p: VecPair) -> float:
    s = p.ip
    return 0.25 * (p.dim - 2 * s * s + s * s * p.nx2 * p.ny2)


def loss_frobenius(p: VecPair) -> float:
    """Entrywise 1/4 ||I - x y^T x y^T||_F^2; the brute-force reference for loss_vec."""
    m = np.outer(p.x, p.y)
    r = np.eye(p.dim) - m @ m
    return 0.25 * float(np.sum(r * r))


def loss_excess(p: VecPair) -> float:
    """loss - (d-1)/4 written as 1/4 (1 - s^2)^2 + 1/4 s^2 xi, free of cancellation."""
    s2 = p.ip ** 2
    return 0.25 * (1 - s2) ** 2 + 0.25 * s2 * alignment_xi(p)


def _coefficients(P, Q, s, eta):
    A = 1 - 0.5 * eta * s * s * Q
    C = 1 - 0.5 * eta * s * s * P
    B = eta * s * (1 - 0.5 * P * Q)
    return A, B, C


def gd_step_vec(p: VecPair, eta) -> VecPair:
    A, B, C = _coefficients(p.nx2, p.ny2, p.ip, eta)
    return VecPair(A * p.x + B * p.y, B * p.x + C * p.y)


def alignment_xi(p: VecPair) -> float:
    """||x||^2 ||y||^2 - (x^T y)^2, measured as ||x||^2 ||y - (s/P) x||^2 so it stays >= 0."""
    P = p.nx2
    if P == 0.0:
        return 0.0
    r = p.y - (p.ip / P) * p.x
    return P * float(r @ r)


def alpha(p: VecPair, eta) -> float:
    return eta * (p.nx2 + p.ny2) - 1


def xi_update_factor(p: VecPair, eta) -> float:
    """(AC - B^2)^2, the exact one-step multiplier of xi."""
    A, B, C = _coefficients(p.nx2, p.ny2, p.ip, eta)
    return (A * C - B * B) ** 2


def xi_next_closed_form(p: VecPair, eta) -> float:
    return xi_update_factor(p, eta) * alignment_xi(p)


def ip_next_closed_form(p: VecPair, eta) -> float:
    P, Q, s = p.nx2, p.ny2, p.ip
    A, B, C = _coefficients(P, Q, s, eta)
    return A * B * P + (A * C + B * B) * s + B * C * Q


def norms_next_closed_form(p: VecPair, eta):
    """(||x'||^2, ||y'||^2) from the current norms and inner product only."""
    P, Q, s = p.nx2, p.ny2, p.ip
    A, B, C = _coefficients(P, Q, s, eta)
    return A * A * P + 2 * A * B * s + B * B * Q, B * B * P + 2 * B * C * s + C * C * Q


def perturb(p: VecPair, K) -> VecPair:
    return VecPair(p.x, p.y * (1 + 2 / K))


def norms_to_ab(p: VecPair, eta) -> ABState:
    """Scalar-equivalent (a, b) of the norm pair: the norms play the roles of x and y."""
    nx, ny = math.sqrt(p.nx2), math.sqrt(p.ny2)
    if not nx > ny:
        raise DomainError("norms_to_ab needs ||x|| > ||y||")
    c = math.sqrt((nx - ny) * (nx + ny))
    return ABState(c - (eta ** -2 - 4) ** 0.25, nx * ny - 1)


def aligned_pair(s: XYState, d: int, direction=None) -> VecPair:
    """Pair x = s.x u, y = s.y u along a unit vector u (first basis vector by default)."""
    if direction is None:
        u = np.zeros(d)
        u[0] = 1.0
    else:
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
    return VecPair(float(s.x) * u, float(s.y) * u)


def alignment_persistence_ratio(b, b_next) -> float:
    """(b_{t+1} / b_t)^4; stays above 0.7 along in-regime scalar runs."""
    return (b_next / b) ** 4


# protocol


def theorem_radius_range(eta, K):
    """Open interval for delta_x: x_eos + (1/80, 1/8) K^-2 eta^-1/2."""
    xb = float(eos_minimum(eta).x)
    w = K ** -2 * eta ** -0.5
    return xb + w / 80, xb + w / 8


def theorem_eta_bound(K, d, delta_0):
    return min(K ** -4 / 8e6, K ** -2 / (20000 + 2000 * (math.log(d) - math.log(delta_0))))


@dataclass(frozen=True)
class VectorProtocolConfig:
    eta: float = 1e-3
    K: float = 600
    t_p: int = 50_000
    eps: float = 1e-8
    seed: int = 0
    delta_x: float | None = None  # None: drawn from the theorem interval with the seed
    delta_y: float | None = None  # None: 1 / (2 delta_x)
    delta_0: float = 0.02
    d: int = 50
    max_steps: int = 4_000_000

    def radii(self):
        dx = self.delta_x
        if dx is None:
            lo, hi = theorem_radius_range(self.eta, self.K)
            u = np.random.default_rng([self.seed, 1]).uniform()
            dx = lo + u * (hi - lo)
        dy = self.delta_y if self.delta_y is not None else 0.5 / dx
        return dx, dy

    def hypothesis_flags(self) -> dict:
        dx, dy = self.radii()
        lo, hi = theorem_radius_range(self.eta, self.K)
        return {
            "radius_product_half": abs(dx * dy - 0.5) < 1e-12,
            "radius_in_range": lo < dx < hi,
            "eta_in_range": self.eta < theorem_eta_bound(self.K, self.d, self.delta_0),
        }

    def within_theorem(self) -> bool:
        return all(self.hypothesis_flags().values())


def _sphere(rng, d, r):
    v = rng.standard_normal(d)
    return r * v / np.linalg.norm(v)


def sample_init(cfg: VectorProtocolConfig, rng=None) -> VecPair:
    """Independent uniform draws on the spheres of radii delta_x and delta_y."""
    if rng is None:
        rng = np.random.default_rng([cfg.seed, 0])
    dx, dy = cfg.radii()
    return VecPair(_sphere(rng, cfg.d, dx), _sphere(rng, cfg.d, dy))


class ProtocolStatus(enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    NOT_CONVERGED = "NonConvergedWithinBudget"


@dataclass
class ProtocolOutcome:
    config: dict
    status: ProtocolStatus
    hit_time: int | None  # first t >= t_p with loss excess < eps
    feasible_entry: int | None  # first t with | ||x|| ||y|| - 1 | < 1/K
    n_steps: int
    final_norm_sum: float
    final_excess: float
    xi_nonnegative: bool
    xi_monotone: bool  # above the noise floor, apart from the perturbation step
    contraction_ok: bool  # measured xi_{t+1} < 0.7 xi_t on qualifying steps above the floor
    contraction_factor_ok: bool  # (AC - B^2)^2 < 0.7 on every qualifying step
    contraction_steps: int
    perturbation_exact: bool
    perturbation_rel_err: float  # nan when xi at t_p is at the rounding floor
    within_theorem: bool
    xi_trace: list = field(default_factory=list)
    ip2_trace: list = field(default_factory=list)
    trace_steps: list = field(default_factory=list)

    @property
    def window_ok(self) -> bool:
        eta = self.config["eta"]
        return 1 / eta - 10 * eta / 3 < self.final_norm_sum < 1 / eta

    @property
    def success(self) -> bool:
        return self.status is ProtocolStatus.CONVERGED and self.window_ok

    def to_json(self) -> dict:
        out = asdict(self)
        out["status"] = self.status.value
        out["window_ok"] = self.window_ok
        return out


def _rows(a, b):
    return np.einsum("ij,ij->i", a, b)


def _xi_rows(X, Y, P, s):
    R = Y - (s / np.where(P == 0, 1.0, P))[:, None] * X
    return P * _rows(R, R)


def run_vector_batch(cfgs, trace_every: int = 0):
    """Run the protocol for several configs sharing eta, K, t_p, eps, d and max_steps.

    Rows are stepped together in numpy and dropped once done; every row's
    arithmetic is independent of the others, so a row gives the same result
    alone or in a batch.  ``trace_every`` > 0 keeps xi and (x^T y)^2 every that
    many steps.
    """
    cfgs = list(cfgs)
    c0 = cfgs[0]
    for c in cfgs:
        if (c.eta, c.K, c.t_p, c.eps, c.d, c.max_steps) != (c0.eta, c0.K, c0.t_p, c0.eps, c0.d, c0.max_steps):
            raise ValueError("batched configs must share everything except seed and radii")
    eta, K, t_p, eps, max_steps = c0.eta, c0.K, c0.t_p, c0.eps, c0.max_steps
    n = len(cfgs)
    inits = [sample_init(c) for c in cfgs]
    X = np.stack([p.x for p in inits])
    Y = np.stack([p.y for p in inits])
    idx = np.arange(n)  # live rows -> original index

    hit = np.full(n, -1)
    feas = np.full(n, -1)
    diverged = np.zeros(n, bool)
    xi_nonneg = np.ones(n, bool)
    xi_mono = np.ones(n, bool)
    contr = np.ones(n, bool)
    contr_fac = np.ones(n, bool)
    contr_steps = np.zeros(n, int)
    pert_ok = np.ones(n, bool)
    pert_err = np.zeros(n)
    final_sum = np.full(n, np.nan)
    final_exc = np.full(n, np.nan)
    n_steps = np.full(n, max_steps)
    traces = [([], [], []) for _ in range(n)]
    lam = 1 + 2 / K

    prev_xi = None
    prev_rel = None
    prev_qual = None
    prev_fac = None
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(max_steps + 1):
            if t == t_p:
                P = _rows(X, X)
                s = _rows(X, Y)
                before = _xi_rows(X, Y, P, s)
                Y = Y * lam
                after = _xi_rows(X, Y, P, _rows(X, Y))
                expect = lam * lam * before
                # rounding in the projection leaves an absolute floor of order eps^2 P Q
                floor = 64 * np.finfo(float).eps ** 2 * P * _rows(Y, Y)
                err = np.abs(after - expect)
                # a relative error means nothing once xi itself is at the rounding floor
                pert_err[idx] = np.where(expect > 1e4 * floor, err / np.where(expect > 0, expect, 1.0), np.nan)
                pert_ok[idx] = err <= 1e-12 * expect + floor
                prev_xi = None  # the perturbation is not a GD step
            P = _rows(X, X)
            Q = _rows(Y, Y)
            s = _rows(X, Y)
            xi_t = _xi_rows(X, Y, P, s)
            s2 = s * s
            bad = ~np.isfinite(P + Q) | (P > DIVERGENCE_GUARD) | (Q > DIVERGENCE_GUARD)
            exc = 0.25 * (1 - s2) ** 2 + 0.25 * s2 * xi_t
            rel_xi = xi_t / np.where(P * Q > 0, P * Q, 1.0)
            xi_nonneg[idx] &= ~(xi_t < 0)

            if prev_xi is not None:
                above = prev_rel > XI_NOISE_FLOOR
                xi_mono[idx] &= ~(above & (xi_t > prev_xi))
                contr[idx] &= ~(prev_qual & above & ~(xi_t < CONTRACTION * prev_xi))

            if trace_every and t % trace_every == 0:
                for j, i in enumerate(idx):
                    traces[i][0].append(t)
                    traces[i][1].append(float(xi_t[j]))
                    traces[i][2].append(float(s2[j]))

            nb = np.abs(np.sqrt(P * Q) - 1) < 1 / K
            newf = nb & (feas[idx] < 0)
            feas[idx[newf]] = t

            done = bad | ((t >= t_p) & (exc < eps))
            if t == max_steps:
                done[:] = True
            if done.any():
                rows = idx[done]
                diverged[rows] = bad[done]
                conv = done & ~bad & (t >= t_p) & (exc < eps)
                hit[idx[conv]] = t
                final_sum[rows] = (P + Q)[done]
                final_exc[rows] = exc[done]
                n_steps[rows] = t
                keep = ~done
                if not keep.any():
                    break
                X, Y, idx = X[keep], Y[keep], idx[keep]
                P, Q, s, s2, xi_t, rel_xi = P[keep], Q[keep], s[keep], s2[keep], xi_t[keep], rel_xi[keep]

            A, B, C = _coefficients(P, Q, s, eta)
            al = eta * (P + Q) - 1
            qual = (s2 > 7 / 20) & (s2 < 13 / 10) & (al > -1 / 100) & (al < 1 / 8)
            fac = (A * C - B * B) ** 2
            contr_fac[idx] &= ~(qual & ~(fac < CONTRACTION))
            contr_steps[idx] += qual
            prev_xi, prev_rel, prev_qual, prev_fac = xi_t, rel_xi, qual, fac
            X, Y = A[:, None] * X + B[:, None] * Y, B[:, None] * X + C[:, None] * Y

    out = []
    for i, c in enumerate(cfgs):
        if diverged[i]:
            status = ProtocolStatus.DIVERGED
        elif hit[i] >= 0:
            status = ProtocolStatus.CONVERGED
        else:
            status = ProtocolStatus.NOT_CONVERGED
        cd = asdict(c)
        cd["delta_x"], cd["delta_y"] = c.radii()
        out.append(ProtocolOutcome(
            config=cd, status=status,
            hit_time=int(hit[i]) if hit[i] >= 0 else None,
            feasible_entry=int(feas[i]) if feas[i] >= 0 else None,
            n_steps=int(n_steps[i]), final_norm_sum=float(final_sum[i]), final_excess=float(final_exc[i]),
            xi_nonnegative=bool(xi_nonneg[i]), xi_monotone=bool(xi_mono[i]),
            contraction_ok=bool(contr[i]), contraction_factor_ok=bool(contr_fac[i]),
            contraction_steps=int(contr_steps[i]),
            perturbation_exact=bool(pert_ok[i]) if t_p <= n_steps[i] else False,
            perturbation_rel_err=float(pert_err[i]),
            within_theorem=c.within_theorem(),
            trace_steps=traces[i][0], xi_trace=traces[i][1], ip2_trace=traces[i][2],
        ))
    return out


def run_vector_protocol(cfg: VectorProtocolConfig, trace_every: int = 0) -> ProtocolOutcome:
    """GD from a seeded spherical init with a single y-rescaling at step t_p."""
    return run_vector_batch([cfg], trace_every=trace_every)[0]
